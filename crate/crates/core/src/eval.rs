//! Behavioural histograms of a set of sequences and the divergences used to
//! compare them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{distance_km, ConsumptionSequence, NO_STORE};
use crate::error::{CoreError, Result};
use crate::world::World;

pub const PRICE_BINS: usize = 20;
pub const DISTANCE_BINS: usize = 20;
pub const SMOOTHING: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Consumption,
    Exploration,
    Price,
    Distance,
    Type,
    Identifier,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Consumption,
        MetricKind::Exploration,
        MetricKind::Price,
        MetricKind::Distance,
        MetricKind::Type,
        MetricKind::Identifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Consumption => "consumption",
            MetricKind::Exploration => "exploration",
            MetricKind::Price => "price",
            MetricKind::Distance => "distance",
            MetricKind::Type => "type",
            MetricKind::Identifier => "identifier",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoreError::invalid("metric kind", format!("unknown kind {s:?}")))
    }
}

/// A discrete distribution. `edges` has `probs.len() + 1` entries for the
/// continuous kinds and is empty for count and categorical kinds, whose bin
/// `i` stands for the value `i` (or the `i`-th category / catalog store).
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub kind: MetricKind,
    pub edges: Vec<f64>,
    pub probs: Vec<f64>,
}

fn normalized(counts: Vec<f64>) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.into_iter().map(|c| c / total).collect()
    } else {
        let n = counts.len() as f64;
        vec![1.0 / n; counts.len()]
    }
}

fn equal_width(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
}

fn bin_of(x: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    if hi <= lo {
        return 0;
    }
    (((x - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Builds the histogram of `kind` over `seqs`. Bins depend only on the
/// world, so histograms of two datasets on the same world are aligned.
pub fn extract_distribution(kind: MetricKind, seqs: &[ConsumptionSequence], world: &World) -> Result<Histogram> {
    if seqs.is_empty() {
        return Err(CoreError::Empty("sequences"));
    }
    let catalog = &world.catalog;
    let horizon = seqs
        .iter()
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
        .max(world.grid.horizon_slots);
    let purchases = || {
        seqs.iter()
            .flat_map(|s| s.stores().filter(|&id| id != NO_STORE).map(move |id| (s.user_id, id)))
    };
    let store_of = |id| {
        catalog
            .index_of(id)
            .ok_or(CoreError::UnknownStore { user: 0, store: id })
    };
    let (edges, counts) = match kind {
        MetricKind::Consumption => {
            let mut c = vec![0.0; horizon + 1];
            for s in seqs {
                c[s.purchase_count()] += 1.0;
            }
            (Vec::new(), c)
        }
        MetricKind::Exploration => {
            let mut c = vec![0.0; horizon.min(catalog.len()) + 1];
            for s in seqs {
                let n = s.distinct_stores();
                if n >= c.len() {
                    c.resize(n + 1, 0.0);
                }
                c[n] += 1.0;
            }
            (Vec::new(), c)
        }
        MetricKind::Price => {
            let (lo, hi) = catalog.price_range();
            let edges = equal_width(lo, hi, PRICE_BINS);
            let mut c = vec![0.0; PRICE_BINS];
            for (_, id) in purchases() {
                c[bin_of(catalog.store(store_of(id)?).avg_price, &edges)] += 1.0;
            }
            (edges, c)
        }
        MetricKind::Distance => {
            let edges = equal_width(0.0, world.diagonal_km(), DISTANCE_BINS);
            let mut c = vec![0.0; DISTANCE_BINS];
            for (user, id) in purchases() {
                let u = world.user(user)?;
                let d = distance_km(u.location, catalog.store(store_of(id)?).location);
                c[bin_of(d, &edges)] += 1.0;
            }
            (edges, c)
        }
        MetricKind::Type => {
            let mut c = vec![0.0; catalog.category_count()];
            for (_, id) in purchases() {
                c[catalog.store(store_of(id)?).category as usize] += 1.0;
            }
            (Vec::new(), c)
        }
        MetricKind::Identifier => {
            let mut c = vec![0.0; catalog.len()];
            for (_, id) in purchases() {
                c[store_of(id)?] += 1.0;
            }
            (Vec::new(), c)
        }
    };
    Ok(Histogram {
        kind,
        edges,
        probs: normalized(counts),
    })
}

fn check_aligned(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        Err(CoreError::BinMismatch {
            left: p.len(),
            right: q.len(),
        })
    } else {
        Ok(())
    }
}

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).log2())
        .sum()
}

/// Base-2 Kullback-Leibler divergence with `q` smoothed by `δ = 1e-10`
/// and renormalized.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    check_aligned(p, q)?;
    let z = 1.0 + SMOOTHING * q.len() as f64;
    let qs: Vec<f64> = q.iter().map(|&x| (x + SMOOTHING) / z).collect();
    Ok(kl_raw(p, &qs).max(0.0))
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`. The mixture is positive
/// wherever either argument is, so no smoothing is needed.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    check_aligned(p, q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl_raw(p, &m) + 0.5 * kl_raw(q, &m)).clamp(0.0, 1.0))
}

pub fn histogram_jsd(p: &Histogram, q: &Histogram) -> Result<f64> {
    jsd(&p.probs, &q.probs)
}

/// JSD of one metric between two datasets.
pub fn metric_jsd(
    kind: MetricKind,
    real: &[ConsumptionSequence],
    generated: &[ConsumptionSequence],
    world: &World,
) -> Result<f64> {
    let mut p = extract_distribution(kind, real, world)?;
    let mut q = extract_distribution(kind, generated, world)?;
    // Count histograms can differ in length when one dataset is longer.
    let n = p.probs.len().max(q.probs.len());
    p.probs.resize(n, 0.0);
    q.probs.resize(n, 0.0);
    histogram_jsd(&p, &q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<(MetricKind, f64)>,
}

impl Report {
    pub fn get(&self, kind: MetricKind) -> f64 {
        self.rows
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|r| r.1)
            .unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,jsd\n");
        for (k, v) in &self.rows {
            s.push_str(&format!("{k},{v:.10}\n"));
        }
        s
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10}", "metric", "jsd")?;
        for (k, v) in &self.rows {
            writeln!(f, "{:<12} {:>10.6}", k.name(), v)?;
        }
        Ok(())
    }
}

pub fn evaluate_report(
    real: &[ConsumptionSequence],
    generated: &[ConsumptionSequence],
    world: &World,
) -> Result<Report> {
    if real.is_empty() || generated.is_empty() {
        return Err(CoreError::Empty("sequences"));
    }
    let rows = MetricKind::ALL
        .iter()
        .map(|&k| Ok((k, metric_jsd(k, real, generated, world)?)))
        .collect::<Result<_>>()?;
    Ok(Report { rows })
}
