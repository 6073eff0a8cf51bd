//! Exploration-and-preferential-return choice model: probabilities, the
//! joint action likelihood, a sampler, the rule-based generator and the
//! power-law fitting used to recover its parameters from data.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ConsumptionSequence, JointAction, UserHistory};
use crate::error::{CoreError, Result};
use crate::seeding::{rng_for, stream};
use crate::world::World;

pub const PROB_EPS: f64 = 1e-6;
pub const REWARD_MAX: f64 = 20.0;
pub const MIN_DISTANCE_KM: f64 = 1e-3;
const MIN_CURVE_EVENTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EprParams {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub gamma: f64,
    #[serde(rename = "lambda")]
    pub lambda_: f64,
}

impl EprParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.rho, self.gamma, self.lambda_];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(CoreError::invalid(
                "epr params",
                format!("every parameter must be positive and finite: {self:?}"),
            ))
        }
    }
}

impl Default for EprParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.8,
            rho: 0.6,
            gamma: 0.3,
            lambda_: 1.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficient: f64,
    pub exponent: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `y = c * x^-e` on `(ln x, ln y)`.
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<FitResult> {
    if samples.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(CoreError::NonPositiveSample);
    }
    let lx: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ly: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let n = samples.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if samples.len() < 2 || sxx <= 0.0 {
        return Err(CoreError::TooFewPoints);
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot <= f64::EPSILON * n * my.abs().max(1.0) {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(FitResult {
        coefficient: intercept.exp(),
        exponent: -slope,
        r_squared,
    })
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `p_c = α l^-β`, clamped into the open unit interval.
pub fn purchase_prob(interval: usize, p: &EprParams) -> f64 {
    clamp_prob(p.alpha * (interval.max(1) as f64).powf(-p.beta))
}

/// `p_e = ρ n^-γ`; `n = 0` is the caller's forced-exploration case.
pub fn explore_prob(visited: usize, p: &EprParams) -> f64 {
    clamp_prob(p.rho * (visited.max(1) as f64).powf(-p.gamma))
}

/// Visit-frequency distribution over all stores; unvisited stores get 0.
pub fn return_distribution(visits: &[u32]) -> Result<Vec<f64>> {
    let total: u64 = visits.iter().map(|&v| v as u64).sum();
    if total == 0 {
        return Err(CoreError::NoVisitedStores);
    }
    Ok(visits.iter().map(|&v| v as f64 / total as f64).collect())
}

/// Normalized `d^-λ` over unvisited stores; visited stores get 0.
pub fn explore_distribution(distances: &[f64], visits: &[u32], lambda: f64) -> Result<Vec<f64>> {
    let mut w: Vec<f64> = distances
        .iter()
        .zip(visits)
        .map(|(&d, &v)| {
            if v == 0 {
                d.max(MIN_DISTANCE_KM).powf(-lambda)
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = w.iter().sum();
    if z <= 0.0 {
        return Err(CoreError::NoUnvisitedStores);
    }
    w.iter_mut().for_each(|x| *x /= z);
    Ok(w)
}

/// The state an EPR decision conditions on.
#[derive(Clone, Copy, Debug)]
pub struct EprState<'a> {
    pub interval: usize,
    pub visited_count: usize,
    pub visits: &'a [u32],
    pub distances: &'a [f64],
}

impl<'a> From<&'a UserHistory> for EprState<'a> {
    fn from(h: &'a UserHistory) -> Self {
        Self {
            interval: h.interval,
            visited_count: h.visited_count,
            visits: &h.visits,
            distances: &h.distances,
        }
    }
}

impl EprState<'_> {
    pub fn all_visited(&self) -> bool {
        self.visited_count == self.visits.len()
    }

    /// Probability of exploring given a purchase, with the two forced cases.
    pub fn explore_given_purchase(&self, p: &EprParams) -> f64 {
        if self.visited_count == 0 {
            1.0
        } else if self.all_visited() {
            0.0
        } else {
            explore_prob(self.visited_count, p)
        }
    }
}

fn check_action(s: &EprState, a: &JointAction) -> Result<()> {
    let bad = |m: &str| Err(CoreError::InconsistentAction(m.to_string()));
    match (a.purchase, a.store) {
        (false, None) if !a.explore => Ok(()),
        (false, _) => bad("no purchase but explore flag or store set"),
        (true, None) => bad("purchase without a store"),
        (true, Some(q)) if q >= s.visits.len() => bad("store index out of range"),
        (true, Some(q)) => {
            let visited = s.visits[q] > 0;
            if a.explore == visited {
                bad("explore flag disagrees with the store's visit history")
            } else {
                Ok(())
            }
        }
    }
}

/// `π_e(a|s) = p_c · p_e · p_r` with forced levels contributing 1.
pub fn action_likelihood(s: &EprState, a: &JointAction, p: &EprParams) -> Result<f64> {
    check_action(s, a)?;
    let pc = purchase_prob(s.interval, p);
    let Some(q) = a.store else {
        return Ok(1.0 - pc);
    };
    let pe = s.explore_given_purchase(p);
    let (gate, dist) = if a.explore {
        (pe, explore_distribution(s.distances, s.visits, p.lambda_)?)
    } else {
        (1.0 - pe, return_distribution(s.visits)?)
    };
    Ok(pc * gate * dist[q])
}

/// `r^e = -ln(1 - π_e/(π_e+π_θ)) = ln(1 + π_e/π_θ)`, clamped to `[0, 20]`.
pub fn epr_reward(pi_e: f64, pi_theta: f64) -> f64 {
    let r = (pi_e / pi_theta.max(f64::MIN_POSITIVE)).ln_1p();
    if r.is_nan() {
        REWARD_MAX
    } else {
        r.clamp(0.0, REWARD_MAX)
    }
}

fn sample_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(probs)
        .expect("probability vector has positive mass")
        .sample(rng)
}

/// Draws one joint action; with probability `noise` the chosen store is
/// replaced by a uniform pick from the same legal set.
pub fn sample_action<R: Rng + ?Sized>(s: &EprState, p: &EprParams, noise: f64, rng: &mut R) -> JointAction {
    if !rng.gen_bool(purchase_prob(s.interval, p)) {
        return JointAction::NONE;
    }
    let explore = rng.gen_bool(s.explore_given_purchase(p));
    let legal = |q: usize| (s.visits[q] == 0) == explore;
    let store = if noise > 0.0 && rng.gen_bool(noise) {
        let pool: Vec<usize> = (0..s.visits.len()).filter(|&q| legal(q)).collect();
        pool[rng.gen_range(0..pool.len())]
    } else if explore {
        let probs = explore_distribution(s.distances, s.visits, p.lambda_).expect("explore implies an unvisited store");
        sample_from(&probs, rng)
    } else {
        let probs = return_distribution(s.visits).expect("return implies a visited store");
        sample_from(&probs, rng)
    };
    JointAction::buy(store, explore)
}

/// Simulates every user of `world` over `horizon` slots.
pub(crate) fn simulate_epr(
    world: &World,
    p: &EprParams,
    horizon: usize,
    noise: f64,
    seed: u64,
    rng_stream: u64,
) -> Vec<ConsumptionSequence> {
    world
        .users
        .par_iter()
        .map(|user| {
            let mut rng = rng_for(seed, rng_stream, user.id);
            let mut h = UserHistory::new(user, &world.catalog);
            let mut ids = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let a = sample_action(&EprState::from(&h), p, noise, &mut rng);
                ids.push(a.store.map_or(0, |q| world.catalog.store(q).id));
                h.observe(a.store, &world.catalog);
            }
            ConsumptionSequence::from_stores(user.id, &ids)
        })
        .collect()
}

/// Pure EPR baseline generator.
pub fn epr_generate(world: &World, p: &EprParams, horizon: usize, seed: u64) -> Vec<ConsumptionSequence> {
    simulate_epr(world, p, horizon, 0.0, seed, stream::EPR_GENERATE)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EprFit {
    pub params: EprParams,
    pub purchase: FitResult,
    pub explore: FitResult,
    pub distance: FitResult,
}

/// Event counts gathered in one pass over the data.
#[derive(Default)]
struct CurveCounts {
    interval_seen: Vec<u64>,
    interval_bought: Vec<u64>,
    visited_seen: Vec<u64>,
    visited_explored: Vec<u64>,
    explorations: u64,
}

impl CurveCounts {
    fn bump(v: &mut Vec<u64>, i: usize) {
        if v.len() <= i {
            v.resize(i + 1, 0);
        }
        v[i] += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in [
            (&mut self.interval_seen, other.interval_seen),
            (&mut self.interval_bought, other.interval_bought),
            (&mut self.visited_seen, other.visited_seen),
            (&mut self.visited_explored, other.visited_explored),
        ] {
            if a.len() < b.len() {
                a.resize(b.len(), 0);
            }
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.explorations += other.explorations;
        self
    }
}

/// Replays each sequence, calling `visit(history_before, store)` per slot.
fn replay<T, F, M>(
    seqs: &[ConsumptionSequence],
    world: &World,
    init: impl Fn() -> T + Sync + Send,
    visit: F,
    merge: M,
) -> Result<T>
where
    T: Send,
    F: Fn(&mut T, &UserHistory, Option<usize>) + Sync + Send,
    M: Fn(T, T) -> T + Sync + Send,
{
    let per_user: Result<Vec<T>> = seqs
        .par_iter()
        .map(|seq| {
            let user = world.user(seq.user_id)?;
            let mut acc = init();
            let mut h = UserHistory::new(user, &world.catalog);
            for id in seq.stores() {
                let store = if id == 0 {
                    None
                } else {
                    Some(world.catalog.index_of(id).ok_or(CoreError::UnknownStore {
                        user: seq.user_id,
                        store: id,
                    })?)
                };
                visit(&mut acc, &h, store);
                h.observe(store, &world.catalog);
            }
            Ok(acc)
        })
        .collect();
    Ok(per_user?.into_iter().reduce(merge).unwrap_or_else(init))
}

fn percentile_index(counts: &[u64], q: f64) -> usize {
    let total: u64 = counts.iter().sum();
    let target = (q * total as f64).ceil() as u64;
    let mut acc = 0;
    for (i, &c) in counts.iter().enumerate() {
        acc += c;
        if acc >= target {
            return i;
        }
    }
    counts.len().saturating_sub(1)
}

const MIN_BIN_SUPPORT: u64 = 30;
const MIN_BIN_HITS: u64 = 20;
const DISTANCE_BINS: usize = 20;

fn curve(seen: &[u64], hit: &[u64], lo: usize, hi: usize) -> Vec<(f64, f64)> {
    (lo..=hi.min(seen.len().saturating_sub(1)))
        .filter(|&i| seen[i] >= MIN_BIN_SUPPORT && hit.get(i).copied().unwrap_or(0) >= MIN_BIN_HITS)
        .map(|i| (i as f64, hit[i] as f64 / seen[i] as f64))
        .collect()
}

/// Per-bin sums for the distance-preference fit at a trial `λ`.
struct DistanceBins {
    chosen: Vec<f64>,
    weight: Vec<f64>,
    weighted_log_d: Vec<f64>,
}

impl DistanceBins {
    fn new() -> Self {
        Self {
            chosen: vec![0.0; DISTANCE_BINS],
            weight: vec![0.0; DISTANCE_BINS],
            weighted_log_d: vec![0.0; DISTANCE_BINS],
        }
    }

    fn merge(mut self, o: Self) -> Self {
        for i in 0..DISTANCE_BINS {
            self.chosen[i] += o.chosen[i];
            self.weight[i] += o.weight[i];
            self.weighted_log_d[i] += o.weighted_log_d[i];
        }
        self
    }
}

/// Estimates `(α, β)`, `(ρ, γ)` and `λ` from observed sequences.
///
/// The distance exponent is a fixed point: each unvisited store contributes
/// `1/Z(λ)` of exposure to its log-spaced distance bin, where `Z(λ)` is the
/// normaliser of the exploration event it was available in; the
/// chosen-per-exposure curve is then refit until `λ` settles.
pub fn fit_epr(seqs: &[ConsumptionSequence], world: &World) -> Result<EprFit> {
    if seqs.is_empty() {
        return Err(CoreError::Empty("dataset"));
    }
    let store_count = world.catalog.len();
    let counts = replay(
        seqs,
        world,
        CurveCounts::default,
        |acc, h, store| {
            CurveCounts::bump(&mut acc.interval_seen, h.interval);
            if let Some(q) = store {
                CurveCounts::bump(&mut acc.interval_bought, h.interval);
                let n = h.visited_count;
                if n >= 1 && n < store_count {
                    CurveCounts::bump(&mut acc.visited_seen, n);
                    if !h.is_visited(q) {
                        CurveCounts::bump(&mut acc.visited_explored, n);
                    }
                }
                if n >= 1 && !h.is_visited(q) {
                    acc.explorations += 1;
                }
            }
        },
        CurveCounts::merge,
    )?;

    let purchases: u64 = counts.interval_bought.iter().sum();
    if purchases < MIN_CURVE_EVENTS as u64 {
        return Err(CoreError::InsufficientEvents("purchase"));
    }
    if counts.explorations < MIN_CURVE_EVENTS as u64 {
        return Err(CoreError::InsufficientEvents("exploration"));
    }
    let l_max = percentile_index(&counts.interval_seen, 0.99);
    let purchase_pts = curve(&counts.interval_seen, &counts.interval_bought, 1, l_max);
    if purchase_pts.len() < 2 {
        return Err(CoreError::InsufficientEvents("purchase"));
    }
    let purchase = fit_power_law(&purchase_pts)?;
    let explore_pts = curve(&counts.visited_seen, &counts.visited_explored, 1, usize::MAX);
    if explore_pts.len() < 2 {
        return Err(CoreError::InsufficientEvents("exploration"));
    }
    let explore = fit_power_law(&explore_pts)?;

    let (d_lo, d_hi) = world.distance_range();
    let log_lo = d_lo.max(MIN_DISTANCE_KM).ln();
    let width = ((d_hi.max(MIN_DISTANCE_KM * 1.01)).ln() - log_lo) / DISTANCE_BINS as f64 * (1.0 + 1e-9);
    let bin_of = |d: f64| (((d.max(MIN_DISTANCE_KM).ln() - log_lo) / width).max(0.0) as usize).min(DISTANCE_BINS - 1);

    let mut lambda = 1.0;
    let mut distance = FitResult {
        coefficient: 1.0,
        exponent: lambda,
        r_squared: 1.0,
    };
    for _ in 0..50 {
        let bins = replay(
            seqs,
            world,
            DistanceBins::new,
            |acc, h, store| {
                let Some(q) = store else { return };
                if h.visited_count == 0 || h.is_visited(q) {
                    return;
                }
                let z: f64 = h
                    .distances
                    .iter()
                    .zip(&h.visits)
                    .filter(|(_, &v)| v == 0)
                    .map(|(&d, _)| d.max(MIN_DISTANCE_KM).powf(-lambda))
                    .sum();
                for (&d, _) in h.distances.iter().zip(&h.visits).filter(|(_, &v)| v == 0) {
                    let b = bin_of(d);
                    acc.weight[b] += 1.0 / z;
                    acc.weighted_log_d[b] += d.max(MIN_DISTANCE_KM).ln() / z;
                }
                acc.chosen[bin_of(h.distances[q])] += 1.0;
            },
            DistanceBins::merge,
        )?;
        let pts: Vec<(f64, f64)> = (0..DISTANCE_BINS)
            .filter(|&b| bins.chosen[b] >= 5.0 && bins.weight[b] > 0.0)
            .map(|b| {
                (
                    (bins.weighted_log_d[b] / bins.weight[b]).exp(),
                    bins.chosen[b] / bins.weight[b],
                )
            })
            .collect();
        if pts.len() < 2 {
            return Err(CoreError::InsufficientEvents("exploration distance"));
        }
        distance = fit_power_law(&pts)?;
        let next = distance.exponent;
        let done = (next - lambda).abs() < 1e-6;
        lambda = next;
        if done {
            break;
        }
    }

    let params = EprParams {
        alpha: purchase.coefficient,
        beta: purchase.exponent,
        rho: explore.coefficient,
        gamma: explore.exponent,
        lambda_: distance.exponent,
    };
    params.validate()?;
    Ok(EprFit {
        params,
        purchase,
        explore,
        distance,
    })
}
