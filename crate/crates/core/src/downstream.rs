//! Uses of generated sequences: store-level sales forecasting and
//! user-based collaborative filtering for store recommendation.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use crate::data::{ConsumptionSequence, StoreCatalog, StoreId, User, UserHistory, NO_STORE};
use crate::epr::{sample_action, EprParams, EprState};
use crate::error::{CoreError, Result};
use crate::policy::PolicyModel;
use crate::seeding::{derive_seed, rng_for, stream};
use crate::world::World;

pub const DEFAULT_NEIGHBOURS: usize = 20;
pub const DEFAULT_TOP_K: usize = 5;

/// A model that can continue a user's history.
#[derive(Clone, Copy)]
pub enum Forecaster<'a> {
    Policy(&'a PolicyModel),
    Epr(&'a EprParams),
}

/// Expected purchases per store (catalog order) over the forecast window.
#[derive(Clone, Debug, PartialEq)]
pub struct SalesForecast {
    pub store_ids: Vec<StoreId>,
    pub counts: Vec<f64>,
}

fn store_index(catalog: &StoreCatalog, user: u64, id: StoreId) -> Result<Option<usize>> {
    if id == NO_STORE {
        return Ok(None);
    }
    catalog
        .index_of(id)
        .map(Some)
        .ok_or(CoreError::UnknownStore { user, store: id })
}

/// Purchases per store in slots `[start, start + len)` of `seqs`.
pub fn sales_in_window(
    seqs: &[ConsumptionSequence],
    catalog: &StoreCatalog,
    start: usize,
    len: usize,
) -> Result<Vec<f64>> {
    let mut c = vec![0.0; catalog.len()];
    for s in seqs {
        for r in s
            .records
            .iter()
            .filter(|r| r.slot_index >= start && r.slot_index < start + len)
        {
            if let Some(q) = store_index(catalog, s.user_id, r.store_id)? {
                c[q] += 1.0;
            }
        }
    }
    Ok(c)
}

/// Continues each user's first `start` slots for `window` more slots,
/// `n_rollouts` times, and averages per-store purchase counts.
pub fn predict_sales(
    model: Forecaster<'_>,
    world: &World,
    history: &[ConsumptionSequence],
    start: usize,
    window: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<SalesForecast> {
    if n_rollouts == 0 {
        return Err(CoreError::invalid("predict_sales", "n_rollouts must be positive"));
    }
    let catalog = &world.catalog;
    let users: Vec<User> = history
        .iter()
        .map(|s| world.user(s.user_id).cloned())
        .collect::<Result<_>>()?;
    let prefixes = history
        .iter()
        .zip(&users)
        .map(|(s, u)| {
            if s.len() < start {
                return Err(CoreError::invalid("predict_sales", "history shorter than start slot"));
            }
            s.prefix(start).actions(u, catalog)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0.0; catalog.len()];
    for r in 0..n_rollouts {
        let rseed = derive_seed(seed, stream::FORECAST, r as u64);
        let seqs = match model {
            Forecaster::Policy(p) => p
                .continue_episodes(catalog, &users, &prefixes, start + window, rseed, 64)?
                .into_iter()
                .map(|e| e.sequence)
                .collect::<Vec<_>>(),
            Forecaster::Epr(params) => users
                .iter()
                .zip(&prefixes)
                .map(|(u, pre)| {
                    let mut rng = rng_for(rseed, stream::FORECAST, u.id);
                    let mut h = UserHistory::new(u, catalog);
                    let mut ids = Vec::with_capacity(start + window);
                    for slot in 0..start + window {
                        let a = match pre.get(slot) {
                            Some(a) => *a,
                            None => sample_action(&EprState::from(&h), params, 0.0, &mut rng),
                        };
                        ids.push(a.store.map_or(NO_STORE, |q| catalog.store(q).id));
                        h.observe(a.store, catalog);
                    }
                    ConsumptionSequence::from_stores(u.id, &ids)
                })
                .collect(),
        };
        for (c, x) in counts.iter_mut().zip(sales_in_window(&seqs, catalog, start, window)?) {
            *c += x;
        }
    }
    for c in &mut counts {
        *c /= n_rollouts as f64;
    }
    Ok(SalesForecast {
        store_ids: catalog.stores().iter().map(|s| s.id).collect(),
        counts,
    })
}

/// Mean absolute percentage error over stores with non-zero truth.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(CoreError::BinMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let terms: Vec<f64> = pred
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| ((p - t) / t).abs() * 100.0)
        .collect();
    if terms.is_empty() {
        return Err(CoreError::Empty("stores with non-zero sales"));
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// User-based collaborative filtering over visit counts.
#[derive(Clone, Debug, PartialEq)]
pub struct CfModel {
    pub users: Vec<u64>,
    pub store_ids: Vec<StoreId>,
    /// `[user][store]` visit counts.
    pub counts: Vec<Vec<f64>>,
    /// Cosine similarity, `[user][user]`.
    pub similarity: Vec<Vec<f64>>,
    pub neighbours: usize,
    index: HashMap<u64, usize>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Builds the model. Sequences sharing a user id are merged.
pub fn build_cf(train: &[ConsumptionSequence], catalog: &StoreCatalog, neighbours: usize) -> Result<CfModel> {
    if train.is_empty() {
        return Err(CoreError::Empty("training sequences"));
    }
    let mut index = HashMap::new();
    let mut users = Vec::new();
    let mut counts: Vec<Vec<f64>> = Vec::new();
    for s in train {
        let row = *index.entry(s.user_id).or_insert_with(|| {
            users.push(s.user_id);
            counts.push(vec![0.0; catalog.len()]);
            users.len() - 1
        });
        for id in s.stores() {
            if let Some(q) = store_index(catalog, s.user_id, id)? {
                counts[row][q] += 1.0;
            }
        }
    }
    let n = users.len();
    let mut similarity = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine(&counts[i], &counts[j]);
            similarity[i][j] = s;
            similarity[j][i] = s;
        }
    }
    Ok(CfModel {
        users,
        store_ids: catalog.stores().iter().map(|s| s.id).collect(),
        counts,
        similarity,
        neighbours,
        index,
    })
}

impl CfModel {
    pub fn row_of(&self, user: u64) -> Result<usize> {
        self.index.get(&user).copied().ok_or(CoreError::UnknownUser(user))
    }

    /// The `K` most similar other users, ties by ascending row.
    pub fn neighbours_of(&self, user: u64) -> Result<Vec<usize>> {
        let u = self.row_of(user)?;
        let mut others: Vec<usize> = (0..self.users.len()).filter(|&v| v != u).collect();
        others.sort_by(|&a, &b| self.similarity[u][b].total_cmp(&self.similarity[u][a]).then(a.cmp(&b)));
        others.truncate(self.neighbours);
        Ok(others)
    }

    /// Neighbour-weighted score of every store for `user`.
    pub fn scores(&self, user: u64) -> Result<Vec<f64>> {
        let u = self.row_of(user)?;
        let mut s = vec![0.0; self.store_ids.len()];
        for v in self.neighbours_of(user)? {
            let w = self.similarity[u][v];
            for (x, c) in s.iter_mut().zip(&self.counts[v]) {
                *x += w * c;
            }
        }
        Ok(s)
    }
}

/// Up to `k` unvisited stores with positive score, best first, ties by
/// ascending store id.
pub fn recommend_topk(model: &CfModel, user: u64, k: usize) -> Result<Vec<StoreId>> {
    let u = model.row_of(user)?;
    let scores = model.scores(user)?;
    let mut cand: Vec<(f64, StoreId)> = scores
        .iter()
        .zip(&model.store_ids)
        .zip(&model.counts[u])
        .filter(|((&s, _), &c)| c == 0.0 && s > 0.0)
        .map(|((&s, &id), _)| (s, id))
        .collect();
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(cand.into_iter().take(k).map(|c| c.1).collect())
}

/// Fraction of held-out `(user, store)` pairs whose store is recommended.
pub fn accuracy_at_k(model: &CfModel, heldout: &[(u64, StoreId)], k: usize) -> Result<f64> {
    if heldout.is_empty() {
        return Err(CoreError::Empty("held-out purchases"));
    }
    let mut hits = 0usize;
    for &(user, store) in heldout {
        if recommend_topk(model, user, k)?.contains(&store) {
            hits += 1;
        }
    }
    Ok(hits as f64 / heldout.len() as f64)
}

/// Splits each sequence at `split`: the part before it, and the first
/// later purchase at a store the user had not visited before `split`.
pub fn split_next_new_purchase(
    seqs: &[ConsumptionSequence],
    split: usize,
) -> (Vec<ConsumptionSequence>, Vec<(u64, StoreId)>) {
    let mut train = Vec::with_capacity(seqs.len());
    let mut heldout = Vec::new();
    for s in seqs {
        let head = s.prefix(split);
        let seen: Vec<StoreId> = head.stores().filter(|&id| id != NO_STORE).collect();
        if let Some(id) = s.stores().skip(split).find(|&id| id != NO_STORE && !seen.contains(&id)) {
            heldout.push((s.user_id, id));
        }
        train.push(head);
    }
    (train, heldout)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixRow {
    pub real_users: usize,
    pub synthetic_users: usize,
    pub accuracy_real_only: f64,
    pub accuracy_mixed: f64,
}

/// Recommendation accuracy as extra real users are added, with and without
/// the synthetic set. `real` is split in half by a seeded shuffle: the first
/// half are evaluation users (history before `split` always in the model),
/// the second half is the pool extra real users are drawn from. Synthetic
/// users get fresh ids.
pub fn mix_experiment(
    real: &[ConsumptionSequence],
    synthetic: &[ConsumptionSequence],
    catalog: &StoreCatalog,
    real_counts: &[usize],
    split: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<MixRow>> {
    let mut order: Vec<usize> = (0..real.len()).collect();
    order.shuffle(&mut rng_for(seed, stream::SPLIT, 0));
    let half = real.len() / 2;
    let eval: Vec<ConsumptionSequence> = order[..half].iter().map(|&i| real[i].clone()).collect();
    let pool: Vec<&ConsumptionSequence> = order[half..].iter().map(|&i| &real[i]).collect();
    let (eval_train, heldout) = split_next_new_purchase(&eval, split);
    let offset = real.iter().chain(synthetic).map(|s| s.user_id).max().unwrap_or(0) + 1;
    let synth: Vec<ConsumptionSequence> = synthetic
        .iter()
        .enumerate()
        .map(|(i, s)| ConsumptionSequence {
            user_id: offset + i as u64,
            records: s.records.clone(),
        })
        .collect();
    real_counts
        .iter()
        .map(|&n| {
            let extra = pool.iter().take(n).map(|s| (*s).clone());
            let base: Vec<ConsumptionSequence> = eval_train.iter().cloned().chain(extra).collect();
            let mixed: Vec<ConsumptionSequence> = base.iter().chain(&synth).cloned().collect();
            Ok(MixRow {
                real_users: n.min(pool.len()),
                synthetic_users: synth.len(),
                accuracy_real_only: accuracy_at_k(&build_cf(&base, catalog, DEFAULT_NEIGHBOURS)?, &heldout, k)?,
                accuracy_mixed: accuracy_at_k(&build_cf(&mixed, catalog, DEFAULT_NEIGHBOURS)?, &heldout, k)?,
            })
        })
        .collect()
}
