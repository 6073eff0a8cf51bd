//! The knowledge-enhanced reward: a bootstrapped multi-head discriminator
//! over slot transitions, its uncertainty, and the fusion with a
//! behavioural prior.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use eprgail_nn::{Activation, Adam, Dense, Graph, Mlp, ParamSet, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{JointAction, StoreCatalog, User, UserHistory};
use crate::epr::{self, EprParams, EprState, MIN_DISTANCE_KM, PROB_EPS, REWARD_MAX};
use crate::error::{CoreError, Result};
use crate::features::Normalizer;
use crate::seeding::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    /// Probability that a sample is assigned to a given head.
    pub bootstrap_p: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            heads: 5,
            bootstrap_p: 0.5,
        }
    }
}

/// Width of one slot summary: `l`, `n`, purchase flag, then the chosen
/// store's category one-hot, price, prior visits and distance.
pub fn slot_width(norm: &Normalizer) -> usize {
    norm.categories + 6
}

pub fn transition_width(norm: &Normalizer) -> usize {
    2 * slot_width(norm)
}

fn slot_summary(norm: &Normalizer, catalog: &StoreCatalog, h: &UserHistory, a: &JointAction, out: &mut [f64]) {
    out.fill(0.0);
    out[0] = norm.interval(h);
    out[1] = norm.visited(h);
    if let Some(q) = a.store {
        out[2] = 1.0;
        norm.store_features(h, catalog, q, &mut out[3..]);
    }
}

/// Encodes an episode as `[T, 2W]` transitions `[z_{i-1}, z_i]`, with
/// `z_{-1} = 0`. Each `z_i` describes the state before slot `i` and the
/// store chosen in it.
pub fn encode_transitions(norm: &Normalizer, catalog: &StoreCatalog, user: &User, actions: &[JointAction]) -> Tensor {
    let w = slot_width(norm);
    let t = actions.len();
    let mut data = vec![0.0; t * 2 * w];
    let mut h = UserHistory::new(user, catalog);
    for (i, a) in actions.iter().enumerate() {
        let row = i * 2 * w;
        if i > 0 {
            let (prev, cur) = data.split_at_mut(row);
            cur[..w].copy_from_slice(&prev[row - w..row]);
        }
        slot_summary(norm, catalog, &h, a, &mut data[row + w..row + 2 * w]);
        h.observe(a.store, catalog);
    }
    Tensor::matrix(t, 2 * w, data).expect("transition shape")
}

/// `-ln(1 - d)`, clamped to `[0, 20]`.
pub fn nn_reward(d: f64) -> f64 {
    let r = -(1.0 - d).ln();
    if r.is_nan() {
        REWARD_MAX
    } else {
        r.clamp(0.0, REWARD_MAX)
    }
}

/// `sigmoid` of the population variance of the head rewards, kept strictly
/// below 1 so the neural term never vanishes through rounding.
pub fn uncertainty_weight(head_rewards: &[f64]) -> Result<f64> {
    let k = head_rewards.len();
    if k < 2 {
        return Err(CoreError::invalid("uncertainty weight", "needs at least two heads"));
    }
    let mean = head_rewards.iter().sum::<f64>() / k as f64;
    let var = head_rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k as f64;
    Ok((1.0 / (1.0 + (-var).exp())).min(1.0 - f64::EPSILON / 2.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardBundle {
    pub head_rewards: Vec<f64>,
    pub active_head: usize,
    pub u: f64,
    pub epr_reward: f64,
    pub fused: f64,
}

/// `(1-u)·r_active + u·r_e`.
pub fn fused_reward(head_rewards: Vec<f64>, active_head: usize, epr_reward: f64) -> Result<RewardBundle> {
    if active_head >= head_rewards.len() {
        return Err(CoreError::invalid("fused reward", "active head out of range"));
    }
    let u = uncertainty_weight(&head_rewards)?;
    let fused = (1.0 - u) * head_rewards[active_head] + u * epr_reward;
    Ok(RewardBundle {
        head_rewards,
        active_head,
        u,
        epr_reward,
        fused,
    })
}

/// Source of the behavioural prior blended into the reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Knowledge {
    Epr,
    Distance,
    Price,
    Popularity,
    /// Plain adversarial imitation: the neural reward alone.
    None,
}

impl Knowledge {
    pub const ALL: [Knowledge; 5] = [
        Knowledge::Epr,
        Knowledge::Distance,
        Knowledge::Price,
        Knowledge::Popularity,
        Knowledge::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Knowledge::Epr => "epr",
            Knowledge::Distance => "distance",
            Knowledge::Price => "price",
            Knowledge::Popularity => "popularity",
            Knowledge::None => "none",
        }
    }
}

impl fmt::Display for Knowledge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Knowledge {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Knowledge::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoreError::UnknownKnowledge(s.to_string()))
    }
}

/// A prior likelihood `π_e(a|s)`: EPR gating of purchase and exploration,
/// with the store factor given by the chosen kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    pub kind: Knowledge,
    pub params: EprParams,
    prices: Vec<f64>,
    popularity: Vec<f64>,
}

impl Prior {
    /// `popularity` holds global purchase counts per catalog index; it is
    /// only read by the popularity kind.
    pub fn new(kind: Knowledge, params: EprParams, catalog: &StoreCatalog, popularity: Vec<f64>) -> Result<Self> {
        params.validate()?;
        if popularity.len() != catalog.len() {
            return Err(CoreError::invalid("prior", "popularity length differs from catalog"));
        }
        Ok(Self {
            kind,
            params,
            prices: catalog.stores().iter().map(|s| s.avg_price).collect(),
            popularity,
        })
    }

    fn store_weight(&self, s: &EprState, q: usize) -> f64 {
        match self.kind {
            Knowledge::Distance => 1.0 / s.distances[q].max(MIN_DISTANCE_KM),
            Knowledge::Price => 1.0 / (self.prices[q] + 1.0),
            Knowledge::Popularity => self.popularity[q] + 1.0,
            Knowledge::Epr | Knowledge::None => 1.0,
        }
    }

    /// Probability of `a` under the prior. The `none` kind has no prior and
    /// is an error.
    pub fn likelihood(&self, s: &EprState, a: &JointAction) -> Result<f64> {
        match self.kind {
            Knowledge::Epr => return epr::action_likelihood(s, a, &self.params),
            Knowledge::None => return Err(CoreError::UnknownKnowledge("none has no prior".into())),
            _ => {}
        }
        let pc = epr::purchase_prob(s.interval, &self.params);
        // Reuse the EPR legality checks and gating.
        let gated = epr::action_likelihood(s, a, &self.params)?;
        let Some(q) = a.store else {
            return Ok(gated);
        };
        let pe = s.explore_given_purchase(&self.params);
        let gate = if a.explore { pe } else { 1.0 - pe };
        let legal = |r: usize| (s.visits[r] == 0) == a.explore;
        let total: f64 = (0..s.visits.len())
            .filter(|&r| legal(r))
            .map(|r| self.store_weight(s, r))
            .sum();
        Ok(pc * gate * self.store_weight(s, q) / total)
    }
}

/// Bootstrap head assignment, `[rows, k]` of 0/1. A row that drew no head
/// is assigned to all of them so every sample contributes.
pub fn bootstrap_masks<R: Rng + ?Sized>(rows: usize, k: usize, p: f64, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        let row: Vec<f64> = (0..k).map(|_| if rng.gen::<f64>() < p { 1.0 } else { 0.0 }).collect();
        if row.iter().all(|&m| m == 0.0) {
            data.extend(std::iter::repeat_n(1.0, k));
        } else {
            data.extend(row);
        }
    }
    Tensor::matrix(rows, k, data).expect("mask shape")
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub cfg: DiscConfig,
    pub norm: Normalizer,
    pub params: ParamSet,
    pub trunk: Mlp,
    pub heads: Dense,
}

impl Discriminator {
    /// Random trunk, zero heads: every output starts at exactly 0.5.
    pub fn new(cfg: DiscConfig, norm: Normalizer, seed: u64) -> Self {
        let mut rng = rng_for(seed, stream::DISC_INIT, 0);
        let mut params = ParamSet::new();
        let h = cfg.hidden_dim;
        let trunk = Mlp::new(
            &mut params,
            "disc.trunk",
            &[transition_width(&norm), h, h],
            Activation::Relu,
            Activation::Relu,
            &mut rng,
        );
        let heads = Dense::zeroed(&mut params, "disc.heads", h, cfg.heads, Activation::Sigmoid);
        Self {
            cfg,
            norm,
            params,
            trunk,
            heads,
        }
    }

    /// Head probabilities `[B, k]`, clipped to `[ε, 1-ε]`.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let t = self.trunk.forward(g, params, x)?;
        let d = self.heads.forward(g, params, t)?;
        Ok(g.clip(d, PROB_EPS, 1.0 - PROB_EPS))
    }

    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let d = self.forward(&mut g, &self.params, xv)?;
        Ok(g.value(d).clone())
    }

    /// Masked mean of `-ln D` over real rows plus that of `-ln(1-D)` over fake rows.
    pub fn loss(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        real: Var,
        fake: Var,
        real_mask: &Tensor,
        fake_mask: &Tensor,
    ) -> Result<Var> {
        if g.shape(real)[0] == 0 || g.shape(fake)[0] == 0 {
            return Err(CoreError::Empty("discriminator batch"));
        }
        let d_real = self.forward(g, params, real)?;
        let d_fake = self.forward(g, params, fake)?;
        let ln_real = g.ln(d_real);
        let one_minus = {
            let n = g.neg(d_fake);
            g.add_scalar(n, 1.0)
        };
        let ln_fake = g.ln(one_minus);
        let term = |g: &mut Graph, lnv: Var, mask: &Tensor| {
            let count: f64 = mask.data().iter().sum();
            let m = g.constant(mask.clone());
            let masked = g.mul(lnv, m);
            let s = g.sum(masked);
            g.scale(s, -1.0 / count.max(1.0))
        };
        let a = term(g, ln_real, real_mask);
        let b = term(g, ln_fake, fake_mask);
        Ok(g.add(a, b))
    }

    /// One Adam step on the bootstrap-masked loss. Returns the loss before
    /// the step.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        adam: &mut Adam,
        real: &Tensor,
        fake: &Tensor,
        rng: &mut R,
    ) -> Result<f64> {
        let (nr, nf) = (real.rows(), fake.rows());
        if nr == 0 || nf == 0 {
            return Err(CoreError::Empty("discriminator batch"));
        }
        if nr != nf {
            return Err(CoreError::BatchMismatch { real: nr, fake: nf });
        }
        let k = self.cfg.heads;
        let rm = bootstrap_masks(nr, k, self.cfg.bootstrap_p, rng);
        let fm = bootstrap_masks(nf, k, self.cfg.bootstrap_p, rng);
        let mut g = Graph::new();
        let rv = g.constant(real.clone());
        let fv = g.constant(fake.clone());
        let loss = self.loss(&mut g, &self.params, rv, fv, &rm, &fm)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss);
        let grads = g.param_grads(&grads, &self.params);
        adam.step(&mut self.params, &grads)?;
        Ok(value)
    }

    /// Per-row neural rewards of every head, `[rows][k]`.
    pub fn head_rewards(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let d = self.probs(x)?;
        let k = self.cfg.heads;
        Ok(d.data()
            .chunks(k)
            .map(|row| row.iter().map(|&p| nn_reward(p)).collect())
            .collect())
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("model".into(), "discriminator".into());
        meta.insert("config".into(), serde_json::to_string(&self.cfg).expect("config"));
        meta.insert(
            "normalizer".into(),
            serde_json::to_string(&self.norm).expect("normalizer"),
        );
        Ok(self.params.save(path, &meta)?)
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let (params, meta) = ParamSet::load(path)?;
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| CoreError::invalid("discriminator checkpoint", format!("missing {k}")))
        };
        let bad = |e: serde_json::Error| CoreError::invalid("discriminator checkpoint", e.to_string());
        let cfg: DiscConfig = serde_json::from_str(field("config")?).map_err(bad)?;
        let norm: Normalizer = serde_json::from_str(field("normalizer")?).map_err(bad)?;
        let mut d = Self::new(cfg, norm, 0);
        d.params.load_from(&params)?;
        Ok((d, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Store;
    use crate::seeding::SimRng;
    use rand::SeedableRng;

    fn norm() -> Normalizer {
        Normalizer {
            categories: 3,
            price_scale: 100.0,
            distance_scale: 10.0,
            horizon: 10,
        }
    }

    fn catalog() -> StoreCatalog {
        StoreCatalog::new(vec![
            Store {
                id: 1,
                category: 0,
                avg_price: 0.0,
                location: (1.0, 0.0),
            },
            Store {
                id: 2,
                category: 2,
                avg_price: 1.0,
                location: (-1.0, 0.0),
            },
        ])
        .unwrap()
    }

    #[test]
    fn nn_reward_examples() {
        assert!((nn_reward(0.5) - 2f64.ln()).abs() < 1e-15);
        assert!((nn_reward(1.0 - 1e-6) - 13.8155).abs() < 1e-4);
        assert!(nn_reward(1e-6) < 1e-5);
        assert_eq!(nn_reward(1.0), REWARD_MAX);
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(uncertainty_weight(&[0.7; 5]).unwrap(), 0.5);
        assert!((uncertainty_weight(&[0.0, 2.0]).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(uncertainty_weight(&[1.0]).is_err());
        let b = fused_reward(vec![1.0; 5], 2, 3.0).unwrap();
        assert_eq!((b.u, b.fused), (0.5, 2.0));
        let ln2 = 2f64.ln();
        assert!((fused_reward(vec![ln2; 5], 0, ln2).unwrap().fused - ln2).abs() < 1e-15);
        let b = fused_reward(vec![0.0, 20.0, 0.0, 20.0, 0.0], 0, 7.0).unwrap();
        assert!((b.fused - 7.0).abs() < 1e-6);
    }

    #[test]
    fn zero_heads_give_half_and_loss_two_ln2() {
        let d = Discriminator::new(
            DiscConfig {
                hidden_dim: 8,
                ..Default::default()
            },
            norm(),
            3,
        );
        let x = Tensor::full(&[4, transition_width(&norm())], 0.3);
        assert!(d.probs(&x).unwrap().data().iter().all(|&p| p == 0.5));
        let mut g = Graph::new();
        let r = g.constant(x.clone());
        let f = g.constant(x);
        let m = Tensor::full(&[4, 5], 1.0);
        let l = d.loss(&mut g, &d.params, r, f, &m, &m).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn train_step_checks_batches() {
        let mut d = Discriminator::new(
            DiscConfig {
                hidden_dim: 8,
                ..Default::default()
            },
            norm(),
            3,
        );
        let mut adam = Adam::new(&d.params, 1e-4, 1e-5);
        let w = transition_width(&norm());
        let mut rng = SimRng::seed_from_u64(1);
        let a = Tensor::zeros(&[3, w]);
        let b = Tensor::zeros(&[2, w]);
        assert!(matches!(
            d.train_step(&mut adam, &a, &b, &mut rng),
            Err(CoreError::BatchMismatch { real: 3, fake: 2 })
        ));
        assert!(d
            .train_step(&mut adam, &Tensor::zeros(&[0, w]), &Tensor::zeros(&[0, w]), &mut rng)
            .is_err());
    }

    #[test]
    fn prior_store_factors() {
        let cat = catalog();
        let user = User {
            id: 0,
            location: (0.0, 0.0),
        };
        let h = UserHistory::new(&user, &cat);
        let s = EprState::from(&h);
        let p = EprParams::default();
        let pc = epr::purchase_prob(1, &p);
        let dist = Prior::new(Knowledge::Distance, p, &cat, vec![0.0; 2]).unwrap();
        let price = Prior::new(Knowledge::Price, p, &cat, vec![0.0; 2]).unwrap();
        let pop = Prior::new(Knowledge::Popularity, p, &cat, vec![0.0; 2]).unwrap();
        for q in 0..2 {
            let a = JointAction::buy(q, true);
            assert!((dist.likelihood(&s, &a).unwrap() - pc * 0.5).abs() < 1e-15);
            assert!((pop.likelihood(&s, &a).unwrap() - pc * 0.5).abs() < 1e-15);
        }
        assert!((price.likelihood(&s, &JointAction::buy(0, true)).unwrap() - pc * 2.0 / 3.0).abs() < 1e-15);
        assert!((price.likelihood(&s, &JointAction::buy(1, true)).unwrap() - pc / 3.0).abs() < 1e-15);
        assert!((dist.likelihood(&s, &JointAction::NONE).unwrap() - (1.0 - pc)).abs() < 1e-15);
        assert!(dist.likelihood(&s, &JointAction::buy(0, false)).is_err());
        assert!("gravity".parse::<Knowledge>().is_err());
        assert_eq!("none".parse::<Knowledge>().unwrap(), Knowledge::None);
    }

    #[test]
    fn transitions_chain_slot_summaries() {
        let cat = catalog();
        let user = User {
            id: 0,
            location: (0.0, 0.0),
        };
        let acts = [JointAction::NONE, JointAction::buy(1, true), JointAction::buy(1, false)];
        let x = encode_transitions(&norm(), &cat, &user, &acts);
        let w = slot_width(&norm());
        assert_eq!(x.shape(), &[3, 2 * w]);
        assert!(x.row_slice(0)[..w].iter().all(|&v| v == 0.0));
        for i in 1..3 {
            assert_eq!(&x.row_slice(i)[..w], &x.row_slice(i - 1)[w..]);
        }
        let z1 = &x.row_slice(1)[w..];
        // l = 2 before the first purchase, category 2, price 1/100, no prior visit, distance 1/10.
        assert_eq!(z1, &[0.2, 0.0, 1.0, 0.0, 0.0, 1.0, 0.01, 0.0, 0.1]);
        let z2 = &x.row_slice(2)[w..];
        assert_eq!(z2[0..3], [0.1, 0.1, 1.0]);
        assert!((z2[7] - 2f64.ln() / 11f64.ln()).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn uncertainty_stays_in_half_open_range(heads in proptest::collection::vec(0.0..=REWARD_MAX, 2..8)) {
            let u = uncertainty_weight(&heads).unwrap();
            proptest::prop_assert!((0.5..1.0).contains(&u), "{u}");
        }

        #[test]
        fn identical_heads_give_half(r in 0.0..=REWARD_MAX, k in 2usize..8) {
            proptest::prop_assert_eq!(uncertainty_weight(&vec![r; k]).unwrap(), 0.5);
        }

        #[test]
        fn fused_lies_between_components(
            heads in proptest::collection::vec(0.0..=REWARD_MAX, 5),
            active in 0usize..5,
            re in 0.0..5.0f64,
        ) {
            let b = fused_reward(heads.clone(), active, re).unwrap();
            let (lo, hi) = (heads[active].min(re), heads[active].max(re));
            proptest::prop_assert!(b.fused >= lo - 1e-12 && b.fused <= hi + 1e-12);
        }
    }
}
