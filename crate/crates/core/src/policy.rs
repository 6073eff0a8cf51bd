//! The generator: a purchase agent, an exploration agent and a preference
//! agent acting in that order on a shared history encoding, plus the value
//! critic used by the policy-gradient update.

use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use eprgail_nn::{Activation, Dense, Graph, Mlp, ParamSet, Tensor, Var};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ConsumptionSequence, JointAction, StoreCatalog, User, UserHistory};
use crate::error::{CoreError, Result};
use crate::features::{FeatureConfig, FeatureExtractor, Normalizer};
use crate::seeding::{rng_for, stream, SimRng};
use crate::world::World;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden: usize,
    pub pref_dim: usize,
    pub critic_hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            attn_dim: 32,
            hidden_dim: 64,
            head_hidden: 32,
            pref_dim: 32,
            critic_hidden: 64,
        }
    }
}

impl PolicyConfig {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            embed_dim: self.embed_dim,
            attn_dim: self.attn_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Recurrent encoder state for a batch of users, `[B, H]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

/// Where a row's actions come from: the first `given.len()` slots replay
/// `given`, later slots are sampled from `rng`.
pub struct RowSource<'a> {
    pub given: &'a [JointAction],
    pub rng: Option<&'a mut SimRng>,
}

impl<'a> RowSource<'a> {
    pub fn replay(given: &'a [JointAction]) -> Self {
        Self { given, rng: None }
    }

    pub fn sample(rng: &'a mut SimRng) -> Self {
        Self {
            given: &[],
            rng: Some(rng),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UnrollOptions {
    pub entropy: bool,
    pub value: bool,
}

/// Graph nodes produced for one slot of a batch.
pub struct SlotOutput {
    pub actions: Vec<JointAction>,
    /// Joint log-probability per row, `[B, 1]`.
    pub log_prob: Var,
    pub entropy: Option<Var>,
    pub value: Option<Var>,
}

pub struct Unroll {
    /// `[row][slot]`.
    pub actions: Vec<Vec<JointAction>>,
    pub slots: Vec<SlotOutput>,
}

/// A Bernoulli decision, `prob = None` when the level is gated or forced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub prob: Option<f64>,
    pub action: bool,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceScores {
    pub w: Vec<f64>,
    /// `[stores, d]`, row-major.
    pub e: Vec<f64>,
    pub score: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub action: JointAction,
    /// Purchase, explore and preference log-probabilities (0 when unused).
    pub level_log_probs: [f64; 3],
    pub joint_log_prob: f64,
}

/// One generated episode with the quantities the trainer needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub sequence: ConsumptionSequence,
    pub actions: Vec<JointAction>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PolicyModel {
    pub cfg: PolicyConfig,
    pub norm: Normalizer,
    pub params: ParamSet,
    pub extractor: FeatureExtractor,
    pub purchase: Mlp,
    pub explore: Mlp,
    pub pref_user: Dense,
    pub pref_store: Dense,
    pub critic: Mlp,
}

fn column(values: impl Iterator<Item = f64>) -> Tensor {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    Tensor::matrix(n, 1, v).expect("column")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-(p ln p + (1-p) ln(1-p))` with `p = sigmoid(z)`.
fn bernoulli_entropy(g: &mut Graph, z: Var) -> Var {
    let p1 = g.sigmoid(z);
    let l1 = g.log_sigmoid(z);
    let nz = g.neg(z);
    let p0 = g.sigmoid(nz);
    let l0 = g.log_sigmoid(nz);
    let a = g.mul(p1, l1);
    let b = g.mul(p0, l0);
    let s = g.add(a, b);
    g.neg(s)
}

/// `log sigmoid(±z)` picking the sign per row from `taken`.
fn bernoulli_log_prob(g: &mut Graph, z: Var, taken: &[bool]) -> Var {
    let sign = g.constant(column(taken.iter().map(|&t| if t { 1.0 } else { -1.0 })));
    let signed = g.mul(z, sign);
    g.log_sigmoid(signed)
}

fn explore_is_free(h: &UserHistory) -> bool {
    h.visited_count > 0 && !h.all_visited()
}

fn check_action(h: &UserHistory, a: &JointAction) -> Result<()> {
    let ok = match (a.purchase, a.store) {
        (false, None) => !a.explore,
        (true, Some(q)) => q < h.store_count() && a.explore != h.is_visited(q),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(CoreError::InconsistentAction(format!("{a:?} at slot {}", h.slot)))
    }
}

impl PolicyModel {
    pub fn new(cfg: PolicyConfig, norm: Normalizer, seed: u64) -> Self {
        let mut rng = rng_for(seed, stream::POLICY_INIT, 0);
        let mut params = ParamSet::new();
        let h = cfg.hidden_dim;
        let extractor = FeatureExtractor::new(&mut params, &norm, cfg.features(), &mut rng);
        let purchase = Mlp::new(
            &mut params,
            "purchase",
            &[h + 1, cfg.head_hidden, 1],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        );
        let explore = Mlp::new(
            &mut params,
            "explore",
            &[h + 2, cfg.head_hidden, 1],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        );
        let pref_user = Dense::new(
            &mut params,
            "preference.user",
            h + 2,
            cfg.pref_dim,
            Activation::Relu,
            &mut rng,
        );
        let pref_store = Dense::new(
            &mut params,
            "preference.store",
            norm.store_feature_dim(),
            cfg.pref_dim,
            Activation::Relu,
            &mut rng,
        );
        let critic = Mlp::new(
            &mut params,
            "critic",
            &[h + 1, cfg.critic_hidden, 1],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        );
        Self {
            cfg,
            norm,
            params,
            extractor,
            purchase,
            explore,
            pref_user,
            pref_store,
            critic,
        }
    }

    pub fn for_world(cfg: PolicyConfig, world: &World, seed: u64) -> Self {
        Self::new(cfg, Normalizer::for_world(world), seed)
    }

    pub fn initial_state(&self, rows: usize) -> EncoderState {
        let (hidden, cell) = self.extractor.initial_state(rows);
        EncoderState { hidden, cell }
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra.clone();
        meta.insert("model".into(), "policy".into());
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
                .ok_or_else(|| CoreError::invalid("policy checkpoint", format!("missing {k}")))
        };
        let bad = |e: serde_json::Error| CoreError::invalid("policy checkpoint", e.to_string());
        let cfg: PolicyConfig = serde_json::from_str(field("config")?).map_err(bad)?;
        let norm: Normalizer = serde_json::from_str(field("normalizer")?).map_err(bad)?;
        let mut model = Self::new(cfg, norm, 0);
        model.params.load_from(&params)?;
        Ok((model, meta))
    }

    fn purchase_logits(&self, g: &mut Graph, params: &ParamSet, x_l: Var, hs: &[&UserHistory]) -> Result<Var> {
        let l = g.constant(column(hs.iter().map(|h| self.norm.interval(h))));
        let s_c = g.concat(&[x_l, l]);
        Ok(self.purchase.forward(g, params, s_c)?)
    }

    /// Rows of `x_l` are the users in `hs`; every one of them purchases.
    fn explore_logits(&self, g: &mut Graph, params: &ParamSet, x_l: Var, hs: &[&UserHistory]) -> Result<Var> {
        let n = g.constant(column(hs.iter().map(|h| self.norm.visited(h))));
        let a_c = g.constant(Tensor::full(&[hs.len(), 1], 1.0));
        let s_e = g.concat(&[x_l, n, a_c]);
        Ok(self.explore.forward(g, params, s_e)?)
    }

    /// Per-store scores `wᵀe` for purchasing rows, `[m, S]`, plus `w` and `e`.
    fn preference_scores(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        x_l: Var,
        hs: &[&UserHistory],
        explore: &[bool],
        catalog: &StoreCatalog,
    ) -> Result<(Var, Var, Var)> {
        let m = hs.len();
        let s = catalog.len();
        let d = self.cfg.pref_dim;
        let f = self.norm.store_feature_dim();
        let flags = g.constant(
            Tensor::matrix(
                m,
                2,
                explore.iter().flat_map(|&e| [1.0, if e { 1.0 } else { 0.0 }]).collect(),
            )
            .expect("flags"),
        );
        let s_p = g.concat(&[x_l, flags]);
        let w = self.pref_user.forward(g, params, s_p)?;
        let mut feats = vec![0.0; m * s * f];
        for (r, h) in hs.iter().enumerate() {
            for q in 0..s {
                let off = (r * s + q) * f;
                self.norm.store_features(h, catalog, q, &mut feats[off..off + f]);
            }
        }
        let feats = g.constant(Tensor::matrix(m * s, f, feats).expect("store features"));
        let e = self.pref_store.forward(g, params, feats)?;
        let e3 = g.reshape(e, &[m, s, d]);
        let et = g.transpose(e3);
        let w3 = g.reshape(w, &[m, 1, d]);
        let score = g.batch_matmul(w3, et);
        let score = g.reshape(score, &[m, s]);
        Ok((score, w, e))
    }

    fn legal_mask(hs: &[&UserHistory], explore: &[bool]) -> Vec<bool> {
        hs.iter()
            .zip(explore)
            .flat_map(|(h, &e)| h.visits.iter().map(move |&v| (v == 0) == e))
            .collect()
    }

    fn value_head(&self, g: &mut Graph, params: &ParamSet, x_l: Var, hs: &[&UserHistory]) -> Result<Var> {
        let frac = g.constant(column(hs.iter().map(|h| h.slot as f64 / self.norm.horizon as f64)));
        let x = g.detach(x_l);
        let s = g.concat(&[x, frac]);
        Ok(self.critic.forward(g, params, s)?)
    }

    /// Encodes the histories and runs the three agents for one slot.
    /// Returns the slot output and the new encoder state nodes.
    #[allow(clippy::too_many_arguments)]
    pub fn slot(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        catalog: &StoreCatalog,
        hs: &[&UserHistory],
        state: (Var, Var),
        sources: &mut [RowSource<'_>],
        opts: UnrollOptions,
    ) -> Result<(SlotOutput, (Var, Var))> {
        let b = hs.len();
        let blocks = self.norm.summary_batch(hs, catalog).map(|t| g.constant(t));
        let state = self.extractor.step(g, params, blocks, state)?;
        let x_l = state.0;

        let given = |src: &RowSource, h: &UserHistory| src.given.get(h.slot).copied();
        let z_c = self.purchase_logits(g, params, x_l, hs)?;
        let mut purchase = Vec::with_capacity(b);
        for (r, src) in sources.iter_mut().enumerate() {
            let a = match given(src, hs[r]) {
                Some(a) => {
                    check_action(hs[r], &a)?;
                    a.purchase
                }
                None => {
                    let p = sigmoid(g.value(z_c).data()[r]);
                    let rng = src
                        .rng
                        .as_deref_mut()
                        .ok_or_else(|| CoreError::invalid("rollout", "no action or rng for a slot"))?;
                    rng.gen::<f64>() < p
                }
            };
            purchase.push(a);
        }
        let mut log_prob = bernoulli_log_prob(g, z_c, &purchase);
        let mut entropy = opts.entropy.then(|| bernoulli_entropy(g, z_c));

        let buyers: Vec<usize> = (0..b).filter(|&r| purchase[r]).collect();
        let mut explore = vec![false; b];
        let mut store = vec![None; b];
        for &r in &buyers {
            explore[r] = hs[r].visited_count == 0;
        }
        let free: Vec<usize> = buyers.iter().copied().filter(|&r| explore_is_free(hs[r])).collect();
        if !free.is_empty() {
            let x_f = g.select_rows(x_l, &free);
            let h_f: Vec<&UserHistory> = free.iter().map(|&r| hs[r]).collect();
            let z_e = self.explore_logits(g, params, x_f, &h_f)?;
            for (k, &r) in free.iter().enumerate() {
                explore[r] = match given(&sources[r], hs[r]) {
                    Some(a) => a.explore,
                    None => {
                        let p = sigmoid(g.value(z_e).data()[k]);
                        sources[r].rng.as_deref_mut().expect("sampling row").gen::<f64>() < p
                    }
                };
            }
            let taken: Vec<bool> = free.iter().map(|&r| explore[r]).collect();
            let lp = bernoulli_log_prob(g, z_e, &taken);
            let lp = g.scatter_rows(lp, &free, b);
            log_prob = g.add(log_prob, lp);
            if let Some(ent) = entropy {
                let h_e = bernoulli_entropy(g, z_e);
                let h_e = g.scatter_rows(h_e, &free, b);
                entropy = Some(g.add(ent, h_e));
            }
        }
        if !buyers.is_empty() {
            let x_p = g.select_rows(x_l, &buyers);
            let h_p: Vec<&UserHistory> = buyers.iter().map(|&r| hs[r]).collect();
            let e_p: Vec<bool> = buyers.iter().map(|&r| explore[r]).collect();
            let (score, _, _) = self.preference_scores(g, params, x_p, &h_p, &e_p, catalog)?;
            let mask = Self::legal_mask(&h_p, &e_p);
            let lp_all = g.log_softmax(score, Some(Rc::from(mask.as_slice())));
            let s = catalog.len();
            let mut picked = Vec::with_capacity(buyers.len());
            for (k, &r) in buyers.iter().enumerate() {
                let q = match given(&sources[r], hs[r]) {
                    Some(a) => a.store.expect("checked"),
                    None => {
                        let row = &g.value(lp_all).data()[k * s..(k + 1) * s];
                        let probs: Vec<f64> = row
                            .iter()
                            .zip(&mask[k * s..(k + 1) * s])
                            .map(|(&lp, &ok)| if ok { lp.exp() } else { 0.0 })
                            .collect();
                        let rng = sources[r].rng.as_deref_mut().expect("sampling row");
                        WeightedIndex::new(&probs).expect("legal store").sample(rng)
                    }
                };
                picked.push(q);
                store[r] = Some(q);
            }
            let lp = g.gather(lp_all, &picked);
            let lp = g.scatter_rows(lp, &buyers, b);
            log_prob = g.add(log_prob, lp);
            if let Some(ent) = entropy {
                let p = g.exp(lp_all);
                let plp = g.mul(p, lp_all);
                let h_p = g.sum_last(plp);
                let h_p = g.neg(h_p);
                let h_p = g.scatter_rows(h_p, &buyers, b);
                entropy = Some(g.add(ent, h_p));
            }
        }
        let value = if opts.value {
            Some(self.value_head(g, params, x_l, hs)?)
        } else {
            None
        };
        let actions = (0..b)
            .map(|r| match store[r] {
                Some(q) => JointAction::buy(q, explore[r]),
                None => JointAction::NONE,
            })
            .collect();
        Ok((
            SlotOutput {
                actions,
                log_prob,
                entropy,
                value,
            },
            state,
        ))
    }

    /// Runs `horizon` slots for a batch of users from empty histories.
    #[allow(clippy::too_many_arguments)]
    pub fn unroll(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        catalog: &StoreCatalog,
        users: &[&User],
        horizon: usize,
        sources: &mut [RowSource<'_>],
        opts: UnrollOptions,
    ) -> Result<Unroll> {
        let b = users.len();
        let mut histories: Vec<UserHistory> = users.iter().map(|u| UserHistory::new(u, catalog)).collect();
        let init = self.initial_state(b);
        let mut state = (g.constant(init.hidden), g.constant(init.cell));
        let mut actions = vec![Vec::with_capacity(horizon); b];
        let mut slots = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let hs: Vec<&UserHistory> = histories.iter().collect();
            let (out, next) = self.slot(g, params, catalog, &hs, state, sources, opts)?;
            state = next;
            for (r, a) in out.actions.iter().enumerate() {
                histories[r].observe(a.store, catalog);
                actions[r].push(*a);
            }
            slots.push(out);
        }
        Ok(Unroll { actions, slots })
    }

    /// Samples episodes for `users`, `chunk` users per graph. Each user draws
    /// from its own stream, so results do not depend on `chunk`.
    pub fn generate(
        &self,
        catalog: &StoreCatalog,
        users: &[User],
        horizon: usize,
        seed: u64,
        chunk: usize,
    ) -> Result<Vec<Episode>> {
        self.continue_episodes(catalog, users, &vec![Vec::new(); users.len()], horizon, seed, chunk)
    }

    /// Like [`PolicyModel::generate`], but each user first replays the
    /// given prefix of actions and samples the remaining slots.
    pub fn continue_episodes(
        &self,
        catalog: &StoreCatalog,
        users: &[User],
        prefixes: &[Vec<JointAction>],
        horizon: usize,
        seed: u64,
        chunk: usize,
    ) -> Result<Vec<Episode>> {
        let mut out = Vec::with_capacity(users.len());
        for (us, pre) in users.chunks(chunk.max(1)).zip(prefixes.chunks(chunk.max(1))) {
            let mut rngs: Vec<SimRng> = us.iter().map(|u| rng_for(seed, stream::ROLLOUT, u.id)).collect();
            let mut sources: Vec<RowSource> = rngs
                .iter_mut()
                .zip(pre)
                .map(|(rng, p)| RowSource {
                    given: p,
                    rng: Some(rng),
                })
                .collect();
            let refs: Vec<&User> = us.iter().collect();
            let mut g = Graph::new();
            let opts = UnrollOptions {
                entropy: false,
                value: true,
            };
            let un = self.unroll(&mut g, &self.params, catalog, &refs, horizon, &mut sources, opts)?;
            for (r, user) in us.iter().enumerate() {
                let ids: Vec<u32> = un.actions[r]
                    .iter()
                    .map(|a| a.store.map_or(0, |q| catalog.store(q).id))
                    .collect();
                out.push(Episode {
                    sequence: ConsumptionSequence::from_stores(user.id, &ids),
                    actions: un.actions[r].clone(),
                    log_probs: un.slots.iter().map(|s| g.value(s.log_prob).data()[r]).collect(),
                    values: un
                        .slots
                        .iter()
                        .map(|s| s.value.map_or(0.0, |v| g.value(v).data()[r]))
                        .collect(),
                });
            }
        }
        Ok(out)
    }

    /// Encodes the current history of a single user: returns `x_l` and the
    /// advanced state.
    pub fn encode(
        &self,
        catalog: &StoreCatalog,
        h: &UserHistory,
        state: &EncoderState,
    ) -> Result<(Tensor, EncoderState)> {
        let mut g = Graph::new();
        let st = (g.constant(state.hidden.clone()), g.constant(state.cell.clone()));
        let blocks = self.norm.summary_batch(&[h], catalog).map(|t| g.constant(t));
        let (hn, cn) = self.extractor.step(&mut g, &self.params, blocks, st)?;
        let next = EncoderState {
            hidden: g.value(hn).clone(),
            cell: g.value(cn).clone(),
        };
        Ok((next.hidden.clone(), next))
    }

    pub fn decide_purchase<R: Rng + ?Sized>(&self, x_l: &Tensor, h: &UserHistory, rng: &mut R) -> Result<Decision> {
        let mut g = Graph::new();
        let x = g.constant(x_l.clone());
        let z = self.purchase_logits(&mut g, &self.params, x, &[h])?;
        let p = sigmoid(g.value(z).item());
        let a = rng.gen::<f64>() < p;
        Ok(Decision {
            prob: Some(p),
            action: a,
            log_prob: if a { p.ln() } else { (1.0 - p).ln() },
        })
    }

    pub fn decide_explore<R: Rng + ?Sized>(
        &self,
        x_l: &Tensor,
        h: &UserHistory,
        purchase: bool,
        rng: &mut R,
    ) -> Result<Decision> {
        if !purchase || !explore_is_free(h) {
            return Ok(Decision {
                prob: None,
                action: purchase && h.visited_count == 0,
                log_prob: 0.0,
            });
        }
        let mut g = Graph::new();
        let x = g.constant(x_l.clone());
        let z = self.explore_logits(&mut g, &self.params, x, &[h])?;
        let p = sigmoid(g.value(z).item());
        let a = rng.gen::<f64>() < p;
        Ok(Decision {
            prob: Some(p),
            action: a,
            log_prob: if a { p.ln() } else { (1.0 - p).ln() },
        })
    }

    /// Store scores and masked choice probabilities for a purchasing user.
    pub fn preference(
        &self,
        catalog: &StoreCatalog,
        x_l: &Tensor,
        h: &UserHistory,
        explore: bool,
    ) -> Result<PreferenceScores> {
        let mut g = Graph::new();
        let x = g.constant(x_l.clone());
        let (score, w, e) = self.preference_scores(&mut g, &self.params, x, &[h], &[explore], catalog)?;
        let mask = Self::legal_mask(&[h], &[explore]);
        let probs = eprgail_nn::softmax(&mut g, score, Some(&mask))?;
        Ok(PreferenceScores {
            w: g.value(w).data().to_vec(),
            e: g.value(e).data().to_vec(),
            score: g.value(score).data().to_vec(),
            probs: g.value(probs).data().to_vec(),
        })
    }

    pub fn decide_preference<R: Rng + ?Sized>(
        &self,
        catalog: &StoreCatalog,
        x_l: &Tensor,
        h: &UserHistory,
        explore: bool,
        rng: &mut R,
    ) -> Result<(PreferenceScores, usize, f64)> {
        let scores = self.preference(catalog, x_l, h, explore)?;
        let q = WeightedIndex::new(&scores.probs)
            .map_err(|_| CoreError::invalid("preference", "empty legal store set"))?
            .sample(rng);
        let lp = scores.probs[q].ln();
        Ok((scores, q, lp))
    }

    /// Encodes the slot, runs the agents and advances history and state.
    pub fn step<R: Rng + ?Sized>(
        &self,
        catalog: &StoreCatalog,
        h: &mut UserHistory,
        state: &mut EncoderState,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let (x_l, next) = self.encode(catalog, h, state)?;
        let c = self.decide_purchase(&x_l, h, rng)?;
        let e = self.decide_explore(&x_l, h, c.action, rng)?;
        let (action, lp) = if c.action {
            let (_, q, lp) = self.decide_preference(catalog, &x_l, h, e.action, rng)?;
            (JointAction::buy(q, e.action), lp)
        } else {
            (JointAction::NONE, 0.0)
        };
        h.observe(action.store, catalog);
        *state = next;
        Ok(StepOutcome {
            action,
            level_log_probs: [c.log_prob, e.log_prob, lp],
            joint_log_prob: c.log_prob + e.log_prob + lp,
        })
    }

    /// Log-probability of `action` given the history and the encoder state
    /// before this slot; forced levels contribute 0.
    pub fn joint_log_prob(
        &self,
        catalog: &StoreCatalog,
        h: &UserHistory,
        state: &EncoderState,
        action: &JointAction,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let st = (g.constant(state.hidden.clone()), g.constant(state.cell.clone()));
        let given = [*action];
        let mut h = h.clone();
        h.slot = 0;
        let mut src = [RowSource::replay(&given)];
        let (out, _) = self.slot(
            &mut g,
            &self.params,
            catalog,
            &[&h],
            st,
            &mut src,
            UnrollOptions::default(),
        )?;
        Ok(g.value(out.log_prob).item())
    }
}
