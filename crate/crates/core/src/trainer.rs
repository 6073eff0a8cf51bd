//! Behaviour-cloning warm start followed by alternating discriminator and
//! clipped policy-gradient updates under the fused reward.

use std::io::Write;

use eprgail_nn::{Adam, Graph, ParamSet, Tensor, Var};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ConsumptionSequence, JointAction, User, UserHistory};
use crate::epr::{epr_reward, EprParams, EprState};
use crate::error::{CoreError, Result};
use crate::eval::{metric_jsd, MetricKind};
use crate::features::Normalizer;
use crate::policy::{Episode, PolicyConfig, PolicyModel, RowSource, UnrollOptions};
use crate::reward::{encode_transitions, fused_reward, DiscConfig, Discriminator, Knowledge, Prior};
use crate::seeding::{derive_seed, rng_for, stream, SimRng};
use crate::world::World;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub outer_iters: usize,
    /// Discriminator updates per outer iteration.
    pub disc_inner_iters: usize,
    pub batch_size_users: usize,
    pub policy_lr: f64,
    pub disc_lr: f64,
    pub adam_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub ppo_clip: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub ppo_epochs: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Decay both learning rates linearly to zero over the outer iterations.
    pub anneal_lr: bool,
    /// Users per computation graph; gradients are summed across chunks.
    pub chunk_users: usize,
    /// JSD snapshot period in outer iterations (0 disables snapshots).
    pub snapshot_every: usize,
    pub seed: u64,
    pub policy: PolicyConfig,
    pub disc: DiscConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            outer_iters: 150,
            disc_inner_iters: 30,
            batch_size_users: 64,
            policy_lr: 3e-4,
            disc_lr: 1e-4,
            adam_eps: 1e-5,
            entropy_coef: 1e-3,
            value_coef: 0.5,
            ppo_clip: 0.2,
            discount: 0.99,
            gae_lambda: 0.95,
            ppo_epochs: 4,
            pretrain_epochs: 5,
            pretrain_lr: 1e-3,
            anneal_lr: true,
            chunk_users: 64,
            snapshot_every: 10,
            seed: 0,
            policy: PolicyConfig::default(),
            disc: DiscConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::invalid("train config", m));
        if self.batch_size_users == 0 || self.chunk_users == 0 {
            return bad("batch_size_users and chunk_users must be positive");
        }
        if self.disc_inner_iters == 0 {
            return bad("disc_inner_iters must be positive");
        }
        for (v, name) in [
            (self.policy_lr, "policy_lr"),
            (self.disc_lr, "disc_lr"),
            (self.adam_eps, "adam_eps"),
            (self.pretrain_lr, "pretrain_lr"),
        ] {
            if v.is_nan() || v <= 0.0 {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.ppo_clip > 0.0 && self.ppo_clip < 1.0) {
            return bad("ppo_clip must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("discount and gae_lambda must lie in [0, 1]");
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("coefficients must be non-negative");
        }
        if self.disc.heads < 2 || !(self.disc.bootstrap_p > 0.0 && self.disc.bootstrap_p <= 1.0) {
            return bad("discriminator needs at least two heads and bootstrap_p in (0, 1]");
        }
        Ok(())
    }
}

/// Generated episodes with everything the policy update needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub users: Vec<User>,
    pub episodes: Vec<Episode>,
    pub rewards: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.episodes.iter().map(|e| e.actions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sequences(&self) -> Vec<ConsumptionSequence> {
        self.episodes.iter().map(|e| e.sequence.clone()).collect()
    }
}

pub fn collect_rollouts(
    policy: &PolicyModel,
    world: &World,
    users: &[User],
    horizon: usize,
    seed: u64,
    chunk: usize,
) -> Result<(Vec<ConsumptionSequence>, RolloutBuffer)> {
    let episodes = policy.generate(&world.catalog, users, horizon, seed, chunk)?;
    let buf = RolloutBuffer {
        users: users.to_vec(),
        episodes,
        ..Default::default()
    };
    Ok((buf.sequences(), buf))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardStats {
    pub mean_reward: f64,
    pub mean_nn_reward: f64,
    pub mean_prior_reward: f64,
    pub mean_u: f64,
}

/// Fills `buffer.rewards` with the fused reward of every step. Without a
/// prior the active head's neural reward is used alone.
pub fn assign_rewards(
    buffer: &mut RolloutBuffer,
    disc: &Discriminator,
    prior: Option<&Prior>,
    active_head: usize,
    world: &World,
) -> Result<RewardStats> {
    let catalog = &world.catalog;
    let mut stats = RewardStats::default();
    let mut rewards = Vec::with_capacity(buffer.episodes.len());
    for (user, ep) in buffer.users.iter().zip(&buffer.episodes) {
        let x = encode_transitions(&disc.norm, catalog, user, &ep.actions);
        let heads = disc.head_rewards(&x)?;
        let mut h = UserHistory::new(user, catalog);
        let mut r = Vec::with_capacity(ep.actions.len());
        for ((a, lp), hr) in ep.actions.iter().zip(&ep.log_probs).zip(heads) {
            let prior_r = match prior {
                Some(p) => epr_reward(p.likelihood(&EprState::from(&h), a)?, lp.exp()),
                None => 0.0,
            };
            let b = fused_reward(hr, active_head, prior_r)?;
            let value = if prior.is_some() {
                b.fused
            } else {
                b.head_rewards[active_head]
            };
            stats.mean_reward += value;
            stats.mean_nn_reward += b.head_rewards[active_head];
            stats.mean_prior_reward += prior_r;
            stats.mean_u += b.u;
            r.push(value);
            h.observe(a.store, catalog);
        }
        rewards.push(r);
    }
    let n = buffer.len().max(1) as f64;
    stats.mean_reward /= n;
    stats.mean_nn_reward /= n;
    stats.mean_prior_reward /= n;
    stats.mean_u /= n;
    buffer.rewards = rewards;
    Ok(stats)
}

/// Generalized advantage estimates per episode with a zero terminal value.
pub fn gae(rewards: &[f64], values: &[f64], discount: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let t = rewards.len();
    let mut adv = vec![0.0; t];
    let mut next_adv = 0.0;
    for i in (0..t).rev() {
        let next_v = if i + 1 < t { values[i + 1] } else { 0.0 };
        let delta = rewards[i] + discount * next_v - values[i];
        next_adv = delta + discount * lambda * next_adv;
        adv[i] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

pub fn compute_advantages(buffer: &mut RolloutBuffer, discount: f64, lambda: f64) {
    let (adv, ret): (Vec<_>, Vec<_>) = buffer
        .episodes
        .iter()
        .zip(&buffer.rewards)
        .map(|(ep, r)| gae(r, &ep.values, discount, lambda))
        .unzip();
    buffer.advantages = adv;
    buffer.returns = ret;
}

/// Standardizes every reward in the buffer. Episodes have a fixed length,
/// so an affine change of the per-step reward with positive scale leaves
/// the optimal policy unchanged while keeping returns in the critic's range.
pub fn standardize_rewards(buffer: &mut RolloutBuffer) {
    standardize(buffer.rewards.iter_mut().flatten());
}

fn standardize<'a>(values: impl Iterator<Item = &'a mut f64>) {
    let mut v: Vec<&mut f64> = values.collect();
    if v.is_empty() {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|x| **x).sum::<f64>() / n;
    let var = v.iter().map(|x| (**x - mean) * (**x - mean)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-8 { 1.0 / var.sqrt() } else { 1.0 };
    for x in v.iter_mut() {
        **x = (**x - mean) * scale;
    }
}

/// Shifts and scales all advantages to zero mean and unit variance. A
/// constant set is only centred.
pub fn normalize_advantages(buffer: &mut RolloutBuffer) {
    standardize(buffer.advantages.iter_mut().flatten());
}

fn add_grads(acc: &mut [Tensor], grads: &[Tensor]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += y;
        }
    }
}

fn zero_grads(params: &ParamSet) -> Vec<Tensor> {
    params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect()
}

fn row_matrix(rows: impl Iterator<Item = Vec<f64>>, cols: usize) -> Tensor {
    let data: Vec<f64> = rows.flatten().collect();
    let n = data.len() / cols.max(1);
    Tensor::matrix(n, cols, data).expect("row matrix")
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Clipped-surrogate update over `buffer` (advantages and returns must be
/// filled). Each epoch takes one Adam step on the full-batch gradient.
pub fn ppo_update(
    policy: &mut PolicyModel,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    world: &World,
    cfg: &TrainConfig,
) -> Result<PpoStats> {
    let total = buffer.len();
    if total == 0 {
        return Err(CoreError::Empty("rollout buffer"));
    }
    if buffer.advantages.len() != buffer.episodes.len() || buffer.returns.len() != buffer.episodes.len() {
        return Err(CoreError::invalid("ppo", "advantages not computed"));
    }
    let horizon = buffer.episodes[0].actions.len();
    let mut stats = PpoStats::default();
    let n = buffer.episodes.len();
    for _ in 0..cfg.ppo_epochs {
        let mut acc = zero_grads(&policy.params);
        stats = PpoStats::default();
        let mut start = 0;
        while start < n {
            let end = (start + cfg.chunk_users).min(n);
            let eps = &buffer.episodes[start..end];
            let users: Vec<&User> = buffer.users[start..end].iter().collect();
            let mut sources: Vec<RowSource> = eps.iter().map(|e| RowSource::replay(&e.actions)).collect();
            let mut g = Graph::new();
            let un = policy.unroll(
                &mut g,
                &policy.params,
                &world.catalog,
                &users,
                horizon,
                &mut sources,
                UnrollOptions {
                    entropy: true,
                    value: true,
                },
            )?;
            let cat = |g: &mut Graph, f: &dyn Fn(&crate::policy::SlotOutput) -> Var| {
                let parts: Vec<Var> = un.slots.iter().map(f).collect();
                g.concat(&parts)
            };
            let lp = cat(&mut g, &|s| s.log_prob);
            let ent = cat(&mut g, &|s| s.entropy.expect("entropy"));
            let val = cat(&mut g, &|s| s.value.expect("value"));
            let old = g.constant(row_matrix(eps.iter().map(|e| e.log_probs.clone()), horizon));
            let adv = g.constant(row_matrix(buffer.advantages[start..end].iter().cloned(), horizon));
            let ret = g.constant(row_matrix(buffer.returns[start..end].iter().cloned(), horizon));

            let diff = g.sub(lp, old);
            let ratio = g.exp(diff);
            let s1 = g.mul(ratio, adv);
            let clipped = g.clip(ratio, 1.0 - cfg.ppo_clip, 1.0 + cfg.ppo_clip);
            let s2 = g.mul(clipped, adv);
            let surr = g.min(s1, s2);
            let surr = g.sum(surr);
            let verr = g.sub(val, ret);
            let verr = g.mul(verr, verr);
            let verr = g.sum(verr);
            let ent = g.sum(ent);

            let scale = 1.0 / total as f64;
            let a = g.scale(surr, -scale);
            let b = g.scale(verr, cfg.value_coef * scale);
            let c = g.scale(ent, -cfg.entropy_coef * scale);
            let ab = g.add(a, b);
            let loss = g.add(ab, c);
            stats.policy_loss -= g.value(surr).item() * scale;
            stats.value_loss += g.value(verr).item() * scale;
            stats.entropy += g.value(ent).item() * scale;
            let grads = g.backward(loss);
            add_grads(&mut acc, &g.param_grads(&grads, &policy.params));
            start = end;
        }
        adam.step(&mut policy.params, &acc)?;
    }
    Ok(stats)
}

/// Mean per-slot negative log-likelihood of `actions` under the policy,
/// with its gradient. `actions[i]` belongs to `users[i]`.
fn nll_and_grad(
    policy: &PolicyModel,
    world: &World,
    users: &[&User],
    actions: &[&[JointAction]],
) -> Result<(f64, Vec<Tensor>)> {
    let horizon = actions[0].len();
    let mut sources: Vec<RowSource> = actions.iter().map(|a| RowSource::replay(a)).collect();
    let mut g = Graph::new();
    let un = policy.unroll(
        &mut g,
        &policy.params,
        &world.catalog,
        users,
        horizon,
        &mut sources,
        UnrollOptions::default(),
    )?;
    let parts: Vec<Var> = un.slots.iter().map(|s| s.log_prob).collect();
    let lp = g.concat(&parts);
    let s = g.sum(lp);
    let loss = g.scale(s, -1.0 / (users.len() * horizon) as f64);
    let grads = g.backward(loss);
    Ok((g.value(loss).item(), g.param_grads(&grads, &policy.params)))
}

/// Expert data prepared once: the user, joint actions and transitions.
#[derive(Clone, Debug)]
pub struct ExpertEpisode {
    pub user: User,
    pub sequence: ConsumptionSequence,
    pub actions: Vec<JointAction>,
    pub transitions: Tensor,
}

pub fn prepare_expert(world: &World, expert: &[ConsumptionSequence], norm: &Normalizer) -> Result<Vec<ExpertEpisode>> {
    if expert.is_empty() {
        return Err(CoreError::Empty("expert sequences"));
    }
    let horizon = expert[0].len();
    expert
        .iter()
        .map(|s| {
            s.validate(Some(horizon), &world.catalog)?;
            let user = *world.user(s.user_id)?;
            let actions = s.actions(&user, &world.catalog)?;
            let transitions = encode_transitions(norm, &world.catalog, &user, &actions);
            Ok(ExpertEpisode {
                user,
                sequence: s.clone(),
                actions,
                transitions,
            })
        })
        .collect()
}

/// Per-store purchase counts of the expert data, by catalog index.
pub fn store_popularity(world: &World, expert: &[ConsumptionSequence]) -> Vec<f64> {
    let mut c = vec![0.0; world.catalog.len()];
    for id in expert.iter().flat_map(|s| s.stores()) {
        if let Some(q) = world.catalog.index_of(id) {
            c[q] += 1.0;
        }
    }
    c
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LogRow {
    pub iter: usize,
    pub head: usize,
    pub disc_loss: f64,
    pub mean_reward: f64,
    pub mean_nn_reward: f64,
    pub mean_prior_reward: f64,
    pub mean_u: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub jsd_consumption: Option<f64>,
    pub jsd_exploration: Option<f64>,
}

pub fn write_log_csv<W: Write>(rows: &[LogRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub struct Trainer<'w> {
    pub world: &'w World,
    pub cfg: TrainConfig,
    pub knowledge: Knowledge,
    pub prior: Option<Prior>,
    pub expert: Vec<ExpertEpisode>,
    pub policy: PolicyModel,
    pub disc: Discriminator,
    pub log: Vec<LogRow>,
    pub pretrain_nll: Vec<f64>,
    policy_adam: Adam,
    disc_adam: Adam,
    rng: SimRng,
    iter: usize,
}

impl<'w> Trainer<'w> {
    /// `prior_params` gate every prior kind; they are ignored for `none`.
    pub fn new(
        world: &'w World,
        expert: &[ConsumptionSequence],
        cfg: TrainConfig,
        knowledge: Knowledge,
        prior_params: EprParams,
    ) -> Result<Self> {
        cfg.validate()?;
        let norm = Normalizer::for_world(world);
        let expert_eps = prepare_expert(world, expert, &norm)?;
        let prior = match knowledge {
            Knowledge::None => None,
            k => Some(Prior::new(
                k,
                prior_params,
                &world.catalog,
                store_popularity(world, expert),
            )?),
        };
        let policy = PolicyModel::new(cfg.policy, norm, cfg.seed);
        let disc = Discriminator::new(cfg.disc, norm, cfg.seed);
        let policy_adam = Adam::new(&policy.params, cfg.policy_lr, cfg.adam_eps);
        let disc_adam = Adam::new(&disc.params, cfg.disc_lr, cfg.adam_eps);
        Ok(Self {
            world,
            cfg,
            knowledge,
            prior,
            expert: expert_eps,
            policy,
            disc,
            log: Vec::new(),
            pretrain_nll: Vec::new(),
            policy_adam,
            disc_adam,
            rng: rng_for(cfg.seed, stream::TRAIN, 0),
            iter: 0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.expert[0].actions.len()
    }

    /// Behaviour cloning: minibatch Adam on the expert negative
    /// log-likelihood. Returns the mean NLL seen in each epoch.
    pub fn pretrain(&mut self) -> Result<Vec<f64>> {
        let mut adam = Adam::new(&self.policy.params, self.cfg.pretrain_lr, self.cfg.adam_eps);
        let mut order: Vec<usize> = (0..self.expert.len()).collect();
        let mut out = Vec::with_capacity(self.cfg.pretrain_epochs);
        for _ in 0..self.cfg.pretrain_epochs {
            order.shuffle(&mut self.rng);
            let mut sum = 0.0;
            for chunk in order.chunks(self.cfg.chunk_users) {
                let users: Vec<&User> = chunk.iter().map(|&i| &self.expert[i].user).collect();
                let acts: Vec<&[JointAction]> = chunk.iter().map(|&i| self.expert[i].actions.as_slice()).collect();
                let (nll, grads) = nll_and_grad(&self.policy, self.world, &users, &acts)?;
                sum += nll * chunk.len() as f64;
                adam.step(&mut self.policy.params, &grads)?;
            }
            out.push(sum / self.expert.len() as f64);
        }
        self.pretrain_nll.extend(&out);
        Ok(out)
    }

    /// Mean per-slot expert NLL under the current policy.
    pub fn expert_nll(&self) -> Result<f64> {
        let mut sum = 0.0;
        for chunk in self.expert.chunks(self.cfg.chunk_users) {
            let users: Vec<&User> = chunk.iter().map(|e| &e.user).collect();
            let acts: Vec<&[JointAction]> = chunk.iter().map(|e| e.actions.as_slice()).collect();
            sum += nll_and_grad(&self.policy, self.world, &users, &acts)?.0 * chunk.len() as f64;
        }
        Ok(sum / self.expert.len() as f64)
    }

    /// Sequences for every expert user from the current policy, on a seed
    /// that does not depend on training progress.
    pub fn generate_eval(&self) -> Result<Vec<ConsumptionSequence>> {
        let users: Vec<User> = self.expert.iter().map(|e| e.user).collect();
        let seed = derive_seed(self.cfg.seed, stream::ROLLOUT, u64::MAX);
        let eps = self
            .policy
            .generate(&self.world.catalog, &users, self.horizon(), seed, self.cfg.chunk_users)?;
        Ok(eps.into_iter().map(|e| e.sequence).collect())
    }

    /// Consumption and exploration JSD of [`Trainer::generate_eval`] against the expert data.
    pub fn snapshot_jsd(&self) -> Result<(f64, f64)> {
        let generated = self.generate_eval()?;
        let real: Vec<ConsumptionSequence> = self.expert.iter().map(|e| e.sequence.clone()).collect();
        Ok((
            metric_jsd(MetricKind::Consumption, &real, &generated, self.world)?,
            metric_jsd(MetricKind::Exploration, &real, &generated, self.world)?,
        ))
    }

    /// One outer iteration: sample a head, roll out, update the
    /// discriminator `K` times, reward, and update the policy.
    pub fn outer_step(&mut self) -> Result<LogRow> {
        if self.cfg.anneal_lr && self.cfg.outer_iters > 0 {
            let frac = 1.0 - self.iter as f64 / self.cfg.outer_iters as f64;
            self.policy_adam.learning_rate = self.cfg.policy_lr * frac;
            self.disc_adam.learning_rate = self.cfg.disc_lr * frac;
        }
        let head = self.rng.gen_range(0..self.cfg.disc.heads);
        let b = self.cfg.batch_size_users.min(self.expert.len());
        let batch = sample(&mut self.rng, self.expert.len(), b).into_vec();
        let users: Vec<User> = batch.iter().map(|&i| self.expert[i].user).collect();
        let seed = self.rng.gen::<u64>();
        let (_, mut buffer) = collect_rollouts(
            &self.policy,
            self.world,
            &users,
            self.horizon(),
            seed,
            self.cfg.chunk_users,
        )?;

        let real = concat_rows(batch.iter().map(|&i| &self.expert[i].transitions));
        let fake_parts: Vec<Tensor> = buffer
            .users
            .iter()
            .zip(&buffer.episodes)
            .map(|(u, e)| encode_transitions(&self.disc.norm, &self.world.catalog, u, &e.actions))
            .collect();
        let fake = concat_rows(fake_parts.iter());

        let mut disc_loss = 0.0;
        let mut stats = RewardStats::default();
        for k in 0..self.cfg.disc_inner_iters {
            if k + 1 == self.cfg.disc_inner_iters {
                stats = assign_rewards(&mut buffer, &self.disc, self.prior.as_ref(), head, self.world)?;
            }
            disc_loss = self.disc.train_step(&mut self.disc_adam, &real, &fake, &mut self.rng)?;
        }
        standardize_rewards(&mut buffer);
        compute_advantages(&mut buffer, self.cfg.discount, self.cfg.gae_lambda);
        normalize_advantages(&mut buffer);
        let ppo = ppo_update(&mut self.policy, &mut self.policy_adam, &buffer, self.world, &self.cfg)?;

        self.iter += 1;
        let mut row = LogRow {
            iter: self.iter,
            head,
            disc_loss,
            mean_reward: stats.mean_reward,
            mean_nn_reward: stats.mean_nn_reward,
            mean_prior_reward: stats.mean_prior_reward,
            mean_u: stats.mean_u,
            policy_loss: ppo.policy_loss,
            value_loss: ppo.value_loss,
            entropy: ppo.entropy,
            ..Default::default()
        };
        let m = self.cfg.snapshot_every;
        if m > 0 && (self.iter.is_multiple_of(m) || self.iter == self.cfg.outer_iters) {
            let (c, e) = self.snapshot_jsd()?;
            row.jsd_consumption = Some(c);
            row.jsd_exploration = Some(e);
        }
        self.log.push(row.clone());
        Ok(row)
    }

    /// Runs every remaining outer iteration.
    pub fn run_outer(&mut self) -> Result<()> {
        while self.iter < self.cfg.outer_iters {
            self.outer_step()?;
        }
        Ok(())
    }
}

fn concat_rows<'a>(parts: impl Iterator<Item = &'a Tensor>) -> Tensor {
    let mut data = Vec::new();
    let mut cols = 0;
    for t in parts {
        cols = t.cols();
        data.extend_from_slice(t.data());
    }
    let rows = data.len().checked_div(cols).unwrap_or(0);
    Tensor::matrix(rows, cols, data).expect("concat rows")
}

pub struct TrainResult {
    pub policy: PolicyModel,
    pub disc: Discriminator,
    pub log: Vec<LogRow>,
    pub pretrain_nll: Vec<f64>,
    /// Consumption and exploration JSD right after pretraining.
    pub post_pretrain_jsd: (f64, f64),
    pub final_jsd: (f64, f64),
}

/// Pretraining followed by all outer iterations.
pub fn train(
    world: &World,
    expert: &[ConsumptionSequence],
    cfg: TrainConfig,
    knowledge: Knowledge,
    prior_params: EprParams,
) -> Result<TrainResult> {
    let mut t = Trainer::new(world, expert, cfg, knowledge, prior_params)?;
    t.pretrain()?;
    let post_pretrain_jsd = t.snapshot_jsd()?;
    t.run_outer()?;
    let final_jsd = t.snapshot_jsd()?;
    Ok(TrainResult {
        policy: t.policy,
        disc: t.disc,
        log: t.log,
        pretrain_nll: t.pretrain_nll,
        post_pretrain_jsd,
        final_jsd,
    })
}
