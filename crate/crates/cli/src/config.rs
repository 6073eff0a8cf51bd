//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use eprgail_core::reward::Knowledge;
use eprgail_core::trainer::TrainConfig;
use eprgail_core::world::WorldConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub seed: u64,
    /// Users per computation graph when sampling from a policy.
    pub chunk_users: usize,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            chunk_users: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamOptions {
    /// Slots of observed history before the forecast window.
    pub start_slot: usize,
    pub window_slots: usize,
    pub n_rollouts: usize,
    /// Recommendation split: history before it trains the model.
    pub split_slot: usize,
    pub top_k: usize,
    /// Extra real users added to the recommender, one row each.
    pub real_counts: Vec<usize>,
    pub seed: u64,
}

impl Default for DownstreamOptions {
    fn default() -> Self {
        Self {
            start_slot: 60,
            window_slots: 30,
            n_rollouts: 10,
            split_slot: 60,
            top_k: 5,
            real_counts: vec![0, 25, 50, 100],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub knowledge: Knowledge,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub simulate: SimulateOptions,
    pub downstream: DownstreamOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            knowledge: Knowledge::Epr,
            world: WorldConfig::default(),
            train: TrainConfig::default(),
            simulate: SimulateOptions::default(),
            downstream: DownstreamOptions::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the file or default value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub knowledge: Option<Knowledge>,
    pub policy_lr: Option<f64>,
    pub disc_lr: Option<f64>,
    pub outer_iters: Option<usize>,
    pub train_seed: Option<u64>,
    pub world_seed: Option<u64>,
    pub n_users: Option<usize>,
    pub n_stores: Option<usize>,
    pub horizon_slots: Option<usize>,
    pub simulate_seed: Option<u64>,
    pub downstream_seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut c.knowledge, &self.knowledge);
        set(&mut c.train.policy_lr, &self.policy_lr);
        set(&mut c.train.disc_lr, &self.disc_lr);
        set(&mut c.train.outer_iters, &self.outer_iters);
        set(&mut c.train.seed, &self.train_seed);
        set(&mut c.world.seed, &self.world_seed);
        set(&mut c.world.n_users, &self.n_users);
        set(&mut c.world.n_stores, &self.n_stores);
        set(&mut c.world.horizon_slots, &self.horizon_slots);
        set(&mut c.simulate.seed, &self.simulate_seed);
        set(&mut c.downstream.seed, &self.downstream_seed);
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    Ok(toml::from_str(text)?)
}

/// Defaults, then `path` if given, then `flags`.
pub fn load_config(path: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    flags.apply(&mut cfg);
    cfg.world.validate().context("world config")?;
    cfg.train.validate().context("train config")?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.policy_lr, 3e-4);
        assert_eq!(c.train.disc_lr, 1e-4);
        assert_eq!(c.train.adam_eps, 1e-5);
        assert_eq!(c.train.entropy_coef, 1e-3);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "[train]\npolicy_lr = 3e-4\nouter_iters = 7\n").unwrap();
        let flags = Overrides {
            policy_lr: Some(1e-3),
            ..Default::default()
        };
        let c = load_config(Some(&p), &flags).unwrap();
        assert_eq!(c.train.policy_lr, 1e-3);
        assert_eq!(c.train.outer_iters, 7);
        assert_eq!(c.train.ppo_epochs, TrainConfig::default().ppo_epochs);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config("learning_rte = 0.1\n").unwrap_err();
        assert!(format!("{e:#}").contains("learning_rte"), "{e:#}");
        let e = parse_config("[train]\nlearning_rte = 0.1\n").unwrap_err();
        assert!(format!("{e:#}").contains("learning_rte"), "{e:#}");
    }

    #[test]
    fn parse_error_reports_line() {
        let e = parse_config("[train]\npolicy_lr = = 1\n").unwrap_err();
        assert!(format!("{e:#}").contains("line 2"), "{e:#}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::default();
        assert_eq!(parse_config(&toml::to_string(&c).unwrap()).unwrap(), c);
    }
}
