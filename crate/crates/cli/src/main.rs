mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use eprgail_core::reward::Knowledge;

use commands::ModelSource;
use config::{load_config, Overrides};

#[derive(Parser)]
#[command(
    name = "eprgail",
    version,
    about = "Simulate, imitate and evaluate consumption sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for every output of the command.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Model {
    /// Policy checkpoint written by `train`.
    #[arg(long, conflicts_with = "epr_params")]
    policy: Option<PathBuf>,
    /// Fitted EPR parameters written by `fit-epr`.
    #[arg(long)]
    epr_params: Option<PathBuf>,
}

impl Model {
    fn source(&self) -> Result<ModelSource<'_>> {
        match (&self.policy, &self.epr_params) {
            (Some(p), None) => Ok(ModelSource::Policy(p)),
            (None, Some(p)) => Ok(ModelSource::Epr(p)),
            _ => bail!("give exactly one of --policy or --epr-params"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and expert sequences.
    GenWorld {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_users: Option<usize>,
        #[arg(long)]
        n_stores: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Fit EPR parameters to sequences.
    FitEpr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        sequences: PathBuf,
    },
    /// Sample sequences for the world's users from a policy or EPR parameters.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        seed: Option<u64>,
        /// Slots per sequence; defaults to the world horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Pretrain and adversarially train a policy on expert sequences.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        expert: PathBuf,
        /// Prior blended into the reward.
        #[arg(long)]
        knowledge: Option<Knowledge>,
        /// EPR parameters gating the prior; fitted from the expert data when absent.
        #[arg(long)]
        epr_params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        policy_lr: Option<f64>,
        #[arg(long)]
        disc_lr: Option<f64>,
        #[arg(long)]
        outer_iters: Option<usize>,
    },
    /// Compare generated sequences with real ones over six distributions.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
    },
    /// Forecast per-store sales by continuing observed histories.
    PredictSales {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        history: PathBuf,
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Collaborative-filtering recommendations, with optional synthetic users.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synthetic: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        split: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld {
            common,
            seed,
            n_users,
            n_stores,
            horizon,
        } => {
            let flags = Overrides {
                world_seed: seed,
                n_users,
                n_stores,
                horizon_slots: horizon,
                ..Default::default()
            };
            let cfg = load_config(common.config.as_deref(), &flags)?;
            commands::gen_world(&cfg, &common.out_dir)
        }
        Command::FitEpr {
            common,
            world,
            sequences,
        } => {
            let cfg = load_config(common.config.as_deref(), &Overrides::default())?;
            commands::fit(&cfg, &world, &sequences, &common.out_dir)
        }
        Command::Simulate {
            common,
            world,
            model,
            seed,
            horizon,
        } => {
            let flags = Overrides {
                simulate_seed: seed,
                ..Default::default()
            };
            let cfg = load_config(common.config.as_deref(), &flags)?;
            commands::simulate(&cfg, &world, model.source()?, horizon, &common.out_dir)
        }
        Command::Train {
            common,
            world,
            expert,
            knowledge,
            epr_params,
            seed,
            policy_lr,
            disc_lr,
            outer_iters,
        } => {
            let flags = Overrides {
                knowledge,
                train_seed: seed,
                policy_lr,
                disc_lr,
                outer_iters,
                ..Default::default()
            };
            let cfg = load_config(common.config.as_deref(), &flags)?;
            commands::train_cmd(&cfg, &world, &expert, epr_params.as_deref(), &common.out_dir)
        }
        Command::Evaluate {
            common,
            world,
            real,
            generated,
        } => {
            let cfg = load_config(common.config.as_deref(), &Overrides::default())?;
            commands::evaluate(&cfg, &world, &real, &generated, &common.out_dir)
        }
        Command::PredictSales {
            common,
            world,
            history,
            model,
            seed,
            start,
            window,
            rollouts,
        } => {
            let flags = Overrides {
                downstream_seed: seed,
                ..Default::default()
            };
            let mut cfg = load_config(common.config.as_deref(), &flags)?;
            let d = &mut cfg.downstream;
            d.start_slot = start.unwrap_or(d.start_slot);
            d.window_slots = window.unwrap_or(d.window_slots);
            d.n_rollouts = rollouts.unwrap_or(d.n_rollouts);
            commands::predict_sales_cmd(&cfg, &world, &history, model.source()?, &common.out_dir)
        }
        Command::Recommend {
            common,
            world,
            real,
            synthetic,
            seed,
            split,
            k,
        } => {
            let flags = Overrides {
                downstream_seed: seed,
                ..Default::default()
            };
            let mut cfg = load_config(common.config.as_deref(), &flags)?;
            let d = &mut cfg.downstream;
            d.split_slot = split.unwrap_or(d.split_slot);
            d.top_k = k.unwrap_or(d.top_k);
            commands::recommend(&cfg, &world, &real, synthetic.as_deref(), &common.out_dir)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
