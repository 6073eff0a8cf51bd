//! One function per subcommand. Each writes its outputs and a manifest
//! under the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use eprgail_core::data::{load_sequences, save_sequences, ConsumptionSequence};
use eprgail_core::downstream::{
    build_cf, mape, mix_experiment, predict_sales, recommend_topk, sales_in_window, split_next_new_purchase,
    Forecaster, DEFAULT_NEIGHBOURS,
};
use eprgail_core::epr::{epr_generate, fit_epr, EprFit, EprParams};
use eprgail_core::eval::{evaluate_report, extract_distribution, MetricKind};
use eprgail_core::policy::PolicyModel;
use eprgail_core::reward::Knowledge;
use eprgail_core::trainer::{train, write_log_csv};
use eprgail_core::world::{generate_expert_sequences, generate_world, World};

use crate::config::RunConfig;
use crate::manifest::ManifestWriter;

pub const EXPERT_FILE: &str = "expert.jsonl";
pub const FIT_FILE: &str = "epr_fit.toml";
pub const GENERATED_FILE: &str = "generated.jsonl";
pub const POLICY_FILE: &str = "policy.ckpt";
pub const DISC_FILE: &str = "disc.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const PRETRAIN_FILE: &str = "pretrain_nll.csv";
pub const JSD_FILE: &str = "jsd.csv";
pub const HISTOGRAM_FILE: &str = "histograms.csv";
pub const SALES_FILE: &str = "sales.csv";
pub const RECOMMEND_FILE: &str = "recommendations.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";

/// The model a generating command samples from.
pub enum ModelSource<'a> {
    Policy(&'a Path),
    Epr(&'a Path),
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_world(dir: &Path) -> Result<World> {
    World::load(dir).with_context(|| format!("loading world from {}", dir.display()))
}

fn load_seqs(path: &Path, world: &World) -> Result<Vec<ConsumptionSequence>> {
    load_sequences(path, &world.grid, &world.catalog)
        .with_context(|| format!("loading sequences from {}", path.display()))
}

pub fn read_fit(path: &Path) -> Result<EprFit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_fit(fit: &EprFit, path: &Path) -> Result<()> {
    fs::write(path, toml::to_string(fit)?).with_context(|| format!("writing {}", path.display()))
}

fn write_csv<S: serde::Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn gen_world(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare_out(out)?;
    let world = generate_world(&cfg.world).context("generating world")?;
    world.save(out)?;
    let expert = generate_expert_sequences(&world, &cfg.world);
    save_sequences(&expert, &out.join(EXPERT_FILE))?;
    let mut m = ManifestWriter::new("gen-world", cfg.world.seed);
    m.outputs.push(out.join("catalog.csv"));
    m.outputs.push(out.join("users.csv"));
    m.outputs.push(out.join("world.toml"));
    m.outputs.push(out.join(EXPERT_FILE));
    m.write(cfg, out)?;
    println!(
        "world: {} stores, {} users, {} slots -> {}",
        world.catalog.len(),
        world.users.len(),
        world.grid.horizon_slots,
        out.display()
    );
    Ok(())
}

pub fn fit(cfg: &RunConfig, world_dir: &Path, seqs: &Path, out: &Path) -> Result<()> {
    prepare_out(out)?;
    let world = load_world(world_dir)?;
    let data = load_seqs(seqs, &world)?;
    let fit = fit_epr(&data, &world).context("fitting EPR parameters")?;
    let path = out.join(FIT_FILE);
    write_fit(&fit, &path)?;
    let mut m = ManifestWriter::new("fit-epr", 0);
    m.inputs.push(world_dir.to_path_buf());
    m.inputs.push(seqs.to_path_buf());
    m.outputs.push(path);
    m.write(cfg, out)?;
    let p = fit.params;
    println!(
        "alpha {:.4} beta {:.4} rho {:.4} gamma {:.4} lambda {:.4}",
        p.alpha, p.beta, p.rho, p.gamma, p.lambda_
    );
    println!(
        "r2 purchase {:.4} explore {:.4} distance {:.4}",
        fit.purchase.r_squared, fit.explore.r_squared, fit.distance.r_squared
    );
    Ok(())
}

pub fn simulate(
    cfg: &RunConfig,
    world_dir: &Path,
    model: ModelSource<'_>,
    horizon: Option<usize>,
    out: &Path,
) -> Result<()> {
    prepare_out(out)?;
    let world = load_world(world_dir)?;
    let horizon = horizon.unwrap_or(world.grid.horizon_slots);
    let seed = cfg.simulate.seed;
    let mut m = ManifestWriter::new("simulate", seed);
    m.inputs.push(world_dir.to_path_buf());
    let seqs = match model {
        ModelSource::Policy(p) => {
            m.inputs.push(p.to_path_buf());
            let (policy, _) = PolicyModel::load(p).with_context(|| format!("loading policy {}", p.display()))?;
            policy
                .generate(&world.catalog, &world.users, horizon, seed, cfg.simulate.chunk_users)?
                .into_iter()
                .map(|e| e.sequence)
                .collect::<Vec<_>>()
        }
        ModelSource::Epr(p) => {
            m.inputs.push(p.to_path_buf());
            epr_generate(&world, &read_fit(p)?.params, horizon, seed)
        }
    };
    let path = out.join(GENERATED_FILE);
    save_sequences(&seqs, &path)?;
    m.outputs.push(path.clone());
    m.write(cfg, out)?;
    println!("{} sequences of {} slots -> {}", seqs.len(), horizon, path.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct PretrainRow {
    epoch: usize,
    nll: f64,
}

pub fn train_cmd(
    cfg: &RunConfig,
    world_dir: &Path,
    expert_path: &Path,
    fit_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    prepare_out(out)?;
    let world = load_world(world_dir)?;
    let expert = load_seqs(expert_path, &world)?;
    let mut m = ManifestWriter::new("train", cfg.train.seed);
    m.inputs.push(world_dir.to_path_buf());
    m.inputs.push(expert_path.to_path_buf());
    let prior_params = match (fit_path, cfg.knowledge) {
        (Some(p), _) => {
            m.inputs.push(p.to_path_buf());
            read_fit(p)?.params
        }
        (None, Knowledge::None) => EprParams::default(),
        (None, _) => {
            let f = fit_epr(&expert, &world).context("fitting EPR parameters for the prior")?;
            let p = out.join(FIT_FILE);
            write_fit(&f, &p)?;
            m.outputs.push(p);
            f.params
        }
    };
    m.notes
        .push("policy rewards come from the discriminator as it stands in the final inner iteration".into());
    m.notes.push(format!("knowledge prior: {}", cfg.knowledge));
    let r = train(&world, &expert, cfg.train, cfg.knowledge, prior_params).context("training")?;

    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), cfg.train.seed.to_string());
    meta.insert("knowledge".to_string(), cfg.knowledge.to_string());
    r.policy.save(&out.join(POLICY_FILE), &meta)?;
    r.disc.save(&out.join(DISC_FILE), &meta)?;
    let log = fs::File::create(out.join(LOG_FILE))?;
    write_log_csv(&r.log, log)?;
    write_csv(
        &out.join(PRETRAIN_FILE),
        r.pretrain_nll
            .iter()
            .enumerate()
            .map(|(epoch, &nll)| PretrainRow { epoch, nll }),
    )?;
    for f in [POLICY_FILE, DISC_FILE, LOG_FILE, PRETRAIN_FILE] {
        m.outputs.push(out.join(f));
    }
    let mut put = |k: &str, v: f64| m.results.insert(k.to_string(), format!("{v:.10}"));
    put("post_pretrain_jsd_consumption", r.post_pretrain_jsd.0);
    put("post_pretrain_jsd_exploration", r.post_pretrain_jsd.1);
    put("final_jsd_consumption", r.final_jsd.0);
    put("final_jsd_exploration", r.final_jsd.1);
    m.write(cfg, out)?;
    println!(
        "jsd consumption {:.4} -> {:.4}, exploration {:.4} -> {:.4}",
        r.post_pretrain_jsd.0, r.final_jsd.0, r.post_pretrain_jsd.1, r.final_jsd.1
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct HistogramRow {
    kind: MetricKind,
    bin: usize,
    lower: Option<f64>,
    upper: Option<f64>,
    real: f64,
    generated: f64,
}

pub fn evaluate(cfg: &RunConfig, world_dir: &Path, real_path: &Path, gen_path: &Path, out: &Path) -> Result<()> {
    prepare_out(out)?;
    let world = load_world(world_dir)?;
    let real = load_seqs(real_path, &world)?;
    let generated = load_seqs(gen_path, &world)?;
    let report = evaluate_report(&real, &generated, &world).context("evaluating")?;
    fs::write(out.join(JSD_FILE), report.to_csv())?;
    let mut rows = Vec::new();
    for kind in MetricKind::ALL {
        let p = extract_distribution(kind, &real, &world)?;
        let q = extract_distribution(kind, &generated, &world)?;
        let n = p.probs.len().max(q.probs.len());
        for bin in 0..n {
            rows.push(HistogramRow {
                kind,
                bin,
                lower: p.edges.get(bin).copied(),
                upper: p.edges.get(bin + 1).copied(),
                real: p.probs.get(bin).copied().unwrap_or(0.0),
                generated: q.probs.get(bin).copied().unwrap_or(0.0),
            });
        }
    }
    write_csv(&out.join(HISTOGRAM_FILE), rows)?;
    let mut m = ManifestWriter::new("evaluate", 0);
    m.inputs
        .extend([world_dir.to_path_buf(), real_path.to_path_buf(), gen_path.to_path_buf()]);
    m.outputs.extend([out.join(JSD_FILE), out.join(HISTOGRAM_FILE)]);
    for (k, v) in &report.rows {
        m.results.insert(format!("jsd_{k}"), format!("{v:.10}"));
    }
    m.write(cfg, out)?;
    print!("{report}");
    Ok(())
}

#[derive(serde::Serialize)]
struct SalesRow {
    store_id: u32,
    predicted: f64,
    actual: Option<f64>,
}

pub fn predict_sales_cmd(
    cfg: &RunConfig,
    world_dir: &Path,
    history_path: &Path,
    model: ModelSource<'_>,
    out: &Path,
) -> Result<()> {
    prepare_out(out)?;
    let world = load_world(world_dir)?;
    let history = load_seqs(history_path, &world)?;
    let o = &cfg.downstream;
    let mut m = ManifestWriter::new("predict-sales", o.seed);
    m.inputs.extend([world_dir.to_path_buf(), history_path.to_path_buf()]);
    let loaded;
    let fit;
    let forecaster = match model {
        ModelSource::Policy(p) => {
            m.inputs.push(p.to_path_buf());
            loaded = PolicyModel::load(p)
                .with_context(|| format!("loading policy {}", p.display()))?
                .0;
            Forecaster::Policy(&loaded)
        }
        ModelSource::Epr(p) => {
            m.inputs.push(p.to_path_buf());
            fit = read_fit(p)?;
            Forecaster::Epr(&fit.params)
        }
    };
    let f = predict_sales(
        forecaster,
        &world,
        &history,
        o.start_slot,
        o.window_slots,
        o.n_rollouts,
        o.seed,
    )
    .context("forecasting sales")?;
    let has_truth = history.iter().all(|s| s.len() >= o.start_slot + o.window_slots);
    let truth = if has_truth {
        Some(sales_in_window(&history, &world.catalog, o.start_slot, o.window_slots)?)
    } else {
        None
    };
    let rows = f
        .store_ids
        .iter()
        .zip(&f.counts)
        .enumerate()
        .map(|(i, (&store_id, &predicted))| SalesRow {
            store_id,
            predicted,
            actual: truth.as_ref().map(|t| t[i]),
        });
    write_csv(&out.join(SALES_FILE), rows)?;
    m.outputs.push(out.join(SALES_FILE));
    if let Some(t) = &truth {
        let e = mape(&f.counts, t).context("computing MAPE")?;
        m.results.insert("mape".into(), format!("{e:.10}"));
        println!("MAPE {e:.4}% over a {}-slot window", o.window_slots);
    } else {
        println!("history ends before the window; wrote predictions only");
    }
    m.write(cfg, out)?;
    Ok(())
}

#[derive(serde::Serialize)]
struct RecommendRow {
    user_id: u64,
    rank: usize,
    store_id: u32,
}

#[derive(serde::Serialize)]
struct AccuracyRow {
    real_users: usize,
    synthetic_users: usize,
    accuracy_real_only: f64,
    accuracy_mixed: f64,
}

pub fn recommend(
    cfg: &RunConfig,
    world_dir: &Path,
    real_path: &Path,
    synthetic: Option<&Path>,
    out: &Path,
) -> Result<()> {
    prepare_out(out)?;
    let world = load_world(world_dir)?;
    let real = load_seqs(real_path, &world)?;
    let o = &cfg.downstream;
    if real.iter().any(|s| s.len() < o.split_slot) {
        bail!("split slot {} lies beyond some sequences", o.split_slot);
    }
    let mut m = ManifestWriter::new("recommend", o.seed);
    m.inputs.extend([world_dir.to_path_buf(), real_path.to_path_buf()]);
    let synth = match synthetic {
        Some(p) => {
            m.inputs.push(p.to_path_buf());
            load_seqs(p, &world)?
        }
        None => Vec::new(),
    };

    let (train_part, _) = split_next_new_purchase(&real, o.split_slot);
    let cf = build_cf(&train_part, &world.catalog, DEFAULT_NEIGHBOURS)?;
    let mut rows = Vec::new();
    for s in &real {
        for (rank, store_id) in recommend_topk(&cf, s.user_id, o.top_k)?.into_iter().enumerate() {
            rows.push(RecommendRow {
                user_id: s.user_id,
                rank: rank + 1,
                store_id,
            });
        }
    }
    write_csv(&out.join(RECOMMEND_FILE), rows)?;

    let mix = mix_experiment(
        &real,
        &synth,
        &world.catalog,
        &o.real_counts,
        o.split_slot,
        o.top_k,
        o.seed,
    )
    .context("running the mix experiment")?;
    write_csv(
        &out.join(ACCURACY_FILE),
        mix.iter().map(|r| AccuracyRow {
            real_users: r.real_users,
            synthetic_users: r.synthetic_users,
            accuracy_real_only: r.accuracy_real_only,
            accuracy_mixed: r.accuracy_mixed,
        }),
    )?;
    m.outputs.extend([out.join(RECOMMEND_FILE), out.join(ACCURACY_FILE)]);
    m.write(cfg, out)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "{:>10} {:>10} {:>10} {:>10}",
        "real", "synthetic", "real-only", "mixed"
    )?;
    for r in &mix {
        writeln!(
            stdout,
            "{:>10} {:>10} {:>10.4} {:>10.4}",
            r.real_users, r.synthetic_users, r.accuracy_real_only, r.accuracy_mixed
        )?;
    }
    Ok(())
}
