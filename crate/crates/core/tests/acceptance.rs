//! Acceptance suite: every criterion runs in order and prints one verdict
//! line to stderr, then the test asserts that all of them passed.

use std::io::Write;
use std::time::{Duration, Instant};

use eprgail_core::data::{ConsumptionSequence, JointAction, Store, StoreCatalog, StoreId, UserHistory};
use eprgail_core::downstream::{
    accuracy_at_k, build_cf, mape, mix_experiment, predict_sales, sales_in_window, split_next_new_purchase, Forecaster,
};
use eprgail_core::epr::{action_likelihood, epr_generate, epr_reward, fit_epr, fit_power_law, EprParams, EprState};
use eprgail_core::eval::{evaluate_report, jsd, MetricKind, Report};
use eprgail_core::features::{FeatureConfig, FeatureExtractor, Normalizer};
use eprgail_core::policy::{PolicyConfig, PolicyModel, RowSource, UnrollOptions};
use eprgail_core::reward::{
    bootstrap_masks, encode_transitions, fused_reward, transition_width, uncertainty_weight, DiscConfig, Discriminator,
    Knowledge,
};
use eprgail_core::seeding::{rng_for, SimRng};
use eprgail_core::trainer::{write_log_csv, TrainConfig, Trainer};
use eprgail_core::world::{generate_expert_sequences, generate_world, World, WorldConfig};
use eprgail_nn::checks::{check_case, jitter_biases, kernel_op_cases};
use eprgail_nn::{grad_check_params_sampled, Adam, Graph, ParamSet, Tensor};
use rand::Rng;

/// Criteria expected to fail, with the reason printed next to the verdict.
const KNOWN_FAILURES: &[(usize, &str)] = &[(
    7,
    "the stated reference value for this pair disagrees with direct evaluation of the base-2 divergence",
)];

/// Stream for the suite's own random draws, apart from the library's streams.
const SUITE: u64 = 0xACCE;

fn say(line: &str) {
    let mut e = std::io::stderr().lock();
    writeln!(e, "{line}").expect("stderr");
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

#[derive(Default)]
struct Suite {
    outcomes: Vec<(usize, bool)>,
}

impl Suite {
    fn run<T>(&mut self, id: usize, title: &str, limit: Duration, f: impl FnOnce() -> (Verdict, T)) -> T {
        let t0 = Instant::now();
        let (mut v, out) = f();
        let took = t0.elapsed();
        if took > limit {
            v.pass = false;
            v.detail.push_str(&format!("; over the {} s limit", limit.as_secs()));
        }
        let word = if v.pass { "PASS" } else { "FAIL" };
        say(&format!(
            "criterion {id:>2} {word} {title}: {} ({:.1} s)",
            v.detail,
            took.as_secs_f64()
        ));
        if let Some((_, why)) = KNOWN_FAILURES.iter().find(|k| k.0 == id) {
            if !v.pass {
                say(&format!("             known failure: {why}"));
            }
        }
        self.outcomes.push((id, v.pass));
        out
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn catalog(n: u32) -> StoreCatalog {
    StoreCatalog::new(
        (1..=n)
            .map(|id| Store {
                id,
                category: (id % 3) as u16,
                avg_price: 10.0 * id as f64,
                location: (id as f64, 0.0),
            })
            .collect(),
    )
    .unwrap()
}

fn small_policy() -> PolicyConfig {
    PolicyConfig {
        embed_dim: 4,
        attn_dim: 4,
        hidden_dim: 5,
        head_hidden: 4,
        pref_dim: 3,
        critic_hidden: 4,
    }
}

fn small_world(users: usize, stores: usize, horizon: usize, seed: u64) -> World {
    generate_world(&WorldConfig {
        n_users: users,
        n_stores: stores,
        horizon_slots: horizon,
        category_count: 3,
        seed,
        ..WorldConfig::default()
    })
    .unwrap()
}

/// A history of `len` slots with random purchases; a purchase happens with
/// probability `buy`.
fn random_actions(world: &World, len: usize, buy: f64, rng: &mut SimRng) -> (UserHistory, Vec<JointAction>) {
    let mut h = UserHistory::new(&world.users[0], &world.catalog);
    let mut actions = Vec::with_capacity(len);
    for _ in 0..len {
        let store = rng.gen_bool(buy).then(|| rng.gen_range(0..world.catalog.len()));
        actions.push(h.action_for(store));
        h.observe(store, &world.catalog);
    }
    (h, actions)
}

fn random_params(rng: &mut SimRng) -> EprParams {
    EprParams {
        alpha: rng.gen_range(0.2..1.0),
        beta: rng.gen_range(0.2..1.5),
        rho: rng.gen_range(0.2..1.0),
        gamma: rng.gen_range(0.1..1.0),
        lambda_: rng.gen_range(0.5..3.0),
    }
}

fn criterion_1() -> Verdict {
    let mut worst = 0.0f64;
    let mut worst_r2 = 0.0f64;
    for (c, e) in [(2.5, 0.7), (0.3, 1.4), (12.0, 0.05), (1.0, 2.2)] {
        let samples: Vec<(f64, f64)> = (1..=25).map(|x| x as f64).map(|x| (x, c * x.powf(-e))).collect();
        let fit = fit_power_law(&samples).unwrap();
        worst = worst.max(rel(fit.coefficient, c)).max(rel(fit.exponent, e));
        worst_r2 = worst_r2.max((fit.r_squared - 1.0).abs());
    }
    verdict(
        worst < 1e-6 && worst_r2 <= 1e-9,
        format!("max relative error {worst:.1e}, max |r2 - 1| {worst_r2:.1e}"),
    )
}

/// EPR generation and fitting at scale; returns the serialized outputs.
fn criterion_2() -> (Verdict, Vec<u8>) {
    let world = generate_world(&WorldConfig {
        n_users: 2000,
        horizon_slots: 500,
        ..WorldConfig::default()
    })
    .unwrap();
    let truth = EprParams::default();
    let seqs = epr_generate(&world, &truth, 500, 11);
    let fit = fit_epr(&seqs, &world).unwrap();
    let p = fit.params;
    let errs = [
        ("alpha", rel(p.alpha, truth.alpha)),
        ("beta", rel(p.beta, truth.beta)),
        ("rho", rel(p.rho, truth.rho)),
        ("gamma", rel(p.gamma, truth.gamma)),
        ("lambda", rel(p.lambda_, truth.lambda_)),
    ];
    let r2 = [fit.purchase.r_squared, fit.explore.r_squared, fit.distance.r_squared];
    let pass = errs.iter().all(|e| e.1 <= 0.10) && r2.iter().all(|&r| r >= 0.9);
    let errs: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {:.1}%", 100.0 * e)).collect();
    let mut bytes = Vec::new();
    eprgail_core::data::write_sequences(&seqs, &mut bytes).unwrap();
    bytes.extend(toml::to_string(&fit).unwrap().into_bytes());
    let detail = format!("errors {}; r2 {:.4} {:.4} {:.4}", errs.join(", "), r2[0], r2[1], r2[2]);
    (verdict(pass, detail), bytes)
}

fn criterion_3() -> Verdict {
    let mut rng = rng_for(3, SUITE, 0);
    let (mut worst_epr, mut worst_policy) = (0.0f64, 0.0f64);
    let mut states = 0;
    for w in 0..20u64 {
        let stores = 2 + (w as usize % 4);
        let world = small_world(1, stores, 12, w);
        let params = random_params(&mut rng);
        let policy = PolicyModel::for_world(small_policy(), &world, w);
        for i in 0..30 {
            let (h, actions) = if i == 0 {
                let mut h = UserHistory::new(&world.users[0], &world.catalog);
                let mut acts = Vec::new();
                for q in 0..stores {
                    acts.push(h.action_for(Some(q)));
                    h.observe(Some(q), &world.catalog);
                }
                (h, acts)
            } else {
                let len = rng.gen_range(0..10);
                random_actions(&world, len, 0.6, &mut rng)
            };
            let mut replay = UserHistory::new(&world.users[0], &world.catalog);
            let mut state = policy.initial_state(1);
            for a in &actions {
                state = policy.encode(&world.catalog, &replay, &state).unwrap().1;
                replay.observe(a.store, &world.catalog);
            }
            let legal = h.legal_actions();
            let s = EprState::from(&h);
            let pe: f64 = legal.iter().map(|a| action_likelihood(&s, a, &params).unwrap()).sum();
            let pt: f64 = legal
                .iter()
                .map(|a| policy.joint_log_prob(&world.catalog, &h, &state, a).unwrap().exp())
                .sum();
            worst_epr = worst_epr.max((pe - 1.0).abs());
            worst_policy = worst_policy.max((pt - 1.0).abs());
            states += 1;
        }
    }
    verdict(
        worst_epr <= 1e-9 && worst_policy <= 1e-9,
        format!("{states} states, max |sum - 1| EPR {worst_epr:.1e}, policy {worst_policy:.1e}"),
    )
}

fn criterion_4() -> Verdict {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut note = |name: &str, seed: u64, err: f64, checked: usize| {
        worst = worst.max(err);
        if !(err < 1e-4 && checked > 0) {
            failures.push(format!("{name} seed {seed} error {err:.1e}"));
        }
    };
    let cases = kernel_op_cases();
    for case in &cases {
        for seed in 0..10 {
            let r = check_case(case, seed);
            note(case.name, seed, r.max_rel_error, r.checked);
        }
    }

    let world = small_world(1, 6, 12, 5);
    let norm = Normalizer::for_world(&world);
    for seed in 0..10u64 {
        let mut rng = rng_for(seed, SUITE, 4);
        let mut params = ParamSet::new();
        let cfg = FeatureConfig {
            embed_dim: 4,
            attn_dim: 3,
            hidden_dim: 5,
        };
        let fx = FeatureExtractor::new(&mut params, &norm, cfg, &mut rng);
        jitter_biases(&mut params, seed + 100);
        let (_, actions) = random_actions(&world, 5, 0.7, &mut rng);
        let mut h = UserHistory::new(&world.users[0], &world.catalog);
        let mut hs = Vec::new();
        for a in &actions {
            hs.push(h.clone());
            h.observe(a.store, &world.catalog);
        }
        let r = grad_check_params_sampled(
            |g, p| {
                let (h0, c0) = fx.initial_state(1);
                let mut st = (g.constant(h0), g.constant(c0));
                for h in &hs {
                    let b = norm.summary_batch(&[h], &world.catalog).map(|t| g.constant(t));
                    st = fx.step(g, p, b, st).unwrap();
                }
                let w = g.constant(Tensor::row((0..5).map(|i| 0.3 + i as f64).collect()));
                let y = g.mul(st.0, w);
                g.sum(y)
            },
            &params,
            300,
        );
        note("feature extractor", seed, r.max_rel_error, r.checked);
    }

    let world6 = world;
    let world = small_world(1, 4, 10, 6);
    for seed in 0..10u64 {
        let mut rng = rng_for(seed, SUITE, 5);
        let mut m = PolicyModel::for_world(small_policy(), &world, seed);
        jitter_biases(&mut m.params, seed + 200);
        let (_, given) = random_actions(&world, 5, 0.7, &mut rng);
        let users = [&world.users[0]];
        let opts = UnrollOptions {
            entropy: true,
            value: false,
        };
        let r = grad_check_params_sampled(
            |g, p| {
                let mut src = [RowSource::replay(&given)];
                let un = m
                    .unroll(g, p, &world.catalog, &users, given.len(), &mut src, opts)
                    .unwrap();
                let mut acc = None;
                for (i, s) in un.slots.iter().enumerate() {
                    let e = g.scale(s.entropy.unwrap(), 0.1 * (i as f64 + 1.0));
                    let t = g.add(s.log_prob, e);
                    acc = Some(match acc {
                        None => t,
                        Some(a) => g.add(a, t),
                    });
                }
                acc.unwrap()
            },
            &m.params,
            400,
        );
        note("policy", seed, r.max_rel_error, r.checked);
    }

    for seed in 0..10u64 {
        let mut rng = rng_for(seed, SUITE, 6);
        let cfg = DiscConfig {
            hidden_dim: 6,
            heads: 3,
            ..DiscConfig::default()
        };
        let mut d = Discriminator::new(cfg, norm, seed);
        jitter_biases(&mut d.params, seed + 300);
        // Heads start at zero, which would hide every trunk gradient.
        let ids: Vec<_> = d.params.ids().collect();
        for id in ids {
            for x in d.params.get_mut(id).data_mut() {
                *x += rng.gen_range(-0.5..0.5);
            }
        }
        let user = &world6.users[0];
        let (_, ra) = random_actions(&world6, 6, 0.7, &mut rng);
        let (_, fa) = random_actions(&world6, 6, 0.7, &mut rng);
        let real = encode_transitions(&norm, &world6.catalog, user, &ra);
        let fake = encode_transitions(&norm, &world6.catalog, user, &fa);
        let rm = bootstrap_masks(6, 3, 0.5, &mut rng);
        let fm = bootstrap_masks(6, 3, 0.5, &mut rng);
        let r = grad_check_params_sampled(
            |g, p| {
                let rv = g.constant(real.clone());
                let fv = g.constant(fake.clone());
                d.loss(g, p, rv, fv, &rm, &fm).unwrap()
            },
            &d.params,
            400,
        );
        note("discriminator", seed, r.max_rel_error, r.checked);
    }

    let detail = if failures.is_empty() {
        format!(
            "{} kernel ops and 3 composed graphs at 10 points each, max relative error {worst:.1e}",
            cases.len()
        )
    } else {
        format!("failing: {}", failures.join("; "))
    };
    verdict(failures.is_empty(), detail)
}

fn criterion_5() -> Verdict {
    let mut rng = rng_for(5, SUITE, 0);
    let mut bad = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..10_000 {
        let k = rng.gen_range(2..=8);
        let heads: Vec<f64> = if i % 10 == 0 {
            (0..k).map(|_| if rng.gen_bool(0.5) { 0.0 } else { 20.0 }).collect()
        } else {
            (0..k).map(|_| rng.gen_range(0.0..20.0)).collect()
        };
        let u = uncertainty_weight(&heads).unwrap();
        lo = lo.min(u);
        hi = hi.max(u);
        if !(0.5..1.0).contains(&u) {
            bad.push(format!("u = {u} for {heads:?}"));
        }
        let active = rng.gen_range(0..k);
        let re = rng.gen_range(0.0..20.0);
        let b = fused_reward(heads.clone(), active, re).unwrap();
        let (a, c) = (heads[active].min(re), heads[active].max(re));
        if !(b.fused >= a && b.fused <= c) {
            bad.push(format!("fused {} outside [{a}, {c}]", b.fused));
        }
        let same = vec![rng.gen_range(0.0..20.0); k];
        if uncertainty_weight(&same).unwrap() != 0.5 {
            bad.push(format!("identical heads {same:?} do not give 0.5"));
        }
        let p = rng.gen_range(1e-6..1.0);
        let r = epr_reward(p, p);
        if (r - std::f64::consts::LN_2).abs() > 1e-9 {
            bad.push(format!("r^e({p}, {p}) = {r}"));
        }
    }
    let detail = if bad.is_empty() {
        format!("10000 vectors, u in [{lo:.6}, {hi:.17}], fused bounded, equal likelihoods give ln 2")
    } else {
        format!("{} violations, first: {}", bad.len(), bad[0])
    };
    verdict(bad.is_empty(), detail)
}

fn criterion_6() -> Verdict {
    let mut rng = rng_for(6, SUITE, 0);
    let mut samples = 0usize;
    let mut masked_draws = 0usize;
    let mut masked_mass = 0usize;
    for w in 0..20u64 {
        let stores = rng.gen_range(2..=12);
        let world = small_world(3, stores, 30, 100 + w);
        let policy = PolicyModel::for_world(small_policy(), &world, w);
        for _ in 0..500 {
            let len = rng.gen_range(0..30);
            let buy = rng.gen_range(0.1..0.9);
            let (h, _) = random_actions(&world, len, buy, &mut rng);
            let (x_l, _) = policy.encode(&world.catalog, &h, &policy.initial_state(1)).unwrap();
            for _ in 0..10 {
                let explore = if h.visited_count == 0 {
                    true
                } else if h.all_visited() {
                    false
                } else {
                    rng.gen_bool(0.5)
                };
                let (scores, q, _) = policy
                    .decide_preference(&world.catalog, &x_l, &h, explore, &mut rng)
                    .unwrap();
                let legal = |s: usize| h.is_visited(s) != explore;
                if !legal(q) {
                    masked_draws += 1;
                }
                masked_mass += (0..stores).filter(|&s| !legal(s) && scores.probs[s] != 0.0).count();
                samples += 1;
            }
        }
    }
    verdict(
        masked_draws == 0 && masked_mass == 0 && samples >= 100_000,
        format!("{samples} samples, {masked_draws} masked draws, {masked_mass} non-zero masked probabilities"),
    )
}

fn criterion_7() -> Verdict {
    let mut rng = rng_for(7, SUITE, 0);
    let mut bad = Vec::new();
    for _ in 0..2000 {
        let n = rng.gen_range(1..12);
        let mut draw = || {
            let v: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
                .collect();
            let s: f64 = v.iter().sum();
            if s == 0.0 {
                let mut one = vec![0.0; n];
                one[0] = 1.0;
                one
            } else {
                v.iter().map(|x| x / s).collect()
            }
        };
        let (p, q) = (draw(), draw());
        let (a, b) = (jsd(&p, &q).unwrap(), jsd(&q, &p).unwrap());
        if (a - b).abs() > 1e-12 {
            bad.push(format!("asymmetric {a} vs {b}"));
        }
        if !(0.0..=1.0).contains(&a) {
            bad.push(format!("out of range {a}"));
        }
        if jsd(&p, &p).unwrap() != 0.0 {
            bad.push("jsd(p, p) is not 0".to_string());
        }
    }
    if (jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() > 1e-12 {
        bad.push("disjoint supports do not give 1".to_string());
    }
    let (p, q) = ([0.5, 0.5], [0.9, 0.1]);
    let value = jsd(&p, &q).unwrap();
    let m = [0.7, 0.3];
    let kl = |a: &[f64; 2]| -> f64 { (0..2).map(|i| a[i] * (a[i] / m[i]).log2()).sum() };
    let direct = 0.5 * kl(&p) + 0.5 * kl(&q);
    if (value - direct).abs() > 1e-12 {
        bad.push(format!("jsd {value} differs from direct evaluation {direct}"));
    }
    let literal = (value - 0.152).abs() <= 0.001;
    let mut detail = if bad.is_empty() {
        "2000 random pairs symmetric, in [0, 1], zero on identical inputs".to_string()
    } else {
        format!("{} violations, first: {}", bad.len(), bad[0])
    };
    detail.push_str(&format!(
        "; jsd([0.5, 0.5], [0.9, 0.1]) = {value:.6}, direct evaluation {direct:.6}, reference 0.152 +/- 0.001 {}",
        if literal { "met" } else { "not met" }
    ));
    verdict(bad.is_empty() && literal, detail)
}

fn criterion_8() -> Verdict {
    let world = generate_world(&WorldConfig::default()).unwrap();
    let norm = Normalizer::for_world(&world);
    let width = transition_width(&norm);
    let mut rng = rng_for(8, SUITE, 0);
    let rows = 128;
    let mut block = |lo: f64, hi: f64| {
        let v: Vec<f64> = (0..rows * width).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::matrix(rows, width, v).unwrap()
    };
    let real = block(0.5, 1.5);
    let fake = block(-1.5, -0.5);
    let mut d = Discriminator::new(DiscConfig::default(), norm, 8);
    let full = Tensor::matrix(rows, d.cfg.heads, vec![1.0; rows * d.cfg.heads]).unwrap();
    let loss = |d: &Discriminator| {
        let mut g = Graph::new();
        let (r, f) = (g.constant(real.clone()), g.constant(fake.clone()));
        let l = d.loss(&mut g, &d.params, r, f, &full, &full).unwrap();
        g.value(l).item()
    };
    let before = loss(&d);
    let mut adam = Adam::new(&d.params, 1e-4, 1e-5);
    let mut step_rng = rng_for(8, SUITE, 1);
    for _ in 0..200 {
        d.train_step(&mut adam, &real, &fake, &mut step_rng).unwrap();
    }
    let after = loss(&d);
    let start_ok = (before - 2.0 * std::f64::consts::LN_2).abs() < 1e-12;
    verdict(
        start_ok && after <= 0.5 * before,
        format!(
            "loss {before:.6} -> {after:.6} ({:.1}% reduction)",
            100.0 * (1.0 - after / before)
        ),
    )
}

struct DeskRun {
    post_bc: (f64, f64),
    trained: (f64, f64),
    report: Report,
    generated: Vec<ConsumptionSequence>,
    policy: PolicyModel,
    bytes: Vec<u8>,
}

struct Desk {
    world: World,
    expert: Vec<ConsumptionSequence>,
    prior: EprParams,
    epr: DeskRun,
    none: DeskRun,
}

fn desk_run(world: &World, expert: &[ConsumptionSequence], prior: EprParams, knowledge: Knowledge) -> DeskRun {
    let mut t = Trainer::new(world, expert, TrainConfig::default(), knowledge, prior).unwrap();
    t.pretrain().unwrap();
    let post_bc = t.snapshot_jsd().unwrap();
    t.run_outer().unwrap();
    let trained = t.snapshot_jsd().unwrap();
    let generated = t.generate_eval().unwrap();
    let report = evaluate_report(expert, &generated, world).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let meta = Default::default();
    t.policy.save(&dir.path().join("policy.ckpt"), &meta).unwrap();
    t.disc.save(&dir.path().join("disc.ckpt"), &meta).unwrap();
    let mut bytes = std::fs::read(dir.path().join("policy.ckpt")).unwrap();
    bytes.extend(std::fs::read(dir.path().join("disc.ckpt")).unwrap());
    write_log_csv(&t.log, &mut bytes).unwrap();
    eprgail_core::data::write_sequences(&generated, &mut bytes).unwrap();
    bytes.extend(report.to_csv().into_bytes());
    DeskRun {
        post_bc,
        trained,
        report,
        generated,
        policy: t.policy,
        bytes,
    }
}

fn desk() -> Desk {
    let wc = WorldConfig::default();
    let world = generate_world(&wc).unwrap();
    let expert = generate_expert_sequences(&world, &wc);
    let prior = fit_epr(&expert, &world).unwrap().params;
    let epr = desk_run(&world, &expert, prior, Knowledge::Epr);
    let none = desk_run(&world, &expert, prior, Knowledge::None);
    Desk {
        world,
        expert,
        prior,
        epr,
        none,
    }
}

fn criterion_9() -> (Verdict, Desk) {
    let d = desk();
    let halved = |r: &DeskRun| r.trained.0 <= 0.5 * r.post_bc.0 && r.trained.1 <= 0.5 * r.post_bc.1;
    let bounded = |r: &DeskRun| MetricKind::ALL.iter().all(|&k| (0.0..=1.0).contains(&r.report.get(k)));
    let a = halved(&d.epr);
    let b = d.epr.trained.0 <= d.none.trained.0;
    let line = |r: &DeskRun| {
        format!(
            "post-BC {:.4}/{:.4} -> trained {:.4}/{:.4}",
            r.post_bc.0, r.post_bc.1, r.trained.0, r.trained.1
        )
    };
    let detail = format!(
        "consumption/exploration JSD, epr {}, none {}; (a) {} (b) {}; none run halves both: {}",
        line(&d.epr),
        line(&d.none),
        if a { "met" } else { "not met" },
        if b { "met" } else { "not met" },
        halved(&d.none),
    );
    let pass = a && b && bounded(&d.epr) && bounded(&d.none);
    (verdict(pass, detail), d)
}

fn seq(user: u64, stores: &[StoreId]) -> ConsumptionSequence {
    ConsumptionSequence::from_stores(user, stores)
}

fn criterion_10(desk: &Desk) -> Verdict {
    let cat = catalog(4);
    let truth = [seq(1, &[1, 0, 2, 2]), seq(2, &[2, 2, 0, 3]), seq(3, &[0, 1, 1, 4])];
    let pred = [seq(1, &[0, 0, 2, 0]), seq(2, &[0, 0, 1, 2]), seq(3, &[0, 0, 4, 1])];
    let t = sales_in_window(&truth, &cat, 2, 2).unwrap();
    let p = sales_in_window(&pred, &cat, 2, 2).unwrap();
    // truth [1, 2, 1, 1], prediction [2, 2, 0, 1]: errors 100, 0, 100, 0 percent.
    let fixture_mape = mape(&p, &t).unwrap();

    let history = [
        seq(1, &[1, 2, 0, 3, 0]),
        seq(2, &[1, 2, 3, 0, 4]),
        seq(3, &[4, 0, 2, 3, 1]),
    ];
    let (train, heldout) = split_next_new_purchase(&history, 3);
    let cf = build_cf(&train, &cat, 2).unwrap();
    // Cosine scores rank [3, 4] for user 1, [4] for user 2 and [1, 3] for
    // user 3, whose held-out store is 3: one miss at k = 1, none at k = 5.
    let hit5 = accuracy_at_k(&cf, &heldout, 5).unwrap();
    let hit1 = accuracy_at_k(&cf, &heldout, 1).unwrap();
    let fixtures_ok = fixture_mape == 50.0 && hit5 == 1.0 && hit1 == 2.0 / 3.0;

    let (start, window) = (60, 30);
    let actual = sales_in_window(&desk.expert, &desk.world.catalog, start, window).unwrap();
    let policy = predict_sales(
        Forecaster::Policy(&desk.epr.policy),
        &desk.world,
        &desk.expert,
        start,
        window,
        10,
        0,
    )
    .unwrap();
    let epr = predict_sales(
        Forecaster::Epr(&desk.prior),
        &desk.world,
        &desk.expert,
        start,
        window,
        10,
        0,
    )
    .unwrap();
    let mape_policy = mape(&policy.counts, &actual).unwrap();
    let mape_epr = mape(&epr.counts, &actual).unwrap();
    let rows = mix_experiment(
        &desk.expert,
        &desk.epr.generated,
        &desk.world.catalog,
        &[0, 25, 50, 100],
        start,
        5,
        0,
    )
    .unwrap();
    let acc_ok = rows.iter().all(|r| {
        [r.accuracy_real_only, r.accuracy_mixed]
            .iter()
            .all(|a| (0.0..=1.0).contains(a))
    });
    let pipelines_ok = mape_policy.is_finite() && mape_epr.is_finite() && acc_ok && rows.len() == 4;
    let acc: Vec<String> = rows
        .iter()
        .map(|r| format!("{}:{:.3}/{:.3}", r.real_users, r.accuracy_real_only, r.accuracy_mixed))
        .collect();
    verdict(
        fixtures_ok && pipelines_ok,
        format!(
            "fixture MAPE {fixture_mape}, hit-rate@5 {hit5}, @1 {hit1:.4}; acceptance world MAPE policy {mape_policy:.1}, \
             EPR {mape_epr:.1}; accuracy@5 real/mixed by extra real users {}",
            acc.join(" ")
        ),
    )
}

fn criterion_11(first_fit: &[u8], first: &Desk) -> Verdict {
    let (_, fit) = criterion_2();
    let again = desk();
    let same = [
        ("EPR fit", fit == first_fit),
        ("epr training", again.epr.bytes == first.epr.bytes),
        ("none training", again.none.bytes == first.none.bytes),
    ];
    let differing: Vec<&str> = same.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let detail = if differing.is_empty() {
        format!(
            "EPR fit outputs ({} bytes) and both training runs ({} and {} bytes) repeat byte for byte",
            fit.len(),
            first.epr.bytes.len(),
            first.none.bytes.len()
        )
    } else {
        format!("outputs differ: {}", differing.join(", "))
    };
    verdict(differing.is_empty(), detail)
}

#[test]
fn acceptance_criteria() {
    let mut s = Suite::default();
    s.run(1, "power-law fit oracle", secs(1), || (criterion_1(), ()));
    let fit = s.run(2, "EPR self-consistency", secs(120), criterion_2);
    s.run(3, "likelihood normalization", secs(10), || (criterion_3(), ()));
    s.run(4, "gradient suite", secs(60), || (criterion_4(), ()));
    s.run(5, "reward algebra", secs(60), || (criterion_5(), ()));
    s.run(6, "mask safety", secs(300), || (criterion_6(), ()));
    s.run(7, "JSD suite", secs(10), || (criterion_7(), ()));
    s.run(8, "discriminator learnability", secs(30), || (criterion_8(), ()));
    let desk = s.run(9, "desk-scale training", secs(30 * 60), criterion_9);
    s.run(10, "downstream plumbing", secs(300), || (criterion_10(&desk), ()));
    s.run(11, "determinism", secs(45 * 60), || (criterion_11(&fit, &desk), ()));

    let unexpected: Vec<usize> = s
        .outcomes
        .iter()
        .filter(|(id, pass)| !pass && !KNOWN_FAILURES.iter().any(|k| k.0 == *id))
        .map(|o| o.0)
        .collect();
    let passed = s.outcomes.iter().filter(|o| o.1).count();
    say(&format!(
        "acceptance: {passed} of {} criteria pass; known failures {:?}",
        s.outcomes.len(),
        KNOWN_FAILURES.iter().map(|k| k.0).collect::<Vec<_>>()
    ));
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
