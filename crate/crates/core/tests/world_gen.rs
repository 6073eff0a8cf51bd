use eprgail_core::data::UserHistory;
use eprgail_core::epr::{fit_epr, sample_action, EprParams, EprState};
use eprgail_core::seeding::{rng_for, stream};
use eprgail_core::world::{generate_expert_sequences, generate_world, WorldConfig};

fn cfg(users: usize, stores: usize, horizon: usize, params: EprParams, noise: f64) -> WorldConfig {
    WorldConfig {
        n_users: users,
        n_stores: stores,
        horizon_slots: horizon,
        true_params: params,
        noise_level: noise,
        ..WorldConfig::default()
    }
}

/// Lengths of the gaps between consecutive purchases.
fn intervals(seq: &eprgail_core::data::ConsumptionSequence) -> Vec<usize> {
    let slots: Vec<usize> = seq
        .stores()
        .enumerate()
        .filter(|(_, s)| *s != 0)
        .map(|(i, _)| i)
        .collect();
    slots.windows(2).map(|w| w[1] - w[0]).collect()
}

#[test]
fn steep_purchase_curve_gives_short_intervals() {
    let p = EprParams {
        beta: 5.0,
        alpha: 0.9,
        ..EprParams::default()
    };
    let c = cfg(200, 10, 60, p, 0.0);
    let w = generate_world(&c).unwrap();
    let mut hist = vec![0usize; 8];
    for s in generate_expert_sequences(&w, &c) {
        for l in intervals(&s) {
            if l < hist.len() {
                hist[l] += 1;
            }
        }
    }
    assert!(hist[1] > 0);
    assert!(hist[1..].windows(2).all(|w| w[0] >= w[1]), "{hist:?}");
}

#[test]
fn fast_decaying_exploration_stops_after_one_more_store() {
    // At n = 1 the exploration probability is rho; from n = 2 on it is
    // clamped to 1e-6.
    let p = EprParams {
        gamma: 50.0,
        ..EprParams::default()
    };
    let c = cfg(100, 20, 90, p, 0.0);
    let w = generate_world(&c).unwrap();
    let seqs = generate_expert_sequences(&w, &c);
    assert!(seqs.iter().all(|s| s.distinct_stores() <= 2));
    assert!(seqs.iter().any(|s| s.distinct_stores() == 2));
}

#[test]
fn noiseless_expert_draws_are_epr_samples() {
    let c = cfg(10, 6, 30, EprParams::default(), 0.0);
    let w = generate_world(&c).unwrap();
    let seqs = generate_expert_sequences(&w, &c);
    for (user, seq) in w.users.iter().zip(&seqs) {
        let mut rng = rng_for(c.seed, stream::EXPERT, user.id);
        let mut h = UserHistory::new(user, &w.catalog);
        for id in seq.stores() {
            let a = sample_action(&EprState::from(&h), &c.true_params, 0.0, &mut rng);
            assert_eq!(a.store.map_or(0, |q| w.catalog.store(q).id), id);
            h.observe(a.store, &w.catalog);
        }
    }
}

#[test]
fn purchase_exponent_is_recovered_at_scale() {
    let p = EprParams {
        beta: 1.2,
        ..EprParams::default()
    };
    let c = cfg(2000, 50, 500, p, 0.2);
    let w = generate_world(&c).unwrap();
    let fit = fit_epr(&generate_expert_sequences(&w, &c), &w).unwrap();
    assert!((fit.params.beta - 1.2).abs() <= 0.12, "{fit:?}");
}
