use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crfn::autodiff::{Graph, Init, ParamStore};
use crfn::env::{GridMap, SoundLibrary, TrainingTask, VisualConfig};
use crfn::fusion::{crfn_fuse, CrfnParams, FusionVariant};
use crfn::metrics::{sna, spl, sr, EpisodeRecord};
use crfn::policy::{evaluate_actions, AgentState, Policy, PolicyConfig};
use crfn::ppo::{compute_gae, ppo_objective, LossTargets, PpoConfig, Trainer};

fn record() -> impl Strategy<Value = EpisodeRecord> {
    (any::<bool>(), 0u32..30, 0u32..30, 0u32..40).prop_map(|(success, l, extra, idle)| EpisodeRecord {
        success,
        geodesic_len: l as f64,
        path_len: (l + extra) as f64,
        action_count: (l + extra + idle).max(1),
        scenario_id: String::new(),
    })
}

fn small_policy(variant: FusionVariant, seed: u64) -> Policy {
    Policy::new(PolicyConfig {
        feature_dim: 8,
        joint_dim: 8,
        hidden_dim: 8,
        variant,
        init_seed: seed,
        ..Default::default()
    })
    .unwrap()
}

proptest! {
    #[test]
    fn metric_ordering(recs in proptest::collection::vec(record(), 1..50)) {
        let (s, p, a) = (sr(&recs).unwrap(), spl(&recs).unwrap(), sna(&recs).unwrap());
        prop_assert!(0.0 <= a && a <= p + 1e-15 && p <= s + 1e-15 && s <= 1.0);
    }

    #[test]
    fn spl_is_scale_invariant(recs in proptest::collection::vec(record(), 1..30), k in 1u32..7) {
        let scaled: Vec<EpisodeRecord> = recs
            .iter()
            .map(|r| EpisodeRecord { geodesic_len: r.geodesic_len * k as f64, path_len: r.path_len * k as f64, ..r.clone() })
            .collect();
        prop_assert!((spl(&recs).unwrap() - spl(&scaled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gae_matches_discounted_sum(
        rows in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, proptest::bool::weighted(0.2)), 1..=16),
        boot in -3.0f64..3.0,
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let r: Vec<f64> = rows.iter().map(|x| x.0).collect();
        let v: Vec<f64> = rows.iter().map(|x| x.1).collect();
        let d: Vec<bool> = rows.iter().map(|x| x.2).collect();
        let (adv, _) = compute_gae(&r, &v, &d, boot, gamma, lambda);
        let n = r.len();
        for t in 0..n {
            let mut acc = 0.0;
            let mut coef = 1.0;
            for l in t..n {
                let next = if l + 1 < n { v[l + 1] } else { boot };
                let live = if d[l] { 0.0 } else { 1.0 };
                acc += coef * (r[l] + gamma * live * next - v[l]);
                if d[l] {
                    break;
                }
                coef *= gamma * lambda;
            }
            prop_assert!((adv[t] - acc).abs() < 1e-10);
        }
    }

    #[test]
    fn clipped_surrogate_respects_bound(
        rows in proptest::collection::vec((-2.0f64..0.0, -2.0f64..0.0, -3.0f64..3.0), 1..10),
        eps in 0.05f64..0.4,
    ) {
        let cfg = PpoConfig { clip_eps: eps, value_coef: 0.0, entropy_coef: 0.0, ..Default::default() };
        let targets = LossTargets {
            old_log_probs: rows.iter().map(|x| x.1).collect(),
            advantages: rows.iter().map(|x| x.2).collect(),
            returns: vec![0.0; rows.len()],
        };
        let mut g = Graph::new();
        let lp = g.vector(rows.iter().map(|x| x.0).collect());
        let zeros = g.vector(vec![0.0; rows.len()]);
        let parts = ppo_objective(&mut g, lp, zeros, zeros, &targets, &cfg).unwrap();
        let surrogate = -g.scalar(parts.policy);
        let bound = rows
            .iter()
            .map(|(_, _, a)| (1.0 + eps.copysign(*a)) * a)
            .sum::<f64>()
            / rows.len() as f64;
        prop_assert!(surrogate <= bound + 1e-12);
    }

    #[test]
    fn beta_zero_decouples_streams(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = CrfnParams::new(&mut store, 5, 4, 0.0, &mut rng).unwrap();
        for param in store.iter_mut() {
            if !param.name().contains("beta") {
                for x in param.data_mut() {
                    *x = rng.random_range(-1.0..1.0);
                }
            }
        }
        let v: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let run = |a: Vec<f64>| {
            let mut g = Graph::new();
            let (vv, aa) = (g.vector(v.clone()), g.vector(a));
            let out = crfn_fuse(&mut g, &store, vv, aa, &p).unwrap();
            g.data(out.v_hat).to_vec()
        };
        let a1: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a2: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        prop_assert_eq!(run(a1), run(a2));
    }

    #[test]
    fn param_store_roundtrips(seed in any::<u64>(), shapes in proptest::collection::vec((1usize..5, 1usize..5, any::<bool>()), 1..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (i, (r, c, mat)) in shapes.iter().enumerate() {
            let shape: Vec<usize> = if *mat { vec![*r, *c] } else { vec![*r] };
            store.make_param(&format!("p{i}"), &shape, Init::Uniform { lo: -1e3, hi: 1e3 }, &mut rng).unwrap();
        }
        let bytes = store.to_bytes();
        let back = ParamStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        let json = serde_json::to_string(&store.to_json()).unwrap();
        let back = ParamStore::from_json(serde_json::from_str(&json).unwrap()).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn checkpoint_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [FusionVariant::Crfn, FusionVariant::NoFc, FusionVariant::Concat, FusionVariant::Gated] {
        let policy = small_policy(variant, 5);
        let path = dir.path().join(format!("{}.json", variant.as_str()));
        policy.save(&path).unwrap();
        let back = Policy::load(&path).unwrap();
        assert_eq!(back.store().to_bytes(), policy.store().to_bytes());
        let map = Arc::new(GridMap::open("o", 5, 5));
        let lib = SoundLibrary::default_split(0).unwrap();
        let task = TrainingTask {
            maps: vec![map],
            signatures: vec![lib.heard().unwrap().clone()],
            noise_std: 0.01,
            max_steps: 50,
            min_distance: 1,
        };
        let spec = task.sample(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut env = crfn::env::GridEnv::new(VisualConfig::default());
        let obs = env.reset(spec).unwrap();
        let state = AgentState::new(8);
        assert_eq!(policy.step(&obs, &state).unwrap(), back.step(&obs, &state).unwrap());
    }
}

#[test]
fn missing_checkpoint_is_an_error() {
    assert!(Policy::load(std::path::Path::new("/nonexistent/policy.json")).is_err());
}

/// Re-evaluating a fresh rollout with the stored hidden states reproduces
/// the behavior log-probabilities and values, so the first PPO epoch starts
/// at ratio 1.
#[test]
fn teacher_forced_evaluation_matches_rollout() {
    let policy = small_policy(FusionVariant::Crfn, 1);
    let lib = SoundLibrary::default_split(0).unwrap();
    let task = TrainingTask {
        maps: vec![Arc::new(GridMap::open("o", 6, 6))],
        signatures: vec![lib.heard().unwrap().clone()],
        noise_std: 0.01,
        max_steps: 30,
        min_distance: 1,
    };
    let cfg = PpoConfig {
        rollout_len: 64,
        ..Default::default()
    };
    let mut tr = Trainer::new(policy, task, cfg, VisualConfig::default()).unwrap();
    let (buf, _) = tr.collect_rollout().unwrap();
    let mut g = Graph::new();
    let ev = evaluate_actions(&mut g, tr.policy(), &buf.steps).unwrap();
    for (a, b) in g.data(ev.log_probs).iter().zip(&buf.log_probs) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    for (a, b) in g.data(ev.values).iter().zip(&buf.values) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn short_training_is_deterministic_and_moves_beta() {
    let run = || {
        let lib = SoundLibrary::default_split(0).unwrap();
        let task = TrainingTask {
            maps: vec![Arc::new(GridMap::open("o", 5, 5))],
            signatures: vec![lib.heard().unwrap().clone()],
            noise_std: 0.01,
            max_steps: 30,
            min_distance: 1,
        };
        let cfg = PpoConfig {
            rollout_len: 32,
            num_updates: 3,
            num_minibatches: 2,
            ..Default::default()
        };
        let mut tr = Trainer::new(small_policy(FusionVariant::Crfn, 2), task, cfg, VisualConfig::default()).unwrap();
        tr.train().unwrap();
        (tr.log().clone(), tr.policy().store().to_bytes(), tr.policy().betas().unwrap())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.0.records.len(), 3);
    assert_eq!((a.0.records[0].beta_v, a.0.records[0].beta_a), (Some(0.2), Some(0.2)));
    assert_ne!(a.2, (0.2, 0.2));
}
