use mvtd_core::actor::{enumerated_spsa, run_mv_spsa_ac, sample_perturbation, ActorConfig, CriticStep};
use mvtd_core::features::identity_features;
use mvtd_core::gradients::{exact_grad_j, exact_j, ActionFeatures, SoftmaxPolicy};
use mvtd_core::mdp::{induced_chain, validate_mdp, Mdp, MdpDocument, TabularPolicy};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two states, action 1 pays 1 and action 0 pays 0 everywhere.
fn dominated_bandit() -> Mdp {
    validate_mdp(MdpDocument {
        num_states: 2,
        num_actions: 2,
        gamma: 0.5,
        r_max: Some(1.0),
        transitions: vec![
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        ],
        rewards: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
    })
    .unwrap()
}

fn shared_features() -> ActionFeatures {
    ActionFeatures::from_nested(&[
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    ])
    .unwrap()
}

#[test]
fn perturbations_are_fair_and_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 100_000;
    let mut sum = DVector::zeros(3);
    let mut cross = 0.0;
    for _ in 0..n {
        let d = sample_perturbation(3, &mut rng);
        cross += d[0] * d[1];
        sum += d;
    }
    let bound = 3.0 / (n as f64).sqrt();
    for i in 0..3 {
        assert!((sum[i] / n as f64).abs() < bound);
    }
    assert!((cross / n as f64).abs() < bound);
}

#[test]
fn risk_neutral_actor_moves_toward_dominant_action() {
    let mdp = dominated_bandit();
    let template = SoftmaxPolicy::new(DVector::zeros(2), shared_features()).unwrap();
    let chain = induced_chain(&mdp, &TabularPolicy::uniform(2, 2)).unwrap();
    let features = identity_features(&chain).unwrap();
    let before = template.action_probs(0)[1];
    let mut improved = 0;
    for seed in 0..20 {
        let cfg = ActorConfig::with_schedule(64, 0.0, 0, seed, CriticStep::Global { mu_floor: 0.05 });
        let res = run_mv_spsa_ac(&mdp, &template, &features, &cfg).unwrap();
        if template.with_theta(res.theta_r).action_probs(0)[1] > before {
            improved += 1;
        }
    }
    // one-sided sign test at 5%: P(Bin(20, 1/2) >= 15) < 0.05
    assert!(improved >= 15, "improved in {improved} of 20 runs");
}

#[test]
fn exhaustive_spsa_equals_difference_quotient_average() {
    let mdp = dominated_bandit();
    let pol = SoftmaxPolicy::new(DVector::from_vec(vec![0.2, -0.1]), shared_features()).unwrap();
    let j = |th: &DVector<f64>| exact_j(&mdp, &pol.with_theta(th.clone()), 0);
    let p = 0.1;
    let est = enumerated_spsa(j, &pol.theta, p).unwrap();
    let base = j(&pol.theta).unwrap();
    let mut manual = DVector::zeros(2);
    for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let delta = DVector::from_vec(vec![a, b]);
        let q = (j(&(&pol.theta + &delta * p)).unwrap() - base) / p;
        manual += delta.map(|d| q / d) / 4.0;
    }
    assert!((est - manual).amax() < 1e-14);
}

#[test]
fn spsa_bias_vanishes_as_perturbation_shrinks() {
    let mdp = validate_mdp(MdpDocument {
        num_states: 2,
        num_actions: 2,
        gamma: 0.7,
        r_max: Some(1.0),
        transitions: vec![
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.3, 0.7], vec![0.6, 0.4]],
        ],
        rewards: vec![vec![0.5, -0.2], vec![1.0, 0.1]],
    })
    .unwrap();
    let feats = ActionFeatures::from_nested(&[
        vec![vec![1.0, 0.3], vec![-0.2, 1.0]],
        vec![vec![0.6, -0.8], vec![0.1, 0.9]],
    ])
    .unwrap();
    let pol = SoftmaxPolicy::new(DVector::from_vec(vec![0.4, 0.2]), feats).unwrap();
    let grad = exact_grad_j(&mdp, &pol, 0).unwrap();
    let err = |p: f64| {
        (enumerated_spsa(|th| exact_j(&mdp, &pol.with_theta(th.clone()), 0), &pol.theta, p).unwrap() - &grad).norm()
    };
    let errs: Vec<f64> = [0.2, 0.1, 0.05, 0.025].iter().map(|&p| err(p)).collect();
    for w in errs.windows(2) {
        // shrinks at least linearly
        assert!(w[0] / w[1] >= 1.6, "{errs:?}");
    }
}

#[test]
fn fixed_seed_reproduces_theta_trace() {
    let mdp = dominated_bandit();
    let template = SoftmaxPolicy::new(DVector::zeros(2), shared_features()).unwrap();
    let chain = induced_chain(&mdp, &TabularPolicy::uniform(2, 2)).unwrap();
    let features = identity_features(&chain).unwrap();
    let cfg = ActorConfig::with_schedule(16, 0.5, 0, 42, CriticStep::PerPolicy);
    let a = run_mv_spsa_ac(&mdp, &template, &features, &cfg).unwrap();
    let b = run_mv_spsa_ac(&mdp, &template, &features, &cfg).unwrap();
    assert_eq!(a.theta_trace, b.theta_trace);
    assert_eq!(a.r_index, b.r_index);
    assert!(a.theta_trace.contains(&a.theta_r));
}
