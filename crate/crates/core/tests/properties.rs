use mvtd_core::critic::project;
use mvtd_core::features::{build_feature_set, random_orthonormal, weighted_projection};
use mvtd_core::gradients::{
    exact_grad_j, exact_grad_u, exact_j, gradient_bundle, grad_lagrangian, lipschitz_constants, score,
    softmax_constants, ActionFeatures, MixingForm, SmoothnessInputs, SoftmaxPolicy,
};
use mvtd_core::mdp::{
    exact_square_value, exact_value, garnet_mdp, induced_chain, GarnetParams, Mdp, TabularPolicy, TransitionSampler,
};
use mvtd_core::system::{assemble_system, fixed_point, regularized_fixed_point, spectral_values};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn garnet(seed: u64, n: usize, na: usize, gamma: f64) -> Mdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    garnet_mdp(
        GarnetParams {
            num_states: n,
            num_actions: na,
            branching: n.min(3),
            gamma,
            r_max: 1.0,
        },
        &mut rng,
    )
    .unwrap()
}

fn random_policy(seed: u64, n: usize, na: usize) -> TabularPolicy {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..na).map(|_| rng.random::<f64>() + 0.05).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect()
        })
        .collect();
    TabularPolicy::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chain_invariants_hold_on_garnets(seed in 0u64..10_000, n in 2usize..9, na in 1usize..4, gamma in 0.05f64..0.95) {
        let mdp = garnet(seed, n, na, gamma);
        let pol = random_policy(seed, n, na);
        let Ok(chain) = induced_chain(&mdp, &pol) else { return Ok(()); };
        let residual = (chain.p_pi.transpose() * &chain.chi - &chain.chi).amax();
        prop_assert!(residual <= 1e-10);
        prop_assert!((chain.chi.sum() - 1.0).abs() <= 1e-12);
        let v = exact_value(&chain, gamma).unwrap();
        let u = exact_square_value(&chain, gamma, &v).unwrap();
        let t1 = &chain.r_vec + &chain.p_pi * &v * gamma;
        prop_assert!((&t1 - &v).amax() <= 1e-10);
        let t2 = &chain.r_tilde + &chain.reward_kernel * &v * (2.0 * gamma) + &chain.p_pi * &u * (gamma * gamma);
        prop_assert!((&t2 - &u).amax() <= 1e-10);
        for s in 0..n {
            prop_assert!(u[s] - v[s] * v[s] >= -1e-10);
        }
    }

    #[test]
    fn same_seed_same_garnet_and_samples(seed in 0u64..10_000) {
        let a = garnet(seed, 5, 2, 0.9);
        prop_assert_eq!(&a, &garnet(seed, 5, 2, 0.9));
        let pol = TabularPolicy::uniform(5, 2);
        let chain = induced_chain(&a, &pol).unwrap();
        let sampler = TransitionSampler::new(&a, &pol, &chain).unwrap();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(), draw());
    }

    #[test]
    fn system_structure(seed in 0u64..10_000, n in 3usize..8, q in 1usize..3, gamma in 0.1f64..0.9) {
        let mdp = garnet(seed, n, 2, gamma);
        let pol = TabularPolicy::uniform(n, 2);
        let chain = induced_chain(&mdp, &pol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let f = build_feature_set(
            random_orthonormal(n, q, &mut rng).unwrap(),
            random_orthonormal(n, q, &mut rng).unwrap(),
            &chain,
        ).unwrap();
        let (m, xi) = assemble_system(&chain, &f, gamma).unwrap();
        prop_assert!(m.view((0, q), (q, q)).iter().all(|&x| x == 0.0));
        let spec = spectral_values(&m);
        prop_assert!(spec.mu <= spec.lambda_max);
        if let Ok(w) = fixed_point(&m, &xi) {
            prop_assert!((&m * &w - &xi).amax() <= 1e-10 * (1.0 + w.amax()));
        }
        if spec.mu > 0.0 {
            for zeta in [0.1, 0.01, 0.001] {
                let w = fixed_point(&m, &xi).unwrap();
                let wr = regularized_fixed_point(&m, &xi, zeta).unwrap();
                // (M + zeta I) w_reg = xi
                let resid = &m * &wr + &wr * zeta - &xi;
                prop_assert!(resid.amax() <= 1e-10 * (1.0 + wr.amax()));
                prop_assert!((&wr - &w).norm() <= zeta * xi.norm() / (spec.mu * (zeta + spec.mu)) * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn weighted_projection_is_optimal_and_nonexpansive(seed in 0u64..10_000, y in prop::collection::vec(-3.0f64..3.0, 5)) {
        let mdp = garnet(seed, 5, 2, 0.5);
        let chain = induced_chain(&mdp, &TabularPolicy::uniform(5, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = random_orthonormal(5, 2, &mut rng).unwrap();
        let pi = weighted_projection(&phi, &chain.chi).unwrap();
        let y = DVector::from_vec(y);
        let wnorm = |x: &DVector<f64>| x.component_mul(x).dot(&chain.chi).sqrt();
        let proj = &pi * &y;
        prop_assert!(wnorm(&proj) <= wnorm(&y) + 1e-12);
        // brute force: no grid point in the span beats the projection
        let coeffs = (&phi.transpose() * &phi).try_inverse().unwrap() * phi.transpose() * &proj;
        let best = wnorm(&(&y - &proj));
        for i in -10..=10 {
            for j in -10..=10 {
                let c = &coeffs + DVector::from_vec(vec![i as f64 * 0.05, j as f64 * 0.05]);
                prop_assert!(wnorm(&(&y - &phi * c)) >= best - 1e-12);
            }
        }
        prop_assert!((&pi * &pi - &pi).amax() <= 1e-10);
    }

    #[test]
    fn projection_lands_in_ball(w in prop::collection::vec(-10.0f64..10.0, 1..8), h in 0.1f64..5.0) {
        let w = DVector::from_vec(w);
        let p = project(&w, h);
        prop_assert!(p.norm() <= h * (1.0 + 1e-12));
        prop_assert_eq!(project(&p, h), p.clone());
        if w.norm() <= h {
            prop_assert_eq!(p, w);
        }
    }

    #[test]
    fn gradient_identities_and_bounds(seed in 0u64..10_000, t0 in -3.0f64..3.0, t1 in -3.0f64..3.0, lambda in 0.0f64..2.0) {
        let mdp = garnet(seed, 2, 2, 0.6);
        let feats = ActionFeatures::from_nested(&[
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        ]).unwrap();
        let pol = SoftmaxPolicy::new(DVector::from_vec(vec![t0, t1]), feats).unwrap();
        for s in 0..2 {
            let probs = pol.action_probs(s);
            let mean = score(&pol, s, 0) * probs[0] + score(&pol, s, 1) * probs[1];
            prop_assert!(mean.amax() <= 1e-15);
        }
        let b = gradient_bundle(&mdp, &pol, 0, lambda, 0.3).unwrap();
        let l = grad_lagrangian(b.j, &b.grad_j, &b.grad_u, lambda);
        prop_assert!((&l - &b.grad_l).amax() <= 1e-12);
        prop_assert!((exact_grad_j(&mdp, &pol, 0).unwrap() - &b.grad_j).amax() <= 1e-12);
        prop_assert!((exact_grad_u(&mdp, &pol, 0).unwrap() - &b.grad_u).amax() <= 1e-12);
        prop_assert!((exact_j(&mdp, &pol, 0).unwrap() - b.j).abs() <= 1e-12);
        let (c_psi, l_psi, c_pi) = softmax_constants(&pol.features);
        let k = lipschitz_constants(&SmoothnessInputs {
            r_max: mdp.r_max(), gamma: 0.6, c_psi, l_psi, c_pi, kappa: 1.0, rho: 0.5, lambda, form: MixingForm::Half,
        }).unwrap();
        prop_assert!(b.grad_j.norm() <= k.grad_j_bound);
        prop_assert!(b.grad_u.norm() <= k.grad_u_bound);
        prop_assert!(b.grad_l.norm() <= k.k1);
    }
}

#[test]
fn central_differences_converge_at_second_order() {
    let mdp = garnet(99, 2, 2, 0.7);
    let feats = ActionFeatures::from_nested(&[
        vec![vec![1.0, 0.2], vec![-0.3, 1.0]],
        vec![vec![0.4, -1.0], vec![1.0, 0.5]],
    ])
    .unwrap();
    let pol = SoftmaxPolicy::new(DVector::from_vec(vec![0.8, -0.4]), feats).unwrap();
    let exact = exact_grad_j(&mdp, &pol, 0).unwrap();
    let err = |h: f64| {
        let fd = mvtd_core::gradients::finite_difference(|th| exact_j(&mdp, &pol.with_theta(th.clone()), 0), &pol.theta, h)
            .unwrap();
        (fd - &exact).norm()
    };
    let ratio = err(0.02) / err(0.01);
    assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    let quad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
    let theta = DVector::from_vec(vec![0.5, -1.5]);
    let fd = mvtd_core::gradients::finite_difference(|th| Ok(th.dot(&(&quad * th))), &theta, 1e-3).unwrap();
    assert!((fd - (&quad + quad.transpose()) * &theta).amax() < 1e-9);
    let flat = mvtd_core::gradients::finite_difference(|_| Ok(2.5), &theta, 1e-3).unwrap();
    assert_eq!(flat, DVector::zeros(2));
}
