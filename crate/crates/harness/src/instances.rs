//! Fixed benchmark instances used by the CLI and the verification suites.

use mvtd_core::gradients::{ActionFeatures, SoftmaxPolicy};
use mvtd_core::mdp::{chain_mdp, validate_mdp, Mdp, MdpDocument};
use mvtd_core::Result;
use nalgebra::DVector;

/// Names accepted by `mdp.kind = "named"`.
pub const NAMED: [&str; 5] = ["one-state", "two-cycle", "chain5", "two-armed", "actor-reference"];

pub fn named(name: &str) -> Option<Result<Mdp>> {
    Some(match name {
        "one-state" => one_state(),
        "two-cycle" => two_cycle(),
        "chain5" => chain5(),
        "two-armed" => two_armed(),
        "actor-reference" => actor_reference(),
        _ => return None,
    })
}

/// One state, one action, reward 1, gamma 1/2: V = 2, U = 4.
pub fn one_state() -> Result<Mdp> {
    validate_mdp(MdpDocument {
        num_states: 1,
        num_actions: 1,
        gamma: 0.5,
        r_max: Some(1.0),
        transitions: vec![vec![vec![1.0]]],
        rewards: vec![vec![1.0]],
    })
}

/// Deterministic alternation 0 -> 1 -> 0 paying 1 in state 0.
pub fn two_cycle() -> Result<Mdp> {
    validate_mdp(MdpDocument {
        num_states: 2,
        num_actions: 1,
        gamma: 0.5,
        r_max: Some(1.0),
        transitions: vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
        rewards: vec![vec![1.0], vec![0.0]],
    })
}

/// Five-state slip chain with discount 1/2.
pub fn chain5() -> Result<Mdp> {
    chain_mdp(5, 0.1, 0.5, 0.2)
}

/// Single state with a paying and a non-paying action.
pub fn two_armed() -> Result<Mdp> {
    validate_mdp(MdpDocument {
        num_states: 1,
        num_actions: 2,
        gamma: 0.5,
        r_max: Some(1.0),
        transitions: vec![vec![vec![1.0], vec![1.0]]],
        rewards: vec![vec![1.0, 0.0]],
    })
}

/// Safe/risky two-state problem. In state 0 the safe action pays 0.3 and
/// usually stays; the risky action pays 1 but falls into state 1 half the
/// time, where every action pays -1 until the walk returns.
pub fn actor_reference() -> Result<Mdp> {
    validate_mdp(MdpDocument {
        num_states: 2,
        num_actions: 2,
        gamma: 0.5,
        r_max: Some(1.0),
        transitions: vec![
            vec![vec![0.95, 0.05], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        ],
        rewards: vec![vec![0.3, 1.0], vec![-1.0, -1.0]],
    })
}

/// Softmax template for [`actor_reference`]: action 0 is the zero feature,
/// action 1 in state s is `scale` times the s-th unit vector.
pub fn actor_reference_policy(scale: f64) -> Result<SoftmaxPolicy> {
    let features = ActionFeatures::from_nested(&[
        vec![vec![0.0, 0.0], vec![scale, 0.0]],
        vec![vec![0.0, 0.0], vec![0.0, scale]],
    ])?;
    SoftmaxPolicy::new(DVector::zeros(2), features)
}

/// Uniform minorization constants over all policies: P(.|s,a) >= (1 - rho)
/// nu for every (s, a), with nu the normalized column minimum, and
/// kappa = 1. Returns `None` when the columns share no mass.
pub fn doeblin_constants(mdp: &Mdp) -> Option<(f64, f64)> {
    let n = mdp.num_states();
    let mass: f64 = (0..n)
        .map(|next| {
            (0..n)
                .flat_map(|s| (0..mdp.num_actions()).map(move |a| (s, a)))
                .map(|(s, a)| mdp.transition(s, a, next))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    (mass > 0.0 && mass < 1.0).then_some((1.0, 1.0 - mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_named_instance_builds() {
        for name in NAMED {
            assert!(named(name).unwrap().is_ok(), "{name}");
        }
        assert!(named("nope").is_none());
    }

    #[test]
    fn doeblin_of_reference() {
        let (kappa, rho) = doeblin_constants(&actor_reference().unwrap()).unwrap();
        assert_eq!(kappa, 1.0);
        // column minima 0.5 and 0.05
        assert!((rho - 0.45).abs() < 1e-12);
        assert!(doeblin_constants(&two_cycle().unwrap()).is_none());
    }
}
