//! Finite MDPs, the chain induced by a fixed policy, exact policy-evaluation
//! solvers and the i.i.d. transition sampler used by the TD critics.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance accepted when validating user-supplied models.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
/// Stationary mass below which a state counts as unreachable.
pub const IRREDUCIBILITY_FLOOR: f64 = 1e-12;

/// Serialized MDP document: `transitions[s][a][s']`, `rewards[s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
}

/// A validated finite MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    // (s * |A| + a) * |S| + s'
    transitions: Vec<f64>,
    // s * |A| + a
    rewards: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Configured reward bound R_max (not recomputed from the table).
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Next-state distribution P(.|s, a).
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let start = (s * self.num_actions + a) * n;
        &self.transitions[start..start + n]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition_row(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// Same model with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Mdp> {
        check_gamma(gamma)?;
        Ok(Mdp {
            gamma,
            ..self.clone()
        })
    }

    pub fn to_document(&self) -> MdpDocument {
        let transitions = (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| self.transition_row(s, a).to_vec())
                    .collect()
            })
            .collect();
        let rewards = (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.reward(s, a)).collect())
            .collect();
        MdpDocument {
            num_states: self.num_states,
            num_actions: self.num_actions,
            gamma: self.gamma,
            r_max: Some(self.r_max),
            transitions,
            rewards,
        }
    }

    /// Loads a model from JSON (default) or TOML (`.toml` extension).
    pub fn load(path: impl AsRef<Path>) -> Result<Mdp> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::FileParse(format!("{}: {e}", path.display())))?;
        let doc: MdpDocument = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::FileParse(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::FileParse(e.to_string()))?
        };
        validate_mdp(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = self.to_document();
        let text = if path.extension().is_some_and(|e| e == "toml") {
            toml::to_string(&doc).map_err(|e| Error::FileParse(e.to_string()))?
        } else {
            serde_json::to_string_pretty(&doc).map_err(|e| Error::FileParse(e.to_string()))?
        };
        std::fs::write(path, text).map_err(|e| Error::FileParse(format!("{}: {e}", path.display())))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::GammaOutOfRange(gamma))
    }
}

/// Checks shapes, stochasticity and reward bounds. Fills in `r_max` as
/// `max |r(s,a)|` when the document omits it.
pub fn validate_mdp(raw: MdpDocument) -> Result<Mdp> {
    let MdpDocument {
        num_states: n,
        num_actions: na,
        gamma,
        r_max,
        transitions,
        rewards,
    } = raw;
    if n == 0 || na == 0 {
        return Err(Error::DimensionMismatch(
            "an MDP needs at least one state and one action".into(),
        ));
    }
    check_gamma(gamma)?;
    if transitions.len() != n || rewards.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected {n} state entries in transitions and rewards"
        )));
    }
    let mut flat_p = Vec::with_capacity(n * na * n);
    let mut flat_r = Vec::with_capacity(n * na);
    for (s, (p_s, r_s)) in transitions.iter().zip(&rewards).enumerate() {
        if p_s.len() != na || r_s.len() != na {
            return Err(Error::DimensionMismatch(format!(
                "state {s}: expected {na} actions"
            )));
        }
        for (a, row) in p_s.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "P(.|{s},{a}) has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some((next, &value)) = row.iter().enumerate().find(|(_, &p)| p < 0.0) {
                return Err(Error::NegativeProbability {
                    state: s,
                    action: a,
                    next,
                    value,
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || !sum.is_finite() {
                return Err(Error::NonStochasticRow {
                    state: s,
                    action: a,
                    sum,
                });
            }
            flat_p.extend_from_slice(row);
        }
        flat_r.extend_from_slice(r_s);
    }
    let observed = flat_r.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let r_max = r_max.unwrap_or(observed);
    for (i, &r) in flat_r.iter().enumerate() {
        if !r.is_finite() || r.abs() > r_max {
            return Err(Error::RewardOutOfBound {
                state: i / na,
                action: i % na,
                value: r,
                r_max,
            });
        }
    }
    Ok(Mdp {
        num_states: n,
        num_actions: na,
        transitions: flat_p,
        rewards: flat_r,
        gamma,
        r_max,
    })
}

/// Stationary randomized policy pi(a|s) stored as an |S| x |A| table.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    probs: DMatrix<f64>,
}

impl TabularPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for (s, row) in probs.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE
            {
                return Err(Error::InvalidPolicy { state: s, sum });
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let na = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != na) {
            return Err(Error::DimensionMismatch("ragged policy table".into()));
        }
        Self::new(DMatrix::from_fn(n, na, |s, a| rows[s][a]))
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }
}

/// Quantities induced by running a fixed policy on an MDP.
#[derive(Clone, Debug)]
pub struct OnPolicyChain {
    /// P^pi(s, s') = sum_a pi(a|s) P(s'|s,a).
    pub p_pi: DMatrix<f64>,
    /// Stationary distribution chi.
    pub chi: DVector<f64>,
    /// diag(chi).
    pub statdist: DMatrix<f64>,
    /// r(s) = sum_a pi(a|s) r(s,a).
    pub r_vec: DVector<f64>,
    /// r~(s) = sum_a pi(a|s) r(s,a)^2.
    pub r_tilde: DVector<f64>,
    /// diag(r_vec).
    pub d_r: DMatrix<f64>,
    /// K(s, s') = sum_a pi(a|s) r(s,a) P(s'|s,a), the reward-weighted kernel
    /// entering the square-value recursion. Equals `d_r * p_pi` whenever the
    /// reward or the next-state law does not depend on the action.
    pub reward_kernel: DMatrix<f64>,
}

impl OnPolicyChain {
    pub fn num_states(&self) -> usize {
        self.chi.len()
    }
}

pub fn induced_chain(mdp: &Mdp, policy: &TabularPolicy) -> Result<OnPolicyChain> {
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let probs = policy.probs();
    if probs.nrows() != n || probs.ncols() != na {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, MDP is {n}x{na}",
            probs.nrows(),
            probs.ncols()
        )));
    }
    let mut p_pi = DMatrix::zeros(n, n);
    let mut kernel = DMatrix::zeros(n, n);
    let mut r_vec = DVector::zeros(n);
    let mut r_tilde = DVector::zeros(n);
    for s in 0..n {
        for a in 0..na {
            let pa = probs[(s, a)];
            if pa == 0.0 {
                continue;
            }
            let r = mdp.reward(s, a);
            r_vec[s] += pa * r;
            r_tilde[s] += pa * r * r;
            for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                p_pi[(s, next)] += pa * p;
                kernel[(s, next)] += pa * r * p;
            }
        }
    }
    let chi = stationary_distribution(&p_pi)?;
    Ok(OnPolicyChain {
        statdist: DMatrix::from_diagonal(&chi),
        d_r: DMatrix::from_diagonal(&r_vec),
        p_pi,
        chi,
        r_vec,
        r_tilde,
        reward_kernel: kernel,
    })
}

/// Solves chi^T P = chi^T, sum chi = 1 by replacing the last balance equation
/// of (P^T - I) chi = 0 with the normalization row.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let chi = a
        .lu()
        .solve(&b)
        .ok_or(Error::NotIrreducible { min_mass: 0.0 })?;
    let min_mass = chi.min();
    let residual = (p.transpose() * &chi - &chi).amax();
    if !min_mass.is_finite() || min_mass < IRREDUCIBILITY_FLOOR || residual > 1e-9 {
        return Err(Error::NotIrreducible { min_mass });
    }
    Ok(chi)
}

/// V = (I - gamma P^pi)^{-1} r.
pub fn exact_value(chain: &OnPolicyChain, gamma: f64) -> Result<DVector<f64>> {
    let n = chain.num_states();
    let a = DMatrix::identity(n, n) - &chain.p_pi * gamma;
    a.lu()
        .solve(&chain.r_vec)
        .ok_or_else(|| Error::SingularSystem("I - gamma P^pi".into()))
}

/// U = (I - gamma^2 P^pi)^{-1} (r~ + 2 gamma K V), the second moment of the
/// discounted return.
pub fn exact_square_value(
    chain: &OnPolicyChain,
    gamma: f64,
    value: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = chain.num_states();
    let a = DMatrix::identity(n, n) - &chain.p_pi * (gamma * gamma);
    let rhs = &chain.r_tilde + (&chain.reward_kernel * value) * (2.0 * gamma);
    a.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("I - gamma^2 P^pi".into()))
}

/// Return variance U - V^2, clipped at zero.
pub fn return_variance(value: &DVector<f64>, square_value: &DVector<f64>) -> DVector<f64> {
    square_value.zip_map(value, |u, v| (u - v * v).max(0.0))
}

/// One observation (s_t, a_t, r_t, s_{t+1}).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Draws i.i.d. transitions with s ~ chi, a ~ pi(.|s), s' ~ P(.|s,a).
#[derive(Clone, Debug)]
pub struct TransitionSampler {
    states: WeightedIndex<f64>,
    actions: Vec<WeightedIndex<f64>>,
    next: Vec<WeightedIndex<f64>>,
    rewards: Vec<f64>,
    num_actions: usize,
}

impl TransitionSampler {
    pub fn new(mdp: &Mdp, policy: &TabularPolicy, chain: &OnPolicyChain) -> Result<Self> {
        let weighted = |w: Vec<f64>| {
            WeightedIndex::new(w).map_err(|e| Error::InvalidParameter(format!("sampler: {e}")))
        };
        let states = weighted(chain.chi.iter().copied().collect())?;
        let actions = (0..mdp.num_states())
            .map(|s| weighted(policy.probs().row(s).iter().copied().collect()))
            .collect::<Result<Vec<_>>>()?;
        let next = (0..mdp.num_states())
            .flat_map(|s| (0..mdp.num_actions()).map(move |a| (s, a)))
            .map(|(s, a)| weighted(mdp.transition_row(s, a).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            states,
            actions,
            next,
            rewards: mdp.rewards.clone(),
            num_actions: mdp.num_actions(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Transition {
        let s = self.states.sample(rng);
        let a = self.actions[s].sample(rng);
        let idx = s * self.num_actions + a;
        let s_next = self.next[idx].sample(rng);
        Transition {
            s,
            a,
            r: self.rewards[idx],
            s_next,
        }
    }
}

/// Single draw; builds the sampling tables on every call, so prefer
/// [`TransitionSampler`] inside loops.
pub fn sample_iid_transition<R: Rng + ?Sized>(
    mdp: &Mdp,
    policy: &TabularPolicy,
    chain: &OnPolicyChain,
    rng: &mut R,
) -> Result<Transition> {
    Ok(TransitionSampler::new(mdp, policy, chain)?.sample(rng))
}

/// Parameters of the random "Garnet" family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarnetParams {
    pub num_states: usize,
    pub num_actions: usize,
    pub branching: usize,
    pub gamma: f64,
    pub r_max: f64,
}

/// Left/right random walk on a line. Action 0 moves left, action 1 right;
/// with probability `slip` the move goes the other way. Moves are clamped at
/// the ends. Pushing right at the right end pays 1, pushing left at the left
/// end pays `left_reward`.
pub fn chain_mdp(length: usize, slip: f64, gamma: f64, left_reward: f64) -> Result<Mdp> {
    if length == 0 {
        return Err(Error::InvalidParameter("chain length must be positive".into()));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::InvalidParameter(format!("slip {slip} not in [0,1]")));
    }
    let mut transitions = vec![vec![vec![0.0; length]; 2]; length];
    let mut rewards = vec![vec![0.0; 2]; length];
    let clamp = |x: isize| x.clamp(0, length as isize - 1) as usize;
    for s in 0..length {
        for (a, dir) in [(0usize, -1isize), (1, 1)] {
            transitions[s][a][clamp(s as isize + dir)] += 1.0 - slip;
            transitions[s][a][clamp(s as isize - dir)] += slip;
        }
    }
    rewards[length - 1][1] = 1.0;
    rewards[0][0] = left_reward;
    validate_mdp(MdpDocument {
        num_states: length,
        num_actions: 2,
        gamma,
        r_max: Some(left_reward.abs().max(1.0)),
        transitions,
        rewards,
    })
}

/// Random Garnet MDP. Each (s, a) gets `branching` distinct successors with
/// uniform random weights normalized to one; rewards are uniform on
/// [-r_max, r_max]. Draws are repeated until the uniform policy induces an
/// irreducible chain.
pub fn garnet_mdp<R: Rng + ?Sized>(params: GarnetParams, rng: &mut R) -> Result<Mdp> {
    let GarnetParams {
        num_states: n,
        num_actions: na,
        branching,
        gamma,
        r_max,
    } = params;
    if n == 0 || na == 0 || branching == 0 || branching > n {
        return Err(Error::InvalidParameter(format!(
            "garnet needs 1 <= branching <= |S| (got |S|={n}, |A|={na}, b={branching})"
        )));
    }
    if r_max < 0.0 {
        return Err(Error::InvalidParameter("r_max must be nonnegative".into()));
    }
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let mut transitions = vec![vec![vec![0.0; n]; na]; n];
        let mut rewards = vec![vec![0.0; na]; n];
        for s in 0..n {
            for a in 0..na {
                let succ = index::sample(rng, n, branching);
                let weights: Vec<f64> = (0..branching).map(|_| rng.random::<f64>() + 1e-12).collect();
                let total: f64 = weights.iter().sum();
                for (next, w) in succ.iter().zip(weights) {
                    transitions[s][a][next] = w / total;
                }
                rewards[s][a] = if r_max > 0.0 {
                    rng.random_range(-r_max..=r_max)
                } else {
                    0.0
                };
            }
        }
        let mdp = validate_mdp(MdpDocument {
            num_states: n,
            num_actions: na,
            gamma,
            r_max: Some(r_max),
            transitions,
            rewards,
        })?;
        if induced_chain(&mdp, &TabularPolicy::uniform(n, na)).is_ok() {
            return Ok(mdp);
        }
    }
    Err(Error::NotIrreducible { min_mass: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_state() -> Mdp {
        validate_mdp(MdpDocument {
            num_states: 1,
            num_actions: 1,
            gamma: 0.5,
            r_max: None,
            transitions: vec![vec![vec![1.0]]],
            rewards: vec![vec![1.0]],
        })
        .unwrap()
    }

    fn two_cycle() -> Mdp {
        validate_mdp(MdpDocument {
            num_states: 2,
            num_actions: 1,
            gamma: 0.5,
            r_max: None,
            transitions: vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            rewards: vec![vec![1.0], vec![0.0]],
        })
        .unwrap()
    }

    #[test]
    fn degenerate_mdp_validates_and_infers_r_max() {
        let mdp = one_state();
        assert_eq!(mdp.r_max(), 1.0);
        assert_eq!(mdp.transition(0, 0, 0), 1.0);
    }

    #[test]
    fn validation_errors() {
        let mut doc = one_state().to_document();
        doc.transitions[0][0][0] = 0.99;
        assert!(matches!(validate_mdp(doc.clone()), Err(Error::NonStochasticRow { .. })));
        doc.transitions[0][0][0] = 1.0;
        doc.gamma = 1.0;
        assert_eq!(validate_mdp(doc.clone()), Err(Error::GammaOutOfRange(1.0)));
        let mut doc = two_cycle().to_document();
        doc.transitions[0][0] = vec![-0.5, 1.5];
        assert!(matches!(validate_mdp(doc), Err(Error::NegativeProbability { .. })));
        let mut doc = two_cycle().to_document();
        doc.r_max = Some(0.5);
        assert!(matches!(validate_mdp(doc), Err(Error::RewardOutOfBound { .. })));
    }

    #[test]
    fn symmetric_chain_is_uniform() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let chi = stationary_distribution(&p).unwrap();
        assert_abs_diff_eq!(chi[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(chi[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        // state 1 is transient
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        assert!(matches!(stationary_distribution(&p), Err(Error::NotIrreducible { .. })));
        // two closed classes
        let p = DMatrix::identity(2, 2);
        assert!(matches!(stationary_distribution(&p), Err(Error::NotIrreducible { .. })));
    }

    #[test]
    fn one_state_chain_quantities() {
        let mdp = one_state();
        let chain = induced_chain(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert_eq!(chain.r_vec[0], 1.0);
        assert_eq!(chain.r_tilde[0], 1.0);
        assert_eq!(chain.d_r[(0, 0)], 1.0);
        let v = exact_value(&chain, mdp.gamma()).unwrap();
        assert_abs_diff_eq!(v[0], 2.0, epsilon = 1e-14);
        let u = exact_square_value(&chain, mdp.gamma(), &v).unwrap();
        assert_abs_diff_eq!(u[0], 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(return_variance(&v, &u)[0], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn deterministic_two_cycle_values() {
        let mdp = two_cycle();
        let chain = induced_chain(&mdp, &TabularPolicy::uniform(2, 1)).unwrap();
        let v = exact_value(&chain, 0.5).unwrap();
        assert_abs_diff_eq!(v[0], 4.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[1], 2.0 / 3.0, epsilon = 1e-14);
        let u = exact_square_value(&chain, 0.5, &v).unwrap();
        assert_abs_diff_eq!(u[0], 16.0 / 9.0, epsilon = 1e-13);
        assert_abs_diff_eq!(u[1], 4.0 / 9.0, epsilon = 1e-13);
    }

    #[test]
    fn stationary_distribution_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = GarnetParams {
            num_states: 3,
            num_actions: 2,
            branching: 3,
            gamma: 0.9,
            r_max: 1.0,
        };
        let mdp = garnet_mdp(params, &mut rng).unwrap();
        let chain = induced_chain(&mdp, &TabularPolicy::uniform(3, 2)).unwrap();
        // power iteration on P^T
        let pt = chain.p_pi.transpose();
        let mut x = DVector::from_element(3, 1.0 / 3.0);
        for _ in 0..100_000 {
            x = &pt * x;
        }
        assert!((x - &chain.chi).amax() < 1e-10);
        let residual = (chain.p_pi.transpose() * &chain.chi - &chain.chi).amax();
        assert!(residual < 1e-10);
    }

    #[test]
    fn value_matches_value_iteration_on_chain() {
        let mdp = chain_mdp(5, 0.1, 0.9, 0.2).unwrap();
        let chain = induced_chain(&mdp, &TabularPolicy::uniform(5, 2)).unwrap();
        let v = exact_value(&chain, mdp.gamma()).unwrap();
        let mut it = DVector::zeros(5);
        for _ in 0..10_000 {
            it = &chain.r_vec + &chain.p_pi * it * mdp.gamma();
        }
        assert!((&v - it).amax() < 1e-8);
        let bellman = &v - (&chain.r_vec + &chain.p_pi * &v * mdp.gamma());
        assert!(bellman.amax() < 1e-10);
    }

    #[test]
    fn iid_sampler_single_support() {
        let mdp = one_state();
        let pol = TabularPolicy::uniform(1, 1);
        let chain = induced_chain(&mdp, &pol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let t = sample_iid_transition(&mdp, &pol, &chain, &mut rng).unwrap();
            assert_eq!(t, Transition { s: 0, a: 0, r: 1.0, s_next: 0 });
        }
    }

    #[test]
    fn iid_sampler_state_frequencies() {
        let mdp = chain_mdp(2, 0.5, 0.5, 0.0).unwrap();
        let pol = TabularPolicy::uniform(2, 2);
        let chain = induced_chain(&mdp, &pol).unwrap();
        assert_abs_diff_eq!(chain.chi[0], 0.5, epsilon = 1e-12);
        let sampler = TransitionSampler::new(&mdp, &pol, &chain).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sampler.sample(&mut rng).s == 0).count() as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((zeros - 0.5 * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn sampler_replays_under_fixed_seed() {
        let mdp = chain_mdp(4, 0.2, 0.5, 0.2).unwrap();
        let pol = TabularPolicy::uniform(4, 2);
        let chain = induced_chain(&mdp, &pol).unwrap();
        let sampler = TransitionSampler::new(&mdp, &pol, &chain).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn chain_generator_rows_are_stochastic() {
        let mdp = chain_mdp(5, 0.1, 0.5, 0.2).unwrap();
        assert_eq!(mdp.num_states(), 5);
        for s in 0..5 {
            for a in 0..2 {
                assert_abs_diff_eq!(mdp.transition_row(s, a).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn garnet_is_reproducible() {
        let params = GarnetParams {
            num_states: 10,
            num_actions: 3,
            branching: 2,
            gamma: 0.9,
            r_max: 1.0,
        };
        let a = garnet_mdp(params, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = garnet_mdp(params, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        for s in 0..10 {
            for act in 0..3 {
                let nz = a.transition_row(s, act).iter().filter(|&&p| p > 0.0).count();
                assert_eq!(nz, 2);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("mvtd-mdp-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mdp = chain_mdp(3, 0.25, 0.7, -0.5).unwrap();
        for name in ["m.json", "m.toml"] {
            let path = dir.join(name);
            mdp.save(&path).unwrap();
            assert_eq!(Mdp::load(&path).unwrap(), mdp);
        }
        std::fs::write(dir.join("bad.json"), "{ not json").unwrap();
        assert!(matches!(Mdp::load(dir.join("bad.json")), Err(Error::FileParse(_))));
    }
}
