//! SPSA actor driven by two tail-averaged TD critics per iteration.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{simulate, CriticConfig, CriticProblem};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::gradients::{gradient_bundle, SoftmaxPolicy};
use crate::mdp::{induced_chain, Mdp, TransitionSampler};
use crate::stats::derive_seed3;
use crate::system::{assemble_system, fixed_point, spectral_constants, InstanceBounds};

/// How the critic step size is chosen for each visited policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CriticStep {
    /// beta = mu_floor / c, computed once from instance bounds.
    Global { mu_floor: f64 },
    /// beta = beta_max of each visited policy.
    PerPolicy,
    /// A fixed, user-chosen step.
    Fixed { beta: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorConfig {
    pub n: usize,
    pub alpha: f64,
    pub p: f64,
    pub m: u64,
    pub k: u64,
    pub lambda: f64,
    pub s0: usize,
    pub seed: u64,
    pub critic_step: CriticStep,
    pub theta0: Option<DVector<f64>>,
}

/// (alpha, p, m) = (n^{-3/4}, n^{-1/4}, n).
pub fn theorem6_schedule(n: usize) -> (f64, f64, u64) {
    let nf = n as f64;
    (nf.powf(-0.75), nf.powf(-0.25), n as u64)
}

impl ActorConfig {
    /// Default schedule with k = m / 2.
    pub fn with_schedule(n: usize, lambda: f64, s0: usize, seed: u64, critic_step: CriticStep) -> Self {
        let (alpha, p, m) = theorem6_schedule(n);
        Self {
            n,
            alpha,
            p,
            m,
            k: m / 2,
            lambda,
            s0,
            seed,
            critic_step,
            theta0: None,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("actor needs n >= 1".into()));
        }
        if !(self.p > 0.0) || !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter("alpha and p must be positive".into()));
        }
        if self.m < 2 || self.k >= self.m {
            return Err(Error::InvalidParameter(format!("need m >= 2 and k < m (m={}, k={})", self.m, self.k)));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter("lambda must be nonnegative".into()));
        }
        if let Some(t) = &self.theta0 {
            if t.len() != d {
                return Err(Error::DimensionMismatch("theta0 dimension".into()));
            }
        }
        Ok(())
    }
}

/// Delta in {-1, +1}^d with independent fair signs.
pub fn sample_perturbation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Component i is (f_plus - f_base) / (p Delta_i).
pub fn spsa_gradient(f_plus: f64, f_base: f64, p: f64, delta: &DVector<f64>) -> DVector<f64> {
    delta.map(|di| (f_plus - f_base) / (p * di))
}

/// Average of the one-sided SPSA estimate of `f` over all 2^d sign vectors.
pub fn enumerated_spsa<F>(f: F, theta: &DVector<f64>, p: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let d = theta.len();
    if d >= 20 {
        return Err(Error::InvalidParameter("exhaustive enumeration limited to d < 20".into()));
    }
    let base = f(theta)?;
    let count = 1usize << d;
    let mut acc = DVector::zeros(d);
    for mask in 0..count {
        let delta = DVector::from_fn(d, |i, _| if mask >> i & 1 == 1 { 1.0 } else { -1.0 });
        let plus = f(&(theta + &delta * p))?;
        acc += spsa_gradient(plus, base, p, &delta);
    }
    Ok(acc / count as f64)
}

/// theta + alpha (gJ - lambda (gU - 2 J gJ)).
pub fn actor_step(
    theta: &DVector<f64>,
    grad_j: &DVector<f64>,
    grad_u: &DVector<f64>,
    j_hat: f64,
    lambda: f64,
    alpha: f64,
) -> DVector<f64> {
    theta + (grad_j - (grad_u - grad_j * (2.0 * j_hat)) * lambda) * alpha
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub grad_norm_sq_exact: f64,
    pub j_hat: f64,
    pub u_hat: f64,
    pub critic_err_base: f64,
    pub critic_err_pert: f64,
}

#[derive(Clone, Debug)]
pub struct ActorResult {
    /// theta_1 .. theta_n.
    pub theta_trace: Vec<DVector<f64>>,
    pub theta_r: DVector<f64>,
    pub r_index: usize,
    /// theta_{n+1}.
    pub theta_final: DVector<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub records: Vec<IterationRecord>,
}

/// Critic output at the start state for one policy.
struct CriticEstimate {
    j: f64,
    u: f64,
    error: f64,
}

fn divergence_guard(r_max: f64, gamma: f64) -> f64 {
    let scale = r_max / (1.0 - gamma) + (r_max / (1.0 - gamma)).powi(2);
    1e6 * scale.max(1.0)
}

fn evaluate_critic(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    features: &FeatureSet,
    config: &ActorConfig,
    global_beta: Option<f64>,
    seed: u64,
) -> Result<CriticEstimate> {
    let tab = policy.tabular();
    let chain = induced_chain(mdp, &tab)?;
    let (m, xi) = assemble_system(&chain, features, mdp.gamma())?;
    let beta = match (config.critic_step, global_beta) {
        (_, Some(b)) => b,
        (CriticStep::Fixed { beta }, None) => beta,
        _ => {
            let mu = spectral_constants(&m)?.mu;
            mu / InstanceBounds::from_features(features, mdp.gamma(), mdp.r_max()).c()
        }
    };
    let sampler = TransitionSampler::new(mdp, &tab, &chain)?;
    let problem = CriticProblem {
        sampler: &sampler,
        features,
        gamma: mdp.gamma(),
    };
    let run = simulate(&problem, &CriticConfig::new(config.m, config.k, beta, seed), None)?;
    let guard = divergence_guard(mdp.r_max(), mdp.gamma());
    let norm = run.w_tail.norm();
    if !norm.is_finite() || norm > guard {
        return Err(Error::CriticDiverged { norm, guard });
    }
    let q = features.q;
    let j = features.phi_v_row(config.s0).dot(&run.w_tail.rows(0, q));
    let u = features.phi_u_row(config.s0).dot(&run.w_tail.rows(q, q));
    let error = match fixed_point(&m, &xi) {
        Ok(w_bar) => (&run.w_tail - w_bar).norm(),
        Err(_) => f64::NAN,
    };
    Ok(CriticEstimate { j, u, error })
}

/// Runs n actor iterations. Iteration t perturbs theta_t along a random sign
/// vector, runs a critic for the base and the perturbed policy on
/// independent streams, forms SPSA estimates of grad J and grad U at s0 and
/// takes an ascent step on -L. theta_R is drawn uniformly from theta_1..n.
pub fn run_mv_spsa_ac(
    mdp: &Mdp,
    template: &SoftmaxPolicy,
    features: &FeatureSet,
    config: &ActorConfig,
) -> Result<ActorResult> {
    let d = template.dim();
    config.validate(d)?;
    if config.s0 >= mdp.num_states() || features.num_states() != mdp.num_states() {
        return Err(Error::DimensionMismatch("start state or critic features do not match the MDP".into()));
    }
    let global_beta = match config.critic_step {
        CriticStep::Global { mu_floor } => {
            if !(mu_floor > 0.0) {
                return Err(Error::InvalidParameter("mu_floor must be positive".into()));
            }
            Some(mu_floor / InstanceBounds::from_features(features, mdp.gamma(), mdp.r_max()).c())
        }
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = config.theta0.clone().unwrap_or_else(|| template.theta.clone());
    let mut theta_trace = Vec::with_capacity(config.n);
    let mut grad_norm_trace = Vec::with_capacity(config.n);
    let mut records = Vec::with_capacity(config.n);
    for iter in 1..=config.n {
        let delta = sample_perturbation(d, &mut rng);
        let base_policy = template.with_theta(theta.clone());
        let pert_policy = template.with_theta(&theta + &delta * config.p);
        let base = evaluate_critic(
            mdp,
            &base_policy,
            features,
            config,
            global_beta,
            derive_seed3(config.seed, iter as u64, 0),
        )?;
        let pert = evaluate_critic(
            mdp,
            &pert_policy,
            features,
            config,
            global_beta,
            derive_seed3(config.seed, iter as u64, 1),
        )?;
        let g_j = spsa_gradient(pert.j, base.j, config.p, &delta);
        let g_u = spsa_gradient(pert.u, base.u, config.p, &delta);
        let exact = gradient_bundle(mdp, &base_policy, config.s0, config.lambda, 0.0)?;
        let grad_norm_sq = exact.grad_l.norm_squared();
        records.push(IterationRecord {
            iter,
            theta: theta.iter().copied().collect(),
            grad_norm_sq_exact: grad_norm_sq,
            j_hat: base.j,
            u_hat: base.u,
            critic_err_base: base.error,
            critic_err_pert: pert.error,
        });
        grad_norm_trace.push(grad_norm_sq);
        let next = actor_step(&theta, &g_j, &g_u, base.j, config.lambda, config.alpha);
        theta_trace.push(std::mem::replace(&mut theta, next));
    }
    let r_index = rng.random_range(0..config.n);
    Ok(ActorResult {
        theta_r: theta_trace[r_index].clone(),
        r_index,
        theta_final: theta,
        theta_trace,
        grad_norm_trace,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::identity_features;
    use crate::gradients::{exact_grad_j, exact_j, ActionFeatures};
    use crate::mdp::{validate_mdp, MdpDocument, TabularPolicy};
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_powers() {
        assert_eq!(theorem6_schedule(16), (0.125, 0.5, 16));
        assert_eq!(theorem6_schedule(1), (1.0, 1.0, 1));
        assert_eq!(theorem6_schedule(256), (1.0 / 64.0, 0.25, 256));
    }

    #[test]
    fn spsa_arithmetic() {
        let d = DVector::from_vec(vec![1.0]);
        assert_eq!(spsa_gradient(2.0, 1.0, 0.5, &d), DVector::from_vec(vec![2.0]));
        let d2 = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(spsa_gradient(1.5, 1.5, 0.1, &d2), DVector::zeros(2));
    }

    #[test]
    fn actor_step_arithmetic() {
        let th = DVector::zeros(2);
        let gj = DVector::from_vec(vec![1.0, 0.0]);
        let gu = DVector::from_vec(vec![0.0, 1.0]);
        let next = actor_step(&th, &gj, &gu, 2.0, 1.0, 0.1);
        assert_abs_diff_eq!(next[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], -0.1, epsilon = 1e-15);
        assert_eq!(actor_step(&th, &gj, &gu, 2.0, 0.0, 0.1), &gj * 0.1);
        let zero = DVector::zeros(2);
        assert_eq!(actor_step(&gj, &zero, &zero, 5.0, 3.0, 0.2), gj);
    }

    #[test]
    fn perturbation_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let d = sample_perturbation(1, &mut rng);
            assert!(d[0] == 1.0 || d[0] == -1.0);
        }
    }

    #[test]
    fn enumerated_spsa_on_quadratic() {
        // f = theta^T A theta, gradient (A + A^T) theta; curvature bound L = ||A + A^T||
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, -0.3, 1.0]);
        let sym = &a + a.transpose();
        let curvature = sym.clone().singular_values().max();
        let theta = DVector::from_vec(vec![0.7, -0.2]);
        let p = 0.1;
        let est = enumerated_spsa(|th| Ok(th.dot(&(&a * th))), &theta, p).unwrap();
        let bias = (est - &sym * &theta).norm();
        assert!(bias <= 2f64.powf(1.5) * curvature * p / 2.0);
    }

    #[test]
    fn single_iteration_returns_theta1() {
        let mdp = validate_mdp(MdpDocument {
            num_states: 1,
            num_actions: 2,
            gamma: 0.5,
            r_max: Some(1.0),
            transitions: vec![vec![vec![1.0], vec![1.0]]],
            rewards: vec![vec![1.0, 0.0]],
        })
        .unwrap();
        let feats = ActionFeatures::from_nested(&[vec![vec![1.0], vec![-1.0]]]).unwrap();
        let template = SoftmaxPolicy::new(DVector::from_vec(vec![0.3]), feats).unwrap();
        let chain = induced_chain(&mdp, &TabularPolicy::uniform(1, 2)).unwrap();
        let features = identity_features(&chain).unwrap();
        let cfg = ActorConfig::with_schedule(1, 0.0, 0, 5, CriticStep::Global { mu_floor: 0.1 });
        let cfg = ActorConfig { m: 4, k: 2, ..cfg };
        let res = run_mv_spsa_ac(&mdp, &template, &features, &cfg).unwrap();
        assert_eq!(res.theta_r, res.theta_trace[0]);
        assert_eq!(res.theta_trace[0], template.theta);
        let again = run_mv_spsa_ac(&mdp, &template, &features, &cfg).unwrap();
        assert_eq!(again.theta_final, res.theta_final);
        let g = exact_grad_j(&mdp, &template, 0).unwrap();
        assert!(g[0] > 0.0);
        assert!(exact_j(&mdp, &template, 0).unwrap() > 0.0);
    }
}
