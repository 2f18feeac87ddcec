//! Softmax policies, exact gradients of the mean, second moment and
//! mean-variance Lagrangian, and the smoothness constants bounding them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{exact_square_value, exact_value, induced_chain, Mdp, TabularPolicy};

/// Feature vectors x(s, a) in R^d.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionFeatures {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    data: Vec<DVector<f64>>,
}

impl ActionFeatures {
    /// `rows[s][a]` is x(s, a).
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        let dim = rows
            .first()
            .and_then(|r| r.first())
            .map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 || dim == 0 {
            return Err(Error::DimensionMismatch("empty action features".into()));
        }
        let mut data = Vec::with_capacity(num_states * num_actions);
        for row in rows {
            if row.len() != num_actions {
                return Err(Error::DimensionMismatch("ragged action features".into()));
            }
            for x in row {
                if x.len() != dim {
                    return Err(Error::DimensionMismatch("action feature width varies".into()));
                }
                data.push(DVector::from_column_slice(x));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            dim,
            data,
        })
    }

    /// Tabular parameterization: one coordinate per (s, a).
    pub fn one_hot(num_states: usize, num_actions: usize) -> Self {
        let dim = num_states * num_actions;
        let data = (0..dim)
            .map(|i| {
                let mut x = DVector::zeros(dim);
                x[i] = 1.0;
                x
            })
            .collect();
        Self {
            num_states,
            num_actions,
            dim,
            data,
        }
    }

    pub fn get(&self, s: usize, a: usize) -> &DVector<f64> {
        &self.data[s * self.num_actions + a]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// max_{s,a} ||x(s,a)||.
    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// max_s max_{a,b} ||x(s,a) - x(s,b)||.
    pub fn max_diameter(&self) -> f64 {
        let mut diam = 0.0_f64;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for b in a + 1..self.num_actions {
                    diam = diam.max((self.get(s, a) - self.get(s, b)).norm());
                }
            }
        }
        diam
    }
}

/// pi_theta(a|s) proportional to exp(theta^T x(s,a)).
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxPolicy {
    pub theta: DVector<f64>,
    pub features: ActionFeatures,
}

impl SoftmaxPolicy {
    pub fn new(theta: DVector<f64>, features: ActionFeatures) -> Result<Self> {
        if theta.len() != features.dim() {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {}, features have dimension {}",
                theta.len(),
                features.dim()
            )));
        }
        Ok(Self { theta, features })
    }

    pub fn with_theta(&self, theta: DVector<f64>) -> Self {
        Self {
            theta,
            features: self.features.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// pi_theta(.|s), computed with the max-logit shift.
    pub fn action_probs(&self, s: usize) -> Vec<f64> {
        let na = self.features.num_actions();
        let logits: Vec<f64> = (0..na).map(|a| self.theta.dot(self.features.get(s, a))).collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    pub fn tabular(&self) -> TabularPolicy {
        let n = self.features.num_states();
        let na = self.features.num_actions();
        let mut probs = DMatrix::zeros(n, na);
        for s in 0..n {
            for (a, p) in self.action_probs(s).into_iter().enumerate() {
                probs[(s, a)] = p;
            }
        }
        TabularPolicy::new(probs).expect("softmax rows are distributions")
    }

    /// E_{a ~ pi(.|s)} x(s, a).
    fn mean_feature(&self, s: usize, probs: &[f64]) -> DVector<f64> {
        probs
            .iter()
            .enumerate()
            .fold(DVector::zeros(self.dim()), |acc, (a, p)| acc + self.features.get(s, a) * *p)
    }
}

/// psi(s, a) = grad_theta log pi_theta(a|s) = x(s,a) - E_pi x(s, .).
pub fn score(policy: &SoftmaxPolicy, s: usize, a: usize) -> DVector<f64> {
    let probs = policy.action_probs(s);
    policy.features.get(s, a) - policy.mean_feature(s, &probs)
}

fn check_start(mdp: &Mdp, policy: &SoftmaxPolicy, s0: usize) -> Result<()> {
    if policy.features.num_states() != mdp.num_states() || policy.features.num_actions() != mdp.num_actions() {
        return Err(Error::DimensionMismatch("policy features do not match the MDP".into()));
    }
    if s0 >= mdp.num_states() {
        return Err(Error::DimensionMismatch(format!("start state {s0} out of range")));
    }
    Ok(())
}

/// Exact value and square value of every state, plus per-state gradients.
#[derive(Clone, Debug)]
pub struct PolicyGradients {
    pub value: DVector<f64>,
    pub square_value: DVector<f64>,
    /// Row s is grad V_theta(s).
    pub grad_value: DMatrix<f64>,
    /// Row s is grad U_theta(s).
    pub grad_square_value: DMatrix<f64>,
}

/// Differentiates both Bellman equations in theta and solves for the
/// gradients at every start state at once:
/// grad V = (I - g P)^{-1} sum_a pi psi Q and
/// grad U = (I - g^2 P)^{-1} sum_a pi [psi W + 2 g r(s,a) P(.|s,a)^T grad V].
pub fn policy_gradients(mdp: &Mdp, policy: &SoftmaxPolicy) -> Result<PolicyGradients> {
    check_start(mdp, policy, 0)?;
    let gamma = mdp.gamma();
    let tab = policy.tabular();
    let chain = induced_chain(mdp, &tab)?;
    let value = exact_value(&chain, gamma)?;
    let square_value = exact_square_value(&chain, gamma, &value)?;
    let n = mdp.num_states();
    let d = policy.dim();

    let mut b_j = DMatrix::zeros(n, d);
    let mut scores = Vec::with_capacity(n * mdp.num_actions());
    for s in 0..n {
        let probs = tab.probs().row(s).iter().copied().collect::<Vec<_>>();
        let mean = policy.mean_feature(s, &probs);
        for (a, &p) in probs.iter().enumerate() {
            let psi = policy.features.get(s, a) - &mean;
            let row = mdp.transition_row(s, a);
            let pv: f64 = row.iter().zip(value.iter()).map(|(p, v)| p * v).sum();
            let q = mdp.reward(s, a) + gamma * pv;
            let mut out = b_j.row_mut(s);
            out += (&psi * (p * q)).transpose();
            scores.push(psi);
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    let grad_value = (&id - &chain.p_pi * gamma)
        .lu()
        .solve(&b_j)
        .ok_or_else(|| Error::SingularSystem("I - gamma P^pi".into()))?;

    let mut b_u = DMatrix::zeros(n, d);
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let p = tab.prob(s, a);
            let r = mdp.reward(s, a);
            let row = mdp.transition_row(s, a);
            let pv: f64 = row.iter().zip(value.iter()).map(|(p, v)| p * v).sum();
            let pu: f64 = row.iter().zip(square_value.iter()).map(|(p, u)| p * u).sum();
            let w = r * r + 2.0 * gamma * r * pv + gamma * gamma * pu;
            let psi = &scores[s * mdp.num_actions() + a];
            let mut expected_grad = DVector::zeros(d);
            for (next, &pn) in row.iter().enumerate() {
                if pn != 0.0 {
                    expected_grad += grad_value.row(next).transpose() * pn;
                }
            }
            let mut out = b_u.row_mut(s);
            out += ((psi * w + expected_grad * (2.0 * gamma * r)) * p).transpose();
        }
    }
    let grad_square_value = (&id - &chain.p_pi * (gamma * gamma))
        .lu()
        .solve(&b_u)
        .ok_or_else(|| Error::SingularSystem("I - gamma^2 P^pi".into()))?;
    Ok(PolicyGradients {
        value,
        square_value,
        grad_value,
        grad_square_value,
    })
}

/// J(theta) = V_theta(s0).
pub fn exact_j(mdp: &Mdp, policy: &SoftmaxPolicy, s0: usize) -> Result<f64> {
    check_start(mdp, policy, s0)?;
    let chain = induced_chain(mdp, &policy.tabular())?;
    Ok(exact_value(&chain, mdp.gamma())?[s0])
}

/// U(theta) = U_theta(s0).
pub fn exact_u(mdp: &Mdp, policy: &SoftmaxPolicy, s0: usize) -> Result<f64> {
    check_start(mdp, policy, s0)?;
    let chain = induced_chain(mdp, &policy.tabular())?;
    let v = exact_value(&chain, mdp.gamma())?;
    Ok(exact_square_value(&chain, mdp.gamma(), &v)?[s0])
}

/// grad J via the policy-gradient sum over the gamma-discounted visitation
/// from s0, with Q(s,a) = r(s,a) + gamma sum_s' P(s'|s,a) V(s').
pub fn exact_grad_j(mdp: &Mdp, policy: &SoftmaxPolicy, s0: usize) -> Result<DVector<f64>> {
    check_start(mdp, policy, s0)?;
    let gamma = mdp.gamma();
    let tab = policy.tabular();
    let chain = induced_chain(mdp, &tab)?;
    let value = exact_value(&chain, gamma)?;
    let n = mdp.num_states();
    // d^T = e_{s0}^T (I - gamma P^pi)^{-1}
    let mut e = DVector::zeros(n);
    e[s0] = 1.0;
    let visits = (DMatrix::identity(n, n) - chain.p_pi.transpose() * gamma)
        .lu()
        .solve(&e)
        .ok_or_else(|| Error::SingularSystem("I - gamma P^T".into()))?;
    let mut grad = DVector::zeros(policy.dim());
    for s in 0..n {
        let probs = policy.action_probs(s);
        let mean = policy.mean_feature(s, &probs);
        for (a, &p) in probs.iter().enumerate() {
            let pv: f64 = mdp.transition_row(s, a).iter().zip(value.iter()).map(|(p, v)| p * v).sum();
            let q = mdp.reward(s, a) + gamma * pv;
            grad += (policy.features.get(s, a) - &mean) * (visits[s] * p * q);
        }
    }
    Ok(grad)
}

/// grad U at s0.
pub fn exact_grad_u(mdp: &Mdp, policy: &SoftmaxPolicy, s0: usize) -> Result<DVector<f64>> {
    check_start(mdp, policy, s0)?;
    Ok(policy_gradients(mdp, policy)?.grad_square_value.row(s0).transpose())
}

/// -grad J + lambda (grad U - 2 J grad J).
pub fn grad_lagrangian(j: f64, grad_j: &DVector<f64>, grad_u: &DVector<f64>, lambda: f64) -> DVector<f64> {
    -grad_j + (grad_u - grad_j * (2.0 * j)) * lambda
}

/// L = -J + lambda (U - J^2 - c).
pub fn lagrangian(j: f64, u: f64, lambda: f64, variance_threshold: f64) -> f64 {
    -j + lambda * (u - j * j - variance_threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub j: f64,
    pub u: f64,
    pub grad_j: DVector<f64>,
    pub grad_u: DVector<f64>,
    pub grad_l: DVector<f64>,
    pub lambda: f64,
    pub variance_threshold: f64,
}

impl GradientBundle {
    pub fn variance(&self) -> f64 {
        (self.u - self.j * self.j).max(0.0)
    }

    pub fn lagrangian(&self) -> f64 {
        lagrangian(self.j, self.u, self.lambda, self.variance_threshold)
    }
}

pub fn gradient_bundle(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    s0: usize,
    lambda: f64,
    variance_threshold: f64,
) -> Result<GradientBundle> {
    check_start(mdp, policy, s0)?;
    let g = policy_gradients(mdp, policy)?;
    let j = g.value[s0];
    let grad_j = g.grad_value.row(s0).transpose();
    let grad_u = g.grad_square_value.row(s0).transpose();
    Ok(GradientBundle {
        j,
        u: g.square_value[s0],
        grad_l: grad_lagrangian(j, &grad_j, &grad_u, lambda),
        grad_j,
        grad_u,
        lambda,
        variance_threshold,
    })
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
pub fn finite_difference<F>(f: F, theta: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("difference step must be positive, got {h}")));
    }
    let mut grad = DVector::zeros(theta.len());
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += h;
        minus[i] -= h;
        grad[i] = (f(&plus)? - f(&minus)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Which mixing-constant expression to use for C_nu.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingForm {
    /// C_nu = C_pi (1 + ceil(log_rho 1/kappa) + 1/(1-rho)) / 2.
    #[default]
    Half,
    /// Same expression without the factor 1/2.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothnessInputs {
    pub r_max: f64,
    pub gamma: f64,
    pub c_psi: f64,
    pub l_psi: f64,
    pub c_pi: f64,
    pub kappa: f64,
    pub rho: f64,
    pub lambda: f64,
    pub form: MixingForm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SmoothnessConstants {
    pub c_psi: f64,
    pub l_psi: f64,
    pub c_pi: f64,
    pub kappa: f64,
    pub rho: f64,
    pub c_nu: f64,
    pub l_j: f64,
    pub l_u: f64,
    pub l_o: f64,
    pub k1: f64,
    pub c1: f64,
    /// Bound on ||grad J||.
    pub grad_j_bound: f64,
    /// Bound on ||grad U||.
    pub grad_u_bound: f64,
}

/// ceil with values within 1e-9 of an integer snapped first.
fn snapped_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x.ceil()
    }
}

pub fn mixing_constant(c_pi: f64, kappa: f64, rho: f64, form: MixingForm) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidMixingConstants(format!("rho = {rho} is not in (0, 1)")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidMixingConstants(format!("kappa = {kappa} must be positive")));
    }
    let steps = snapped_ceil((1.0 / kappa).ln() / rho.ln());
    let scale = match form {
        MixingForm::Half => 0.5,
        MixingForm::Full => 1.0,
    };
    let c_nu = scale * c_pi * (1.0 + steps + 1.0 / (1.0 - rho));
    if c_nu < 0.0 {
        return Err(Error::InvalidMixingConstants(format!(
            "kappa = {kappa}, rho = {rho} give a negative C_nu"
        )));
    }
    Ok(c_nu)
}

pub fn lipschitz_constants(inp: &SmoothnessInputs) -> Result<SmoothnessConstants> {
    let SmoothnessInputs {
        r_max: r,
        gamma: g,
        c_psi,
        l_psi,
        c_pi,
        kappa,
        rho,
        lambda,
        form,
    } = *inp;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter("smoothness constants need R_max > 0".into()));
    }
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::GammaOutOfRange(g));
    }
    if c_psi < 0.0 || l_psi < 0.0 || c_pi < 0.0 || lambda < 0.0 {
        return Err(Error::InvalidParameter("smoothness inputs must be nonnegative".into()));
    }
    let c_nu = mixing_constant(c_pi, kappa, rho, form)?;
    let one_g = 1.0 - g;
    let l_j = r / one_g * (4.0 * c_nu * c_psi + l_psi);
    let l_u = 1.0 / (1.0 - g * g)
        * (r * r / (one_g * one_g) * (l_psi + 4.0 * c_psi * c_nu * (1.0 + g / r)) + 2.0 * l_j);
    let grad_j_bound = r * c_psi / (one_g * one_g);
    let l_o = l_j * (1.0 + 2.0 * lambda * r / (one_g * one_g) + 2.0 * lambda * grad_j_bound.powi(2)) + lambda * l_u;
    let denom = (1.0 - g * g) * one_g * one_g;
    let grad_u_bound = c_psi * r / denom + 2.0 * g * r * c_psi / denom;
    let k1 = grad_j_bound + 2.0 * lambda * r * c_psi / one_g.powi(3) + lambda * grad_u_bound;
    let c1 = 2.0 * r / one_g * (1.0 + lambda * r / one_g);
    Ok(SmoothnessConstants {
        c_psi,
        l_psi,
        c_pi,
        kappa,
        rho,
        c_nu,
        l_j,
        l_u,
        l_o,
        k1,
        c1,
        grad_j_bound,
        grad_u_bound,
    })
}

/// Closed-form softmax constants (C_psi, L_psi, C_pi) from X = max ||x||
/// and the within-state diameter D: C_psi = min(2X, D),
/// L_psi = min(X^2, D^2/2), C_pi = min(X, D/sqrt 2) in the l1 norm on
/// action distributions.
pub fn softmax_constants(features: &ActionFeatures) -> (f64, f64, f64) {
    let x = features.max_norm();
    let d = features.max_diameter();
    ((2.0 * x).min(d), (x * x).min(0.5 * d * d), x.min(d / 2f64.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate_mdp, MdpDocument};
    use approx::assert_abs_diff_eq;

    fn two_by_two(theta: &[f64]) -> SoftmaxPolicy {
        let feats = ActionFeatures::from_nested(&[
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.5, 0.5], vec![-0.5, 1.0]],
        ])
        .unwrap();
        SoftmaxPolicy::new(DVector::from_column_slice(theta), feats).unwrap()
    }

    fn mdp() -> Mdp {
        validate_mdp(MdpDocument {
            num_states: 2,
            num_actions: 2,
            gamma: 0.8,
            r_max: Some(1.0),
            transitions: vec![
                vec![vec![0.7, 0.3], vec![0.2, 0.8]],
                vec![vec![0.5, 0.5], vec![0.9, 0.1]],
            ],
            rewards: vec![vec![1.0, -0.5], vec![0.3, 0.8]],
        })
        .unwrap()
    }

    #[test]
    fn uniform_score() {
        let p = two_by_two(&[0.0, 0.0]);
        let psi = score(&p, 0, 0);
        assert_abs_diff_eq!(psi[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(psi[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn score_identity_and_finite_difference() {
        let p = two_by_two(&[0.4, -1.3]);
        for s in 0..2 {
            let probs = p.action_probs(s);
            let mean = (0..2).fold(DVector::zeros(2), |acc, a| acc + score(&p, s, a) * probs[a]);
            assert!(mean.amax() < 1e-15);
            for a in 0..2 {
                let fd = finite_difference(|th| Ok(p.with_theta(th.clone()).action_probs(s)[a].ln()), &p.theta, 1e-6).unwrap();
                assert!((fd - score(&p, s, a)).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = mdp();
        let p = two_by_two(&[0.3, -0.7]);
        let gj = exact_grad_j(&m, &p, 0).unwrap();
        let fd = finite_difference(|th| exact_j(&m, &p.with_theta(th.clone()), 0), &p.theta, 1e-5).unwrap();
        assert!((&gj - fd).norm() / gj.norm() < 1e-6);
        let bundle = gradient_bundle(&m, &p, 0, 0.0, 0.0).unwrap();
        assert!((&bundle.grad_j - &gj).amax() < 1e-12);
        let gu = exact_grad_u(&m, &p, 0).unwrap();
        let fd = finite_difference(|th| exact_u(&m, &p.with_theta(th.clone()), 0), &p.theta, 1e-5).unwrap();
        assert!((&gu - fd).norm() / gu.norm() < 1e-5);
    }

    #[test]
    fn flat_rewards_have_zero_gradient() {
        let mut doc = mdp().to_document();
        doc.rewards = vec![vec![0.5; 2]; 2];
        let m = validate_mdp(doc).unwrap();
        let p = two_by_two(&[1.0, 2.0]);
        assert!(exact_grad_j(&m, &p, 1).unwrap().amax() < 1e-12);
        let mut doc = m.to_document();
        doc.rewards = vec![vec![0.0; 2]; 2];
        let m = validate_mdp(doc).unwrap();
        assert!(exact_grad_u(&m, &p, 1).unwrap().amax() < 1e-14);
    }

    #[test]
    fn lagrangian_reductions() {
        let gj = DVector::from_vec(vec![1.0, -2.0]);
        let gu = DVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(grad_lagrangian(3.0, &gj, &gu, 0.0), -&gj);
        let zero = DVector::zeros(2);
        assert_eq!(grad_lagrangian(3.0, &zero, &zero, 2.0), zero);
        assert_eq!(lagrangian(1.0, 2.0, 0.5, 0.0) - lagrangian(1.0, 2.0, 0.5, 1.0), 0.5);
    }

    #[test]
    fn smoothness_arithmetic() {
        let base = SmoothnessInputs {
            r_max: 1.0,
            gamma: 0.5,
            c_psi: 1.0,
            l_psi: 1.0,
            c_pi: 2.0,
            kappa: 1.0,
            rho: 0.5,
            lambda: 0.0,
            form: MixingForm::Half,
        };
        assert_abs_diff_eq!(mixing_constant(2.0, 1.0, 0.5, MixingForm::Half).unwrap(), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mixing_constant(2.0, 1.0, 0.5, MixingForm::Full).unwrap(), 6.0, epsilon = 1e-15);
        // kappa = 4, rho = 0.5: log_rho(1/4) = 2 exactly
        assert_abs_diff_eq!(mixing_constant(2.0, 4.0, 0.5, MixingForm::Half).unwrap(), 5.0, epsilon = 1e-12);
        // c_pi = 0.5 gives C_nu = 1 in the example instance
        let k = lipschitz_constants(&SmoothnessInputs { c_pi: 0.5, ..base }).unwrap();
        assert_abs_diff_eq!(k.c_nu, 0.75, epsilon = 1e-15);
        let unit = lipschitz_constants(&SmoothnessInputs { c_pi: 2.0 / 3.0, ..base }).unwrap();
        assert_abs_diff_eq!(unit.c_nu, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(unit.l_j, 10.0, epsilon = 1e-12);
        assert_eq!(unit.l_o, unit.l_j);
        assert!(matches!(
            lipschitz_constants(&SmoothnessInputs { rho: 1.0, ..base }),
            Err(Error::InvalidMixingConstants(_))
        ));
    }

    #[test]
    fn softmax_constants_dominate_grid_maxima() {
        let p = two_by_two(&[0.0, 0.0]);
        let (c_psi, l_psi, c_pi) = softmax_constants(&p.features);
        let mut max_psi = 0.0_f64;
        let mut max_cov = 0.0_f64;
        let mut max_dpi = 0.0_f64;
        for i in -20..=20 {
            for j in -20..=20 {
                let th = DVector::from_vec(vec![i as f64 * 0.4, j as f64 * 0.4]);
                let pol = p.with_theta(th);
                for s in 0..2 {
                    let probs = pol.action_probs(s);
                    let mut cov = DMatrix::zeros(2, 2);
                    let mut jac = DMatrix::zeros(2, 2);
                    for a in 0..2 {
                        let psi = score(&pol, s, a);
                        max_psi = max_psi.max(psi.norm());
                        cov += &psi * psi.transpose() * probs[a];
                        jac.set_row(a, &(psi.transpose() * probs[a]));
                    }
                    max_cov = max_cov.max(cov.norm());
                    // induced (l2 -> l1) norm of the probability Jacobian via direction sweep
                    for k in 0..64 {
                        let ang = k as f64 * std::f64::consts::PI / 32.0;
                        let h = DVector::from_vec(vec![ang.cos(), ang.sin()]);
                        max_dpi = max_dpi.max((&jac * h).abs().sum());
                    }
                }
            }
        }
        assert!(max_psi <= c_psi + 1e-12);
        assert!(max_cov <= l_psi + 1e-12);
        assert!(max_dpi <= c_pi + 1e-12);
    }
}
