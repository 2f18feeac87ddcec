//! The joint linear system `M w = xi` solved by mean-variance TD, its fixed
//! points, spectral quantities, step-size ceilings, noise constants and the
//! finite-time error bounds expressed in terms of them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::mdp::{OnPolicyChain, Transition};

/// Relative slack allowed when comparing a step size with its ceiling.
const CEILING_SLACK: f64 = 1e-12;

/// Assembles `M` (2q x 2q, block lower-triangular) and `xi` (2q).
pub fn assemble_system(
    chain: &OnPolicyChain,
    features: &FeatureSet,
    gamma: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = chain.num_states();
    if features.num_states() != n {
        return Err(Error::DimensionMismatch(format!(
            "features cover {} states, chain has {n}",
            features.num_states()
        )));
    }
    let q = features.q;
    let id = DMatrix::<f64>::identity(n, n);
    let phi_v = &features.phi_v;
    let phi_u = &features.phi_u;
    let dv = phi_v.transpose() * &chain.statdist;
    let du = phi_u.transpose() * &chain.statdist;

    let top_left = &dv * (&id - &chain.p_pi * gamma) * phi_v;
    let bottom_left = &du * &chain.reward_kernel * phi_v * (-2.0 * gamma);
    let bottom_right = &du * (&id - &chain.p_pi * (gamma * gamma)) * phi_u;

    let mut m = DMatrix::zeros(2 * q, 2 * q);
    m.view_mut((0, 0), (q, q)).copy_from(&top_left);
    m.view_mut((q, 0), (q, q)).copy_from(&bottom_left);
    m.view_mut((q, q), (q, q)).copy_from(&bottom_right);

    let mut xi = DVector::zeros(2 * q);
    xi.rows_mut(0, q).copy_from(&(&dv * &chain.r_vec));
    xi.rows_mut(q, q).copy_from(&(&du * &chain.r_tilde));
    Ok((m, xi))
}

/// Single-sample system `(M_t, b_t)` with `b_t = r_t phi_t`, whose
/// expectation under i.i.d. sampling is `(M, xi)`.
pub fn sampled_system(tr: &Transition, features: &FeatureSet, gamma: f64) -> (DMatrix<f64>, DVector<f64>) {
    let q = features.q;
    let fv = features.phi_v_row(tr.s);
    let fv_next = features.phi_v_row(tr.s_next);
    let fu = features.phi_u_row(tr.s);
    let fu_next = features.phi_u_row(tr.s_next);
    let r = tr.r;

    let mut m = DMatrix::zeros(2 * q, 2 * q);
    m.view_mut((0, 0), (q, q))
        .copy_from(&(fv * (fv - fv_next * gamma).transpose()));
    m.view_mut((q, 0), (q, q))
        .copy_from(&(fu * fv_next.transpose() * (-2.0 * gamma * r)));
    m.view_mut((q, q), (q, q))
        .copy_from(&(fu * (fu - fu_next * (gamma * gamma)).transpose()));

    let mut b = DVector::zeros(2 * q);
    b.rows_mut(0, q).copy_from(&(fv * r));
    b.rows_mut(q, q).copy_from(&(fu * (r * r)));
    (m, b)
}

/// w = M^{-1} xi.
pub fn fixed_point(m: &DMatrix<f64>, xi: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(xi)
        .ok_or_else(|| Error::SingularSystem("M".into()))
}

/// w_reg = (M + zeta I)^{-1} xi.
pub fn regularized_fixed_point(m: &DMatrix<f64>, xi: &DVector<f64>, zeta: f64) -> Result<DVector<f64>> {
    if !(zeta >= 0.0) {
        return Err(Error::InvalidParameter(format!("zeta must be nonnegative, got {zeta}")));
    }
    let n = m.nrows();
    (m + DMatrix::identity(n, n) * zeta)
        .lu()
        .solve(xi)
        .ok_or_else(|| Error::SingularSystem("M + zeta I".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spectral {
    /// Smallest eigenvalue of (M + M^T)/2.
    pub mu: f64,
    /// Smallest singular value of M.
    pub iota: f64,
    /// Largest eigenvalue of (M + M^T)/2.
    pub lambda_max: f64,
}

/// Spectral quantities without the positivity check.
pub fn spectral_values(m: &DMatrix<f64>) -> Spectral {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let iota = m.clone().singular_values().min();
    Spectral {
        mu: eig.min(),
        iota,
        lambda_max: eig.max(),
    }
}

/// As [`spectral_values`], failing when mu <= 0 (no admissible step size).
pub fn spectral_constants(m: &DMatrix<f64>) -> Result<Spectral> {
    let s = spectral_values(m);
    if !(s.mu > 0.0) {
        return Err(Error::NotPositive { mu: s.mu });
    }
    Ok(s)
}

/// Instance scalars entering every ceiling and noise constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InstanceBounds {
    pub phi_v_max: f64,
    pub phi_u_max: f64,
    pub gamma: f64,
    pub r_max: f64,
}

impl InstanceBounds {
    pub fn from_features(features: &FeatureSet, gamma: f64, r_max: f64) -> Self {
        Self {
            phi_v_max: features.phi_v_max,
            phi_u_max: features.phi_u_max,
            gamma,
            r_max,
        }
    }

    /// phi_v^4 (1+g)^2 + phi_u^4 (1+g^2)^2 + 4 g^2 R^2 phi_v^2 phi_u^2.
    pub fn bracket(&self) -> f64 {
        let (v2, u2, g, r) = self.squares();
        v2 * v2 * (1.0 + g).powi(2) + u2 * u2 * (1.0 + g * g).powi(2) + 4.0 * g * g * r * r * v2 * u2
    }

    /// R^2 (phi_v^2 + R^2 phi_u^2).
    pub fn reward_term(&self) -> f64 {
        let (v2, u2, _, r) = self.squares();
        r * r * (v2 + r * r * u2)
    }

    fn squares(&self) -> (f64, f64, f64, f64) {
        (
            self.phi_v_max * self.phi_v_max,
            self.phi_u_max * self.phi_u_max,
            self.gamma,
            self.r_max,
        )
    }

    pub fn c(&self) -> f64 {
        let (v2, u2, g, r) = self.squares();
        let first = 4.0 * v2 * v2 + 4.0 * g * g * r * r * u2 * v2;
        let second = 4.0 * u2 * u2;
        first.max(second) + 2.0 * g * r * (v2 * u2 + u2 * u2)
    }

    /// zeta^2 + 2 zeta sqrt(bracket) + c. Uses no spectral information.
    pub fn c_check(&self, zeta: f64) -> f64 {
        zeta * zeta + 2.0 * zeta * self.bracket().sqrt() + self.c()
    }

    pub fn sigma_sq(&self, w_bar_norm_sq: f64) -> f64 {
        2.0 * self.reward_term() + 2.0 * self.bracket() * w_bar_norm_sq
    }

    pub fn sigma_check_sq(&self, zeta: f64, w_reg_norm_sq: f64) -> f64 {
        2.0 * self.reward_term() + 4.0 * (zeta * zeta + self.bracket()) * w_reg_norm_sq
    }

    pub fn tau(&self, h: f64) -> f64 {
        (2.0 * self.reward_term() + 2.0 * self.bracket() * h * h).sqrt()
    }

    pub fn tau_check(&self, zeta: f64, h: f64) -> f64 {
        (2.0 * self.reward_term() + 4.0 * (zeta * zeta + self.bracket()) * h * h).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ceilings {
    pub c: f64,
    pub beta_max: f64,
    pub c_check: Option<f64>,
    pub beta_check_max: Option<f64>,
}

pub fn step_size_ceilings(bounds: &InstanceBounds, mu: f64, zeta: Option<f64>) -> Ceilings {
    let c = bounds.c();
    let c_check = zeta.map(|z| bounds.c_check(z));
    Ceilings {
        c,
        beta_max: mu / c,
        c_check,
        beta_check_max: zeta.zip(c_check).map(|(z, cc)| z / cc),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseConstants {
    pub sigma_sq: f64,
    pub sigma_check_sq: Option<f64>,
    pub tau: Option<f64>,
    pub tau_check: Option<f64>,
}

/// `regularized` carries (zeta, ||w_reg||^2).
pub fn noise_constants(
    bounds: &InstanceBounds,
    w_bar_norm_sq: f64,
    regularized: Option<(f64, f64)>,
    h: Option<f64>,
) -> NoiseConstants {
    NoiseConstants {
        sigma_sq: bounds.sigma_sq(w_bar_norm_sq),
        sigma_check_sq: regularized.map(|(z, n2)| bounds.sigma_check_sq(z, n2)),
        tau: h.map(|h| bounds.tau(h)),
        tau_check: regularized.zip(h).map(|((z, _), h)| bounds.tau_check(z, h)),
    }
}

/// Everything the critic theory needs about one (MDP, policy, features)
/// instance.
#[derive(Clone, Debug, Serialize)]
pub struct CriticSystem {
    #[serde(skip)]
    pub m_mat: DMatrix<f64>,
    #[serde(skip)]
    pub xi: DVector<f64>,
    #[serde(skip)]
    pub w_bar: DVector<f64>,
    pub q: usize,
    pub bounds: InstanceBounds,
    pub mu: f64,
    pub iota: f64,
    pub lambda_max: f64,
    pub c_const: f64,
    pub beta_max: f64,
    pub sigma_sq: f64,
    pub zeta: Option<f64>,
    #[serde(skip)]
    pub w_bar_reg: Option<DVector<f64>>,
    pub c_check: Option<f64>,
    pub beta_check_max: Option<f64>,
    pub sigma_check_sq: Option<f64>,
    pub tau: Option<f64>,
    pub tau_check: Option<f64>,
    pub h_radius: Option<f64>,
}

impl CriticSystem {
    pub fn new(chain: &OnPolicyChain, features: &FeatureSet, gamma: f64, r_max: f64) -> Result<Self> {
        let (m, xi) = assemble_system(chain, features, gamma)?;
        Self::from_parts(m, xi, InstanceBounds::from_features(features, gamma, r_max))
    }

    pub fn from_parts(m_mat: DMatrix<f64>, xi: DVector<f64>, bounds: InstanceBounds) -> Result<Self> {
        if m_mat.nrows() != m_mat.ncols() || m_mat.nrows() != xi.len() || xi.len() % 2 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "M is {}x{}, xi has length {}",
                m_mat.nrows(),
                m_mat.ncols(),
                xi.len()
            )));
        }
        let spectral = spectral_constants(&m_mat)?;
        let w_bar = fixed_point(&m_mat, &xi)?;
        let ceil = step_size_ceilings(&bounds, spectral.mu, None);
        Ok(Self {
            q: xi.len() / 2,
            sigma_sq: bounds.sigma_sq(w_bar.norm_squared()),
            mu: spectral.mu,
            iota: spectral.iota,
            lambda_max: spectral.lambda_max,
            c_const: ceil.c,
            beta_max: ceil.beta_max,
            bounds,
            m_mat,
            xi,
            w_bar,
            zeta: None,
            w_bar_reg: None,
            c_check: None,
            beta_check_max: None,
            sigma_check_sq: None,
            tau: None,
            tau_check: None,
            h_radius: None,
        })
    }

    /// Adds the regularized fixed point and its constants.
    pub fn with_zeta(mut self, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0) {
            return Err(Error::InvalidParameter(format!("zeta must be positive, got {zeta}")));
        }
        let w_reg = regularized_fixed_point(&self.m_mat, &self.xi, zeta)?;
        let ceil = step_size_ceilings(&self.bounds, self.mu, Some(zeta));
        self.c_check = ceil.c_check;
        self.beta_check_max = ceil.beta_check_max;
        self.sigma_check_sq = Some(self.bounds.sigma_check_sq(zeta, w_reg.norm_squared()));
        self.zeta = Some(zeta);
        self.w_bar_reg = Some(w_reg);
        self.refresh_taus();
        Ok(self)
    }

    /// Enables projection onto the ball of radius `h`, which must exceed
    /// ||xi|| / mu.
    pub fn with_projection(mut self, h: f64) -> Result<Self> {
        let floor = self.radius_floor();
        if !(h > floor) {
            return Err(Error::InvalidParameter(format!(
                "projection radius {h} must exceed ||xi||/mu = {floor}"
            )));
        }
        self.h_radius = Some(h);
        self.refresh_taus();
        Ok(self)
    }

    fn refresh_taus(&mut self) {
        self.tau = self.h_radius.map(|h| self.bounds.tau(h));
        self.tau_check = self.zeta.zip(self.h_radius).map(|(z, h)| self.bounds.tau_check(z, h));
    }

    pub fn radius_floor(&self) -> f64 {
        self.xi.norm() / self.mu
    }

    /// 1.1 ||xi|| / mu.
    pub fn auto_radius(&self) -> f64 {
        1.1 * self.radius_floor()
    }

    pub fn w_bar_reg(&self) -> Result<&DVector<f64>> {
        self.w_bar_reg
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("regularization is not configured".into()))
    }

    /// Upper bound on ||w_reg - w_bar|| for the given zeta.
    pub fn drift_bound(&self, zeta: f64) -> f64 {
        drift_bound(zeta, self.xi.norm(), self.iota)
    }
}

/// zeta ||xi|| / (iota (zeta + iota)).
pub fn drift_bound(zeta: f64, xi_norm: f64, iota: f64) -> f64 {
    zeta * xi_norm / (iota * (zeta + iota))
}

/// Which finite-time bound to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    /// Mean-square error of the last iterate.
    T1Last,
    /// Mean-square error of the tail average.
    T2Tail,
    /// Mean-square error of the regularized tail average against w_bar.
    T3Reg(RegBoundForm),
    /// High-probability bound for the projected tail average.
    T4HighProb,
    /// High-probability bound for the projected regularized tail average
    /// against w_reg.
    T5RegHighProb,
}

/// The regularized mean-square bound is stated two ways: with mu and an
/// iota^-4 bias term, and with 2 mu + zeta and an iota^-2 (zeta+iota)^-2
/// bias term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum RegBoundForm {
    #[default]
    Statement,
    Expanded,
}

/// Run parameters for a bound evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParams {
    pub t: u64,
    pub k: u64,
    pub beta: f64,
    pub zeta: Option<f64>,
    pub delta: Option<f64>,
    /// E||w_0 - target||^2 (T1-T3).
    pub init_sq: f64,
    /// E||w_0 - target|| (T4, T5).
    pub init_norm: f64,
}

fn window(t: u64, k: u64) -> Result<f64> {
    if t <= k {
        return Err(Error::InvalidParameter(format!("tail window is empty (t={t}, k={k})")));
    }
    Ok((t - k) as f64)
}

pub fn bound_t1(beta: f64, mu: f64, sigma_sq: f64, t: u64, init_sq: f64) -> f64 {
    2.0 * (-beta * mu * t as f64).exp() * init_sq + 2.0 * beta * sigma_sq / mu
}

pub fn bound_t2(beta: f64, mu: f64, sigma_sq: f64, t: u64, k: u64, init_sq: f64) -> Result<f64> {
    let n = window(t, k)?;
    Ok(10.0 * (-(k as f64) * beta * mu).exp() * init_sq / (beta * beta * mu * mu * n * n)
        + 10.0 * sigma_sq / (mu * mu * n))
}

#[allow(clippy::too_many_arguments)]
pub fn bound_t3(
    form: RegBoundForm,
    beta: f64,
    mu: f64,
    zeta: f64,
    iota: f64,
    sigma_check_sq: f64,
    reward_term: f64,
    t: u64,
    k: u64,
    init_sq: f64,
) -> Result<f64> {
    let n = window(t, k)?;
    let k = k as f64;
    Ok(match form {
        RegBoundForm::Statement => {
            5.0 * (-k * beta * mu).exp() * init_sq / (beta * beta * mu * mu * n * n)
                + 5.0 * sigma_check_sq / (mu * mu * n)
                + 2.0 * reward_term / (iota.powi(4) * n)
        }
        RegBoundForm::Expanded => {
            let rate = 2.0 * mu + zeta;
            20.0 * (-k * beta * rate).exp() * init_sq / (beta * beta * rate * rate * n * n)
                + 20.0 * sigma_check_sq / (rate * rate * n)
                + 2.0 * zeta * zeta * reward_term / (iota * iota * (zeta + iota).powi(2))
        }
    })
}

/// Shared shape of the two high-probability bounds with contraction rate
/// `rate` (mu, or 2 mu + zeta).
pub fn bound_high_prob(beta: f64, rate: f64, tau: f64, delta: f64, t: u64, k: u64, init_norm: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1], got {delta}")));
    }
    let n = window(t, k)?;
    let sq = n.sqrt();
    Ok(2.0 * tau / (rate * sq) * (1.0 / delta).ln().sqrt()
        + 4.0 * (-(k as f64) * beta * rate).exp() * init_norm / (beta * rate * n)
        + 4.0 * tau / (rate * sq))
}

fn check_beta(beta: f64, ceiling: f64) -> Result<()> {
    if !(beta > 0.0) || beta > ceiling * (1.0 + CEILING_SLACK) {
        return Err(Error::StepSizeTooLarge { beta, ceiling });
    }
    Ok(())
}

/// Right-hand side of the selected bound for `system`. Fails when the step
/// size is outside the bound's regime or a needed quantity is missing.
pub fn theorem_bound(which: BoundKind, system: &CriticSystem, p: &BoundParams) -> Result<f64> {
    let b = &system.bounds;
    let reg = || -> Result<(f64, f64, f64)> {
        let zeta = p.zeta.or(system.zeta).ok_or_else(|| {
            Error::InvalidParameter("regularized bound needs zeta".into())
        })?;
        let w_reg = regularized_fixed_point(&system.m_mat, &system.xi, zeta)?;
        let ceiling = zeta / b.c_check(zeta);
        check_beta(p.beta, ceiling)?;
        Ok((zeta, w_reg.norm_squared(), ceiling))
    };
    match which {
        BoundKind::T1Last => {
            check_beta(p.beta, system.beta_max)?;
            Ok(bound_t1(p.beta, system.mu, system.sigma_sq, p.t, p.init_sq))
        }
        BoundKind::T2Tail => {
            check_beta(p.beta, system.beta_max)?;
            bound_t2(p.beta, system.mu, system.sigma_sq, p.t, p.k, p.init_sq)
        }
        BoundKind::T3Reg(form) => {
            let (zeta, w2, _) = reg()?;
            bound_t3(
                form,
                p.beta,
                system.mu,
                zeta,
                system.iota,
                b.sigma_check_sq(zeta, w2),
                b.reward_term(),
                p.t,
                p.k,
                p.init_sq,
            )
        }
        BoundKind::T4HighProb => {
            check_beta(p.beta, system.beta_max)?;
            let h = system.h_radius.ok_or(Error::MissingProjectionRadius)?;
            let delta = p.delta.unwrap_or(0.1);
            bound_high_prob(p.beta, system.mu, b.tau(h), delta, p.t, p.k, p.init_norm)
        }
        BoundKind::T5RegHighProb => {
            let h = system.h_radius.ok_or(Error::MissingProjectionRadius)?;
            let (zeta, _, _) = reg()?;
            let delta = p.delta.unwrap_or(0.1);
            bound_high_prob(
                p.beta,
                2.0 * system.mu + zeta,
                b.tau_check(zeta, h),
                delta,
                p.t,
                p.k,
                p.init_norm,
            )
        }
    }
}
