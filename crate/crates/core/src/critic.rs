//! Mean-variance TD learners (plain, regularized, projected) with tail
//! averaging, and Monte-Carlo estimators over independent replications.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::mdp::{induced_chain, Mdp, TabularPolicy, Transition, TransitionSampler};
use crate::stats;
use crate::system::{sampled_system, CriticSystem};

/// Gamma(w) = w min(1, H / ||w||).
pub fn project(w: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut out = w.clone();
    project_in_place(&mut out, h);
    out
}

/// In-place projection; returns whether `w` was rescaled. Norms within a
/// few ulps of `h` count as inside, which keeps the map idempotent.
pub fn project_in_place(w: &mut DVector<f64>, h: f64) -> bool {
    let norm = w.norm();
    if norm > h * (1.0 + 4.0 * f64::EPSILON) {
        *w *= h / norm;
        true
    } else {
        false
    }
}

/// Running mean of the iterates with index in (k, t].
#[derive(Clone, Debug, PartialEq)]
pub struct TailAverager {
    k: u64,
    seen: u64,
    count: u64,
    sum: Vec<f64>,
}

impl TailAverager {
    pub fn new(k: u64, dim: usize) -> Self {
        Self {
            k,
            seen: 0,
            count: 0,
            sum: vec![0.0; dim],
        }
    }

    /// Records the next iterate w_{seen+1}.
    pub fn push(&mut self, w: &[f64]) {
        self.seen += 1;
        if self.seen > self.k {
            self.count += 1;
            for (s, x) in self.sum.iter_mut().zip(w) {
                *s += x;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn average(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| self.sum.iter().map(|s| s / self.count as f64).collect())
    }
}

/// Iterate w = (v, u) of a critic together with its hyper-parameters.
#[derive(Clone, Debug)]
pub struct CriticState {
    pub w: DVector<f64>,
    pub q: usize,
    pub step: u64,
    pub beta: f64,
    pub zeta: Option<f64>,
    pub h_radius: Option<f64>,
    pub tail: TailAverager,
}

impl CriticState {
    pub fn new(w0: DVector<f64>, beta: f64, zeta: Option<f64>, h_radius: Option<f64>, tail_k: u64) -> Self {
        let q = w0.len() / 2;
        let tail = TailAverager::new(tail_k, w0.len());
        Self {
            w: w0,
            q,
            step: 0,
            beta,
            zeta,
            h_radius,
            tail,
        }
    }

    pub fn v(&self) -> DVector<f64> {
        self.w.rows(0, self.q).into_owned()
    }

    pub fn u(&self) -> DVector<f64> {
        self.w.rows(self.q, self.q).into_owned()
    }

    /// One TD update on `tr` (regularized when `zeta` is set), followed by
    /// projection and tail bookkeeping. Returns whether projection fired.
    pub fn advance(&mut self, tr: &Transition, features: &FeatureSet, gamma: f64) -> bool {
        let q = self.q;
        let fv = features.phi_v_row(tr.s).as_slice();
        let fv_next = features.phi_v_row(tr.s_next).as_slice();
        let fu = features.phi_u_row(tr.s).as_slice();
        let fu_next = features.phi_u_row(tr.s_next).as_slice();
        let w = self.w.as_mut_slice();
        let (v, u) = w.split_at_mut(q);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let v_s = dot(v, fv);
        let v_next = dot(v, fv_next);
        let u_s = dot(u, fu);
        let u_next = dot(u, fu_next);
        let r = tr.r;
        let delta = r + gamma * v_next - v_s;
        let eps = r * r + 2.0 * gamma * r * v_next + gamma * gamma * u_next - u_s;
        let shrink = 1.0 - self.beta * self.zeta.unwrap_or(0.0);
        let (bd, be) = (self.beta * delta, self.beta * eps);
        for i in 0..q {
            v[i] = shrink * v[i] + bd * fv[i];
            u[i] = shrink * u[i] + be * fu[i];
        }
        let projected = match self.h_radius {
            Some(h) => project_in_place(&mut self.w, h),
            None => false,
        };
        self.step += 1;
        self.tail.push(self.w.as_slice());
        projected
    }

    /// Same update through the matrix form w + beta (b_t - (zeta I + M_t) w).
    pub fn advance_matrix_form(&mut self, tr: &Transition, features: &FeatureSet, gamma: f64) -> bool {
        let (m_t, b_t) = sampled_system(tr, features, gamma);
        let n = self.w.len();
        let a = m_t + DMatrix::identity(n, n) * self.zeta.unwrap_or(0.0);
        self.w = &self.w + (b_t - a * &self.w) * self.beta;
        let projected = match self.h_radius {
            Some(h) => project_in_place(&mut self.w, h),
            None => false,
        };
        self.step += 1;
        self.tail.push(self.w.as_slice());
        projected
    }

    /// Tail average, or the current iterate when the window is empty.
    pub fn tail_average(&self) -> DVector<f64> {
        match self.tail.average() {
            Some(avg) => DVector::from_vec(avg),
            None => self.w.clone(),
        }
    }
}

/// Plain TD step (`state.zeta` must be unset).
pub fn td_step(state: &mut CriticState, tr: &Transition, features: &FeatureSet, gamma: f64) -> Result<bool> {
    if state.zeta.is_some() {
        return Err(Error::InvalidParameter("td_step called on a regularized state".into()));
    }
    Ok(state.advance(tr, features, gamma))
}

/// Regularized TD step (`state.zeta` must be set).
pub fn td_step_regularized(
    state: &mut CriticState,
    tr: &Transition,
    features: &FeatureSet,
    gamma: f64,
) -> Result<bool> {
    match state.zeta {
        Some(z) if z >= 0.0 => Ok(state.advance(tr, features, gamma)),
        _ => Err(Error::InvalidParameter("regularized step needs zeta >= 0".into())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    pub t: u64,
    pub k: u64,
    pub beta: f64,
    pub zeta: Option<f64>,
    pub h_radius: Option<f64>,
    pub seed: u64,
    /// Steps at which the error against the target is recorded. The tail
    /// error at checkpoint c averages the iterates in (c/2, c].
    pub checkpoints: Vec<u64>,
    pub w0: Option<DVector<f64>>,
    /// Skip the step-size ceiling check in [`run_critic`].
    pub override_step_size: bool,
}

impl CriticConfig {
    pub fn new(t: u64, k: u64, beta: f64, seed: u64) -> Self {
        Self {
            t,
            k,
            beta,
            zeta: None,
            h_radius: None,
            seed,
            checkpoints: Vec::new(),
            w0: None,
            override_step_size: false,
        }
    }

    pub fn variant(&self) -> &'static str {
        match (self.zeta.is_some(), self.h_radius.is_some()) {
            (false, false) => "plain",
            (true, false) => "regularized",
            (false, true) => "projected",
            (true, true) => "regularized-projected",
        }
    }

    fn validate(&self, q: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {}", self.beta)));
        }
        if self.k > self.t {
            return Err(Error::InvalidParameter(format!("tail index k={} exceeds t={}", self.k, self.t)));
        }
        if let Some(z) = self.zeta {
            if !(z > 0.0) {
                return Err(Error::InvalidParameter(format!("zeta must be positive, got {z}")));
            }
        }
        if let Some(h) = self.h_radius {
            if !(h > 0.0) {
                return Err(Error::InvalidParameter(format!("projection radius must be positive, got {h}")));
            }
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.t) {
            return Err(Error::InvalidParameter(format!("checkpoint {c} outside 1..={}", self.t)));
        }
        if let Some(w0) = &self.w0 {
            if w0.len() != 2 * q {
                return Err(Error::DimensionMismatch(format!("w0 has length {}, expected {}", w0.len(), 2 * q)));
            }
        }
        Ok(())
    }
}

/// Powers of two up to and including `t_max`.
pub fn geometric_checkpoints(t_max: u64) -> Vec<u64> {
    std::iter::successors(Some(1u64), |c| c.checked_mul(2))
        .take_while(|&c| c <= t_max)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub t: u64,
    /// ||w_t - target||^2.
    pub err_last_sq: f64,
    /// ||w_{t/2+1:t} - target||^2.
    pub err_tail_sq: f64,
    pub projected_steps: u64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub w_final: DVector<f64>,
    pub w_tail: DVector<f64>,
    /// Set when t = k, in which case `w_tail` is the last iterate.
    pub tail_empty: bool,
    pub trace: Vec<TracePoint>,
    pub projected_steps: u64,
    pub seed: u64,
}

/// Sampling source and features for one critic instance.
#[derive(Clone, Copy)]
pub struct CriticProblem<'a> {
    pub sampler: &'a TransitionSampler,
    pub features: &'a FeatureSet,
    pub gamma: f64,
}

/// Runs `config.t` steps without any step-size regime check.
pub fn simulate(problem: &CriticProblem<'_>, config: &CriticConfig, target: Option<&DVector<f64>>) -> Result<RunResult> {
    let q = problem.features.q;
    config.validate(q)?;
    if !config.checkpoints.is_empty() && target.is_none() {
        return Err(Error::InvalidParameter("checkpoints need a target".into()));
    }
    if let Some(t) = target {
        if t.len() != 2 * q {
            return Err(Error::DimensionMismatch("target dimension".into()));
        }
    }
    let w0 = config.w0.clone().unwrap_or_else(|| DVector::zeros(2 * q));
    let mut state = CriticState::new(w0, config.beta, config.zeta, config.h_radius, config.k);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut checkpoints = config.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut marks: BTreeMap<u64, Option<DVector<f64>>> = BTreeMap::new();
    for &c in &checkpoints {
        marks.insert(c / 2, None);
        marks.insert(c, None);
    }
    let mut prefix = DVector::zeros(2 * q);
    if let Some(slot) = marks.get_mut(&0) {
        *slot = Some(prefix.clone());
    }
    let mut projected_at = BTreeMap::new();
    let mut projected_steps = 0u64;
    for step in 1..=config.t {
        let tr = problem.sampler.sample(&mut rng);
        if state.advance(&tr, problem.features, problem.gamma) {
            projected_steps += 1;
        }
        if !marks.is_empty() {
            prefix += &state.w;
            if let Some(slot) = marks.get_mut(&step) {
                *slot = Some(prefix.clone());
                projected_at.insert(step, (state.w.clone(), projected_steps));
            }
        }
    }
    let trace = checkpoints
        .iter()
        .map(|&c| {
            let target = target.expect("checked above");
            let hi = marks[&c].as_ref().expect("recorded");
            let lo = marks[&(c / 2)].as_ref().expect("recorded");
            let tail = (hi - lo) / (c - c / 2) as f64;
            let (w_c, proj) = &projected_at[&c];
            TracePoint {
                t: c,
                err_last_sq: (w_c - target).norm_squared(),
                err_tail_sq: (tail - target).norm_squared(),
                projected_steps: *proj,
            }
        })
        .collect();
    Ok(RunResult {
        w_tail: state.tail_average(),
        tail_empty: state.tail.count() == 0,
        w_final: state.w,
        trace,
        projected_steps,
        seed: config.seed,
    })
}

/// Runs the critic for `policy` on `mdp`. Unless overridden, the step size
/// must respect beta_max (plain) or zeta / c_check (regularized).
pub fn run_critic(
    mdp: &Mdp,
    policy: &TabularPolicy,
    features: &FeatureSet,
    config: &CriticConfig,
    target: Option<&DVector<f64>>,
) -> Result<RunResult> {
    let chain = induced_chain(mdp, policy)?;
    if !config.override_step_size {
        let system = CriticSystem::new(&chain, features, mdp.gamma(), mdp.r_max())?;
        let ceiling = match config.zeta {
            Some(z) => z / system.bounds.c_check(z),
            None => system.beta_max,
        };
        if config.beta > ceiling * (1.0 + 1e-12) {
            return Err(Error::StepSizeTooLarge {
                beta: config.beta,
                ceiling,
            });
        }
    }
    let sampler = TransitionSampler::new(mdp, policy, &chain)?;
    let problem = CriticProblem {
        sampler: &sampler,
        features,
        gamma: mdp.gamma(),
    };
    simulate(&problem, config, target)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointStats {
    pub t: u64,
    pub mse_last: f64,
    pub se_last: f64,
    pub mse_tail: f64,
    pub se_tail: f64,
    /// Upper (1 - delta) order statistic of ||w_t - target||.
    pub quantile_last: f64,
    /// Upper (1 - delta) order statistic of the tail error norm.
    pub quantile_tail: f64,
    pub projected_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Statistics {
    pub checkpoints: Vec<CheckpointStats>,
    /// Errors of the full-window tail average (k, t] per replication.
    pub final_tail_errors: Vec<f64>,
    pub runs: Vec<RunResult>,
}

/// Replications with seeds derived from `config.seed`.
pub fn estimate_statistics(
    problem: &CriticProblem<'_>,
    config: &CriticConfig,
    target: &DVector<f64>,
    replications: usize,
    delta: f64,
) -> Result<Statistics> {
    let seeds: Vec<u64> = (0..replications as u64).map(|i| stats::derive_seed(config.seed, i)).collect();
    estimate_statistics_with_seeds(problem, config, target, &seeds, delta)
}

/// Replications with explicit seeds; duplicated seeds are rejected.
pub fn estimate_statistics_with_seeds(
    problem: &CriticProblem<'_>,
    config: &CriticConfig,
    target: &DVector<f64>,
    seeds: &[u64],
    delta: f64,
) -> Result<Statistics> {
    if seeds.len() < 2 {
        return Err(Error::InvalidParameter("at least two replications are required".into()));
    }
    if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
        return Err(Error::SeedCollision);
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!("delta must lie in [0, 1], got {delta}")));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = CriticConfig {
                seed,
                ..config.clone()
            };
            simulate(problem, &cfg, Some(target))
        })
        .collect::<Result<Vec<_>>>()?;
    let level = 1.0 - delta;
    let checkpoints = runs[0]
        .trace
        .iter()
        .enumerate()
        .map(|(i, point)| {
            let last: Vec<f64> = runs.iter().map(|r| r.trace[i].err_last_sq).collect();
            let tail: Vec<f64> = runs.iter().map(|r| r.trace[i].err_tail_sq).collect();
            let norms = |xs: &[f64]| xs.iter().map(|x| x.sqrt()).collect::<Vec<_>>();
            let projected: u64 = runs.iter().map(|r| r.trace[i].projected_steps).sum();
            CheckpointStats {
                t: point.t,
                mse_last: stats::mean(&last),
                se_last: stats::std_error(&last),
                mse_tail: stats::mean(&tail),
                se_tail: stats::std_error(&tail),
                quantile_last: stats::upper_quantile(&norms(&last), level),
                quantile_tail: stats::upper_quantile(&norms(&tail), level),
                projected_fraction: projected as f64 / (point.t as f64 * runs.len() as f64),
            }
        })
        .collect();
    let final_tail_errors = runs.iter().map(|r| (&r.w_tail - target).norm()).collect();
    Ok(Statistics {
        checkpoints,
        final_tail_errors,
        runs,
    })
}
