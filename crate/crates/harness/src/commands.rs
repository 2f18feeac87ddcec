//! The non-verification subcommands. Each takes a resolved config, writes
//! its CSVs into an [`OutputDir`] and returns a short text report.

use mvtd_core::actor::{run_mv_spsa_ac, ActorConfig};
use mvtd_core::critic::{estimate_statistics, CriticConfig, CriticProblem};
use mvtd_core::gradients::{
    exact_grad_j, exact_grad_u, exact_j, exact_u, finite_difference, gradient_bundle, lipschitz_constants,
    softmax_constants, MixingForm, SmoothnessInputs, SoftmaxPolicy,
};
use mvtd_core::mdp::{exact_square_value, exact_value, induced_chain, TransitionSampler};
use mvtd_core::system::{assemble_system, fixed_point, spectral_values, theorem_bound, BoundKind, BoundParams};
use nalgebra::DVector;

use crate::config::Resolved;
use crate::error::{HarnessError, Result};
use crate::instances::doeblin_constants;
use crate::manifest::{cell, Csv, OutputDir};

pub const CRITIC_HEADER: [&str; 8] = [
    "run_id",
    "t",
    "variant",
    "err_last",
    "err_tail",
    "bound_T1",
    "bound_T2",
    "projected_flag",
];

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

pub fn fixed_point_report(r: &Resolved, out: &mut OutputDir) -> Result<String> {
    let chain = induced_chain(&r.mdp, &r.policy)?;
    let gamma = r.mdp.gamma();
    let (m, xi) = assemble_system(&chain, &r.features, gamma)?;
    let w_bar = fixed_point(&m, &xi)?;
    let spec = spectral_values(&m);
    let v = exact_value(&chain, gamma)?;
    let u = exact_square_value(&chain, gamma, &v)?;
    let q = r.features.q;
    let v_hat = &r.features.phi_v * w_bar.rows(0, q);
    let u_hat = &r.features.phi_u * w_bar.rows(q, q);

    let mut csv = Csv::new(&["quantity", "index", "value"]);
    let mut push = |name: &str, i: usize, x: f64| csv.row(&[name.to_string(), i.to_string(), x.to_string()]);
    for (i, x) in w_bar.iter().enumerate() {
        push("w_bar", i, *x);
    }
    for s in 0..v.len() {
        push("v_exact", s, v[s]);
        push("u_exact", s, u[s]);
        push("v_approx", s, v_hat[s]);
        push("u_approx", s, u_hat[s]);
    }
    push("mu", 0, spec.mu);
    push("iota", 0, spec.iota);
    push("lambda_max", 0, spec.lambda_max);
    push("xi_norm", 0, xi.norm());
    let mut report = vec![
        format!("w_bar = {}", fmt_vec(&w_bar)),
        format!("mu = {:.6}  iota = {:.6}  lambda_max = {:.6}", spec.mu, spec.iota, spec.lambda_max),
        format!("V = {}  U = {}", fmt_vec(&v), fmt_vec(&u)),
        format!(
            "||Phi_v v_bar - V||_inf = {:.3e}  ||Phi_u u_bar - U||_inf = {:.3e}",
            (&v_hat - &v).amax(),
            (&u_hat - &u).amax()
        ),
    ];
    if let Some(sys) = &r.system {
        push("c", 0, sys.c_const);
        push("beta_max", 0, sys.beta_max);
        push("sigma_sq", 0, sys.sigma_sq);
        report.push(format!("c = {}  beta_max = {:.6e}  sigma^2 = {:.6}", sys.c_const, sys.beta_max, sys.sigma_sq));
    } else {
        report.push("mu <= 0: no admissible step size for plain TD".into());
    }
    out.write("fixed_point.csv", &csv.finish())?;
    Ok(report.join("\n"))
}

pub fn critic_run(r: &Resolved, out: &mut OutputDir) -> Result<String> {
    let spec = &r.config.critic;
    let chain = induced_chain(&r.mdp, &r.policy)?;
    let gamma = r.mdp.gamma();
    let (m, xi) = assemble_system(&chain, &r.features, gamma)?;
    let w_bar = fixed_point(&m, &xi)?;
    let beta = r.beta();
    let zeta = r.zeta();
    if !spec.override_step_size {
        let ceiling = match (zeta, &r.system) {
            (Some(z), _) => Some(z / mvtd_core::system::InstanceBounds::from_features(&r.features, gamma, r.mdp.r_max()).c_check(z)),
            (None, Some(sys)) => Some(sys.beta_max),
            (None, None) => None,
        };
        match ceiling {
            Some(c) if beta > c * (1.0 + 1e-12) => {
                return Err(mvtd_core::Error::StepSizeTooLarge { beta, ceiling: c }.into())
            }
            None => return Err(mvtd_core::system::spectral_constants(&m).unwrap_err().into()),
            _ => {}
        }
    }
    let sampler = TransitionSampler::new(&r.mdp, &r.policy, &chain)?;
    let problem = CriticProblem {
        sampler: &sampler,
        features: &r.features,
        gamma,
    };
    let mut cfg = CriticConfig::new(spec.t, r.k(), beta, r.config.seed);
    cfg.zeta = zeta;
    cfg.h_radius = r.h();
    cfg.checkpoints = spec.checkpoints.clone().unwrap_or_default();
    cfg.override_step_size = spec.override_step_size;
    let stats = estimate_statistics(&problem, &cfg, &w_bar, spec.replications, spec.delta)?;

    let init_sq = w_bar.norm_squared();
    let bound = |kind: BoundKind, t: u64| -> Option<f64> {
        let sys = r.system.as_ref()?;
        if zeta.is_some() {
            return None;
        }
        let p = BoundParams {
            t,
            k: t / 2,
            beta,
            zeta: None,
            delta: Some(spec.delta),
            init_sq,
            init_norm: init_sq.sqrt(),
        };
        theorem_bound(kind, sys, &p).ok()
    };
    let variant = cfg.variant();
    let mut csv = Csv::new(&CRITIC_HEADER);
    for (run_id, run) in stats.runs.iter().enumerate() {
        for pt in &run.trace {
            csv.row(&[
                run_id.to_string(),
                pt.t.to_string(),
                variant.to_string(),
                pt.err_last_sq.to_string(),
                pt.err_tail_sq.to_string(),
                cell(bound(BoundKind::T1Last, pt.t)),
                cell(bound(BoundKind::T2Tail, pt.t)),
                u8::from(pt.projected_steps > 0).to_string(),
            ]);
        }
    }
    out.write("critic.csv", &csv.finish())?;

    let mut summary = Csv::new(&[
        "t",
        "mse_last",
        "se_last",
        "mse_tail",
        "se_tail",
        "quantile_last",
        "quantile_tail",
        "projected_fraction",
        "bound_T1",
        "bound_T2",
    ]);
    let mut report = vec![format!(
        "{variant} TD: t = {}, k = {}, beta = {beta:.6e}, {} replications",
        spec.t,
        r.k(),
        spec.replications
    )];
    for cp in &stats.checkpoints {
        let (b1, b2) = (bound(BoundKind::T1Last, cp.t), bound(BoundKind::T2Tail, cp.t));
        summary.row(&[
            cp.t.to_string(),
            cp.mse_last.to_string(),
            cp.se_last.to_string(),
            cp.mse_tail.to_string(),
            cp.se_tail.to_string(),
            cp.quantile_last.to_string(),
            cp.quantile_tail.to_string(),
            cp.projected_fraction.to_string(),
            cell(b1),
            cell(b2),
        ]);
    }
    if let Some(last) = stats.checkpoints.last() {
        report.push(format!(
            "t = {}: MSE last {:.4e} (se {:.1e}), MSE tail {:.4e} (se {:.1e})",
            last.t, last.mse_last, last.se_last, last.mse_tail, last.se_tail
        ));
    }
    let finals: Vec<f64> = stats.final_tail_errors.clone();
    report.push(format!(
        "full-window tail error (k, t]: mean {:.4e}",
        mvtd_core::stats::mean(&finals)
    ));
    out.write("critic_summary.csv", &summary.finish())?;
    Ok(report.join("\n"))
}

pub fn actor_header(d: usize) -> Vec<String> {
    let mut h = vec!["iter".to_string()];
    h.extend((0..d).map(|i| format!("theta_{i}")));
    h.extend(
        ["grad_norm_sq_exact", "j_hat", "u_hat", "critic_err_base", "critic_err_pert"].map(String::from),
    );
    h
}

pub fn actor_csv(result: &mvtd_core::actor::ActorResult, d: usize) -> String {
    let mut csv = Csv::new(&actor_header(d));
    for rec in &result.records {
        let mut row = vec![rec.iter.to_string()];
        row.extend(rec.theta.iter().map(f64::to_string));
        row.extend([rec.grad_norm_sq_exact, rec.j_hat, rec.u_hat, rec.critic_err_base, rec.critic_err_pert].map(|x| x.to_string()));
        csv.row(&row);
    }
    csv.finish()
}

pub fn actor_run(r: &Resolved, out: &mut OutputDir) -> Result<String> {
    let spec = &r.config.actor;
    let template = SoftmaxPolicy::new(
        DVector::zeros(spec.action_features.build(&r.mdp)?.dim()),
        spec.action_features.build(&r.mdp)?,
    )?;
    let d = template.dim();
    let mut summary_header = vec!["replication".to_string(), "seed".to_string(), "r_index".to_string()];
    summary_header.extend((0..d).map(|i| format!("theta_r_{i}")));
    summary_header.extend(["grad_norm_sq_at_r", "final_j", "final_variance"].map(String::from));
    let mut summary = Csv::new(&summary_header);
    let mut report = Vec::new();
    for rep in 0..spec.replications {
        let seed = mvtd_core::stats::derive_seed(r.config.seed, rep as u64);
        let mut cfg = ActorConfig::with_schedule(spec.n, spec.lambda, spec.s0, seed, spec.critic_step);
        cfg.theta0 = spec.theta0.as_ref().map(|t| DVector::from_column_slice(t));
        let result = run_mv_spsa_ac(&r.mdp, &template, &r.features, &cfg)?;
        let fin = gradient_bundle(&r.mdp, &template.with_theta(result.theta_final.clone()), spec.s0, spec.lambda, 0.0)?;
        let name = if spec.replications == 1 {
            "actor.csv".to_string()
        } else {
            format!("actor_{rep:03}.csv")
        };
        out.write(&name, &actor_csv(&result, d))?;
        let mut row = vec![rep.to_string(), seed.to_string(), result.r_index.to_string()];
        row.extend(result.theta_r.iter().map(f64::to_string));
        row.extend([result.grad_norm_trace[result.r_index], fin.j, fin.variance()].map(|x| x.to_string()));
        summary.row(&row);
        report.push(format!(
            "replication {rep}: theta_R = {} (iteration {}), ||grad L(theta_R)||^2 = {:.4e}, final J = {:.4}, final variance = {:.4}",
            fmt_vec(&result.theta_r),
            result.r_index + 1,
            result.grad_norm_trace[result.r_index],
            fin.j,
            fin.variance()
        ));
    }
    out.write("actor_summary.csv", &summary.finish())?;
    Ok(report.join("\n"))
}

/// Relative error with an absolute floor for near-zero gradients.
pub fn relative_error(approx: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    (approx - exact).norm() / exact.norm().max(1e-8)
}

pub fn grad_check_run(r: &Resolved, out: &mut OutputDir, h: f64) -> Result<String> {
    let policy = r.softmax.as_ref().ok_or_else(|| {
        HarnessError::ConstraintViolation("grad-check needs policy.kind = \"softmax\"".into())
    })?;
    let s0 = r.config.actor.s0;
    let lambda = r.config.actor.lambda;
    let mdp = &r.mdp;
    let gj = exact_grad_j(mdp, policy, s0)?;
    let gu = exact_grad_u(mdp, policy, s0)?;
    let fj = finite_difference(|th| exact_j(mdp, &policy.with_theta(th.clone()), s0), &policy.theta, h)?;
    let fu = finite_difference(|th| exact_u(mdp, &policy.with_theta(th.clone()), s0), &policy.theta, h)?;
    let bundle = gradient_bundle(mdp, policy, s0, lambda, 0.0)?;
    let mut csv = Csv::new(&["component", "grad_j", "fd_grad_j", "grad_u", "fd_grad_u", "grad_l"]);
    for i in 0..gj.len() {
        csv.row(&[i.to_string(), gj[i].to_string(), fj[i].to_string(), gu[i].to_string(), fu[i].to_string(), bundle.grad_l[i].to_string()]);
    }
    out.write("grad_check.csv", &csv.finish())?;
    let mut report = vec![
        format!("grad J = {}  relative error vs central differences {:.3e}", fmt_vec(&gj), relative_error(&fj, &gj)),
        format!("grad U = {}  relative error vs central differences {:.3e}", fmt_vec(&gu), relative_error(&fu, &gu)),
    ];
    let (c_psi, l_psi, c_pi) = softmax_constants(&policy.features);
    match doeblin_constants(mdp) {
        Some((kappa, rho)) => {
            let k = lipschitz_constants(&SmoothnessInputs {
                r_max: mdp.r_max(),
                gamma: mdp.gamma(),
                c_psi,
                l_psi,
                c_pi,
                kappa,
                rho,
                lambda,
                form: MixingForm::Half,
            })?;
            report.push(format!(
                "||grad J|| = {:.4} <= {:.4};  ||grad L|| = {:.4} <= K1 = {:.4};  L_o = {:.4}",
                gj.norm(),
                k.grad_j_bound,
                bundle.grad_l.norm(),
                k.k1,
                k.l_o
            ));
        }
        None => report.push("no uniform minorization: smoothness constants unavailable".into()),
    }
    Ok(report.join("\n"))
}
