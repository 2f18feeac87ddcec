//! Linear features for the value and square-value critics and the
//! chi-weighted projections onto their spans.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mdp::OnPolicyChain;

/// Smallest singular value a feature matrix may have.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub phi_v: DMatrix<f64>,
    pub phi_u: DMatrix<f64>,
    pub q: usize,
    pub phi_v_max: f64,
    pub phi_u_max: f64,
    pub pi_v: DMatrix<f64>,
    pub pi_u: DMatrix<f64>,
    rows_v: Vec<DVector<f64>>,
    rows_u: Vec<DVector<f64>>,
}

impl FeatureSet {
    pub fn num_states(&self) -> usize {
        self.phi_v.nrows()
    }

    /// phi_v(s) as a column vector.
    pub fn phi_v_row(&self, s: usize) -> &DVector<f64> {
        &self.rows_v[s]
    }

    pub fn phi_u_row(&self, s: usize) -> &DVector<f64> {
        &self.rows_u[s]
    }
}

fn max_row_norm(phi: &DMatrix<f64>) -> f64 {
    phi.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

fn check_rank(phi: &DMatrix<f64>) -> Result<()> {
    let smallest = phi
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if phi.ncols() > phi.nrows() || !(smallest > RANK_TOLERANCE) {
        return Err(Error::RankDeficient {
            smallest_singular: if phi.ncols() > phi.nrows() { 0.0 } else { smallest },
        });
    }
    Ok(())
}

/// Pi = Phi (Phi^T D Phi)^{-1} Phi^T D.
pub fn weighted_projection(phi: &DMatrix<f64>, chi: &DVector<f64>) -> Result<DMatrix<f64>> {
    let dphi = DMatrix::from_diagonal(chi) * phi;
    let gram = phi.transpose() * &dphi;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("Phi^T D Phi".into()))?;
    Ok(phi * inv * dphi.transpose())
}

pub fn build_feature_set(
    phi_v: DMatrix<f64>,
    phi_u: DMatrix<f64>,
    chain: &OnPolicyChain,
) -> Result<FeatureSet> {
    let n = chain.num_states();
    if phi_v.nrows() != n || phi_u.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "feature matrices have {} and {} rows, chain has {n} states",
            phi_v.nrows(),
            phi_u.nrows()
        )));
    }
    if phi_v.ncols() != phi_u.ncols() || phi_v.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "value and square-value features need the same positive width (got {} and {})",
            phi_v.ncols(),
            phi_u.ncols()
        )));
    }
    check_rank(&phi_v)?;
    check_rank(&phi_u)?;
    let pi_v = weighted_projection(&phi_v, &chain.chi)?;
    let pi_u = weighted_projection(&phi_u, &chain.chi)?;
    let rows_v = phi_v.row_iter().map(|r| r.transpose()).collect();
    let rows_u = phi_u.row_iter().map(|r| r.transpose()).collect();
    Ok(FeatureSet {
        q: phi_v.ncols(),
        phi_v_max: max_row_norm(&phi_v),
        phi_u_max: max_row_norm(&phi_u),
        phi_v,
        phi_u,
        pi_v,
        pi_u,
        rows_v,
        rows_u,
    })
}

/// Tabular features: Phi_v = Phi_u = I.
pub fn identity_features(chain: &OnPolicyChain) -> Result<FeatureSet> {
    let n = chain.num_states();
    build_feature_set(DMatrix::identity(n, n), DMatrix::identity(n, n), chain)
}

/// Gaussian |S| x q matrix with orthonormalized columns (thin QR).
pub fn random_orthonormal<R: Rng + ?Sized>(num_states: usize, q: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if q == 0 || q > num_states {
        return Err(Error::DimensionMismatch(format!(
            "feature width {q} must lie in 1..={num_states}"
        )));
    }
    let g = DMatrix::from_fn(num_states, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(g.qr().q())
}

/// Nested-array features `rows[s][j]`.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let q = rows.first().map_or(0, Vec::len);
    if n == 0 || q == 0 || rows.iter().any(|r| r.len() != q) {
        return Err(Error::DimensionMismatch("feature rows must be non-empty and equal length".into()));
    }
    Ok(DMatrix::from_fn(n, q, |i, j| rows[i][j]))
}
