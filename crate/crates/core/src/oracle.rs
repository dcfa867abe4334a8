//! Independent numerical ground truth: the Hessian assembled as a dense
//! matrix in a fixed coordinate basis, its symmetric eigendecomposition, and
//! finite-difference checks of the derivative formulas.
//!
//! Basis ordering: the entries of G in column-major order, followed by the
//! entries of H in column-major order (see [`TangentPair::flatten`]).

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{gradient, hessian_apply_with_residual, second_derivative};
use crate::error::{Error, Result};
use crate::model::{evaluate_j, DataMatrixSvd, FactorPair, TangentPair};
use crate::orbit::GroupElement;
use crate::sampling::{gaussian_matrix, rng};

/// Largest k(m + n) the dense oracle will assemble.
pub const MAX_DENSE_DIM: usize = 5000;

pub const FD_GRAD_STEP: f64 = 1e-5;
pub const FD_SECOND_STEP: f64 = 1e-4;
pub const FD_GRAD_TOL: f64 = 1e-6;
pub const FD_SECOND_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct DenseHessian {
    pub matrix: DMatrix<f64>,
    /// ||M - M^T||_F / ||M||_F before symmetrization.
    pub asymmetry: f64,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl DenseHessian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, d: &TangentPair) -> TangentPair {
        let v = nalgebra::DVector::from_vec(d.flatten());
        let out = &self.matrix * v;
        TangentPair::unflatten(out.as_slice(), self.m, self.k, self.n)
    }
}

fn basis_tangent(c: usize, m: usize, k: usize, n: usize) -> TangentPair {
    let mut coords = vec![0.0; k * (m + n)];
    coords[c] = 1.0;
    TangentPair::unflatten(&coords, m, k, n)
}

pub fn dense_hessian(x: &DataMatrixSvd, p: &FactorPair) -> Result<DenseHessian> {
    x.check_pair(p)?;
    let (m, k, n) = (x.m(), p.k(), x.n());
    let dim = k * (m + n);
    if dim > MAX_DENSE_DIM {
        return Err(Error::TooLarge { dim, limit: MAX_DENSE_DIM });
    }
    let e = p.residual(x.x());
    let cols: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|c| hessian_apply_with_residual(p, &e, &basis_tangent(c, m, k, n)).flatten())
        .collect();
    let mut raw = DMatrix::zeros(dim, dim);
    for (c, col) in cols.iter().enumerate() {
        raw.column_mut(c).copy_from_slice(col);
    }
    let nrm = raw.norm();
    let asymmetry = if nrm > 0.0 { (&raw - raw.transpose()).norm() / nrm } else { 0.0 };
    let matrix = (&raw + raw.transpose()) * 0.5;
    Ok(DenseHessian { matrix, asymmetry, m, k, n })
}

#[derive(Debug, Clone)]
pub struct NumericSpectrum {
    /// Ascending.
    pub values: Vec<f64>,
    /// Unit eigenvectors as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

impl NumericSpectrum {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }
}

pub fn numeric_spectrum(h: &DenseHessian) -> Result<NumericSpectrum> {
    symmetric_spectrum(&h.matrix)
}

/// Ascending eigendecomposition of a symmetric matrix with a reconstruction
/// check.
pub fn symmetric_spectrum(a: &DMatrix<f64>) -> Result<NumericSpectrum> {
    let dim = a.nrows();
    if dim == 0 {
        return Ok(NumericSpectrum { values: Vec::new(), vectors: DMatrix::zeros(0, 0) });
    }
    let eig = nalgebra::SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(dim, dim);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    let rebuilt = &vectors * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(values.clone())) * vectors.transpose();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let resid = (rebuilt - a).norm() / scale;
    if resid > 1e-9 {
        return Err(Error::NumericalFailure(format!("eigendecomposition residual {resid:.3e}")));
    }
    Ok(NumericSpectrum { values, vectors })
}

/// Matrix of the linear map L_A on directions, in the oracle basis.
pub fn operator_matrix(g: &GroupElement, m: usize, n: usize) -> DMatrix<f64> {
    let k = g.k();
    let dim = k * (m + n);
    let mut out = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let moved = g.transport(&basis_tangent(c, m, k, n)).expect("basis matches k");
        out.column_mut(c).copy_from_slice(&moved.flatten());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub trials: usize,
    pub seed: u64,
    pub max_gradient_rel_err: f64,
    pub max_second_rel_err: f64,
    pub gradient_pass: bool,
    pub second_pass: bool,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.gradient_pass && self.second_pass
    }
}

fn random_unit_direction<R: Rng + ?Sized>(r: &mut R, m: usize, k: usize, n: usize) -> TangentPair {
    TangentPair::new(gaussian_matrix(r, m, k), gaussian_matrix(r, k, n)).normalized()
}

/// Compares central differences of J against the gradient and the second
/// derivative along `trials` random unit directions.
pub fn fd_validate(x: &DataMatrixSvd, p: &FactorPair, trials: usize, seed: u64) -> Result<FdReport> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    x.check_pair(p)?;
    let (m, k, n) = (x.m(), p.k(), x.n());
    let mut r = rng(seed);
    let j0 = evaluate_j(x, p)?;
    let grad = gradient(x, p)?;
    let gnorm = grad.norm();
    let j_scale = j0.abs().max(1.0);
    let mut worst_g = 0.0f64;
    let mut worst_h = 0.0f64;
    for _ in 0..trials {
        let d = random_unit_direction(&mut r, m, k, n);

        let h = FD_GRAD_STEP;
        let fd = (evaluate_j(x, &p.offset(&d, h))? - evaluate_j(x, &p.offset(&d, -h))?) / (2.0 * h);
        let an = grad.inner(&d);
        worst_g = worst_g.max((fd - an).abs() / gnorm.max(1e-4 * j_scale));

        let t = FD_SECOND_STEP;
        let fd2 = (evaluate_j(x, &p.offset(&d, t))? - 2.0 * j0 + evaluate_j(x, &p.offset(&d, -t))?) / (t * t);
        let an2 = second_derivative(x, p, &d)?;
        let hd = crate::calculus::hessian_apply(x, p, &d)?.norm();
        worst_h = worst_h.max((fd2 - an2).abs() / an2.abs().max(hd).max(1e-2 * j_scale));
    }
    Ok(FdReport {
        trials,
        seed,
        max_gradient_rel_err: worst_g,
        max_second_rel_err: worst_h,
        gradient_pass: worst_g < FD_GRAD_TOL,
        second_pass: worst_h < FD_SECOND_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::hessian_apply;
    use crate::canonical::{build_canonical, Selection};
    use crate::model::DEFAULT_RANK_TOL;

    fn diag(m: usize, n: usize, d: &[f64]) -> DataMatrixSvd {
        let mut x = DMatrix::zeros(m, n);
        for (i, v) in d.iter().enumerate() {
            x[(i, i)] = *v;
        }
        DataMatrixSvd::load(&x, DEFAULT_RANK_TOL).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn scalar_point_gives_identity() {
        let x = DataMatrixSvd::load(&DMatrix::from_element(1, 1, 2.0), DEFAULT_RANK_TOL).unwrap();
        let p = FactorPair::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0));
        let h = dense_hessian(&x, &p).unwrap();
        assert_eq!(h.matrix, DMatrix::identity(2, 2));
        assert_close(&numeric_spectrum(&h).unwrap().values, &[1.0, 1.0], 1e-15);
    }

    #[test]
    fn dimension_is_k_times_m_plus_n() {
        let x = diag(2, 3, &[2.0, 1.0]);
        let h = dense_hessian(&x, &FactorPair::zeros(2, 1, 3)).unwrap();
        assert_eq!(h.dim(), 5);
        assert_close(&numeric_spectrum(&h).unwrap().values, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1e-12);
    }

    #[test]
    fn canonical_second_pair_spectrum() {
        let x = diag(2, 3, &[2.0, 1.0]);
        let cp = build_canonical(&x, &Selection::new(vec![1], 2).unwrap(), 1, &DMatrix::zeros(0, 0)).unwrap();
        let h = dense_hessian(&x, &cp.materialize()).unwrap();
        assert_close(&numeric_spectrum(&h).unwrap().values, &[-1.0, 0.0, 1.0, 2.0, 3.0], 1e-12);
    }

    #[test]
    fn random_point_is_nearly_symmetric_and_matches_apply() {
        let mut r = rng(12);
        let x = DataMatrixSvd::load(&gaussian_matrix(&mut r, 3, 4), DEFAULT_RANK_TOL).unwrap();
        let p = FactorPair::new(gaussian_matrix(&mut r, 3, 2), gaussian_matrix(&mut r, 2, 4));
        let h = dense_hessian(&x, &p).unwrap();
        assert!(h.asymmetry < 1e-12);
        let d = TangentPair::new(gaussian_matrix(&mut r, 3, 2), gaussian_matrix(&mut r, 2, 4));
        let diff = &h.apply(&d) - &hessian_apply(&x, &p, &d).unwrap();
        assert!(diff.norm() < 1e-12 * d.norm() * h.matrix.norm());
    }

    #[test]
    fn size_guard() {
        let x = DataMatrixSvd::load(&DMatrix::identity(1, 1), DEFAULT_RANK_TOL).unwrap();
        let p = FactorPair::zeros(1, 2600, 1);
        assert!(matches!(dense_hessian(&x, &p), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn fd_is_seeded_and_passes() {
        let mut r = rng(13);
        let x = DataMatrixSvd::load(&gaussian_matrix(&mut r, 3, 4), DEFAULT_RANK_TOL).unwrap();
        let p = FactorPair::new(gaussian_matrix(&mut r, 3, 2), gaussian_matrix(&mut r, 2, 4));
        let a = fd_validate(&x, &p, 16, 5).unwrap();
        assert!(a.passed(), "{a:?}");
        assert_eq!(a, fd_validate(&x, &p, 16, 5).unwrap());
    }

    #[test]
    fn fd_at_critical_point() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        let cp = build_canonical(&x, &Selection::new(vec![0, 2], 3).unwrap(), 2, &DMatrix::zeros(0, 0)).unwrap();
        assert!(fd_validate(&x, &cp.materialize(), 8, 1).unwrap().passed());
    }
}
