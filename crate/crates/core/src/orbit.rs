//! The GL(k) action L_A(W, S) = (WA, A^{-1}S), its induced operator norm,
//! inertia counting, transported eigenvalue bounds and the balance manifolds
//! M_C = { W^T W - S S^T = C }.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::canonical::{balancing_matrix, CanonicalPoint};
use crate::error::{dim_err, Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::model::{DataMatrixSvd, FactorPair, TangentPair};
use crate::oracle::{dense_hessian, numeric_spectrum};

/// Relative zero threshold for inertia counts.
pub const INERTIA_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
}

impl GroupElement {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(dim_err(format!("group element must be square, got {:?}", a.shape())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("group element has non-finite entries".into()));
        }
        let s = a.singular_values();
        let smax = s.max();
        if smax == 0.0 || s.min() <= smax * 1e-14 {
            return Err(Error::SingularGroupElement);
        }
        let a_inv = a.clone().try_inverse().ok_or(Error::SingularGroupElement)?;
        Ok(GroupElement { a, a_inv })
    }

    /// a * I_k.
    pub fn scalar(a: f64, k: usize) -> Result<Self> {
        Self::new(DMatrix::identity(k, k) * a)
    }

    pub fn identity(k: usize) -> Self {
        GroupElement { a: DMatrix::identity(k, k), a_inv: DMatrix::identity(k, k) }
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement { a: self.a_inv.clone(), a_inv: self.a.clone() }
    }

    /// A^{-T}, the element that transports gradients.
    pub fn inverse_transpose(&self) -> GroupElement {
        GroupElement { a: self.a_inv.transpose(), a_inv: self.a.transpose() }
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement { a: &self.a * &other.a, a_inv: &other.a_inv * &self.a_inv }
    }

    /// Eigenvalues of A A^T as (min, max).
    fn gram_extremes(&self) -> (f64, f64) {
        let (vals, _) = sym_eigen_desc(&(&self.a * self.a.transpose()));
        (*vals.last().unwrap(), vals[0])
    }

    pub fn condition_number(&self) -> f64 {
        let (lo, hi) = self.gram_extremes();
        (hi / lo).sqrt()
    }

    /// L_A applied to a direction: (G A, A^{-1} H).
    pub fn transport(&self, d: &TangentPair) -> Result<TangentPair> {
        if d.g.ncols() != self.k() || d.h.nrows() != self.k() {
            return Err(dim_err(format!("direction has k = {}, group element k = {}", d.g.ncols(), self.k())));
        }
        Ok(TangentPair::new(&d.g * &self.a, &self.a_inv * &d.h))
    }
}

/// (W A, A^{-1} S).
pub fn apply_group_action(g: &GroupElement, p: &FactorPair) -> Result<FactorPair> {
    let t = g.transport(&p.as_tangent())?;
    Ok(FactorPair::new(t.g, t.h))
}

/// max{ sqrt(lambda_max(AA^T)), 1/sqrt(lambda_min(AA^T)) }.
pub fn induced_norm(g: &GroupElement) -> f64 {
    let (lo, hi) = g.gram_extremes();
    hi.sqrt().max(1.0 / lo.sqrt())
}

/// lambda / max{ lambda_max(AA^T), 1/lambda_min(AA^T) }: an upper bound on
/// the least Hessian eigenvalue at L_A(p).
pub fn transported_lambda_min_bound(lambda_min_at_p: f64, g: &GroupElement) -> Result<f64> {
    if lambda_min_at_p >= 0.0 || !lambda_min_at_p.is_finite() {
        return Err(Error::NotASaddle(format!("lambda_min = {lambda_min_at_p} is not negative")));
    }
    let nrm = induced_norm(g);
    Ok(lambda_min_at_p / (nrm * nrm))
}

/// (i+, i-, i0), serialized as a three-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Inertia(pub usize, pub usize, pub usize);

impl Inertia {
    /// Eigenvalues with |rho| <= rel_tol * max|rho| count as zero.
    pub fn from_values(values: &[f64], rel_tol: f64) -> Self {
        let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let thr = rel_tol * scale;
        let pos = values.iter().filter(|&&v| v > thr).count();
        let neg = values.iter().filter(|&&v| v < -thr).count();
        Inertia(pos, neg, values.len() - pos - neg)
    }

    pub fn positive(&self) -> usize {
        self.0
    }

    pub fn negative(&self) -> usize {
        self.1
    }

    pub fn zero(&self) -> usize {
        self.2
    }

    pub fn total(&self) -> usize {
        self.0 + self.1 + self.2
    }
}

pub fn inertia_of(x: &DataMatrixSvd, p: &FactorPair) -> Result<Inertia> {
    inertia_with_tol(x, p, INERTIA_TOL)
}

pub fn inertia_with_tol(x: &DataMatrixSvd, p: &FactorPair, rel_tol: f64) -> Result<Inertia> {
    let vals = numeric_spectrum(&dense_hessian(x, p)?)?.values;
    Ok(Inertia::from_values(&vals, rel_tol))
}

/// Inertia at L_A(p). Congruence by L_A preserves signs but can shrink a
/// nonzero eigenvalue relative to the largest by up to cond(A)^2, so the
/// relative zero threshold is divided by cond(A)^2.
pub fn inertia_transported(x: &DataMatrixSvd, p: &FactorPair, g: &GroupElement) -> Result<Inertia> {
    let moved = apply_group_action(g, p)?;
    let c = g.condition_number();
    inertia_with_tol(x, &moved, INERTIA_TOL / (c * c))
}

/// ||W^T W - S S^T - C||_F.
pub fn balance_residual(p: &FactorPair, c: &DMatrix<f64>) -> Result<f64> {
    let k = p.k();
    if c.shape() != (k, k) {
        return Err(dim_err(format!("C must be {k}x{k}")));
    }
    let asym = (c - c.transpose()).norm();
    if asym > 1e-12 * c.norm().max(1.0) {
        return Err(Error::InvalidInput(format!("C is not symmetric (defect {asym:.3e})")));
    }
    Ok((p.balance() - c).norm())
}

/// blockdiag(sqrt(Lambda), I) when Lambda is invertible and C0 vanishes;
/// otherwise the orbit misses M0.
pub fn intersect_m0(cp: &CanonicalPoint<'_>) -> Option<GroupElement> {
    let x = cp.svd();
    if cp.selection().indices().iter().any(|&i| i >= x.rank()) || !cp.c0_is_zero(1e-12) {
        return None;
    }
    GroupElement::new(balancing_matrix(&cp.lambdas(), cp.k())).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::gradient;
    use crate::canonical::{build_canonical, Selection};
    use crate::model::{evaluate_j, DEFAULT_RANK_TOL};
    use crate::sampling::{gaussian_matrix, random_orthogonal, rng};

    fn diag(m: usize, n: usize, d: &[f64]) -> DataMatrixSvd {
        let mut x = DMatrix::zeros(m, n);
        for (i, v) in d.iter().enumerate() {
            x[(i, i)] = *v;
        }
        DataMatrixSvd::load(&x, DEFAULT_RANK_TOL).unwrap()
    }

    #[test]
    fn identity_and_scalar_action() {
        let mut r = rng(1);
        let x = DataMatrixSvd::load(&gaussian_matrix(&mut r, 2, 3), DEFAULT_RANK_TOL).unwrap();
        let p = FactorPair::new(gaussian_matrix(&mut r, 2, 2), gaussian_matrix(&mut r, 2, 3));
        assert_eq!(apply_group_action(&GroupElement::identity(2), &p).unwrap(), p);
        let q = apply_group_action(&GroupElement::scalar(2.0, 2).unwrap(), &p).unwrap();
        assert!((&q.w - &p.w * 2.0).norm() < 1e-15);
        assert!((&q.s - &p.s * 0.5).norm() < 1e-15);
        let (a, b) = (evaluate_j(&x, &p).unwrap(), evaluate_j(&x, &q).unwrap());
        assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn gradient_transport() {
        let mut r = rng(2);
        let x = DataMatrixSvd::load(&gaussian_matrix(&mut r, 3, 4), DEFAULT_RANK_TOL).unwrap();
        let p = FactorPair::new(gaussian_matrix(&mut r, 3, 2), gaussian_matrix(&mut r, 2, 4));
        let g = GroupElement::new(gaussian_matrix(&mut r, 2, 2)).unwrap();
        let lhs = gradient(&x, &apply_group_action(&g, &p).unwrap()).unwrap();
        let rhs = g.inverse_transpose().transport(&gradient(&x, &p).unwrap()).unwrap();
        assert!((&lhs - &rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn singular_rejected() {
        assert!(matches!(GroupElement::new(DMatrix::zeros(2, 2)), Err(Error::SingularGroupElement)));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(GroupElement::new(a), Err(Error::SingularGroupElement)));
    }

    #[test]
    fn induced_norm_examples() {
        let mut r = rng(3);
        let q = GroupElement::new(random_orthogonal(&mut r, 3)).unwrap();
        assert!((induced_norm(&q) - 1.0).abs() < 1e-12);
        let d = GroupElement::new(DMatrix::from_diagonal(&nalgebra::dvector![2.0, 1.0])).unwrap();
        assert!((induced_norm(&d) - 2.0).abs() < 1e-14);
        let s = GroupElement::scalar(0.1, 1).unwrap();
        assert!((induced_norm(&s) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn bound_examples() {
        let two = GroupElement::scalar(2.0, 1).unwrap();
        assert!((transported_lambda_min_bound(-1.0, &two).unwrap() + 0.25).abs() < 1e-15);
        let mut r = rng(4);
        let q = GroupElement::new(random_orthogonal(&mut r, 2)).unwrap();
        assert!((transported_lambda_min_bound(-1.7, &q).unwrap() + 1.7).abs() < 1e-12);
        let i = GroupElement::identity(2);
        assert_eq!(transported_lambda_min_bound(-3.0, &i).unwrap(), -3.0);
        assert!(matches!(transported_lambda_min_bound(0.5, &i), Err(Error::NotASaddle(_))));
    }

    #[test]
    fn inertia_examples() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        let cp = build_canonical(&x, &Selection::new(vec![0, 1], 3).unwrap(), 2, &DMatrix::zeros(0, 0)).unwrap();
        assert_eq!(inertia_of(&x, &cp.materialize()).unwrap(), Inertia(10, 0, 4));
        let x = diag(2, 3, &[2.0, 1.0]);
        assert_eq!(inertia_of(&x, &FactorPair::zeros(2, 1, 3)).unwrap(), Inertia(2, 2, 1));
    }

    #[test]
    fn balance_residual_examples() {
        let mut r = rng(5);
        let p = FactorPair::new(gaussian_matrix(&mut r, 2, 2), gaussian_matrix(&mut r, 2, 3));
        assert!(balance_residual(&p, &p.balance()).unwrap() < 1e-15);
        assert_eq!(balance_residual(&FactorPair::zeros(2, 2, 3), &DMatrix::zeros(2, 2)).unwrap(), 0.0);
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(balance_residual(&p, &asym), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn m0_intersection() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        let cp = build_canonical(&x, &Selection::new(vec![0, 1], 3).unwrap(), 2, &DMatrix::zeros(0, 0)).unwrap();
        let g = intersect_m0(&cp).unwrap();
        let want = DMatrix::from_diagonal(&nalgebra::dvector![3f64.sqrt(), 2f64.sqrt()]);
        assert!((g.matrix() - want).norm() < 1e-15);
        let moved = apply_group_action(&g, &cp.materialize()).unwrap();
        assert!(balance_residual(&moved, &DMatrix::zeros(2, 2)).unwrap() < 1e-10);

        let cp =
            build_canonical(&x, &Selection::new(vec![0], 3).unwrap(), 2, &DMatrix::from_element(1, 1, 0.3)).unwrap();
        assert!(intersect_m0(&cp).is_none());

        let xr = diag(3, 4, &[3.0, 2.0, 0.0]);
        let cp = build_canonical(&xr, &Selection::new(vec![2], 3).unwrap(), 1, &DMatrix::zeros(2, 0)).unwrap();
        assert!(intersect_m0(&cp).is_none());
    }
}
