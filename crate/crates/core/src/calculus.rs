//! Explicit first and second derivatives of J.

use crate::error::Result;
use crate::linalg::frob_inner;
use crate::model::{DataMatrixSvd, FactorPair, TangentPair};

/// (E S^T, W^T E) with E = WS - X.
pub fn gradient(x: &DataMatrixSvd, p: &FactorPair) -> Result<TangentPair> {
    x.check_pair(p)?;
    let e = p.residual(x.x());
    Ok(TangentPair::new(&e * p.s.transpose(), p.w.transpose() * &e))
}

pub fn gradient_norm(x: &DataMatrixSvd, p: &FactorPair) -> Result<f64> {
    Ok(gradient(x, p)?.norm())
}

/// (G S S^T + W H S^T + E H^T, W^T W H + W^T G S + G^T E).
pub fn hessian_apply(x: &DataMatrixSvd, p: &FactorPair, d: &TangentPair) -> Result<TangentPair> {
    x.check_pair(p)?;
    x.check_tangent(p, d)?;
    let e = p.residual(x.x());
    Ok(hessian_apply_with_residual(p, &e, d))
}

pub(crate) fn hessian_apply_with_residual(p: &FactorPair, e: &nalgebra::DMatrix<f64>, d: &TangentPair) -> TangentPair {
    let (w, s) = (&p.w, &p.s);
    let (g, h) = (&d.g, &d.h);
    let st = s.transpose();
    let wt = w.transpose();
    let top = g * s * &st + w * h * &st + e * h.transpose();
    let bottom = &wt * w * h + &wt * g * s + g.transpose() * e;
    TangentPair::new(top, bottom)
}

/// ||GS||^2 + ||WH||^2 + 2 tr(H^T W^T G S + H^T G^T E).
pub fn second_derivative(x: &DataMatrixSvd, p: &FactorPair, d: &TangentPair) -> Result<f64> {
    x.check_pair(p)?;
    x.check_tangent(p, d)?;
    let e = p.residual(x.x());
    let gs = &d.g * &p.s;
    let wh = &p.w * &d.h;
    let cross = frob_inner(&wh, &gs) + frob_inner(&d.h, &(d.g.transpose() * &e));
    Ok(gs.norm_squared() + wh.norm_squared() + 2.0 * cross)
}

/// ||grad J|| <= tol * max(1, ||X||_F).
pub fn is_critical(x: &DataMatrixSvd, p: &FactorPair, tol: f64) -> Result<bool> {
    Ok(gradient_norm(x, p)? <= critical_threshold(x, tol))
}

pub fn critical_threshold(x: &DataMatrixSvd, tol: f64) -> f64 {
    tol * x.x_norm().max(1.0)
}

/// Tangent to the orbit at p generated by K: (WK, -KS).
pub fn orbit_tangent(p: &FactorPair, k_mat: &nalgebra::DMatrix<f64>) -> TangentPair {
    TangentPair::new(&p.w * k_mat, -(k_mat * &p.s))
}
