//! Small dense helpers shared by the constructions: orthonormal completion,
//! sorted decompositions and Frobenius algebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Re-orthonormalizes the columns of `m` in order with two passes of
/// modified Gram-Schmidt. Columns are assumed to be nearly orthonormal.
pub fn reorthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for c in 0..out.ncols() {
        for _ in 0..2 {
            for p in 0..c {
                let proj = out.column(p).dot(&out.column(c));
                let prev = out.column(p).clone_owned();
                out.column_mut(c).axpy(-proj, &prev, 1.0);
            }
        }
        let norm = out.column(c).norm();
        if norm < 1e-8 {
            return Err(Error::NumericalFailure(format!("column {c} collapsed during re-orthonormalization")));
        }
        out.column_mut(c).scale_mut(1.0 / norm);
    }
    Ok(out)
}

/// Extends the orthonormal columns of `basis` (dim x c) to a full orthonormal
/// basis of R^dim and returns only the new dim x (dim - c) block.
///
/// Candidates are the standard basis vectors; at each step the candidate with
/// the largest residual after projection is taken (ties to the lowest index),
/// so the result is deterministic.
pub fn orthonormal_completion(basis: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let have = basis.ncols();
    assert!(have <= dim);
    let mut cols: Vec<DVector<f64>> = (0..have).map(|c| basis.column(c).clone_owned()).collect();
    let mut used = vec![false; dim];
    let mut fresh = Vec::with_capacity(dim - have);
    while cols.len() < dim {
        let mut best: Option<(usize, DVector<f64>, f64)> = None;
        for (i, taken) in used.iter().enumerate() {
            if *taken {
                continue;
            }
            let mut r = DVector::zeros(dim);
            r[i] = 1.0;
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&r);
                    r.axpy(-proj, c, 1.0);
                }
            }
            let norm = r.norm();
            if best.as_ref().is_none_or(|b| norm > b.2 + 1e-12) {
                best = Some((i, r, norm));
            }
        }
        let (i, r, norm) = best.expect("a candidate always remains while the basis is incomplete");
        used[i] = true;
        let unit = r / norm;
        cols.push(unit.clone());
        fresh.push(unit);
    }
    let mut out = DMatrix::zeros(dim, dim - have);
    for (c, v) in fresh.iter().enumerate() {
        out.set_column(c, v);
    }
    out
}

/// Symmetric eigendecomposition with eigenvalues sorted in nonincreasing
/// order and eigenvectors permuted to match.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (values, vecs)
}

/// Thin SVD with singular values sorted nonincreasing: (U, s, V) with
/// U: rows x p, V: cols x p, p = min(rows, cols).
///
/// Backed by faer: the nalgebra bidiagonal SVD can return inaccurate
/// factors for rank-deficient inputs.
pub fn svd_desc(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        return Ok((DMatrix::zeros(rows, 0), Vec::new(), DMatrix::zeros(cols, 0)));
    }
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().map_err(|e| Error::NumericalFailure(format!("SVD did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let uu = DMatrix::from_fn(rows, p, |i, j| u[(i, j)]);
    let vv = DMatrix::from_fn(cols, p, |i, j| v[(i, j)]);
    Ok((uu, s, vv))
}

/// Orthonormal basis of a column span, orthogonal complement included:
/// returns a dim x dim orthogonal matrix whose leading columns are `cols`.
pub fn complete_basis(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = cols.nrows();
    let extra = orthonormal_completion(cols, dim);
    let mut out = DMatrix::zeros(dim, dim);
    out.view_mut((0, 0), (dim, cols.ncols())).copy_from(cols);
    out.view_mut((0, cols.ncols()), (dim, extra.ncols())).copy_from(&extra);
    out
}

pub fn identity_defect(q: &DMatrix<f64>) -> f64 {
    let n = q.ncols();
    (q.transpose() * q - DMatrix::<f64>::identity(n, n)).norm()
}
