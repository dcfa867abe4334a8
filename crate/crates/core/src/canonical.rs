//! Canonical critical points, the zero family, balanced representatives,
//! classification, and recovery of the canonical representative of an
//! arbitrary critical point.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::calculus::{critical_threshold, gradient_norm};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{identity_defect, svd_desc};
use crate::model::{DataMatrixSvd, FactorPair};
use crate::orbit::{apply_group_action, GroupElement};
use crate::spectrum::{lambda_min_closed_form, PointDescriptor};

/// Selected singular-value indices, 0-based and strictly increasing. Because
/// sigma is sorted, the induced lambda_j are nonincreasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    indices: Vec<usize>,
}

impl Selection {
    /// Sorts and validates 0-based indices against the row count m.
    pub fn new(mut indices: Vec<usize>, m: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSelection("repeated index".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::InvalidSelection(format!("index {} exceeds m = {m}", bad + 1)));
        }
        Ok(Selection { indices })
    }

    /// Same as [`Selection::new`] for 1-based indices.
    pub fn from_one_based(indices: &[usize], m: usize) -> Result<Self> {
        if indices.contains(&0) {
            return Err(Error::InvalidSelection("indices are 1-based".into()));
        }
        Self::new(indices.iter().map(|i| i - 1).collect(), m)
    }

    pub fn empty() -> Self {
        Selection { indices: Vec::new() }
    }

    pub fn q(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn lambdas(&self, x: &DataMatrixSvd) -> Vec<f64> {
        self.indices.iter().map(|&i| x.sigma()[i]).collect()
    }

    /// Least 0-based j with lambda_j < sigma_j by value, if any.
    pub fn first_deficit(&self, x: &DataMatrixSvd) -> Option<usize> {
        let sig = x.sigma();
        self.lambdas(x).iter().enumerate().find(|&(j, &l)| l < sig[j] && !x.same_value(l, sig[j])).map(|(j, _)| j)
    }

    pub fn is_maximal(&self, x: &DataMatrixSvd) -> bool {
        self.first_deficit(x).is_none()
    }

    /// Ubar: the selected left singular vectors as columns.
    pub fn u_bar(&self, x: &DataMatrixSvd) -> DMatrix<f64> {
        x.u().select_columns(&self.indices)
    }

    pub fn v_bar(&self, x: &DataMatrixSvd) -> DMatrix<f64> {
        x.v().select_columns(&self.indices)
    }
}

pub fn is_maximal(x: &DataMatrixSvd, sel: &Selection) -> bool {
    sel.is_maximal(x)
}

/// A canonical point ([Ubar 0], [Lambda Vbar^T; C0^T V0^T]).
#[derive(Debug, Clone)]
pub struct CanonicalPoint<'a> {
    svd: &'a DataMatrixSvd,
    selection: Selection,
    k: usize,
    c0: DMatrix<f64>,
}

impl<'a> CanonicalPoint<'a> {
    pub fn svd(&self) -> &'a DataMatrixSvd {
        self.svd
    }

    pub fn selection(&self) -> &Selection {
        &self.selection
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.selection.q()
    }

    /// (n - r) x (k - q).
    pub fn c0(&self) -> &DMatrix<f64> {
        &self.c0
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.selection.lambdas(self.svd)
    }

    pub fn materialize(&self) -> FactorPair {
        let x = self.svd;
        let (m, n, q, k) = (x.m(), x.n(), self.q(), self.k);
        let mut w = DMatrix::zeros(m, k);
        let mut s = DMatrix::zeros(k, n);
        for (j, &i) in self.selection.indices().iter().enumerate() {
            w.set_column(j, &x.u().column(i));
            s.set_row(j, &(x.v().column(i).transpose() * x.sigma()[i]));
        }
        if k > q {
            let tail = self.c0.transpose() * x.v0().transpose();
            s.view_mut((q, 0), (k - q, n)).copy_from(&tail);
        }
        FactorPair::new(w, s)
    }

    /// 1/2 (sum sigma_i^2 - sum lambda_j^2).
    pub fn j_value(&self) -> f64 {
        let total: f64 = self.svd.sigma().iter().map(|s| s * s).sum();
        let kept: f64 = self.lambdas().iter().map(|l| l * l).sum();
        0.5 * (total - kept)
    }

    pub fn c0_is_zero(&self, tol: f64) -> bool {
        self.c0.iter().all(|v| v.abs() <= tol)
    }

    pub fn descriptor(&self) -> PointDescriptor {
        PointDescriptor::from_canonical(self, 1.0)
    }
}

pub fn build_canonical<'a>(
    x: &'a DataMatrixSvd,
    sel: &Selection,
    k: usize,
    c0: &DMatrix<f64>,
) -> Result<CanonicalPoint<'a>> {
    let q = sel.q();
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if q > k.min(x.m()) {
        return Err(Error::InvalidSelection(format!("q = {q} exceeds min(k, m) = {}", k.min(x.m()))));
    }
    if let Some(&bad) = sel.indices().iter().find(|&&i| i >= x.m()) {
        return Err(Error::InvalidSelection(format!("index {} exceeds m = {}", bad + 1, x.m())));
    }
    let want = (x.n() - x.rank(), k - q);
    // an empty block of any shape stands for "no C0"
    let c0 = if c0.is_empty() && (want.0 == 0 || want.1 == 0) {
        DMatrix::zeros(want.0, want.1)
    } else if c0.shape() != want {
        return Err(dim_err(format!("C0 must be {}x{}, got {}x{}", want.0, want.1, c0.nrows(), c0.ncols())));
    } else {
        c0.clone()
    };
    Ok(CanonicalPoint { svd: x, selection: sel.clone(), k, c0 })
}

/// (0, C0^T V0^T) with C0 of shape (n - r) x k.
pub fn build_zero_family(x: &DataMatrixSvd, c0: &DMatrix<f64>) -> Result<FactorPair> {
    if c0.nrows() != x.n() - x.rank() || c0.ncols() == 0 {
        return Err(dim_err(format!(
            "C0 must be {}x k with k >= 1, got {}x{}",
            x.n() - x.rank(),
            c0.nrows(),
            c0.ncols()
        )));
    }
    let k = c0.ncols();
    Ok(FactorPair::new(DMatrix::zeros(x.m(), k), c0.transpose() * x.v0().transpose()))
}

/// ([Ubar Lambda^{1/2} 0], [Lambda^{1/2} Vbar^T; 0]), which lies in M0.
pub fn build_balanced(x: &DataMatrixSvd, sel: &Selection, k: usize) -> Result<FactorPair> {
    check_balanced_selection(x, sel, k)?;
    let cp = build_canonical(x, sel, k, &DMatrix::zeros(x.n() - x.rank(), k - sel.q()))?;
    let g = GroupElement::new(balancing_matrix(&cp.lambdas(), k))?;
    apply_group_action(&g, &cp.materialize())
}

pub(crate) fn check_balanced_selection(x: &DataMatrixSvd, sel: &Selection, k: usize) -> Result<()> {
    if sel.q() > k.min(x.m()) {
        return Err(Error::InvalidSelection(format!("q = {} exceeds min(k, m)", sel.q())));
    }
    if let Some(&i) = sel.indices().iter().find(|&&i| i >= x.rank()) {
        return Err(Error::InvalidSelection(format!("selected sigma_{} is zero; Lambda must be invertible", i + 1)));
    }
    Ok(())
}

/// blockdiag(Lambda^{1/2}, I).
pub(crate) fn balancing_matrix(lambdas: &[f64], k: usize) -> DMatrix<f64> {
    let mut a = DMatrix::identity(k, k);
    for (j, l) in lambdas.iter().enumerate() {
        a[(j, j)] = l.sqrt();
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PointKind {
    GlobalMinimum,
    StrictSaddle,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationResult {
    pub kind: PointKind,
    /// 1-based least index with lambda_p < sigma_p.
    pub p: Option<usize>,
    pub lambda_min_closed_form: Option<f64>,
}

/// Global minimum iff maximal and q >= min(k, r); every other canonical
/// point is a strict saddle.
pub fn classify_canonical(cp: &CanonicalPoint<'_>) -> Result<ClassificationResult> {
    let x = cp.svd();
    let p = cp.selection().first_deficit(x);
    let global = p.is_none() && cp.q() >= cp.k().min(x.rank());
    if global {
        return Ok(ClassificationResult { kind: PointKind::GlobalMinimum, p: None, lambda_min_closed_form: None });
    }
    let lm = lambda_min_closed_form(&cp.descriptor())?;
    Ok(ClassificationResult { kind: PointKind::StrictSaddle, p: p.map(|j| j + 1), lambda_min_closed_form: Some(lm) })
}

/// Greedy column-pivoted Gram-Schmidt; returns the first `q` pivot columns
/// in pivot order.
fn pivot_columns(w: &DMatrix<f64>, q: usize) -> Vec<usize> {
    let k = w.ncols();
    let mut resid = w.clone();
    let mut chosen = Vec::with_capacity(q);
    for _ in 0..q {
        let (best, _) = (0..k)
            .filter(|c| !chosen.contains(c))
            .map(|c| (c, resid.column(c).norm()))
            .fold((usize::MAX, -1.0), |acc, (c, v)| if v > acc.1 { (c, v) } else { acc });
        chosen.push(best);
        let unit = resid.column(best) / resid.column(best).norm();
        for c in 0..k {
            let proj = unit.dot(&resid.column(c));
            resid.column_mut(c).axpy(-proj, &unit, 1.0);
        }
    }
    chosen
}

/// Recovers (cp, A) with L_A(materialize(cp)) = p.
pub fn reduce_to_canonical<'a>(
    x: &'a DataMatrixSvd,
    p: &FactorPair,
    tol: f64,
) -> Result<(CanonicalPoint<'a>, DMatrix<f64>)> {
    x.check_pair(p)?;
    let grad = gradient_norm(x, p)?;
    let threshold = critical_threshold(x, tol);
    if grad > threshold {
        return Err(Error::NotCritical { grad_norm: grad, threshold });
    }
    let (m, k) = p.w.shape();
    let v0 = x.v0();

    let (_, ws, _) = svd_desc(&p.w)?;
    let smax = ws.first().copied().unwrap_or(0.0);
    if smax <= threshold {
        let c0 = v0.transpose() * p.s.transpose();
        let cp = CanonicalPoint { svd: x, selection: Selection::empty(), k, c0 };
        return Ok((cp, DMatrix::identity(k, k)));
    }
    let cut = tol * smax;
    if ws.iter().any(|&s| s >= cut * 1e-2 && s <= cut * 1e2) {
        let lower = ws.iter().filter(|&&s| s > cut * 1e2).count();
        let upper = ws.iter().filter(|&&s| s >= cut * 1e-2).count();
        return Err(Error::RankAmbiguous { lower, upper });
    }
    let q = ws.iter().filter(|&&s| s > cut).count();

    // (i) W P = [What, What F]
    let piv = pivot_columns(&p.w, q);
    let rest: Vec<usize> = (0..k).filter(|c| !piv.contains(c)).collect();
    let order: Vec<usize> = piv.iter().chain(rest.iter()).copied().collect();
    let w_hat = p.w.select_columns(&piv);
    let w_rest = p.w.select_columns(&rest);

    // (ii) compact SVD of What
    let (u_hat, s_hat, v_hat) = svd_desc(&w_hat)?;
    let s_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(q, s_hat.iter().map(|s| 1.0 / s)));
    let s_mat = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s_hat.clone()));
    let f = &v_hat * &s_inv * u_hat.transpose() * &w_rest;
    let sv = &s_mat * v_hat.transpose();
    let mut c_perm = DMatrix::identity(k, k);
    c_perm.view_mut((0, 0), (q, q)).copy_from(&sv);
    c_perm.view_mut((0, q), (q, k - q)).copy_from(&(&sv * &f));
    // C = C_perm P^T: column order[c] of C is column c of C_perm
    let mut c = DMatrix::zeros(k, k);
    for (col, &orig) in order.iter().enumerate() {
        c.set_column(orig, &c_perm.column(col));
    }

    // (iii) align Uhat with stored left singular vectors
    let weights: Vec<f64> = (0..m).map(|i| (u_hat.transpose() * x.u().column(i)).norm_squared()).collect();
    let mut by_weight: Vec<usize> = (0..m).collect();
    by_weight.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let sel = Selection::new(by_weight[..q].to_vec(), m)?;
    let u_bar = sel.u_bar(x);
    let qm = u_bar.transpose() * &u_hat;
    if identity_defect(&qm) > 1e-6 {
        return Err(Error::NumericalFailure(
            "column space of W is not spanned by stored singular vectors (repeated singular values?)".into(),
        ));
    }
    let mut d = DMatrix::identity(k, k);
    d.view_mut((0, 0), (q, q)).copy_from(&qm);
    let dc = &d * &c;
    let s2 = &dc * &p.s;

    // (iv) S_b^T = Vbar Cbar + V0 C0
    let lambdas = sel.lambdas(x);
    let s_b = s2.rows(q, k - q).into_owned();
    let c0 = &v0.transpose() * s_b.transpose();
    // (v) E = [[I, 0], [-Cbar^T Lambda^+, I]]
    let mut e = DMatrix::identity(k, k);
    for (t, &i) in sel.indices().iter().enumerate() {
        if i < x.rank() {
            let cbar_t = x.v().column(i).transpose() * s_b.transpose();
            for l in 0..k - q {
                e[(q + l, t)] = -cbar_t[l] / lambdas[t];
            }
        }
    }
    let a = &e * &dc;

    let cp = CanonicalPoint { svd: x, selection: sel, k, c0 };
    let g = GroupElement::new(a.clone())?;
    let rebuilt = apply_group_action(&g, &cp.materialize())?;
    let err = (&rebuilt.w - &p.w).norm_squared() + (&rebuilt.s - &p.s).norm_squared();
    // a point that is only tol-critical sits O(tol) away from the exact orbit
    if err.sqrt() > tol.max(1e-8) * p.norm().max(1e-300) {
        return Err(Error::NumericalFailure(format!("canonical reconstruction error {:.3e}", err.sqrt())));
    }
    Ok((cp, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::is_critical;
    use crate::model::{evaluate_j, DEFAULT_RANK_TOL};
    use crate::orbit::balance_residual;
    use crate::sampling::{gaussian_matrix, random_conditioned, rng};

    fn diag(m: usize, n: usize, d: &[f64]) -> DataMatrixSvd {
        let mut x = DMatrix::zeros(m, n);
        for (i, v) in d.iter().enumerate() {
            x[(i, i)] = *v;
        }
        DataMatrixSvd::load(&x, DEFAULT_RANK_TOL).unwrap()
    }

    fn sel(x: &DataMatrixSvd, one_based: &[usize]) -> Selection {
        Selection::from_one_based(one_based, x.m()).unwrap()
    }

    fn none() -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }

    #[test]
    fn canonical_j_value_top_two() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        let cp = build_canonical(&x, &sel(&x, &[1, 2]), 2, &none()).unwrap();
        assert!((cp.j_value() - 0.5).abs() < 1e-12);
        assert!((evaluate_j(&x, &cp.materialize()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn canonical_second_singular_pair() {
        let x = diag(2, 3, &[2.0, 1.0]);
        let cp = build_canonical(&x, &sel(&x, &[2]), 1, &none()).unwrap();
        let p = cp.materialize();
        assert!((p.w.column(0) - x.u().column(1)).norm() < 1e-15);
        assert!((p.s.row(0) - x.v().column(1).transpose()).norm() < 1e-15);
        assert!((evaluate_j(&x, &p).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn canonical_with_zero_column_is_critical() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        let cp = build_canonical(&x, &sel(&x, &[1]), 2, &DMatrix::zeros(1, 1)).unwrap();
        assert!(gradient_norm(&x, &cp.materialize()).unwrap() < 1e-12);
    }

    #[test]
    fn canonical_rejects_bad_shapes() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        assert!(matches!(build_canonical(&x, &sel(&x, &[1, 2, 3]), 2, &none()), Err(Error::InvalidSelection(_))));
        assert!(matches!(build_canonical(&x, &sel(&x, &[1]), 2, &DMatrix::zeros(2, 1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_family_points() {
        let x = diag(2, 3, &[2.0, 1.0]);
        let p = build_zero_family(&x, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(p.norm(), 0.0);
        assert!((evaluate_j(&x, &p).unwrap() - 2.5).abs() < 1e-15);
        let p = build_zero_family(&x, &DMatrix::from_element(1, 1, 3f64.sqrt())).unwrap();
        assert!((p.s.row(0) - x.v().column(2).transpose() * 3f64.sqrt()).norm() < 1e-15);
        assert!(gradient_norm(&x, &p).unwrap() < 1e-12);
        assert!(build_zero_family(&x, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn balanced_points() {
        let x = diag(2, 3, &[2.0, 1.0]);
        let p = build_balanced(&x, &sel(&x, &[1]), 1).unwrap();
        assert!((p.w.column(0) - x.u().column(0) * 2f64.sqrt()).norm() < 1e-14);
        assert!((p.s.row(0) - x.v().column(0).transpose() * 2f64.sqrt()).norm() < 1e-14);
        assert!(balance_residual(&p, &DMatrix::zeros(1, 1)).unwrap() < 1e-14);

        let p = build_balanced(&x, &sel(&x, &[2]), 2).unwrap();
        assert_eq!(p.w.column(1).norm(), 0.0);
        assert!(balance_residual(&p, &DMatrix::zeros(2, 2)).unwrap() < 1e-14);
        assert!(is_critical(&x, &p, 1e-10).unwrap());

        let xr = diag(3, 4, &[2.0, 1.0, 0.0]);
        assert!(matches!(build_balanced(&xr, &sel(&xr, &[3]), 1), Err(Error::InvalidSelection(_))));
    }

    #[test]
    fn maximality_by_value() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        assert!(is_maximal(&x, &sel(&x, &[1, 2])));
        assert!(!is_maximal(&x, &sel(&x, &[1, 3])));
        assert_eq!(sel(&x, &[1, 3]).first_deficit(&x), Some(1));
        let x = diag(3, 4, &[2.0, 2.0, 1.0]);
        assert!(is_maximal(&x, &sel(&x, &[2])));
        assert!(is_maximal(&x, &sel(&x, &[1, 2])));
    }

    #[test]
    fn classification_examples() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        let c = classify_canonical(&build_canonical(&x, &sel(&x, &[1, 2]), 2, &none()).unwrap()).unwrap();
        assert_eq!(c.kind, PointKind::GlobalMinimum);
        let c = classify_canonical(&build_canonical(&x, &sel(&x, &[1, 3]), 2, &none()).unwrap()).unwrap();
        assert_eq!((c.kind, c.p), (PointKind::StrictSaddle, Some(2)));
        assert!(c.lambda_min_closed_form.unwrap() < 0.0);
        let c = classify_canonical(&build_canonical(&x, &sel(&x, &[1]), 2, &DMatrix::zeros(1, 1)).unwrap()).unwrap();
        assert_eq!(c.kind, PointKind::StrictSaddle);
        assert_eq!(c.p, None);
    }

    #[test]
    fn maximal_point_past_the_rank_is_global() {
        let x = diag(3, 4, &[2.0, 1.0, 0.0]);
        let cp = build_canonical(&x, &sel(&x, &[1, 2]), 3, &DMatrix::zeros(2, 1)).unwrap();
        assert_eq!(classify_canonical(&cp).unwrap().kind, PointKind::GlobalMinimum);
        assert!(cp.j_value().abs() < 1e-15);
    }

    #[test]
    fn reduce_fixed_point() {
        let x = diag(3, 4, &[3.0, 2.0, 1.0]);
        let cp = build_canonical(&x, &sel(&x, &[1, 3]), 2, &none()).unwrap();
        let (rec, a) = reduce_to_canonical(&x, &cp.materialize(), 1e-8).unwrap();
        assert_eq!(rec.selection(), cp.selection());
        assert!(identity_defect(&a) < 1e-10);
    }

    #[test]
    fn reduce_zero_family_branch() {
        let x = diag(2, 3, &[2.0, 1.0]);
        let p = build_zero_family(&x, &DMatrix::from_element(1, 2, 0.7)).unwrap();
        let (cp, a) = reduce_to_canonical(&x, &p, 1e-8).unwrap();
        assert_eq!(cp.q(), 0);
        assert_eq!(a, DMatrix::identity(2, 2));
        assert!((cp.materialize().s - p.s).norm() < 1e-14);
    }

    #[test]
    fn reduce_transported_point_with_c0() {
        let mut r = rng(21);
        let x = DataMatrixSvd::load(&gaussian_matrix(&mut r, 3, 5), DEFAULT_RANK_TOL).unwrap();
        let c0 = gaussian_matrix(&mut r, 2, 2);
        let cp = build_canonical(&x, &sel(&x, &[2]), 3, &c0).unwrap();
        let a = random_conditioned(&mut r, 3, 1e3);
        let p = apply_group_action(&GroupElement::new(a).unwrap(), &cp.materialize()).unwrap();
        let (rec, a2) = reduce_to_canonical(&x, &p, 1e-8).unwrap();
        assert_eq!(rec.selection(), cp.selection());
        let back = apply_group_action(&GroupElement::new(a2).unwrap(), &rec.materialize()).unwrap();
        assert!(((&back.w - &p.w).norm() + (&back.s - &p.s).norm()) < 1e-8 * p.norm());
    }

    #[test]
    fn reduce_rejects_noncritical() {
        let mut r = rng(2);
        let x = DataMatrixSvd::load(&gaussian_matrix(&mut r, 2, 3), DEFAULT_RANK_TOL).unwrap();
        let p = FactorPair::new(gaussian_matrix(&mut r, 2, 1), gaussian_matrix(&mut r, 1, 3));
        assert!(matches!(reduce_to_canonical(&x, &p, 1e-8), Err(Error::NotCritical { .. })));
    }
}
