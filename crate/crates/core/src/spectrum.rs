//! Closed-form Hessian eigenpairs at the critical-point families and the
//! matching minimum-eigenvalue formulas.
//!
//! Eigenvectors are assembled from the rank-one directions
//! G = u e^T (m x k) and H = e v^T (k x n), where u, v are stored singular
//! vectors and e ranges over an orthonormal basis of R^k adapted to the
//! point. Mixed vectors (G + c H) are returned unit-normalized and `coupling`
//! records c.
//!
//! At a canonical point with q < k and C0 != 0, the directions
//! (ubar_t z_l^T, 0) and (0, e_t nu_l^T), where C0 = Y diag(s) Z^T and
//! nu_l = V0 y_l, span invariant 2 x 2 blocks [[s^2, s], [s, 1]] with
//! eigenvalues 0 and 1 + s^2. Every other direction is either a lifted
//! eigenvector of the q-column problem or lives entirely in the last k - q
//! columns.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};

use crate::calculus::hessian_apply;
use crate::canonical::{build_balanced, check_balanced_selection, CanonicalPoint, Selection};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{complete_basis, orthonormal_completion, svd_desc};
use crate::model::{DataMatrixSvd, FactorPair, TangentPair};
use crate::oracle::{dense_hessian, symmetric_spectrum};
use crate::orbit::{Inertia, INERTIA_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Pure G direction.
    Left,
    /// Pure H direction.
    Right,
}

/// Which construction produced an eigenpair. Indices are 0-based here and
/// displayed 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// (0, e_j v_i^T) with i >= m.
    NullRight { i: usize, j: usize },
    /// (u_i e_j^T, alpha e_j v_i^T) with u_i unselected and sigma_i > 0.
    Mixed { i: usize, j: usize, branch: Branch },
    /// u_i unselected with sigma_i = 0: G and H decouple.
    Unmixed { i: usize, j: usize, side: Side },
    /// (ubar_j e_s^T, beta e_j vbar_s^T) with lambda_s > 0.
    Selected { s: usize, j: usize, branch: Branch },
    /// Selected column with lambda_s = 0.
    SelectedNull { s: usize, j: usize, side: Side },
    /// Coupled (ubar_t z_l^T, 0), (0, e_t nu_l^T) block.
    NullBlockCoupled { t: usize, l: usize, branch: Branch },
    /// Unpaired (ubar_t z_l^T, 0).
    NullBlockLeft { t: usize, l: usize },
    /// Unpaired (0, e_t nu_l^T).
    NullBlockRight { t: usize, l: usize },
    /// (u_i z_l^T, delta z_l v_i^T) on a zero column of W.
    TailMixed { i: usize, l: usize, branch: Branch },
    /// u_i unselected with sigma_i = 0 on a zero column of W.
    TailUnmixed { i: usize, l: usize, side: Side },
    /// (0, z_l v_i^T) annihilated by the Hessian.
    TailKernel { i: usize, l: usize },
    /// (u_i e_j^T, e_j v_i^T) at a balanced point, value lambda_j - sigma_i.
    BalancedShift { i: usize, j: usize },
    /// Same direction on a zero column, value -sigma_i.
    BalancedDrop { i: usize, j: usize },
    /// Dense eigenpair on the complement of the closed-form vectors.
    Numeric { index: usize },
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Lower => "lower",
            Branch::Upper => "upper",
        })
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Provenance::*;
        match *self {
            NullRight { i, j } => write!(f, "null_right[i={},j={}]", i + 1, j + 1),
            Mixed { i, j, branch } => write!(f, "mixed[i={},j={},{branch}]", i + 1, j + 1),
            Unmixed { i, j, side } => write!(f, "unmixed[i={},j={},{side}]", i + 1, j + 1),
            Selected { s, j, branch } => write!(f, "selected[s={},j={},{branch}]", s + 1, j + 1),
            SelectedNull { s, j, side } => write!(f, "selected_null[s={},j={},{side}]", s + 1, j + 1),
            NullBlockCoupled { t, l, branch } => {
                write!(f, "null_block[t={},l={},{branch}]", t + 1, l + 1)
            }
            NullBlockLeft { t, l } => write!(f, "null_block[t={},l={},left]", t + 1, l + 1),
            NullBlockRight { t, l } => write!(f, "null_block[t={},l={},right]", t + 1, l + 1),
            TailMixed { i, l, branch } => write!(f, "tail_mixed[i={},l={},{branch}]", i + 1, l + 1),
            TailUnmixed { i, l, side } => write!(f, "tail_unmixed[i={},l={},{side}]", i + 1, l + 1),
            TailKernel { i, l } => write!(f, "tail_kernel[i={},l={}]", i + 1, l + 1),
            BalancedShift { i, j } => write!(f, "balanced_shift[i={},j={}]", i + 1, j + 1),
            BalancedDrop { i, j } => write!(f, "balanced_drop[i={},j={}]", i + 1, j + 1),
            Numeric { index } => write!(f, "numeric[{}]", index + 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    pub vector: TangentPair,
    pub provenance: Provenance,
    pub coupling: Option<f64>,
}

impl Serialize for EigPair {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("EigPair", 3)?;
        st.serialize_field("value", &self.value)?;
        st.serialize_field("provenance", &self.provenance.to_string())?;
        st.serialize_field("coupling", &self.coupling)?;
        st.end()
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub eigpairs: Vec<EigPair>,
    pub inertia: Inertia,
    pub lambda_min: f64,
    /// The point whose Hessian this describes.
    pub point: FactorPair,
}

impl SpectrumReport {
    fn new(point: FactorPair, eigpairs: Vec<EigPair>) -> Self {
        let values: Vec<f64> = eigpairs.iter().map(|e| e.value).collect();
        let inertia = Inertia::from_values(&values, INERTIA_TOL);
        let lambda_min = values.iter().copied().fold(f64::INFINITY, f64::min);
        SpectrumReport { eigpairs, inertia, lambda_min, point }
    }

    pub fn len(&self) -> usize {
        self.eigpairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigpairs.is_empty()
    }

    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eigpairs.iter().map(|e| e.value).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// max ||H[v] - rho v|| / ||v|| over the eigenpairs.
    pub fn max_residual(&self, x: &DataMatrixSvd) -> Result<f64> {
        let mut worst = 0.0f64;
        for e in &self.eigpairs {
            let hv = hessian_apply(x, &self.point, &e.vector)?;
            let r = (&hv - &(&e.vector * e.value)).norm() / e.vector.norm();
            worst = worst.max(r);
        }
        Ok(worst)
    }

    /// Largest entry of |V^T V - I| over the eigenvector set.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.eigpairs.len();
        if n == 0 {
            return 0.0;
        }
        let dim = self.eigpairs[0].vector.flatten().len();
        let mut mat = DMatrix::zeros(dim, n);
        for (c, e) in self.eigpairs.iter().enumerate() {
            mat.column_mut(c).copy_from_slice(&e.vector.flatten());
        }
        let gram = mat.transpose() * mat - DMatrix::<f64>::identity(n, n);
        gram.amax()
    }
}

impl Serialize for SpectrumReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(4))?;
        map.serialize_entry("eigenvalues", &self.sorted_values())?;
        map.serialize_entry("inertia", &self.inertia)?;
        map.serialize_entry("lambda_min", &self.lambda_min)?;
        map.serialize_entry("eigpairs", &self.eigpairs)?;
        map.end()
    }
}

/// Closed-form minimum eigenvalues.
pub mod formulas {
    /// omega/2 - sqrt(sigma^2 + omega^2/4), written without cancellation.
    pub fn zero_family(sigma: f64, omega: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        -sigma * sigma / (omega / 2.0 + (sigma * sigma + omega * omega / 4.0).sqrt())
    }

    /// Lower eigenvalue of the (sigma, lambda) mixed pair at scale a.
    pub fn full_rank(sigma: f64, lambda: f64, a: f64) -> f64 {
        let a2 = a * a;
        let x = lambda * lambda / a2;
        let c = (x + a2) / 2.0;
        let d = (sigma * sigma + ((x - a2) / 2.0).powi(2)).sqrt();
        -(sigma * sigma - lambda * lambda) / (c + d)
    }

    /// Both eigenvalues (lower, upper) of the (sigma, lambda) mixed pair.
    pub fn mixed_pair(sigma: f64, lambda: f64, a: f64) -> (f64, f64) {
        let a2 = a * a;
        let x = lambda * lambda / a2;
        let c = (x + a2) / 2.0;
        let d = (sigma * sigma + ((x - a2) / 2.0).powi(2)).sqrt();
        (full_rank(sigma, lambda, a), c + d)
    }
}

/// The data a minimum-eigenvalue formula needs, by point family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointDescriptor {
    /// (0, C0^T V0^T).
    ZeroFamily { sigma_1: f64, omega_min: f64 },
    /// q = k canonical point scaled by a; `deficit` is (sigma_p, lambda_k)
    /// when the point is not maximal.
    FullRank { deficit: Option<(f64, f64)>, a: f64 },
    /// q < k canonical point. `sigma_next` is sigma_{q+1}; `deficit` is
    /// (sigma_p, lambda_q) when not maximal.
    Deficient { sigma_next: f64, omega_min: f64, deficit: Option<(f64, f64)> },
    /// Balanced representative; `deficit` is (sigma_p, lambda_k).
    Balanced { full: bool, sigma_next: f64, deficit: Option<(f64, f64)> },
}

fn omega_min(c0: &DMatrix<f64>) -> Result<f64> {
    let (rows, cols) = c0.shape();
    if cols == 0 || rows < cols {
        return Ok(0.0);
    }
    let (_, s, _) = svd_desc(c0)?;
    let smin = s.last().copied().unwrap_or(0.0);
    Ok(smin * smin)
}

impl PointDescriptor {
    /// Descriptor of the canonical point scaled by `a` (used only when
    /// q = k).
    pub fn from_canonical(cp: &CanonicalPoint<'_>, a: f64) -> Self {
        let x = cp.svd();
        let sel = cp.selection();
        let lam = cp.lambdas();
        let deficit = sel.first_deficit(x).map(|p| (x.sigma()[p], *lam.last().unwrap()));
        let om = omega_min(cp.c0()).unwrap_or(0.0);
        if cp.q() == 0 {
            PointDescriptor::ZeroFamily { sigma_1: x.sigma()[0], omega_min: om }
        } else if cp.q() == cp.k() {
            PointDescriptor::FullRank { deficit, a }
        } else {
            let sigma_next = x.sigma().get(cp.q()).copied().unwrap_or(0.0);
            PointDescriptor::Deficient { sigma_next, omega_min: om, deficit }
        }
    }

    pub fn balanced(x: &DataMatrixSvd, sel: &Selection, k: usize) -> Self {
        let lam = sel.lambdas(x);
        let deficit = sel.first_deficit(x).map(|p| (x.sigma()[p], lam.last().copied().unwrap_or(0.0)));
        PointDescriptor::Balanced {
            full: sel.q() == k,
            sigma_next: x.sigma().get(sel.q()).copied().unwrap_or(0.0),
            deficit,
        }
    }
}

fn not_a_saddle(what: &str) -> Error {
    Error::NotASaddle(format!("{what} describes a global minimum"))
}

pub fn lambda_min_closed_form(desc: &PointDescriptor) -> Result<f64> {
    use formulas::*;
    match *desc {
        PointDescriptor::ZeroFamily { sigma_1, omega_min } => Ok(zero_family(sigma_1, omega_min)),
        PointDescriptor::FullRank { deficit, a } => {
            if a == 0.0 || !a.is_finite() {
                return Err(Error::InvalidInput("scale must be nonzero".into()));
            }
            let (sp, lk) = deficit.ok_or_else(|| not_a_saddle("maximal full-rank point"))?;
            Ok(full_rank(sp, lk, a))
        }
        PointDescriptor::Deficient { sigma_next, omega_min, deficit } => match deficit {
            None if sigma_next == 0.0 => Err(not_a_saddle("maximal point past the rank")),
            None => Ok(zero_family(sigma_next, omega_min)),
            Some((sp, lq)) => Ok(zero_family(sp, omega_min).min(full_rank(sp, lq, 1.0))),
        },
        PointDescriptor::Balanced { full, sigma_next, deficit } => match (full, deficit) {
            (true, Some((sp, lk))) => Ok(-(sp - lk)),
            (false, Some((sp, _))) => Ok(-sp),
            (false, None) if sigma_next > 0.0 => Ok(-sigma_next),
            _ => Err(not_a_saddle("balanced point")),
        },
    }
}

/// True iff some selected lambda_p falls short of sigma_p.
pub fn strict_saddle_test(x: &DataMatrixSvd, sel: &Selection) -> bool {
    sel.first_deficit(x).is_some()
}

/// Assembles rank-one directions for fixed (m, k, n).
struct Frame {
    m: usize,
    n: usize,
    k: usize,
}

impl Frame {
    fn g(&self, u: &DVector<f64>, e: &DVector<f64>) -> TangentPair {
        TangentPair::new(u * e.transpose(), DMatrix::zeros(self.k, self.n))
    }

    fn h(&self, e: &DVector<f64>, v: &DVector<f64>) -> TangentPair {
        TangentPair::new(DMatrix::zeros(self.m, self.k), e * v.transpose())
    }

    fn unit(&self, j: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.k);
        e[j] = 1.0;
        e
    }
}

/// (g + c h) / sqrt(1 + c^2) for orthonormal g, h.
fn combine(g: &TangentPair, h: &TangentPair, c: f64) -> TangentPair {
    let mut out = g.clone();
    out.axpy(c, h);
    &out * (1.0 / (1.0 + c * c).sqrt())
}

fn push(out: &mut Vec<EigPair>, value: f64, vector: TangentPair, provenance: Provenance, coupling: Option<f64>) {
    out.push(EigPair { value, vector, provenance, coupling });
}

/// Positive root of s x^2 - b x - s = 0 without cancellation.
fn positive_root(b: f64, s: f64) -> f64 {
    let d = (b * b + 4.0 * s * s).sqrt();
    if b >= 0.0 {
        (b + d) / (2.0 * s)
    } else {
        2.0 * s / (d - b)
    }
}

/// Eigenpairs of the q = sel.q() column problem at ([Ubar a], Lambda Vbar^T / a),
/// embedded in the first q of k columns. With `skip_null_h`, H directions
/// whose right factor lies in span(V0) are left out.
fn full_rank_pairs(x: &DataMatrixSvd, sel: &Selection, a: f64, fr: &Frame, skip_null_h: bool, out: &mut Vec<EigPair>) {
    let (m, n, r) = (x.m(), x.n(), x.rank());
    let q = sel.q();
    let lam = sel.lambdas(x);
    let a2 = a * a;
    let u = |i: usize| x.u().column(i).into_owned();
    let v = |i: usize| x.v().column(i).into_owned();

    if !skip_null_h {
        for i in m..n {
            for j in 0..q {
                push(out, a2, fr.h(&fr.unit(j), &v(i)), Provenance::NullRight { i, j }, None);
            }
        }
    }
    for i in (0..m).filter(|&i| !sel.contains(i)) {
        let sigma = x.sigma()[i];
        for (j, &l) in lam.iter().enumerate() {
            let e = fr.unit(j);
            let g = fr.g(&u(i), &e);
            let h = fr.h(&e, &v(i));
            if i < r {
                let b = l * l / a2 - a2;
                let up = positive_root(b, sigma);
                let down = -1.0 / up;
                let (lo, hi) = formulas::mixed_pair(sigma, l, a);
                push(out, lo, combine(&g, &h, up), Provenance::Mixed { i, j, branch: Branch::Lower }, Some(up));
                push(out, hi, combine(&g, &h, down), Provenance::Mixed { i, j, branch: Branch::Upper }, Some(down));
            } else {
                push(out, l * l / a2, g, Provenance::Unmixed { i, j, side: Side::Left }, None);
                if !skip_null_h {
                    push(out, a2, h, Provenance::Unmixed { i, j, side: Side::Right }, None);
                }
            }
        }
    }
    for (s, &ls) in lam.iter().enumerate() {
        let vs = v(sel.indices()[s]);
        for j in 0..q {
            let g = fr.g(&u(sel.indices()[j]), &fr.unit(s));
            let h = fr.h(&fr.unit(j), &vs);
            if ls > 0.0 {
                let lo = -ls / a2;
                let hi = a2 / ls;
                push(out, 0.0, combine(&g, &h, lo), Provenance::Selected { s, j, branch: Branch::Lower }, Some(lo));
                push(
                    out,
                    ls * ls / a2 + a2,
                    combine(&g, &h, hi),
                    Provenance::Selected { s, j, branch: Branch::Upper },
                    Some(hi),
                );
            } else {
                push(out, 0.0, g, Provenance::SelectedNull { s, j, side: Side::Left }, None);
                if !skip_null_h {
                    push(out, a2, h, Provenance::SelectedNull { s, j, side: Side::Right }, None);
                }
            }
        }
    }
}

/// Spectrum at a canonical point with q < k (q = 0 is the zero family).
fn deficient_pairs(x: &DataMatrixSvd, sel: &Selection, k: usize, c0: &DMatrix<f64>) -> Result<Vec<EigPair>> {
    let (m, n, r) = (x.m(), x.n(), x.rank());
    let q = sel.q();
    let kt = k - q;
    let fr = Frame { m, n, k };
    let mut out = Vec::with_capacity(k * (m + n));
    full_rank_pairs(x, sel, 1.0, &fr, true, &mut out);

    // C0 = Y diag(s) Z^T with Y, Z completed to orthogonal matrices
    let (y_thin, s, z_thin) = svd_desc(c0)?;
    let y = complete_basis(&y_thin);
    let z_small = complete_basis(&z_thin);
    let p = s.len();
    let v0 = x.v0();
    let nu = &v0 * &y;
    let z_full = |l: usize| -> DVector<f64> {
        let mut e = DVector::zeros(k);
        e.rows_mut(q, kt).copy_from(&z_small.column(l));
        e
    };
    let omega = |l: usize| if l < p { s[l] * s[l] } else { 0.0 };
    let u = |i: usize| x.u().column(i).into_owned();
    let v = |i: usize| x.v().column(i).into_owned();

    for t in 0..q {
        let ubar = u(sel.indices()[t]);
        let et = fr.unit(t);
        for l in 0..p {
            let g = fr.g(&ubar, &z_full(l));
            let h = fr.h(&et, &nu.column(l).into_owned());
            let sl = s[l];
            let norm = 1.0 / (1.0 + sl * sl).sqrt();
            let mut lo = g.clone();
            lo.axpy(-sl, &h);
            let mut hi = &g * sl;
            hi.axpy(1.0, &h);
            push(&mut out, 0.0, &lo * norm, Provenance::NullBlockCoupled { t, l, branch: Branch::Lower }, Some(-sl));
            let up = if sl > 0.0 { Some(1.0 / sl) } else { None };
            push(&mut out, 1.0 + sl * sl, &hi * norm, Provenance::NullBlockCoupled { t, l, branch: Branch::Upper }, up);
        }
        for l in p..kt {
            push(&mut out, 0.0, fr.g(&ubar, &z_full(l)), Provenance::NullBlockLeft { t, l }, None);
        }
        for l in p..(n - r) {
            push(&mut out, 1.0, fr.h(&et, &nu.column(l).into_owned()), Provenance::NullBlockRight { t, l }, None);
        }
    }

    for l in 0..kt {
        let zl = z_full(l);
        let w = omega(l);
        for i in (0..m).filter(|&i| !sel.contains(i)) {
            let g = fr.g(&u(i), &zl);
            let h = fr.h(&zl, &v(i));
            if i < r {
                let sigma = x.sigma()[i];
                let up = positive_root(w, sigma);
                let down = -1.0 / up;
                let lo = -sigma / up;
                let hi = sigma * up;
                push(
                    &mut out,
                    lo,
                    combine(&g, &h, up),
                    Provenance::TailMixed { i, l, branch: Branch::Lower },
                    Some(up),
                );
                push(
                    &mut out,
                    hi,
                    combine(&g, &h, down),
                    Provenance::TailMixed { i, l, branch: Branch::Upper },
                    Some(down),
                );
            } else {
                push(&mut out, w, g, Provenance::TailUnmixed { i, l, side: Side::Left }, None);
                push(&mut out, 0.0, h, Provenance::TailUnmixed { i, l, side: Side::Right }, None);
            }
        }
        for i in sel.indices().iter().copied().chain(m..n) {
            push(&mut out, 0.0, fr.h(&zl, &v(i)), Provenance::TailKernel { i, l }, None);
        }
    }
    Ok(out)
}

fn check_count(out: &[EigPair], k: usize, x: &DataMatrixSvd) -> Result<()> {
    let want = k * (x.m() + x.n());
    if out.len() != want {
        return Err(Error::NumericalFailure(format!("emitted {} eigenpairs, expected {want}", out.len())));
    }
    Ok(())
}

/// Spectrum at (0, C0^T V0^T) with C0 of shape (n - r) x k.
pub fn spectrum_zero_family(x: &DataMatrixSvd, c0: &DMatrix<f64>, k: usize) -> Result<SpectrumReport> {
    if c0.shape() != (x.n() - x.rank(), k) {
        return Err(dim_err(format!("C0 must be {}x{k}, got {:?}", x.n() - x.rank(), c0.shape())));
    }
    let cp = crate::canonical::build_canonical(x, &Selection::empty(), k, c0)?;
    let pairs = deficient_pairs(x, cp.selection(), k, c0)?;
    check_count(&pairs, k, x)?;
    Ok(SpectrumReport::new(cp.materialize(), pairs))
}

/// Spectrum at the q = k canonical point scaled to ([Ubar] a, Lambda Vbar^T / a).
pub fn spectrum_full_rank_scaled(x: &DataMatrixSvd, sel: &Selection, a: f64) -> Result<SpectrumReport> {
    let k = sel.q();
    if k == 0 {
        return Err(Error::InvalidSelection("full-rank spectrum needs q >= 1".into()));
    }
    if a == 0.0 || !a.is_finite() {
        return Err(Error::InvalidInput("scale a must be finite and nonzero".into()));
    }
    let cp = crate::canonical::build_canonical(x, sel, k, &DMatrix::zeros(0, 0))?;
    let base = cp.materialize();
    let point = FactorPair::new(base.w * a, base.s / a);
    let fr = Frame { m: x.m(), n: x.n(), k };
    let mut pairs = Vec::with_capacity(k * (x.m() + x.n()));
    full_rank_pairs(x, sel, a, &fr, false, &mut pairs);
    check_count(&pairs, k, x)?;
    Ok(SpectrumReport::new(point, pairs))
}

/// Spectrum at a canonical point with q < k.
pub fn spectrum_deficient_rank(cp: &CanonicalPoint<'_>) -> Result<SpectrumReport> {
    if cp.q() >= cp.k() {
        return Err(Error::InvalidSelection("q = k; use the full-rank spectrum".into()));
    }
    let x = cp.svd();
    let pairs = deficient_pairs(x, cp.selection(), cp.k(), cp.c0())?;
    check_count(&pairs, cp.k(), x)?;
    Ok(SpectrumReport::new(cp.materialize(), pairs))
}

/// Spectrum at the canonical point, dispatching on q.
pub fn spectrum_canonical(cp: &CanonicalPoint<'_>) -> Result<SpectrumReport> {
    if cp.q() == cp.k() {
        spectrum_full_rank_scaled(cp.svd(), cp.selection(), 1.0)
    } else {
        spectrum_deficient_rank(cp)
    }
}

/// Spectrum at the balanced representative. The negative eigenpairs are
/// closed-form; the rest come from the dense Hessian restricted to their
/// orthogonal complement.
pub fn spectrum_balanced(x: &DataMatrixSvd, sel: &Selection, k: usize) -> Result<SpectrumReport> {
    check_balanced_selection(x, sel, k)?;
    let point = build_balanced(x, sel, k)?;
    let (m, n, r) = (x.m(), x.n(), x.rank());
    let fr = Frame { m, n, k };
    let lam = sel.lambdas(x);
    let q = sel.q();
    let mut pairs = Vec::new();
    for i in (0..r).filter(|&i| !sel.contains(i)) {
        let sigma = x.sigma()[i];
        let ui = x.u().column(i).into_owned();
        let vi = x.v().column(i).into_owned();
        for j in 0..k {
            let e = fr.unit(j);
            let dir = combine(&fr.g(&ui, &e), &fr.h(&e, &vi), 1.0);
            if j >= q {
                push(&mut pairs, -sigma, dir, Provenance::BalancedDrop { i, j }, None);
            } else if lam[j] < sigma && !x.same_value(lam[j], sigma) {
                push(&mut pairs, lam[j] - sigma, dir, Provenance::BalancedShift { i, j }, None);
            }
        }
    }

    let dim = k * (m + n);
    let mut known = DMatrix::zeros(dim, pairs.len());
    for (c, e) in pairs.iter().enumerate() {
        known.column_mut(c).copy_from_slice(&e.vector.flatten());
    }
    let comp = orthonormal_completion(&known, dim);
    let dense = dense_hessian(x, &point)?;
    let restricted = comp.transpose() * &dense.matrix * &comp;
    let restricted = (&restricted + restricted.transpose()) * 0.5;
    let rest = symmetric_spectrum(&restricted)?;
    for (idx, value) in rest.values.iter().enumerate() {
        let coords = &comp * rest.vectors.column(idx);
        let vector = TangentPair::unflatten(coords.as_slice(), m, k, n);
        push(&mut pairs, *value, vector, Provenance::Numeric { index: idx }, None);
    }
    check_count(&pairs, k, x)?;
    Ok(SpectrumReport::new(point, pairs))
}
