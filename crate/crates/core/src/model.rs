//! Domain types: the data matrix with its fixed full SVD, points and
//! directions in the product space, and the objective value.
//!
//! Everything downstream works in the *oriented* frame where the data matrix
//! is m x n with m <= n. A user matrix with more rows than columns is
//! transposed on load; [`DataMatrixSvd::to_internal`] and
//! [`DataMatrixSvd::to_user`] convert factor pairs between the two frames
//! via (W, S) <-> (S^T, W^T).

use std::ops::{Add, Mul, Sub};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{frob_inner, orthonormal_completion, reorthonormalize, svd_desc};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative tolerance used when singular values are compared by value.
pub const VALUE_TOL: f64 = 1e-12;

/// The data matrix X together with one fixed, compatible full SVD.
#[derive(Debug, Clone)]
pub struct DataMatrixSvd {
    x: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v: DMatrix<f64>,
    rank: usize,
    transposed: bool,
}

impl DataMatrixSvd {
    /// Builds the SVD of `raw`, transposing first when it has more rows than
    /// columns. Rank counts singular values above `rank_tol * sigma_1`; the
    /// rest are set to exactly zero.
    pub fn load(raw: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(Error::InvalidInput(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
        }
        if raw.nrows() == 0 || raw.ncols() == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        if raw.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidInput("matrix is identically zero".into()));
        }
        let transposed = raw.nrows() > raw.ncols();
        let x = if transposed { raw.transpose() } else { raw.clone() };
        let (m, n) = x.shape();

        let (u_thin, s, _) = svd_desc(&x)?;
        let s1 = s[0];
        let rank = s.iter().filter(|&&v| v > rank_tol * s1).count();
        let mut sigma = s.clone();
        for v in sigma.iter_mut().skip(rank) {
            *v = 0.0;
        }

        // u_thin is m x m since m <= n.
        let mut u = reorthonormalize(&u_thin)?;
        for c in 0..m {
            let col = u.column(c);
            let lead = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if lead < 0.0 {
                u.column_mut(c).neg_mut();
            }
        }

        // Right vectors for positive singular values come from X^T u_i / sigma_i
        // so that X v_i = sigma_i u_i holds with the sign-fixed u.
        let mut v_range = DMatrix::zeros(n, rank);
        for i in 0..rank {
            let vi = x.transpose() * u.column(i) / sigma[i];
            v_range.set_column(i, &vi);
        }
        let v_range = reorthonormalize(&v_range)?;
        let v_null = orthonormal_completion(&v_range, n);
        let mut v = DMatrix::zeros(n, n);
        v.view_mut((0, 0), (n, rank)).copy_from(&v_range);
        v.view_mut((0, rank), (n, n - rank)).copy_from(&v_null);

        let out = DataMatrixSvd { x, u, sigma, v, rank, transposed };
        let resid = (out.reconstruct() - &out.x).norm();
        if resid > 1e-10 * out.x.norm().max(1.0) {
            return Err(Error::NumericalFailure(format!("SVD reconstruction residual {resid:.3e}")));
        }
        Ok(out)
    }

    /// Parses a headerless, row-major CSV matrix. Ragged rows are rejected.
    pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
        let file = std::fs::File::open(path.as_ref())?;
        parse_csv_matrix(file)
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn transposed(&self) -> bool {
        self.transposed
    }

    /// The oriented data matrix (m <= n).
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// sigma_1 >= ... >= sigma_m, zeros past the rank.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Right singular vectors v_{r+1}, ..., v_n as an n x (n - r) block.
    pub fn v0(&self) -> DMatrix<f64> {
        self.v.columns(self.rank, self.n() - self.rank).into_owned()
    }

    pub fn x_norm(&self) -> f64 {
        self.x.norm()
    }

    /// U Sigma V^T.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let (m, n) = (self.m(), self.n());
        let mut sig = DMatrix::zeros(m, n);
        for i in 0..m {
            sig[(i, i)] = self.sigma[i];
        }
        &self.u * sig * self.v.transpose()
    }

    /// Equality of two singular values by value, relative to sigma_1.
    pub fn same_value(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= VALUE_TOL * self.sigma[0]
    }

    /// Minimum of J over all factor pairs of inner dimension k.
    pub fn global_min_value(&self, k: usize) -> f64 {
        0.5 * self.sigma.iter().skip(k).map(|s| s * s).sum::<f64>()
    }

    /// Converts a factor pair given against the user's matrix into the
    /// oriented frame.
    pub fn to_internal(&self, p: &FactorPair) -> FactorPair {
        if self.transposed {
            FactorPair::new(p.s.transpose(), p.w.transpose())
        } else {
            p.clone()
        }
    }

    /// Inverse of [`Self::to_internal`].
    pub fn to_user(&self, p: &FactorPair) -> FactorPair {
        self.to_internal(p)
    }

    pub(crate) fn check_pair(&self, p: &FactorPair) -> Result<()> {
        let (wm, wk) = p.w.shape();
        let (sk, sn) = p.s.shape();
        if wm != self.m() || sn != self.n() || wk != sk {
            return Err(dim_err(format!(
                "factor pair W {wm}x{wk}, S {sk}x{sn} does not fit X {}x{}",
                self.m(),
                self.n()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_tangent(&self, p: &FactorPair, d: &TangentPair) -> Result<()> {
        if d.g.shape() != p.w.shape() || d.h.shape() != p.s.shape() {
            return Err(dim_err(format!(
                "direction G {:?}, H {:?} does not match point W {:?}, S {:?}",
                d.g.shape(),
                d.h.shape(),
                p.w.shape(),
                p.s.shape()
            )));
        }
        Ok(())
    }
}

pub fn parse_csv_matrix<R: std::io::Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("matrix file is empty".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput("ragged rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// A point (W, S) with W: m x k and S: k x n.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub w: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(w: DMatrix<f64>, s: DMatrix<f64>) -> Self {
        FactorPair { w, s }
    }

    pub fn zeros(m: usize, k: usize, n: usize) -> Self {
        FactorPair { w: DMatrix::zeros(m, k), s: DMatrix::zeros(k, n) }
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn norm(&self) -> f64 {
        (self.w.norm_squared() + self.s.norm_squared()).sqrt()
    }

    /// E = WS - X.
    pub fn residual(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.w * &self.s - x
    }

    /// W^T W - S S^T, the quantity conserved by gradient flow.
    pub fn balance(&self) -> DMatrix<f64> {
        self.w.transpose() * &self.w - &self.s * self.s.transpose()
    }

    pub fn as_tangent(&self) -> TangentPair {
        TangentPair::new(self.w.clone(), self.s.clone())
    }

    pub fn offset(&self, d: &TangentPair, t: f64) -> FactorPair {
        FactorPair { w: &self.w + &d.g * t, s: &self.s + &d.h * t }
    }
}

/// A direction (G, H) in the product space, with
/// <(G,H),(G',H')> = <G,G'> + <H,H'>.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentPair {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl TangentPair {
    pub fn new(g: DMatrix<f64>, h: DMatrix<f64>) -> Self {
        TangentPair { g, h }
    }

    pub fn zeros(m: usize, k: usize, n: usize) -> Self {
        TangentPair { g: DMatrix::zeros(m, k), h: DMatrix::zeros(k, n) }
    }

    pub fn inner(&self, other: &TangentPair) -> f64 {
        frob_inner(&self.g, &other.g) + frob_inner(&self.h, &other.h)
    }

    pub fn norm_squared(&self) -> f64 {
        self.g.norm_squared() + self.h.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(&self) -> TangentPair {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            self * (1.0 / n)
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &TangentPair) {
        self.g += &other.g * alpha;
        self.h += &other.h * alpha;
    }

    /// Coordinates in the fixed basis: G entries column-major, then H
    /// entries column-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.g.iter().chain(self.h.iter()).copied().collect()
    }

    pub fn unflatten(coords: &[f64], m: usize, k: usize, n: usize) -> TangentPair {
        assert_eq!(coords.len(), k * (m + n));
        let g = DMatrix::from_column_slice(m, k, &coords[..m * k]);
        let h = DMatrix::from_column_slice(k, n, &coords[m * k..]);
        TangentPair { g, h }
    }
}

impl Add for &TangentPair {
    type Output = TangentPair;
    fn add(self, rhs: &TangentPair) -> TangentPair {
        TangentPair { g: &self.g + &rhs.g, h: &self.h + &rhs.h }
    }
}

impl Sub for &TangentPair {
    type Output = TangentPair;
    fn sub(self, rhs: &TangentPair) -> TangentPair {
        TangentPair { g: &self.g - &rhs.g, h: &self.h - &rhs.h }
    }
}

impl Mul<f64> for &TangentPair {
    type Output = TangentPair;
    fn mul(self, rhs: f64) -> TangentPair {
        TangentPair { g: &self.g * rhs, h: &self.h * rhs }
    }
}

/// J(W, S) = 1/2 ||X - WS||_F^2.
pub fn evaluate_j(svd: &DataMatrixSvd, p: &FactorPair) -> Result<f64> {
    svd.check_pair(p)?;
    Ok(0.5 * p.residual(svd.x()).norm_squared())
}

/// J evaluated on a factor pair given in the user's orientation.
pub fn evaluate_j_user(svd: &DataMatrixSvd, p_user: &FactorPair) -> Result<f64> {
    evaluate_j(svd, &svd.to_internal(p_user))
}
