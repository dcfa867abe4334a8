//! Seeded random instances: Gaussian matrices, Haar-like orthogonal matrices
//! and group elements with a bounded condition number.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::svd_desc;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Orthogonal factor of a Gaussian matrix, with column signs fixed by the
/// diagonal of R so the distribution is uniform.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, k: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, k, k);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..k {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Q1 diag(s) Q2 with log-uniform s in [cond^{-1/2}, cond^{1/2}], so the
/// condition number is at most `cond`.
pub fn random_conditioned<R: Rng + ?Sized>(rng: &mut R, k: usize, cond: f64) -> DMatrix<f64> {
    assert!(cond >= 1.0);
    let half = 0.5 * cond.ln();
    let q1 = random_orthogonal(rng, k);
    let q2 = random_orthogonal(rng, k);
    let mut s: Vec<f64> = (0..k).map(|_| rng.random_range(-half..=half).exp()).collect();
    if k >= 2 {
        // pin the extremes so the full condition range is exercised
        s[0] = half.exp();
        s[k - 1] = (-half).exp();
    }
    &q1 * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s)) * q2
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    match svd_desc(a) {
        Ok((_, s, _)) if !s.is_empty() && *s.last().unwrap() > 0.0 => s[0] / s[s.len() - 1],
        _ => f64::INFINITY,
    }
}

/// Random strictly increasing subset of {0, .., m-1} of size q.
pub fn random_subset<R: Rng + ?Sized>(rng: &mut R, m: usize, q: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, m, q).into_vec();
    idx.sort_unstable();
    idx
}
