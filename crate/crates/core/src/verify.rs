//! Self-check suite run against a user-supplied data matrix: every
//! closed-form construction is compared with the dense oracle and every
//! structural identity is evaluated on seeded random instances.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{gradient, hessian_apply, is_critical, orbit_tangent, second_derivative};
use crate::canonical::{build_canonical, reduce_to_canonical, CanonicalPoint, Selection};
use crate::error::Result;
use crate::flow::{integrate_flow, random_balanced_init, StepControl};
use crate::model::{evaluate_j, DataMatrixSvd, FactorPair, TangentPair};
use crate::oracle::{dense_hessian, fd_validate, numeric_spectrum, operator_matrix};
use crate::orbit::{
    apply_group_action, balance_residual, inertia_of, inertia_transported, intersect_m0, transported_lambda_min_bound,
    GroupElement,
};
use crate::sampling::{gaussian_matrix, random_conditioned, random_orthogonal, random_subset, rng};
use crate::spectrum::{
    lambda_min_closed_form, spectrum_balanced, spectrum_canonical, spectrum_zero_family, PointDescriptor,
    SpectrumReport,
};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error for the check, or NaN when it did not run.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub k: usize,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

type CheckFn = fn(&DataMatrixSvd, usize, &mut ChaCha8Rng) -> Result<(f64, String)>;

const CHECKS: &[(&str, f64, CheckFn)] = &[
    ("finite_difference_gradient", 1e-6, check_fd_gradient),
    ("finite_difference_second", 1e-4, check_fd_second),
    ("hessian_symmetry", 1e-10, check_symmetry),
    ("zero_family_vs_oracle", 1e-8, check_zero_family),
    ("canonical_vs_oracle", 1e-8, check_canonical),
    ("balanced_vs_oracle", 1e-8, check_balanced),
    ("eigen_residuals", 1e-9, check_residuals),
    ("lambda_min_dispatch", 1e-10, check_dispatch),
    ("orbit_j_invariance", 1e-10, check_j_invariance),
    ("gradient_transport", 1e-9, check_gradient_transport),
    ("hessian_transport", 1e-9, check_hessian_transport),
    ("second_derivative_transport", 1e-9, check_second_transport),
    ("degenerate_direction", 1e-10, check_degenerate),
    ("inertia_invariance", 0.5, check_inertia),
    ("orthogonal_suborbit_spectrum", 1e-8, check_orthogonal_suborbit),
    ("transported_bound", 1e-10, check_bound),
    ("congruence_realization", 1e-8, check_congruence),
    ("m0_closure", 1e-10, check_m0_closure),
    ("canonical_round_trip", 1e-8, check_round_trip),
    ("flow_conservation", 1e-8, check_flow),
];

/// Runs every check with k = min(m, 3). Checks run in parallel, each on its
/// own RNG stream derived from `seed`.
pub fn run_verify(x: &DataMatrixSvd, seed: u64) -> VerifyReport {
    let k = x.m().min(3);
    let checks = CHECKS
        .par_iter()
        .enumerate()
        .map(|(idx, &(name, tolerance, f))| {
            let mut r = rng(seed.wrapping_mul(1_000_003).wrapping_add(idx as u64));
            match f(x, k, &mut r) {
                Ok((worst, detail)) => CheckResult { name, passed: worst <= tolerance, worst, tolerance, detail },
                Err(e) => CheckResult { name, passed: false, worst: f64::NAN, tolerance, detail: e.to_string() },
            }
        })
        .collect();
    VerifyReport { seed, k, checks }
}

fn random_point<R: Rng + ?Sized>(r: &mut R, x: &DataMatrixSvd, k: usize) -> FactorPair {
    FactorPair::new(gaussian_matrix(r, x.m(), k), gaussian_matrix(r, k, x.n()))
}

fn random_direction<R: Rng + ?Sized>(r: &mut R, x: &DataMatrixSvd, k: usize) -> TangentPair {
    TangentPair::new(gaussian_matrix(r, x.m(), k), gaussian_matrix(r, k, x.n()))
}

/// Random canonical point: q in [0, min(k, m)], random selection and C0.
fn random_canonical<'a, R: Rng + ?Sized>(r: &mut R, x: &'a DataMatrixSvd, k: usize) -> Result<CanonicalPoint<'a>> {
    let q = r.random_range(0..=k.min(x.m()));
    let sel = Selection::new(random_subset(r, x.m(), q), x.m())?;
    let c0 = gaussian_matrix(r, x.n() - x.rank(), k - q);
    build_canonical(x, &sel, k, &c0)
}

/// Random canonical point that is a strict saddle, when one exists.
fn random_saddle<'a, R: Rng + ?Sized>(r: &mut R, x: &'a DataMatrixSvd, k: usize) -> Result<CanonicalPoint<'a>> {
    for _ in 0..64 {
        let cp = random_canonical(r, x, k)?;
        if lambda_min_closed_form(&cp.descriptor()).is_ok() {
            return Ok(cp);
        }
    }
    build_canonical(x, &Selection::empty(), k, &DMatrix::zeros(x.n() - x.rank(), k))
}

fn oracle_gap(x: &DataMatrixSvd, rep: &SpectrumReport) -> Result<f64> {
    let oracle = numeric_spectrum(&dense_hessian(x, &rep.point)?)?.values;
    Ok(rep.sorted_values().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn check_fd_gradient(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let p = random_point(r, x, k);
        worst = worst.max(fd_validate(x, &p, 8, r.random())?.max_gradient_rel_err);
    }
    Ok((worst, "4 points x 8 directions".into()))
}

fn check_fd_second(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let p = random_point(r, x, k);
        worst = worst.max(fd_validate(x, &p, 8, r.random())?.max_second_rel_err);
    }
    Ok((worst, "4 points x 8 directions".into()))
}

fn check_symmetry(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let p = random_point(r, x, k);
    let (d1, d2) = (random_direction(r, x, k), random_direction(r, x, k));
    let a = hessian_apply(x, &p, &d1)?.inner(&d2);
    let b = d1.inner(&hessian_apply(x, &p, &d2)?);
    let asym = dense_hessian(x, &p)?.asymmetry;
    Ok((rel(a, b).max(asym), format!("bilinear form gap and dense asymmetry {asym:.2e}")))
}

fn check_zero_family(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let c0 = gaussian_matrix(r, x.n() - x.rank(), k);
    let rep = spectrum_zero_family(x, &c0, k)?;
    Ok((oracle_gap(x, &rep)?, "random C0".into()))
}

fn check_canonical(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let mut worst = 0.0f64;
    for _ in 0..6 {
        let cp = random_canonical(r, x, k)?;
        let rep = spectrum_canonical(&cp)?;
        worst = worst.max(oracle_gap(x, &rep)?);
    }
    Ok((worst, "6 random canonical points".into()))
}

fn check_balanced(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let q = r.random_range(1..=k.min(x.rank()));
    let sel = Selection::new(random_subset(r, x.rank(), q), x.m())?;
    let rep = spectrum_balanced(x, &sel, k)?;
    let mut worst = oracle_gap(x, &rep)?;
    if let Ok(lm) = lambda_min_closed_form(&PointDescriptor::balanced(x, &sel, k)) {
        worst = worst.max((lm - rep.lambda_min).abs());
    }
    Ok((worst, format!("selection {:?}", sel.indices())))
}

fn check_residuals(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let cp = random_canonical(r, x, k)?;
    let rep = spectrum_canonical(&cp)?;
    let count_ok = rep.len() == k * (x.m() + x.n());
    let worst = rep.max_residual(x)?.max(rep.orthogonality_defect());
    Ok((if count_ok { worst } else { f64::INFINITY }, format!("{} eigenpairs", rep.len())))
}

fn check_dispatch(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let cp = random_saddle(r, x, k)?;
    let rep = spectrum_canonical(&cp)?;
    match lambda_min_closed_form(&cp.descriptor()) {
        Ok(lm) => Ok(((lm - rep.lambda_min).abs(), format!("q = {}", cp.q()))),
        Err(_) => Ok((0.0, "no strict saddle available".into())),
    }
}

fn check_j_invariance(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let p = random_point(r, x, k);
    let g = GroupElement::new(random_conditioned(r, k, 10.0))?;
    let moved = apply_group_action(&g, &p)?;
    Ok((rel(evaluate_j(x, &p)?, evaluate_j(x, &moved)?), "cond(A) <= 10".into()))
}

fn check_gradient_transport(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let p = random_point(r, x, k);
    let g = GroupElement::new(random_conditioned(r, k, 10.0))?;
    let lhs = gradient(x, &apply_group_action(&g, &p)?)?;
    let rhs = g.inverse_transpose().transport(&gradient(x, &p)?)?;
    Ok(((&lhs - &rhs).norm() / lhs.norm().max(1.0), "grad at L_A p vs L_{A^-T} grad".into()))
}

fn check_hessian_transport(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let p = random_point(r, x, k);
    let d = random_direction(r, x, k);
    let g = GroupElement::new(random_conditioned(r, k, 10.0))?;
    let lhs = hessian_apply(x, &apply_group_action(&g, &p)?, &d)?;
    let inner = hessian_apply(x, &p, &g.inverse().transport(&d)?)?;
    let rhs = g.inverse_transpose().transport(&inner)?;
    Ok(((&lhs - &rhs).norm() / lhs.norm().max(1.0), "Hessian map conjugation".into()))
}

fn check_second_transport(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let p = random_point(r, x, k);
    let d = random_direction(r, x, k);
    let g = GroupElement::new(random_conditioned(r, k, 10.0))?;
    let a = second_derivative(x, &apply_group_action(&g, &p)?, &d)?;
    let b = second_derivative(x, &p, &g.inverse().transport(&d)?)?;
    Ok((rel(a, b), "second derivative along transported direction".into()))
}

fn check_degenerate(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let cp = random_canonical(r, x, k)?;
    let p = cp.materialize();
    let d = orbit_tangent(&p, &gaussian_matrix(r, k, k));
    let val = second_derivative(x, &p, &d)?.abs() / d.norm_squared().max(f64::MIN_POSITIVE);
    let q = random_point(r, x, k);
    let dq = orbit_tangent(&q, &gaussian_matrix(r, k, k));
    let orth = gradient(x, &q)?.inner(&dq).abs() / (gradient(x, &q)?.norm() * dq.norm()).max(1.0);
    Ok((val.max(orth), "orbit tangent at a critical point and gradient orthogonality".into()))
}

fn check_inertia(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let mut mismatches = 0usize;
    for _ in 0..4 {
        let cp = random_saddle(r, x, k)?;
        let p = cp.materialize();
        let g = GroupElement::new(random_conditioned(r, k, 100.0))?;
        if inertia_of(x, &p)? != inertia_transported(x, &p, &g)? {
            mismatches += 1;
        }
    }
    Ok((mismatches as f64, "4 saddles, cond(A) <= 100; value counts mismatches".into()))
}

fn check_orthogonal_suborbit(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let p = random_canonical(r, x, k)?.materialize();
    let g = GroupElement::new(random_orthogonal(r, k))?;
    let a = numeric_spectrum(&dense_hessian(x, &p)?)?.values;
    let b = numeric_spectrum(&dense_hessian(x, &apply_group_action(&g, &p)?)?)?.values;
    Ok((a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max), "sorted eigenvalues".into()))
}

fn check_bound(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..4 {
        let cp = random_saddle(r, x, k)?;
        let p = cp.materialize();
        let base = numeric_spectrum(&dense_hessian(x, &p)?)?.min();
        if base >= 0.0 {
            continue;
        }
        let g = GroupElement::new(random_conditioned(r, k, 100.0))?;
        let bound = transported_lambda_min_bound(base, &g)?;
        let actual = numeric_spectrum(&dense_hessian(x, &apply_group_action(&g, &p)?)?)?.min();
        worst = worst.max(actual - bound);
    }
    Ok((worst.max(0.0), "actual minus bound (must be <= 0)".into()))
}

fn check_congruence(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let p = random_canonical(r, x, k)?.materialize();
    let g = GroupElement::new(random_conditioned(r, k, 10.0))?;
    let pm = dense_hessian(x, &p)?.matrix;
    let qm = dense_hessian(x, &apply_group_action(&g, &p)?)?.matrix;
    let l = operator_matrix(&g.inverse(), x.m(), x.n());
    let want = l.transpose() * pm * &l;
    Ok(((&qm - &want).norm() / qm.norm().max(1.0), "M(L_{A^-1})^T P M(L_{A^-1})".into()))
}

fn check_m0_closure(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let q = r.random_range(1..=k.min(x.rank()));
    let sel = Selection::new(random_subset(r, x.rank(), q), x.m())?;
    let cp = build_canonical(x, &sel, k, &DMatrix::zeros(x.n() - x.rank(), k - q))?;
    let a = intersect_m0(&cp).ok_or_else(|| crate::Error::NumericalFailure("expected an M0 element".into()))?;
    let o = GroupElement::new(random_orthogonal(r, k))?;
    let moved = apply_group_action(&a.compose(&o), &cp.materialize())?;
    Ok((balance_residual(&moved, &DMatrix::zeros(k, k))?, "L_{AQ} of canonical point".into()))
}

fn check_round_trip(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let cp = random_canonical(r, x, k)?;
        let g = GroupElement::new(random_conditioned(r, k, 1e3))?;
        let p = apply_group_action(&g, &cp.materialize())?;
        let (rec, a) = reduce_to_canonical(x, &p, 1e-8)?;
        let lam_gap = if rec.q() == cp.q() {
            rec.lambdas().iter().zip(cp.lambdas()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        let back = apply_group_action(&GroupElement::new(a)?, &rec.materialize())?;
        let err = ((&back.w - &p.w).norm_squared() + (&back.s - &p.s).norm_squared()).sqrt() / p.norm().max(1.0);
        worst = worst.max(lam_gap).max(err);
    }
    Ok((worst, "4 transported canonical points, cond(A) <= 1e3".into()))
}

fn check_flow(x: &DataMatrixSvd, k: usize, r: &mut ChaCha8Rng) -> Result<(f64, String)> {
    if k > x.n() {
        return Ok((0.0, "skipped: k > n".into()));
    }
    let scale = 0.3 * x.sigma()[0].sqrt() / (x.m() as f64).sqrt();
    let p0 = random_balanced_init(r, x.m(), k, x.n(), scale)?;
    let tr = integrate_flow(x, &p0, 1e-9, 1e4, &StepControl::default())?;
    let crit = is_critical(x, &tr.terminal, 1e-8)?;
    let worst = tr.max_drift().max(tr.max_trace_drift).max(tr.max_ascent() - 1e-9).max(0.0);
    Ok((if crit { worst } else { f64::INFINITY }, format!("{:?} after {} samples", tr.status, tr.samples.len())))
}
