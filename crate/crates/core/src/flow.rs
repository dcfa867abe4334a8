//! Gradient flow d(W, S)/dt = -grad J with tracking of the conserved
//! matrix W^T W - S S^T.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::calculus::{critical_threshold, gradient, gradient_norm};
use crate::canonical::{classify_canonical, reduce_to_canonical, PointKind};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::model::{evaluate_j, DataMatrixSvd, FactorPair, TangentPair};
use crate::oracle::{dense_hessian, numeric_spectrum};
use crate::orbit::balance_residual;
use crate::sampling::{gaussian_matrix, random_orthogonal};

/// Norm beyond which a trajectory is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Step-doubling control for classical RK4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct StepControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { abs_tol: 1e-12, rel_tol: 1e-12, h_init: 1e-2, h_min: 1e-14, h_max: 0.5, max_steps: 2_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowStatus {
    Converged,
    MaxTimeReached,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowSample {
    pub t: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub gradnorm: f64,
    pub drift: f64,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub samples: Vec<FlowSample>,
    pub terminal: FactorPair,
    pub status: FlowStatus,
    /// C = W0^T W0 - S0 S0^T.
    pub initial_balance: DMatrix<f64>,
    /// max |(||W||^2 - ||S||^2)(t) - (||W||^2 - ||S||^2)(0)|.
    pub max_trace_drift: f64,
}

impl FlowTrajectory {
    pub fn max_drift(&self) -> f64 {
        self.samples.iter().map(|s| s.drift).fold(0.0, f64::max)
    }

    pub fn final_sample(&self) -> &FlowSample {
        self.samples.last().expect("trajectory always has an initial sample")
    }

    /// Largest increase of J between consecutive samples.
    pub fn max_ascent(&self) -> f64 {
        self.samples.windows(2).map(|w| w[1].j - w[0].j).fold(0.0, f64::max)
    }

    /// Writes `t,J,gradnorm,drift` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn neg_grad(x: &DataMatrixSvd, y: &FactorPair) -> Result<TangentPair> {
    Ok(&gradient(x, y)? * -1.0)
}

fn rk4_step(x: &DataMatrixSvd, y: &FactorPair, h: f64) -> Result<FactorPair> {
    let k1 = neg_grad(x, y)?;
    let k2 = neg_grad(x, &y.offset(&k1, h / 2.0))?;
    let k3 = neg_grad(x, &y.offset(&k2, h / 2.0))?;
    let k4 = neg_grad(x, &y.offset(&k3, h))?;
    let mut incr = k1;
    incr.axpy(2.0, &k2);
    incr.axpy(2.0, &k3);
    incr.axpy(1.0, &k4);
    Ok(y.offset(&incr, h / 6.0))
}

fn diff_norm(a: &FactorPair, b: &FactorPair) -> f64 {
    ((&a.w - &b.w).norm_squared() + (&a.s - &b.s).norm_squared()).sqrt()
}

/// Integrates until the gradient falls below grad_tol * max(1, ||X||_F),
/// t reaches t_max, or the iterate blows up.
pub fn integrate_flow(
    x: &DataMatrixSvd,
    p0: &FactorPair,
    grad_tol: f64,
    t_max: f64,
    ctrl: &StepControl,
) -> Result<FlowTrajectory> {
    if grad_tol.is_nan() || grad_tol <= 0.0 || t_max.is_nan() || t_max <= 0.0 {
        return Err(Error::InvalidInput("grad_tol and t_max must be positive".into()));
    }
    x.check_pair(p0)?;
    let threshold = critical_threshold(x, grad_tol);
    let c0 = p0.balance();
    let trace0 = p0.w.norm_squared() - p0.s.norm_squared();
    let sample = |t: f64, y: &FactorPair| -> Result<FlowSample> {
        Ok(FlowSample { t, j: evaluate_j(x, y)?, gradnorm: gradient_norm(x, y)?, drift: (y.balance() - &c0).norm() })
    };

    let mut y = p0.clone();
    let mut t = 0.0;
    let mut h = ctrl.h_init.min(ctrl.h_max);
    let mut samples = vec![sample(0.0, &y)?];
    let mut max_trace_drift = 0.0f64;
    let mut status = FlowStatus::MaxTimeReached;
    let mut steps = 0usize;

    loop {
        let last = samples.last().unwrap();
        if last.gradnorm <= threshold {
            status = FlowStatus::Converged;
            break;
        }
        if y.norm() > DIVERGENCE_NORM || !last.j.is_finite() {
            status = FlowStatus::Diverged;
            break;
        }
        if t >= t_max || steps >= ctrl.max_steps {
            break;
        }
        h = h.min(t_max - t);
        let full = rk4_step(x, &y, h)?;
        let half = rk4_step(x, &y, h / 2.0)?;
        let two = rk4_step(x, &half, h / 2.0)?;
        let err = diff_norm(&two, &full) / 15.0;
        let scale = ctrl.abs_tol + ctrl.rel_tol * two.norm();
        if err <= scale || h <= ctrl.h_min {
            if h <= ctrl.h_min && err > scale {
                return Err(Error::StiffnessFailure { t, h });
            }
            // Richardson extrapolation of the two estimates
            y = FactorPair::new(&two.w + (&two.w - &full.w) / 15.0, &two.s + (&two.s - &full.s) / 15.0);
            t += h;
            steps += 1;
            samples.push(sample(t, &y)?);
            max_trace_drift = max_trace_drift.max(((y.w.norm_squared() - y.s.norm_squared()) - trace0).abs());
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * (scale / err).powf(0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(ctrl.h_max);
        if h < ctrl.h_min {
            return Err(Error::StiffnessFailure { t, h });
        }
    }
    Ok(FlowTrajectory { samples, terminal: y, status, initial_balance: c0, max_trace_drift })
}

/// W Gaussian (times `scale`) and S = (W^T W)^{1/2} R with R having
/// orthonormal rows, so that W^T W = S S^T. Needs k <= n.
pub fn random_balanced_init<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    k: usize,
    n: usize,
    scale: f64,
) -> Result<FactorPair> {
    if k > n {
        return Err(Error::InvalidInput(format!("balanced initialization needs k <= n, got k = {k}, n = {n}")));
    }
    let w = gaussian_matrix(rng, m, k) * scale;
    let (vals, vecs) = sym_eigen_desc(&(w.transpose() * &w));
    let root = &vecs
        * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(k, vals.iter().map(|v| v.max(0.0).sqrt())))
        * vecs.transpose();
    let q = random_orthogonal(rng, n);
    let r = q.rows(0, k).into_owned();
    Ok(FactorPair::new(w, root * r))
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitDiagnosis {
    pub q: usize,
    pub lambdas: Vec<f64>,
    pub maximal: bool,
    pub kind: PointKind,
    pub zero_family: bool,
    pub balance_residual: f64,
    pub lambda_min_oracle: f64,
    pub j: f64,
}

/// Reduces the terminal point to canonical form and classifies it.
pub fn classify_limit(x: &DataMatrixSvd, traj: &FlowTrajectory, tol: f64) -> Result<LimitDiagnosis> {
    if traj.status != FlowStatus::Converged {
        return Err(Error::InvalidInput(format!("trajectory status is {:?}, not Converged", traj.status)));
    }
    let (cp, _) = reduce_to_canonical(x, &traj.terminal, tol)?;
    let class = classify_canonical(&cp)?;
    let lambda_min_oracle = numeric_spectrum(&dense_hessian(x, &traj.terminal)?)?.min();
    Ok(LimitDiagnosis {
        q: cp.q(),
        lambdas: cp.lambdas(),
        maximal: cp.selection().is_maximal(x),
        kind: class.kind,
        zero_family: cp.q() == 0,
        balance_residual: balance_residual(&traj.terminal, &traj.initial_balance)?,
        lambda_min_oracle,
        j: evaluate_j(x, &traj.terminal)?,
    })
}
