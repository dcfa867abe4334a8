mod config;
mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use nalgebra::DMatrix;
use serde::Serialize;

use mfland_core::canonical::{
    build_canonical, classify_canonical, reduce_to_canonical, ClassificationResult, Selection,
};
use mfland_core::flow::{
    classify_limit, integrate_flow, random_balanced_init, FlowStatus, LimitDiagnosis, StepControl,
};
use mfland_core::oracle::{dense_hessian, numeric_spectrum};
use mfland_core::orbit::{
    apply_group_action, induced_norm, inertia_of, inertia_transported, transported_lambda_min_bound, GroupElement,
    Inertia,
};
use mfland_core::sampling::{gaussian_matrix, rng};
use mfland_core::spectrum::{
    spectrum_balanced, spectrum_deficient_rank, spectrum_full_rank_scaled, spectrum_zero_family,
};
use mfland_core::verify::run_verify;
use mfland_core::{evaluate_j, DataMatrixSvd, Error, FactorPair};

use config::{Cli, Command, Format, RunConfig};
use output::{sci, to_json, SCHEMA_VERSION};

/// Exit code 1: a check failed or the numerics broke down.
const EXIT_FAILURE: u8 = 1;
/// Exit code 2: the input was malformed or inconsistent.
const EXIT_INPUT: u8 = 2;

#[derive(Debug)]
enum RunError {
    Core(Error),
    Usage(String),
    Output(io::Error),
}

impl RunError {
    fn exit_code(&self) -> u8 {
        match self {
            RunError::Core(e) if e.is_input_error() => EXIT_INPUT,
            RunError::Usage(_) => EXIT_INPUT,
            _ => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Usage(m) => write!(f, "{m}"),
            RunError::Output(e) => write!(f, "cannot write output: {e}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

type RunResult<T> = std::result::Result<T, RunError>;

fn usage(msg: impl Into<String>) -> RunError {
    RunError::Usage(msg.into())
}

#[derive(Serialize)]
struct DataSummary {
    m: usize,
    n: usize,
    rank: usize,
    transposed: bool,
    sigma: Vec<f64>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: Command,
    config: &'a RunConfig,
    data: DataSummary,
    result: T,
}

#[derive(Serialize)]
struct SpectrumResult {
    family: &'static str,
    q: usize,
    k: usize,
    j: f64,
    report: mfland_core::spectrum::SpectrumReport,
}

#[derive(Serialize)]
struct ClassifyResult {
    q: usize,
    k: usize,
    selection: Vec<usize>,
    lambdas: Vec<f64>,
    j: f64,
    classification: ClassificationResult,
}

#[derive(Serialize)]
struct OrbitResult {
    k: usize,
    induced_norm: f64,
    condition_number: f64,
    j_before: f64,
    j_after: f64,
    lambda_min_before: f64,
    lambda_min_bound: f64,
    lambda_min_after: f64,
    inertia_before: Inertia,
    inertia_after: Inertia,
}

#[derive(Serialize)]
struct FlowResult {
    k: usize,
    status: FlowStatus,
    samples: usize,
    t_final: f64,
    j_initial: f64,
    j_final: f64,
    gradnorm_final: f64,
    max_drift: f64,
    max_trace_drift: f64,
    max_ascent: f64,
    diagnosis: Option<LimitDiagnosis>,
}

fn read_matrix(path: &Path) -> RunResult<DMatrix<f64>> {
    DataMatrixSvd::read_csv_matrix(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn require_k(cfg: &RunConfig) -> RunResult<usize> {
    match cfg.k {
        Some(0) => Err(usage("--k must be positive")),
        Some(k) => Ok(k),
        None => Err(usage(format!("--k is required for {:?}", cfg.command).to_lowercase())),
    }
}

fn selection(cfg: &RunConfig, x: &DataMatrixSvd) -> RunResult<Selection> {
    Ok(Selection::from_one_based(&cfg.selection, x.m())?)
}

/// C0 from --c0, or zeros of the expected shape.
fn c0_block(cfg: &RunConfig, rows: usize, cols: usize) -> RunResult<DMatrix<f64>> {
    match &cfg.c0_path {
        Some(p) => read_matrix(p),
        None => Ok(DMatrix::zeros(rows, cols)),
    }
}

fn summary(x: &DataMatrixSvd) -> DataSummary {
    DataSummary { m: x.m(), n: x.n(), rank: x.rank(), transposed: x.transposed(), sigma: x.sigma().to_vec() }
}

fn spectrum(cfg: &RunConfig, x: &DataMatrixSvd) -> RunResult<SpectrumResult> {
    let k = require_k(cfg)?;
    let sel = selection(cfg, x)?;
    let q = sel.q();
    let free = x.n() - x.rank();
    let (family, report) = if cfg.balanced {
        ("balanced", spectrum_balanced(x, &sel, k)?)
    } else if cfg.scale.is_some() || (q == k && q > 0) {
        if q != k {
            return Err(usage(format!("--scale needs a full selection (q = k), got q = {q}, k = {k}")));
        }
        ("full_rank_scaled", spectrum_full_rank_scaled(x, &sel, cfg.scale.unwrap_or(1.0))?)
    } else if q == 0 {
        ("zero_family", spectrum_zero_family(x, &c0_block(cfg, free, k)?, k)?)
    } else {
        let cp = build_canonical(x, &sel, k, &c0_block(cfg, free, k - q)?)?;
        ("deficient_rank", spectrum_deficient_rank(&cp)?)
    };
    let j = evaluate_j(x, &report.point)?;
    Ok(SpectrumResult { family, q, k, j, report })
}

fn classify(cfg: &RunConfig, x: &DataMatrixSvd) -> RunResult<ClassifyResult> {
    let (cp, j) = match (&cfg.w_path, &cfg.s_path) {
        (Some(w), Some(s)) => {
            let user = FactorPair::new(read_matrix(w)?, read_matrix(s)?);
            if user.w.ncols() != user.s.nrows() {
                return Err(usage(format!("W has {} columns but S has {} rows", user.w.ncols(), user.s.nrows())));
            }
            let p = x.to_internal(&user);
            let j = evaluate_j(x, &p)?;
            (reduce_to_canonical(x, &p, cfg.tol)?.0, j)
        }
        (None, None) => {
            let k = require_k(cfg)?;
            let sel = selection(cfg, x)?;
            let q = sel.q().min(k);
            let cp = build_canonical(x, &sel, k, &c0_block(cfg, x.n() - x.rank(), k - q)?)?;
            let j = cp.j_value();
            (cp, j)
        }
        _ => return Err(usage("--w and --s must be given together")),
    };
    Ok(ClassifyResult {
        q: cp.q(),
        k: cp.k(),
        selection: cp.selection().indices().iter().map(|i| i + 1).collect(),
        lambdas: cp.lambdas(),
        j,
        classification: classify_canonical(&cp)?,
    })
}

fn orbit(cfg: &RunConfig, x: &DataMatrixSvd) -> RunResult<OrbitResult> {
    let k = require_k(cfg)?;
    let sel = selection(cfg, x)?;
    let q = sel.q().min(k);
    let cp = build_canonical(x, &sel, k, &c0_block(cfg, x.n() - x.rank(), k - q)?)?;
    let g = match (&cfg.group_path, cfg.scale) {
        (Some(p), None) => GroupElement::new(read_matrix(p)?)?,
        (None, Some(a)) => GroupElement::scalar(a, k)?,
        _ => return Err(usage("orbit needs exactly one of --group and --scale")),
    };
    if g.k() != k {
        return Err(usage(format!("group element is {0}x{0} but k = {k}", g.k())));
    }
    let p = cp.materialize();
    let moved = apply_group_action(&g, &p)?;
    let before = numeric_spectrum(&dense_hessian(x, &p)?)?.min();
    let after = numeric_spectrum(&dense_hessian(x, &moved)?)?.min();
    Ok(OrbitResult {
        k,
        induced_norm: induced_norm(&g),
        condition_number: g.condition_number(),
        j_before: evaluate_j(x, &p)?,
        j_after: evaluate_j(x, &moved)?,
        lambda_min_before: before,
        lambda_min_bound: transported_lambda_min_bound(before, &g)?,
        lambda_min_after: after,
        inertia_before: inertia_of(x, &p)?,
        inertia_after: inertia_transported(x, &p, &g)?,
    })
}

fn flow(cfg: &RunConfig, x: &DataMatrixSvd) -> RunResult<(FlowResult, mfland_core::flow::FlowTrajectory)> {
    let k = require_k(cfg)?;
    if cfg.init_scale.is_nan() || cfg.init_scale <= 0.0 {
        return Err(usage("--init-scale must be positive"));
    }
    let mut r = rng(cfg.seed);
    let (m, n) = (x.m(), x.n());
    let p0 = if cfg.balanced {
        random_balanced_init(&mut r, m, k, n, cfg.init_scale)?
    } else {
        FactorPair::new(gaussian_matrix(&mut r, m, k) * cfg.init_scale, gaussian_matrix(&mut r, k, n) * cfg.init_scale)
    };
    let traj = integrate_flow(x, &p0, cfg.tol, cfg.t_max, &StepControl::default())?;
    let diagnosis = match traj.status {
        FlowStatus::Converged => Some(classify_limit(x, &traj, cfg.tol.sqrt())?),
        _ => None,
    };
    let last = traj.final_sample();
    let res = FlowResult {
        k,
        status: traj.status,
        samples: traj.samples.len(),
        t_final: last.t,
        j_initial: traj.samples[0].j,
        j_final: last.j,
        gradnorm_final: last.gradnorm,
        max_drift: traj.max_drift(),
        max_trace_drift: traj.max_trace_drift,
        max_ascent: traj.max_ascent(),
        diagnosis,
    };
    Ok((res, traj))
}

fn envelope<T: Serialize>(cfg: &RunConfig, x: &DataMatrixSvd, result: T) -> RunResult<String> {
    let env = Envelope { schema_version: SCHEMA_VERSION, command: cfg.command, config: cfg, data: summary(x), result };
    to_json(&env).map_err(|e| RunError::Output(io::Error::other(e)))
}

fn emit(cfg: &RunConfig, body: &[u8]) -> RunResult<()> {
    match &cfg.output {
        Some(p) => std::fs::write(p, body).map_err(RunError::Output),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body).and_then(|_| out.flush()).map_err(RunError::Output)
        }
    }
}

fn csv_lines(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Runs one command; Ok(false) means the run completed but a check failed.
fn run(cfg: &RunConfig) -> RunResult<bool> {
    let raw = read_matrix(&cfg.x_path)?;
    let x = DataMatrixSvd::load(&raw, cfg.rank_tol)?;
    if !(cfg.tol > 0.0 && cfg.tol < 1.0) {
        return Err(usage(format!("--tol must lie in (0, 1), got {}", cfg.tol)));
    }
    let csv = cfg.format == Format::Csv;
    match cfg.command {
        Command::Spectrum => {
            let res = spectrum(cfg, &x)?;
            let body = if csv {
                csv_lines(
                    "value,provenance,coupling",
                    res.report.eigpairs.iter().map(|e| {
                        format!("{},{},{}", sci(e.value), e.provenance, e.coupling.map(sci).unwrap_or_default())
                    }),
                )
            } else {
                envelope(cfg, &x, res)?
            };
            emit(cfg, body.as_bytes())?;
            Ok(true)
        }
        Command::Classify => {
            let res = classify(cfg, &x)?;
            let body = if csv {
                let c = &res.classification;
                csv_lines(
                    "kind,q,k,p,lambda_min_closed_form,j",
                    [format!(
                        "{:?},{},{},{},{},{}",
                        c.kind,
                        res.q,
                        res.k,
                        c.p.map(|p| p.to_string()).unwrap_or_default(),
                        c.lambda_min_closed_form.map(sci).unwrap_or_default(),
                        sci(res.j)
                    )],
                )
            } else {
                envelope(cfg, &x, res)?
            };
            emit(cfg, body.as_bytes())?;
            Ok(true)
        }
        Command::Orbit => {
            let res = orbit(cfg, &x)?;
            let body = if csv {
                csv_lines(
                    "induced_norm,condition_number,lambda_min_before,lambda_min_bound,lambda_min_after",
                    [[
                        res.induced_norm,
                        res.condition_number,
                        res.lambda_min_before,
                        res.lambda_min_bound,
                        res.lambda_min_after,
                    ]
                    .map(sci)
                    .join(",")],
                )
            } else {
                envelope(cfg, &x, res)?
            };
            emit(cfg, body.as_bytes())?;
            Ok(true)
        }
        Command::Flow => {
            let (res, traj) = flow(cfg, &x)?;
            if let Some(p) = &cfg.trajectory {
                let f = File::create(p).map_err(RunError::Output)?;
                traj.write_csv(BufWriter::new(f)).map_err(|e| RunError::Output(io::Error::other(e)))?;
            }
            let body = if csv {
                let mut buf = Vec::new();
                traj.write_csv(&mut buf).map_err(|e| RunError::Output(io::Error::other(e)))?;
                buf
            } else {
                envelope(cfg, &x, res)?.into_bytes()
            };
            emit(cfg, &body)?;
            Ok(true)
        }
        Command::Verify => {
            let rep = run_verify(&x, cfg.seed);
            let ok = rep.passed();
            let body = if csv {
                csv_lines(
                    "name,passed,worst,tolerance",
                    rep.checks.iter().map(|c| format!("{},{},{},{}", c.name, c.passed, sci(c.worst), sci(c.tolerance))),
                )
            } else {
                envelope(cfg, &x, &rep)?
            };
            emit(cfg, body.as_bytes())?;
            for c in rep.checks.iter().filter(|c| !c.passed) {
                eprintln!("check failed: {} ({})", c.name, c.detail);
            }
            Ok(ok)
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("MFLAND_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        // a pool may already exist in embedding contexts; the cap is best effort
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cfg = RunConfig::from_cli(Cli::parse());
    init_threads();
    match run(&cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
