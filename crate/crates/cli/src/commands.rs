//! Command implementations and their CSV and JSON emission.
//!
//! Each command reads one strict TOML run file, does its work, writes its
//! outputs under the resolved directory and prefix, prints one line per
//! emitted file, and returns an error carrying the exit code otherwise.
//! Numeric cells use the shortest decimal that round-trips the binary
//! value, so identical runs produce byte-identical files; grid sweeps gather
//! their results in row-major order no matter how many worker threads the
//! `--jobs` flag allows.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::iter::{IntoParallelIterator, ParallelIterator};

use distcurve::curves::{
    integrate, ode_nabla_u_a, sigma_conformal, sigma_null, sigma_projective, weighted_state,
    CausalClass, CurveKind, CurveSamples, RunStatus,
};
use distcurve::geometry::curvature::connection_at;
use distcurve::geometry::{catalog, curvature_at, ChartDomain, Geometry, Metric};
use distcurve::integrals::{verify_conservation, zero_locus_scan, DRIFT_TOLERANCE};
use distcurve::tensor::DenseTensor;
use distcurve::tractor::{parallel_residual, tractor_metric, transport, Structure};
use distcurve::{bgg, curves};

use crate::config::{CurveConfig, ResidualKind, RunConfig};
use crate::error::CliError;

/// Default pass threshold for operator residual sweeps. Solution fields
/// evaluate orders of magnitude below this on analytic charts; non-solutions
/// land well above it.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Default pass threshold for the parallel-transport residual, matching the
/// discrimination threshold used by the curve characterisation checks.
pub const TRANSPORT_TOLERANCE: f64 = 1e-6;

/// Flags shared by every configured command.
#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Path to the TOML run file.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for emitted files; overrides the config's output dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for grid sweeps; defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Pass/fail tolerance override for verifying commands.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Force per-step renormalisation of curve constraints.
    #[arg(long)]
    pub renormalize: bool,
}

/// Resolve the output directory and file-name prefix.
fn out_paths(cfg: &RunConfig, args: &RunArgs) -> (PathBuf, String) {
    let output = cfg.output.as_ref();
    let dir = args
        .out
        .clone()
        .or_else(|| output.and_then(|o| o.dir.clone().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("."));
    let prefix = output
        .and_then(|o| o.prefix.clone())
        .unwrap_or_else(|| "run".to_string());
    (dir, prefix)
}

/// Write a file under the output directory and announce it on stdout.
fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::BadInput(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text)
        .map_err(|e| CliError::BadInput(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Pretty JSON with a trailing newline.
fn to_pretty(value: &serde_json::Value) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Run a closure inside a thread pool bounded by `--jobs`, or on the global
/// pool when the flag is absent.
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| CliError::BadInput(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Integrate the configured curve.
fn run_curve(metric: &Metric, cfg: &CurveConfig, force_renorm: bool) -> Result<CurveSamples, CliError> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let opts = cfg.options(force_renorm);
    Ok(integrate(metric, kind, &cfg.x0, &cfg.u0, cfg.a0.as_deref(), &opts)?)
}

/// Fail with the chart exit code if the run stopped early.
fn require_completed(run: &CurveSamples) -> Result<(), CliError> {
    if let RunStatus::Stopped { step, reason } = &run.status {
        return Err(CliError::ChartExit { step: *step, reason: reason.clone() });
    }
    Ok(())
}

/// Canonical config spelling of a curve family.
fn kind_name(kind: CurveKind) -> &'static str {
    match kind {
        CurveKind::Geodesic => "geodesic",
        CurveKind::NullGeodesic => "null_geodesic",
        CurveKind::ConformalCircleUnit => "conformal_circle",
        CurveKind::ConformalCircleProjective => "conformal_circle_projective",
    }
}

/// Append one comma-separated row of shortest-round-trip floats.
fn push_cells(row: &mut String, cells: &[f64]) {
    for v in cells {
        if !row.is_empty() && !row.ends_with('\n') {
            row.push(',');
        }
        let _ = write!(row, "{v}");
    }
}

// ---------------------------------------------------------------------------
// integrate
// ---------------------------------------------------------------------------

/// Integrate the configured curve; emit sample CSV and diagnostics JSON.
pub fn cmd_integrate(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let metric = cfg.metric()?.build()?;
    let run = run_curve(&metric, cfg.curve()?, args.renormalize)?;
    let (dir, prefix) = out_paths(&cfg, args);

    let n = metric.dim();
    let mut csv = String::from("t");
    for name in ["x", "u", "a"] {
        for i in 1..=n {
            let _ = write!(csv, ",{name}{i}");
        }
    }
    csv.push('\n');
    for st in &run.states {
        let mut row = String::new();
        push_cells(&mut row, &[st.t]);
        push_cells(&mut row, &st.x);
        push_cells(&mut row, &st.u);
        push_cells(&mut row, &st.a);
        row.push('\n');
        csv.push_str(&row);
    }
    write_text(&dir, &format!("{prefix}_samples.csv"), &csv)?;

    let diag = diagnostics(&metric, &run)?;
    write_text(&dir, &format!("{prefix}_integrate.json"), &to_pretty(&diag)?)?;

    match &run.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Stopped { step, reason } => {
            Err(CliError::ChartExit { step: *step, reason: reason.clone() })
        }
    }
}

/// Constraint drift and closure diagnostics for an integrated curve.
fn diagnostics(metric: &Metric, run: &CurveSamples) -> Result<serde_json::Value, CliError> {
    let first = &run.states[0];
    let last = run.last();
    let closure = first
        .x
        .iter()
        .zip(&last.x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    let constraints = match run.kind {
        CurveKind::Geodesic => {
            // An affine parametrisation keeps g(u, u) constant.
            let mut q0 = 0.0;
            let mut drift = 0.0f64;
            for (i, st) in run.states.iter().enumerate() {
                let q = metric.matrix_at(&st.x)?.inner(&st.u, &st.u);
                if i == 0 {
                    q0 = q;
                }
                drift = drift.max((q - q0).abs());
            }
            serde_json::json!({ "q0": q0, "max_q_drift": drift })
        }
        CurveKind::NullGeodesic => {
            let mut worst = 0.0f64;
            for st in &run.states {
                worst = worst.max(metric.matrix_at(&st.x)?.inner(&st.u, &st.u).abs());
            }
            serde_json::json!({ "max_abs_q": worst })
        }
        CurveKind::ConformalCircleUnit => {
            let mut unit_dev = 0.0f64;
            let mut ortho_dev = 0.0f64;
            for st in &run.states {
                let mats = metric.matrix_at(&st.x)?;
                unit_dev = unit_dev.max((mats.inner(&st.u, &st.u).abs() - 1.0).abs());
                ortho_dev = ortho_dev.max(mats.inner(&st.u, &st.a).abs());
            }
            serde_json::json!({ "max_unit_deviation": unit_dev, "max_orthogonality": ortho_dev })
        }
        CurveKind::ConformalCircleProjective => {
            // The projective parametrisation is the gauge in which the
            // acceleration tractor is null; its norm is the drift monitor.
            let mut worst = 0.0f64;
            for st in &run.states {
                let conn = connection_at(metric, &st.x)?;
                let nabla = ode_nabla_u_a(&conn, run.kind, &st.u, &st.a)?;
                let ws = weighted_state(&conn, &st.u, &st.a, &nabla)?;
                let a_tr = curves::acceleration_tractor(&conn, &ws)?;
                let (h, _) = tractor_metric(&conn)?;
                worst = worst.max(tractor_norm2(&h, &a_tr).abs());
            }
            serde_json::json!({ "max_acceleration_tractor_norm": worst })
        }
    };

    let (status, stop) = match &run.status {
        RunStatus::Completed => ("completed", serde_json::Value::Null),
        RunStatus::Stopped { step, reason } => {
            ("stopped", serde_json::json!({ "step": step, "reason": reason }))
        }
    };
    Ok(serde_json::json!({
        "kind": kind_name(run.kind),
        "causal": run.causal.to_string(),
        "n_samples": run.states.len(),
        "status": status,
        "stop": stop,
        "closure": closure,
        "constraints": constraints,
    }))
}

/// Tractor norm squared against a row-major metric block.
fn tractor_norm2(h: &[f64], v: &DenseTensor) -> f64 {
    let nt = v.dim();
    let mut s = 0.0;
    for a in 0..nt {
        for b in 0..nt {
            s += h[a * nt + b] * v.get(&[a]) * v.get(&[b]);
        }
    }
    s
}

// ---------------------------------------------------------------------------
// conserve
// ---------------------------------------------------------------------------

/// Integrate, then verify each configured first integral for drift.
pub fn cmd_conserve(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let metric = cfg.metric()?.build()?;
    let run = run_curve(&metric, cfg.curve()?, args.renormalize)?;
    require_completed(&run)?;

    let tol = args.tol.unwrap_or(DRIFT_TOLERANCE);
    let mut reports = Vec::with_capacity(cfg.integrals.len());
    for block in &cfg.integrals {
        let integral = block.build(metric.dim())?;
        reports.push(verify_conservation(&metric, &run, &integral, tol)?);
    }

    let (dir, prefix) = out_paths(&cfg, args);
    write_text(
        &dir,
        &format!("{prefix}_conserve.json"),
        &to_pretty(&serde_json::to_value(&reports)?)?,
    )?;
    for r in &reports {
        println!(
            "{}: Q0 = {}, rel drift = {:.3e}, {}",
            r.kind,
            r.q0,
            r.rel_drift,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::Verification(format!(
            "{failed} of {} first integrals drifted beyond {tol:e}",
            reports.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// residual
// ---------------------------------------------------------------------------

/// Operator residual at one chart point.
fn residual_at(kind: ResidualKind, geom: &Geometry, field: &bgg::FieldJet) -> Result<f64, CliError> {
    Ok(match kind {
        ResidualKind::Killing => bgg::residual_killing(geom, field)?,
        ResidualKind::ConformalKilling => bgg::residual_conformal_killing(geom, field)?,
        ResidualKind::Cky2 => bgg::residual_cky2(geom, field, false)?,
        ResidualKind::Bgg3Projective => bgg::residual_bgg3_projective(geom, field)?,
        ResidualKind::Bgg3Conformal => bgg::residual_bgg3_conformal(geom, field)?,
        ResidualKind::ProjBivector => bgg::residual_proj_bivector(geom, field)?,
    })
}

/// Row-major multi-index of a flat cell number.
fn unflatten(mut flat: usize, resolution: &[usize]) -> Vec<usize> {
    let mut index = vec![0usize; resolution.len()];
    for axis in (0..resolution.len()).rev() {
        index[axis] = flat % resolution[axis];
        flat /= resolution[axis];
    }
    index
}

/// Sweep the configured operator residual over a grid of chart points.
pub fn cmd_residual(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let metric = cfg.metric()?.build()?;
    let spec = cfg.residual()?.build(&metric)?;
    let tol = args.tol.unwrap_or(RESIDUAL_TOLERANCE);

    let cells = spec.grid.cell_count();
    let rows: Result<Vec<(Vec<usize>, Vec<f64>, f64)>, CliError> = with_pool(args.jobs, || {
        (0..cells)
            .into_par_iter()
            .map(|flat| {
                let index = unflatten(flat, &spec.resolution);
                let x = spec.grid.cell_center(&index);
                let geom = curvature_at(&metric, &x)?;
                let value = residual_at(spec.kind, &geom, &spec.field)?;
                Ok((index, x, value))
            })
            .collect()
    })?;
    let rows = rows?;

    let n = metric.dim();
    let mut csv = String::new();
    for i in 1..=n {
        let _ = write!(csv, "i{i},");
    }
    for i in 1..=n {
        let _ = write!(csv, "x{i},");
    }
    csv.push_str("residual\n");
    let mut max_residual = 0.0f64;
    for (index, x, value) in &rows {
        for i in index {
            let _ = write!(csv, "{i},");
        }
        let mut row = String::new();
        push_cells(&mut row, x);
        push_cells(&mut row, &[*value]);
        csv.push_str(&row);
        csv.push('\n');
        max_residual = max_residual.max(*value);
    }

    let (dir, prefix) = out_paths(&cfg, args);
    write_text(&dir, &format!("{prefix}_residual.csv"), &csv)?;
    let summary = serde_json::json!({
        "kind": spec.kind.name(),
        "n_points": rows.len(),
        "max_residual": max_residual,
        "tol": tol,
        "pass": max_residual <= tol,
    });
    write_text(&dir, &format!("{prefix}_residual.json"), &to_pretty(&summary)?)?;
    println!("{}: max residual {max_residual:.3e} over {} points", spec.kind.name(), rows.len());

    if max_residual > tol {
        return Err(CliError::Verification(format!(
            "max {} residual {max_residual:.3e} exceeds {tol:e}",
            spec.kind.name()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// scan
// ---------------------------------------------------------------------------

/// Scan a coordinate box for the zero locus of the configured data.
pub fn cmd_scan(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let metric = cfg.metric()?.build()?;
    let scan_cfg = cfg.scan()?;
    let (predicate, grid) = scan_cfg.build(&metric)?;
    let tol = args.tol.or(scan_cfg.tol);

    let hits = with_pool(args.jobs, || zero_locus_scan(&metric, &predicate, &grid, tol))??;

    let n = metric.dim();
    let norm_count = hits.first().map_or(0, |h| h.norms.len());
    let mut csv = String::new();
    for i in 1..=n {
        let _ = write!(csv, "i{i},");
    }
    for i in 1..=n {
        let _ = write!(csv, "x{i},");
    }
    for i in 1..=norm_count.max(1) {
        let _ = write!(csv, "norm{i}");
        if i < norm_count.max(1) {
            csv.push(',');
        }
    }
    csv.push('\n');
    for hit in &hits {
        for i in &hit.index {
            let _ = write!(csv, "{i},");
        }
        let mut row = String::new();
        push_cells(&mut row, &hit.center);
        push_cells(&mut row, &hit.norms);
        csv.push_str(&row);
        csv.push('\n');
    }

    let (dir, prefix) = out_paths(&cfg, args);
    write_text(&dir, &format!("{prefix}_scan.csv"), &csv)?;
    let summary = serde_json::json!({
        "predicate": scan_cfg.predicate,
        "cells": grid.cell_count(),
        "hits": hits.len(),
        "tol": tol,
    });
    write_text(&dir, &format!("{prefix}_scan.json"), &to_pretty(&summary)?)?;
    println!("{} hit cells out of {}", hits.len(), grid.cell_count());
    Ok(())
}

// ---------------------------------------------------------------------------
// transport
// ---------------------------------------------------------------------------

/// Structure whose curve tractor a family is characterised by.
fn default_structure(kind: CurveKind) -> Structure {
    match kind {
        CurveKind::Geodesic => Structure::Projective,
        _ => Structure::Conformal,
    }
}

/// Curve tractor of one integrated state.
fn curve_sigma(
    metric: &Metric,
    structure: Structure,
    run: &CurveSamples,
    state_index: usize,
) -> Result<DenseTensor, CliError> {
    let st = &run.states[state_index];
    let n = metric.dim();
    match structure {
        Structure::Projective => Ok(sigma_projective(n, &st.u)?),
        Structure::Conformal => {
            if run.causal == CausalClass::Null {
                return Ok(sigma_null(n, &st.u)?);
            }
            let conn = connection_at(metric, &st.x)?;
            let nabla = ode_nabla_u_a(&conn, run.kind, &st.u, &st.a)?;
            let ws = weighted_state(&conn, &st.u, &st.a, &nabla)?;
            Ok(sigma_conformal(&conn, &ws)?)
        }
    }
}

/// Transport the curve tractor along the integrated curve and check that it
/// stays parallel and matches the pointwise construction.
pub fn cmd_transport(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let metric = cfg.metric()?.build()?;
    let run = run_curve(&metric, cfg.curve()?, args.renormalize)?;
    require_completed(&run)?;

    let structure = match &cfg.transport {
        Some(t) => t.structure()?.unwrap_or_else(|| default_structure(run.kind)),
        None => default_structure(run.kind),
    };
    let tol = args.tol.unwrap_or(TRANSPORT_TOLERANCE);

    let mut fields = Vec::with_capacity(run.states.len());
    for i in 0..run.states.len() {
        fields.push(curve_sigma(&metric, structure, &run, i)?);
    }
    let path = run.as_path();
    let residuals = parallel_residual(&metric, structure, &path, &fields)?;
    let moved = transport(&metric, structure, &path, &fields[0])?;
    let scale = fields[0].max_abs().max(1e-300);
    let gaps: Vec<f64> = moved
        .iter()
        .zip(&fields)
        .map(|(m, f)| m.sub(f).map(|d| d.max_abs() / scale))
        .collect::<Result<_, _>>()?;

    // Residual rows align with the interior samples used by the
    // finite-difference stencil.
    let mut csv = String::from("t,transport_gap,parallel_residual\n");
    for (k, r) in residuals.iter().enumerate() {
        let mut row = String::new();
        push_cells(&mut row, &[path[k + 2].t, gaps[k + 2], *r]);
        csv.push_str(&row);
        csv.push('\n');
    }
    let max_residual = residuals.iter().copied().fold(0.0f64, f64::max);
    let max_gap = gaps.iter().copied().fold(0.0f64, f64::max);

    let (dir, prefix) = out_paths(&cfg, args);
    write_text(&dir, &format!("{prefix}_transport.csv"), &csv)?;
    let summary = serde_json::json!({
        "structure": match structure {
            Structure::Projective => "projective",
            Structure::Conformal => "conformal",
        },
        "kind": kind_name(run.kind),
        "n_samples": run.states.len(),
        "max_parallel_residual": max_residual,
        "max_transport_gap": max_gap,
        "tol": tol,
        "pass": max_residual <= tol,
    });
    write_text(&dir, &format!("{prefix}_transport.json"), &to_pretty(&summary)?)?;
    println!("max parallel residual {max_residual:.3e}, max transport gap {max_gap:.3e}");

    if max_residual > tol {
        return Err(CliError::Verification(format!(
            "curve tractor is not parallel: max residual {max_residual:.3e} exceeds {tol:e}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// catalog
// ---------------------------------------------------------------------------

/// Compact text for a chart domain.
fn domain_text(domain: &ChartDomain) -> String {
    match domain {
        ChartDomain::All => "all of the chart".to_string(),
        ChartDomain::Ball { radius } => format!("ball of radius {radius}"),
        ChartDomain::Box(corners) => {
            let axes: Vec<String> = corners.iter().map(|[lo, hi]| format!("[{lo},{hi}]")).collect();
            axes.join("x")
        }
    }
}

/// List the built-in chart catalog.
pub fn cmd_catalog() -> Result<(), CliError> {
    println!("{:<14} {:>3}  {:<9} {:<24} description", "name", "dim", "signature", "domain");
    for entry in catalog() {
        let (p, q) = entry.signature;
        println!(
            "{:<14} {:>3}  ({p},{q})     {:<24} {}",
            entry.name,
            entry.dim,
            domain_text(entry.metric.domain()),
            entry.description
        );
    }
    Ok(())
}
