//! The five subcommands: kernels, simulate, roots, sweep, verify.
//!
//! Every command echoes the raw config into the output directory and writes
//! a manifest of produced files; float formatting is fixed so identical
//! configs produce byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hyperlab_core::grid::{TriField, TriGrid};
use hyperlab_core::kernel::{
    compute_feedback_gains, solve_inverse_kernels_with, solve_kernels_with, verify_kernel_residual,
    FeedbackGains, KernelSet, SolverOptions,
};
use hyperlab_core::model::PlantConfig;
use hyperlab_core::neutral::{reduce_closed_loop, simulate_neutral, History};
use hyperlab_core::sim::{
    inverse_transform_state, simulate, transform_state, ControlLaw, PdeState, TraceRecord,
};
use hyperlab_core::spectral::{
    build_characteristic, count_rhp_roots, theorem_certificate, Rect, ScanOptions,
};

use crate::config::{ConfigError, RunConfig};

/// Command failure classified by exit code.
#[derive(Debug)]
pub enum CmdError {
    /// Exit code 1.
    Config(String),
    /// Exit code 2.
    Numerical(String),
    /// Exit code 3.
    Verification(String),
    /// Exit code 2 (I/O counts as an environment/numerical failure).
    Io(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Config(_) => 1,
            CmdError::Numerical(_) | CmdError::Io(_) => 2,
            CmdError::Verification(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Config(m) | CmdError::Numerical(m) | CmdError::Verification(m) | CmdError::Io(m) => m,
        }
    }
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}

impl From<hyperlab_core::Error> for CmdError {
    fn from(e: hyperlab_core::Error) -> Self {
        use hyperlab_core::Error::*;
        match e {
            InvalidPlant(_) | InvalidProfile(_) | Precondition(_) | Commensurability { .. }
            | Unsupported(_) | GridMismatch(_) => CmdError::Config(e.to_string()),
            NonConvergence { .. } | NonFiniteState { .. } | ContourTooClose { .. }
            | RootIsolation(_) => CmdError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e.to_string())
    }
}

/// Output directory with a manifest of everything written into it.
pub struct OutputDir {
    path: PathBuf,
    manifest: Vec<String>,
}

impl OutputDir {
    pub fn create(path: &Path, config: &RunConfig) -> Result<Self, CmdError> {
        std::fs::create_dir_all(path)?;
        let mut dir = Self {
            path: path.to_path_buf(),
            manifest: Vec::new(),
        };
        dir.write("config.txt", &config.raw)?;
        Ok(dir)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CmdError> {
        let path = self.path.join(name);
        std::fs::write(&path, contents)?;
        self.manifest.push(name.to_string());
        Ok(path)
    }

    pub fn finish(mut self) -> Result<(), CmdError> {
        let mut manifest = self.manifest.clone();
        manifest.push("manifest.txt".to_string());
        let body = manifest.join("\n") + "\n";
        self.write("manifest.txt", &body)?;
        Ok(())
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.12e}")
}

fn solver_options(config: &RunConfig) -> Result<SolverOptions<f64>, CmdError> {
    let mut options = SolverOptions::default();
    if let Some(tol) = config.f64_opt("numerics.tolerance")? {
        options.tolerance = tol;
    }
    Ok(options)
}

fn scan_options(config: &RunConfig) -> Result<ScanOptions<f64>, CmdError> {
    let mut options = ScanOptions::default();
    if let Some(limit) = config.usize_opt("scan.isolate_limit")? {
        options.isolate_limit = limit;
    }
    Ok(options)
}

fn kernels_csv(kernels: &KernelSet<f64>) -> String {
    let grid = kernels.grid();
    let mut body = String::from("x,xi,Kuu,Kuv,Kvu,Kvv\n");
    for (i, j) in grid.nodes() {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{}",
            fmt_f(grid.coord(i)),
            fmt_f(grid.coord(j)),
            fmt_f(kernels.kuu().get(i, j)),
            fmt_f(kernels.kuv().get(i, j)),
            fmt_f(kernels.kvu().get(i, j)),
            fmt_f(kernels.kvv().get(i, j)),
        );
    }
    body
}

fn load_kernels_csv(path: &Path) -> Result<KernelSet<f64>, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            continue; // header
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(CmdError::Config(format!(
                "{}:{}: expected 6 columns",
                path.display(),
                idx + 1
            )));
        }
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                CmdError::Config(format!("{}:{}: bad number `{s}`", path.display(), idx + 1))
            })
        };
        rows.push([
            parse(fields[2])?,
            parse(fields[3])?,
            parse(fields[4])?,
            parse(fields[5])?,
        ]);
    }
    // (n+1)(n+2)/2 rows on the triangle.
    let count = rows.len();
    let n = ((((8 * count + 1) as f64).sqrt() as usize).saturating_sub(3)) / 2;
    if (n + 1) * (n + 2) / 2 != count {
        return Err(CmdError::Config(format!(
            "{}: {count} rows do not form a triangular grid",
            path.display()
        )));
    }
    let grid = TriGrid::new(n);
    let mut fields = [
        TriField::zeros(grid),
        TriField::zeros(grid),
        TriField::zeros(grid),
        TriField::zeros(grid),
    ];
    for ((i, j), row) in grid.nodes().zip(rows) {
        for (f, v) in fields.iter_mut().zip(row) {
            f.set(i, j, v);
        }
    }
    let [kuu, kuv, kvu, kvv] = fields;
    Ok(KernelSet::from_fields(kuu, kuv, kvu, kvv)?)
}

pub fn cmd_kernels(config: &RunConfig, out: &Path) -> Result<(), CmdError> {
    let plant = config.plant()?;
    let n = config.n()?;
    let options = solver_options(config)?;
    let mut dir = OutputDir::create(out, config)?;
    let kernels = solve_kernels_with(&plant, n, &options)?;
    let report = verify_kernel_residual(&kernels, &plant);

    dir.write("kernels.csv", &kernels_csv(&kernels))?;
    let residuals = format!(
        "n = {n}\niterations = {}\nlast_update = {}\nresidual_Kuu = {}\nresidual_Kuv = {}\nresidual_Kvu = {}\nresidual_Kvv = {}\nresidual_max = {}\n",
        kernels.iterations(),
        fmt_f(kernels.last_update()),
        fmt_f(report.kuu),
        fmt_f(report.kuv),
        fmt_f(report.kvu),
        fmt_f(report.kvv),
        fmt_f(report.max()),
    );
    dir.write("kernel_residuals.txt", &residuals)?;
    dir.finish()?;
    println!(
        "kernels: n = {n}, {} sweeps, max residual {:.3e}",
        kernels.iterations(),
        report.max()
    );
    Ok(())
}

fn trace_csv(trace: &TraceRecord<f64>, stride: usize) -> String {
    let mut body = String::from("t,l2,u1,v1,U_cmd,U_applied,beta1\n");
    for row in (0..trace.len()).step_by(stride.max(1)) {
        let beta = trace
            .beta1
            .as_ref()
            .map(|b| fmt_f(b[row]))
            .unwrap_or_default();
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{}",
            fmt_f(trace.t[row]),
            fmt_f(trace.l2[row]),
            fmt_f(trace.u1[row]),
            fmt_f(trace.v1[row]),
            fmt_f(trace.u_cmd[row]),
            fmt_f(trace.u_applied[row]),
            beta,
        );
    }
    body
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Renders the L2 column of a trace CSV produced by `hyperlab simulate`."""
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "trace.csv"
t, l2 = [], []
with open(path) as fh:
    for row in csv.DictReader(fh):
        t.append(float(row["t"]))
        l2.append(float(row["l2"]))
plt.semilogy(t, l2)
plt.xlabel("t")
plt.ylabel("L2 norm of (u, v)")
plt.grid(True, which="both", alpha=0.3)
plt.tight_layout()
plt.savefig("l2.png", dpi=160)
print("wrote l2.png")
"#;

pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<(), CmdError> {
    let plant = config.plant()?;
    let law = config.law()?;
    let n = config.n()?;
    let delta = config.delta()?;
    let horizon = config.horizon()?;
    let (u0, v0) = config.initial_profiles()?;
    let stride = config.usize_opt("output.stride")?.unwrap_or(1);
    let mut dir = OutputDir::create(out, config)?;

    let kernels = if law.needs_kernels() {
        Some(solve_kernels_with(&plant, n, &solver_options(config)?)?)
    } else {
        None
    };
    let trace = simulate(&plant, law, kernels.as_ref(), delta, &u0, &v0, horizon, n)?;

    dir.write("trace.csv", &trace_csv(&trace, stride))?;
    dir.write("plot_l2.py", PLOT_SCRIPT)?;
    dir.finish()?;
    println!(
        "simulate: {} rows, L2(0) = {:.6e}, L2({horizon}) = {:.6e}",
        trace.len(),
        trace.l2[0],
        trace.l2_at(horizon)
    );
    Ok(())
}

/// Builds the characteristic function of the configured loop, solving the
/// kernel pipeline when the plant carries in-domain couplings.
fn characteristic_for(
    config: &RunConfig,
    plant: &PlantConfig<f64>,
    law: &ControlLaw<f64>,
    delta: f64,
) -> Result<
    (
        hyperlab_core::spectral::CharacteristicFunction<f64>,
        Option<FeedbackGains<f64>>,
    ),
    CmdError,
> {
    let gains = if plant.is_uncoupled() {
        None
    } else {
        let options = solver_options(config)?;
        let n = config.n()?;
        let kernels = solve_kernels_with(plant, n, &options)?;
        let inverse = solve_inverse_kernels_with(&kernels, &options)?;
        Some(compute_feedback_gains(&kernels, &inverse, plant)?)
    };
    let f = build_characteristic(plant, gains.as_ref(), law, delta)?;
    Ok((f, gains))
}

pub fn cmd_roots(config: &RunConfig, out: &Path) -> Result<(), CmdError> {
    let plant = config.plant()?;
    let law = config.law()?;
    let delta = config.delta()?;
    let cap = config.f64_or("scan.cap", 100.0)?;
    let re_min = config.f64_or("scan.re_min", 0.01)?;
    let re_max = config.f64_or("scan.re_max", 1.0)?;
    let im_min = config.f64_or("scan.im_min", -cap)?;
    let im_max = config.f64_or("scan.im_max", cap)?;
    let options = scan_options(config)?;
    let mut dir = OutputDir::create(out, config)?;

    let (f, _) = characteristic_for(config, &plant, &law, delta)?;
    let rect = Rect::new(re_min, re_max, im_min, im_max)?;
    let scan = count_rhp_roots(&f, &rect, &options)?;

    let mut roots_csv = String::from("re,im,residual\n");
    for root in &scan.roots {
        let _ = writeln!(
            roots_csv,
            "{},{},{}",
            fmt_f(root.location.re),
            fmt_f(root.location.im),
            fmt_f(root.residual)
        );
    }
    dir.write("roots.csv", &roots_csv)?;

    let mut verdict = String::new();
    let _ = writeln!(
        verdict,
        "open_loop_gain = {}",
        fmt_f(plant.open_loop_gain())
    );
    let _ = writeln!(
        verdict,
        "stabilizability = {:?}",
        hyperlab_core::model::classify_open_loop_gain(plant.rho(), plant.q())?
    );
    let _ = writeln!(
        verdict,
        "region_re = [{}, {}]",
        fmt_f(scan.region.re_min),
        fmt_f(scan.region.re_max)
    );
    let _ = writeln!(
        verdict,
        "region_im = [{}, {}]",
        fmt_f(scan.region.im_min),
        fmt_f(scan.region.im_max)
    );
    let _ = writeln!(verdict, "frequency_cap = {}", fmt_f(cap));
    let _ = writeln!(verdict, "count = {}", scan.count);
    let _ = writeln!(
        verdict,
        "rightmost_real_part = {}",
        scan.rightmost_re.map(fmt_f).unwrap_or_else(|| "none".into())
    );
    let _ = writeln!(verdict, "refined = {}", scan.refined);
    if let ControlLaw::PartialCancellation { k } | ControlLaw::StaticBoundary { k } = law {
        let (margin, sup_i) = theorem_certificate(&f, &plant, k, cap);
        let _ = writeln!(verdict, "certificate_margin = {}", fmt_f(margin));
        let _ = writeln!(verdict, "certificate_sup_I = {}", fmt_f(sup_i));
        let _ = writeln!(verdict, "certificate_holds = {}", margin > sup_i);
    }
    dir.write("verdict.txt", &verdict)?;
    dir.finish()?;
    println!(
        "roots: {} in [{}, {}] x [{}, {}] (rightmost {})",
        scan.count,
        scan.region.re_min,
        scan.region.re_max,
        scan.region.im_min,
        scan.region.im_max,
        scan.rightmost_re
            .map(|x| format!("{x:.6}"))
            .unwrap_or_else(|| "none".into())
    );
    Ok(())
}

/// Least-squares slope of `ln L2` over the trailing half of the trace; the
/// fitted decay/growth rate of the closed loop.
fn tail_rate(trace: &TraceRecord<f64>) -> Option<f64> {
    let t_end = *trace.t.last()?;
    let t_start = t_end / 2.0;
    let pts: Vec<(f64, f64)> = trace
        .t
        .iter()
        .zip(&trace.l2)
        .filter(|(t, l2)| **t >= t_start && **l2 > 0.0)
        .map(|(t, l2)| (*t, l2.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    let denom = m * sxx - sx * sx;
    (denom.abs() > 1e-300).then(|| (m * sxy - sx * sy) / denom)
}

struct SweepRow {
    value: f64,
    rhp_roots: Option<usize>,
    stable: Option<bool>,
    rate: Option<f64>,
    runtime_ms: u128,
    status: String,
}

fn sweep_one(config: &RunConfig, key: &str, value: f64) -> Result<SweepRow, CmdError> {
    let started = Instant::now();
    let mut plant = config.plant()?;
    let mut law = config.law()?;
    let mut delta = config.delta()?;
    match key {
        "delta" => delta = value,
        "rho" => {
            plant = PlantConfig::new(
                plant.lambda(),
                plant.mu(),
                plant.q(),
                value,
                plant.sigma_pm().clone(),
                plant.sigma_mp().clone(),
            )?;
        }
        "K" => match &mut law {
            ControlLaw::PartialCancellation { k } | ControlLaw::StaticBoundary { k } => *k = value,
            _ => {
                return Err(CmdError::Config(
                    "sweep key `K` needs a law with a gain (partial_cancellation or \
                     static_boundary)"
                        .into(),
                ))
            }
        },
        _ => unreachable!("validated sweep key"),
    }

    let n = config.n()?;
    let horizon = config.horizon()?;
    let cap = config.f64_or("scan.cap", 100.0)?;
    let re_min = config.f64_or("scan.re_min", 0.01)?;
    let re_max = config.f64_or("scan.re_max", 1.0)?;
    let options = solver_options(config)?;

    let kernels = if law.needs_kernels() || !plant.is_uncoupled() {
        Some(solve_kernels_with(&plant, n, &options)?)
    } else {
        None
    };
    let gains = match &kernels {
        Some(k) if !plant.is_uncoupled() => {
            let inverse = solve_inverse_kernels_with(k, &options)?;
            Some(compute_feedback_gains(k, &inverse, &plant)?)
        }
        _ => None,
    };

    let f = build_characteristic(&plant, gains.as_ref(), &law, delta)?;
    let rect = Rect::new(re_min, re_max, -cap, cap)?;
    let (count, _) = hyperlab_core::spectral::winding_count(&f, &rect, &scan_options(config)?)?;

    let (u0, v0) = config.initial_profiles()?;
    let trace = simulate(&plant, law, kernels.as_ref(), delta, &u0, &v0, horizon, n)?;
    Ok(SweepRow {
        value,
        rhp_roots: Some(count),
        stable: Some(count == 0),
        rate: tail_rate(&trace),
        runtime_ms: started.elapsed().as_millis(),
        status: "ok".into(),
    })
}

pub fn cmd_sweep(config: &RunConfig, out: &Path, workers: usize) -> Result<(), CmdError> {
    let key = config.sweep_key()?;
    let values = config.sweep_values()?;
    let mut dir = OutputDir::create(out, config)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CmdError::Numerical(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        use rayon::prelude::*;
        values
            .par_iter()
            .map(|&value| {
                sweep_one(config, &key, value).unwrap_or_else(|e| SweepRow {
                    value,
                    rhp_roots: None,
                    stable: None,
                    rate: None,
                    runtime_ms: 0,
                    status: e.message().replace(',', ";"),
                })
            })
            .collect()
    });

    let mut body = format!("{key},rhp_roots,stable,decay_rate,runtime_ms,status\n");
    for row in &rows {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{}",
            fmt_f(row.value),
            row.rhp_roots.map(|c| c.to_string()).unwrap_or_default(),
            row.stable.map(|s| s.to_string()).unwrap_or_default(),
            row.rate.map(fmt_f).unwrap_or_default(),
            row.runtime_ms,
            row.status,
        );
    }
    dir.write("sweep.csv", &body)?;
    dir.finish()?;
    println!("sweep: {} rows over `{key}`", rows.len());
    Ok(())
}

/// Serializes a reduction in the same `key = value` text format as run
/// configs: point terms as coefficient/delay (and onset) arrays, the
/// distributed kernel as an array with its span.
fn neutral_spec_text(spec: &hyperlab_core::neutral::NeutralSpec<f64>) -> String {
    let join = |it: &mut dyn Iterator<Item = f64>| {
        it.map(fmt_f).collect::<Vec<_>>().join(", ")
    };
    let mut body = format!("# closed-loop reduction: {}\n", spec.description());
    let points = spec.point_terms();
    let _ = writeln!(
        body,
        "neutral.point_coeffs = [{}]",
        join(&mut points.iter().map(|t| t.coeff))
    );
    let _ = writeln!(
        body,
        "neutral.point_delays = [{}]",
        join(&mut points.iter().map(|t| t.delay))
    );
    let _ = writeln!(
        body,
        "neutral.point_onsets = [{}]",
        join(&mut points.iter().map(|t| t.onset))
    );
    if let Some(kernel) = spec.kernel() {
        let _ = writeln!(body, "neutral.tau = {}", fmt_f(kernel.tau));
        let _ = writeln!(body, "neutral.dnu = {}", fmt_f(kernel.dnu));
        let _ = writeln!(
            body,
            "neutral.ntilde = [{}]",
            join(&mut kernel.samples.iter().copied())
        );
        let dist = spec.distributed_terms();
        let _ = writeln!(
            body,
            "neutral.dist_weights = [{}]",
            join(&mut dist.iter().map(|t| t.weight))
        );
        let _ = writeln!(
            body,
            "neutral.dist_shifts = [{}]",
            join(&mut dist.iter().map(|t| t.shift))
        );
        let _ = writeln!(
            body,
            "neutral.dist_onsets = [{}]",
            join(&mut dist.iter().map(|t| t.onset))
        );
    }
    body
}

pub fn cmd_verify(config: &RunConfig, out: &Path) -> Result<(), CmdError> {
    let plant = config.plant()?;
    let n = config.n()?;
    let delta = config.delta()?;
    let options = solver_options(config)?;
    let horizon = config.f64_or("verify.horizon", 8.0)?;
    let mut dir = OutputDir::create(out, config)?;

    let mut checks: Vec<(String, bool, String)> = Vec::new();

    // 1. Kernel residuals, either on a freshly solved set or on a supplied
    //    CSV export.
    let kernels = match config.string_opt("verify.kernels_csv")? {
        Some(path) => load_kernels_csv(Path::new(&path))?,
        None => solve_kernels_with(&plant, n, &options)?,
    };
    if kernels.n() != n {
        return Err(CmdError::Config(format!(
            "kernel file is on n = {} but numerics.n = {n}",
            kernels.n()
        )));
    }
    let residual = verify_kernel_residual(&kernels, &plant).max();
    let residual_bound = (100.0 * options.tolerance).max(1e-8);
    checks.push((
        "kernel_residual".into(),
        residual <= residual_bound,
        format!("max residual {residual:.3e} (bound {residual_bound:.3e})"),
    ));

    // 2. Volterra round trip on a smooth test state.
    let inverse = solve_inverse_kernels_with(&kernels, &options)?;
    let state = PdeState::new(
        (0..=n)
            .map(|i| (std::f64::consts::PI * i as f64 / n as f64).sin())
            .collect(),
        (0..=n)
            .map(|i| (std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect(),
        0.0,
    )?;
    let (alpha, beta) = transform_state(&state, &kernels)?;
    let (u_back, v_back) = inverse_transform_state(&alpha, &beta, &inverse)?;
    let roundtrip = state
        .u
        .iter()
        .zip(&u_back)
        .chain(state.v.iter().zip(&v_back))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let roundtrip_bound = 5.0 / n as f64;
    checks.push((
        "volterra_round_trip".into(),
        roundtrip <= roundtrip_bound,
        format!("max error {roundtrip:.3e} (bound {roundtrip_bound:.3e})"),
    ));

    // 3. Boundary-trace cross-validation against the neutral recursion.
    let law = match config.law()? {
        ControlLaw::Filtered { .. } => ControlLaw::OpenLoop, // not reducible
        other => other,
    };
    let gains = compute_feedback_gains(&kernels, &inverse, &plant)?;
    let (u0, v0) = config.initial_profiles()?;
    let trace = simulate(
        &plant,
        law,
        Some(&kernels),
        delta,
        &u0,
        &v0,
        horizon,
        n,
    )?;
    let initial = PdeState::from_profiles(&u0, &v0, n, 0.0);
    let (alpha0, beta0) = transform_state(&initial, &kernels)?;
    let dt = 1.0 / (n as f64 * plant.lambda().max(plant.mu()));
    let history = History::from_initial_state(&alpha0, &beta0, &plant, dt)?;
    let spec = reduce_closed_loop(&plant, Some(&gains), &law, delta)?;
    let neutral = simulate_neutral(&spec, &history, horizon, dt)?;
    dir.write("neutral_spec.txt", &neutral_spec_text(&spec))?;
    let mut neutral_csv = String::from("t,beta\n");
    for (t, beta) in neutral.t.iter().zip(&neutral.beta) {
        let _ = writeln!(neutral_csv, "{},{}", fmt_f(*t), fmt_f(*beta));
    }
    dir.write("neutral_beta.csv", &neutral_csv)?;
    let discrepancy = trace
        .beta1
        .as_ref()
        .map(|beta| {
            beta.iter()
                .zip(&neutral.beta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        })
        .unwrap_or(f64::INFINITY);
    let oracle_bound = if plant.is_uncoupled() {
        1e-12
    } else {
        5.0 / n as f64
    };
    checks.push((
        "oracle_equivalence".into(),
        discrepancy <= oracle_bound,
        format!("max |beta_pde - beta_neutral| = {discrepancy:.3e} (bound {oracle_bound:.3e})"),
    ));

    let mut body = String::new();
    let mut all_ok = true;
    for (name, ok, detail) in &checks {
        all_ok &= ok;
        let _ = writeln!(body, "{name}: {} ({detail})", if *ok { "PASS" } else { "FAIL" });
        println!("verify {name}: {} ({detail})", if *ok { "PASS" } else { "FAIL" });
    }
    let _ = writeln!(body, "overall: {}", if all_ok { "PASS" } else { "FAIL" });
    dir.write("verify_report.txt", &body)?;
    dir.finish()?;
    if all_ok {
        Ok(())
    } else {
        Err(CmdError::Verification(
            "one or more verification checks failed (see verify_report.txt)".into(),
        ))
    }
}
