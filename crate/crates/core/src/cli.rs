//! Command-line front end.
//!
//! Every flag may also appear in a flat TOML file passed with `--config`,
//! using the flag name as key (`n = 8`, `fix-signal = false`). Flags given on the command line take precedence
//! over the file, and the file over built-in defaults.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_row, mmv_order_comparison, BoundRow};
use crate::combin::binomial;
use crate::decoder::DEFAULT_ENUMERATION_CAP;
use crate::ensemble::{measure, sample_sensing, write_snapshot, AmplitudeMode, ProblemParams};
use crate::error::Error;
use crate::montecarlo::{
    find_m_star, run_trials, sweep, sweep_trend, write_rows, SweepAxis, SweepRow, TrialPlan,
    DEFAULT_SEED, DEFAULT_TRIALS,
};
use crate::seed::Role;
use crate::verify::{run_verify, VerifyConfig, VerifyRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "jsm2-lab", version, about = "Joint-typicality support recovery: bounds and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the analytic bounds and measurement conditions for one point.
    Bounds(Flags),
    /// Monte Carlo estimate of the failure events at one point.
    Simulate(Flags),
    /// Monte Carlo and bounds over a grid along one axis.
    Sweep(Flags),
    /// Smallest M whose estimated event failure meets a target.
    FindM(Flags),
    /// Run the self-check suite.
    Verify(Flags),
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Flags {
    /// Ambient dimension N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Sparsity K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Measurements per vector M.
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of jointly sparse vectors S.
    #[arg(long)]
    pub s: Option<usize>,
    /// x_min² / σ².
    #[arg(long)]
    pub snr: Option<f64>,
    /// Noise variance σ² (default 1).
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Smallest squared on-support magnitude x_min².
    #[arg(long)]
    pub xmin2: Option<f64>,
    /// Threshold rule δ = ρ⁻¹(1 − K/M)x_min² (default 2).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Explicit δ, overriding the ρ rule.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Sweep axis: m, s, snr, n or k.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long)]
    pub values: Option<String>,
    /// Target event-failure probability for find-m.
    #[arg(long)]
    pub target: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// `fixed` or `uniform:<x_max>`.
    #[arg(long)]
    pub amplitude: Option<String>,
    /// Reuse one signal ensemble across trials (default true).
    #[arg(long)]
    pub fix_signal: Option<bool>,
    /// Largest number of candidate supports the decoder may enumerate.
    #[arg(long)]
    pub cap: Option<u64>,
}

impl Flags {
    /// Fills every unset flag from `file`.
    fn merged_with(self, file: Flags) -> Flags {
        Flags {
            n: self.n.or(file.n),
            k: self.k.or(file.k),
            m: self.m.or(file.m),
            s: self.s.or(file.s),
            snr: self.snr.or(file.snr),
            sigma2: self.sigma2.or(file.sigma2),
            xmin2: self.xmin2.or(file.xmin2),
            rho: self.rho.or(file.rho),
            delta: self.delta.or(file.delta),
            trials: self.trials.or(file.trials),
            seed: self.seed.or(file.seed),
            jobs: self.jobs.or(file.jobs),
            axis: self.axis.or(file.axis),
            values: self.values.or(file.values),
            target: self.target.or(file.target),
            out: self.out.or(file.out),
            config: self.config,
            amplitude: self.amplitude.or(file.amplitude),
            fix_signal: self.fix_signal.or(file.fix_signal),
            cap: self.cap.or(file.cap),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CommandKind {
    Bounds,
    Simulate,
    Sweep,
    FindM,
    Verify,
}

/// Fully validated experiment description with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: CommandKind,
    /// Base point; for `find-m` its `M` is a placeholder.
    pub params: Option<ProblemParams>,
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub jobs: Option<usize>,
    pub target: Option<f64>,
    pub out: Option<PathBuf>,
    pub amplitude: AmplitudeMode,
    pub fix_signal: bool,
    pub cap: u64,
}

/// Error with the process exit status it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: msg.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Budget { .. } => EXIT_BUDGET,
            Error::Io(_) => EXIT_RUNTIME,
            Error::InvalidDimension(_)
            | Error::InvalidRange(_)
            | Error::InvalidParameter(_)
            | Error::Domain(_)
            | Error::Precondition(_) => EXIT_CONFIG,
            Error::RankDeficient { .. } => EXIT_RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn required<T>(v: Option<T>, name: &str, cmd: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::config(format!("{cmd} requires --{name}")))
}

fn parse_amplitude(text: &str) -> Result<AmplitudeMode, CliError> {
    let lower = text.trim().to_ascii_lowercase();
    if lower == "fixed" {
        return Ok(AmplitudeMode::Fixed);
    }
    if let Some(rest) = lower.strip_prefix("uniform:") {
        let x_max: f64 = rest
            .parse()
            .map_err(|_| CliError::config(format!("invalid uniform amplitude bound '{rest}'")))?;
        return Ok(AmplitudeMode::Uniform { x_max });
    }
    Err(CliError::config(format!(
        "unknown amplitude mode '{text}', expected 'fixed' or 'uniform:<x_max>'"
    )))
}

fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::config(format!("invalid sweep value '{t}'"))))
        .collect()
}

/// Noise variance and `x_min²` from `--sigma2`, `--snr` and `--xmin2`.
fn signal_levels(f: &Flags) -> Result<(f64, f64), CliError> {
    let sigma2 = f.sigma2.unwrap_or(1.0);
    match (f.snr, f.xmin2) {
        (Some(snr), Some(x2)) => {
            let implied = snr * sigma2;
            if (implied - x2).abs() > 1e-12 * x2.abs().max(1.0) {
                return Err(CliError::config(format!(
                    "--snr {snr} with --sigma2 {sigma2} implies xmin2 = {implied}, but --xmin2 is {x2}"
                )));
            }
            Ok((sigma2, x2))
        }
        (Some(snr), None) => Ok((sigma2, snr * sigma2)),
        (None, Some(x2)) => Ok((sigma2, x2)),
        (None, None) => Err(CliError::config("requires --snr or --xmin2")),
    }
}

fn build_params(f: &Flags, m: usize, cmd: &str) -> Result<ProblemParams, CliError> {
    let n = required(f.n, "n", cmd)?;
    let k = required(f.k, "k", cmd)?;
    let s = required(f.s, "s", cmd)?;
    let (sigma2, x2) = signal_levels(f)?;
    let mut p = ProblemParams::new(n, k, m, s, sigma2, x2)?;
    if let Some(rho) = f.rho {
        p = p.with_rho(rho)?;
    }
    if let Some(delta) = f.delta {
        p = p.with_delta(delta)?;
    }
    Ok(p)
}

fn read_config_file(path: &Path) -> Result<Flags, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

/// Parses and validates a command line (including the program name).
pub fn parse_config<I, T>(args: I) -> Result<ExperimentConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config(e.to_string()))?;
    let (kind, flags) = match cli.command {
        Command::Bounds(f) => (CommandKind::Bounds, f),
        Command::Simulate(f) => (CommandKind::Simulate, f),
        Command::Sweep(f) => (CommandKind::Sweep, f),
        Command::FindM(f) => (CommandKind::FindM, f),
        Command::Verify(f) => (CommandKind::Verify, f),
    };
    let flags = match flags.config.clone() {
        Some(path) => flags.merged_with(read_config_file(&path)?),
        None => flags,
    };
    build_config(kind, flags)
}

fn build_config(kind: CommandKind, f: Flags) -> Result<ExperimentConfig, CliError> {
    let trials = f.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(CliError::config("requires --trials >= 1"));
    }
    if f.jobs == Some(0) {
        return Err(CliError::config("requires --jobs >= 1"));
    }
    let amplitude = match &f.amplitude {
        Some(a) => parse_amplitude(a)?,
        None => AmplitudeMode::Fixed,
    };
    let mut cfg = ExperimentConfig {
        command: kind,
        params: None,
        axis: None,
        values: Vec::new(),
        trials,
        master_seed: f.seed.unwrap_or(DEFAULT_SEED),
        jobs: f.jobs,
        target: None,
        out: f.out.clone(),
        amplitude,
        fix_signal: f.fix_signal.unwrap_or(true),
        cap: f.cap.unwrap_or(DEFAULT_ENUMERATION_CAP),
    };
    let name = match kind {
        CommandKind::Bounds => "bounds",
        CommandKind::Simulate => "simulate",
        CommandKind::Sweep => "sweep",
        CommandKind::FindM => "find-m",
        CommandKind::Verify => "verify",
    };
    match kind {
        CommandKind::Verify => {}
        CommandKind::Bounds | CommandKind::Simulate => {
            let m = required(f.m, "m", name)?;
            cfg.params = Some(build_params(&f, m, name)?);
        }
        CommandKind::FindM => {
            let k = required(f.k, "k", name)?;
            let target = required(f.target, "target", name)?;
            if !(target > 0.0 && target <= 1.0) {
                return Err(CliError::config(format!("--target must lie in (0, 1], got {target}")));
            }
            cfg.target = Some(target);
            cfg.params = Some(build_params(&f, k + 1, name)?);
        }
        CommandKind::Sweep => {
            let axis: SweepAxis = required(f.axis.clone(), "axis", name)?.parse()?;
            let values = parse_values(&required(f.values.clone(), "values", name)?)?;
            if values.is_empty() {
                return Err(CliError::config("--values must not be empty"));
            }
            let mut base = f.clone();
            match axis {
                SweepAxis::M => base.m = base.m.or(Some(to_count(values[0])?)),
                SweepAxis::S => base.s = base.s.or(Some(to_count(values[0])?)),
                SweepAxis::N => base.n = base.n.or(Some(to_count(values[0])?)),
                SweepAxis::K => base.k = base.k.or(Some(to_count(values[0])?)),
                SweepAxis::Snr => {
                    if base.snr.is_none() && base.xmin2.is_none() {
                        base.snr = Some(values[0]);
                    }
                }
            }
            let m = required(base.m, "m", name)?;
            let p = build_params(&base, m, name)?;
            cfg.axis = Some(axis);
            cfg.values = values;
            cfg.params = Some(p);
            // Every grid point must be a valid parameter tuple.
            grid_points(&cfg)?;
        }
    }
    if let AmplitudeMode::Uniform { x_max } = cfg.amplitude {
        if let Some(p) = &cfg.params {
            if !(x_max * x_max >= p.x_min_sq) {
                return Err(CliError::config(format!(
                    "uniform amplitude bound {x_max} is below x_min = {}",
                    p.x_min_sq.sqrt()
                )));
            }
        }
    }
    Ok(cfg)
}

fn to_count(v: f64) -> Result<usize, CliError> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e12 {
        Ok(v as usize)
    } else {
        Err(CliError::config(format!("sweep value {v} must be a positive integer for this axis")))
    }
}

/// Parameter points of a sweep in the order given on the command line.
pub fn grid_points(cfg: &ExperimentConfig) -> Result<Vec<ProblemParams>, CliError> {
    let base = cfg.params.ok_or_else(|| CliError::config("sweep has no base point"))?;
    let axis = cfg.axis.ok_or_else(|| CliError::config("sweep requires --axis"))?;
    cfg.values
        .iter()
        .map(|&v| {
            let mut p = base;
            match axis {
                SweepAxis::M => p.m = to_count(v)?,
                SweepAxis::S => p.s = to_count(v)?,
                SweepAxis::N => p.n = to_count(v)?,
                SweepAxis::K => p.k = to_count(v)?,
                SweepAxis::Snr => p.x_min_sq = v * p.noise_var,
            }
            p.validate().map_err(|e| CliError::config(format!("sweep value {v}: {e}")))?;
            Ok(p)
        })
        .collect()
}

fn plan_for(cfg: &ExperimentConfig, params: ProblemParams) -> TrialPlan {
    TrialPlan::new(params, cfg.trials, cfg.master_seed)
        .with_amplitude(cfg.amplitude)
        .with_fix_signal(cfg.fix_signal)
        .with_cap(cfg.cap)
}

fn check_budget(p: &ProblemParams, cap: u64) -> Result<(), CliError> {
    let count = binomial(p.n, p.k);
    if count > cap as f64 {
        return Err(Error::Budget { n: p.n, k: p.k, count, cap }.into());
    }
    Ok(())
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<Option<&Path>, CliError> {
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError {
                code: EXIT_RUNTIME,
                message: format!("cannot create output directory {}: {e}", dir.display()),
            })?;
            Ok(Some(dir.as_path()))
        }
        None => Ok(None),
    }
}

#[derive(Serialize)]
struct Metadata<'a, T: Serialize> {
    command: CommandKind,
    version: &'static str,
    master_seed: u64,
    trials: usize,
    jobs: Option<usize>,
    fix_signal: bool,
    amplitude: AmplitudeMode,
    enumeration_cap: u64,
    interval: &'static str,
    seeding: &'static str,
    wall_time_secs: f64,
    result: &'a T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn metadata<'a, T: Serialize>(cfg: &ExperimentConfig, started: Instant, result: &'a T) -> Metadata<'a, T> {
    Metadata {
        command: cfg.command,
        version: env!("CARGO_PKG_VERSION"),
        master_seed: cfg.master_seed,
        trials: cfg.trials,
        jobs: cfg.jobs,
        fix_signal: cfg.fix_signal,
        amplitude: cfg.amplitude,
        enumeration_cap: cfg.cap,
        interval: "Wilson score, 95%",
        seeding: "ChaCha8 streams keyed by splitmix64(master seed, role, trial)",
        wall_time_secs: started.elapsed().as_secs_f64(),
        result,
    }
}

/// Executes a validated configuration, writing artifacts and a human
/// readable summary to `stdout`.
pub fn run<W: Write + Send>(cfg: &ExperimentConfig, stdout: &mut W) -> Result<(), CliError> {
    match cfg.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| CliError { code: EXIT_RUNTIME, message: e.to_string() })?;
            pool.install(|| dispatch(cfg, stdout))
        }
        None => dispatch(cfg, stdout),
    }
}

fn dispatch<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<(), CliError> {
    match cfg.command {
        CommandKind::Bounds => run_bounds(cfg, out),
        CommandKind::Simulate => run_simulate(cfg, out),
        CommandKind::Sweep => run_sweep(cfg, out),
        CommandKind::FindM => run_find_m(cfg, out),
        CommandKind::Verify => run_verify_cmd(cfg, out),
    }
}

fn run_bounds<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<(), CliError> {
    let p = cfg.params.expect("validated");
    let row = bound_row(&p)?;
    print_bound_row(&row, out)?;
    let mmv = mmv_order_comparison(&p)?;
    writeln!(out, "order comparison (constants not modelled)")?;
    writeln!(out, "  {:<28} {:.6}", "mmv K log N / min(K,S)", mmv.mmv_low_noise)?;
    writeln!(out, "  {:<28} {:.6}", "jsm2 K + nu2/S K log(N/K)", mmv.jsm2)?;
    writeln!(out, "  {:<28} {:.6}", "ratio", mmv.ratio)?;
    if let Some(dir) = prepare_out(cfg)? {
        let mut w = csv::Writer::from_path(dir.join("bounds.csv")).map_err(Error::from)?;
        w.serialize(row).map_err(Error::from)?;
        w.flush()?;
        write_json(&dir.join("bounds.json"), &(row, mmv))?;
    }
    Ok(())
}

fn print_bound_row<W: Write>(r: &BoundRow, out: &mut W) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map_or("n/a (SNR below threshold)".to_string(), |x| format!("{x:.6}"));
    writeln!(out, "point N={} K={} M={} S={} sigma2={} xmin2={} rho={}", r.n, r.k, r.m, r.s, r.sigma2, r.xmin2, r.rho)?;
    writeln!(out, "upper bound")?;
    let lines: [(&str, f64); 15] = [
        ("delta", r.delta),
        ("d1", r.d1),
        ("t", r.t),
        ("d2 at alpha*", r.d2),
        ("log C(N,K)", r.log_binom),
        ("log p(1+d1)", r.log_p_d1),
        ("log p(d2)", r.log_p_d2),
        ("log upper p_err", r.log_upper),
        ("upper p_err (clamped)", r.upper),
        ("log p1 (exp. ineq.)", r.log_p1_exp),
        ("log p2 (exp. ineq.)", r.log_p2_exp),
        ("mu_I", r.mu_i),
        ("mu_J", r.mu_j),
        ("Fano lower p_err", r.lower),
        ("necessary M", r.m_necessary),
    ];
    for (k, v) in lines {
        writeln!(out, "  {k:<28} {v:.6}")?;
    }
    writeln!(out, "  {:<28} {}", "below necessary M", r.below_necessary_m)?;
    writeln!(out, "sufficient conditions")?;
    let lines: [(&str, f64); 9] = [
        ("nu1", r.nu1),
        ("nu2", r.nu2),
        ("M linear", r.m_suff_linear),
        ("M sublinear", r.m_suff_sublinear),
        ("M linear (loose)", r.m_suff_loose_linear),
        ("M sublinear (loose)", r.m_suff_loose_sublinear),
        ("high-SNR alpha", r.high_snr_alpha),
        ("high-SNR threshold", r.snr_threshold_high_snr),
        ("S for p_err < eps at M=K+1", r.s_k_plus_one),
    ];
    for (k, v) in lines {
        writeln!(out, "  {k:<28} {v:.6}")?;
    }
    writeln!(out, "  {:<28} {}", "M linear (high SNR)", opt(r.m_suff_high_snr_linear))?;
    writeln!(out, "  {:<28} {}", "M sublinear (high SNR)", opt(r.m_suff_high_snr_sublinear))?;
    writeln!(out, "  {:<28} {}", "eps", r.k_plus_one_epsilon)
}

fn run_simulate<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<(), CliError> {
    let p = cfg.params.expect("validated");
    check_budget(&p, cfg.cap)?;
    let started = Instant::now();
    let plan = plan_for(cfg, p);
    let row = SweepRow::evaluate(&plan);
    let summary = run_trials(&plan)?;
    let mut buf = Vec::new();
    write_rows(std::slice::from_ref(&row), &mut buf)?;
    out.write_all(&buf)?;
    writeln!(out, "incorrect typical per trial: {:.6}", summary.incorrect_typical_mean)?;
    if let Some(dir) = prepare_out(cfg)? {
        std::fs::write(dir.join("simulate.csv"), &buf)?;
        write_json(&dir.join("simulate.json"), &metadata(cfg, started, &summary))?;
        let x = plan.draw_signal(0)?;
        let f = sample_sensing(p.m, p.n, p.s, plan.trial_seed(Role::Sensing, 0))?;
        let y = measure(&x, &f, p.noise_var, plan.trial_seed(Role::Noise, 0))?;
        write_snapshot(&dir.join("snapshot"), cfg.master_seed, &x, &f, &y)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepMeta {
    axis: SweepAxis,
    values: Vec<f64>,
    trend: crate::montecarlo::TrendSummary,
    failed_rows: usize,
}

fn run_sweep<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<(), CliError> {
    let points = grid_points(cfg)?;
    for p in &points {
        check_budget(p, cfg.cap)?;
    }
    let started = Instant::now();
    let plans: Vec<TrialPlan> = points.into_iter().map(|p| plan_for(cfg, p)).collect();
    let axis = cfg.axis.expect("validated");
    let rows = sweep(&plans, axis);
    let trend = sweep_trend(&rows);
    let mut buf = Vec::new();
    write_rows(&rows, &mut buf)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    match prepare_out(cfg)? {
        Some(dir) => {
            std::fs::write(dir.join("sweep.csv"), &buf)?;
            let meta = SweepMeta { axis, values: cfg.values.clone(), trend: trend.clone(), failed_rows: failed };
            write_json(&dir.join("sweep.json"), &metadata(cfg, started, &meta))?;
        }
        None => out.write_all(&buf)?,
    }
    writeln!(
        out,
        "trend: non-increasing = {}, max isotonic residual {:.4}, max CI half-width {:.4}",
        trend.non_increasing, trend.max_residual, trend.max_half_width
    )?;
    if failed > 0 {
        writeln!(out, "{failed} row(s) failed; see the status column")?;
    }
    Ok(())
}

fn run_find_m<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<(), CliError> {
    let p = cfg.params.expect("validated");
    check_budget(&p, cfg.cap)?;
    let started = Instant::now();
    let res = find_m_star(&plan_for(cfg, p), cfg.target.expect("validated"))?;
    match res.m_star {
        Some(m) => writeln!(out, "M* = {m}")?,
        None => writeln!(out, "saturated: no M <= {} reaches the target", p.n)?,
    }
    if res.non_monotone {
        writeln!(out, "non-monotone estimates detected; bracket {:?}", res.bracket)?;
    }
    for (m, rate) in &res.evaluations {
        writeln!(out, "  M = {m:>4}  event failure {rate:.6}")?;
    }
    if let Some(dir) = prepare_out(cfg)? {
        write_json(&dir.join("find_m.json"), &metadata(cfg, started, &res))?;
    }
    Ok(())
}

fn run_verify_cmd<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> Result<(), CliError> {
    let rows = run_verify(&VerifyConfig::new(cfg.master_seed))?;
    for r in &rows {
        writeln!(
            out,
            "{:<4} {:<26} {:<48} observed {:.6e} limit {:.6e}",
            if r.pass { "pass" } else { "FAIL" },
            r.check,
            r.case,
            r.observed,
            r.limit
        )?;
    }
    if let Some(dir) = prepare_out(cfg)? {
        let mut w = csv::Writer::from_path(dir.join("verify.csv")).map_err(Error::from)?;
        for r in &rows {
            w.serialize(r).map_err(Error::from)?;
        }
        w.flush()?;
    }
    let failed: Vec<&VerifyRow> = rows.iter().filter(|r| !r.pass).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError { code: EXIT_VERIFY, message: format!("{} verification check(s) failed", failed.len()) })
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&args) {
        use clap::error::ErrorKind;
        let _ = e.print();
        return match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
            _ => EXIT_CONFIG,
        };
    }
    let result = parse_config(&args).and_then(|cfg| run(&cfg, &mut std::io::stdout()));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(line: &str) -> Result<ExperimentConfig, CliError> {
        parse_config(std::iter::once("jsm2-lab").chain(line.split_whitespace()))
    }

    #[test]
    fn bounds_defaults() {
        let cfg = parse("bounds --n 1024 --k 16 --m 64 --s 4 --snr 10").unwrap();
        let p = cfg.params.unwrap();
        assert_eq!((p.n, p.k, p.m, p.s), (1024, 16, 64, 4));
        assert_eq!(p.rho, 2.0);
        assert_eq!(p.delta_override, None);
        assert_eq!(p.noise_var, 1.0);
        assert_eq!(p.x_min_sq, 10.0);
        assert_eq!(cfg.trials, 10_000);
        assert_eq!(cfg.amplitude, AmplitudeMode::Fixed);
        assert!(cfg.fix_signal);
        assert_eq!(cfg.master_seed, DEFAULT_SEED);
    }

    #[test]
    fn m_not_above_k_is_named() {
        let err = parse("bounds --n 20 --k 10 --m 8 --s 1 --snr 1").unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
        assert!(err.message.contains("requires M > K"), "{}", err.message);
    }

    #[test]
    fn unknown_flag_is_config_error() {
        let err = parse("bounds --n 20 --bogus 3").unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
        assert_eq!(main_with_args(["jsm2-lab", "bounds", "--bogus", "1"]), EXIT_CONFIG);
    }

    #[test]
    fn flag_overrides_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "n = 8\nk = 2\nm = 4\ns = 1\nsnr = 10.0\ntrials = 50\nfix-signal = false\n").unwrap();
        let line = format!("simulate --config {} --trials 7", path.display());
        let cfg = parse(&line).unwrap();
        assert_eq!(cfg.trials, 7);
        assert!(!cfg.fix_signal);
        assert_eq!(cfg.params.unwrap().m, 4);
        std::fs::write(&path, "n = 8\nbogus = 1\n").unwrap();
        assert_eq!(parse(&line).unwrap_err().code, EXIT_CONFIG);
    }

    #[test]
    fn signal_level_flags() {
        let cfg = parse("bounds --n 10 --k 2 --m 8 --s 4 --sigma2 2 --xmin2 20").unwrap();
        assert_eq!(cfg.params.unwrap().snr_min(), 10.0);
        assert!(parse("bounds --n 10 --k 2 --m 8 --s 4 --sigma2 2 --xmin2 20 --snr 3").is_err());
        assert!(parse("bounds --n 10 --k 2 --m 8 --s 4").is_err());
        let cfg = parse("bounds --n 10 --k 2 --m 8 --s 4 --snr 5 --amplitude uniform:4").unwrap();
        assert_eq!(cfg.amplitude, AmplitudeMode::Uniform { x_max: 4.0 });
        assert!(parse("bounds --n 10 --k 2 --m 8 --s 4 --snr 25 --amplitude uniform:4").is_err());
    }

    #[test]
    fn sweep_grid_and_validation() {
        let cfg = parse("sweep --axis s --values 1,2,4,8 --m 3 --k 2 --n 8 --snr 100").unwrap();
        let pts = grid_points(&cfg).unwrap();
        assert_eq!(pts.iter().map(|p| p.s).collect::<Vec<_>>(), vec![1, 2, 4, 8]);
        let snr = parse("sweep --axis snr --values 1,10 --m 4 --k 2 --n 8 --s 2").unwrap();
        let pts = grid_points(&snr).unwrap();
        assert_eq!(pts[1].x_min_sq, 10.0);
        assert!(parse("sweep --axis m --values 2,4 --k 2 --n 8 --s 1 --snr 1").is_err());
        assert!(parse("sweep --axis q --values 2 --m 4 --k 2 --n 8 --s 1 --snr 1").is_err());
        assert!(parse("sweep --axis s --values 1.5 --m 4 --k 2 --n 8 --snr 1").is_err());
    }

    #[test]
    fn bounds_flags_below_necessary_m() {
        let cfg = parse("bounds --n 1024 --k 16 --m 17 --s 1 --snr 1").unwrap();
        let mut buf = Vec::new();
        run(&cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().find(|l| l.contains("below necessary M")).unwrap();
        assert!(line.trim_end().ends_with("true"), "{line}");
    }

    #[test]
    fn budget_exit_code() {
        let cfg = parse("simulate --n 40 --k 10 --m 12 --s 1 --snr 1 --cap 100").unwrap();
        let err = run(&cfg, &mut Vec::new()).unwrap_err();
        assert_eq!(err.code, EXIT_BUDGET);
    }

    #[test]
    fn sweep_writes_csv_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let line = format!(
            "sweep --axis s --values 4,1,2 --m 3 --k 2 --n 6 --snr 100 --trials 50 --out {}",
            dir.path().display()
        );
        let cfg = parse(&line).unwrap();
        let mut buf = Vec::new();
        run(&cfg, &mut buf).unwrap();
        let csv_text = std::fs::read(dir.path().join("sweep.csv")).unwrap();
        let rows = crate::montecarlo::read_rows(csv_text.as_slice()).unwrap();
        assert_eq!(rows.iter().map(|r| r.s).collect::<Vec<_>>(), vec![1, 2, 4]);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
        assert_eq!(meta["master_seed"], DEFAULT_SEED);
        assert!(meta["wall_time_secs"].as_f64().unwrap() >= 0.0);
        assert!(String::from_utf8(buf).unwrap().contains("trend:"));
    }

    #[test]
    fn simulate_writes_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let line = format!("simulate --n 6 --k 2 --m 4 --s 2 --snr 10 --trials 20 --out {}", dir.path().display());
        run(&parse(&line).unwrap(), &mut Vec::new()).unwrap();
        let (man, ..) = crate::ensemble::read_snapshot(&dir.path().join("snapshot")).unwrap();
        assert_eq!((man.n, man.k, man.m, man.s), (6, 2, 4, 2));
        assert!(dir.path().join("simulate.csv").exists());
    }
}
