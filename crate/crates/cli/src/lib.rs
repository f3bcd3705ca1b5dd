//! Batch experiments for majority-dynamics percolation.
//!
//! An experiment is a flat `key=value` spec (from a file, from flags, or
//! both, flags winning). Every output file starts with `# key=value` lines
//! echoing the full spec, so a file can be regenerated from its header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use majperc::couplings::{continuity_pair, monotone_p_pair, CheckMode};
use majperc::dynamics::{evolve_trajectory, run_to_quiescence, trajectory_csv, InitField, QuiescenceOutcome};
use majperc::enhancement::enhancement_instance;
use majperc::estimation::{
    covariance_estimate, mc_event_prob, percolation_certificate, renorm_trace, threshold_search,
    CertificateConfig, EventKind, EventSpec, ThresholdConfig,
};
use majperc::oracle::{exact_law, fkg_suite};
use majperc::{fmt17, BoundaryPolicy, ClockStream, Error, Rect, SeedSpec, Site};
use rayon::prelude::*;

pub mod plot;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Evolve,
    Sweep,
    PcCurve,
    Cov,
    Fixation,
    Couple,
    Enhance,
    Oracle,
    Certify,
    Renorm,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Evolve,
        Command::Sweep,
        Command::PcCurve,
        Command::Cov,
        Command::Fixation,
        Command::Couple,
        Command::Enhance,
        Command::Oracle,
        Command::Certify,
        Command::Renorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Sweep => "sweep",
            Command::PcCurve => "pc-curve",
            Command::Cov => "cov",
            Command::Fixation => "fixation",
            Command::Couple => "couple",
            Command::Enhance => "enhance",
            Command::Oracle => "oracle",
            Command::Certify => "certify",
            Command::Renorm => "renorm",
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoupleMode {
    Monotone,
    Continuity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleCheck {
    Law,
    Fkg,
}

/// A fully specified experiment. Unset keys keep the defaults below.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub command: Option<Command>,
    pub p: Vec<f64>,
    pub p2: f64,
    pub t: Vec<f64>,
    pub n: u32,
    pub lambda: f64,
    pub replicas: u64,
    pub seed: u64,
    pub policy: BoundaryPolicy,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub delta: f64,
    pub mode: CoupleMode,
    pub grid: (u32, u32),
    pub check: OracleCheck,
    pub tol: f64,
    pub target: f64,
    pub max_replicas: u64,
    pub budget: u64,
    pub c: f64,
    pub n0: u32,
    pub t_max: f64,
    pub l0: u32,
    pub factor: u32,
    pub k_max: u32,
    pub distance: Vec<u32>,
    pub svg: bool,
    pub strict: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let threshold = ThresholdConfig::default();
        ExperimentSpec {
            command: None,
            p: vec![0.5],
            p2: 0.6,
            t: vec![1.0],
            n: 32,
            lambda: 2.0,
            replicas: CertificateConfig::default().replicas,
            seed: 0,
            policy: BoundaryPolicy::FrozenZero,
            output: None,
            threads: None,
            delta: 0.1,
            mode: CoupleMode::Monotone,
            grid: (3, 3),
            check: OracleCheck::Law,
            tol: threshold.tol,
            target: threshold.target,
            max_replicas: threshold.max_replicas_per_point,
            budget: threshold.max_total_replicas,
            c: 1.0,
            n0: 1,
            t_max: 1000.0,
            l0: 16,
            factor: 3,
            k_max: 2,
            distance: vec![1],
            svg: false,
            strict: false,
        }
    }
}

/// Keys accepted in spec files and as `--key value` flags.
pub const KEYS: [&str; 28] = [
    "command",
    "p",
    "p2",
    "t",
    "n",
    "lambda",
    "replicas",
    "seed",
    "policy",
    "output",
    "threads",
    "delta",
    "mode",
    "grid",
    "check",
    "tol",
    "target",
    "max_replicas",
    "budget",
    "c",
    "n0",
    "t_max",
    "l0",
    "factor",
    "k_max",
    "distance",
    "svg",
    "strict",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.trim().parse().map_err(|_| format!("invalid value for `{key}`: `{v}`"))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
    let items: Vec<T> = v.split(',').map(|x| parse_num(key, x)).collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(format!("`{key}` needs at least one value"));
    }
    Ok(items)
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("invalid value for `{key}`: `{v}` (expected true or false)")),
    }
}

impl ExperimentSpec {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "command" => self.command = Some(v.parse()?),
            "p" => self.p = parse_list(key, v)?,
            "p2" => self.p2 = parse_num(key, v)?,
            "t" => self.t = parse_list(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "replicas" => self.replicas = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "policy" => self.policy = v.parse().map_err(|e: Error| format!("invalid value for `policy`: {e}"))?,
            "output" => self.output = Some(PathBuf::from(v)),
            "threads" => self.threads = Some(parse_num(key, v)?),
            "delta" => self.delta = parse_num(key, v)?,
            "mode" => {
                self.mode = match v {
                    "monotone" => CoupleMode::Monotone,
                    "continuity" => CoupleMode::Continuity,
                    _ => return Err(format!("invalid value for `mode`: `{v}` (monotone or continuity)")),
                }
            }
            "grid" => {
                let (w, h) = v.split_once('x').ok_or_else(|| format!("invalid value for `grid`: `{v}` (use WxH)"))?;
                self.grid = (parse_num(key, w)?, parse_num(key, h)?);
            }
            "check" => {
                self.check = match v {
                    "law" => OracleCheck::Law,
                    "fkg" => OracleCheck::Fkg,
                    _ => return Err(format!("invalid value for `check`: `{v}` (law or fkg)")),
                }
            }
            "tol" => self.tol = parse_num(key, v)?,
            "target" => self.target = parse_num(key, v)?,
            "max_replicas" => self.max_replicas = parse_num(key, v)?,
            "budget" => self.budget = parse_num(key, v)?,
            "c" => self.c = parse_num(key, v)?,
            "n0" => self.n0 = parse_num(key, v)?,
            "t_max" => self.t_max = parse_num(key, v)?,
            "l0" => self.l0 = parse_num(key, v)?,
            "factor" => self.factor = parse_num(key, v)?,
            "k_max" => self.k_max = parse_num(key, v)?,
            "distance" => self.distance = parse_list(key, v)?,
            "svg" => self.svg = parse_bool(key, v)?,
            "strict" => self.strict = parse_bool(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Range checks; the message names the offending field.
    pub fn validate(&self) -> Result<Command, String> {
        let command = self.command.ok_or("command is required")?;
        let prob = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(format!("field `{name}` must lie in [0, 1], got {x}"))
            }
        };
        for &p in &self.p {
            prob("p", p)?;
        }
        prob("p2", self.p2)?;
        prob("target", self.target)?;
        for &t in &self.t {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(format!("field `t` must be finite and non-negative, got {t}"));
            }
        }
        if self.n == 0 {
            return Err("field `n` must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(format!("field `lambda` must be positive, got {}", self.lambda));
        }
        if self.replicas == 0 {
            return Err("field `replicas` must be positive".into());
        }
        if !(self.delta > 0.0) {
            return Err(format!("field `delta` must be positive, got {}", self.delta));
        }
        if !(self.tol > 0.0) {
            return Err(format!("field `tol` must be positive, got {}", self.tol));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err("field `grid` must have positive sides".into());
        }
        if !(self.t_max > 0.0) {
            return Err(format!("field `t_max` must be positive, got {}", self.t_max));
        }
        if self.threads == Some(0) {
            return Err("field `threads` must be positive".into());
        }
        if self.factor != 3 && self.factor != 4 {
            return Err(format!("field `factor` must be 3 or 4, got {}", self.factor));
        }
        if self.l0 == 0 {
            return Err("field `l0` must be positive".into());
        }
        if self.max_replicas == 0 {
            return Err("field `max_replicas` must be positive".into());
        }
        if command == Command::Couple && self.mode == CoupleMode::Monotone {
            for &p in &self.p {
                if p > self.p2 {
                    return Err(format!("field `p2` must be at least `p` ({p}), got {}", self.p2));
                }
            }
        }
        if command == Command::Couple && self.mode == CoupleMode::Continuity {
            for &p in &self.p {
                if p + self.delta > 1.0 {
                    return Err(format!("fields `p` + `delta` must be at most 1, got {}", p + self.delta));
                }
            }
        }
        Ok(command)
    }

    /// `# key=value` lines for every key except the output location and the
    /// thread count, neither of which affects the data.
    pub fn header(&self) -> String {
        let list = |xs: &[f64]| xs.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(",");
        let mut h = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(h, "# {k}={v}");
        };
        kv("command", self.command.map(|c| c.name().to_string()).unwrap_or_default());
        kv("p", list(&self.p));
        kv("p2", fmt17(self.p2));
        kv("t", list(&self.t));
        kv("n", self.n.to_string());
        kv("lambda", fmt17(self.lambda));
        kv("replicas", self.replicas.to_string());
        kv("seed", self.seed.to_string());
        kv("policy", self.policy.to_string());
        kv("delta", fmt17(self.delta));
        kv("mode", if self.mode == CoupleMode::Monotone { "monotone" } else { "continuity" }.into());
        kv("grid", format!("{}x{}", self.grid.0, self.grid.1));
        kv("check", if self.check == OracleCheck::Law { "law" } else { "fkg" }.into());
        kv("tol", fmt17(self.tol));
        kv("target", fmt17(self.target));
        kv("max_replicas", self.max_replicas.to_string());
        kv("budget", self.budget.to_string());
        kv("c", fmt17(self.c));
        kv("n0", self.n0.to_string());
        kv("t_max", fmt17(self.t_max));
        kv("l0", self.l0.to_string());
        kv("factor", self.factor.to_string());
        kv("k_max", self.k_max.to_string());
        kv("distance", self.distance.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
        kv("svg", self.svg.to_string());
        kv("strict", self.strict.to_string());
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for SpecError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Parses the `key=value` format: one pair per line, `#` starts a comment,
/// blank lines are ignored, unknown keys are rejected.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec, SpecError> {
    let mut spec = ExperimentSpec::default();
    apply_spec_text(&mut spec, text)?;
    Ok(spec)
}

pub fn apply_spec_text(spec: &mut ExperimentSpec, text: &str) -> Result<(), SpecError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| SpecError { line: i + 1, message };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
        spec.set(k.trim(), v).map_err(err)?;
    }
    Ok(())
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Budget(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid experiment: {m}"),
            CliError::Budget(m) => write!(f, "budget exhausted: {m}"),
            CliError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::EvaluationBudget { .. } | Error::OracleBudget(_) | Error::BudgetExhausted { .. } => {
                CliError::Budget(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

/// Files produced by a run. `main_text` goes to the output path, or to
/// stdout when no path is given.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub main_text: String,
    pub svg: Option<String>,
    /// Human-readable summary for stderr.
    pub summary: String,
    /// Set when the run stopped on a budget after writing partial results.
    pub budget_note: Option<String>,
}

/// Worker count: the `threads` key, capped by `MAJPERC_THREADS` when set.
pub fn thread_count(spec: &ExperimentSpec) -> Result<Option<usize>, CliError> {
    let cap = match std::env::var("MAJPERC_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .ok_or_else(|| CliError::Validation(format!("MAJPERC_THREADS must be a positive integer, got `{v}`")))?,
        ),
        Err(_) => None,
    };
    Ok(match (spec.threads, cap) {
        (Some(t), Some(c)) => Some(t.min(c)),
        (t, c) => t.or(c),
    })
}

/// Validates and runs, computing everything inside a pool of the
/// configured size.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let command = spec.validate().map_err(CliError::Validation)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_count(spec)? {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(command, spec))
}

/// Runs and writes the artifacts. Returns the summary for the terminal.
pub fn run_and_write(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let out = run(spec)?;
    match &spec.output {
        Some(path) => {
            write_atomic(path, &out.main_text)?;
            if let Some(svg) = &out.svg {
                write_atomic(&path.with_extension("svg"), svg)?;
            }
        }
        None => print!("{}", out.main_text),
    }
    Ok(out)
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let name = path.file_name().ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

fn dispatch(command: Command, spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    match command {
        Command::Evolve => evolve(spec),
        Command::Sweep => sweep(spec),
        Command::PcCurve => pc_curve(spec),
        Command::Cov => cov(spec),
        Command::Fixation => fixation(spec),
        Command::Couple => couple(spec),
        Command::Enhance => enhance(spec),
        Command::Oracle => oracle(spec),
        Command::Certify => certify(spec),
        Command::Renorm => renorm(spec),
    }
}

fn output(spec: &ExperimentSpec, columns: &str, rows: String, summary: String) -> RunOutput {
    RunOutput { main_text: format!("{}{columns}\n{rows}", spec.header()), svg: None, summary, budget_note: None }
}

fn square(n: u32) -> Result<Rect, CliError> {
    Ok(Rect::with_size(n, n)?)
}

pub const EVOLVE_COLUMNS: &str = "time,site_x,site_y,old,new";

fn evolve(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let (p, t) = (spec.p[0], spec.t[0]);
    let region = square(spec.n)?;
    let init = InitField::new(&SeedSpec::new(spec.seed, 0, "init"), p)?.config(&region);
    let clocks = ClockStream::new(SeedSpec::new(spec.seed, 0, "clock"), t);
    let (last, events) = evolve_trajectory(&init, &clocks, t, spec.policy)?;
    let csv = trajectory_csv(&events);
    let body = csv.split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default();
    let summary = format!(
        "{} flips; density {} -> {}",
        events.len(),
        fmt17(init.count_ones() as f64 / region.area() as f64),
        fmt17(last.count_ones() as f64 / region.area() as f64)
    );
    Ok(output(spec, EVOLVE_COLUMNS, body, summary))
}

pub const SWEEP_COLUMNS: &str = "t,p,n,lambda,replicas,successes,p_hat,ci_lo,ci_hi,master_seed";

fn sweep(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let mut rows = String::new();
    let mut series = Vec::new();
    for &t in &spec.t {
        let mut points = Vec::new();
        for &p in &spec.p {
            let ev = EventSpec::on_plane(EventKind::h_crossing(spec.lambda, spec.n), t, p)?;
            let est = mc_event_prob(&ev, spec.replicas, spec.seed)?;
            let _ = writeln!(
                rows,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt17(t),
                fmt17(p),
                spec.n,
                fmt17(spec.lambda),
                est.replicas,
                est.successes,
                fmt17(est.p_hat),
                fmt17(est.ci.0),
                fmt17(est.ci.1),
                spec.seed
            );
            points.push((p, est.p_hat, est.ci.0, est.ci.1));
        }
        series.push((format!("t={t}"), points));
    }
    let mut out = output(spec, SWEEP_COLUMNS, rows, format!("{} points", spec.p.len() * spec.t.len()));
    if spec.svg {
        out.svg = Some(plot::line_plot("crossing probability", "p", "P[H]", &series));
    }
    Ok(out)
}

pub const PC_CURVE_COLUMNS: &str = "t,n,lambda,p_star,ci_lo,ci_hi,replicas_used,master_seed";

fn pc_curve(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let cfg = ThresholdConfig {
        target: spec.target,
        tol: spec.tol,
        max_replicas_per_point: spec.max_replicas,
        max_total_replicas: spec.budget,
        ..ThresholdConfig::default()
    };
    let mut rows = String::new();
    let mut points = Vec::new();
    let mut note = None;
    for &t in &spec.t {
        let est = threshold_search(t, spec.n, spec.lambda, &cfg, spec.seed)?;
        let _ = writeln!(
            rows,
            "{},{},{},{},{},{},{},{}",
            fmt17(t),
            spec.n,
            fmt17(spec.lambda),
            fmt17(est.p_star),
            fmt17(est.ci.0),
            fmt17(est.ci.1),
            est.replicas_used,
            spec.seed
        );
        points.push((t, est.p_star, est.ci.0, est.ci.1));
        if est.budget_exhausted {
            note = Some(format!("replica budget ran out at t={t}; rows so far were written"));
            break;
        }
    }
    let mut out = output(spec, PC_CURVE_COLUMNS, rows, format!("{} thresholds", points.len()));
    out.budget_note = note;
    if spec.svg {
        out.svg = Some(plot::line_plot("crossing threshold", "t", "p*", &[("p*".into(), points)]));
    }
    Ok(out)
}

pub const COV_COLUMNS: &str = "p,t,distance,replicas,cov,std_error,ci_lo,ci_hi,mean_x,mean_y,master_seed";

fn cov(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let mut rows = String::new();
    for &p in &spec.p {
        for &t in &spec.t {
            for &d in &spec.distance {
                let est = covariance_estimate(p, t, Site::new(0, 0), Site::new(d as i32, 0), spec.replicas, spec.seed)?;
                let _ = writeln!(
                    rows,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    fmt17(p),
                    fmt17(t),
                    d,
                    est.replicas,
                    fmt17(est.cov),
                    fmt17(est.std_error),
                    fmt17(est.ci.0),
                    fmt17(est.ci.1),
                    fmt17(est.mean_x),
                    fmt17(est.mean_y),
                    spec.seed
                );
            }
        }
    }
    Ok(output(spec, COV_COLUMNS, rows, "covariances computed".into()))
}

pub const FIXATION_COLUMNS: &str = "replica,outcome,quiescence_time,total_flips,max_site_flips,final_density";

fn fixation(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let region = square(spec.n)?;
    let p = spec.p[0];
    let rows: Vec<String> = (0..spec.replicas)
        .into_par_iter()
        .map(|r| -> Result<String, Error> {
            let init = InitField::new(&SeedSpec::new(spec.seed, r, "init"), p)?.config(&region);
            let clocks = ClockStream::new(SeedSpec::new(spec.seed, r, "clock"), spec.t_max);
            let rep = run_to_quiescence(&init, &clocks, spec.policy, spec.t_max)?;
            let (outcome, time) = match rep.outcome {
                QuiescenceOutcome::Quiescent(tq) => ("quiescent", fmt17(tq)),
                QuiescenceOutcome::Timeout => ("timeout", String::new()),
            };
            Ok(format!(
                "{r},{outcome},{time},{},{},{}\n",
                rep.events.len(),
                rep.flip_counts.iter().max().copied().unwrap_or(0),
                fmt17(rep.config.count_ones() as f64 / region.area() as f64)
            ))
        })
        .collect::<Result<_, _>>()?;
    let quiescent = rows.iter().filter(|r| r.contains(",quiescent,")).count();
    Ok(output(spec, FIXATION_COLUMNS, rows.concat(), format!("{quiescent}/{} runs quiescent", spec.replicas)))
}

// violations, lower density, upper density, upper density at delta
type CoupleRun = (usize, f64, f64, Option<f64>);

pub const COUPLE_COLUMNS: &str = "replica,violations,lower_density,upper_density,upper_density_at_delta";

fn couple(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let region = square(spec.n)?;
    let (p, t) = (spec.p[0], spec.t[0]);
    let mode = if spec.strict { CheckMode::EveryEvent } else { CheckMode::Checkpoints };
    let area = region.area() as f64;
    let runs: Vec<CoupleRun> = (0..spec.replicas)
        .into_par_iter()
        .map(|r| {
            let pair = match spec.mode {
                CoupleMode::Monotone => monotone_p_pair(p, spec.p2, t, &region, spec.policy, spec.seed, r, mode),
                CoupleMode::Continuity => continuity_pair(p, spec.delta, t, &region, spec.policy, spec.seed, r, mode),
            };
            match pair {
                Ok(pair) => Ok((
                    pair.total_violations(),
                    pair.lower.count_ones() as f64 / area,
                    pair.upper.count_ones() as f64 / area,
                    pair.upper_at_delta.map(|c| c.count_ones() as f64 / area),
                )),
                Err(Error::OrderViolation { .. }) => Ok((1, f64::NAN, f64::NAN, None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, Error>>()?;
    let mut rows = String::new();
    for (r, (v, lo, hi, mid)) in runs.iter().enumerate() {
        let mid = mid.map(fmt17).unwrap_or_default();
        let _ = writeln!(rows, "{r},{v},{},{},{mid}", fmt17(*lo), fmt17(*hi));
    }
    let violations: usize = runs.iter().map(|r| r.0).sum();
    let mut summary = format!("{violations} order violations over {} runs", spec.replicas);
    let mut extra = String::new();
    let mean = |f: &dyn Fn(&CoupleRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let _ = writeln!(extra, "# total_violations={violations}");
    let _ = writeln!(extra, "# mean_lower_density={}", fmt17(mean(&|r| r.1)));
    let _ = writeln!(extra, "# mean_upper_density={}", fmt17(mean(&|r| r.2)));
    if spec.mode == CoupleMode::Continuity {
        let dp = majperc::couplings::delta_prime(p, spec.delta);
        let _ = writeln!(extra, "# delta_prime={}", fmt17(dp));
        let _ = writeln!(extra, "# expected_density_at_delta={}", fmt17(p + spec.delta + dp));
        let _ = writeln!(extra, "# mean_upper_density_at_delta={}", fmt17(mean(&|r| r.3.unwrap_or(f64::NAN))));
        summary.push_str(&format!("; delta'={}", fmt17(dp)));
    }
    Ok(RunOutput {
        main_text: format!("{}{extra}{COUPLE_COLUMNS}\n{rows}", spec.header()),
        svg: None,
        summary,
        budget_note: None,
    })
}

pub const ENHANCE_COLUMNS: &str = "instance_seed,chains_checked,connectors_checked,violations";

fn enhance(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let region = square(spec.n)?;
    let (p, t) = (spec.p[0], spec.t[0]);
    let reports: Vec<_> = (0..spec.replicas)
        .into_par_iter()
        .map(|r| enhancement_instance(&region, p, t, spec.policy, spec.seed, r))
        .collect::<Result<_, _>>()?;
    let mut rows = String::new();
    for (r, rep) in reports.iter().enumerate() {
        let _ = writeln!(rows, "{r},{},{},{}", rep.chains_checked, rep.connectors_checked, rep.violations);
    }
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    let connectors: usize = reports.iter().map(|r| r.connectors_checked).sum();
    Ok(output(
        spec,
        ENHANCE_COLUMNS,
        rows,
        format!("{violations} violations; {connectors} connector checks over {} instances", spec.replicas),
    ))
}

pub const FKG_COLUMNS: &str = "pair,p_a,p_b,p_ab,margin,margin_lower_bound,tail,result";

fn oracle(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let region = Rect::with_size(spec.grid.0, spec.grid.1)?;
    let (p, t) = (spec.p[0], spec.t[0]);
    let law = exact_law(&region, spec.policy, t, p, None)?;
    match spec.check {
        OracleCheck::Law => {
            let csv = law.to_csv();
            Ok(RunOutput {
                main_text: format!("{}{csv}", spec.header()),
                svg: None,
                summary: format!("K={} tail={}", law.k, fmt17(law.tail)),
                budget_note: None,
            })
        }
        OracleCheck::Fkg => {
            let reports = fkg_suite(&law)?;
            let mut rows = String::new();
            for (name, r) in &reports {
                let _ = writeln!(
                    rows,
                    "{name},{},{},{},{},{},{},{}",
                    fmt17(r.p_a),
                    fmt17(r.p_b),
                    fmt17(r.p_ab),
                    fmt17(r.margin),
                    fmt17(r.margin_lower_bound),
                    fmt17(r.tail),
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            let all = reports.iter().all(|(_, r)| r.pass);
            let summary = format!("{} ({} pairs, K={})", if all { "PASS" } else { "FAIL" }, reports.len(), law.k);
            let mut out = output(spec, FKG_COLUMNS, rows, summary);
            out.main_text = out.main_text.replacen(FKG_COLUMNS, &format!("# K={}\n{FKG_COLUMNS}", law.k), 1);
            Ok(out)
        }
    }
}

fn certify(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let cfg = CertificateConfig { replicas: spec.replicas, c: spec.c, n0: spec.n0, t_max: spec.t_max };
    let cert = percolation_certificate(spec.p[0], spec.t[0], spec.n, &cfg, spec.seed)?;
    Ok(RunOutput {
        main_text: format!("{}{}", spec.header(), cert.report()),
        svg: None,
        summary: cert.status.to_string(),
        budget_note: None,
    })
}

pub const RENORM_COLUMNS: &str = "k,scale,q_hat,ci_lo,ci_hi,replicas,bound_next,within_bound";

fn renorm(spec: &ExperimentSpec) -> Result<RunOutput, CliError> {
    let rows = renorm_trace(spec.p[0], spec.t[0], spec.l0, spec.factor, spec.k_max, spec.replicas, spec.c, spec.seed)?;
    let mut text = String::new();
    for r in &rows {
        let within = match r.within_bound {
            Some(b) => b.to_string(),
            None => String::new(),
        };
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{within}",
            r.k,
            r.scale,
            fmt17(r.q_hat),
            fmt17(r.ci.0),
            fmt17(r.ci.1),
            r.replicas,
            fmt17(r.bound_next)
        );
    }
    let ok = rows.iter().all(|r| r.within_bound != Some(false));
    Ok(output(spec, RENORM_COLUMNS, text, format!("recursion bound {}", if ok { "respected" } else { "violated" })))
}

/// Column documentation used by `--help`.
pub fn columns_help() -> String {
    format!(
        "CSV columns by command:\n  evolve    {EVOLVE_COLUMNS}\n  sweep     {SWEEP_COLUMNS}\n  pc-curve  {PC_CURVE_COLUMNS}\n  cov       {COV_COLUMNS}\n  fixation  {FIXATION_COLUMNS}\n  couple    {COUPLE_COLUMNS}\n  enhance   {ENHANCE_COLUMNS}\n  oracle    config_bits,mass (check=law) or {FKG_COLUMNS} (check=fkg)\n  certify   key=value report\n  renorm    {RENORM_COLUMNS}\nEvery file starts with `# key=value` lines echoing the experiment. Floats use 17 significant digits.\nExit codes: 2 invalid experiment, 3 budget exhausted, 4 i/o failure."
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_needs_a_command() {
        let spec = parse_spec("").unwrap();
        assert_eq!(spec, ExperimentSpec::default());
        assert_eq!(spec.validate().unwrap_err(), "command is required");
    }

    #[test]
    fn parses_a_valid_spec() {
        let spec = parse_spec("command=evolve\np=0.6\nt=1.0\nn=32\nseed=42").unwrap();
        assert_eq!(spec.validate().unwrap(), Command::Evolve);
        assert_eq!((spec.p.clone(), spec.t.clone(), spec.n, spec.seed), (vec![0.6], vec![1.0], 32, 42));
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        let spec = parse_spec("command=sweep\np=1.5").unwrap();
        assert!(spec.validate().unwrap_err().contains("`p`"));
        let err = parse_spec("# comment\ncommand=sweep\nbogus=1").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("bogus"));
        let err = parse_spec("n=abc").unwrap_err();
        assert!(err.message.contains("`n`") && err.line == 1);
        assert!(parse_spec("just words").is_err());
        assert!(parse_spec("command=launch").is_err());
    }

    #[test]
    fn comments_and_lists() {
        let spec = parse_spec("command=pc-curve # trailing\n\nt=0,0.5,1\ngrid=2x3\nsvg=true\n").unwrap();
        assert_eq!(spec.t, vec![0.0, 0.5, 1.0]);
        assert_eq!(spec.grid, (2, 3));
        assert!(spec.svg);
    }

    #[test]
    fn header_round_trips() {
        let spec = parse_spec("command=cov\np=0.55\nt=1\ndistance=1,46\nseed=9").unwrap();
        let echoed: String = spec.header().lines().map(|l| l.trim_start_matches("# ").to_string() + "\n").collect();
        let again = parse_spec(&echoed).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::OracleBudget("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::InvalidParameter("x".into())).exit_code(), 2);
        assert_eq!(CliError::Io("x".into()).exit_code(), 4);
    }
}
