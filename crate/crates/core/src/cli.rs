//! Command-line driver: TOML configuration, flag overrides, one JSON report
//! plus CSV tables per run.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::averaging::quadrature::MidpointRule;
use crate::averaging::{
    batch_box_averages, continuous_box_average, convergence_experiment, discrete_box_average, maximal_average,
    sample_points, ContinuousMethod, DEFAULT_BUDGET,
};
use crate::cone::{
    condition_verdict, cross_section, default_alpha_grid, family_from_str, geometric_grid, parse_rational,
    BoxFamily, Mode, Rational, VerdictThresholds,
};
use crate::exact::ExactScalar;
use crate::report::{write_csv, write_json, Check, Report};
use crate::submanifold::{
    genericity_failure_experiment, original_flow, jacobian_check, lower_bound_check, reduction_check,
    FlatPiece, GenericityConfig,
};
use crate::sweepout::{
    continuous_pipeline, default_lambda_grid, discrete_pipeline, oscillation_scan, RatioConfig,
};
use crate::systems::{standard_suspension, Observable, SystemSpec, TorusSet, TorusSystem};
use crate::towers::{rotation_tower, product_tower, suspension_tower, verify_tower, Tower};

/// Exit status for a run whose checks all passed.
pub const EXIT_OK: i32 = 0;
/// Exit status when an invariant check fails.
pub const EXIT_ASSERTION: i32 = 2;
/// Exit status for unusable configuration or parameters.
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "boxavg", version, about = "Moving box averages on torus actions")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "BOXAVG_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cone cross-section sizes on a grid.
    Cones(ConesArgs),
    /// Empirical verdict on the cone condition.
    Verdict(VerdictArgs),
    /// Box averages along a family at one point.
    Average(AverageArgs),
    /// Sup deviation of box averages from the mean over seeded samples.
    Converge(ConvergeArgs),
    /// Build and verify a Rokhlin tower.
    Tower(TowerArgs),
    /// Counterexample sets and the measure ratio.
    Sweepout(SweepoutArgs),
    /// Flat-piece reduction and the genericity-failure experiment.
    Submanifold(SubmanifoldArgs),
}

#[derive(Debug, Args, Default)]
pub struct FamilyArgs {
    #[arg(long)]
    pub family: Option<String>,
    /// Prefix length.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// 1-based axis.
    #[arg(long)]
    pub axis: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConesArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long = "alpha", value_delimiter = ',')]
    pub alphas: Vec<String>,
    #[arg(long = "lambda", value_delimiter = ',')]
    pub lambdas: Vec<String>,
}

#[derive(Debug, Args)]
pub struct VerdictArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long = "alpha", value_delimiter = ',')]
    pub alphas: Vec<String>,
    #[arg(long = "lambda", value_delimiter = ',')]
    pub lambdas: Vec<String>,
    #[arg(long)]
    pub lambda_max: Option<String>,
}

#[derive(Debug, Args)]
pub struct AverageArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub theta: Vec<String>,
    #[arg(long)]
    pub observable: Option<String>,
    /// Point on the torus (one value per coordinate).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub theta: Vec<String>,
    #[arg(long)]
    pub observable: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Run even when the system is not certified ergodic.
    #[arg(long)]
    pub override_condition: bool,
}

#[derive(Debug, Args)]
pub struct TowerArgs {
    #[arg(long)]
    pub theta: Vec<String>,
    #[arg(long = "N")]
    pub n: Vec<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Suspension tower of the canonical flow with this `γ`.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Suspension tower sides.
    #[arg(long = "L")]
    pub sides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SweepoutArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub p: Option<u64>,
    #[arg(long)]
    pub theta: Vec<String>,
    #[arg(long)]
    pub pad: Option<bool>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub gamma: Option<String>,
}

#[derive(Debug, Args)]
pub struct SubmanifoldArgs {
    /// Offset `u`, comma separated rationals.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub u: Option<Vec<String>>,
    /// One direction per flag, comma separated rationals.
    #[arg(long = "v", allow_hyphen_values = true)]
    pub v: Vec<String>,
    #[arg(long)]
    pub vol: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConesConfig {
    pub family: String,
    pub k: usize,
    pub axis: usize,
    pub alphas: Vec<String>,
    pub lambdas: Vec<String>,
}

impl Default for ConesConfig {
    fn default() -> Self {
        Self {
            family: "linear:r=2".into(),
            k: 2000,
            axis: 1,
            alphas: vec!["1/2".into(), "1".into(), "2".into()],
            lambdas: ["10", "20", "40", "80", "160"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerdictConfig {
    pub family: String,
    pub k: usize,
    pub axis: usize,
    /// Empty means the default aperture grid.
    pub alphas: Vec<String>,
    /// Empty means a doubling grid from `lambda_min` to `lambda_max`.
    pub lambdas: Vec<String>,
    pub lambda_min: String,
    pub lambda_max: String,
    pub ratio_growth: f64,
    pub min_exponent: f64,
}

impl Default for VerdictConfig {
    fn default() -> Self {
        let t = VerdictThresholds::default();
        Self {
            family: "linear:r=2".into(),
            k: 2000,
            axis: 1,
            alphas: Vec::new(),
            lambdas: Vec::new(),
            lambda_min: "10".into(),
            lambda_max: "500".into(),
            ratio_growth: t.ratio_growth,
            min_exponent: t.min_exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AverageConfig {
    pub family: String,
    pub k: usize,
    /// Rotation numbers, one per axis (discrete families).
    pub theta: Vec<String>,
    /// Suspension scale (continuous families).
    pub gamma: String,
    pub observable: String,
    /// Empty means one seeded random point.
    pub point: Vec<f64>,
    /// `exact` (indicators) or `quadrature`.
    pub method: String,
    pub budget: usize,
    /// Boxes compared against direct summation.
    pub naive_checks: usize,
}

impl Default for AverageConfig {
    fn default() -> Self {
        Self {
            family: "diagonal".into(),
            k: 100,
            theta: vec!["golden".into()],
            gamma: "1/8".into(),
            observable: "indicator:0,1/2".into(),
            point: Vec::new(),
            method: "exact".into(),
            budget: DEFAULT_BUDGET,
            naive_checks: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub family: String,
    pub k: usize,
    pub theta: Vec<String>,
    pub observable: String,
    pub samples: usize,
    /// Bound asserted on the final deviation; negative disables the check.
    pub tolerance: f64,
    pub override_condition: bool,
    pub budget: usize,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            family: "diagonal".into(),
            k: 10_000,
            theta: vec!["golden".into()],
            observable: "indicator:0,1/2".into(),
            samples: 100,
            tolerance: 0.05,
            override_condition: false,
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TowerConfig {
    pub theta: Vec<String>,
    pub n: Vec<u64>,
    pub delta: f64,
    /// When set, a suspension tower with these sides is built instead.
    pub gamma: Option<String>,
    pub sides: Vec<String>,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self {
            theta: vec!["golden".into()],
            n: vec![5],
            delta: 0.5,
            gamma: None,
            sides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepoutConfig {
    pub family: String,
    pub k: usize,
    pub axis: usize,
    pub p: u64,
    pub pad: bool,
    pub theta: Vec<String>,
    pub lambda_max: i64,
    pub epsilon: f64,
    pub samples: usize,
    pub scan_samples: usize,
    /// Continuous families: suspension scale; empty picks the largest that fits.
    pub gamma: String,
    pub budget: usize,
}

impl Default for SweepoutConfig {
    fn default() -> Self {
        Self {
            family: "squares_unit".into(),
            k: 400,
            axis: 1,
            p: 3,
            pad: true,
            theta: vec!["golden".into()],
            lambda_max: 64,
            epsilon: 0.05,
            samples: 2000,
            scan_samples: 1000,
            gamma: String::new(),
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubmanifoldConfig {
    pub u: Vec<String>,
    pub v: Vec<Vec<String>>,
    pub vol: Option<String>,
    pub epsilon: f64,
    pub p_start: u64,
    pub p_max: u64,
    pub samples: usize,
    pub target: f64,
    pub tolerance: f64,
    pub t_max: Option<usize>,
    pub margin: f64,
    /// Required excess of the lower bound over the set measure.
    pub min_gap: f64,
    /// Random reduction checks at sampled points and dilations.
    pub reduction_checks: usize,
}

impl Default for SubmanifoldConfig {
    fn default() -> Self {
        let g = GenericityConfig::default();
        Self {
            u: vec!["1".into(), "0".into()],
            v: vec![vec!["0".into(), "1".into()]],
            vol: None,
            epsilon: g.epsilon,
            p_start: g.p_start,
            p_max: g.p_max,
            samples: g.samples,
            target: g.target,
            tolerance: g.tolerance,
            t_max: None,
            margin: g.margin,
            min_gap: 0.5,
            reduction_checks: 20,
        }
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub threads: Option<usize>,
    pub cones: ConesConfig,
    pub verdict: VerdictConfig,
    pub average: AverageConfig,
    pub converge: ConvergeConfig,
    pub tower: TowerConfig,
    pub sweepout: SweepoutConfig,
    pub submanifold: SubmanifoldConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => 1,
        }
    }
}

fn cfg_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// What a run produced.
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.passed {
            EXIT_OK
        } else {
            EXIT_ASSERTION
        }
    }
}

fn set_if<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_vec<T>(slot: &mut Vec<T>, v: Vec<T>) {
    if !v.is_empty() {
        *slot = v;
    }
}

fn apply_family(family: &mut String, k: &mut usize, axis: &mut usize, a: FamilyArgs) {
    set_if(family, a.family);
    set_if(k, a.k);
    set_if(axis, a.axis);
}

fn load_family(spec: &str, k: usize) -> Result<BoxFamily, CliError> {
    family_from_str(spec, k).map_err(cfg_err)
}

fn axis0(axis: usize, family: &BoxFamily) -> Result<usize, CliError> {
    if axis == 0 || axis > family.dim() {
        return Err(cfg_err(format!("axis {axis} outside 1..={}", family.dim())));
    }
    Ok(axis - 1)
}

fn rationals(v: &[String], name: &str) -> Result<Vec<Rational>, CliError> {
    v.iter()
        .map(|s| parse_rational(s).ok_or_else(|| cfg_err(format!("{name}: bad rational {s:?}"))))
        .collect()
}

fn exacts(v: &[String]) -> Result<Vec<ExactScalar>, CliError> {
    v.iter().map(|s| ExactScalar::parse(s).map_err(|e| cfg_err(format!("{s:?}: {e}")))).collect()
}

/// Coordinatewise rotations for a discrete family of dimension `d`.
fn rotation_system(theta: &[String], d: usize) -> Result<TorusSystem, CliError> {
    if theta.len() != d {
        return Err(cfg_err(format!("need {d} rotation numbers, got {}", theta.len())));
    }
    crate::systems::make_system(&SystemSpec::ProductRotation { theta: theta.to_vec() }).map_err(cfg_err)
}

/// `indicator:a,b;c,d` (one half-open interval per coordinate, wrapped),
/// `character:1,-2` or `constant:c`.
pub fn parse_observable(text: &str, dim: usize) -> Result<Observable, CliError> {
    let (kind, body) = text.split_once(':').unwrap_or((text, ""));
    match kind.trim() {
        "indicator" => {
            let parts: Vec<&str> = body.split(';').collect();
            if parts.len() != dim {
                return Err(cfg_err(format!("indicator needs {dim} intervals, got {}", parts.len())));
            }
            let mut start = Vec::with_capacity(dim);
            let mut len = Vec::with_capacity(dim);
            for p in parts {
                let ends = exacts(&p.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>())?;
                if ends.len() != 2 || ends[1] < ends[0] {
                    return Err(cfg_err(format!("bad interval {p:?}")));
                }
                len.push(&ends[1] - &ends[0]);
                start.push(ends[0].clone());
            }
            Ok(Observable::indicator(TorusSet::wrapped_box(&start, &len)))
        }
        "character" => {
            let freq = body
                .split(',')
                .map(|s| s.trim().parse::<i64>().map_err(|e| cfg_err(format!("frequency {s:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if freq.len() != dim {
                return Err(cfg_err(format!("character needs {dim} frequencies")));
            }
            Ok(Observable::character(freq))
        }
        "constant" => {
            let c: f64 = body.trim().parse().map_err(|e| cfg_err(format!("constant {body:?}: {e}")))?;
            Ok(Observable::constant(dim, c))
        }
        other => Err(cfg_err(format!("unknown observable {other:?}"))),
    }
}

#[derive(Debug, Clone, Serialize)]
struct Resolved<'a, T: Serialize> {
    seed: u64,
    #[serde(flatten)]
    section: &'a T,
}

/// Parses arguments, runs the command, writes reports.
pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(1);
    if let Some(n) = cli.threads.or(file.threads) {
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let out = cli
        .out
        .clone()
        .or_else(|| file.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("boxavg-out"));
    let mut file = file;
    match cli.command {
        Command::Cones(a) => {
            let c = &mut file.cones;
            apply_family(&mut c.family, &mut c.k, &mut c.axis, a.family);
            set_vec(&mut c.alphas, a.alphas);
            set_vec(&mut c.lambdas, a.lambdas);
            cones(c, seed, &out)
        }
        Command::Verdict(a) => {
            let c = &mut file.verdict;
            apply_family(&mut c.family, &mut c.k, &mut c.axis, a.family);
            set_vec(&mut c.alphas, a.alphas);
            set_vec(&mut c.lambdas, a.lambdas);
            set_if(&mut c.lambda_max, a.lambda_max);
            verdict(c, seed, &out)
        }
        Command::Average(a) => {
            let c = &mut file.average;
            let mut axis = 1;
            apply_family(&mut c.family, &mut c.k, &mut axis, a.family);
            set_vec(&mut c.theta, a.theta);
            set_if(&mut c.observable, a.observable);
            set_if(&mut c.point, a.point);
            average(c, seed, &out)
        }
        Command::Converge(a) => {
            let c = &mut file.converge;
            let mut axis = 1;
            apply_family(&mut c.family, &mut c.k, &mut axis, a.family);
            set_vec(&mut c.theta, a.theta);
            set_if(&mut c.observable, a.observable);
            set_if(&mut c.samples, a.samples);
            set_if(&mut c.tolerance, a.tolerance);
            c.override_condition |= a.override_condition;
            converge(c, seed, &out)
        }
        Command::Tower(a) => {
            let c = &mut file.tower;
            set_vec(&mut c.theta, a.theta);
            set_vec(&mut c.n, a.n);
            set_if(&mut c.delta, a.delta);
            if a.gamma.is_some() {
                c.gamma = a.gamma;
            }
            set_vec(&mut c.sides, a.sides);
            tower(c, seed, &out)
        }
        Command::Sweepout(a) => {
            let c = &mut file.sweepout;
            apply_family(&mut c.family, &mut c.k, &mut c.axis, a.family);
            set_if(&mut c.p, a.p);
            set_vec(&mut c.theta, a.theta);
            set_if(&mut c.pad, a.pad);
            set_if(&mut c.epsilon, a.epsilon);
            set_if(&mut c.samples, a.samples);
            set_if(&mut c.gamma, a.gamma);
            sweepout(c, seed, &out)
        }
        Command::Submanifold(a) => {
            let c = &mut file.submanifold;
            set_if(&mut c.u, a.u);
            if !a.v.is_empty() {
                c.v = a.v.iter().map(|s| s.split(',').map(|x| x.trim().to_string()).collect()).collect();
            }
            if a.vol.is_some() {
                c.vol = a.vol;
            }
            set_if(&mut c.epsilon, a.epsilon);
            set_if(&mut c.samples, a.samples);
            submanifold(c, seed, &out)
        }
    }
}

fn finish<T: Serialize, R: Serialize>(
    command: &str,
    seed: u64,
    section: &T,
    checks: Vec<Check>,
    result: &R,
    out: &Path,
    mut files: Vec<PathBuf>,
) -> Result<Outcome, CliError> {
    let report = Report::new(command, seed, &Resolved { seed, section }, checks, result);
    files.insert(0, write_json(out, command, &report).map_err(CliError::Io)?);
    Ok(Outcome { report, files })
}

fn cones(c: &ConesConfig, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let family = load_family(&c.family, c.k)?;
    let axis = axis0(c.axis, &family)?;
    let alphas = rationals(&c.alphas, "alphas")?;
    let lambdas = rationals(&c.lambdas, "lambdas")?;
    if alphas.iter().chain(&lambdas).any(|v| *v <= Rational::from_integer(0)) {
        return Err(cfg_err("apertures and heights must be positive"));
    }
    #[derive(Serialize)]
    struct Row {
        alpha: String,
        lambda: String,
        size: String,
        ratio: f64,
        intervals: usize,
    }
    let mut rows = Vec::new();
    let mut monotone = true;
    for a in &alphas {
        let mut prev: Option<Rational> = None;
        let mut sorted = lambdas.clone();
        sorted.sort();
        for l in &sorted {
            let cs = cross_section(&family, axis, *a, *l);
            if prev.is_some_and(|p| p > cs.size) {
                monotone = false;
            }
            prev = Some(cs.size);
            let ratio = crate::sweepout::to_exact(&cs.size).to_f64() / crate::sweepout::to_exact(l).to_f64();
            rows.push(Row {
                alpha: a.to_string(),
                lambda: l.to_string(),
                size: cs.size.to_string(),
                ratio,
                intervals: cs.intervals.len(),
            });
        }
    }
    let csv = write_csv(out, "cones", &rows).map_err(CliError::Io)?;
    let checks = vec![Check::new("size monotone in lambda", monotone, "")];
    finish("cones", seed, c, checks, &rows, out, vec![csv])
}

fn verdict(c: &VerdictConfig, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let family = load_family(&c.family, c.k)?;
    let axis = axis0(c.axis, &family)?;
    let alphas = if c.alphas.is_empty() {
        default_alpha_grid()
    } else {
        rationals(&c.alphas, "alphas")?
    };
    let lambdas = if c.lambdas.is_empty() {
        let lo = rationals(std::slice::from_ref(&c.lambda_min), "lambda_min")?[0];
        let hi = rationals(std::slice::from_ref(&c.lambda_max), "lambda_max")?[0];
        if lo <= Rational::from_integer(0) || hi < lo {
            return Err(cfg_err("need 0 < lambda_min <= lambda_max"));
        }
        geometric_grid(lo, Rational::from_integer(2), hi)
    } else {
        rationals(&c.lambdas, "lambdas")?
    };
    let thresholds = VerdictThresholds {
        ratio_growth: c.ratio_growth,
        min_exponent: c.min_exponent,
    };
    let v = condition_verdict(&family, axis, &alphas, &lambdas, thresholds).map_err(cfg_err)?;
    let csv = write_csv(out, "verdict", &v.rows).map_err(CliError::Io)?;
    finish("verdict", seed, c, Vec::new(), &v, out, vec![csv])
}

#[derive(Serialize)]
struct AverageRow {
    k: usize,
    re: f64,
    im: f64,
}

fn average(c: &AverageConfig, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let family = load_family(&c.family, c.k)?;
    let d = family.dim();
    let mut checks = Vec::new();
    let rows: Vec<AverageRow>;
    let point: Vec<f64>;
    #[derive(Serialize)]
    struct Summary<'a> {
        point: &'a [f64],
        maximal: Option<crate::averaging::MaximalAverage>,
        values: &'a [AverageRow],
    }
    match family.mode() {
        Mode::Discrete => {
            let sys = rotation_system(&c.theta, d)?;
            let obs = parse_observable(&c.observable, sys.torus_dim())?;
            point = pick_point(&c.point, sys.torus_dim(), seed)?;
            let values = batch_box_averages(&sys, &obs, &point, &family, c.budget).map_err(cfg_err)?;
            let mut worst = 0.0f64;
            for (e, v) in family.entries().iter().zip(&values).take(c.naive_checks) {
                let n = discrete_box_average(&sys, &obs, &point, &e.int_corner(), &e.int_lengths()).map_err(cfg_err)?;
                worst = worst.max((n - v).norm());
            }
            checks.push(Check::new(
                "batch equals direct summation",
                worst <= 1e-12,
                format!("max difference {worst:e}"),
            ));
            let maximal = maximal_average(&sys, &obs, &point, &family, 1, family.len(), c.budget).ok();
            rows = values
                .iter()
                .enumerate()
                .map(|(i, v)| AverageRow { k: i + 1, re: v.re, im: v.im })
                .collect();
            let csv = write_csv(out, "average", &rows).map_err(CliError::Io)?;
            let s = Summary { point: &point, maximal, values: &rows };
            finish("average", seed, c, checks, &s, out, vec![csv])
        }
        Mode::Continuous => {
            let gamma = ExactScalar::parse(&c.gamma).map_err(cfg_err)?;
            let sys = standard_suspension(d, gamma).map_err(cfg_err)?;
            let obs = parse_observable(&c.observable, sys.torus_dim())?;
            point = pick_point(&c.point, sys.torus_dim(), seed)?;
            let method = match c.method.as_str() {
                "exact" => ContinuousMethod::ExactIndicator,
                "quadrature" => ContinuousMethod::TensorMidpoint(MidpointRule::default()),
                m => return Err(cfg_err(format!("unknown method {m:?}"))),
            };
            let mut values = Vec::new();
            for e in family.entries() {
                let corner: Vec<ExactScalar> = e.corner.iter().map(crate::sweepout::to_exact).collect();
                let lengths: Vec<ExactScalar> = e.lengths.iter().map(crate::sweepout::to_exact).collect();
                let a = continuous_box_average(&sys, &obs, &point, &corner, &lengths, method).map_err(cfg_err)?;
                values.push(a.value);
            }
            rows = values
                .iter()
                .enumerate()
                .map(|(i, v): (usize, &Complex64)| AverageRow { k: i + 1, re: v.re, im: v.im })
                .collect();
            let csv = write_csv(out, "average", &rows).map_err(CliError::Io)?;
            let s = Summary { point: &point, maximal: None, values: &rows };
            finish("average", seed, c, checks, &s, out, vec![csv])
        }
    }
}

fn pick_point(given: &[f64], m: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    if given.is_empty() {
        return Ok(sample_points(m, 1, seed).remove(0));
    }
    if given.len() != m {
        return Err(cfg_err(format!("point needs {m} coordinates")));
    }
    Ok(given.iter().map(|v| v - v.floor()).collect())
}

fn converge(c: &ConvergeConfig, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let family = load_family(&c.family, c.k)?;
    let sys = rotation_system(&c.theta, family.dim())?;
    let obs = parse_observable(&c.observable, sys.torus_dim())?;
    let r = convergence_experiment(&sys, &obs, &family, c.samples, seed, c.override_condition, c.budget)
        .map_err(cfg_err)?;
    let mut checks = Vec::new();
    if c.tolerance >= 0.0 {
        checks.push(Check::new(
            "final deviation within tolerance",
            r.final_deviation <= c.tolerance,
            format!("{} at k = {}", r.final_deviation, family.len()),
        ));
    }
    let csv = write_csv(out, "converge", &r.rows).map_err(CliError::Io)?;
    finish("converge", seed, c, checks, &r, out, vec![csv])
}

fn tower(c: &TowerConfig, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let t = if let Some(g) = &c.gamma {
        let gamma = ExactScalar::parse(g).map_err(cfg_err)?;
        let sides = exacts(&c.sides)?;
        if sides.is_empty() {
            return Err(cfg_err("suspension tower needs sides"));
        }
        let sys = standard_suspension(sides.len(), gamma).map_err(cfg_err)?;
        Tower::Suspension(suspension_tower(&sys, &sides).map_err(cfg_err)?)
    } else {
        let thetas = exacts(&c.theta)?;
        if thetas.len() == 1 && c.n.len() == 1 {
            Tower::Discrete(rotation_tower(&thetas[0], c.n[0], c.delta).map_err(cfg_err)?)
        } else {
            Tower::Discrete(product_tower(&thetas, &c.n, c.delta).map_err(cfg_err)?)
        }
    };
    let v = verify_tower(&t, seed);
    let mut checks = vec![Check::new(
        "levels pairwise disjoint",
        v.disjoint,
        format!("{:?}", v.witness),
    )];
    if let Some(m) = v.meets_target {
        checks.push(Check::new("coverage meets target", m, v.coverage.to_string()));
    }
    if let Some(i) = v.injective {
        checks.push(Check::new("chart injective", i && v.spot_failures == 0, format!("{} spot failures", v.spot_failures)));
    }
    finish("tower", seed, c, checks, &v, out, Vec::new())
}

fn sweepout(c: &SweepoutConfig, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let family = load_family(&c.family, c.k)?;
    let axis = axis0(c.axis, &family)?;
    let grid = default_lambda_grid(c.lambda_max.max(1) as i128);
    let mut checks = Vec::new();
    match family.mode() {
        Mode::Discrete => {
            let thetas = exacts(&c.theta)?;
            let cfg = RatioConfig {
                epsilon: c.epsilon,
                samples: c.samples,
                seed,
                budget: c.budget,
            };
            let o = discrete_pipeline(&family, axis, c.p, c.pad, &grid, &thetas, cfg).map_err(cfg_err)?;
            let sys = match &o.tower {
                Tower::Discrete(t) => t.system().clone(),
                Tower::Suspension(_) => unreachable!("discrete pipeline"),
            };
            let r = &o.ratio;
            checks.push(Check::new("tower levels disjoint", o.verification.disjoint, ""));
            checks.push(Check::new(
                "measure of H matches formula",
                o.sets.formula_holds,
                o.sets.h_measure.to_string(),
            ));
            checks.push(Check::new("translates of F disjoint", r.translates_disjoint, ""));
            checks.push(Check::new(
                "box orbits contained in H",
                r.containment_holds,
                format!("{} checks", r.containment_checks),
            ));
            checks.push(Check::new(
                "ratio meets p/3^(d-1)",
                r.holds_three,
                format!("{} >= {}", r.ratio, r.bound_three),
            ));
            if let Some(s) = &r.sampled {
                checks.push(Check::new(
                    "sampled maximal average dominates the union",
                    s.consistent,
                    format!("{} vs {}", s.fraction_above, s.union_measure),
                ));
            }
            if let Some(w) = &r.witness {
                checks.push(Check::new("exact witness average is 1", w.value == ExactScalar::one(), w.value.to_string()));
            }
            let inside = oscillation_scan(
                &sys,
                &o.sets.h,
                &family,
                1,
                o.plan.k_p,
                c.scan_samples,
                c.epsilon,
                seed,
                c.budget,
            )
            .map_err(cfg_err)?;
            checks.push(Check::new(
                "some sample attains average 1",
                inside.samples_hitting_one > 0,
                format!("{} samples", inside.samples_hitting_one),
            ));
            let outside = if o.plan.k_p < family.len() {
                let s = oscillation_scan(
                    &sys,
                    &o.sets.h,
                    &family,
                    o.plan.k_p + 1,
                    family.len(),
                    c.scan_samples,
                    c.epsilon,
                    seed,
                    c.budget,
                )
                .map_err(cfg_err)?;
                checks.push(Check::new(
                    "averages drop to epsilon outside the window",
                    s.fraction_min_low > 0.0,
                    format!("fraction {}", s.fraction_min_low),
                ));
                Some(s)
            } else {
                None
            };
            #[derive(Serialize)]
            struct ScanRow {
                window: String,
                sample: usize,
                min: f64,
                max: f64,
                argmin_k: usize,
                argmax_k: usize,
                hits_one: bool,
            }
            let mut scan_rows = Vec::new();
            for (name, s) in [("inside", Some(&inside)), ("outside", outside.as_ref())] {
                if let Some(s) = s {
                    scan_rows.extend(s.rows.iter().map(|r| ScanRow {
                        window: name.into(),
                        sample: r.sample,
                        min: r.min,
                        max: r.max,
                        argmin_k: r.argmin_k,
                        argmax_k: r.argmax_k,
                        hits_one: r.hits_one,
                    }));
                }
            }
            let csv = write_csv(out, "sweepout_scan", &scan_rows).map_err(CliError::Io)?;
            #[derive(Serialize)]
            struct Summary<'a> {
                plan: crate::sweepout::PlanSummary,
                tower: &'a crate::towers::TowerVerification,
                h: &'a TorusSet,
                h_measure: &'a ExactScalar,
                expected_h_measure: &'a ExactScalar,
                f: Option<&'a TorusSet>,
                ratio: &'a crate::sweepout::RatioReport,
                scan_inside: ScanSummary,
                scan_outside: Option<ScanSummary>,
            }
            let s = Summary {
                plan: o.plan.summary(),
                tower: &o.verification,
                h: &o.sets.h,
                h_measure: &o.sets.h_measure,
                expected_h_measure: &o.sets.expected_h_measure,
                f: o.sets.f.as_ref(),
                ratio: r,
                scan_inside: ScanSummary::of(&inside),
                scan_outside: outside.as_ref().map(ScanSummary::of),
            };
            finish("sweepout", seed, c, checks, &s, out, vec![csv])
        }
        Mode::Continuous => {
            let gamma = if c.gamma.is_empty() {
                None
            } else {
                Some(ExactScalar::parse(&c.gamma).map_err(cfg_err)?)
            };
            let o = continuous_pipeline(&family, axis, c.p, &grid, gamma, seed).map_err(cfg_err)?;
            let r = &o.ratio;
            checks.push(Check::new(
                "measure of H matches formula",
                o.sets.formula_holds,
                o.sets.h_measure.to_string(),
            ));
            checks.push(Check::new("box sweeps contained in H", r.containment_holds, ""));
            checks.push(Check::new(
                "ratio meets p/3^(d-1)",
                r.holds_three,
                format!("{} >= {}", r.ratio, r.bound_three),
            ));
            if let Some(w) = &r.witness {
                checks.push(Check::new("exact witness average is 1", w.value == ExactScalar::one(), w.value.to_string()));
            }
            #[derive(Serialize)]
            struct Summary<'a> {
                plan: crate::sweepout::PlanSummary,
                tower: &'a crate::towers::TowerVerification,
                h: &'a TorusSet,
                h_measure: &'a ExactScalar,
                expected_h_measure: &'a ExactScalar,
                ratio: &'a crate::sweepout::RatioReport,
            }
            let s = Summary {
                plan: o.plan.summary(),
                tower: &o.verification,
                h: &o.sets.h,
                h_measure: &o.sets.h_measure,
                expected_h_measure: &o.sets.expected_h_measure,
                ratio: r,
            };
            finish("sweepout", seed, c, checks, &s, out, Vec::new())
        }
    }
}

/// Scan report without the per-sample rows (those go to CSV).
#[derive(Debug, Serialize)]
struct ScanSummary {
    window: (usize, usize),
    samples: usize,
    set_measure: f64,
    epsilon: f64,
    fraction_max_high: f64,
    fraction_min_low: f64,
    fraction_both: f64,
    samples_hitting_one: usize,
}

impl ScanSummary {
    fn of(s: &crate::sweepout::OscillationReport) -> Self {
        Self {
            window: s.window,
            samples: s.samples,
            set_measure: s.set_measure,
            epsilon: s.epsilon,
            fraction_max_high: s.fraction_max_high,
            fraction_min_low: s.fraction_min_low,
            fraction_both: s.fraction_both,
            samples_hitting_one: s.samples_hitting_one,
        }
    }
}

fn submanifold(c: &SubmanifoldConfig, seed: u64, out: &Path) -> Result<Outcome, CliError> {
    let piece = FlatPiece::parse(&c.u, &c.v, c.vol.as_deref()).map_err(cfg_err)?;
    let g = GenericityConfig {
        epsilon: c.epsilon,
        p_start: c.p_start,
        p_max: c.p_max,
        samples: c.samples,
        seed,
        target: c.target,
        tolerance: c.tolerance,
        t_max: c.t_max,
        margin: c.margin,
        ..GenericityConfig::default()
    };
    let r = genericity_failure_experiment(&piece, &g).map_err(cfg_err)?;
    let mut checks = vec![
        Check::new(
            "set measure at most epsilon",
            r.set_measure_value <= c.epsilon,
            r.set_measure.to_string(),
        ),
        Check::new("re-indexed action is the canonical flow", r.reindexed_matches_canonical, ""),
        Check::new("some dilate reaches the threshold", r.hits > 0, format!("{} samples", r.hits)),
        Check::new(
            "lower bound exceeds the set measure",
            r.contradiction && r.gap >= c.min_gap,
            format!("gap {}", r.gap),
        ),
    ];
    // reduction, Jacobian and lower bound at sampled points of the same system
    let canonical = standard_suspension(piece.m() + 1, r.gamma.clone()).map_err(cfg_err)?;
    let frame = piece.frame();
    let sys = original_flow(&canonical, &frame).map_err(cfg_err)?;
    let obs = Observable::indicator(r.set.clone());
    let pts = sample_points(sys.torus_dim(), c.reduction_checks, seed ^ 0x5eed);
    let mut reductions = 0usize;
    let mut bounds = 0usize;
    let mut jac = 0usize;
    for (i, x) in pts.iter().enumerate() {
        let xe: Vec<ExactScalar> = x.iter().map(|&v| crate::averaging::exact_from_f64(v)).collect();
        let t = ExactScalar::from_ratio(7 + 13 * i as i64, 4);
        let rc = reduction_check(&sys, &obs, &xe, &piece, &t, ContinuousMethod::ExactIndicator).map_err(cfg_err)?;
        reductions += rc.agrees as usize;
        let lb = lower_bound_check(&sys, &r.set, &xe, &piece, &t).map_err(cfg_err)?;
        bounds += lb.holds as usize;
        jac += jacobian_check(&piece, &t).map_err(cfg_err)?.holds as usize;
    }
    checks.push(Check::new(
        "flat and box forms agree exactly",
        reductions == pts.len(),
        format!("{reductions}/{}", pts.len()),
    ));
    checks.push(Check::new("manifold lower bound holds", bounds == pts.len(), ""));
    checks.push(Check::new("surface factor is exact", jac == pts.len(), ""));
    let csv = write_csv(out, "submanifold_scan", &r.rows).map_err(CliError::Io)?;
    let mut slim = r.clone();
    slim.rows.clear();
    finish("submanifold", seed, c, checks, &slim, out, vec![csv])
}
