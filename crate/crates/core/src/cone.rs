//! Box families and the cone condition.
//!
//! A family is a finite prefix `B_1, ..., B_K` of a box sequence, each box
//! given by a corner and a length vector. For an axis `i`, aperture `α` and
//! height `λ`, the cone cross-section is
//!
//! ```text
//! Ω_i(α, λ) = ⋃_{k : l_ki ≤ λ} { x : |x − n_ki| ≤ α (λ − l_ki) }
//! ```
//!
//! counted in lattice points (discrete mode) or measured in length
//! (continuous mode). The cone condition asks for `|Ω_i(α, λ)| ≤ A λ`.
//! All arithmetic here is exact (`Ratio<i128>`).

use std::fmt;

use num_rational::Ratio;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rational = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConeError {
    #[error("unknown family generator {0:?}")]
    UnknownGenerator(String),
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid family: {0}")]
    InvalidFamily(String),
    #[error("{0} grid is empty")]
    EmptyGrid(&'static str),
    #[error("{0} grid must be positive and strictly increasing")]
    BadGrid(&'static str),
    #[error("prefix certifies heights up to {coverage} only, but the grid asks for {requested}")]
    InsufficientPrefix { coverage: String, requested: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxEntry {
    pub corner: Vec<Rational>,
    pub lengths: Vec<Rational>,
}

impl BoxEntry {
    pub fn new(corner: Vec<Rational>, lengths: Vec<Rational>) -> Self {
        Self { corner, lengths }
    }

    pub fn from_ints(corner: &[i64], lengths: &[i64]) -> Self {
        Self {
            corner: corner.iter().map(|&c| Rational::from_integer(c as i128)).collect(),
            lengths: lengths.iter().map(|&l| Rational::from_integer(l as i128)).collect(),
        }
    }

    /// Integer corner; panics when the entry is not integral.
    pub fn int_corner(&self) -> Vec<i64> {
        self.corner.iter().map(to_i64).collect()
    }

    pub fn int_lengths(&self) -> Vec<i64> {
        self.lengths.iter().map(to_i64).collect()
    }

    /// Number of lattice points (discrete) or volume (continuous).
    pub fn volume(&self) -> Rational {
        self.lengths.iter().fold(Rational::one(), |acc, l| acc * l)
    }
}

fn to_i64(q: &Rational) -> i64 {
    assert!(q.is_integer(), "non-integral discrete box coordinate {q}");
    i64::try_from(q.to_integer()).expect("coordinate exceeds i64")
}

/// Named box-sequence generators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// `(k, r k)`
    Linear { r: i64 },
    /// `(k, ⌈√k⌉)`
    Sqrt,
    /// `(k², 1)`
    SquaresUnit,
    /// `(k, 1)`
    Unit,
    /// `(b^k, 1)`
    Powers { base: i64 },
    /// `[k−1, k) × [0, k)^m`, continuous, dimension `m + 1`
    FlatPiece { m: usize },
}

/// A generator together with the dimension it is replicated to and the mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub generator: Generator,
    pub dim: usize,
    pub mode: Mode,
}

fn isqrt_ceil(k: i128) -> i128 {
    let mut r = (k as f64).sqrt() as i128;
    while r * r > k {
        r -= 1;
    }
    while r * r < k {
        r += 1;
    }
    r
}

impl GeneratorSpec {
    /// Parses `name` or `name:key=value,key=value`.
    ///
    /// Recognized names: `linear` (`r`), `diagonal`, `sqrt`, `squares_unit`,
    /// `unit`, `powers` (`base`), `flat_piece` (`m`). The keys `d` (replicate
    /// the one-dimensional pattern on `d` axes) and `mode`
    /// (`discrete`/`continuous`) apply to all one-dimensional generators.
    pub fn parse(text: &str) -> Result<Self, ConeError> {
        let (name, params) = match text.split_once(':') {
            Some((n, p)) => (n.trim(), p.trim()),
            None => (text.trim(), ""),
        };
        let mut kv = Vec::new();
        for part in params.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| ConeError::InvalidParameter(format!("expected key=value, got {part:?}")))?;
            kv.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get_int = |key: &str, default: Option<i64>| -> Result<i64, ConeError> {
            match kv.iter().find(|(k, _)| k == key) {
                Some((_, v)) => v
                    .parse::<i64>()
                    .map_err(|_| ConeError::InvalidParameter(format!("{key}={v} is not an integer"))),
                None => default.ok_or_else(|| ConeError::InvalidParameter(format!("missing parameter {key}"))),
            }
        };
        for (k, _) in &kv {
            if !["r", "base", "m", "d", "mode"].contains(&k.as_str()) {
                return Err(ConeError::InvalidParameter(format!("unknown key {k:?}")));
            }
        }
        let mut mode = match kv.iter().find(|(k, _)| k == "mode").map(|(_, v)| v.as_str()) {
            None | Some("discrete") => Mode::Discrete,
            Some("continuous") => Mode::Continuous,
            Some(other) => return Err(ConeError::InvalidParameter(format!("mode={other}"))),
        };
        let d = get_int("d", Some(1))?;
        if d < 1 {
            return Err(ConeError::InvalidParameter(format!("d={d} must be positive")));
        }
        let mut dim = d as usize;
        let generator = match name {
            "linear" => {
                let r = get_int("r", None)?;
                if r < 1 {
                    return Err(ConeError::InvalidParameter(format!("r={r} must be >= 1")));
                }
                Generator::Linear { r }
            }
            "diagonal" => Generator::Linear { r: 1 },
            "sqrt" => Generator::Sqrt,
            "squares_unit" => Generator::SquaresUnit,
            "unit" => Generator::Unit,
            "powers" => {
                let base = get_int("base", None)?;
                if base < 2 {
                    return Err(ConeError::InvalidParameter(format!("base={base} must be >= 2")));
                }
                Generator::Powers { base }
            }
            "flat_piece" => {
                let m = get_int("m", Some(1))?;
                if m < 1 {
                    return Err(ConeError::InvalidParameter(format!("m={m} must be >= 1")));
                }
                dim = m as usize + 1;
                mode = Mode::Continuous;
                Generator::FlatPiece { m: m as usize }
            }
            other => return Err(ConeError::UnknownGenerator(other.to_string())),
        };
        Ok(Self { generator, dim, mode })
    }

    /// Entry `k` (1-based).
    pub fn entry(&self, k: usize) -> Result<BoxEntry, ConeError> {
        let k = k as i128;
        let (n, l) = match &self.generator {
            Generator::Linear { r } => (k, *r as i128 * k),
            Generator::Sqrt => (k, isqrt_ceil(k)),
            Generator::SquaresUnit => (k * k, 1),
            Generator::Unit => (k, 1),
            Generator::Powers { base } => {
                let p = (*base as i128)
                    .checked_pow(k as u32)
                    .filter(|p| *p <= i64::MAX as i128)
                    .ok_or_else(|| ConeError::InvalidParameter(format!("{base}^{k} overflows")))?;
                (p, 1)
            }
            Generator::FlatPiece { m } => {
                let mut corner = vec![Rational::from_integer(k - 1)];
                let mut lengths = vec![Rational::one()];
                corner.extend(std::iter::repeat_n(Rational::zero(), *m));
                lengths.extend(std::iter::repeat_n(Rational::from_integer(k), *m));
                return Ok(BoxEntry { corner, lengths });
            }
        };
        Ok(BoxEntry {
            corner: vec![Rational::from_integer(n); self.dim],
            lengths: vec![Rational::from_integer(l); self.dim],
        })
    }

    /// Every built-in generator has nondecreasing lengths on every axis.
    fn lengths_nondecreasing(&self) -> bool {
        true
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut params = Vec::new();
        let name = match &self.generator {
            Generator::Linear { r } => {
                params.push(format!("r={r}"));
                "linear"
            }
            Generator::Sqrt => "sqrt",
            Generator::SquaresUnit => "squares_unit",
            Generator::Unit => "unit",
            Generator::Powers { base } => {
                params.push(format!("base={base}"));
                "powers"
            }
            Generator::FlatPiece { m } => {
                params.push(format!("m={m}"));
                "flat_piece"
            }
        };
        if !matches!(self.generator, Generator::FlatPiece { .. }) {
            if self.dim != 1 {
                params.push(format!("d={}", self.dim));
            }
            if self.mode == Mode::Continuous {
                params.push("mode=continuous".into());
            }
        }
        if params.is_empty() {
            write!(f, "{name}")
        } else {
            write!(f, "{name}:{}", params.join(","))
        }
    }
}

/// A finite prefix of a box sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxFamily {
    mode: Mode,
    dim: usize,
    entries: Vec<BoxEntry>,
    source: Option<GeneratorSpec>,
}

impl BoxFamily {
    /// A finite family given explicitly. It is treated as the whole sequence,
    /// so every height is certified.
    pub fn explicit(mode: Mode, entries: Vec<BoxEntry>) -> Result<Self, ConeError> {
        let dim = entries
            .first()
            .map(|e| e.corner.len())
            .ok_or_else(|| ConeError::InvalidFamily("family has no entries".into()))?;
        if dim == 0 {
            return Err(ConeError::InvalidFamily("dimension must be positive".into()));
        }
        for (k, e) in entries.iter().enumerate() {
            if e.corner.len() != dim || e.lengths.len() != dim {
                return Err(ConeError::InvalidFamily(format!("entry {} has wrong dimension", k + 1)));
            }
            for l in &e.lengths {
                let ok = match mode {
                    Mode::Discrete => l.is_integer() && *l >= Rational::one(),
                    Mode::Continuous => l.is_positive(),
                };
                if !ok {
                    return Err(ConeError::InvalidFamily(format!("entry {} has invalid length {l}", k + 1)));
                }
            }
            if mode == Mode::Discrete && e.corner.iter().any(|c| !c.is_integer()) {
                return Err(ConeError::InvalidFamily(format!("entry {} has a non-integral corner", k + 1)));
            }
        }
        Ok(Self {
            mode,
            dim,
            entries,
            source: None,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BoxEntry] {
        &self.entries
    }

    pub fn source(&self) -> Option<&GeneratorSpec> {
        self.source.as_ref()
    }

    /// The first `k` entries (the family restricted to a shorter prefix).
    pub fn truncated(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.entries.truncate(k);
        out
    }

    /// Smallest length on `axis` among entries beyond the prefix, when the
    /// family comes from a generator; `None` for a finite family.
    pub fn tail_min_length(&self, axis: usize) -> Result<Option<Rational>, ConeError> {
        match &self.source {
            None => Ok(None),
            Some(spec) if spec.lengths_nondecreasing() => {
                let next = spec.entry(self.entries.len() + 1)?;
                Ok(Some(next.lengths[axis]))
            }
            Some(_) => Ok(None),
        }
    }

    /// Largest height `λ` for which the prefix already contains every cone
    /// contributing to `Ω_axis(·, λ)`. Discrete: `l_{K+1} − 1`; continuous:
    /// any `λ < l_{K+1}` (returned as `l_{K+1}` with `strict = true`).
    pub fn coverage_bound(&self, axis: usize) -> Result<Coverage, ConeError> {
        Ok(match self.tail_min_length(axis)? {
            None => Coverage::Unbounded,
            Some(l) => match self.mode {
                Mode::Discrete => Coverage::UpTo(l - Rational::one()),
                Mode::Continuous => Coverage::Below(l),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    Unbounded,
    UpTo(Rational),
    Below(Rational),
}

impl Coverage {
    pub fn certifies(&self, lambda: Rational) -> bool {
        match self {
            Coverage::Unbounded => true,
            Coverage::UpTo(b) => lambda <= *b,
            Coverage::Below(b) => lambda < *b,
        }
    }
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coverage::Unbounded => write!(f, "unbounded"),
            Coverage::UpTo(b) => write!(f, "{b}"),
            Coverage::Below(b) => write!(f, "<{b}"),
        }
    }
}

/// First `k_max` entries of a named sequence.
pub fn generate_family(spec: &GeneratorSpec, k_max: usize) -> Result<BoxFamily, ConeError> {
    if k_max == 0 {
        return Err(ConeError::InvalidParameter("prefix length K must be >= 1".into()));
    }
    let entries = (1..=k_max).map(|k| spec.entry(k)).collect::<Result<Vec<_>, _>>()?;
    Ok(BoxFamily {
        mode: spec.mode,
        dim: spec.dim,
        entries,
        source: Some(spec.clone()),
    })
}

/// Convenience: parse a generator string and generate `k_max` entries.
pub fn family_from_str(text: &str, k_max: usize) -> Result<BoxFamily, ConeError> {
    generate_family(&GeneratorSpec::parse(text)?, k_max)
}

/// One piece of an orthant split: the normalized box, the original entry
/// it came from, and which axes were reflected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrthantPiece {
    pub entry: BoxEntry,
    pub source: usize,
    pub flips: Vec<bool>,
}

impl OrthantPiece {
    /// Maps a point of the normalized piece back to the original coordinates.
    /// Discrete reflection is `j ↦ −1 − j`, continuous is `t ↦ −t`.
    pub fn unflip(&self, mode: Mode, point: &[Rational]) -> Vec<Rational> {
        point
            .iter()
            .zip(&self.flips)
            .map(|(x, &f)| match (f, mode) {
                (false, _) => *x,
                (true, Mode::Discrete) => -Rational::one() - x,
                (true, Mode::Continuous) => -x,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitFamily {
    pub mode: Mode,
    pub pieces: Vec<OrthantPiece>,
}

impl SplitFamily {
    pub fn family(&self) -> BoxFamily {
        BoxFamily {
            mode: self.mode,
            dim: self.pieces.first().map_or(0, |p| p.entry.corner.len()),
            entries: self.pieces.iter().map(|p| p.entry.clone()).collect(),
            source: None,
        }
    }
}

/// Splits every box along the coordinate hyperplanes it straddles and
/// reflects negative pieces so all corners are nonnegative.
pub fn orthant_split(family: &BoxFamily) -> SplitFamily {
    let mode = family.mode;
    let mut pieces = Vec::new();
    for (idx, e) in family.entries.iter().enumerate() {
        // per axis: list of (lo, hi, flipped)
        let mut axis_parts: Vec<Vec<(Rational, Rational, bool)>> = Vec::with_capacity(family.dim);
        for (n, l) in e.corner.iter().zip(&e.lengths) {
            let lo = *n;
            let hi = n + l;
            let zero = Rational::zero();
            let mut parts = Vec::new();
            if hi <= zero {
                parts.push(reflect(lo, hi));
            } else if lo < zero {
                parts.push(reflect(lo, zero));
                parts.push((zero, hi, false));
            } else {
                parts.push((lo, hi, false));
            }
            axis_parts.push(parts);
        }
        let mut combos: Vec<Vec<(Rational, Rational, bool)>> = vec![Vec::new()];
        for parts in &axis_parts {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    parts.iter().map(move |p| {
                        let mut v = prefix.clone();
                        v.push(*p);
                        v
                    })
                })
                .collect();
        }
        for c in combos {
            pieces.push(OrthantPiece {
                entry: BoxEntry {
                    corner: c.iter().map(|p| p.0).collect(),
                    lengths: c.iter().map(|p| p.1 - p.0).collect(),
                },
                source: idx,
                flips: c.iter().map(|p| p.2).collect(),
            });
        }
    }
    SplitFamily { mode, pieces }
}

/// `[lo, hi)` with `hi ≤ 0` becomes `[-hi, -lo)`. In discrete mode this is
/// the lattice bijection `j ↦ −1 − j`; in continuous mode `t ↦ −t` up to a
/// null boundary.
fn reflect(lo: Rational, hi: Rational) -> (Rational, Rational, bool) {
    (-hi, -lo, true)
}

/// A cone cross-section: merged disjoint sorted closed intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeCrossSection {
    pub axis: usize,
    pub alpha: Rational,
    pub lambda: Rational,
    pub mode: Mode,
    /// Closed intervals; for discrete mode the endpoints are integers and
    /// the interval stands for the lattice points it contains.
    pub intervals: Vec<(Rational, Rational)>,
    /// Lattice-point count (discrete) or total length (continuous).
    pub size: Rational,
}

impl ConeCrossSection {
    pub fn contains(&self, x: Rational) -> bool {
        self.intervals.iter().any(|(a, b)| *a <= x && x <= *b)
    }

    /// The integers of a discrete cross-section in increasing order.
    pub fn lattice_points(&self) -> Vec<i64> {
        self.intervals
            .iter()
            .flat_map(|(a, b)| to_i64(a)..=to_i64(b))
            .collect()
    }

    pub fn sup(&self) -> Option<Rational> {
        self.intervals.last().map(|(_, b)| *b)
    }
}

/// `Ω_axis(α, λ)` over the whole prefix.
pub fn cross_section(family: &BoxFamily, axis: usize, alpha: Rational, lambda: Rational) -> ConeCrossSection {
    cross_section_prefix(family, axis, alpha, lambda, family.len())
}

/// `Ω_axis(α, λ)` restricted to entries `k ≤ prefix`.
pub fn cross_section_prefix(
    family: &BoxFamily,
    axis: usize,
    alpha: Rational,
    lambda: Rational,
    prefix: usize,
) -> ConeCrossSection {
    assert!(alpha.is_positive() && lambda.is_positive(), "α and λ must be positive");
    assert!(axis < family.dim, "axis out of range");
    let mut raw: Vec<(Rational, Rational)> = family.entries[..prefix.min(family.len())]
        .iter()
        .filter(|e| e.lengths[axis] <= lambda)
        .map(|e| {
            let n = e.corner[axis];
            let radius = alpha * (lambda - e.lengths[axis]);
            match family.mode {
                Mode::Discrete => {
                    let r = Rational::from_integer(radius.floor().to_integer());
                    (n - r, n + r)
                }
                Mode::Continuous => (n - radius, n + radius),
            }
        })
        .collect();
    raw.sort();
    let mut intervals: Vec<(Rational, Rational)> = Vec::new();
    for (a, b) in raw {
        if let Some(last) = intervals.last_mut() {
            let touches = match family.mode {
                Mode::Discrete => a <= last.1 + Rational::one(),
                Mode::Continuous => a <= last.1,
            };
            if touches {
                if b > last.1 {
                    last.1 = b;
                }
                continue;
            }
        }
        intervals.push((a, b));
    }
    let size = intervals
        .iter()
        .map(|(a, b)| match family.mode {
            Mode::Discrete => b - a + Rational::one(),
            Mode::Continuous => b - a,
        })
        .fold(Rational::zero(), |acc, s| acc + s);
    ConeCrossSection {
        axis,
        alpha,
        lambda,
        mode: family.mode,
        intervals,
        size,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    FailsEmpirically,
    BoundedLengths,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictThresholds {
    /// The last probed ratio must exceed this multiple of the first.
    pub ratio_growth: f64,
    /// Minimum fitted slope of `log size` against `log λ`.
    pub min_exponent: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            ratio_growth: 8.0,
            min_exponent: 1.2,
        }
    }
}

/// `{1/4, 1/2, 1, 2, 4}`
pub fn default_alpha_grid() -> Vec<Rational> {
    [(1, 4), (1, 2), (1, 1), (2, 1), (4, 1)]
        .iter()
        .map(|&(n, d)| Rational::new(n, d))
        .collect()
}

/// `start, start·ratio, ...` up to `max`, with `max` appended if missed.
pub fn geometric_grid(start: Rational, ratio: Rational, max: Rational) -> Vec<Rational> {
    assert!(start.is_positive() && ratio > Rational::one());
    let mut out = Vec::new();
    let mut v = start;
    while v <= max {
        out.push(v);
        v *= ratio;
    }
    if out.last().is_some_and(|l| *l < max) {
        out.push(max);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionRow {
    pub alpha: String,
    pub lambda: String,
    pub size: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeVerdict {
    pub verdict: Verdict,
    pub axis: usize,
    /// Least empirical slope bound over the probed apertures (Holds only).
    pub witness_a: Option<f64>,
    /// Aperture at which `witness_a` was attained, or the aperture reported.
    pub witness_alpha: Option<String>,
    /// Fitted slope of `log size` vs `log λ` (minimum over apertures for a
    /// failure, value at the witnessing aperture otherwise).
    pub growth_exponent: f64,
    pub witnesses: Vec<(f64, f64)>,
    pub alpha_grid: Vec<String>,
    pub lambda_grid: Vec<String>,
    pub coverage: String,
    pub prefix: usize,
    pub rows: Vec<CrossSectionRow>,
}

fn check_grid(grid: &[Rational], name: &'static str) -> Result<(), ConeError> {
    if grid.is_empty() {
        return Err(ConeError::EmptyGrid(name));
    }
    if !grid[0].is_positive() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConeError::BadGrid(name));
    }
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x` over points with `y > 0`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Minimum length on `axis` over entries with index in `range`.
fn min_length(family: &BoxFamily, axis: usize, from: usize) -> Option<Rational> {
    family.entries[from..].iter().map(|e| e.lengths[axis]).min()
}

/// The tail minimum of the lengths stalls: the minimum over the last half of
/// the prefix equals the minimum over the last quarter.
pub fn lengths_look_bounded(family: &BoxFamily, axis: usize) -> bool {
    let k = family.len();
    if k < 4 {
        return false;
    }
    min_length(family, axis, k / 2) == min_length(family, axis, k - k / 4)
}

/// Empirical decision of the cone condition on one axis.
pub fn condition_verdict(
    family: &BoxFamily,
    axis: usize,
    alpha_grid: &[Rational],
    lambda_grid: &[Rational],
    thresholds: VerdictThresholds,
) -> Result<ConeVerdict, ConeError> {
    check_grid(alpha_grid, "alpha")?;
    check_grid(lambda_grid, "lambda")?;
    if axis >= family.dim() {
        return Err(ConeError::InvalidParameter(format!("axis {} out of range", axis + 1)));
    }
    let coverage = family.coverage_bound(axis)?;
    let mut out = ConeVerdict {
        verdict: Verdict::Inconclusive,
        axis: axis + 1,
        witness_a: None,
        witness_alpha: None,
        growth_exponent: 0.0,
        witnesses: Vec::new(),
        alpha_grid: alpha_grid.iter().map(|a| a.to_string()).collect(),
        lambda_grid: lambda_grid.iter().map(|l| l.to_string()).collect(),
        coverage: coverage.to_string(),
        prefix: family.len(),
        rows: Vec::new(),
    };
    if lengths_look_bounded(family, axis) {
        out.verdict = Verdict::BoundedLengths;
        let bound = min_length(family, axis, family.len() / 2).unwrap_or_default();
        out.witnesses = vec![(bound.to_f64().unwrap_or(f64::NAN), f64::INFINITY)];
        return Ok(out);
    }
    let lambda_max = *lambda_grid.last().expect("checked non-empty");
    if !coverage.certifies(lambda_max) {
        return Err(ConeError::InsufficientPrefix {
            coverage: coverage.to_string(),
            requested: lambda_max.to_string(),
        });
    }

    struct PerAlpha {
        alpha: Rational,
        ratios: Vec<(f64, f64)>,
        exponent: f64,
        failing: bool,
        max_ratio: f64,
    }
    let mut per_alpha = Vec::new();
    for &alpha in alpha_grid {
        let mut ratios = Vec::new();
        let mut sizes = Vec::new();
        for &lambda in lambda_grid {
            let cs = cross_section(family, axis, alpha, lambda);
            let lf = lambda.to_f64().unwrap_or(f64::NAN);
            let sf = cs.size.to_f64().unwrap_or(f64::NAN);
            let ratio = sf / lf;
            out.rows.push(CrossSectionRow {
                alpha: alpha.to_string(),
                lambda: lambda.to_string(),
                size: cs.size.to_string(),
                ratio,
            });
            ratios.push((lf, ratio));
            sizes.push((lf, sf));
        }
        let exponent = log_log_slope(&sizes);
        let first = ratios[0].1;
        let last = ratios[ratios.len() - 1].1;
        let failing = ratios.len() >= 2 && last > thresholds.ratio_growth * first && exponent >= thresholds.min_exponent;
        let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
        per_alpha.push(PerAlpha {
            alpha,
            ratios,
            exponent,
            failing,
            max_ratio,
        });
    }

    let n_failing = per_alpha.iter().filter(|p| p.failing).count();
    if n_failing == per_alpha.len() {
        let worst = per_alpha
            .iter()
            .min_by(|a, b| a.exponent.total_cmp(&b.exponent))
            .expect("non-empty");
        out.verdict = Verdict::FailsEmpirically;
        out.growth_exponent = worst.exponent;
        out.witness_alpha = Some(worst.alpha.to_string());
        out.witnesses = worst.ratios.clone();
    } else {
        let best = per_alpha
            .iter()
            .filter(|p| !p.failing)
            .min_by(|a, b| a.max_ratio.total_cmp(&b.max_ratio))
            .expect("at least one non-failing aperture");
        out.verdict = if n_failing == 0 { Verdict::Holds } else { Verdict::Inconclusive };
        out.witness_a = Some(best.max_ratio);
        out.witness_alpha = Some(best.alpha.to_string());
        out.growth_exponent = best.exponent;
        out.witnesses = best.ratios.clone();
    }
    Ok(out)
}

/// Parses `p/q` or an integer into a rational.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: i128 = n.trim().parse().ok()?;
            let d: i128 = d.trim().parse().ok()?;
            (d != 0).then(|| Rational::new(n, d))
        }
        None => {
            if let Ok(n) = s.parse::<i128>() {
                return Some(Rational::from_integer(n));
            }
            // decimal literal, e.g. 0.25
            let (int, frac) = s.split_once('.')?;
            let scale = 10i128.checked_pow(frac.len() as u32)?;
            let neg = int.starts_with('-');
            let ip: i128 = if int.is_empty() || int == "-" { 0 } else { int.parse().ok()? };
            let fp: i128 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
            let num = ip.abs() * scale + fp;
            Some(Rational::new(if neg { -num } else { num }, scale))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i128) -> Rational {
        Rational::from_integer(n)
    }

    fn pairs(f: &BoxFamily) -> Vec<(i64, i64)> {
        f.entries().iter().map(|e| (e.int_corner()[0], e.int_lengths()[0])).collect()
    }

    #[test]
    fn named_generators() {
        assert_eq!(pairs(&family_from_str("linear:r=2", 3).unwrap()), vec![(1, 2), (2, 4), (3, 6)]);
        assert_eq!(pairs(&family_from_str("sqrt", 4).unwrap()), vec![(1, 1), (2, 2), (3, 2), (4, 2)]);
        assert_eq!(pairs(&family_from_str("squares_unit", 3).unwrap()), vec![(1, 1), (4, 1), (9, 1)]);
        let fp = family_from_str("flat_piece:m=2", 3).unwrap();
        assert_eq!(fp.dim(), 3);
        assert_eq!(fp.mode(), Mode::Continuous);
        assert_eq!(fp.entries()[2].corner, vec![q(2), q(0), q(0)]);
        assert_eq!(fp.entries()[2].lengths, vec![q(1), q(3), q(3)]);
    }

    #[test]
    fn generator_errors() {
        assert!(matches!(family_from_str("bogus", 3), Err(ConeError::UnknownGenerator(_))));
        assert!(matches!(family_from_str("linear:r=0", 3), Err(ConeError::InvalidParameter(_))));
        assert!(matches!(family_from_str("linear", 3), Err(ConeError::InvalidParameter(_))));
        assert!(matches!(family_from_str("unit", 0), Err(ConeError::InvalidParameter(_))));
        assert!(matches!(family_from_str("powers:base=4", 80), Err(ConeError::InvalidParameter(_))));
    }

    #[test]
    fn generator_spec_display_round_trips() {
        for s in ["linear:r=3", "sqrt", "unit:d=2", "powers:base=4", "flat_piece:m=1", "squares_unit:mode=continuous"] {
            let spec = GeneratorSpec::parse(s).unwrap();
            assert_eq!(GeneratorSpec::parse(&spec.to_string()).unwrap(), spec);
        }
    }

    #[test]
    fn orthant_split_one_dimensional() {
        let f = BoxFamily::explicit(Mode::Discrete, vec![BoxEntry::from_ints(&[-2], &[5])]).unwrap();
        let s = orthant_split(&f);
        assert_eq!(s.pieces.len(), 2);
        assert_eq!(s.pieces[0].entry, BoxEntry::from_ints(&[0], &[2]));
        assert_eq!(s.pieces[0].flips, vec![true]);
        assert_eq!(s.pieces[1].entry, BoxEntry::from_ints(&[0], &[3]));
        assert_eq!(s.pieces[1].flips, vec![false]);
    }

    #[test]
    fn orthant_split_leaves_nonnegative_family() {
        let f = family_from_str("linear:r=2,d=2", 5).unwrap();
        let s = orthant_split(&f);
        assert_eq!(s.family().entries(), f.entries());
        assert!(s.pieces.iter().all(|p| p.flips.iter().all(|x| !x)));
    }

    #[test]
    fn orthant_split_two_dimensional_partition() {
        let f = BoxFamily::explicit(Mode::Discrete, vec![BoxEntry::from_ints(&[-1, -1], &[3, 3])]).unwrap();
        let s = orthant_split(&f);
        assert_eq!(s.pieces.len(), 4);
        let mut pts = Vec::new();
        for p in &s.pieces {
            let c = p.entry.int_corner();
            let l = p.entry.int_lengths();
            assert!(c.iter().all(|x| *x >= 0));
            for a in c[0]..c[0] + l[0] {
                for b in c[1]..c[1] + l[1] {
                    let back = p.unflip(Mode::Discrete, &[q(a as i128), q(b as i128)]);
                    pts.push((back[0], back[1]));
                }
            }
        }
        pts.sort();
        let mut expected = Vec::new();
        for a in -1..2 {
            for b in -1..2 {
                expected.push((q(a), q(b)));
            }
        }
        assert_eq!(pts, expected);
    }

    #[test]
    fn cross_section_examples() {
        let single = BoxFamily::explicit(Mode::Discrete, vec![BoxEntry::from_ints(&[1], &[1])]).unwrap();
        let cs = cross_section(&single, 0, q(1), q(3));
        assert_eq!(cs.intervals, vec![(q(-1), q(3))]);
        assert_eq!(cs.size, q(5));

        let diag = family_from_str("diagonal", 100).unwrap();
        let cs = cross_section(&diag, 0, q(1), q(10));
        assert_eq!(cs.intervals, vec![(q(-8), q(10))]);
        assert_eq!(cs.size, q(19));

        let pw = family_from_str("powers:base=4", 5).unwrap();
        let cs = cross_section(&pw, 0, q(1), q(2));
        assert_eq!(cs.intervals.len(), 5);
        assert_eq!(cs.size, q(15));

        let empty = cross_section(&family_from_str("linear:r=5", 3).unwrap(), 0, q(1), q(2));
        assert_eq!(empty.size, q(0));
        assert!(empty.intervals.is_empty());
    }

    #[test]
    fn continuous_cross_section_length() {
        let f = family_from_str("flat_piece:m=1", 5).unwrap();
        // intervals [k-1-(λ-1), k-1+(λ-1)] for λ = 2: [k-2, k], k = 1..5 → [-1, 5]
        let cs = cross_section(&f, 0, q(1), q(2));
        assert_eq!(cs.intervals, vec![(q(-1), q(5))]);
        assert_eq!(cs.size, q(6));
        // at λ = 1 every cone degenerates to a point of length zero
        assert_eq!(cross_section(&f, 0, q(1), q(1)).size, q(0));
    }

    #[test]
    fn fractional_radius_rounds_to_lattice() {
        let f = BoxFamily::explicit(Mode::Discrete, vec![BoxEntry::from_ints(&[0], &[1])]).unwrap();
        let cs = cross_section(&f, 0, Rational::new(1, 2), q(4));
        // radius 3/2 → {-1, 0, 1}
        assert_eq!(cs.size, q(3));
    }

    #[test]
    fn verdict_holds_for_linear() {
        let f = family_from_str("linear:r=2", 2000).unwrap();
        let grid = geometric_grid(q(10), q(2), q(500));
        let v = condition_verdict(&f, 0, &[q(1)], &grid, VerdictThresholds::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Holds);
        assert!(v.witness_a.unwrap() <= 4.0);
        assert_eq!(v.rows[0].size, "17");
        assert!((v.rows[0].ratio - 1.7).abs() < 1e-12);
    }

    #[test]
    fn verdict_bounded_lengths() {
        let f = family_from_str("unit", 1000).unwrap();
        let v = condition_verdict(&f, 0, &default_alpha_grid(), &[q(1), q(2)], VerdictThresholds::default()).unwrap();
        assert_eq!(v.verdict, Verdict::BoundedLengths);
    }

    #[test]
    fn verdict_rejects_uncertified_heights() {
        let f = family_from_str("sqrt", 100).unwrap();
        // l_101 = 11, so heights up to 10 are certified
        assert!(condition_verdict(&f, 0, &[q(1)], &[q(5), q(10)], VerdictThresholds::default()).is_ok());
        let err = condition_verdict(&f, 0, &[q(1)], &[q(5), q(11)], VerdictThresholds::default()).unwrap_err();
        assert!(matches!(err, ConeError::InsufficientPrefix { .. }));
    }

    #[test]
    fn grid_validation() {
        let f = family_from_str("linear:r=1", 10).unwrap();
        assert!(matches!(
            condition_verdict(&f, 0, &[], &[q(1)], VerdictThresholds::default()),
            Err(ConeError::EmptyGrid("alpha"))
        ));
        assert!(matches!(
            condition_verdict(&f, 0, &[q(1)], &[q(2), q(2)], VerdictThresholds::default()),
            Err(ConeError::BadGrid("lambda"))
        ));
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("1/4"), Some(Rational::new(1, 4)));
        assert_eq!(parse_rational("3"), Some(q(3)));
        assert_eq!(parse_rational("0.25"), Some(Rational::new(1, 4)));
        assert_eq!(parse_rational("-1.5"), Some(Rational::new(-3, 2)));
        assert_eq!(parse_rational("1/0"), None);
    }
}
