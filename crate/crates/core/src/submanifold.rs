//! Averages over dilates of flat pieces `U = {u + V λ : λ ∈ (0,1)^m}` of a
//! submanifold, their reduction to box averages of the re-indexed action
//! `(s_0, s) ↦ U_{s_0 u + V s}`, and the genericity-failure experiment.

use std::cmp::Ordering;
use std::f64::consts::TAU;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::quadrature::{midpoint_mean_refined, MidpointRule};
use crate::averaging::{exact_from_f64, AverageError, ContinuousAverage, ContinuousMethod};
use crate::cone::{family_from_str, Rational};
use crate::exact::ExactScalar;
use crate::slicing::{preimage_measure, AffineCoord, SliceError};
use crate::sweepout::{flow_union, sweepout_plan, to_exact, PlanSummary, SweepoutError};
use crate::systems::{
    rational_rank, standard_suspension, Observable, SystemError, SystemKind, TorusSet, TorusSystem,
};
use crate::towers::{suspension_tower, verify_tower, Tower, TowerError, TowerVerification};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubmanifoldError {
    #[error("u and the directions are linearly dependent (rank {rank}, need {needed})")]
    DependentDirections { rank: usize, needed: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the piece needs 1 <= m < d (m = {m}, d = {d})")]
    BadShape { m: usize, d: usize },
    #[error("det(V^T V) = {0} has no exact square root in the supported field")]
    UnsupportedGram(String),
    #[error("manifold volume {vol} is below the piece's gram factor {gram}")]
    VolumeTooSmall { vol: String, gram: String },
    #[error("dilation must be positive")]
    NonPositiveDilation,
    #[error("the system is not a flow")]
    NotFlow,
    #[error("the experiment needs d = m + 1 (got d = {d}, m = {m})")]
    UnsupportedExperiment { d: usize, m: usize },
    #[error("the tower does not fit: {0}")]
    TowerDoesNotFit(String),
    #[error("no p <= {p_max} gives a set of measure <= {epsilon}")]
    SetTooLarge { p_max: u64, epsilon: f64 },
    #[error(transparent)]
    Average(#[from] AverageError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Sweepout(#[from] SweepoutError),
}

impl From<TowerError> for SubmanifoldError {
    fn from(e: TowerError) -> Self {
        SubmanifoldError::TowerDoesNotFit(e.to_string())
    }
}

#[allow(clippy::needless_range_loop)]
fn det(mut a: Vec<Vec<BigRational>>) -> BigRational {
    let n = a.len();
    let mut det = BigRational::one();
    for col in 0..n {
        let Some(piv) = (col..n).find(|&r| !a[r][col].is_zero()) else {
            return BigRational::zero();
        };
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col].clone();
        for r in col + 1..n {
            let f = &a[r][col] / &a[col][col];
            for c in col..n {
                let v = &f * &a[col][c];
                a[r][c] -= v;
            }
        }
    }
    det
}

/// Inverse of a square rational matrix (row-major).
#[allow(clippy::needless_range_loop)]
fn inverse(a: &[Vec<BigRational>]) -> Option<Vec<Vec<BigRational>>> {
    let n = a.len();
    let mut m: Vec<Vec<BigRational>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(piv, col);
        let p = m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v / &p;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for c in 0..2 * n {
                    let v = &f * &m[col][c];
                    m[r][c] -= v;
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for last in k - 1..n {
        for mut s in subsets(last, k - 1) {
            s.push(last);
            out.push(s);
        }
    }
    out
}

fn exact_pow(x: &ExactScalar, e: usize) -> ExactScalar {
    (0..e).fold(ExactScalar::one(), |acc, _| &acc * x)
}

/// An open piece `u + span(V) ∩ {λ ∈ (0,1)^m}` of an `m`-dimensional
/// submanifold of `R^d`, with the volume of the ambient manifold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatPiece {
    u: Vec<BigRational>,
    directions: Vec<Vec<BigRational>>,
    gram: ExactScalar,
    vol: ExactScalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceSummary {
    pub u: Vec<String>,
    pub directions: Vec<Vec<String>>,
    pub gram_factor: ExactScalar,
    pub manifold_volume: ExactScalar,
}

impl FlatPiece {
    /// Validates `u, v_1, …, v_m` (independent) and computes `√det(VᵀV)`.
    pub fn new(
        u: Vec<BigRational>,
        directions: Vec<Vec<BigRational>>,
        vol: Option<ExactScalar>,
    ) -> Result<Self, SubmanifoldError> {
        let d = u.len();
        let m = directions.len();
        if m == 0 || m >= d {
            return Err(SubmanifoldError::BadShape { m, d });
        }
        for v in &directions {
            if v.len() != d {
                return Err(SubmanifoldError::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        let mut rows = vec![u.clone()];
        rows.extend(directions.iter().cloned());
        let rank = rational_rank(rows);
        if rank < m + 1 {
            return Err(SubmanifoldError::DependentDirections { rank, needed: m + 1 });
        }
        let g = gram_matrix(&directions);
        let gd = det(g);
        let gram = ExactScalar::sqrt_rational(&gd).ok_or_else(|| SubmanifoldError::UnsupportedGram(gd.to_string()))?;
        let vol = vol.unwrap_or_else(|| gram.clone());
        if vol < gram {
            return Err(SubmanifoldError::VolumeTooSmall {
                vol: vol.to_string(),
                gram: gram.to_string(),
            });
        }
        Ok(Self { u, directions, gram, vol })
    }

    /// Parses rational strings such as `"1/2"`.
    pub fn parse(u: &[String], directions: &[Vec<String>], vol: Option<&str>) -> Result<Self, String> {
        let q = |s: &String| s.trim().parse::<BigRational>().map_err(|e| format!("bad rational {s:?}: {e}"));
        let u = u.iter().map(q).collect::<Result<Vec<_>, _>>()?;
        let v = directions
            .iter()
            .map(|col| col.iter().map(q).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let vol = vol.map(ExactScalar::parse).transpose().map_err(|e| e.to_string())?;
        Self::new(u, v, vol).map_err(|e| e.to_string())
    }

    pub fn ambient_dim(&self) -> usize {
        self.u.len()
    }

    pub fn m(&self) -> usize {
        self.directions.len()
    }

    pub fn u(&self) -> &[BigRational] {
        &self.u
    }

    pub fn directions(&self) -> &[Vec<BigRational>] {
        &self.directions
    }

    /// `√det(VᵀV)`.
    pub fn gram_factor(&self) -> &ExactScalar {
        &self.gram
    }

    pub fn manifold_volume(&self) -> &ExactScalar {
        &self.vol
    }

    /// Columns `u, v_1, …, v_m` of the re-indexing matrix.
    pub fn frame(&self) -> Vec<Vec<BigRational>> {
        let mut cols = vec![self.u.clone()];
        cols.extend(self.directions.iter().cloned());
        cols
    }

    pub fn summary(&self) -> PieceSummary {
        PieceSummary {
            u: self.u.iter().map(|q| q.to_string()).collect(),
            directions: self
                .directions
                .iter()
                .map(|c| c.iter().map(|q| q.to_string()).collect())
                .collect(),
            gram_factor: self.gram.clone(),
            manifold_volume: self.vol.clone(),
        }
    }
}

fn gram_matrix(cols: &[Vec<BigRational>]) -> Vec<Vec<BigRational>> {
    cols.iter()
        .map(|a| {
            cols.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect()
}

fn check(sys: &TorusSystem, piece: &FlatPiece, x_len: usize, t: &ExactScalar) -> Result<(), SubmanifoldError> {
    if sys.kind() != SystemKind::Flow {
        return Err(SubmanifoldError::NotFlow);
    }
    if sys.action_dim() != piece.ambient_dim() {
        return Err(SubmanifoldError::DimensionMismatch {
            expected: sys.action_dim(),
            got: piece.ambient_dim(),
        });
    }
    if x_len != sys.torus_dim() {
        return Err(SubmanifoldError::DimensionMismatch {
            expected: sys.torus_dim(),
            got: x_len,
        });
    }
    if t.sign() != Ordering::Greater {
        return Err(SubmanifoldError::NonPositiveDilation);
    }
    Ok(())
}

/// `Θ w` for a rational parameter vector.
fn apply(sys: &TorusSystem, w: &[BigRational]) -> Vec<ExactScalar> {
    (0..sys.torus_dim())
        .map(|c| w.iter().zip(sys.translations()).map(|(wj, col)| col[c].scale(wj)).sum())
        .collect()
}

/// `λ ∈ (0,1)^m ↦ x + t Θ (u + V λ)`.
fn flat_coords(sys: &TorusSystem, piece: &FlatPiece, x: &[ExactScalar], t: &ExactScalar) -> Vec<AffineCoord> {
    let tu = apply(sys, &piece.u);
    let tv: Vec<Vec<ExactScalar>> = piece.directions.iter().map(|v| apply(sys, v)).collect();
    (0..sys.torus_dim())
        .map(|c| AffineCoord {
            offset: &x[c] + &(t * &tu[c]),
            slope: tv.iter().map(|col| t * &col[c]).collect(),
        })
        .collect()
}

fn to_f64s(x: &[ExactScalar]) -> Vec<f64> {
    x.iter().map(ExactScalar::to_f64).collect()
}

/// `∫_{(0,1)^m} f(U_{t(u + Vλ)} x) dλ`, the normalized average over `tU`.
pub fn dilated_flat_average(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[ExactScalar],
    piece: &FlatPiece,
    t: &ExactScalar,
    method: ContinuousMethod,
) -> Result<ContinuousAverage, SubmanifoldError> {
    check(sys, piece, x.len(), t)?;
    let m = piece.m();
    match method {
        ContinuousMethod::ExactIndicator => {
            let Observable::Indicator(set) = obs else {
                return Err(AverageError::NonIndicator.into());
            };
            let coords = flat_coords(sys, piece, x, t);
            let v = preimage_measure(&coords, set.set(), &vec![ExactScalar::zero(); m], &vec![ExactScalar::one(); m])?;
            Ok(ContinuousAverage {
                value: Complex64::new(v.to_f64(), 0.0),
                exact: Some(v),
                quadrature: None,
            })
        }
        ContinuousMethod::TensorMidpoint(mut rule) => {
            if obs.is_indicator() {
                rule.extrapolate = false;
            }
            let xf = to_f64s(x);
            let tf = t.to_f64();
            let u: Vec<f64> = piece.u.iter().map(q_f64).collect();
            let v: Vec<Vec<f64>> = piece.directions.iter().map(|c| c.iter().map(q_f64).collect()).collect();
            let f = |lam: &[f64]| {
                let s: Vec<f64> = (0..u.len())
                    .map(|i| tf * (u[i] + lam.iter().zip(&v).map(|(l, col)| l * col[i]).sum::<f64>()))
                    .collect();
                obs.eval(&sys.act_real(&xf, &s).expect("dimensions checked"))
            };
            let q = quad(f, m, 1.0, rule);
            Ok(ContinuousAverage {
                value: q.value,
                exact: None,
                quadrature: Some(q),
            })
        }
    }
}

fn q_f64(q: &BigRational) -> f64 {
    ExactScalar::from_rational(q.clone()).to_f64()
}

fn quad<F>(f: F, m: usize, side: f64, rule: MidpointRule) -> crate::averaging::quadrature::QuadratureReport
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    midpoint_mean_refined(f, &vec![0.0; m], &vec![side; m], rule)
}

/// The same average as a box average of the re-indexed action: first
/// coordinate `t`, box `(0,t)^m`, divided by `t^m`.
pub fn dilated_box_average(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[ExactScalar],
    piece: &FlatPiece,
    t: &ExactScalar,
    method: ContinuousMethod,
) -> Result<ContinuousAverage, SubmanifoldError> {
    check(sys, piece, x.len(), t)?;
    let m = piece.m();
    let re = sys.reparametrized(&piece.frame())?;
    let cols = re.translations();
    let start: Vec<ExactScalar> = (0..re.torus_dim()).map(|c| &x[c] + &(t * &cols[0][c])).collect();
    match method {
        ContinuousMethod::ExactIndicator => {
            let Observable::Indicator(set) = obs else {
                return Err(AverageError::NonIndicator.into());
            };
            let coords: Vec<AffineCoord> = (0..re.torus_dim())
                .map(|c| AffineCoord {
                    offset: start[c].clone(),
                    slope: cols[1..].iter().map(|col| col[c].clone()).collect(),
                })
                .collect();
            let meas = preimage_measure(&coords, set.set(), &vec![ExactScalar::zero(); m], &vec![t.clone(); m])?;
            let v = meas.checked_div(&exact_pow(t, m)).expect("t > 0");
            Ok(ContinuousAverage {
                value: Complex64::new(v.to_f64(), 0.0),
                exact: Some(v),
                quadrature: None,
            })
        }
        ContinuousMethod::TensorMidpoint(mut rule) => {
            if obs.is_indicator() {
                rule.extrapolate = false;
            }
            let sf = to_f64s(&start);
            let slopes: Vec<Vec<f64>> = cols[1..].iter().map(|c| to_f64s(c)).collect();
            let f = |mu: &[f64]| {
                let p: Vec<f64> = (0..sf.len())
                    .map(|c| sf[c] + mu.iter().zip(&slopes).map(|(a, col)| a * col[c]).sum::<f64>())
                    .collect();
                obs.eval(&p)
            };
            let q = quad(f, m, t.to_f64(), rule);
            Ok(ContinuousAverage {
                value: q.value,
                exact: None,
                quadrature: Some(q),
            })
        }
    }
}

/// Closed form of the flat average of the character `ξ`:
/// `e(ξ·(x + tΘu)) ∏_j (e(t c_j) − 1)/(2πi t c_j)` with `c_j = ξ·Θv_j`.
pub fn character_flat_closed_form(
    sys: &TorusSystem,
    freq: &[i64],
    x: &[ExactScalar],
    piece: &FlatPiece,
    t: &ExactScalar,
) -> Result<Complex64, SubmanifoldError> {
    check(sys, piece, x.len(), t)?;
    let dot = |v: &[ExactScalar]| -> f64 { freq.iter().zip(v).map(|(&k, c)| k as f64 * c.to_f64()).sum() };
    let tf = t.to_f64();
    let xu = dot(x) + tf * dot(&apply(sys, &piece.u));
    let mut z = Complex64::from_polar(1.0, TAU * (xu - xu.floor()));
    for v in &piece.directions {
        let c = dot(&apply(sys, v)) * tf;
        if c != 0.0 {
            let w = Complex64::new(0.0, TAU * c);
            z *= (w.exp() - 1.0) / w;
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub t: ExactScalar,
    pub flat: ContinuousAverage,
    pub boxed: ContinuousAverage,
    pub difference: f64,
    /// Exact path: both sides are identical field elements.
    pub exact_equal: Option<bool>,
    pub tolerance: f64,
    pub agrees: bool,
}

/// Both sides of the change of variables `λ ↦ tλ`.
pub fn reduction_check(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[ExactScalar],
    piece: &FlatPiece,
    t: &ExactScalar,
    method: ContinuousMethod,
) -> Result<ReductionReport, SubmanifoldError> {
    let flat = dilated_flat_average(sys, obs, x, piece, t, method)?;
    let boxed = dilated_box_average(sys, obs, x, piece, t, method)?;
    let difference = (flat.value - boxed.value).norm();
    let exact_equal = match (&flat.exact, &boxed.exact) {
        (Some(a), Some(b)) => Some(a == b),
        _ => None,
    };
    let tolerance = match (&flat.quadrature, &boxed.quadrature) {
        (Some(a), Some(b)) => a.error_estimate + b.error_estimate + 1e-12,
        _ => 0.0,
    };
    let agrees = exact_equal.unwrap_or(difference <= tolerance);
    Ok(ReductionReport {
        t: t.clone(),
        flat,
        boxed,
        difference,
        exact_equal,
        tolerance,
        agrees,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub t: ExactScalar,
    pub det_gram: String,
    /// Sum of the squared `m × m` minors of `V`.
    pub minor_square_sum: String,
    /// Surface measure of `tU` from the minors.
    pub surface_measure: ExactScalar,
    /// `t^m √det(VᵀV)`.
    pub expected: ExactScalar,
    pub holds: bool,
}

/// Surface measure of `tU` against `t^m √det(VᵀV)`, both exact.
pub fn jacobian_check(piece: &FlatPiece, t: &ExactScalar) -> Result<JacobianReport, SubmanifoldError> {
    if t.sign() != Ordering::Greater {
        return Err(SubmanifoldError::NonPositiveDilation);
    }
    let d = piece.ambient_dim();
    let m = piece.m();
    let gd = det(gram_matrix(&piece.directions));
    let sum: BigRational = subsets(d, m)
        .into_iter()
        .map(|rows| {
            let minor: Vec<Vec<BigRational>> = rows
                .iter()
                .map(|&r| piece.directions.iter().map(|v| v[r].clone()).collect())
                .collect();
            let x = det(minor);
            &x * &x
        })
        .sum();
    let root = ExactScalar::sqrt_rational(&sum).ok_or_else(|| SubmanifoldError::UnsupportedGram(sum.to_string()))?;
    let tm = exact_pow(t, m);
    let surface = &tm * &root;
    let expected = &tm * &piece.gram;
    Ok(JacobianReport {
        t: t.clone(),
        det_gram: gd.to_string(),
        minor_square_sum: sum.to_string(),
        holds: surface == expected && sum == gd,
        surface_measure: surface,
        expected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub flat_average: ExactScalar,
    pub gram_factor: ExactScalar,
    pub manifold_volume: ExactScalar,
    /// Normalized average over `tM`, counting the part of `M` outside the
    /// piece as zero.
    pub manifold_average: ExactScalar,
    /// `(√det(VᵀV) / vol_m(M)) · flat average`.
    pub lower_bound: ExactScalar,
    pub holds: bool,
}

/// The manifold average dominates the weighted flat-piece average.
pub fn lower_bound_check(
    sys: &TorusSystem,
    set: &TorusSet,
    x: &[ExactScalar],
    piece: &FlatPiece,
    t: &ExactScalar,
) -> Result<LowerBoundReport, SubmanifoldError> {
    let obs = Observable::indicator(set.clone());
    let flat = dilated_flat_average(sys, &obs, x, piece, t, ContinuousMethod::ExactIndicator)?
        .exact
        .expect("exact path");
    let weight = piece.gram.checked_div(&piece.vol).expect("positive volume");
    // ∫_{tM} χ ≥ ∫_{tU} χ = t^m √det(VᵀV) · flat
    let on_piece = &piece.gram * &flat;
    let manifold_average = on_piece.checked_div(&piece.vol).expect("positive volume");
    let lower_bound = &weight * &flat;
    Ok(LowerBoundReport {
        holds: manifold_average >= lower_bound,
        flat_average: flat,
        gram_factor: piece.gram.clone(),
        manifold_volume: piece.vol.clone(),
        manifold_average,
        lower_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericityConfig {
    pub epsilon: f64,
    pub p_start: u64,
    pub p_max: u64,
    /// Heights tried for the plan.
    pub lambda_max: i64,
    pub samples: usize,
    pub seed: u64,
    pub target: f64,
    pub tolerance: f64,
    /// Largest probed `k` (`t ∈ [k−1, k)`); defaults to `K_p`.
    pub t_max: Option<usize>,
    pub margin: f64,
    pub bisection_steps: usize,
}

impl Default for GenericityConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            p_start: 1,
            p_max: 64,
            lambda_max: 16,
            samples: 32,
            seed: 1,
            target: 0.97,
            tolerance: 0.02,
            t_max: None,
            margin: 0.0,
            bisection_steps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub sample: usize,
    pub t: ExactScalar,
    pub average: ExactScalar,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBest {
    pub sample: usize,
    pub point: Vec<ExactScalar>,
    pub t: ExactScalar,
    pub average: ExactScalar,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericityReport {
    pub piece: PieceSummary,
    pub p: u64,
    pub plan: PlanSummary,
    pub gamma: ExactScalar,
    pub reindexed_matches_canonical: bool,
    pub system_ergodic: bool,
    pub system_aperiodic: bool,
    pub tower: TowerVerification,
    pub set: TorusSet,
    pub set_measure: ExactScalar,
    pub set_measure_value: f64,
    pub threshold: f64,
    pub rows: Vec<ScanRow>,
    pub best: Vec<SampleBest>,
    /// Samples with some probed `t` at or above the threshold.
    pub hits: usize,
    pub best_average: ExactScalar,
    /// `(√det(VᵀV) / vol_m(M)) ·` best flat average.
    pub lower_bound: ExactScalar,
    pub gap: f64,
    pub contradiction: bool,
    pub no_oscillation_found: bool,
}

/// Sweepout set `E` for the family `[k−1,k) × [0,k)^m` of the re-indexed
/// action, built on a canonical suspension, and a scan of flat averages of
/// `χ_E` at dilations `t ∈ [k−1, k)`.
pub fn genericity_failure_experiment(
    piece: &FlatPiece,
    cfg: &GenericityConfig,
) -> Result<GenericityReport, SubmanifoldError> {
    let m = piece.m();
    let d = piece.ambient_dim();
    if d != m + 1 {
        return Err(SubmanifoldError::UnsupportedExperiment { d, m });
    }
    let grid: Vec<Rational> = (1..=cfg.lambda_max.max(2) as i128).map(Rational::from_integer).collect();
    let mut p = cfg.p_start.max(1);
    let (plan, gamma, tower, canonical, set) = loop {
        if p > cfg.p_max {
            return Err(SubmanifoldError::SetTooLarge {
                p_max: cfg.p_max,
                epsilon: cfg.epsilon,
            });
        }
        // λ = 1 would leave no room for the unit first side
        let family = family_from_str(&format!("flat_piece:m={m}"), (16 * p + 64) as usize)
            .map_err(SweepoutError::from)?;
        let lam_grid: Vec<Rational> = grid.iter().copied().filter(|l| *l >= Rational::from_integer(2)).collect();
        let plan = sweepout_plan(&family, 0, p, false, &lam_grid)?;
        let gamma = crate::sweepout::fitting_gamma(&plan);
        let canonical = standard_suspension(m + 1, gamma.clone())?;
        let sides: Vec<ExactScalar> = plan.tower_heights().iter().map(to_exact).collect();
        let tower = suspension_tower(&canonical, &sides)?;
        let sets = crate::sweepout::build_counterexample_set(&plan, &Tower::Suspension(tower.clone()))?;
        if sets.h_measure.to_f64() <= cfg.epsilon {
            break (plan, gamma, tower, canonical, sets.h);
        }
        p += 1;
    };
    // original flow: Θ_orig = Θ_canon [u|V]^{-1}, so that re-indexing by
    // [u|V] gives back the canonical suspension
    let frame = piece.frame();
    let original = original_flow(&canonical, &frame)?;
    let reindexed = original.reparametrized(&frame)?;
    let matches = reindexed.translations() == canonical.translations();

    let union = flow_union(&plan, &tower)?.set;
    let points = sample_in(&union, cfg.samples, cfg.seed);
    let obs = Observable::indicator(set.clone());
    let k_max = cfg.t_max.unwrap_or(plan.k_p).max(1);
    let threshold = cfg.target - cfg.tolerance;
    let scan = |x: &Vec<ExactScalar>, t: &ExactScalar| -> Result<ExactScalar, SubmanifoldError> {
        Ok(dilated_flat_average(&original, &obs, x, piece, t, ContinuousMethod::ExactIndicator)?
            .exact
            .expect("exact path"))
    };
    let per_sample: Vec<(Vec<ScanRow>, SampleBest)> = points
        .par_iter()
        .enumerate()
        .map(|(s, x)| {
            let mut rows = Vec::with_capacity(k_max);
            let mut best: Option<(ExactScalar, ExactScalar)> = None;
            for k in 1..=k_max {
                let mut t = &ExactScalar::from_integer(k as i64) - &ExactScalar::from_ratio(1, 2);
                let mut a = scan(x, &t)?;
                rows.push(ScanRow {
                    sample: s,
                    t: t.clone(),
                    value: a.to_f64(),
                    average: a.clone(),
                });
                // near misses are refined inside [k−1, k)
                let av = a.to_f64();
                if av < threshold && av >= cfg.target - 0.05 {
                    let mut h = ExactScalar::from_ratio(1, 4);
                    for _ in 0..cfg.bisection_steps {
                        for cand in [&t - &h, &t + &h] {
                            let lo = ExactScalar::from_integer(k as i64 - 1);
                            if cand <= lo || cand >= ExactScalar::from_integer(k as i64) {
                                continue;
                            }
                            let v = scan(x, &cand)?;
                            if v > a {
                                a = v;
                                t = cand;
                            }
                        }
                        h = &h * &ExactScalar::from_ratio(1, 2);
                    }
                }
                if best.as_ref().is_none_or(|(_, b)| a > *b) {
                    best = Some((t, a));
                }
            }
            let (t, a) = best.expect("at least one probe");
            Ok((
                rows,
                SampleBest {
                    sample: s,
                    point: x.clone(),
                    t,
                    value: a.to_f64(),
                    average: a,
                },
            ))
        })
        .collect::<Result<_, SubmanifoldError>>()?;
    let mut rows = Vec::new();
    let mut best = Vec::new();
    for (r, b) in per_sample {
        rows.extend(r);
        best.push(b);
    }
    let hits = best.iter().filter(|b| b.value >= threshold).count();
    let best_average = best.iter().map(|b| b.average.clone()).max().unwrap_or_else(ExactScalar::zero);
    let weight = piece.gram.checked_div(&piece.vol).expect("positive volume");
    let lower_bound = &weight * &best_average;
    let set_measure = set.measure();
    let gap = (&lower_bound - &set_measure).to_f64();
    let contradiction = hits > 0 && lower_bound.to_f64() > set_measure.to_f64() * (1.0 + cfg.margin);
    let verification = verify_tower(&Tower::Suspension(tower), cfg.seed);
    Ok(GenericityReport {
        piece: piece.summary(),
        p,
        plan: plan.summary(),
        gamma,
        reindexed_matches_canonical: matches,
        system_ergodic: original.is_ergodic(),
        system_aperiodic: original.is_aperiodic(),
        tower: verification,
        set_measure_value: set_measure.to_f64(),
        set_measure,
        set,
        threshold,
        rows,
        best,
        hits,
        best_average,
        lower_bound,
        gap,
        contradiction,
        no_oscillation_found: hits == 0,
    })
}

/// The flow `Θ_canon [u|V]^{-1}`, whose re-indexing by the square frame
/// `[u|V]` is the given canonical flow.
pub fn original_flow(canonical: &TorusSystem, frame: &[Vec<BigRational>]) -> Result<TorusSystem, SubmanifoldError> {
    let d = frame.len();
    if frame.iter().any(|c| c.len() != d) {
        return Err(SubmanifoldError::UnsupportedExperiment {
            d: frame.first().map_or(0, Vec::len),
            m: d.saturating_sub(1),
        });
    }
    let rows: Vec<Vec<BigRational>> = (0..d).map(|r| frame.iter().map(|c| c[r].clone()).collect()).collect();
    let inv = inverse(&rows).ok_or(SubmanifoldError::DependentDirections { rank: rational_rank(rows), needed: d })?;
    let cols: Vec<Vec<BigRational>> = (0..d).map(|j| inv.iter().map(|row| row[j].clone()).collect()).collect();
    Ok(canonical.reparametrized(&cols)?)
}

/// Seeded points of a torus set, boxes chosen by volume, coordinates exact.
pub fn sample_in(set: &TorusSet, count: usize, seed: u64) -> Vec<Vec<ExactScalar>> {
    let boxes = set.approx_boxes();
    if boxes.is_empty() {
        return Vec::new();
    }
    let weights: Vec<f64> = boxes.iter().map(|b| b.iter().map(|(l, h)| h - l).product()).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exact_boxes = set.boxes();
    (0..count)
        .map(|_| {
            let mut r = rng.gen::<f64>() * total;
            let mut i = 0;
            while i + 1 < weights.len() && r >= weights[i] {
                r -= weights[i];
                i += 1;
            }
            let b = &exact_boxes[i];
            b.lo.iter()
                .zip(&b.hi)
                .map(|(lo, hi)| {
                    let v = exact_from_f64(lo.to_f64() + rng.gen::<f64>() * (hi.to_f64() - lo.to_f64()));
                    if &v < lo || &v >= hi {
                        lo.clone()
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

/// Integer helper for rational vectors.
pub fn rationals(v: &[i64]) -> Vec<BigRational> {
    v.iter().map(|&a| BigRational::from_integer(BigInt::from(a))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::TorusBox;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn system() -> TorusSystem {
        standard_suspension(2, ExactScalar::from_ratio(1, 8)).unwrap()
    }

    #[test]
    fn piece_validation() {
        let p = FlatPiece::new(rationals(&[1, 0]), vec![rationals(&[0, 1])], None).unwrap();
        assert_eq!(p.gram_factor(), &ExactScalar::one());
        assert!(matches!(
            FlatPiece::new(rationals(&[1, 0]), vec![rationals(&[2, 0])], None),
            Err(SubmanifoldError::DependentDirections { .. })
        ));
        let p3 = FlatPiece::new(rationals(&[0, 0, 1]), vec![rationals(&[1, 1, 0])], None).unwrap();
        assert_eq!(p3.gram_factor(), &ExactScalar::sqrt_int(2));
    }

    #[test]
    fn reduction_exact_for_indicators() {
        let sys = system();
        let piece = FlatPiece::new(vec![q(1, 1), q(1, 3)], vec![vec![q(-1, 2), q(2, 1)]], None).unwrap();
        let set = TorusSet::from_boxes(
            3,
            vec![TorusBox {
                lo: vec![ExactScalar::from_ratio(1, 5), ExactScalar::zero(), ExactScalar::from_ratio(1, 3)],
                hi: vec![ExactScalar::from_ratio(3, 5), ExactScalar::from_ratio(1, 2), ExactScalar::one()],
            }],
        );
        let obs = Observable::indicator(set);
        let x = vec![ExactScalar::from_ratio(1, 7), ExactScalar::from_ratio(2, 9), ExactScalar::from_ratio(5, 11)];
        let t = ExactScalar::parse("73/10").unwrap();
        let r = reduction_check(&sys, &obs, &x, &piece, &t, ContinuousMethod::ExactIndicator).unwrap();
        assert_eq!(r.exact_equal, Some(true));
        let rule = MidpointRule {
            initial: 1 << 12,
            max_evaluations: 1 << 16,
            tolerance: 1e-6,
            ..MidpointRule::default()
        };
        let fine = dilated_flat_average(&sys, &obs, &x, &piece, &t, ContinuousMethod::TensorMidpoint(rule)).unwrap();
        assert!((fine.value.re - r.flat.value.re).abs() < 1e-3, "{:?} vs {}", fine, r.flat.value);
    }

    #[test]
    fn character_closed_form_matches() {
        let sys = system();
        let piece = FlatPiece::new(vec![q(1, 1), q(1, 2)], vec![vec![q(1, 3), q(1, 1)]], None).unwrap();
        let x = vec![ExactScalar::from_ratio(1, 7); 3];
        let t = ExactScalar::from_ratio(5, 2);
        let obs = Observable::character(vec![1, -2, 1]);
        let closed = character_flat_closed_form(&sys, &[1, -2, 1], &x, &piece, &t).unwrap();
        let method = ContinuousMethod::TensorMidpoint(MidpointRule::default());
        let r = reduction_check(&sys, &obs, &x, &piece, &t, method).unwrap();
        assert!((r.flat.value - closed).norm() < 1e-8);
        assert!(r.difference < 1e-8);
    }

    #[test]
    fn jacobian_and_lower_bound() {
        let piece = FlatPiece::new(rationals(&[0, 0, 1]), vec![rationals(&[1, 2, 0]), rationals(&[0, 1, 1])], None).unwrap();
        let j = jacobian_check(&piece, &ExactScalar::from_ratio(3, 2)).unwrap();
        assert!(j.holds);
        let sys = system();
        let p2 = FlatPiece::new(rationals(&[1, 0]), vec![rationals(&[0, 1])], Some(ExactScalar::from_integer(2))).unwrap();
        let set = TorusSet::interval(ExactScalar::zero(), ExactScalar::from_ratio(1, 2)).product(&TorusSet::full(2));
        let x = vec![ExactScalar::zero(); 3];
        let r = lower_bound_check(&sys, &set, &x, &p2, &ExactScalar::from_integer(3)).unwrap();
        assert!(r.holds);
        assert_eq!(r.lower_bound, &r.flat_average * &ExactScalar::from_ratio(1, 2));
    }

    #[test]
    fn genericity_small() {
        let piece = FlatPiece::new(rationals(&[1, 0]), vec![rationals(&[0, 1])], None).unwrap();
        let cfg = GenericityConfig {
            samples: 4,
            ..GenericityConfig::default()
        };
        let r = genericity_failure_experiment(&piece, &cfg).unwrap();
        assert!(r.reindexed_matches_canonical);
        assert!(r.set_measure_value <= 0.1);
        assert_eq!(r.hits, 4);
        assert_eq!(r.best_average, ExactScalar::one());
        assert!(r.gap >= 0.5);
        assert!(r.contradiction);
    }
}
