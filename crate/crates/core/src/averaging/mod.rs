//! Box averages `A_k`, `R_k`, maximal averages, batched summed-area
//! evaluation, the composition defect and convergence experiments.

pub mod quadrature;
pub mod sat;

use std::cmp::Ordering;

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::FromPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use quadrature::{midpoint_mean_refined, MidpointRule, QuadratureReport};
use sat::{table_cells, CDd, Dd, SummedArea};

use crate::cone::{BoxEntry, BoxFamily, Mode};
use crate::exact::ExactScalar;
use crate::slicing::{preimage_measure, AffineCoord, SliceError};
use crate::systems::{IndicatorSet, Observable, SystemError, SystemKind, TorusSet, TorusSystem};

/// Default cap on summed-area table cells.
pub const DEFAULT_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AverageError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation needs a Z^d rotation")]
    NotDiscrete,
    #[error("operation needs an R^d flow")]
    NotFlow,
    #[error("exact evaluation needs an indicator observable")]
    NonIndicator,
    #[error("box family must be discrete")]
    ContinuousFamily,
    #[error("empty window")]
    EmptyWindow,
    #[error("box lengths must be positive")]
    NonPositiveLength,
    #[error("bounding box needs {needed} cells, budget is {budget}")]
    MemoryBudget { needed: usize, budget: usize },
    #[error("system is not certified ergodic")]
    NotErgodic,
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    System(#[from] SystemError),
}

fn check_discrete(sys: &TorusSystem, x_len: usize, box_dim: usize) -> Result<(), AverageError> {
    if sys.kind() != SystemKind::Rotation {
        return Err(AverageError::NotDiscrete);
    }
    if x_len != sys.torus_dim() {
        return Err(AverageError::DimensionMismatch {
            expected: sys.torus_dim(),
            got: x_len,
        });
    }
    if box_dim != sys.action_dim() {
        return Err(AverageError::DimensionMismatch {
            expected: sys.action_dim(),
            got: box_dim,
        });
    }
    Ok(())
}

fn check_obs(sys: &TorusSystem, obs: &Observable) -> Result<(), AverageError> {
    match obs.dim() {
        Some(m) if m != sys.torus_dim() => Err(AverageError::DimensionMismatch {
            expected: sys.torus_dim(),
            got: m,
        }),
        _ => Ok(()),
    }
}

/// Calls `visit` on every `j ∈ ∏ [corner_i, corner_i + len_i)`.
fn for_each_lattice(corner: &[i64], lengths: &[i64], mut visit: impl FnMut(&[i64])) {
    if lengths.iter().any(|&l| l <= 0) {
        return;
    }
    let d = corner.len();
    let mut j = corner.to_vec();
    loop {
        visit(&j);
        let mut a = d;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            j[a] += 1;
            if j[a] < corner[a] + lengths[a] {
                break;
            }
            j[a] = corner[a];
        }
    }
}

fn check_lengths(lengths: &[i64]) -> Result<(), AverageError> {
    if lengths.iter().any(|&l| l < 1) {
        return Err(AverageError::NonPositiveLength);
    }
    Ok(())
}

fn box_volume(lengths: &[i64]) -> f64 {
    lengths.iter().map(|&l| l as f64).product()
}

/// `A f(x)` over the lattice box `∏ [n_i, n_i + l_i)`, by direct summation.
pub fn discrete_box_average(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[f64],
    corner: &[i64],
    lengths: &[i64],
) -> Result<Complex64, AverageError> {
    check_discrete(sys, x.len(), corner.len())?;
    check_obs(sys, obs)?;
    check_lengths(lengths)?;
    if let Observable::Indicator(set) = obs {
        let c = indicator_count(sys, set, x, corner, lengths)?;
        return Ok(Complex64::new(c as f64 / box_volume(lengths), 0.0));
    }
    let mut p = vec![0.0; x.len()];
    let mut acc = CDd::default();
    for_each_lattice(corner, lengths, |j| {
        sys.orbit_point_into(x, j, &mut p);
        acc = sat::Cell::add(acc, CDd::new(obs.eval(&p)));
    });
    Ok(acc.value() / box_volume(lengths))
}

/// `#{j ∈ box : T^j x ∈ E}` with floating-point orbit points.
pub fn indicator_count(
    sys: &TorusSystem,
    set: &IndicatorSet,
    x: &[f64],
    corner: &[i64],
    lengths: &[i64],
) -> Result<i64, AverageError> {
    check_discrete(sys, x.len(), corner.len())?;
    let mut p = vec![0.0; x.len()];
    let mut count = 0i64;
    for_each_lattice(corner, lengths, |j| {
        sys.orbit_point_into(x, j, &mut p);
        count += set.contains(&p) as i64;
    });
    Ok(count)
}

/// `#{j ∈ box : T^j x ∈ E}` with exact orbit points.
pub fn exact_indicator_count(
    sys: &TorusSystem,
    set: &TorusSet,
    x: &[ExactScalar],
    corner: &[i64],
    lengths: &[i64],
) -> Result<u64, AverageError> {
    check_discrete(sys, x.len(), corner.len())?;
    let mut count = 0u64;
    let mut err = None;
    for_each_lattice(corner, lengths, |j| {
        let t: Vec<ExactScalar> = j.iter().map(|&v| ExactScalar::from_integer(v)).collect();
        match sys.act_exact(x, &t) {
            Ok(p) => count += set.contains(&p) as u64,
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e.into()),
        None => Ok(count),
    }
}

type LatticeBox = (Vec<i64>, Vec<i64>);

fn lattice_entries(family: &BoxFamily) -> Result<Vec<LatticeBox>, AverageError> {
    if family.mode() != Mode::Discrete {
        return Err(AverageError::ContinuousFamily);
    }
    family
        .entries()
        .iter()
        .map(|e: &BoxEntry| {
            let l = e.int_lengths();
            check_lengths(&l)?;
            Ok((e.int_corner(), l))
        })
        .collect()
}

fn bounding_box(entries: &[(Vec<i64>, Vec<i64>)], d: usize) -> (Vec<i64>, Vec<usize>) {
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for (c, l) in entries {
        for a in 0..d {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a] + l[a]);
        }
    }
    let ext = lo.iter().zip(&hi).map(|(l, h)| (h - l) as usize).collect();
    (lo, ext)
}

fn check_budget(ext: &[usize], budget: usize) -> Result<(), AverageError> {
    let needed = table_cells(ext).unwrap_or(usize::MAX);
    if needed > budget {
        return Err(AverageError::MemoryBudget { needed, budget });
    }
    Ok(())
}

/// Indicator numerators `#{j ∈ B_k : T^j x ∈ E}` for every box, from one
/// summed-area table of orbit counts.
pub fn batch_indicator_counts(
    sys: &TorusSystem,
    set: &IndicatorSet,
    x: &[f64],
    family: &BoxFamily,
    budget: usize,
) -> Result<Vec<i64>, AverageError> {
    check_discrete(sys, x.len(), family.dim())?;
    let entries = lattice_entries(family)?;
    if entries.is_empty() {
        return Ok(Vec::new());
    }
    let (lo, ext) = bounding_box(&entries, family.dim());
    check_budget(&ext, budget)?;
    let mut p = vec![0.0; x.len()];
    let table = SummedArea::build(lo, ext, |j| {
        sys.orbit_point_into(x, j, &mut p);
        set.contains(&p) as i64
    });
    Ok(entries.iter().map(|(c, l)| table.box_sum(c, l)).collect())
}

/// Every `A_k f(x)` of the family from one summed-area table.
pub fn batch_box_averages(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[f64],
    family: &BoxFamily,
    budget: usize,
) -> Result<Vec<Complex64>, AverageError> {
    check_discrete(sys, x.len(), family.dim())?;
    check_obs(sys, obs)?;
    if let Observable::Indicator(set) = obs {
        let counts = batch_indicator_counts(sys, set, x, family, budget)?;
        return Ok(family
            .entries()
            .iter()
            .zip(counts)
            .map(|(e, c)| Complex64::new(c as f64 / box_volume(&e.int_lengths()), 0.0))
            .collect());
    }
    let entries = lattice_entries(family)?;
    if entries.is_empty() {
        return Ok(Vec::new());
    }
    let (lo, ext) = bounding_box(&entries, family.dim());
    check_budget(&ext, budget)?;
    let mut p = vec![0.0; x.len()];
    let table = SummedArea::build(lo, ext, |j| {
        sys.orbit_point_into(x, j, &mut p);
        CDd::new(obs.eval(&p))
    });
    Ok(entries
        .iter()
        .map(|(c, l)| table.box_sum(c, l).value() / box_volume(l))
        .collect())
}

fn abs_averages(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[f64],
    family: &BoxFamily,
    budget: usize,
) -> Result<Vec<f64>, AverageError> {
    if let Observable::Indicator(_) = obs {
        return Ok(batch_box_averages(sys, obs, x, family, budget)?.iter().map(|z| z.re).collect());
    }
    let entries = lattice_entries(family)?;
    let (lo, ext) = bounding_box(&entries, family.dim());
    check_budget(&ext, budget)?;
    let mut p = vec![0.0; x.len()];
    let table = SummedArea::build(lo, ext, |j| {
        sys.orbit_point_into(x, j, &mut p);
        Dd::new(obs.eval(&p).norm())
    });
    Ok(entries
        .iter()
        .map(|(c, l)| table.box_sum(c, l).value() / box_volume(l))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximalAverage {
    pub value: f64,
    /// 1-based index into the family.
    pub argmax: usize,
}

/// `max_{first ≤ k ≤ last} A_k |f| (x)` (1-based, inclusive).
pub fn maximal_average(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[f64],
    family: &BoxFamily,
    first: usize,
    last: usize,
    budget: usize,
) -> Result<MaximalAverage, AverageError> {
    check_discrete(sys, x.len(), family.dim())?;
    check_obs(sys, obs)?;
    let last = last.min(family.len());
    if first == 0 || first > last {
        return Err(AverageError::EmptyWindow);
    }
    let window = BoxFamily::explicit(Mode::Discrete, family.entries()[first - 1..last].to_vec())
        .map_err(|_| AverageError::ContinuousFamily)?;
    let values = abs_averages(sys, obs, x, &window, budget)?;
    let (i, v) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    Ok(MaximalAverage {
        value: v,
        argmax: first + i,
    })
}

/// Result of comparing `A_k(A_h f)` with `A_k f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionDefect {
    pub defect: f64,
    /// `Σ_z |w(z) − 1_{B_k}(z)/|B_k||` for the Minkowski weight `w`.
    pub discrepancy: f64,
    /// `2 Σ_i (|n_{h,i}| + l_{h,i}) ∏_{j≠i} l_{k,j}`.
    pub constant: f64,
    /// `constant · ‖f‖_∞ / ∏ l_{k,i}`.
    pub bound: f64,
    pub within_bound: bool,
    /// Indicator numerators: double sum, shifted windows, and `|B_h|·#(B_k)`.
    pub indicator_sums: Option<[i64; 3]>,
}

/// Per axis: multiplicity of `z − n_k − n_h` in `[0, l_h) + [0, l_k)`.
fn conv_count(r: i64, lh: i64, lk: i64) -> i64 {
    if r < 0 || r >= lh + lk - 1 {
        0
    } else {
        (r + 1).min(lh).min(lk).min(lh + lk - 1 - r)
    }
}

/// `|A_k(A_h f)(x) − A_k f(x)|` together with the explicit boundary bound.
pub fn composition_defect(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[f64],
    k_box: (&[i64], &[i64]),
    h_box: (&[i64], &[i64]),
) -> Result<CompositionDefect, AverageError> {
    let (nk, lk) = k_box;
    let (nh, lh) = h_box;
    check_discrete(sys, x.len(), nk.len())?;
    check_discrete(sys, x.len(), nh.len())?;
    check_obs(sys, obs)?;
    check_lengths(lk)?;
    check_lengths(lh)?;
    let d = nk.len();
    // support of both weights, axis by axis
    let lo: Vec<i64> = (0..d).map(|i| nk[i].min(nk[i] + nh[i])).collect();
    let hi: Vec<i64> = (0..d)
        .map(|i| (nk[i] + lk[i]).max(nk[i] + nh[i] + lk[i] + lh[i] - 1))
        .collect();
    let len: Vec<i64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
    let lh_prod: i128 = lh.iter().map(|&v| v as i128).product();
    let lk_prod: i128 = lk.iter().map(|&v| v as i128).product();
    let den = lh_prod * lk_prod;
    let indicator = match obs {
        Observable::Indicator(s) => Some(s),
        _ => None,
    };
    let mut discrepancy: i128 = 0;
    let mut acc = CDd::default();
    let mut weighted_count: i128 = 0;
    let mut k_count: i128 = 0;
    let mut p = vec![0.0; x.len()];
    for_each_lattice(&lo, &len, |z| {
        let mut c: i128 = 1;
        let mut u: i128 = 1;
        for i in 0..d {
            c *= conv_count(z[i] - nk[i] - nh[i], lh[i], lk[i]) as i128;
            u *= if z[i] >= nk[i] && z[i] < nk[i] + lk[i] { lh[i] as i128 } else { 0 };
        }
        let w = c - u;
        discrepancy += w.abs();
        if c == 0 && u == 0 {
            return;
        }
        sys.orbit_point_into(x, z, &mut p);
        match indicator {
            Some(set) => {
                let hit = set.contains(&p) as i128;
                weighted_count += c * hit;
                k_count += (u / lh_prod) * hit;
            }
            None => acc = sat::Cell::add(acc, CDd::new(obs.eval(&p) * w as f64)),
        }
    });
    let defect;
    let mut indicator_sums = None;
    if let Some(set) = indicator {
        // literal double sum and the sum of shifted k-windows
        let mut double = 0i64;
        for_each_lattice(nk, lk, |j| {
            for_each_lattice(nh, lh, |i| {
                let z: Vec<i64> = j.iter().zip(i).map(|(a, b)| a + b).collect();
                sys.orbit_point_into(x, &z, &mut p);
                double += set.contains(&p) as i64;
            });
        });
        let mut shifted = 0i64;
        let mut err = None;
        for_each_lattice(nh, lh, |i| {
            let corner: Vec<i64> = nk.iter().zip(i).map(|(a, b)| a + b).collect();
            match indicator_count(sys, set, x, &corner, lk) {
                Ok(c) => shifted += c,
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        debug_assert_eq!(double as i128, weighted_count);
        let scaled = (lh_prod * k_count) as i64;
        indicator_sums = Some([double, shifted, scaled]);
        defect = ((double as i128 - lh_prod * k_count).abs()) as f64 / den as f64;
    } else {
        defect = acc.value().norm() / den as f64;
    }
    let mut constant = 0.0;
    for i in 0..d {
        let others: f64 = (0..d).filter(|&j| j != i).map(|j| lk[j] as f64).product();
        constant += 2.0 * ((nh[i].abs() + lh[i]) as f64) * others;
    }
    let bound = constant * obs.sup_norm() / lk_prod as f64;
    let discrepancy = discrepancy as f64 / den as f64;
    Ok(CompositionDefect {
        defect,
        discrepancy,
        constant,
        bound,
        within_bound: defect <= discrepancy * obs.sup_norm() + 1e-12 && discrepancy <= constant / lk_prod as f64 + 1e-12,
        indicator_sums,
    })
}

/// Method for continuous box averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ContinuousMethod {
    ExactIndicator,
    TensorMidpoint(MidpointRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousAverage {
    pub value: Complex64,
    /// Exact value for the exact-indicator method.
    pub exact: Option<ExactScalar>,
    pub quadrature: Option<QuadratureReport>,
}

fn check_flow(sys: &TorusSystem, x_len: usize, box_dim: usize) -> Result<(), AverageError> {
    if sys.kind() != SystemKind::Flow {
        return Err(AverageError::NotFlow);
    }
    if x_len != sys.torus_dim() {
        return Err(AverageError::DimensionMismatch {
            expected: sys.torus_dim(),
            got: x_len,
        });
    }
    if box_dim != sys.action_dim() {
        return Err(AverageError::DimensionMismatch {
            expected: sys.action_dim(),
            got: box_dim,
        });
    }
    Ok(())
}

/// Exact rational value of a finite float.
pub fn exact_from_f64(v: f64) -> ExactScalar {
    ExactScalar::from_rational(BigRational::from_f64(v).expect("finite coordinate"))
}

/// Affine coordinates `t ↦ x + Θ t` of a flow.
pub fn flow_coords(sys: &TorusSystem, x: &[ExactScalar]) -> Vec<AffineCoord> {
    (0..sys.torus_dim())
        .map(|c| AffineCoord {
            offset: x[c].clone(),
            slope: sys.translations().iter().map(|col| col[c].clone()).collect(),
        })
        .collect()
}

/// Exact `R χ_E (x)` over the parameter box `∏ [w_i, w_i + s_i)`.
pub fn exact_flow_indicator_average(
    sys: &TorusSystem,
    set: &TorusSet,
    x: &[ExactScalar],
    corner: &[ExactScalar],
    lengths: &[ExactScalar],
) -> Result<ExactScalar, AverageError> {
    check_flow(sys, x.len(), corner.len())?;
    if lengths.iter().any(|s| s.sign() != Ordering::Greater) {
        return Err(AverageError::NonPositiveLength);
    }
    let hi: Vec<ExactScalar> = corner.iter().zip(lengths).map(|(w, s)| w + s).collect();
    let m = preimage_measure(&flow_coords(sys, x), set, corner, &hi)?;
    let vol = lengths.iter().fold(ExactScalar::one(), |acc, s| &acc * s);
    Ok(m.checked_div(&vol).expect("positive volume"))
}

/// `R f(x) = (1/|B|) ∫_B f(U_t x) dt` for `B = ∏ [w_i, w_i + s_i)`.
pub fn continuous_box_average(
    sys: &TorusSystem,
    obs: &Observable,
    x: &[f64],
    corner: &[ExactScalar],
    lengths: &[ExactScalar],
    method: ContinuousMethod,
) -> Result<ContinuousAverage, AverageError> {
    check_flow(sys, x.len(), corner.len())?;
    check_obs(sys, obs)?;
    if lengths.iter().any(|s| s.sign() != Ordering::Greater) {
        return Err(AverageError::NonPositiveLength);
    }
    match method {
        ContinuousMethod::ExactIndicator => {
            let Observable::Indicator(set) = obs else {
                return Err(AverageError::NonIndicator);
            };
            let xe: Vec<ExactScalar> = x.iter().map(|&v| exact_from_f64(v)).collect();
            let v = exact_flow_indicator_average(sys, set.set(), &xe, corner, lengths)?;
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
            let lo: Vec<f64> = corner.iter().map(ExactScalar::to_f64).collect();
            let len: Vec<f64> = lengths.iter().map(ExactScalar::to_f64).collect();
            let f = |t: &[f64]| {
                let p = sys.act_real(x, t).expect("dimensions checked");
                obs.eval(&p)
            };
            let q = midpoint_mean_refined(f, &lo, &len, rule);
            Ok(ContinuousAverage {
                value: q.value,
                exact: None,
                quadrature: Some(q),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub k: usize,
    pub deviation: f64,
    pub argmax_sample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub samples: usize,
    pub seed: u64,
    pub override_condition: bool,
    pub mean: Complex64,
    pub rows: Vec<DeviationRow>,
    pub final_deviation: f64,
    pub max_deviation: f64,
}

/// Uniform seeded sample points on `T^m`.
pub fn sample_points(m: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..m).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Sup over seeded samples of `|A_k f(x) − μ(f)|`, for every `k` of the family.
pub fn convergence_experiment(
    sys: &TorusSystem,
    obs: &Observable,
    family: &BoxFamily,
    samples: usize,
    seed: u64,
    override_condition: bool,
    budget: usize,
) -> Result<ExperimentReport, AverageError> {
    if !sys.is_ergodic() && !override_condition {
        return Err(AverageError::NotErgodic);
    }
    check_discrete(sys, sys.torus_dim(), family.dim())?;
    check_obs(sys, obs)?;
    let mean = obs.mean();
    let points = sample_points(sys.torus_dim(), samples, seed);
    let per_sample: Vec<Vec<f64>> = points
        .par_iter()
        .map(|x| {
            let values = match batch_box_averages(sys, obs, x, family, budget) {
                Ok(v) => v,
                Err(AverageError::MemoryBudget { .. }) => family
                    .entries()
                    .iter()
                    .map(|e| discrete_box_average(sys, obs, x, &e.int_corner(), &e.int_lengths()))
                    .collect::<Result<_, _>>()?,
                Err(e) => return Err(e),
            };
            Ok(values.iter().map(|v| (v - mean).norm()).collect())
        })
        .collect::<Result<_, AverageError>>()?;
    let rows: Vec<DeviationRow> = (0..family.len())
        .map(|k| {
            let (argmax_sample, deviation) = per_sample
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (s, v)| if v[k] > best.1 { (s, v[k]) } else { best });
            DeviationRow {
                k: k + 1,
                deviation: deviation.max(0.0),
                argmax_sample,
            }
        })
        .collect();
    let final_deviation = rows.last().map_or(0.0, |r| r.deviation);
    let max_deviation = rows.iter().map(|r| r.deviation).fold(0.0, f64::max);
    Ok(ExperimentReport {
        samples,
        seed,
        override_condition,
        mean,
        rows,
        final_deviation,
        max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::family_from_str;
    use crate::systems::{make_system, SystemSpec};
    use std::f64::consts::TAU;

    fn x(s: &str) -> ExactScalar {
        s.parse().unwrap()
    }

    fn rot(theta: &str) -> TorusSystem {
        make_system(&SystemSpec::Rotation {
            generators: vec![vec![theta.into()]],
        })
        .unwrap()
    }

    fn half() -> Observable {
        Observable::indicator(TorusSet::interval(x("0"), x("1/2")))
    }

    #[test]
    fn constants_average_to_themselves() {
        let s = rot("sqrt2m1");
        let c = Observable::constant(1, 2.5);
        for (n, l) in [(0, 1), (-7, 13), (100, 3)] {
            let v = discrete_box_average(&s, &c, &[0.3], &[n], &[l]).unwrap();
            assert!((v.re - 2.5).abs() < 1e-15 && v.im.abs() < 1e-15);
        }
    }

    #[test]
    fn character_geometric_series() {
        let s = rot("sqrt2m1");
        let theta = 2f64.sqrt() - 1.0;
        let chi = Observable::character(vec![1]);
        for (n, l) in [(0, 1), (5, 17), (-40, 250)] {
            let v = discrete_box_average(&s, &chi, &[0.2], &[n], &[l]).unwrap();
            let e = |a: f64| Complex64::from_polar(1.0, TAU * a);
            let closed = e(0.2 + n as f64 * theta) * (e(l as f64 * theta) - 1.0) / (l as f64 * (e(theta) - 1.0));
            assert!((v - closed).norm() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_brute_force() {
        let s = make_system(&SystemSpec::ProductRotation {
            theta: vec!["golden".into(), "sqrt2m1".into()],
        })
        .unwrap();
        let set = TorusSet::wrapped_box(&[x("0"), x("0")], &[x("1/2"), x("1/2")]);
        let obs = Observable::indicator(set.clone());
        let v = discrete_box_average(&s, &obs, &[0.1, 0.7], &[0, 0], &[2, 2]).unwrap();
        let mut hits = 0;
        for a in 0..2 {
            for b in 0..2 {
                let p = s.act_lattice(&[0.1, 0.7], &[a, b]).unwrap();
                hits += (p[0] < 0.5 && p[1] < 0.5) as i32;
            }
        }
        assert_eq!(v.re, hits as f64 / 4.0);
        let exact = exact_indicator_count(&s, &set, &[x("1/10"), x("7/10")], &[0, 0], &[2, 2]).unwrap();
        assert_eq!(exact as i32, hits);
    }

    #[test]
    fn batch_matches_naive() {
        let s = rot("sqrt2m1");
        let fam = family_from_str("diagonal", 100).unwrap();
        let chi = Observable::character(vec![1]);
        let batch = batch_box_averages(&s, &chi, &[0.0], &fam, DEFAULT_BUDGET).unwrap();
        for (e, b) in fam.entries().iter().zip(&batch) {
            let naive = discrete_box_average(&s, &chi, &[0.0], &e.int_corner(), &e.int_lengths()).unwrap();
            assert!((naive - b).norm() < 1e-12);
        }
        let c = batch_box_averages(&s, &Observable::constant(1, 3.0), &[0.4], &fam, DEFAULT_BUDGET).unwrap();
        assert!(c.iter().all(|v| (v.re - 3.0).abs() < 1e-12));
        assert!(matches!(
            batch_box_averages(&s, &chi, &[0.0], &fam, 10),
            Err(AverageError::MemoryBudget { .. })
        ));
    }

    #[test]
    fn maximal_average_window() {
        let s = rot("golden");
        let fam = family_from_str("unit", 5).unwrap();
        let obs = half();
        let m = maximal_average(&s, &obs, &[0.05], &fam, 1, 5, DEFAULT_BUDGET).unwrap();
        let brute = fam
            .entries()
            .iter()
            .map(|e| discrete_box_average(&s, &obs, &[0.05], &e.int_corner(), &e.int_lengths()).unwrap().re)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(m.value, brute);
        let single = maximal_average(&s, &obs, &[0.05], &fam, 3, 3, DEFAULT_BUDGET).unwrap();
        assert_eq!(single.argmax, 3);
        assert!(matches!(
            maximal_average(&s, &obs, &[0.05], &fam, 4, 3, DEFAULT_BUDGET),
            Err(AverageError::EmptyWindow)
        ));
    }

    #[test]
    fn composition_examples() {
        let s = rot("sqrt2m1");
        let c = composition_defect(&s, &Observable::constant(1, 1.0), &[0.0], (&[0], &[4]), (&[1], &[2])).unwrap();
        assert!(c.defect < 1e-15);
        let d = composition_defect(&s, &half(), &[0.0], (&[0], &[4]), (&[1], &[2])).unwrap();
        let [double, shifted, _] = d.indicator_sums.unwrap();
        assert_eq!(double, shifted);
        assert!(d.within_bound && d.defect <= d.bound);
    }

    #[test]
    fn continuous_average_methods() {
        let s = crate::systems::standard_suspension(2, x("1/8")).unwrap();
        let full = Observable::indicator(TorusSet::full(3));
        let corner = [x("1"), x("2")];
        let len = [x("3"), x("5/2")];
        let v = continuous_box_average(&s, &full, &[0.1, 0.2, 0.3], &corner, &len, ContinuousMethod::ExactIndicator).unwrap();
        assert_eq!(v.exact, Some(x("1")));
        let chi = Observable::character(vec![1, 0, 2]);
        let q = continuous_box_average(
            &s,
            &chi,
            &[0.1, 0.2, 0.3],
            &corner,
            &len,
            ContinuousMethod::TensorMidpoint(MidpointRule::default()),
        )
        .unwrap();
        // ξ·Θ = (γ + 2a, 2b)
        let g = 0.125;
        let c = [g + 2.0 * 2f64.sqrt() * g, 2.0 * 3f64.sqrt() * g];
        let phase = 0.1 + 2.0 * 0.3 + c[0] * 1.0 + c[1] * 2.0;
        let mut closed = Complex64::from_polar(1.0, TAU * phase);
        for (ci, si) in c.iter().zip([3.0, 2.5]) {
            let z = Complex64::new(0.0, TAU * ci * si);
            closed *= (z.exp() - 1.0) / z;
        }
        assert!((q.value - closed).norm() < 1e-8);
        let set = TorusSet::wrapped_box(&[x("0"), x("1/4"), x("1/3")], &[x("1/2"), x("1/2"), x("1/2")]);
        let ind = Observable::indicator(set);
        let e = continuous_box_average(&s, &ind, &[0.1, 0.2, 0.3], &corner, &len, ContinuousMethod::ExactIndicator).unwrap();
        let rule = MidpointRule {
            tolerance: 1e-4,
            max_evaluations: 1 << 20,
            ..MidpointRule::default()
        };
        let m = continuous_box_average(&s, &ind, &[0.1, 0.2, 0.3], &corner, &len, ContinuousMethod::TensorMidpoint(rule)).unwrap();
        let ev = e.value.re;
        assert!((0.0..=1.0).contains(&ev));
        let qr = m.quadrature.unwrap();
        assert!((m.value.re - ev).abs() <= qr.error_estimate + 2e-3, "{} vs {ev}", m.value.re);
        assert!(matches!(
            continuous_box_average(&s, &chi, &[0.1, 0.2, 0.3], &corner, &len, ContinuousMethod::ExactIndicator),
            Err(AverageError::NonIndicator)
        ));
    }

    #[test]
    fn convergence_constant_is_zero() {
        let s = rot("golden");
        let fam = family_from_str("diagonal", 50).unwrap();
        let r = convergence_experiment(&s, &Observable::constant(1, 1.0), &fam, 10, 7, false, DEFAULT_BUDGET).unwrap();
        assert!(r.max_deviation < 1e-12);
        assert!(matches!(
            convergence_experiment(&rot("1/2"), &half(), &fam, 10, 7, false, DEFAULT_BUDGET),
            Err(AverageError::NotErgodic)
        ));
    }
}
