//! Counterexample sets for box families that violate the cone condition.
//!
//! A plan fixes a height `λ` and a prefix `K` whose cone cross-section `Δ`
//! (aperture 1) is large compared with `4λ + 1`. Inside a tower of
//! heights `N_1, 3N_2, …, 3N_d` the set `H` (the top `4λ + 1` rows) is
//! small, while every point of `⋃_{z∈Δ} T_1^{−z} F` sees a whole box of the
//! family inside `H`.

use std::cmp::Ordering;

use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::{
    batch_indicator_counts, exact_flow_indicator_average, exact_indicator_count, sample_points, AverageError,
};
use crate::cone::{cross_section_prefix, BoxEntry, BoxFamily, ConeCrossSection, ConeError, Mode, Rational};
use crate::exact::ExactScalar;
use crate::systems::{standard_suspension, IndicatorSet, SystemError, TorusSet, TorusSystem};
use crate::towers::{
    product_tower, suspension_tower, verify_tower, SuspensionTower, Tower, TowerError, TowerVerification,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepoutError {
    #[error("no probed height reaches the threshold (largest size {best} at lambda = {lambda}); enlarge the prefix")]
    NoWitness { best: String, lambda: String },
    #[error("tower heights {got:?} do not match the plan {expected:?}")]
    HeightMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Average(#[from] AverageError),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub fn to_exact(q: &Rational) -> ExactScalar {
    ExactScalar::from_i128_ratio(*q.numer(), *q.denom())
}

fn to_int(q: &Rational) -> i64 {
    q.to_integer().to_i64().expect("height fits in i64")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepoutPlan {
    pub p: u64,
    /// 0-based axis along which the cone condition fails.
    pub axis: usize,
    pub mode: Mode,
    pub lambda: Rational,
    pub k_p: usize,
    pub delta: ConeCrossSection,
    pub threshold: Rational,
    /// `N_i` (discrete) or `L_i` (continuous).
    pub heights: Vec<Rational>,
    pub pad: bool,
    entries: Vec<BoxEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub p: u64,
    pub axis: usize,
    pub mode: Mode,
    pub alpha: String,
    pub lambda: String,
    pub k_p: usize,
    pub delta: Vec<(String, String)>,
    pub delta_size: String,
    pub threshold: String,
    pub heights: Vec<String>,
    pub tower_heights: Vec<String>,
    pub pad: bool,
}

impl SweepoutPlan {
    /// `N_1, 3N_2, …` with the failing axis in its own position.
    pub fn tower_heights(&self) -> Vec<Rational> {
        self.heights
            .iter()
            .enumerate()
            .map(|(i, h)| if i == self.axis { *h } else { *h * Rational::from_integer(3) })
            .collect()
    }

    pub fn entries(&self) -> &[BoxEntry] {
        &self.entries
    }

    /// The prefix `B_1, …, B_K` as a family.
    pub fn family(&self) -> BoxFamily {
        BoxFamily::explicit(self.mode, self.entries.clone()).expect("prefix of a valid family")
    }

    pub fn dim(&self) -> usize {
        self.heights.len()
    }

    /// A `k ≤ K` with `|z − n_k| ≤ λ − l_k` on the failing axis (floored radius when discrete).
    pub fn witness_index(&self, z: Rational) -> Option<usize> {
        self.entries.iter().position(|e| {
            let l = e.lengths[self.axis];
            if l > self.lambda {
                return false;
            }
            let r = self.lambda - l;
            let r = match self.mode {
                Mode::Discrete => r.floor(),
                Mode::Continuous => r,
            };
            (z - e.corner[self.axis]).abs() <= r
        })
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            p: self.p,
            axis: self.axis + 1,
            mode: self.mode,
            alpha: "1".into(),
            lambda: self.lambda.to_string(),
            k_p: self.k_p,
            delta: self.delta.intervals.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            delta_size: self.delta.size.to_string(),
            threshold: self.threshold.to_string(),
            heights: self.heights.iter().map(|h| h.to_string()).collect(),
            tower_heights: self.tower_heights().iter().map(|h| h.to_string()).collect(),
            pad: self.pad,
        }
    }
}

/// Integers `1..=max` as heights.
pub fn default_lambda_grid(max: i128) -> Vec<Rational> {
    (1..=max).map(Rational::from_integer).collect()
}

/// First height of the grid whose cross-section over some prefix reaches
/// `p(4λ+1)` points (discrete) or length `4pλ` (continuous), with the
/// smallest such prefix.
pub fn sweepout_plan(
    family: &BoxFamily,
    axis: usize,
    p: u64,
    pad: bool,
    lambda_grid: &[Rational],
) -> Result<SweepoutPlan, SweepoutError> {
    if p == 0 {
        return Err(SweepoutError::InvalidPlan("p must be at least 1".into()));
    }
    if axis >= family.dim() {
        return Err(SweepoutError::InvalidPlan(format!("axis {} out of range", axis + 1)));
    }
    if family.is_empty() || lambda_grid.is_empty() {
        return Err(SweepoutError::InvalidPlan("empty family or height grid".into()));
    }
    let mode = family.mode();
    let one = Rational::one();
    let pq = Rational::from_integer(p as i128);
    let mut grid = lambda_grid.to_vec();
    grid.sort();
    let mut best = (Rational::zero(), grid[0]);
    for &lambda in &grid {
        if !lambda.is_positive() || (mode == Mode::Discrete && !lambda.is_integer()) {
            return Err(SweepoutError::InvalidPlan(format!("bad height {lambda}")));
        }
        let threshold = match mode {
            Mode::Discrete => pq * (Rational::from_integer(4) * lambda + one),
            Mode::Continuous => pq * Rational::from_integer(4) * lambda,
        };
        let full = cross_section_prefix(family, axis, one, lambda, family.len());
        if full.size > best.0 {
            best = (full.size, lambda);
        }
        if full.size < threshold {
            continue;
        }
        // sizes grow with the prefix; find the shortest one
        let (mut lo, mut hi) = (1usize, family.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if cross_section_prefix(family, axis, one, lambda, mid).size >= threshold {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let delta = cross_section_prefix(family, axis, one, lambda, lo);
        let entries = family.entries()[..lo].to_vec();
        let sup = delta.sup().expect("nonempty cross-section");
        let mut heights = Vec::with_capacity(family.dim());
        for j in 0..family.dim() {
            if j == axis {
                let pad_term = if pad && mode == Mode::Discrete { one } else { Rational::zero() };
                heights.push(Rational::from_integer(2) * lambda + sup + pad_term);
            } else {
                let m = entries
                    .iter()
                    .map(|e| (e.corner[j] + e.lengths[j]).abs())
                    .max()
                    .expect("nonempty prefix");
                heights.push(m.max(one));
            }
        }
        let span = match mode {
            Mode::Discrete => Rational::from_integer(4) * lambda + one,
            Mode::Continuous => Rational::from_integer(4) * lambda,
        };
        if heights[axis] < span {
            return Err(SweepoutError::InvalidPlan(format!(
                "tower height {} is below the top block {span}",
                heights[axis]
            )));
        }
        return Ok(SweepoutPlan {
            p,
            axis,
            mode,
            lambda,
            k_p: lo,
            delta,
            threshold,
            heights,
            pad,
            entries,
        });
    }
    Err(SweepoutError::NoWitness {
        best: best.0.to_string(),
        lambda: best.1.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterexampleSets {
    pub h: TorusSet,
    /// The level `F` (discrete only; in the flow case it is a null slice).
    pub f: Option<TorusSet>,
    pub h_measure: ExactScalar,
    pub expected_h_measure: ExactScalar,
    pub formula_holds: bool,
}

fn check_heights(expected: &[Rational], got: &[ExactScalar]) -> Result<(), SweepoutError> {
    let exp: Vec<ExactScalar> = expected.iter().map(to_exact).collect();
    if exp.as_slice() != got {
        return Err(SweepoutError::HeightMismatch {
            expected: expected.iter().map(|h| h.to_string()).collect(),
            got: got.iter().map(|h| h.to_string()).collect(),
        });
    }
    Ok(())
}

/// `H` = top `4λ+1` rows of the tower (all other indices), `F` = row
/// `N_1 − 2λ − 1` with the other indices in `[N_j, 2N_j)`.
pub fn build_counterexample_set(plan: &SweepoutPlan, tower: &Tower) -> Result<CounterexampleSets, SweepoutError> {
    let axis = plan.axis;
    let lambda = plan.lambda;
    match (plan.mode, tower) {
        (Mode::Discrete, Tower::Discrete(t)) => {
            let got: Vec<ExactScalar> = t.heights().iter().map(|&h| ExactScalar::from_integer(h as i64)).collect();
            check_heights(&plan.tower_heights(), &got)?;
            let n: Vec<i64> = plan.heights.iter().map(to_int).collect();
            let lam = to_int(&lambda);
            let mut lo = vec![0i64; n.len()];
            let mut hi: Vec<i64> = n.iter().map(|v| 3 * v).collect();
            lo[axis] = n[axis] - 4 * lam - 1;
            hi[axis] = n[axis];
            let h = t.levels_union(&lo, &hi);
            let mut flo = n.clone();
            let mut fhi: Vec<i64> = n.iter().map(|v| 2 * v).collect();
            flo[axis] = n[axis] - 2 * lam - 1;
            fhi[axis] = flo[axis] + 1;
            let f = t.levels_union(&flo, &fhi);
            let mut factor: i64 = 4 * lam + 1;
            for (j, &nj) in n.iter().enumerate() {
                if j != axis {
                    factor *= 3 * nj;
                }
            }
            let expected = &ExactScalar::from_integer(factor) * &t.base().measure();
            let h_measure = h.measure();
            Ok(CounterexampleSets {
                formula_holds: h_measure == expected,
                h,
                f: Some(f),
                h_measure,
                expected_h_measure: expected,
            })
        }
        (Mode::Continuous, Tower::Suspension(t)) => {
            check_heights(&plan.tower_heights(), t.sides())?;
            let sides = t.sides();
            let mut lo = vec![ExactScalar::zero(); sides.len()];
            let hi = sides.to_vec();
            let l1 = to_exact(&plan.heights[axis]);
            lo[axis] = &l1 - &to_exact(&(Rational::from_integer(4) * lambda));
            let h = t.chart_box(&lo, &hi)?;
            let ratio = to_exact(&(Rational::from_integer(4) * lambda))
                .checked_div(&l1)
                .expect("positive height");
            let expected = &ratio * &t.y_measure();
            let h_measure = h.measure();
            Ok(CounterexampleSets {
                formula_holds: h_measure == expected,
                h,
                f: None,
                h_measure,
                expected_h_measure: expected,
            })
        }
        _ => Err(SweepoutError::InvalidPlan("plan mode and tower kind differ".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCheck {
    pub samples: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Fraction of samples with `max_{k ≤ K} A_k χ_H > 1 − ε`.
    pub fraction_above: f64,
    pub union_measure: f64,
    /// Samples inside the union whose maximal average is not 1.
    pub union_points_failing: usize,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactWitness {
    pub point: Vec<ExactScalar>,
    pub z: String,
    /// 1-based box index.
    pub k: usize,
    pub value: ExactScalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub union_measure: ExactScalar,
    pub translate_measure_sum: ExactScalar,
    pub translates_disjoint: bool,
    pub h_measure: ExactScalar,
    pub ratio: ExactScalar,
    pub ratio_value: f64,
    /// `p / 3^{d−1}`.
    pub bound_three: String,
    pub holds_three: bool,
    /// `p / 2^{d−1}`, reported for flows.
    pub bound_two: Option<String>,
    pub holds_two: Option<bool>,
    pub containment_checks: u64,
    pub containment_holds: bool,
    pub clipped: bool,
    pub sampled: Option<SampleCheck>,
    pub witness: Option<ExactWitness>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioConfig {
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    pub budget: usize,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            samples: 20_000,
            seed: 1,
            budget: crate::averaging::DEFAULT_BUDGET,
        }
    }
}

fn pow_i64(b: i64, e: usize) -> i64 {
    (0..e).fold(1, |acc, _| acc * b)
}

fn midpoint(set: &TorusSet) -> Option<Vec<ExactScalar>> {
    let half = ExactScalar::from_ratio(1, 2);
    set.boxes()
        .first()
        .map(|b| b.lo.iter().zip(&b.hi).map(|(l, h)| &(l + h) * &half).collect())
}

/// Exact ratio `μ(⋃_{z∈Δ} T_1^{−z} F) / μ(H)` with containment checks.
pub fn ratio_check(
    plan: &SweepoutPlan,
    sets: &CounterexampleSets,
    tower: &Tower,
    cfg: RatioConfig,
) -> Result<RatioReport, SweepoutError> {
    let d = plan.dim();
    let p = plan.p as i64;
    let bound_three = ExactScalar::from_ratio(p, pow_i64(3, d - 1));
    let bound_two = ExactScalar::from_ratio(p, pow_i64(2, d - 1));
    match tower {
        Tower::Discrete(t) => {
            let f = sets.f.as_ref().ok_or_else(|| SweepoutError::InvalidPlan("missing F".into()))?;
            let sys = t.system();
            let zs = plan.delta.lattice_points();
            let shift = |v: &[i64]| -> Vec<ExactScalar> { v.iter().map(|&a| ExactScalar::from_integer(a)).collect() };
            let translates: Vec<TorusSet> = zs
                .iter()
                .map(|&z| {
                    let mut v = vec![0i64; d];
                    v[plan.axis] = -z;
                    sys.image(f, &shift(&v))
                })
                .collect::<Result<_, _>>()?;
            let union = TorusSet::union_all(f.dim(), &translates);
            let union_measure = union.measure();
            let sum = &ExactScalar::from_integer(zs.len() as i64) * &f.measure();
            // containment: every box orbit of a translate lies in H
            let mut checks = 0u64;
            let mut holds = true;
            for &z in &zs {
                let Some(k) = plan.witness_index(Rational::from_integer(z as i128)) else {
                    holds = false;
                    break;
                };
                let e = &plan.entries[k];
                let n = e.int_corner();
                let l = e.int_lengths();
                let mut j = vec![0i64; d];
                loop {
                    let mut v: Vec<i64> = (0..d).map(|i| n[i] + j[i]).collect();
                    v[plan.axis] -= z;
                    checks += 1;
                    if !sys.image(f, &shift(&v))?.is_subset(&sets.h) {
                        holds = false;
                        break;
                    }
                    let mut a = d;
                    let mut done = true;
                    while a > 0 {
                        a -= 1;
                        j[a] += 1;
                        if j[a] < l[a] {
                            done = false;
                            break;
                        }
                        j[a] = 0;
                    }
                    if done {
                        break;
                    }
                }
                if !holds {
                    break;
                }
            }
            let ratio = union_measure
                .checked_div(&sets.h_measure)
                .ok_or_else(|| SweepoutError::InvalidPlan("empty H".into()))?;
            let witness = discrete_witness(plan, sys, &sets.h, &translates, &zs)?;
            let sampled = if cfg.samples > 0 {
                Some(sample_check(plan, sys, &sets.h, &union, cfg)?)
            } else {
                None
            };
            Ok(RatioReport {
                translates_disjoint: union_measure == sum,
                translate_measure_sum: sum,
                h_measure: sets.h_measure.clone(),
                ratio_value: ratio.to_f64(),
                holds_three: ratio >= bound_three,
                bound_three: bound_three.to_string(),
                bound_two: None,
                holds_two: None,
                ratio,
                union_measure,
                containment_checks: checks,
                containment_holds: holds,
                clipped: false,
                sampled,
                witness,
            })
        }
        Tower::Suspension(t) => {
            let sides = t.sides();
            let axis = plan.axis;
            let lam = plan.lambda;
            let l1 = plan.heights[axis];
            let FlowUnion { set: union, measure_sum: sum, clipped } = flow_union(plan, t)?;
            let union_measure = union.measure();
            // containment, one family box at a time: the sweep of the box over
            // its cone interval stays inside the chart of H
            let mut checks = 0u64;
            let mut holds = true;
            for e in &plan.entries {
                let s = e.lengths[axis];
                if s > lam {
                    continue;
                }
                let mut lo = Vec::with_capacity(d);
                let mut hi = Vec::with_capacity(d);
                for j in 0..d {
                    if j == axis {
                        lo.push(l1 - Rational::from_integer(3) * lam + s);
                        hi.push(l1 - lam);
                    } else {
                        lo.push(plan.heights[j] + e.corner[j]);
                        hi.push(Rational::from_integer(2) * plan.heights[j] + e.corner[j] + e.lengths[j]);
                    }
                }
                checks += 1;
                let inside = lo.iter().zip(&hi).zip(sides).all(|((a, b), side)| {
                    !a.is_negative() && to_exact(b) <= *side
                });
                let lo_e: Vec<ExactScalar> = lo.iter().map(to_exact).collect();
                let hi_e: Vec<ExactScalar> = hi.iter().map(to_exact).collect();
                if !inside || !t.chart_box(&lo_e, &hi_e)?.is_subset(&sets.h) {
                    holds = false;
                    break;
                }
            }
            let ratio = union_measure
                .checked_div(&sets.h_measure)
                .ok_or_else(|| SweepoutError::InvalidPlan("empty H".into()))?;
            let witness = flow_witness(plan, t.system(), t.gamma(), &sets.h, &union)?;
            Ok(RatioReport {
                translates_disjoint: union_measure == sum,
                translate_measure_sum: sum,
                h_measure: sets.h_measure.clone(),
                ratio_value: ratio.to_f64(),
                holds_three: ratio >= bound_three,
                bound_three: bound_three.to_string(),
                holds_two: Some(ratio >= bound_two),
                bound_two: Some(bound_two.to_string()),
                ratio,
                union_measure,
                containment_checks: checks,
                containment_holds: holds,
                clipped,
                sampled: None,
                witness,
            })
        }
    }
}

/// The flow analogue of `⋃_{z∈Δ} T_1^{−z} F`: the tower points at height
/// `L_1 − 2λ − z` on the failing axis (`z ∈ Δ`) and in `[L_j, 2L_j)` elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowUnion {
    pub set: TorusSet,
    /// Sum of the measures of the pieces, one per interval of `Δ`.
    pub measure_sum: ExactScalar,
    /// Some interval of `Δ` had to be clipped to the tower.
    pub clipped: bool,
}

pub fn flow_union(plan: &SweepoutPlan, t: &SuspensionTower) -> Result<FlowUnion, SweepoutError> {
    let d = plan.dim();
    let axis = plan.axis;
    let l1 = plan.heights[axis];
    let top = l1 - Rational::from_integer(2) * plan.lambda;
    let mut clipped = false;
    let mut parts = Vec::new();
    let mut sum = ExactScalar::zero();
    let rest: ExactScalar = (0..d)
        .filter(|&j| j != axis)
        .fold(ExactScalar::one(), |acc, j| &acc * &(t.gamma() * &to_exact(&plan.heights[j])));
    for (a, b) in &plan.delta.intervals {
        let mut lo_t = top - *b;
        let mut hi_t = top - *a;
        if lo_t < Rational::zero() {
            lo_t = Rational::zero();
            clipped = true;
        }
        if hi_t > l1 {
            hi_t = l1;
            clipped = true;
        }
        if lo_t >= hi_t {
            continue;
        }
        let mut lo: Vec<ExactScalar> = plan.heights.iter().map(to_exact).collect();
        let mut hi: Vec<ExactScalar> = plan
            .heights
            .iter()
            .map(|h| to_exact(&(*h * Rational::from_integer(2))))
            .collect();
        lo[axis] = to_exact(&lo_t);
        hi[axis] = to_exact(&hi_t);
        sum = &sum + &(&(t.gamma() * &to_exact(&(hi_t - lo_t))) * &rest);
        parts.push(t.chart_box(&lo, &hi)?);
    }
    Ok(FlowUnion {
        set: TorusSet::union_all(d + 1, &parts),
        measure_sum: sum,
        clipped,
    })
}

fn discrete_witness(
    plan: &SweepoutPlan,
    sys: &TorusSystem,
    h: &TorusSet,
    translates: &[TorusSet],
    zs: &[i64],
) -> Result<Option<ExactWitness>, SweepoutError> {
    for (tr, &z) in translates.iter().zip(zs) {
        let Some(point) = midpoint(tr) else { continue };
        let Some(k) = plan.witness_index(Rational::from_integer(z as i128)) else {
            continue;
        };
        let e = &plan.entries[k];
        let l = e.int_lengths();
        let count = exact_indicator_count(sys, h, &point, &e.int_corner(), &l)?;
        let volume: i64 = l.iter().product();
        return Ok(Some(ExactWitness {
            point,
            z: z.to_string(),
            k: k + 1,
            value: ExactScalar::from_ratio(count as i64, volume),
        }));
    }
    Ok(None)
}

fn flow_witness(
    plan: &SweepoutPlan,
    sys: &TorusSystem,
    gamma: &ExactScalar,
    h: &TorusSet,
    union: &TorusSet,
) -> Result<Option<ExactWitness>, SweepoutError> {
    let Some(point) = midpoint(union) else {
        return Ok(None);
    };
    let axis = plan.axis;
    let t_axis = point[axis].checked_div(gamma).expect("gamma > 0");
    let Some(t_q) = t_axis.as_rational() else {
        return Ok(None);
    };
    let top = to_exact(&(plan.heights[axis] - Rational::from_integer(2) * plan.lambda));
    let z = &top - &ExactScalar::from_rational(t_q);
    let zq = z.as_rational().expect("rational");
    let zr = Rational::new(
        zq.numer().to_i128().expect("small"),
        zq.denom().to_i128().expect("small"),
    );
    let Some(k) = plan.witness_index(zr) else {
        return Ok(None);
    };
    let e = &plan.entries[k];
    let corner: Vec<ExactScalar> = e.corner.iter().map(to_exact).collect();
    let lengths: Vec<ExactScalar> = e.lengths.iter().map(to_exact).collect();
    let value = exact_flow_indicator_average(sys, h, &point, &corner, &lengths)?;
    Ok(Some(ExactWitness {
        point,
        z: zr.to_string(),
        k: k + 1,
        value,
    }))
}

fn sample_check(
    plan: &SweepoutPlan,
    sys: &TorusSystem,
    h: &TorusSet,
    union: &TorusSet,
    cfg: RatioConfig,
) -> Result<SampleCheck, SweepoutError> {
    let family = plan.family();
    let volumes: Vec<i64> = family.entries().iter().map(|e| e.int_lengths().iter().product()).collect();
    let h_ind = IndicatorSet::new(h.clone());
    let u_ind = IndicatorSet::new(union.clone());
    let points = sample_points(sys.torus_dim(), cfg.samples, cfg.seed);
    let rows: Vec<(bool, bool)> = points
        .par_iter()
        .map(|x| {
            let counts = batch_indicator_counts(sys, &h_ind, x, &family, cfg.budget)?;
            let max = counts
                .iter()
                .zip(&volumes)
                .map(|(&c, &v)| c as f64 / v as f64)
                .fold(0.0, f64::max);
            let full = counts.iter().zip(&volumes).any(|(c, v)| c == v);
            let in_union = u_ind.contains(x);
            Ok((max > 1.0 - cfg.epsilon, in_union && !full))
        })
        .collect::<Result<_, AverageError>>()?;
    let above = rows.iter().filter(|r| r.0).count();
    let failing = rows.iter().filter(|r| r.1).count();
    let fraction_above = above as f64 / cfg.samples as f64;
    let union_measure = union.measure().to_f64();
    Ok(SampleCheck {
        samples: cfg.samples,
        seed: cfg.seed,
        epsilon: cfg.epsilon,
        fraction_above,
        union_measure,
        union_points_failing: failing,
        consistent: union_measure <= fraction_above + 1e-2 && failing == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleExtremes {
    pub sample: usize,
    pub min: f64,
    pub argmin_k: usize,
    pub max: f64,
    pub argmax_k: usize,
    /// Some `A_k χ = 1` exactly (count equals box volume).
    pub hits_one: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    pub samples: usize,
    pub seed: u64,
    pub set_measure: f64,
    pub epsilon: f64,
    pub window: (usize, usize),
    pub fraction_max_high: f64,
    pub fraction_min_low: f64,
    pub fraction_both: f64,
    pub samples_hitting_one: usize,
    pub rows: Vec<SampleExtremes>,
}

/// `A_k χ_E` along the window `first..=last` (1-based) at seeded samples.
#[allow(clippy::too_many_arguments)]
pub fn oscillation_scan(
    sys: &TorusSystem,
    set: &TorusSet,
    family: &BoxFamily,
    first: usize,
    last: usize,
    samples: usize,
    epsilon: f64,
    seed: u64,
    budget: usize,
) -> Result<OscillationReport, SweepoutError> {
    let last = last.min(family.len());
    if first == 0 || first > last {
        return Err(AverageError::EmptyWindow.into());
    }
    let window = BoxFamily::explicit(family.mode(), family.entries()[first - 1..last].to_vec())?;
    let volumes: Vec<i64> = window.entries().iter().map(|e| e.int_lengths().iter().product()).collect();
    let ind = IndicatorSet::new(set.clone());
    let points = sample_points(sys.torus_dim(), samples, seed);
    let rows: Vec<SampleExtremes> = points
        .par_iter()
        .enumerate()
        .map(|(s, x)| {
            let counts = batch_indicator_counts(sys, &ind, x, &window, budget)?;
            let mut row = SampleExtremes {
                sample: s,
                min: f64::INFINITY,
                argmin_k: first,
                max: f64::NEG_INFINITY,
                argmax_k: first,
                hits_one: false,
            };
            for (i, (&c, &v)) in counts.iter().zip(&volumes).enumerate() {
                let a = c as f64 / v as f64;
                if a < row.min {
                    row.min = a;
                    row.argmin_k = first + i;
                }
                if a > row.max {
                    row.max = a;
                    row.argmax_k = first + i;
                }
                row.hits_one |= c == v;
            }
            Ok(row)
        })
        .collect::<Result<_, AverageError>>()?;
    let n = samples.max(1) as f64;
    let high = rows.iter().filter(|r| r.max >= 1.0 - epsilon).count();
    let low = rows.iter().filter(|r| r.min <= epsilon).count();
    let both = rows.iter().filter(|r| r.max >= 1.0 - epsilon && r.min <= epsilon).count();
    Ok(OscillationReport {
        samples,
        seed,
        set_measure: set.measure().to_f64(),
        epsilon,
        window: (first, last),
        fraction_max_high: high as f64 / n,
        fraction_min_low: low as f64 / n,
        fraction_both: both as f64 / n,
        samples_hitting_one: rows.iter().filter(|r| r.hits_one).count(),
        rows,
    })
}

/// Everything a sweepout construction produces.
#[derive(Debug, Clone)]
pub struct SweepoutOutcome {
    pub plan: SweepoutPlan,
    pub tower: Tower,
    pub verification: TowerVerification,
    pub sets: CounterexampleSets,
    pub ratio: RatioReport,
}

/// Plan, product tower over the given rotations, sets and ratio.
pub fn discrete_pipeline(
    family: &BoxFamily,
    axis: usize,
    p: u64,
    pad: bool,
    lambda_grid: &[Rational],
    thetas: &[ExactScalar],
    cfg: RatioConfig,
) -> Result<SweepoutOutcome, SweepoutError> {
    if family.mode() != Mode::Discrete {
        return Err(SweepoutError::InvalidPlan("family must be discrete".into()));
    }
    if thetas.len() != family.dim() {
        return Err(SweepoutError::InvalidPlan(format!(
            "need {} rotation numbers, got {}",
            family.dim(),
            thetas.len()
        )));
    }
    let plan = sweepout_plan(family, axis, p, pad, lambda_grid)?;
    let heights: Vec<u64> = plan.tower_heights().iter().map(|h| to_int(h) as u64).collect();
    let tower = Tower::Discrete(product_tower(thetas, &heights, 0.5)?);
    let verification = verify_tower(&tower, cfg.seed);
    if !verification.disjoint {
        return Err(SweepoutError::InvalidPlan("tower levels overlap".into()));
    }
    let sets = build_counterexample_set(&plan, &tower)?;
    let ratio = ratio_check(&plan, &sets, &tower, cfg)?;
    Ok(SweepoutOutcome {
        plan,
        tower,
        verification,
        sets,
        ratio,
    })
}

/// `γ = 1 / max_i (tower side i)`, the largest scale at which the tower fits.
pub fn fitting_gamma(plan: &SweepoutPlan) -> ExactScalar {
    let m = plan.tower_heights().into_iter().max().expect("nonempty heights");
    to_exact(&(Rational::one() / m))
}

/// Plan, suspension tower, sets and ratio for a continuous family.
pub fn continuous_pipeline(
    family: &BoxFamily,
    axis: usize,
    p: u64,
    lambda_grid: &[Rational],
    gamma: Option<ExactScalar>,
    seed: u64,
) -> Result<SweepoutOutcome, SweepoutError> {
    if family.mode() != Mode::Continuous {
        return Err(SweepoutError::InvalidPlan("family must be continuous".into()));
    }
    let plan = sweepout_plan(family, axis, p, false, lambda_grid)?;
    let gamma = gamma.unwrap_or_else(|| fitting_gamma(&plan));
    if gamma.sign() != Ordering::Greater {
        return Err(SweepoutError::InvalidPlan("gamma must be positive".into()));
    }
    let sys = standard_suspension(family.dim(), gamma)?;
    let sides: Vec<ExactScalar> = plan.tower_heights().iter().map(to_exact).collect();
    let tower = Tower::Suspension(suspension_tower(&sys, &sides)?);
    let verification = verify_tower(&tower, seed);
    let sets = build_counterexample_set(&plan, &tower)?;
    let cfg = RatioConfig {
        samples: 0,
        seed,
        ..RatioConfig::default()
    };
    let ratio = ratio_check(&plan, &sets, &tower, cfg)?;
    Ok(SweepoutOutcome {
        plan,
        tower,
        verification,
        sets,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::family_from_str;

    fn grid() -> Vec<Rational> {
        default_lambda_grid(32)
    }

    #[test]
    fn squares_plans() {
        let fam = family_from_str("squares_unit", 200).unwrap();
        let p1 = sweepout_plan(&fam, 0, 1, true, &grid()).unwrap();
        assert_eq!(p1.lambda, Rational::one());
        assert_eq!(p1.k_p, 5);
        assert_eq!(p1.delta.lattice_points(), vec![1, 4, 9, 16, 25]);
        assert_eq!(p1.heights[0], Rational::from_integer(28));
        let unpadded = sweepout_plan(&fam, 0, 1, false, &grid()).unwrap();
        assert_eq!(unpadded.heights[0], Rational::from_integer(27));
        let p3 = sweepout_plan(&fam, 0, 3, true, &grid()).unwrap();
        assert_eq!(p3.k_p, 15);
        assert_eq!(p3.delta.sup(), Some(Rational::from_integer(225)));
        assert_eq!(p3.heights[0], Rational::from_integer(228));
    }

    #[test]
    fn holding_family_has_no_witness() {
        let fam = family_from_str("linear:r=2", 500).unwrap();
        assert!(matches!(
            sweepout_plan(&fam, 0, 1, true, &grid()),
            Err(SweepoutError::NoWitness { .. })
        ));
    }

    #[test]
    fn discrete_ratio() {
        let fam = family_from_str("squares_unit", 200).unwrap();
        for p in 1..=3u64 {
            let cfg = RatioConfig {
                samples: 2000,
                ..RatioConfig::default()
            };
            let out = discrete_pipeline(&fam, 0, p, true, &grid(), &[ExactScalar::golden()], cfg).unwrap();
            assert!(out.sets.formula_holds);
            assert!(out.ratio.translates_disjoint);
            assert!(out.ratio.containment_holds);
            assert_eq!(out.ratio.ratio, ExactScalar::from_integer(p as i64));
            assert!(out.ratio.holds_three);
            assert_eq!(out.ratio.witness.as_ref().unwrap().value, ExactScalar::one());
            assert!(out.ratio.sampled.as_ref().unwrap().consistent);
        }
    }

    #[test]
    fn full_tower_degenerate() {
        // one box (k², 1) with k = 5 has Δ = {25}; with λ = 6 the block covers everything
        let fam = BoxFamily::explicit(Mode::Discrete, vec![BoxEntry::from_ints(&[0], &[1]); 30]).unwrap();
        let g = [Rational::from_integer(1)];
        assert!(sweepout_plan(&fam, 0, 1, true, &g).is_err());
    }

    #[test]
    fn continuous_measure_formula() {
        let fam = family_from_str("flat_piece:m=1", 64).unwrap();
        let out = continuous_pipeline(&fam, 0, 1, &grid(), None, 5).unwrap();
        assert!(out.sets.formula_holds);
        assert!(out.ratio.containment_holds);
        assert!(out.ratio.holds_three);
        assert_eq!(out.ratio.witness.as_ref().unwrap().value, ExactScalar::one());
        assert!(!out.ratio.clipped);
    }
}
