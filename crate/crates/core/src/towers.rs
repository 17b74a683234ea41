//! Explicit Rokhlin towers with exact certificates.
//!
//! Discrete towers for irrational rotations use the simple base
//! `[0, min_{0<j<N} ‖jθ‖)`; products of such towers serve `Z^d` products.
//! For the canonical suspension the tower over the circle fiber
//! `{(0, …, 0, x)}` with side lengths `L_i` has image
//! `Y = ∏ [0, γ L_i) × T`.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::exact_from_f64;
use crate::exact::ExactScalar;
use crate::systems::{SystemError, TorusBox, TorusSet, TorusSystem};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TowerError {
    #[error("rotation number {0} is rational")]
    RationalRotation(String),
    #[error("coverage {achieved} is below the target {target}")]
    UnachievableCoverage { achieved: String, target: String },
    #[error("side {axis}: gamma * L = {value} exceeds 1")]
    WrapViolation { axis: usize, value: String },
    #[error("tower needs the canonical suspension")]
    NotCanonical,
    #[error("invalid tower parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Translates `T^j B`, `j ∈ ∏ [0, N_i)`, of a base under a `Z^d` rotation.
#[derive(Debug, Clone)]
pub struct DiscreteTower {
    system: TorusSystem,
    base: TorusSet,
    heights: Vec<u64>,
    target: ExactScalar,
    /// One-dimensional factors when the tower is a product.
    factors: Option<Vec<(ExactScalar, TorusSet)>>,
}

/// Tower of the canonical suspension over the last-coordinate circle.
#[derive(Debug, Clone)]
pub struct SuspensionTower {
    system: TorusSystem,
    gamma: ExactScalar,
    shear: Vec<ExactScalar>,
    sides: Vec<ExactScalar>,
}

#[derive(Debug, Clone)]
pub enum Tower {
    Discrete(DiscreteTower),
    Suspension(SuspensionTower),
}

fn simple_base_length(theta: &ExactScalar, n: u64) -> ExactScalar {
    let mut best = ExactScalar::one();
    let mut multiple = theta.clone();
    for _ in 1..n {
        let d = multiple.dist_to_int();
        if d < best {
            best = d;
        }
        multiple = &multiple + theta;
    }
    best
}

fn delta_target(delta: f64) -> Result<ExactScalar, TowerError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TowerError::InvalidParameter(format!("delta {delta} not in (0,1)")));
    }
    Ok(&ExactScalar::one() - &exact_from_f64(delta))
}

/// Tower of height `n` for the rotation by `θ` with base `[0, min_{0<j<n} ‖jθ‖)`.
pub fn rotation_tower(theta: &ExactScalar, n: u64, delta: f64) -> Result<DiscreteTower, TowerError> {
    product_tower(std::slice::from_ref(theta), &[n], delta)
}

/// Product of one-dimensional rotation towers on `T^d`.
pub fn product_tower(thetas: &[ExactScalar], heights: &[u64], delta: f64) -> Result<DiscreteTower, TowerError> {
    if thetas.is_empty() || thetas.len() != heights.len() {
        return Err(TowerError::InvalidParameter("one height per rotation".into()));
    }
    if let Some(&n) = heights.iter().find(|&&n| n == 0) {
        return Err(TowerError::InvalidParameter(format!("height {n}")));
    }
    if let Some(t) = thetas.iter().find(|t| t.is_rational()) {
        return Err(TowerError::RationalRotation(t.to_string()));
    }
    let target = delta_target(delta)?;
    let d = thetas.len();
    let generators = (0..d)
        .map(|i| {
            let mut g = vec![ExactScalar::zero(); d];
            g[i] = thetas[i].clone();
            g
        })
        .collect();
    let system = TorusSystem::rotation(generators)?;
    let factors: Vec<(ExactScalar, TorusSet)> = thetas
        .iter()
        .zip(heights)
        .map(|(t, &n)| (t.clone(), TorusSet::interval(ExactScalar::zero(), simple_base_length(t, n))))
        .collect();
    let base = factors
        .iter()
        .skip(1)
        .fold(factors[0].1.clone(), |acc, (_, b)| acc.product(b));
    Ok(DiscreteTower {
        system,
        base,
        heights: heights.to_vec(),
        target,
        factors: Some(factors),
    })
}

impl DiscreteTower {
    pub fn system(&self) -> &TorusSystem {
        &self.system
    }

    pub fn base(&self) -> &TorusSet {
        &self.base
    }

    pub fn heights(&self) -> &[u64] {
        &self.heights
    }

    pub fn level_count(&self) -> u64 {
        self.heights.iter().product()
    }

    /// `(∏ N_i) · μ(B)`.
    pub fn coverage(&self) -> ExactScalar {
        let n: u64 = self.level_count();
        &ExactScalar::from_integer(n as i64) * &self.base.measure()
    }

    pub fn meets_target(&self) -> bool {
        self.coverage() >= self.target
    }

    /// Fails with [`TowerError::UnachievableCoverage`] below `1 − δ`.
    pub fn ensure_coverage(&self) -> Result<(), TowerError> {
        if self.meets_target() {
            Ok(())
        } else {
            Err(TowerError::UnachievableCoverage {
                achieved: self.coverage().to_string(),
                target: self.target.to_string(),
            })
        }
    }

    /// The same tower with another base; nothing is re-certified.
    pub fn with_base(&self, base: TorusSet) -> DiscreteTower {
        DiscreteTower {
            base,
            factors: None,
            ..self.clone()
        }
    }

    /// `T^j B`.
    pub fn level(&self, j: &[i64]) -> TorusSet {
        let t: Vec<ExactScalar> = j.iter().map(|&v| ExactScalar::from_integer(v)).collect();
        self.system.image(&self.base, &t).expect("dimensions match")
    }

    /// Union of levels `j ∈ ∏ [lo_i, hi_i)`; exact, assumes a verified tower
    /// only for speed in the product case.
    pub fn levels_union(&self, lo: &[i64], hi: &[i64]) -> TorusSet {
        if let Some(factors) = &self.factors {
            let sets: Vec<TorusSet> = factors
                .iter()
                .enumerate()
                .map(|(i, (theta, b))| {
                    let parts: Vec<TorusSet> = (lo[i]..hi[i])
                        .map(|j| b.translate(&[&ExactScalar::from_integer(j) * theta]))
                        .collect();
                    TorusSet::union_all(1, &parts)
                })
                .collect();
            return sets.iter().skip(1).fold(sets[0].clone(), |acc, s| acc.product(s));
        }
        let mut parts = Vec::new();
        let mut j = lo.to_vec();
        if lo.iter().zip(hi).any(|(a, b)| a >= b) {
            return TorusSet::empty(self.base.dim());
        }
        loop {
            parts.push(self.level(&j));
            let mut a = j.len();
            loop {
                if a == 0 {
                    return TorusSet::union_all(self.base.dim(), &parts);
                }
                a -= 1;
                j[a] += 1;
                if j[a] < hi[a] {
                    break;
                }
                j[a] = lo[a];
            }
        }
    }
}

impl SuspensionTower {
    pub fn system(&self) -> &TorusSystem {
        &self.system
    }

    pub fn gamma(&self) -> &ExactScalar {
        &self.gamma
    }

    pub fn sides(&self) -> &[ExactScalar] {
        &self.sides
    }

    /// `μ(Y) = ∏ γ L_i`.
    pub fn y_measure(&self) -> ExactScalar {
        self.sides.iter().fold(ExactScalar::one(), |acc, l| &acc * &(&self.gamma * l))
    }

    /// Weight of the transversal measure `ν_B` relative to arc length: `γ^d`.
    pub fn transversal_weight(&self) -> ExactScalar {
        self.sides.iter().fold(ExactScalar::one(), |acc, _| &acc * &self.gamma)
    }

    /// `{U_t x : x ∈ B, t ∈ ∏ [lo_i, hi_i)}` for a parameter box inside the tower.
    pub fn chart_box(&self, lo: &[ExactScalar], hi: &[ExactScalar]) -> Result<TorusSet, TowerError> {
        let d = self.sides.len();
        if lo.len() != d || hi.len() != d {
            return Err(TowerError::InvalidParameter("parameter box dimension".into()));
        }
        let mut start = Vec::with_capacity(d + 1);
        let mut len = Vec::with_capacity(d + 1);
        for i in 0..d {
            let zero = ExactScalar::zero();
            if lo[i] < zero || hi[i] > self.sides[i] {
                return Err(TowerError::InvalidParameter(format!(
                    "parameter box [{}, {}) leaves [0, {}) on axis {}",
                    lo[i],
                    hi[i],
                    self.sides[i],
                    i + 1
                )));
            }
            if lo[i] >= hi[i] {
                return Ok(TorusSet::empty(d + 1));
            }
            start.push(&self.gamma * &lo[i]);
            len.push(&self.gamma * &(&hi[i] - &lo[i]));
        }
        start.push(ExactScalar::zero());
        len.push(ExactScalar::one());
        Ok(TorusSet::wrapped_box(&start, &len))
    }

    /// `Y`, the image of the whole tower.
    pub fn region(&self) -> TorusSet {
        let zero = vec![ExactScalar::zero(); self.sides.len()];
        self.chart_box(&zero, &self.sides).expect("tower box")
    }

    /// `φ(x, t) = U_t (0, …, 0, x)` in floating point.
    pub fn chart(&self, x: f64, t: &[f64]) -> Vec<f64> {
        let d = self.sides.len();
        let mut p = vec![0.0; d + 1];
        p[d] = x;
        self.system.act_real(&p, t).expect("tower dimensions")
    }

    /// Inverse of [`SuspensionTower::chart`] on `Y`.
    pub fn chart_inverse(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let d = self.sides.len();
        let g = self.gamma.to_f64();
        let t: Vec<f64> = y[..d].iter().map(|v| v / g).collect();
        let shift: f64 = self.shear.iter().zip(&t).map(|(a, ti)| a.to_f64() * ti).sum();
        let x = y[d] - shift;
        (x - x.floor(), t)
    }

    /// Both sides of `∫_Y 1_R dμ = ∫_B ∫_{∏[0,L_i)} 1_R(U_t x) dt dν_B(x)`
    /// for a box `R = ∏ [lo_c, hi_c) ⊂ [0,1]^{d+1}`.
    pub fn product_formula(&self, lo: &[ExactScalar], hi: &[ExactScalar]) -> (ExactScalar, ExactScalar) {
        let d = self.sides.len();
        let len: Vec<ExactScalar> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
        let r = TorusSet::wrapped_box(lo, &len);
        let lhs = r.intersection(&self.region()).measure();
        // inner integral over x first: each t contributes hi_{d} − lo_{d}
        let mut rhs = &self.transversal_weight() * &len[d];
        for i in 0..d {
            let cap = &self.gamma * &self.sides[i];
            let top = (&hi[i]).min(&cap).clone();
            let span = &top - &lo[i];
            if span.sign() != Ordering::Greater {
                return (lhs, ExactScalar::zero());
            }
            rhs = &rhs * &span.checked_div(&self.gamma).expect("gamma > 0");
        }
        (lhs, rhs)
    }
}

/// Tower of the canonical suspension with side lengths `L_i` (`γ L_i ≤ 1`).
pub fn suspension_tower(system: &TorusSystem, sides: &[ExactScalar]) -> Result<SuspensionTower, TowerError> {
    let canon = system.canonical().ok_or(TowerError::NotCanonical)?;
    if sides.len() != canon.shear.len() {
        return Err(TowerError::InvalidParameter("one side per flow direction".into()));
    }
    for (i, l) in sides.iter().enumerate() {
        if l.sign() != Ordering::Greater {
            return Err(TowerError::InvalidParameter(format!("side {} must be positive", i + 1)));
        }
        let v = &canon.gamma * l;
        if v > ExactScalar::one() {
            return Err(TowerError::WrapViolation {
                axis: i + 1,
                value: v.to_string(),
            });
        }
    }
    Ok(SuspensionTower {
        system: system.clone(),
        gamma: canon.gamma.clone(),
        shear: canon.shear.clone(),
        sides: sides.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerVerification {
    pub kind: String,
    pub disjoint: bool,
    /// Two overlapping levels, if any.
    pub witness: Option<(Vec<i64>, Vec<i64>)>,
    pub levels: u64,
    pub pairs_checked: u64,
    /// `exhaustive` or `factorwise`.
    pub method: String,
    pub coverage: ExactScalar,
    pub coverage_value: f64,
    /// Exact measure of the union of levels, when computed.
    pub union_measure: Option<ExactScalar>,
    pub meets_target: Option<bool>,
    pub injective: Option<bool>,
    pub spot_checks: usize,
    pub spot_failures: usize,
}

/// Exhaustive checks are used up to this many levels.
const EXHAUSTIVE_LIMIT: u64 = 20_000;

fn unravel(mut i: u64, heights: &[u64]) -> Vec<i64> {
    let mut j = vec![0i64; heights.len()];
    for a in (0..heights.len()).rev() {
        j[a] = (i % heights[a]) as i64;
        i /= heights[a];
    }
    j
}

/// Sweep over boxes sorted along the first coordinate; exact checks on
/// candidate pairs whose float projections overlap.
fn sweep_disjoint(boxes: &[(usize, TorusBox, f64, f64)]) -> (u64, Option<(usize, usize)>) {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[a].2.total_cmp(&boxes[b].2));
    let mut active: Vec<usize> = Vec::new();
    let mut checked = 0u64;
    const SLACK: f64 = 1e-9;
    for &i in &order {
        let (li, bi, lo, _) = &boxes[i];
        active.retain(|&a| boxes[a].3 + SLACK > *lo);
        for &a in &active {
            let (la, ba, _, _) = &boxes[a];
            if la == li {
                continue;
            }
            checked += 1;
            if ba.intersect(bi).is_some() {
                return (checked, Some((*la.min(li), *la.max(li))));
            }
        }
        active.push(i);
    }
    (checked, None)
}

/// Below this many levels every pair of levels is compared.
const ALL_PAIRS_LIMIT: u64 = 256;

fn all_pairs_disjoint(boxes: &[(usize, TorusBox, f64, f64)], levels: usize) -> (u64, Option<(usize, usize)>) {
    let mut by_level: Vec<Vec<&TorusBox>> = vec![Vec::new(); levels];
    for (l, b, _, _) in boxes {
        by_level[*l].push(b);
    }
    let mut checked = 0u64;
    for a in 0..levels {
        for b in a + 1..levels {
            checked += 1;
            let hit = by_level[a]
                .iter()
                .any(|x| by_level[b].iter().any(|y| x.intersect(y).is_some()));
            if hit {
                return (checked, Some((a, b)));
            }
        }
    }
    (checked, None)
}

fn verify_discrete(tower: &DiscreteTower) -> TowerVerification {
    let levels = tower.level_count();
    let coverage = tower.coverage();
    let mut report = TowerVerification {
        kind: "discrete".into(),
        disjoint: true,
        witness: None,
        levels,
        pairs_checked: 0,
        method: "exhaustive".into(),
        coverage_value: coverage.to_f64(),
        coverage,
        union_measure: None,
        meets_target: Some(tower.meets_target()),
        injective: None,
        spot_checks: 0,
        spot_failures: 0,
    };
    if levels > EXHAUSTIVE_LIMIT {
        if let Some(factors) = &tower.factors {
            // disjointness of a product of towers follows from its factors
            report.method = "factorwise".into();
            for (i, (theta, base)) in factors.iter().enumerate() {
                let sys = TorusSystem::rotation(vec![vec![theta.clone()]]).expect("irrational factor");
                let f = DiscreteTower {
                    system: sys,
                    base: base.clone(),
                    heights: vec![tower.heights[i]],
                    target: ExactScalar::zero(),
                    factors: None,
                };
                let r = verify_discrete(&f);
                report.pairs_checked += r.pairs_checked;
                if !r.disjoint {
                    report.disjoint = false;
                    report.witness = r.witness.map(|(a, b)| {
                        let mut ja = vec![0; tower.heights.len()];
                        let mut jb = ja.clone();
                        ja[i] = a[0];
                        jb[i] = b[0];
                        (ja, jb)
                    });
                    break;
                }
            }
            return report;
        }
    }
    let mut boxes = Vec::new();
    let mut sets = Vec::new();
    for i in 0..levels {
        let j = unravel(i, &tower.heights);
        let level = tower.level(&j);
        for b in level.boxes() {
            let lo = b.lo[0].to_f64();
            let hi = b.hi[0].to_f64();
            boxes.push((i as usize, b.clone(), lo, hi));
        }
        if tower.base.dim() == 1 {
            sets.push(level);
        }
    }
    let (checked, witness) = if levels <= ALL_PAIRS_LIMIT {
        all_pairs_disjoint(&boxes, levels as usize)
    } else {
        sweep_disjoint(&boxes)
    };
    report.pairs_checked = checked;
    if let Some((a, b)) = witness {
        report.disjoint = false;
        report.witness = Some((unravel(a as u64, &tower.heights), unravel(b as u64, &tower.heights)));
    }
    if tower.base.dim() == 1 {
        report.union_measure = Some(TorusSet::union_all(1, &sets).measure());
    }
    report
}

fn verify_suspension(tower: &SuspensionTower, seed: u64, spot_checks: usize) -> TowerVerification {
    // φ(x, t) determines t from the first d coordinates (γ t_i ∈ [0, γ L_i) ⊂ [0, 1))
    // and then x from the last one, so φ is injective exactly when γ > 0 and γ L_i ≤ 1.
    let one = ExactScalar::one();
    let injective = tower.gamma.sign() == Ordering::Greater && tower.sides.iter().all(|l| &tower.gamma * l <= one);
    let d = tower.sides.len();
    let sides: Vec<f64> = tower.sides.iter().map(ExactScalar::to_f64).collect();
    let g = tower.gamma.to_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    for _ in 0..spot_checks {
        let x: f64 = rng.gen();
        let t: Vec<f64> = sides.iter().map(|l| rng.gen::<f64>() * l).collect();
        let y = tower.chart(x, &t);
        let (x2, t2) = tower.chart_inverse(&y);
        let dx = (x2 - x).abs();
        let circle = dx.min(1.0 - dx);
        let inside = (0..d).all(|i| y[i] < g * sides[i] + 1e-12);
        if circle > 1e-9 || t.iter().zip(&t2).any(|(a, b)| (a - b).abs() > 1e-7) || !inside {
            failures += 1;
        }
    }
    let coverage = tower.y_measure();
    TowerVerification {
        kind: "suspension".into(),
        disjoint: injective,
        witness: None,
        levels: 0,
        pairs_checked: 0,
        method: "symbolic".into(),
        coverage_value: coverage.to_f64(),
        union_measure: Some(tower.region().measure()),
        coverage,
        meets_target: None,
        injective: Some(injective && failures == 0),
        spot_checks,
        spot_failures: failures,
    }
}

/// Certifies a tower; violations are reported, never raised.
pub fn verify_tower(tower: &Tower, seed: u64) -> TowerVerification {
    match tower {
        Tower::Discrete(t) => verify_discrete(t),
        Tower::Suspension(t) => verify_suspension(t, seed, 10_000),
    }
}
