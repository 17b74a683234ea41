//! Concrete measure-preserving systems on the torus.
//!
//! Two kinds of action are provided, both by translations on `T^m` with
//! Lebesgue measure:
//!
//! * `Z^d` rotations `T^j x = x + Σ j_i θ_i (mod 1)`;
//! * `R^d` linear flows `U_t x = x + Θ t (mod 1)`, in particular the
//!   canonical suspension `Θ = [[γ I_d], [a_1 … a_d]]` on `T^{d+1}`.
//!
//! Ergodicity and aperiodicity are decided exactly from the irrational
//! parts of the translation data (rank computations over Q).

mod observable;
mod set;

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use observable::{character_at, IndicatorSet, Observable};
pub use set::{TorusBox, TorusSet};

use crate::exact::ExactScalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SystemError {
    #[error("uncertifiable parameters: {0}")]
    UncertifiableParameters(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("a rotation needs integer exponents")]
    NonIntegerExponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Rotation,
    Flow,
}

/// Canonical suspension data `Θ = [[γ I_d], [a_1 … a_d]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSuspension {
    pub gamma: ExactScalar,
    pub shear: Vec<ExactScalar>,
}

#[derive(Debug, Clone)]
pub struct TorusSystem {
    kind: SystemKind,
    torus_dim: usize,
    /// `translations[j]` is the image of the `j`-th unit exponent.
    translations: Vec<Vec<ExactScalar>>,
    approx: Vec<Vec<f64>>,
    canonical: Option<CanonicalSuspension>,
    ergodic: bool,
    aperiodic: bool,
}

/// Serializable description of a system; exact values are strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    /// `Z^d` acting on `T^m` by the listed generator vectors.
    Rotation { generators: Vec<Vec<String>> },
    /// `Z^d` acting on `T^d` coordinatewise: `T_i` rotates coordinate `i` by `θ_i`.
    ProductRotation { theta: Vec<String> },
    /// Canonical suspension of `R^d` on `T^{d+1}`.
    Suspension { gamma: String, shear: Vec<String> },
}

fn parse_exact(s: &str) -> Result<ExactScalar, SystemError> {
    s.parse()
        .map_err(|e| SystemError::UncertifiableParameters(format!("{s:?}: {e}")))
}

/// Rank over Q of a rational matrix.
#[allow(clippy::needless_range_loop)]
pub fn rational_rank(mut rows: Vec<Vec<BigRational>>) -> usize {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..ncols {
        let Some(pivot) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, pivot);
        let p = rows[rank][col].clone();
        for r in 0..rows.len() {
            if r != rank && !rows[r][col].is_zero() {
                let factor = &rows[r][col] / &p;
                for c in col..ncols {
                    let delta = &factor * &rows[rank][c];
                    rows[r][c] -= delta;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn irrational_radicands<'a>(values: impl Iterator<Item = &'a ExactScalar>) -> Vec<u64> {
    let mut rs: Vec<u64> = values.flat_map(|v| v.terms().map(|(r, _)| r)).filter(|&r| r != 1).collect();
    rs.sort_unstable();
    rs.dedup();
    rs
}

impl TorusSystem {
    fn build(
        kind: SystemKind,
        torus_dim: usize,
        translations: Vec<Vec<ExactScalar>>,
        canonical: Option<CanonicalSuspension>,
        ergodic: bool,
        aperiodic: bool,
    ) -> Self {
        let approx = translations
            .iter()
            .map(|v| v.iter().map(ExactScalar::to_f64).collect())
            .collect();
        Self {
            kind,
            torus_dim,
            translations,
            approx,
            canonical,
            ergodic,
            aperiodic,
        }
    }

    /// `Z^d` rotation by generator vectors `θ_1 … θ_d ∈ T^m`.
    pub fn rotation(generators: Vec<Vec<ExactScalar>>) -> Result<Self, SystemError> {
        let m = generators
            .first()
            .map(Vec::len)
            .ok_or_else(|| SystemError::UncertifiableParameters("no generators".into()))?;
        if m == 0 {
            return Err(SystemError::UncertifiableParameters("torus dimension must be positive".into()));
        }
        for g in &generators {
            if g.len() != m {
                return Err(SystemError::DimensionMismatch {
                    expected: m,
                    got: g.len(),
                });
            }
        }
        let d = generators.len();
        let radicands = irrational_radicands(generators.iter().flatten());
        // ξ·θ_i ∈ Z for all i has a nonzero solution iff the irrational
        // parts admit a nonzero rational kernel vector ξ.
        let mut erg_rows = Vec::new();
        for g in &generators {
            for &r in &radicands {
                erg_rows.push(g.iter().map(|v| v.coefficient(r)).collect::<Vec<_>>());
            }
        }
        let ergodic = rational_rank(erg_rows) == m;
        // Σ a_i θ_i ∈ Z^m has a nonzero integer solution iff the same holds
        // for the transposed system.
        let mut ap_rows = Vec::new();
        for c in 0..m {
            for &r in &radicands {
                ap_rows.push(generators.iter().map(|g| g[c].coefficient(r)).collect::<Vec<_>>());
            }
        }
        let aperiodic = rational_rank(ap_rows) == d;
        Ok(Self::build(SystemKind::Rotation, m, generators, None, ergodic, aperiodic))
    }

    /// Canonical suspension `Θ = [[γ I_d], [a_1 … a_d]]` on `T^{d+1}`.
    pub fn suspension(gamma: ExactScalar, shear: Vec<ExactScalar>) -> Result<Self, SystemError> {
        if gamma.sign() != Ordering::Greater {
            return Err(SystemError::UncertifiableParameters("gamma must be positive".into()));
        }
        let d = shear.len();
        if d == 0 {
            return Err(SystemError::UncertifiableParameters("suspension needs d >= 1".into()));
        }
        let ratios: Vec<ExactScalar> = shear.iter().map(|a| a / &gamma).collect();
        let radicands = irrational_radicands(ratios.iter());
        // ergodic iff some a_j/γ is irrational; aperiodic iff 1, a_1/γ, …,
        // a_d/γ are linearly independent over Q
        let ergodic = ratios.iter().any(|r| !r.is_rational());
        let rows: Vec<Vec<BigRational>> = radicands
            .iter()
            .map(|&r| ratios.iter().map(|v| v.coefficient(r)).collect())
            .collect();
        let aperiodic = rational_rank(rows) == d;
        let m = d + 1;
        let translations = (0..d)
            .map(|j| {
                let mut col = vec![ExactScalar::zero(); m];
                col[j] = gamma.clone();
                col[d] = shear[j].clone();
                col
            })
            .collect();
        Ok(Self::build(
            SystemKind::Flow,
            m,
            translations,
            Some(CanonicalSuspension { gamma, shear }),
            ergodic,
            aperiodic,
        ))
    }

    /// The flow `t ↦ U_{W t}` for a rational `d × n` matrix `W`
    /// (`columns[j]` is the `j`-th column). Flags are inherited when `W` is
    /// square and invertible; otherwise the reparametrized flow is reported
    /// as not aperiodic (a nontrivial kernel gives fixed points) and its
    /// ergodicity is left as that of the parent only when `W` has full row rank.
    pub fn reparametrized(&self, columns: &[Vec<BigRational>]) -> Result<Self, SystemError> {
        let d = self.action_dim();
        for c in columns {
            if c.len() != d {
                return Err(SystemError::DimensionMismatch {
                    expected: d,
                    got: c.len(),
                });
            }
        }
        let translations: Vec<Vec<ExactScalar>> = columns
            .iter()
            .map(|col| {
                (0..self.torus_dim)
                    .map(|row| {
                        col.iter()
                            .zip(&self.translations)
                            .map(|(w, t)| t[row].scale(w))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let n = columns.len();
        let rank = rational_rank(columns.to_vec());
        let full_row = rank == d;
        let injective = rank == n;
        Ok(Self::build(
            SystemKind::Flow,
            self.torus_dim,
            translations,
            None,
            self.ergodic && full_row,
            self.aperiodic && injective,
        ))
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn torus_dim(&self) -> usize {
        self.torus_dim
    }

    pub fn action_dim(&self) -> usize {
        self.translations.len()
    }

    pub fn is_ergodic(&self) -> bool {
        self.ergodic
    }

    pub fn is_aperiodic(&self) -> bool {
        self.aperiodic
    }

    pub fn canonical(&self) -> Option<&CanonicalSuspension> {
        self.canonical.as_ref()
    }

    pub fn translations(&self) -> &[Vec<ExactScalar>] {
        &self.translations
    }

    pub fn approx_translations(&self) -> &[Vec<f64>] {
        &self.approx
    }

    /// `Σ_j t_j · translations[j]` (not reduced).
    pub fn displacement(&self, t: &[ExactScalar]) -> Result<Vec<ExactScalar>, SystemError> {
        self.check_exponent(t.len())?;
        Ok((0..self.torus_dim)
            .map(|c| t.iter().zip(&self.translations).map(|(s, v)| s * &v[c]).sum())
            .collect())
    }

    fn check_exponent(&self, len: usize) -> Result<(), SystemError> {
        if len != self.action_dim() {
            return Err(SystemError::DimensionMismatch {
                expected: self.action_dim(),
                got: len,
            });
        }
        Ok(())
    }

    fn check_point(&self, len: usize) -> Result<(), SystemError> {
        if len != self.torus_dim {
            return Err(SystemError::DimensionMismatch {
                expected: self.torus_dim,
                got: len,
            });
        }
        Ok(())
    }

    /// Exact action on an exact point.
    pub fn act_exact(&self, x: &[ExactScalar], t: &[ExactScalar]) -> Result<Vec<ExactScalar>, SystemError> {
        self.check_point(x.len())?;
        if self.kind == SystemKind::Rotation && t.iter().any(|s| !s.as_rational().is_some_and(|q| q.is_integer())) {
            return Err(SystemError::NonIntegerExponent);
        }
        let disp = self.displacement(t)?;
        Ok(x.iter().zip(&disp).map(|(a, b)| (a + b).fract()).collect())
    }

    /// Lattice action on a floating-point point.
    pub fn act_lattice(&self, x: &[f64], j: &[i64]) -> Result<Vec<f64>, SystemError> {
        self.check_point(x.len())?;
        self.check_exponent(j.len())?;
        let mut out = x.to_vec();
        self.orbit_point_into(x, j, &mut out);
        Ok(out)
    }

    /// Real-exponent action on a floating-point point.
    pub fn act_real(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>, SystemError> {
        self.check_point(x.len())?;
        self.check_exponent(t.len())?;
        if self.kind == SystemKind::Rotation && t.iter().any(|s| s.fract() != 0.0) {
            return Err(SystemError::NonIntegerExponent);
        }
        Ok((0..self.torus_dim)
            .map(|c| {
                let v = x[c] + t.iter().zip(&self.approx).map(|(s, a)| s * a[c]).sum::<f64>();
                v - v.floor()
            })
            .collect())
    }

    /// `frac(x + Σ j_i θ_i)` written into `out`; every lattice kernel uses
    /// this one formula so naive and batched paths see identical points.
    #[inline]
    pub fn orbit_point_into(&self, x: &[f64], j: &[i64], out: &mut [f64]) {
        for c in 0..self.torus_dim {
            let mut v = x[c];
            for (ji, a) in j.iter().zip(&self.approx) {
                let s = *ji as f64 * a[c];
                v += s - s.floor();
            }
            out[c] = v - v.floor();
        }
    }

    /// Preimage `{y : act(y, t) ∈ set}` of a torus set, exact.
    pub fn preimage(&self, set: &TorusSet, t: &[ExactScalar]) -> Result<TorusSet, SystemError> {
        self.check_point(set.dim())?;
        let disp = self.displacement(t)?;
        let neg: Vec<ExactScalar> = disp.iter().map(|v| -v).collect();
        Ok(set.translate(&neg))
    }

    /// Image `act(set, t)` of a torus set, exact.
    pub fn image(&self, set: &TorusSet, t: &[ExactScalar]) -> Result<TorusSet, SystemError> {
        self.check_point(set.dim())?;
        let disp = self.displacement(t)?;
        Ok(set.translate(&disp))
    }
}

/// Builds a system from its description and certifies its flags.
pub fn make_system(spec: &SystemSpec) -> Result<TorusSystem, SystemError> {
    match spec {
        SystemSpec::Rotation { generators } => {
            let gens = generators
                .iter()
                .map(|g| g.iter().map(|s| parse_exact(s)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()?;
            TorusSystem::rotation(gens)
        }
        SystemSpec::ProductRotation { theta } => {
            let d = theta.len();
            let gens = theta
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut g = vec![ExactScalar::zero(); d];
                    g[i] = parse_exact(s)?;
                    Ok(g)
                })
                .collect::<Result<Vec<_>, SystemError>>()?;
            TorusSystem::rotation(gens)
        }
        SystemSpec::Suspension { gamma, shear } => {
            let g = parse_exact(gamma)?;
            let a = shear.iter().map(|s| parse_exact(s)).collect::<Result<Vec<_>, _>>()?;
            TorusSystem::suspension(g, a)
        }
    }
}

/// The standard ergodic, aperiodic canonical suspension of `R^d`:
/// `a_j = γ √q_j` for the first `d` primes `q_j`.
pub fn standard_suspension(d: usize, gamma: ExactScalar) -> Result<TorusSystem, SystemError> {
    const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    if d == 0 || d > PRIMES.len() {
        return Err(SystemError::UncertifiableParameters(format!("unsupported dimension {d}")));
    }
    let shear = PRIMES[..d].iter().map(|&p| &gamma * &ExactScalar::sqrt_int(p)).collect();
    TorusSystem::suspension(gamma, shear)
}

/// Integer as a big rational.
pub fn big(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// `1` as a big rational.
pub fn big_one() -> BigRational {
    BigRational::one()
}
