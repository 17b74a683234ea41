//! Bounded observables on the torus.

use std::f64::consts::TAU;

use num_complex::Complex64;

use super::set::TorusSet;
use crate::exact::ExactScalar;

/// An indicator together with floating-point box bounds for sampling.
#[derive(Debug, Clone)]
pub struct IndicatorSet {
    set: TorusSet,
    approx: Vec<Vec<(f64, f64)>>,
}

impl IndicatorSet {
    pub fn new(set: TorusSet) -> Self {
        let approx = set.approx_boxes();
        Self { set, approx }
    }

    pub fn set(&self) -> &TorusSet {
        &self.set
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.approx
            .iter()
            .any(|b| b.iter().zip(x).all(|(&(l, h), &v)| l <= v && v < h))
    }
}

#[derive(Debug, Clone)]
pub enum Observable {
    /// `x ↦ e^{2πi ξ·x}`
    Character { freq: Vec<i64> },
    Indicator(IndicatorSet),
    /// `Σ c_ξ e^{2πi ξ·x}`; a single zero-frequency term is a constant.
    TrigPoly { terms: Vec<(Vec<i64>, Complex64)> },
}

impl Observable {
    pub fn character(freq: Vec<i64>) -> Self {
        Observable::Character { freq }
    }

    pub fn indicator(set: TorusSet) -> Self {
        Observable::Indicator(IndicatorSet::new(set))
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Observable::TrigPoly {
            terms: vec![(vec![0; dim], Complex64::new(c, 0.0))],
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Observable::Character { freq } => Some(freq.len()),
            Observable::Indicator(s) => Some(s.set.dim()),
            Observable::TrigPoly { terms } => terms.first().map(|t| t.0.len()),
        }
    }

    pub fn is_indicator(&self) -> bool {
        matches!(self, Observable::Indicator(_))
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        match self {
            Observable::Character { freq } => character_at(freq, x),
            Observable::Indicator(s) => Complex64::new(if s.contains(x) { 1.0 } else { 0.0 }, 0.0),
            Observable::TrigPoly { terms } => terms.iter().map(|(xi, c)| c * character_at(xi, x)).sum(),
        }
    }

    /// Sup norm bound used in error estimates.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Observable::Character { .. } => 1.0,
            Observable::Indicator(s) => {
                if s.set.is_empty() {
                    0.0
                } else {
                    1.0
                }
            }
            Observable::TrigPoly { terms } => terms.iter().map(|(_, c)| c.norm()).sum(),
        }
    }

    /// The space mean `μ(f)`.
    pub fn mean(&self) -> Complex64 {
        match self {
            Observable::Character { freq } => {
                if freq.iter().all(|&k| k == 0) {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            Observable::Indicator(s) => Complex64::new(s.set.measure().to_f64(), 0.0),
            Observable::TrigPoly { terms } => terms
                .iter()
                .filter(|(xi, _)| xi.iter().all(|&k| k == 0))
                .map(|(_, c)| *c)
                .sum(),
        }
    }

    /// Exact mean for indicators.
    pub fn exact_mean(&self) -> Option<ExactScalar> {
        match self {
            Observable::Indicator(s) => Some(s.set.measure()),
            _ => None,
        }
    }
}

#[inline]
pub fn character_at(freq: &[i64], x: &[f64]) -> Complex64 {
    let phase: f64 = freq.iter().zip(x).map(|(&k, &v)| k as f64 * v).sum();
    let phase = phase - phase.floor();
    Complex64::from_polar(1.0, TAU * phase)
}
