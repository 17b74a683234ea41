//! Tensor midpoint quadrature with dyadic refinement.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureReport {
    /// Mean of the integrand over the box.
    pub value: Complex64,
    pub error_estimate: f64,
    pub points_per_axis: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Parameters of the refinement loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidpointRule {
    pub initial: usize,
    pub max_evaluations: usize,
    pub tolerance: f64,
    /// Richardson-extrapolate successive levels (valid for smooth integrands).
    pub extrapolate: bool,
    /// Levels computed before convergence may be declared.
    pub min_levels: usize,
}

impl Default for MidpointRule {
    fn default() -> Self {
        Self {
            initial: 4,
            max_evaluations: 1 << 22,
            tolerance: 1e-9,
            extrapolate: true,
            min_levels: 3,
        }
    }
}

fn midpoint_mean<F>(f: &F, lo: &[f64], len: &[f64], n: usize) -> Complex64
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let d = lo.len();
    let h: Vec<f64> = len.iter().map(|l| l / n as f64).collect();
    let inner = n.pow(d as u32 - 1);
    let rows: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|i0| {
            let mut t = vec![0.0; d];
            t[0] = lo[0] + (i0 as f64 + 0.5) * h[0];
            let mut idx = vec![0usize; d];
            let mut sum = Complex64::new(0.0, 0.0);
            let mut comp = Complex64::new(0.0, 0.0);
            for _ in 0..inner {
                for a in 1..d {
                    t[a] = lo[a] + (idx[a] as f64 + 0.5) * h[a];
                }
                let v = f(&t);
                // Neumaier summation, componentwise
                for (s, c, x) in [(&mut sum.re, &mut comp.re, v.re), (&mut sum.im, &mut comp.im, v.im)] {
                    let u = *s + x;
                    *c += if s.abs() >= x.abs() { (*s - u) + x } else { (x - u) + *s };
                    *s = u;
                }
                for a in (1..d).rev() {
                    idx[a] += 1;
                    if idx[a] < n {
                        break;
                    }
                    idx[a] = 0;
                }
            }
            sum + comp
        })
        .collect();
    let total: Complex64 = rows.iter().sum();
    total / (n as f64).powi(d as i32)
}

/// Mean of `f` over `∏ [lo_i, lo_i + len_i)` by refining the midpoint rule
/// until two successive (extrapolated) levels differ by less than the
/// tolerance or the evaluation budget is exhausted.
pub fn midpoint_mean_refined<F>(f: F, lo: &[f64], len: &[f64], rule: MidpointRule) -> QuadratureReport
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    assert!(!lo.is_empty() && lo.len() == len.len());
    let d = lo.len() as u32;
    let mut n = rule.initial.max(1);
    let mut table: Vec<Vec<Complex64>> = Vec::new();
    let mut evaluations = 0usize;
    let mut best = Complex64::new(0.0, 0.0);
    let mut error = f64::INFINITY;
    loop {
        let cost = n.checked_pow(d).unwrap_or(usize::MAX);
        if !table.is_empty() && evaluations.saturating_add(cost) > rule.max_evaluations {
            break;
        }
        evaluations += cost;
        let m = midpoint_mean(&f, lo, len, n);
        let mut row = vec![m];
        if rule.extrapolate {
            if let Some(prev) = table.last() {
                let mut factor = 1.0;
                for j in 0..prev.len() {
                    factor *= 4.0;
                    let r = row[j] + (row[j] - prev[j]) / (factor - 1.0);
                    row.push(r);
                }
            }
        }
        let current = *row.last().expect("nonempty row");
        if !table.is_empty() {
            error = (current - best).norm();
            if !rule.extrapolate {
                // first-order convergence for discontinuous integrands
                error *= 2.0;
            }
        }
        best = current;
        table.push(row);
        if table.len() >= rule.min_levels.max(2) && error < rule.tolerance {
            return QuadratureReport {
                value: best,
                error_estimate: error,
                points_per_axis: n,
                evaluations,
                converged: true,
            };
        }
        n *= 2;
    }
    QuadratureReport {
        value: best,
        error_estimate: error,
        points_per_axis: n / 2,
        evaluations,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn oscillatory_closed_form() {
        let c = [3.7, -2.2];
        let f = |t: &[f64]| Complex64::from_polar(1.0, TAU * (c[0] * t[0] + c[1] * t[1]));
        let r = midpoint_mean_refined(f, &[0.5, 1.0], &[2.0, 1.5], MidpointRule::default());
        let mut exact = Complex64::from_polar(1.0, TAU * (c[0] * 0.5 + c[1] * 1.0));
        for (ci, si) in c.iter().zip([2.0, 1.5]) {
            let z = Complex64::new(0.0, TAU * ci * si);
            exact *= (z.exp() - 1.0) / z;
        }
        assert!(r.converged);
        assert!((r.value - exact).norm() < 1e-8, "{:?} vs {exact:?}", r.value);
    }

    #[test]
    fn constants_are_exact() {
        let r = midpoint_mean_refined(|_| Complex64::new(2.5, 0.0), &[0.0], &[3.0], MidpointRule::default());
        assert_eq!(r.value, Complex64::new(2.5, 0.0));
    }
}
