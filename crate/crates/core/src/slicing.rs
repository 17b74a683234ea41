//! Exact Lebesgue measure of `{s ∈ P : frac(α + β s) ∈ E}` for a parameter
//! box `P ⊂ R^k` (`k ≤ 2`), an affine map into the torus and a torus set `E`.
//!
//! In one parameter the set is a finite union of intervals; in two it is a
//! finite union of convex polygons obtained by clipping `P` against the
//! strips `n + lo_c ≤ α_c + β_c·s < n + hi_c`.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::exact::ExactScalar;
use crate::systems::{TorusBox, TorusSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SliceError {
    #[error("exact slicing supports 1 or 2 parameters, got {0}")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("too many slices ({0}); the parameter box is too long")]
    TooManySlices(usize),
}

/// Torus coordinate `c` as a function of the parameters: `offset + slope·s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineCoord {
    pub offset: ExactScalar,
    pub slope: Vec<ExactScalar>,
}

const MAX_SLICES: usize = 1 << 22;

fn to_i64(n: &BigInt) -> i64 {
    n.to_i64().expect("slice index exceeds i64")
}

/// Integers `n` with `v - n ∈ [lo, hi)` for some `v ∈ [vmin, vmax]`,
/// padded by one on each side.
fn strip_range(vmin: &ExactScalar, vmax: &ExactScalar, lo: &ExactScalar, hi: &ExactScalar) -> (i64, i64) {
    let a = to_i64(&(vmin - hi).floor());
    let b = to_i64(&(vmax - lo).floor());
    (a - 1, b + 1)
}

fn check(coords: &[AffineCoord], set: &TorusSet, lo: &[ExactScalar], hi: &[ExactScalar]) -> Result<usize, SliceError> {
    let k = lo.len();
    if hi.len() != k {
        return Err(SliceError::DimensionMismatch {
            expected: k,
            got: hi.len(),
        });
    }
    if coords.len() != set.dim() {
        return Err(SliceError::DimensionMismatch {
            expected: set.dim(),
            got: coords.len(),
        });
    }
    for c in coords {
        if c.slope.len() != k {
            return Err(SliceError::DimensionMismatch {
                expected: k,
                got: c.slope.len(),
            });
        }
    }
    Ok(k)
}

/// Measure of the parameters in `∏[lo_i, hi_i)` mapped into `set`.
pub fn preimage_measure(
    coords: &[AffineCoord],
    set: &TorusSet,
    lo: &[ExactScalar],
    hi: &[ExactScalar],
) -> Result<ExactScalar, SliceError> {
    match check(coords, set, lo, hi)? {
        1 => Ok(preimage_intervals(coords, set, &lo[0], &hi[0])?
            .iter()
            .map(|(a, b)| b - a)
            .sum()),
        2 => {
            let mut total = ExactScalar::zero();
            for b in set.boxes() {
                for poly in clip_box(coords, b, lo, hi)? {
                    total = &total + &polygon_area(&poly);
                }
            }
            Ok(total)
        }
        k => Err(SliceError::UnsupportedDimension(k)),
    }
}

/// One-parameter case: the preimage as sorted disjoint intervals.
pub fn preimage_intervals(
    coords: &[AffineCoord],
    set: &TorusSet,
    lo: &ExactScalar,
    hi: &ExactScalar,
) -> Result<Vec<(ExactScalar, ExactScalar)>, SliceError> {
    check(coords, set, std::slice::from_ref(lo), std::slice::from_ref(hi))?;
    let mut out = Vec::new();
    if lo >= hi {
        return Ok(out);
    }
    for b in set.boxes() {
        out.extend(box_intervals(coords, b, lo, hi)?);
    }
    out.sort();
    Ok(out)
}

fn intersect_intervals(
    current: &[(ExactScalar, ExactScalar)],
    a: &ExactScalar,
    b: &ExactScalar,
) -> Vec<(ExactScalar, ExactScalar)> {
    current
        .iter()
        .filter_map(|(l, h)| {
            let l2 = l.max(a);
            let h2 = h.min(b);
            (l2 < h2).then(|| (l2.clone(), h2.clone()))
        })
        .collect()
}

fn box_intervals(
    coords: &[AffineCoord],
    b: &TorusBox,
    lo: &ExactScalar,
    hi: &ExactScalar,
) -> Result<Vec<(ExactScalar, ExactScalar)>, SliceError> {
    let mut current = vec![(lo.clone(), hi.clone())];
    for (c, coord) in coords.iter().enumerate() {
        if current.is_empty() {
            break;
        }
        let beta = &coord.slope[0];
        if beta.is_zero() {
            let v = coord.offset.fract();
            if !(b.lo[c] <= v && v < b.hi[c]) {
                current.clear();
            }
            continue;
        }
        let first = current.first().map(|i| i.0.clone()).unwrap_or_else(ExactScalar::zero);
        let last = current.last().map(|i| i.1.clone()).unwrap_or_else(ExactScalar::zero);
        let va = &coord.offset + &(beta * &first);
        let vb = &coord.offset + &(beta * &last);
        let (vmin, vmax) = if va <= vb { (va, vb) } else { (vb, va) };
        let (n0, n1) = strip_range(&vmin, &vmax, &b.lo[c], &b.hi[c]);
        let count = usize::try_from(n1 - n0 + 1).unwrap_or(usize::MAX);
        if count > MAX_SLICES {
            return Err(SliceError::TooManySlices(count));
        }
        let inv = beta.inverse().expect("nonzero slope");
        let positive = beta.sign() == Ordering::Greater;
        let mut next = Vec::new();
        for n in n0..=n1 {
            let base = &ExactScalar::from_integer(n) - &coord.offset;
            let e1 = &(&base + &b.lo[c]) * &inv;
            let e2 = &(&base + &b.hi[c]) * &inv;
            let (a, z) = if positive { (e1, e2) } else { (e2, e1) };
            next.extend(intersect_intervals(&current, &a, &z));
        }
        next.sort();
        current = next;
    }
    Ok(current)
}

type Point = [ExactScalar; 2];

fn dot(slope: &[ExactScalar], p: &Point) -> ExactScalar {
    &(&slope[0] * &p[0]) + &(&slope[1] * &p[1])
}

/// Keeps the part of a convex polygon where `g(p) ≥ 0`, with `g` affine and
/// given by its values at the vertices.
fn clip(poly: &[Point], values: &[ExactScalar]) -> Vec<Point> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let j = (i + 1) % n;
        let (gp, gq) = (&values[i], &values[j]);
        let sp = gp.sign();
        let sq = gq.sign();
        if sp != Ordering::Less {
            out.push(poly[i].clone());
        }
        if (sp == Ordering::Greater && sq == Ordering::Less) || (sp == Ordering::Less && sq == Ordering::Greater) {
            let t = gp.checked_div(&(gp - gq)).expect("distinct signs");
            let p = &poly[i];
            let q = &poly[j];
            out.push([&p[0] + &(&t * &(&q[0] - &p[0])), &p[1] + &(&t * &(&q[1] - &p[1]))]);
        }
    }
    if out.len() < 3 {
        out.clear();
    }
    out
}

fn clip_box(coords: &[AffineCoord], b: &TorusBox, lo: &[ExactScalar], hi: &[ExactScalar]) -> Result<Vec<Vec<Point>>, SliceError> {
    if lo[0] >= hi[0] || lo[1] >= hi[1] {
        return Ok(Vec::new());
    }
    let rect = vec![
        [lo[0].clone(), lo[1].clone()],
        [hi[0].clone(), lo[1].clone()],
        [hi[0].clone(), hi[1].clone()],
        [lo[0].clone(), hi[1].clone()],
    ];
    let mut pieces = vec![rect];
    for (c, coord) in coords.iter().enumerate() {
        let mut next = Vec::new();
        if coord.slope.iter().all(ExactScalar::is_zero) {
            let v = coord.offset.fract();
            if b.lo[c] <= v && v < b.hi[c] {
                next = pieces;
            }
            pieces = next;
            continue;
        }
        for poly in &pieces {
            let vals: Vec<ExactScalar> = poly.iter().map(|p| &coord.offset + &dot(&coord.slope, p)).collect();
            let vmin = vals.iter().min().expect("nonempty polygon");
            let vmax = vals.iter().max().expect("nonempty polygon");
            let (n0, n1) = strip_range(vmin, vmax, &b.lo[c], &b.hi[c]);
            let count = usize::try_from(n1 - n0 + 1).unwrap_or(usize::MAX);
            if count.saturating_mul(pieces.len()) > MAX_SLICES {
                return Err(SliceError::TooManySlices(count * pieces.len()));
            }
            for n in n0..=n1 {
                let shift_lo = &ExactScalar::from_integer(n) + &b.lo[c];
                let above: Vec<ExactScalar> = vals.iter().map(|v| v - &shift_lo).collect();
                let lower = clip(poly, &above);
                if lower.is_empty() {
                    continue;
                }
                let shift_hi = &ExactScalar::from_integer(n) + &b.hi[c];
                let below: Vec<ExactScalar> = lower
                    .iter()
                    .map(|p| &shift_hi - &(&coord.offset + &dot(&coord.slope, p)))
                    .collect();
                let piece = clip(&lower, &below);
                if !piece.is_empty() {
                    next.push(piece);
                }
            }
        }
        pieces = next;
        if pieces.is_empty() {
            break;
        }
    }
    Ok(pieces)
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Point]) -> ExactScalar {
    let n = poly.len();
    let twice: ExactScalar = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            &(&poly[i][0] * &poly[j][1]) - &(&poly[j][0] * &poly[i][1])
        })
        .sum();
    (&twice * &ExactScalar::from_ratio(1, 2)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(s: &str) -> ExactScalar {
        s.parse().unwrap()
    }

    fn coord(offset: &str, slope: &[&str]) -> AffineCoord {
        AffineCoord {
            offset: x(offset),
            slope: slope.iter().map(|s| x(s)).collect(),
        }
    }

    #[test]
    fn one_parameter_rotation() {
        // frac(s) ∈ [0, 1/2) over s ∈ [0, 3): three half intervals
        let set = TorusSet::interval(x("0"), x("1/2"));
        let m = preimage_measure(&[coord("0", &["1"])], &set, &[x("0")], &[x("3")]).unwrap();
        assert_eq!(m, x("3/2"));
        // slope √2 over [0, 10): count against the direct formula
        let m = preimage_measure(&[coord("1/3", &["sqrt(2)"])], &set, &[x("0")], &[x("10")]).unwrap();
        let approx = {
            let n = 2_000_000;
            let h = 10.0 / n as f64;
            (0..n)
                .filter(|i| {
                    let v = 1.0 / 3.0 + 2f64.sqrt() * (*i as f64 + 0.5) * h;
                    v - v.floor() < 0.5
                })
                .count() as f64
                * h
        };
        assert!((m.to_f64() - approx).abs() < 1e-4);
        // negative slope gives the same measure as the mirrored map
        let neg = preimage_measure(&[coord("1/3", &["-sqrt(2)"])], &set, &[x("-10")], &[x("0")]).unwrap();
        assert_eq!(neg, m);
    }

    #[test]
    fn zero_slope_and_full_set() {
        let set = TorusSet::interval(x("0"), x("1/2"));
        assert_eq!(
            preimage_measure(&[coord("1/4", &["0"])], &set, &[x("0")], &[x("7")]).unwrap(),
            x("7")
        );
        assert_eq!(
            preimage_measure(&[coord("3/4", &["0"])], &set, &[x("0")], &[x("7")]).unwrap(),
            x("0")
        );
        let full = TorusSet::full(2);
        let cs = [coord("0", &["1", "sqrt(2)"]), coord("1/5", &["sqrt(3)", "-1"])];
        assert_eq!(
            preimage_measure(&cs, &full, &[x("0"), x("1")], &[x("3/2"), x("7/2")]).unwrap(),
            x("15/4")
        );
    }

    #[test]
    fn two_parameter_product() {
        // axis-aligned map: measure factorizes
        let set = TorusSet::wrapped_box(&[x("0"), x("1/4")], &[x("1/2"), x("1/2")]);
        let cs = [coord("0", &["1/8", "0"]), coord("0", &["0", "1/8"])];
        let m = preimage_measure(&cs, &set, &[x("0"), x("0")], &[x("8"), x("8")]).unwrap();
        assert_eq!(m, x("16"));
        assert_eq!(polygon_area(&[[x("0"), x("0")], [x("2"), x("0")], [x("0"), x("3")]]), x("3"));
    }

    #[test]
    fn two_parameter_slanted_matches_sampling() {
        let set = TorusSet::interval(x("1/5"), x("2/3"));
        let cs = [coord("1/7", &["sqrt(2)/3", "sqrt(3)/5"])];
        let m = preimage_measure(&cs, &set, &[x("0"), x("0")], &[x("2"), x("3")]).unwrap();
        let n = 1500;
        let mut hits = 0usize;
        for i in 0..n {
            for j in 0..n {
                let s = 2.0 * (i as f64 + 0.5) / n as f64;
                let t = 3.0 * (j as f64 + 0.5) / n as f64;
                let v = 1.0 / 7.0 + 2f64.sqrt() / 3.0 * s + 3f64.sqrt() / 5.0 * t;
                let f = v - v.floor();
                if (0.2..2.0 / 3.0).contains(&f) {
                    hits += 1;
                }
            }
        }
        let approx = 6.0 * hits as f64 / (n * n) as f64;
        assert!((m.to_f64() - approx).abs() < 1e-3, "{} vs {approx}", m.to_f64());
    }

    #[test]
    fn unsupported() {
        let set = TorusSet::full(1);
        let cs = [coord("0", &["1", "1", "1"])];
        let z = vec![x("0"); 3];
        let o = vec![x("1"); 3];
        assert_eq!(preimage_measure(&cs, &set, &z, &o), Err(SliceError::UnsupportedDimension(3)));
    }
}
