//! `d`-dimensional summed-area tables over a lattice bounding box.

use num_complex::Complex64;

/// Additive cell of a summed-area table.
pub trait Cell: Copy + Default + Send + Sync {
    fn add(self, other: Self) -> Self;
    fn neg(self) -> Self;
}

impl Cell for i64 {
    #[inline]
    fn add(self, other: Self) -> Self {
        self + other
    }
    #[inline]
    fn neg(self) -> Self {
        -self
    }
}

/// Double-double accumulator (error-free two-sum).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl Dd {
    pub fn new(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

impl Cell for Dd {
    #[inline]
    fn add(self, other: Self) -> Self {
        let (s, e) = two_sum(self.hi, other.hi);
        let e = e + self.lo + other.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }
    #[inline]
    fn neg(self) -> Self {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

/// Complex double-double.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CDd {
    pub re: Dd,
    pub im: Dd,
}

impl CDd {
    pub fn new(z: Complex64) -> Self {
        Self {
            re: Dd::new(z.re),
            im: Dd::new(z.im),
        }
    }

    pub fn value(self) -> Complex64 {
        Complex64::new(self.re.value(), self.im.value())
    }
}

impl Cell for CDd {
    #[inline]
    fn add(self, other: Self) -> Self {
        CDd {
            re: self.re.add(other.re),
            im: self.im.add(other.im),
        }
    }
    #[inline]
    fn neg(self) -> Self {
        CDd {
            re: self.re.neg(),
            im: self.im.neg(),
        }
    }
}

/// Prefix sums `P(q) = Σ_{lo ≤ j < lo + q} v(j)` on a padded grid.
#[derive(Debug, Clone)]
pub struct SummedArea<T> {
    lo: Vec<i64>,
    ext: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<T>,
}

/// Number of cells a table over `ext` needs, or `None` on overflow.
pub fn table_cells(ext: &[usize]) -> Option<usize> {
    ext.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e + 1))
}

impl<T: Cell> SummedArea<T> {
    /// Fills the box `∏ [lo_i, lo_i + ext_i)` with `value(j)` and integrates.
    pub fn build(lo: Vec<i64>, ext: Vec<usize>, mut value: impl FnMut(&[i64]) -> T) -> Self {
        let d = lo.len();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (ext[i + 1] + 1);
        }
        let cells = table_cells(&ext).expect("table size overflow");
        let mut data = vec![T::default(); cells];
        let mut j = lo.clone();
        let mut idx = vec![0usize; d];
        let points: usize = ext.iter().product();
        for _ in 0..points {
            let flat: usize = idx.iter().zip(&strides).map(|(i, s)| (i + 1) * s).sum();
            data[flat] = value(&j);
            for a in (0..d).rev() {
                idx[a] += 1;
                j[a] += 1;
                if idx[a] < ext[a] {
                    break;
                }
                idx[a] = 0;
                j[a] = lo[a];
            }
        }
        for a in 0..d {
            let stride = strides[a];
            let period = ext[a] + 1;
            for flat in 0..cells {
                if !(flat / stride).is_multiple_of(period) {
                    data[flat] = data[flat].add(data[flat - stride]);
                }
            }
        }
        Self { lo, ext, strides, data }
    }

    /// Sum over `∏ [corner_i, corner_i + len_i)`, which must lie in the table.
    pub fn box_sum(&self, corner: &[i64], lengths: &[i64]) -> T {
        let d = self.lo.len();
        let mut total = T::default();
        for mask in 0..(1usize << d) {
            let mut flat = 0usize;
            let mut lower = 0;
            for a in 0..d {
                let start = corner[a] - self.lo[a];
                let q = if mask >> a & 1 == 1 {
                    start + lengths[a]
                } else {
                    lower += 1;
                    start
                };
                debug_assert!(q >= 0 && q as usize <= self.ext[a], "box outside table");
                flat += q as usize * self.strides[a];
            }
            let v = self.data[flat];
            total = total.add(if lower % 2 == 1 { v.neg() } else { v });
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dimensional_counts() {
        let sat = SummedArea::build(vec![-2, 3], vec![5, 4], |j| j[0] * 10 + j[1]);
        let brute = |c: &[i64], l: &[i64]| -> i64 {
            let mut s = 0;
            for a in c[0]..c[0] + l[0] {
                for b in c[1]..c[1] + l[1] {
                    s += a * 10 + b;
                }
            }
            s
        };
        for (c, l) in [([-2, 3], [5, 4]), ([0, 4], [2, 2]), ([1, 6], [1, 1]), ([-1, 3], [3, 0])] {
            assert_eq!(sat.box_sum(&c, &l), brute(&c, &l));
        }
    }

    #[test]
    fn compensated_cancellation() {
        let big = 1e17;
        let sat = SummedArea::build(vec![0], vec![4], |j| Dd::new([big, 1.0, -big, 1.0][j[0] as usize]));
        assert_eq!(sat.box_sum(&[0], &[4]).value(), 2.0);
        assert_eq!(sat.box_sum(&[1], &[1]).value(), 1.0);
    }
}
