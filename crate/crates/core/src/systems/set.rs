//! Finite unions of half-open boxes on the torus with exact endpoints.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::exact::ExactScalar;

/// Half-open box `∏ [lo_c, hi_c)` with `0 ≤ lo_c < hi_c ≤ 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusBox {
    pub lo: Vec<ExactScalar>,
    pub hi: Vec<ExactScalar>,
}

impl TorusBox {
    pub fn volume(&self) -> ExactScalar {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(ExactScalar::one(), |acc, (l, h)| acc * (h - l))
    }

    pub fn contains(&self, x: &[ExactScalar]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| l <= v && v < h)
    }

    pub fn intersect(&self, other: &TorusBox) -> Option<TorusBox> {
        let mut lo = Vec::with_capacity(self.lo.len());
        let mut hi = Vec::with_capacity(self.lo.len());
        for c in 0..self.lo.len() {
            let l = (&self.lo[c]).max(&other.lo[c]).clone();
            let h = (&self.hi[c]).min(&other.hi[c]).clone();
            if l >= h {
                return None;
            }
            lo.push(l);
            hi.push(h);
        }
        Some(TorusBox { lo, hi })
    }

    /// `self \ other` as disjoint boxes.
    fn minus(&self, other: &TorusBox) -> Vec<TorusBox> {
        if self.intersect(other).is_none() {
            return vec![self.clone()];
        }
        let mut out = Vec::new();
        let mut rest = self.clone();
        for c in 0..self.lo.len() {
            if rest.lo[c] < other.lo[c] {
                let mut piece = rest.clone();
                piece.hi[c] = other.lo[c].clone();
                out.push(piece);
                rest.lo[c] = other.lo[c].clone();
            }
            if other.hi[c] < rest.hi[c] {
                let mut piece = rest.clone();
                piece.lo[c] = other.hi[c].clone();
                out.push(piece);
                rest.hi[c] = other.hi[c].clone();
            }
        }
        out
    }
}

/// A finite union of pairwise disjoint half-open boxes on `T^m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusSet {
    dim: usize,
    boxes: Vec<TorusBox>,
}

/// Splits `[start, start + len)` (mod 1) at the seam; `len ≥ 1` is the full circle.
fn wrap_interval(start: &ExactScalar, len: &ExactScalar) -> Vec<(ExactScalar, ExactScalar)> {
    let one = ExactScalar::one();
    if len.sign() != Ordering::Greater {
        return Vec::new();
    }
    if *len >= one {
        return vec![(ExactScalar::zero(), one)];
    }
    let a = start.fract();
    let b = &a + len;
    if b <= one {
        vec![(a, b)]
    } else {
        vec![(ExactScalar::zero(), &b - &one), (a, one)]
    }
}

impl TorusSet {
    pub fn empty(dim: usize) -> Self {
        Self { dim, boxes: Vec::new() }
    }

    pub fn full(dim: usize) -> Self {
        Self {
            dim,
            boxes: vec![TorusBox {
                lo: vec![ExactScalar::zero(); dim],
                hi: vec![ExactScalar::one(); dim],
            }],
        }
    }

    /// The image of the box `∏ [start_c, start_c + len_c)` in the torus,
    /// split at the seams. Overlaps from lengths above one collapse to the
    /// full circle.
    pub fn wrapped_box(start: &[ExactScalar], len: &[ExactScalar]) -> Self {
        assert_eq!(start.len(), len.len());
        let dim = start.len();
        let mut boxes = vec![TorusBox {
            lo: Vec::new(),
            hi: Vec::new(),
        }];
        for c in 0..dim {
            let parts = wrap_interval(&start[c], &len[c]);
            boxes = boxes
                .into_iter()
                .flat_map(|b| {
                    parts.iter().map(move |(l, h)| {
                        let mut nb = b.clone();
                        nb.lo.push(l.clone());
                        nb.hi.push(h.clone());
                        nb
                    })
                })
                .collect();
        }
        let mut s = Self { dim, boxes };
        s.normalize();
        s
    }

    /// `[a, b)` on the circle, `a ≤ b`, wrapped mod 1.
    pub fn interval(a: ExactScalar, b: ExactScalar) -> Self {
        let len = &b - &a;
        Self::wrapped_box(&[a], &[len])
    }

    /// Builds a set from possibly overlapping boxes already inside `[0,1]^m`.
    pub fn from_boxes(dim: usize, boxes: Vec<TorusBox>) -> Self {
        let mut s = Self::empty(dim);
        for b in boxes {
            assert_eq!(b.lo.len(), dim);
            if b.lo.iter().zip(&b.hi).all(|(l, h)| l < h) {
                if dim == 1 {
                    s.boxes.push(b);
                } else {
                    s.insert(b);
                }
            }
        }
        s.normalize();
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boxes(&self) -> &[TorusBox] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    fn insert(&mut self, b: TorusBox) {
        let mut pending = vec![b];
        for existing in &self.boxes {
            pending = pending.into_iter().flat_map(|p| p.minus(existing)).collect();
            if pending.is_empty() {
                return;
            }
        }
        self.boxes.extend(pending);
    }

    /// Sorts boxes and, in one dimension, merges touching intervals.
    fn normalize(&mut self) {
        self.boxes.sort_by(|a, b| a.lo.cmp(&b.lo).then_with(|| a.hi.cmp(&b.hi)));
        if self.dim == 1 {
            let mut merged: Vec<TorusBox> = Vec::with_capacity(self.boxes.len());
            for b in self.boxes.drain(..) {
                if let Some(last) = merged.last_mut() {
                    if last.hi[0] >= b.lo[0] {
                        if b.hi[0] > last.hi[0] {
                            last.hi[0] = b.hi[0].clone();
                        }
                        continue;
                    }
                }
                merged.push(b);
            }
            self.boxes = merged;
        }
    }

    pub fn measure(&self) -> ExactScalar {
        self.boxes.iter().map(TorusBox::volume).sum()
    }

    pub fn contains(&self, x: &[ExactScalar]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    pub fn union(&self, other: &TorusSet) -> TorusSet {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let mut out = self.clone();
        if self.dim == 1 {
            // sorted merge handles overlaps directly
            out.boxes.extend(other.boxes.iter().cloned());
        } else {
            for b in &other.boxes {
                out.insert(b.clone());
            }
        }
        out.normalize();
        out
    }

    /// Union of many sets of the same dimension.
    pub fn union_all<'a>(dim: usize, sets: impl IntoIterator<Item = &'a TorusSet>) -> TorusSet {
        let mut out = TorusSet::empty(dim);
        for s in sets {
            assert_eq!(s.dim, dim, "dimension mismatch");
            if dim == 1 {
                out.boxes.extend(s.boxes.iter().cloned());
            } else {
                for b in &s.boxes {
                    out.insert(b.clone());
                }
            }
        }
        out.normalize();
        out
    }

    /// Cartesian product `self × other` on `T^{m+n}`.
    pub fn product(&self, other: &TorusSet) -> TorusSet {
        let mut boxes = Vec::with_capacity(self.boxes.len() * other.boxes.len());
        for a in &self.boxes {
            for b in &other.boxes {
                let mut lo = a.lo.clone();
                lo.extend(b.lo.iter().cloned());
                let mut hi = a.hi.clone();
                hi.extend(b.hi.iter().cloned());
                boxes.push(TorusBox { lo, hi });
            }
        }
        let mut s = TorusSet {
            dim: self.dim + other.dim,
            boxes,
        };
        s.normalize();
        s
    }

    pub fn intersection(&self, other: &TorusSet) -> TorusSet {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let mut boxes = Vec::new();
        for a in &self.boxes {
            for b in &other.boxes {
                if let Some(c) = a.intersect(b) {
                    boxes.push(c);
                }
            }
        }
        let mut s = TorusSet { dim: self.dim, boxes };
        s.normalize();
        s
    }

    pub fn difference(&self, other: &TorusSet) -> TorusSet {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let mut boxes = self.boxes.clone();
        for b in &other.boxes {
            boxes = boxes.into_iter().flat_map(|a| a.minus(b)).collect();
        }
        let mut s = TorusSet { dim: self.dim, boxes };
        s.normalize();
        s
    }

    pub fn complement(&self) -> TorusSet {
        TorusSet::full(self.dim).difference(self)
    }

    pub fn is_subset(&self, other: &TorusSet) -> bool {
        self.difference(other).is_empty()
    }

    /// `self + v (mod 1)`.
    pub fn translate(&self, v: &[ExactScalar]) -> TorusSet {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        let mut out = TorusSet::empty(self.dim);
        for b in &self.boxes {
            let start: Vec<ExactScalar> = b.lo.iter().zip(v).map(|(l, s)| l + s).collect();
            let len: Vec<ExactScalar> = b.lo.iter().zip(&b.hi).map(|(l, h)| h - l).collect();
            // translates of disjoint boxes stay disjoint
            out.boxes.extend(TorusSet::wrapped_box(&start, &len).boxes);
        }
        out.normalize();
        out
    }

    /// Floating-point copy of the box endpoints for fast membership tests.
    pub fn approx_boxes(&self) -> Vec<Vec<(f64, f64)>> {
        self.boxes
            .iter()
            .map(|b| b.lo.iter().zip(&b.hi).map(|(l, h)| (l.to_f64(), h.to_f64())).collect())
            .collect()
    }
}
