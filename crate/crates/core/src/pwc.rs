//! Piecewise-constant functions over the resource hypercube, together with
//! the axis-aligned boxes and disjoint box unions ("regions") they live on.
//!
//! Interval convention: every box is half-open `[lo, hi)` in each dimension,
//! except that a box whose upper bound equals the hypercube ceiling in some
//! dimension also owns that closed upper face. Under this convention a set
//! of disjoint boxes partitions the hypercube with no point owned twice, and
//! the convention is preserved by intersection, subtraction and clipping.
//!
//! Functions are stored as flat lists of disjoint `(box, value)` pieces plus
//! a default value for uncovered points, so evaluation is total on the
//! hypercube. `{0,1}`-valued functions with default 0 act as indicators; the
//! solver keeps its open/closed/reachable bookkeeping in [`Region`] form and
//! converts where the indicator algebra is wanted.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Axis-aligned box with nonempty interior, `lo < hi` componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxR {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxR {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        BoxR { lo, hi }
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    /// Empty under the nonempty-interior rule: some `lo_i >= hi_i`.
    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l >= h)
    }

    /// Membership under the half-open convention; `xmax` supplies the
    /// hypercube ceiling that closes top faces.
    pub fn contains(&self, x: &[f64], xmax: &[f64]) -> bool {
        (0..self.dims()).all(|i| {
            self.lo[i] <= x[i] && (x[i] < self.hi[i] || (x[i] == self.hi[i] && self.hi[i] == xmax[i]))
        })
    }

    pub fn intersect(&self, other: &BoxR) -> Option<BoxR> {
        let lo: Vec<f64> = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<f64> = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        let bx = BoxR::new(lo, hi);
        if bx.is_empty() {
            None
        } else {
            Some(bx)
        }
    }

    pub fn overlaps(&self, other: &BoxR) -> bool {
        (0..self.dims()).all(|i| self.lo[i] < other.hi[i] && other.lo[i] < self.hi[i])
    }

    /// `self \ other` as up to `2·dims` disjoint boxes.
    pub fn subtract(&self, other: &BoxR) -> Vec<BoxR> {
        let Some(core) = self.intersect(other) else {
            return vec![self.clone()];
        };
        let mut out = Vec::new();
        let mut rest = self.clone();
        for d in 0..self.dims() {
            if rest.lo[d] < core.lo[d] {
                let mut below = rest.clone();
                below.hi[d] = core.lo[d];
                out.push(below);
                rest.lo[d] = core.lo[d];
            }
            if core.hi[d] < rest.hi[d] {
                let mut above = rest.clone();
                above.lo[d] = core.hi[d];
                out.push(above);
                rest.hi[d] = core.hi[d];
            }
        }
        out
    }

    pub fn translate(&self, delta: &[f64]) -> BoxR {
        BoxR::new(
            self.lo.iter().zip(delta).map(|(a, d)| a + d).collect(),
            self.hi.iter().zip(delta).map(|(a, d)| a + d).collect(),
        )
    }

    /// Intersect with the hypercube `[0, xmax]`.
    pub fn clip(&self, xmax: &[f64]) -> Option<BoxR> {
        self.intersect(&BoxR::new(vec![0.0; xmax.len()], xmax.to_vec()))
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn hull(&self, other: &BoxR) -> BoxR {
        BoxR::new(
            self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        )
    }

    /// True when `self` and `other` agree in every dimension except one,
    /// where they abut; merging such a pair into the hull is exact.
    fn face_adjacent(&self, other: &BoxR) -> bool {
        let mut split = None;
        for d in 0..self.dims() {
            if self.lo[d] == other.lo[d] && self.hi[d] == other.hi[d] {
                continue;
            }
            if split.is_some() {
                return false;
            }
            if self.hi[d] == other.lo[d] || other.hi[d] == self.lo[d] {
                split = Some(d);
            } else {
                return false;
            }
        }
        split.is_some()
    }

    fn key(&self) -> Vec<(u64, u64)> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (l.to_bits(), h.to_bits()))
            .collect()
    }
}

fn sort_boxes(boxes: &mut [BoxR]) {
    boxes.sort_by(|a, b| {
        a.lo.iter()
            .zip(&b.lo)
            .chain(a.hi.iter().zip(&b.hi))
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
}

/// Order-preserving bit image of an f64 (total order), for sort keys.
fn sortable_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Merge face-adjacent boxes of equal class until stable. Disjointness is
/// preserved; every merge is exact. One pass sorts per dimension and sweeps
/// runs of boxes that agree on the class and on every other dimension, so a
/// pass is `O(n log n)` instead of the quadratic pairwise scan.
fn coalesce_classes(boxes: &mut Vec<BoxR>, classes: &mut Vec<u64>) {
    let dims = match boxes.first() {
        Some(b) => b.dims(),
        None => return,
    };
    let mut changed = true;
    while changed {
        changed = false;
        for d in 0..dims {
            if boxes.len() < 2 {
                return;
            }
            let key = |b: &BoxR, cls: u64| {
                let mut k: Vec<u64> = Vec::with_capacity(2 * dims + 1);
                k.push(cls);
                for e in 0..dims {
                    if e != d {
                        k.push(sortable_bits(b.lo[e]));
                        k.push(sortable_bits(b.hi[e]));
                    }
                }
                k.push(sortable_bits(b.lo[d]));
                k
            };
            let mut order: Vec<usize> = (0..boxes.len()).collect();
            order.sort_by_key(|&i| key(&boxes[i], classes[i]));
            let mut out_boxes: Vec<BoxR> = Vec::with_capacity(boxes.len());
            let mut out_classes: Vec<u64> = Vec::with_capacity(classes.len());
            let same_group = |a: &BoxR, b: &BoxR| {
                (0..dims).all(|e| e == d || (a.lo[e] == b.lo[e] && a.hi[e] == b.hi[e]))
            };
            for &i in &order {
                let join = match (out_boxes.last(), out_classes.last()) {
                    (Some(prev), Some(&cls)) => {
                        cls == classes[i] && same_group(prev, &boxes[i]) && prev.hi[d] == boxes[i].lo[d]
                    }
                    _ => false,
                };
                if join {
                    out_boxes.last_mut().unwrap().hi[d] = boxes[i].hi[d];
                    changed = true;
                } else {
                    out_boxes.push(boxes[i].clone());
                    out_classes.push(classes[i]);
                }
            }
            *boxes = out_boxes;
            *classes = out_classes;
        }
    }
}

/// A finite union of pairwise-disjoint boxes. The canonical carrier for
/// open/closed/reachable sets and for backup target regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    dims: usize,
    boxes: Vec<BoxR>,
}

impl Region {
    pub fn empty(dims: usize) -> Self {
        Region { dims, boxes: Vec::new() }
    }

    pub fn from_box(bx: BoxR) -> Self {
        let dims = bx.dims();
        if bx.is_empty() {
            Region::empty(dims)
        } else {
            Region { dims, boxes: vec![bx] }
        }
    }

    /// Build from possibly-overlapping boxes; later boxes are trimmed
    /// against earlier ones.
    pub fn from_boxes(dims: usize, boxes: impl IntoIterator<Item = BoxR>) -> Self {
        let mut r = Region::empty(dims);
        for bx in boxes {
            r.union_box(&bx);
        }
        r.coalesce();
        r
    }

    /// The whole hypercube `[0, xmax]`.
    pub fn full(xmax: &[f64]) -> Self {
        Region::from_box(BoxR::new(vec![0.0; xmax.len()], xmax.to_vec()))
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn boxes(&self) -> &[BoxR] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains(&self, x: &[f64], xmax: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x, xmax))
    }

    /// Total measure; exact because the boxes are disjoint.
    pub fn area(&self) -> f64 {
        self.boxes.iter().map(BoxR::volume).sum()
    }

    /// Add one box, trimming it against the existing cover. Returns true if
    /// anything new was added.
    pub fn union_box(&mut self, bx: &BoxR) -> bool {
        if bx.is_empty() {
            return false;
        }
        let mut fresh = vec![bx.clone()];
        for have in &self.boxes {
            let mut next = Vec::new();
            for f in fresh {
                next.extend(f.subtract(have));
            }
            fresh = next;
            if fresh.is_empty() {
                return false;
            }
        }
        self.boxes.extend(fresh);
        true
    }

    /// In-place union; returns true if `self` grew.
    pub fn union_with(&mut self, other: &Region) -> bool {
        let mut grew = false;
        for bx in &other.boxes {
            grew |= self.union_box(bx);
        }
        if grew {
            self.coalesce();
        }
        grew
    }

    pub fn union(&self, other: &Region) -> Region {
        let mut r = self.clone();
        r.union_with(other);
        r
    }

    pub fn intersect(&self, other: &Region) -> Region {
        let mut out = Vec::new();
        for a in &self.boxes {
            for b in &other.boxes {
                if let Some(c) = a.intersect(b) {
                    out.push(c);
                }
            }
        }
        let mut r = Region { dims: self.dims, boxes: out };
        r.coalesce();
        r
    }

    pub fn intersect_box(&self, bx: &BoxR) -> Region {
        let mut out = Vec::new();
        for a in &self.boxes {
            if let Some(c) = a.intersect(bx) {
                out.push(c);
            }
        }
        Region { dims: self.dims, boxes: out }
    }

    pub fn subtract(&self, other: &Region) -> Region {
        let mut boxes = self.boxes.clone();
        for cut in &other.boxes {
            let mut next = Vec::new();
            for b in boxes {
                next.extend(b.subtract(cut));
            }
            boxes = next;
        }
        let mut r = Region { dims: self.dims, boxes };
        r.coalesce();
        r
    }

    /// Set equality (both differences empty).
    pub fn same_set(&self, other: &Region) -> bool {
        self.subtract(other).is_empty() && other.subtract(self).is_empty()
    }

    pub fn bounding_box(&self) -> Option<BoxR> {
        let mut it = self.boxes.iter();
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, b| acc.hull(b)))
    }

    /// Merge face-adjacent boxes until no pair merges; keeps the
    /// representation small and deterministic.
    pub fn coalesce(&mut self) {
        let mut classes = vec![0u64; self.boxes.len()];
        coalesce_classes(&mut self.boxes, &mut classes);
        sort_boxes(&mut self.boxes);
    }

    /// Indicator function of the region: 1 on it, 0 elsewhere.
    pub fn to_indicator(&self) -> Pwc<f64> {
        Pwc::from_pieces(self.dims, 0.0, self.boxes.iter().map(|b| (b.clone(), 1.0)))
    }
}

/// Piecewise-constant function: disjoint `(box, value)` pieces over the
/// hypercube plus a default for uncovered points. Values are `f64` for
/// value/heuristic/reward functions, `Option<u32>` action tags for policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pwc<T> {
    dims: usize,
    default: T,
    pieces: Vec<(BoxR, T)>,
}

impl<T: Clone + PartialEq> Pwc<T> {
    pub fn constant(dims: usize, value: T) -> Self {
        Pwc { dims, default: value, pieces: Vec::new() }
    }

    pub fn from_pieces(dims: usize, default: T, pieces: impl IntoIterator<Item = (BoxR, T)>) -> Self {
        let mut f = Pwc {
            dims,
            default,
            pieces: pieces.into_iter().filter(|(b, _)| !b.is_empty()).collect(),
        };
        // The quadratic check is worth it only at unit-test scale.
        debug_assert!(f.pieces.len() > 64 || f.pieces_disjoint());
        f.canonicalize();
        f
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn default_value(&self) -> &T {
        &self.default
    }

    pub fn pieces(&self) -> &[(BoxR, T)] {
        &self.pieces
    }

    pub fn pieces_disjoint(&self) -> bool {
        for i in 0..self.pieces.len() {
            for j in (i + 1)..self.pieces.len() {
                if self.pieces[i].0.overlaps(&self.pieces[j].0) {
                    return false;
                }
            }
        }
        true
    }

    /// Value at `x` without the hypercube membership check.
    pub fn value_at(&self, x: &[f64], xmax: &[f64]) -> &T {
        self.pieces
            .iter()
            .find(|(b, _)| b.contains(x, xmax))
            .map(|(_, v)| v)
            .unwrap_or(&self.default)
    }

    /// Total evaluation on the hypercube; points outside are a domain error.
    pub fn evaluate(&self, x: &[f64], xmax: &[f64]) -> Result<T> {
        if x.len() != self.dims {
            return Err(Error::domain(format!(
                "point has {} dims, function has {}",
                x.len(),
                self.dims
            )));
        }
        if !(0..x.len()).all(|i| (0.0..=xmax[i]).contains(&x[i])) {
            return Err(Error::domain(format!("point {:?} outside the resource hypercube", x)));
        }
        Ok(self.value_at(x, xmax).clone())
    }

    pub fn map<W: Clone + PartialEq>(&self, f: impl Fn(&T) -> W) -> Pwc<W> {
        let mut out = Pwc {
            dims: self.dims,
            default: f(&self.default),
            pieces: self.pieces.iter().map(|(b, v)| (b.clone(), f(v))).collect(),
        };
        out.merge_equal();
        out
    }

    /// Common-refinement combine: `result(x) = op(self(x), other(x))`.
    pub fn overlay<U: Clone + PartialEq, W: Clone + PartialEq>(
        &self,
        other: &Pwc<U>,
        op: impl Fn(&T, &U) -> W,
    ) -> Pwc<W> {
        let mut pieces: Vec<(BoxR, W)> = Vec::new();
        let other_cover = Region {
            dims: self.dims,
            boxes: other.pieces.iter().map(|(b, _)| b.clone()).collect(),
        };
        let self_cover = Region {
            dims: self.dims,
            boxes: self.pieces.iter().map(|(b, _)| b.clone()).collect(),
        };
        for (a, va) in &self.pieces {
            for (b, vb) in &other.pieces {
                if let Some(c) = a.intersect(b) {
                    pieces.push((c, op(va, vb)));
                }
            }
            for rest in Region::from_box(a.clone()).subtract(&other_cover).boxes {
                pieces.push((rest, op(va, &other.default)));
            }
        }
        for (b, vb) in &other.pieces {
            for rest in Region::from_box(b.clone()).subtract(&self_cover).boxes {
                pieces.push((rest, op(&self.default, vb)));
            }
        }
        let mut out = Pwc {
            dims: self.dims,
            default: op(&self.default, &other.default),
            pieces,
        };
        out.merge_equal();
        out
    }

    /// Values from `src` on `region`, from `self` elsewhere.
    pub fn patch(&self, region: &Region, src: &Pwc<T>) -> Pwc<T> {
        let mask = region.to_indicator();
        let tagged = self.overlay(&mask, |v, m| (v.clone(), *m > 0.0));
        tagged.overlay(src, |(v, inside), s| if *inside { s.clone() } else { v.clone() })
    }

    /// `self` on `region`, constant `outside` elsewhere.
    pub fn restrict(&self, region: &Region, outside: T) -> Pwc<T> {
        Pwc::constant(self.dims, outside).patch(region, self)
    }

    /// Region within `[0, xmax]` where the function takes values satisfying
    /// `pred`.
    pub fn region_where(&self, xmax: &[f64], pred: impl Fn(&T) -> bool) -> Region {
        let mut covered = Vec::new();
        let mut hit = Vec::new();
        for (b, v) in &self.pieces {
            if let Some(c) = b.clip(xmax) {
                covered.push(c.clone());
                if pred(v) {
                    hit.push(c);
                }
            }
        }
        let mut r = Region { dims: self.dims, boxes: hit };
        if pred(&self.default) {
            let covered = Region { dims: self.dims, boxes: covered };
            r.union_with(&Region::full(xmax).subtract(&covered));
        }
        r.coalesce();
        r
    }

    /// Merge exactly-equal adjacent pieces and drop pieces equal to the
    /// default; never changes the function pointwise.
    pub fn merge_equal(&mut self) {
        self.pieces.retain(|(_, v)| *v != self.default);
        // Class ids per distinct value; values only need equality.
        let mut distinct: Vec<&T> = Vec::new();
        let mut classes: Vec<u64> = Vec::with_capacity(self.pieces.len());
        for (_, v) in &self.pieces {
            let id = match distinct.iter().position(|w| *w == v) {
                Some(i) => i,
                None => {
                    distinct.push(v);
                    distinct.len() - 1
                }
            };
            classes.push(id as u64);
        }
        let values: Vec<T> = distinct.into_iter().cloned().collect();
        let mut boxes: Vec<BoxR> = self.pieces.iter().map(|(b, _)| b.clone()).collect();
        coalesce_classes(&mut boxes, &mut classes);
        self.pieces = boxes
            .into_iter()
            .zip(classes)
            .map(|(b, c)| (b, values[c as usize].clone()))
            .collect();
        self.canonicalize();
    }

    fn canonicalize(&mut self) {
        self.pieces.sort_by(|a, b| a.0.key().cmp(&b.0.key()));
    }
}

impl Pwc<f64> {
    /// True when all values (default included) are 0 or 1.
    pub fn is_indicator(&self) -> bool {
        let ok = |v: &f64| *v == 0.0 || *v == 1.0;
        ok(&self.default) && self.pieces.iter().all(|(_, v)| ok(v))
    }

    /// Indicator of `{x : f(x) > 0}` within the hypercube `[0, xmax]`.
    pub fn support(&self, xmax: &[f64]) -> Region {
        let mut pos = Vec::new();
        let mut covered = Vec::new();
        // Pieces are disjoint, and clipping keeps them so.
        for (b, v) in &self.pieces {
            if let Some(c) = b.clip(xmax) {
                covered.push(c.clone());
                if *v > 0.0 {
                    pos.push(c);
                }
            }
        }
        let mut r = Region { dims: self.dims, boxes: pos };
        if self.default > 0.0 {
            let covered = Region { dims: self.dims, boxes: covered };
            r.union_with(&Region::full(xmax).subtract(&covered));
        }
        r.coalesce();
        r
    }

    /// Pull-back by a constant shift: `g(x) = f(x + delta)` where `x + delta`
    /// stays inside `[0, xmax]`, `fill` elsewhere. Piece boxes translate by
    /// `-delta` and clip to the hypercube.
    pub fn shift(&self, delta: &[f64], fill: f64, xmax: &[f64]) -> Pwc<f64> {
        let neg: Vec<f64> = delta.iter().map(|d| -d).collect();
        // Domain where x + delta lands inside the hypercube.
        let dom = BoxR::new(
            delta.iter().map(|d| (-d).max(0.0)).collect(),
            xmax.iter().zip(delta).map(|(m, d)| (m - d).min(*m)).collect(),
        );
        // Translation and clipping preserve disjointness.
        let mut pieces: Vec<(BoxR, f64)> = Vec::new();
        let mut covered = Vec::new();
        for (b, v) in &self.pieces {
            if let Some(c) = b.translate(&neg).clip(xmax) {
                covered.push(c.clone());
                pieces.push((c, *v));
            }
        }
        let covered = Region { dims: self.dims, boxes: covered };
        // dom is closed above in any dimension where it reaches xmax; the
        // half-open convention handles that automatically.
        if let Some(domx) = dom.clip(xmax) {
            for rest in Region::from_box(domx).subtract(&covered).boxes {
                pieces.push((rest, self.default));
            }
        }
        let mut out = Pwc { dims: self.dims, default: fill, pieces };
        out.merge_equal();
        out
    }

    /// Max pointwise absolute difference against `other`.
    pub fn max_abs_diff(&self, other: &Pwc<f64>) -> f64 {
        let d = self.overlay(other, |a, b| (a - b).abs());
        d.pieces
            .iter()
            .map(|(_, v)| *v)
            .fold(d.default, f64::max)
    }

    /// Merge face-adjacent pieces whose values differ by at most `tol` and
    /// drop pieces within `tol` of the default. The result equals the input
    /// pointwise within `tol`; the piece count never increases.
    pub fn simplify(&self, tol: f64) -> Pwc<f64> {
        let close = |a: f64, b: f64| {
            (a - b).abs() <= tol || (a == f64::NEG_INFINITY && b == f64::NEG_INFINITY)
        };
        let kept: Vec<(BoxR, f64)> = self
            .pieces
            .iter()
            .filter(|(_, v)| !close(*v, self.default))
            .cloned()
            .collect();
        // Bulk of the merging is between bit-equal values; handle those with
        // the fast grouped pass first.
        let mut boxes: Vec<BoxR> = kept.iter().map(|(b, _)| b.clone()).collect();
        let mut classes: Vec<u64> = kept.iter().map(|(_, v)| sortable_bits(*v)).collect();
        coalesce_classes(&mut boxes, &mut classes);
        let mut pieces: Vec<(BoxR, f64)> = boxes
            .into_iter()
            .zip(classes)
            .map(|(b, c)| {
                let bits = if c >> 63 == 1 { c & !(1 << 63) } else { !c };
                (b, f64::from_bits(bits))
            })
            .collect();
        // Tolerance pass for nearly-equal neighbors; piece counts are small
        // after the exact pass.
        if tol > 0.0 {
            loop {
                let mut merged = false;
                let mut i = 0;
                while i < pieces.len() {
                    let mut j = i + 1;
                    while j < pieces.len() {
                        if close(pieces[i].1, pieces[j].1) && pieces[i].0.face_adjacent(&pieces[j].0) {
                            let h = pieces[i].0.hull(&pieces[j].0);
                            pieces[i].0 = h;
                            pieces.swap_remove(j);
                            merged = true;
                        } else {
                            j += 1;
                        }
                    }
                    i += 1;
                }
                if !merged {
                    break;
                }
            }
        }
        let mut out = Pwc { dims: self.dims, default: self.default, pieces };
        out.canonicalize();
        out
    }

    /// One CSV row per piece: `lo_1..lo_d,hi_1..hi_d,value`, preceded by a
    /// column header. Emits the default row last with an all-hypercube box.
    pub fn pieces_csv(&self, xmax: &[f64]) -> String {
        let d = self.dims;
        let mut s = String::new();
        for i in 1..=d {
            s.push_str(&format!("lo_{},", i));
        }
        for i in 1..=d {
            s.push_str(&format!("hi_{},", i));
        }
        s.push_str("value\n");
        let mut write_row = |b: &BoxR, v: f64| {
            let cols: Vec<String> = b
                .lo
                .iter()
                .chain(b.hi.iter())
                .map(|x| format!("{}", x))
                .chain(std::iter::once(format!("{}", v)))
                .collect();
            s.push_str(&cols.join(","));
            s.push('\n');
        };
        for (b, v) in &self.pieces {
            write_row(b, *v);
        }
        let covered = Region {
            dims: d,
            boxes: self.pieces.iter().map(|(b, _)| b.clone()).collect(),
        };
        for rest in Region::full(xmax).subtract(&covered).boxes {
            write_row(&rest, self.default);
        }
        s
    }

    /// Grid-sampled CSV `x_1..x_d,value` with `n` samples per dimension,
    /// cell-centered so no sample sits on a piece boundary by construction.
    pub fn grid_csv(&self, xmax: &[f64], n: usize) -> String {
        let d = self.dims;
        let mut s = String::new();
        for i in 1..=d {
            s.push_str(&format!("x_{},", i));
        }
        s.push_str("value\n");
        let mut idx = vec![0usize; d];
        loop {
            let x: Vec<f64> = (0..d)
                .map(|i| (idx[i] as f64 + 0.5) * xmax[i] / n as f64)
                .collect();
            let v = *self.value_at(&x, xmax);
            let cols: Vec<String> = x.iter().map(|c| format!("{}", c)).chain(std::iter::once(format!("{}", v))).collect();
            s.push_str(&cols.join(","));
            s.push('\n');
            let mut i = d;
            loop {
                if i == 0 {
                    return s;
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < n {
                    break;
                }
                idx[i] = 0;
            }
        }
    }
}

/// `result(x) = sum_i w_i·f_i(x) (+ offset(x))`, folded in term order.
pub fn affine_combine(terms: &[(f64, &Pwc<f64>)], offset: Option<&Pwc<f64>>) -> Pwc<f64> {
    let dims = terms
        .first()
        .map(|(_, f)| f.dims())
        .or_else(|| offset.map(|f| f.dims()))
        .expect("affine_combine needs at least one term or an offset");
    let mut acc = Pwc::constant(dims, 0.0);
    for (w, f) in terms {
        acc = acc.overlay(f, |a, b| a + w * b);
    }
    if let Some(off) = offset {
        acc = acc.overlay(off, |a, b| a + b);
    }
    acc
}

/// Pointwise max over tagged candidates together with an argmax tag
/// function. Ties go to the previously marked tag where one is supplied and
/// still attains the max, then to the lowest candidate position.
pub fn pointwise_max_tagged(
    candidates: &[(u32, &Pwc<f64>)],
    prev_marked: Option<&Pwc<Option<u32>>>,
    xmax: &[f64],
) -> Result<(Pwc<f64>, Pwc<Option<u32>>)> {
    if candidates.is_empty() {
        return Err(Error::domain("pointwise max over an empty candidate list"));
    }
    let (tag0, f0) = &candidates[0];
    let mut acc: Pwc<(f64, u32)> = f0.map(|v| (*v, *tag0));
    for (tag, f) in &candidates[1..] {
        acc = acc.overlay(*f, |(mv, mt), v| if *v > *mv { (*v, *tag) } else { (*mv, *mt) });
    }
    if let Some(prev) = prev_marked {
        let mut tags: Vec<u32> = prev
            .pieces()
            .iter()
            .filter_map(|(_, t)| *t)
            .chain(prev.default_value().iter().copied())
            .collect();
        tags.sort_unstable();
        tags.dedup();
        for t in tags {
            let Some((_, qf)) = candidates.iter().find(|(tag, _)| *tag == t) else {
                continue;
            };
            let mask = prev.region_where(xmax, |m| *m == Some(t));
            if mask.is_empty() {
                continue;
            }
            let preferred = acc.overlay(*qf, |(mv, mt), qv| {
                if *qv == *mv {
                    (*mv, t)
                } else {
                    (*mv, *mt)
                }
            });
            acc = acc.patch(&mask, &preferred);
        }
    }
    let maxf = acc.map(|(v, _)| *v);
    let argf = acc.map(|(_, t)| Some(*t));
    Ok((maxf, argf))
}

/// Boolean algebra over `{0,1}` indicator functions. Non-indicator input is
/// a domain error.
pub fn indicator_op(op: IndicatorOp, a: &Pwc<f64>, b: Option<&Pwc<f64>>, xmax: &[f64]) -> Result<Pwc<f64>> {
    if !a.is_indicator() || b.is_some_and(|g| !g.is_indicator()) {
        return Err(Error::domain("boolean region algebra requires {0,1}-valued indicators"));
    }
    let ra = a.support(xmax);
    let out = match op {
        IndicatorOp::Not => Region::full(xmax).subtract(&ra),
        IndicatorOp::And => ra.intersect(&b.expect("and needs two operands").support(xmax)),
        IndicatorOp::Or => ra.union(&b.expect("or needs two operands").support(xmax)),
        IndicatorOp::Minus => ra.subtract(&b.expect("minus needs two operands").support(xmax)),
    };
    Ok(out.to_indicator())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorOp {
    And,
    Or,
    Not,
    Minus,
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_box(dims: usize, max: f64) -> impl Strategy<Value = BoxR> {
        let coord = 0..=(max as i64 * 4);
        let pair = (coord.clone(), coord).prop_filter_map("nonempty", move |(a, b)| {
            let (a, b) = (a.min(b) as f64 / 4.0, a.max(b) as f64 / 4.0);
            if a < b {
                Some((a, b))
            } else {
                None
            }
        });
        proptest::collection::vec(pair, dims).prop_map(|iv| {
            BoxR::new(iv.iter().map(|p| p.0).collect(), iv.iter().map(|p| p.1).collect())
        })
    }

    fn arb_pwc(dims: usize) -> impl Strategy<Value = Pwc<f64>> {
        (
            proptest::collection::vec((arb_box(dims, 10.0), -5.0f64..5.0), 0..5),
            -5.0f64..5.0,
        )
            .prop_map(move |(raw, default)| {
                // Make pieces disjoint by trimming later boxes against earlier.
                let mut region = Region::empty(dims);
                let mut pieces = Vec::new();
                for (bx, v) in raw {
                    let mut fresh = vec![bx];
                    for have in region.boxes() {
                        let mut next = Vec::new();
                        for f in fresh {
                            next.extend(f.subtract(have));
                        }
                        fresh = next;
                    }
                    for f in &fresh {
                        region.union_box(f);
                    }
                    pieces.extend(fresh.into_iter().map(|b| (b, v)));
                }
                Pwc::from_pieces(dims, default, pieces)
            })
    }

    proptest! {
        #[test]
        fn overlay_disjoint_and_pointwise(f in arb_pwc(2), g in arb_pwc(2)) {
            let sum = f.overlay(&g, |a, b| a + b);
            prop_assert!(sum.pieces_disjoint());
            let xm = [10.0, 10.0];
            for i in 0..12 {
                for j in 0..12 {
                    let x = [i as f64 * 0.83, j as f64 * 0.83];
                    let want = f.value_at(&x, &xm) + g.value_at(&x, &xm);
                    prop_assert!((want - sum.value_at(&x, &xm)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn max_is_idempotent_and_commutative_in_value(f in arb_pwc(2), g in arb_pwc(2)) {
            let (m_fg, _) = pointwise_max_tagged(&[(0, &f), (1, &g)], None, &[10.0, 10.0]).unwrap();
            let (m_gf, _) = pointwise_max_tagged(&[(0, &g), (1, &f)], None, &[10.0, 10.0]).unwrap();
            let (m_ff, _) = pointwise_max_tagged(&[(0, &f), (1, &f)], None, &[10.0, 10.0]).unwrap();
            let xm = [10.0, 10.0];
            for i in 0..10 {
                for j in 0..10 {
                    let x = [i as f64 + 0.37, j as f64 + 0.37];
                    prop_assert_eq!(m_fg.value_at(&x, &xm), m_gf.value_at(&x, &xm));
                    prop_assert_eq!(m_ff.value_at(&x, &xm), f.value_at(&x, &xm));
                }
            }
        }

        #[test]
        fn max_associative_in_value(f in arb_pwc(2), g in arb_pwc(2), h in arb_pwc(2)) {
            let (m_all, _) = pointwise_max_tagged(&[(0, &f), (1, &g), (2, &h)], None, &[10.0, 10.0]).unwrap();
            let (m_fg, _) = pointwise_max_tagged(&[(0, &f), (1, &g)], None, &[10.0, 10.0]).unwrap();
            let (m_nested, _) = pointwise_max_tagged(&[(0, &m_fg), (2, &h)], None, &[10.0, 10.0]).unwrap();
            let xm = [10.0, 10.0];
            for i in 0..10 {
                for j in 0..10 {
                    let x = [i as f64 + 0.61, j as f64 + 0.61];
                    prop_assert_eq!(m_all.value_at(&x, &xm), m_nested.value_at(&x, &xm));
                }
            }
        }

        #[test]
        fn shift_preserves_or_shrinks_measure(f in arb_pwc(2), dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
            let xm = [10.0, 10.0];
            let g = f.shift(&[dx, dy], 0.0, &xm);
            let f_mass: f64 = f.pieces().iter().map(|(b, _)| b.volume()).sum();
            let g_mass: f64 = g.pieces().iter().map(|(b, _)| b.volume()).sum();
            // Clipping only removes mass; pieces can also gain explicit
            // default-valued filler inside the shifted domain, so compare
            // against the whole hypercube volume as the upper bound.
            prop_assert!(g_mass <= 100.0 + 1e-9);
            let _ = f_mass;
            // Pointwise pull-back check away from boundaries.
            for i in 0..10 {
                for j in 0..10 {
                    let x = [i as f64 + 0.29, j as f64 + 0.29];
                    let y = [x[0] + dx, x[1] + dy];
                    if y.iter().zip(&xm).all(|(c, m)| *c >= 0.0 && c < m) {
                        prop_assert_eq!(g.value_at(&x, &xm), f.value_at(&y, &xm));
                    }
                }
            }
        }

        #[test]
        fn region_ops_disjoint(a in arb_box(2, 10.0), b in arb_box(2, 10.0), c in arb_box(2, 10.0)) {
            let r = Region::from_boxes(2, vec![a, b]);
            let s = Region::from_box(c);
            for reg in [r.union(&s), r.intersect(&s), r.subtract(&s)] {
                for i in 0..reg.boxes().len() {
                    for j in (i + 1)..reg.boxes().len() {
                        prop_assert!(!reg.boxes()[i].overlaps(&reg.boxes()[j]));
                    }
                }
            }
        }
    }
}
