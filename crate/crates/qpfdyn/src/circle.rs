//! Arithmetic on the circle 𝕋¹ = ℝ/ℤ, measured in revolutions.
//!
//! Points live in `[0, 1)`. Intervals run counterclockwise from `lo` and are
//! stored as a start point plus a length in `[0, 1]`, so a full circle is
//! representable. [`RegionUnion`] is a canonical finite union of such arcs.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Absolute tolerance for equality and intersection tests, in revolutions.
pub const TOL: f64 = 1e-12;

/// Reduce a real number into `[0, 1)`.
#[inline]
pub fn mod1(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Representative of `x` mod 1 in `[-1/2, 1/2)`.
#[inline]
pub fn centered(x: f64) -> f64 {
    let r = mod1(x + 0.5) - 0.5;
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CirclePoint(f64);

impl CirclePoint {
    pub fn new(x: f64) -> Self {
        CirclePoint(mod1(x))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `self + t` on the circle.
    pub fn shift(self, t: f64) -> Self {
        CirclePoint::new(self.0 + t)
    }
}

impl From<f64> for CirclePoint {
    fn from(x: f64) -> Self {
        CirclePoint::new(x)
    }
}

impl fmt::Display for CirclePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Counterclockwise length of the arc from `a` to `b`, in `[0, 1)`.
#[inline]
pub fn ccw_length(a: CirclePoint, b: CirclePoint) -> f64 {
    mod1(b.0 - a.0)
}

/// Euclidean distance on the circle, in `[0, 1/2]`.
#[inline]
pub fn circle_dist(a: CirclePoint, b: CirclePoint) -> f64 {
    dist(a.0, b.0)
}

#[inline]
pub(crate) fn dist(a: f64, b: f64) -> f64 {
    let d = mod1(b - a);
    d.min(1.0 - d)
}

/// Closed counterclockwise arc `[lo, lo + len]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleInterval {
    lo: CirclePoint,
    len: f64,
}

impl CircleInterval {
    /// Arc from `lo` counterclockwise to `hi`. Equal endpoints give a
    /// degenerate arc.
    pub fn new(lo: CirclePoint, hi: CirclePoint) -> Self {
        CircleInterval {
            lo,
            len: ccw_length(lo, hi),
        }
    }

    pub fn from_reals(lo: f64, hi: f64) -> Self {
        Self::new(CirclePoint::new(lo), CirclePoint::new(hi))
    }

    /// Arc starting at `lo` with length clamped into `[0, 1]`.
    pub fn with_length(lo: CirclePoint, len: f64) -> Self {
        CircleInterval {
            lo,
            len: len.clamp(0.0, 1.0),
        }
    }

    /// Closed ball of radius `r` about `c`.
    pub fn ball(c: f64, r: f64) -> Self {
        Self::with_length(CirclePoint::new(c - r), 2.0 * r)
    }

    pub fn full() -> Self {
        CircleInterval {
            lo: CirclePoint(0.0),
            len: 1.0,
        }
    }

    pub fn lo(&self) -> CirclePoint {
        self.lo
    }

    pub fn hi(&self) -> CirclePoint {
        self.lo.shift(self.len)
    }

    pub fn length(&self) -> f64 {
        self.len
    }

    pub fn is_full(&self) -> bool {
        self.len >= 1.0 - TOL
    }

    pub fn is_degenerate(&self) -> bool {
        self.len <= TOL
    }

    pub fn midpoint(&self) -> CirclePoint {
        self.lo.shift(0.5 * self.len)
    }

    /// Point at fraction `t ∈ [0,1]` along the arc.
    pub fn at(&self, t: f64) -> f64 {
        mod1(self.lo.0 + t * self.len)
    }

    /// Endpoint-inclusive membership.
    pub fn contains(&self, x: CirclePoint) -> bool {
        self.contains_val(x.0)
    }

    #[inline]
    pub fn contains_val(&self, x: f64) -> bool {
        if self.is_full() {
            return true;
        }
        let off = mod1(x - self.lo.0);
        off <= self.len + TOL || off >= 1.0 - TOL
    }

    /// Membership in the open arc, shrunk by `TOL` at both ends.
    pub fn contains_interior(&self, x: f64) -> bool {
        if self.is_full() {
            return true;
        }
        let off = mod1(x - self.lo.0);
        off > TOL && off < self.len - TOL
    }

    /// Offset of `x` from `lo` when `x` lies in the arc.
    pub fn offset(&self, x: f64) -> Option<f64> {
        let off = mod1(x - self.lo.0);
        if off <= self.len + TOL {
            Some(off.min(self.len))
        } else if off >= 1.0 - TOL {
            Some(0.0)
        } else {
            None
        }
    }

    /// The complementary open arc `(hi, lo)`, taken as closed.
    pub fn complement(&self) -> CircleInterval {
        CircleInterval {
            lo: self.hi(),
            len: 1.0 - self.len,
        }
    }

    pub fn translate(&self, t: f64) -> CircleInterval {
        CircleInterval {
            lo: self.lo.shift(t),
            len: self.len,
        }
    }

    /// Enlarge by `r` on both sides; negative `r` shrinks.
    pub fn dilate(&self, r: f64) -> CircleInterval {
        let len = self.len + 2.0 * r;
        if len <= 0.0 {
            CircleInterval {
                lo: self.midpoint(),
                len: 0.0,
            }
        } else {
            CircleInterval::with_length(self.lo.shift(-r), len)
        }
    }

    pub fn intersects(&self, other: &CircleInterval) -> bool {
        self.contains_val(other.lo.0) || other.contains_val(self.lo.0)
    }

    /// `self ⊆ other` up to `TOL`.
    pub fn is_subset_of(&self, other: &CircleInterval) -> bool {
        if other.is_full() {
            return true;
        }
        match other.offset(self.lo.0) {
            Some(off) => off + self.len <= other.len + TOL,
            None => false,
        }
    }

    /// Distance between two arcs; zero when they meet.
    pub fn distance(&self, other: &CircleInterval) -> f64 {
        if self.intersects(other) {
            return 0.0;
        }
        let (a0, a1) = (self.lo.0, self.hi().0);
        let (b0, b1) = (other.lo.0, other.hi().0);
        dist(a0, b0)
            .min(dist(a0, b1))
            .min(dist(a1, b0))
            .min(dist(a1, b1))
    }

    /// Distance from a point to the arc.
    pub fn distance_to(&self, x: f64) -> f64 {
        if self.contains_val(x) {
            0.0
        } else {
            dist(x, self.lo.0).min(dist(x, self.hi().0))
        }
    }
}

pub fn contains(i: &CircleInterval, x: CirclePoint) -> bool {
    i.contains(x)
}

/// Finite union of pairwise disjoint arcs, sorted by `lo`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionUnion {
    components: Vec<CircleInterval>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CircleError {
    #[error("region is empty")]
    EmptyRegion,
}

impl RegionUnion {
    pub fn empty() -> Self {
        RegionUnion {
            components: Vec::new(),
        }
    }

    pub fn full() -> Self {
        RegionUnion {
            components: vec![CircleInterval::full()],
        }
    }

    pub fn single(i: CircleInterval) -> Self {
        Self::new(vec![i])
    }

    /// Canonicalize: drop degenerate arcs, merge overlaps (including across
    /// 0), sort by `lo`.
    pub fn new(items: Vec<CircleInterval>) -> Self {
        let mut segs: Vec<(f64, f64)> = Vec::with_capacity(items.len());
        for it in items {
            if it.is_full() {
                return Self::full();
            }
            if it.is_degenerate() {
                continue;
            }
            segs.push((it.lo.0, it.lo.0 + it.len));
        }
        if segs.is_empty() {
            return Self::empty();
        }
        segs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(segs.len());
        for (s, e) in segs {
            match merged.last_mut() {
                Some(last) if s <= last.1 + TOL => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        // arcs that spill past 1 may swallow arcs at the start
        while merged.len() > 1 {
            let last_end = merged[merged.len() - 1].1;
            let first = merged[0];
            if last_end - 1.0 >= first.0 - TOL {
                let n = merged.len();
                merged[n - 1].1 = last_end.max(first.1 + 1.0);
                merged.remove(0);
            } else {
                break;
            }
        }
        if merged.len() == 1 && merged[0].1 - merged[0].0 >= 1.0 - TOL {
            return Self::full();
        }
        let components = merged
            .into_iter()
            .map(|(s, e)| CircleInterval::with_length(CirclePoint::new(s), e - s))
            .collect::<Vec<_>>();
        let mut out = RegionUnion { components };
        out.components.sort_by(|a, b| a.lo.0.total_cmp(&b.lo.0));
        out
    }

    pub fn components(&self) -> &[CircleInterval] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.components.len() == 1 && self.components[0].is_full()
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        self.components.iter().map(|c| c.len).sum()
    }

    pub fn max_component_length(&self) -> f64 {
        self.components.iter().map(|c| c.len).fold(0.0, f64::max)
    }

    pub fn min_component_length(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.len)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: CirclePoint) -> bool {
        self.contains_val(x.0)
    }

    pub fn contains_val(&self, x: f64) -> bool {
        self.components.iter().any(|c| c.contains_val(x))
    }

    /// Index of the component containing `x`.
    pub fn component_of(&self, x: f64) -> Option<usize> {
        self.components.iter().position(|c| c.contains_val(x))
    }

    pub fn union(&self, other: &RegionUnion) -> RegionUnion {
        let mut v = self.components.clone();
        v.extend_from_slice(&other.components);
        RegionUnion::new(v)
    }

    pub fn union_all<'a, I: IntoIterator<Item = &'a RegionUnion>>(regions: I) -> RegionUnion {
        let mut v = Vec::new();
        for r in regions {
            v.extend_from_slice(&r.components);
        }
        RegionUnion::new(v)
    }

    /// Closure of the complement.
    pub fn complement(&self) -> RegionUnion {
        if self.is_empty() {
            return Self::full();
        }
        if self.is_full() {
            return Self::empty();
        }
        let n = self.components.len();
        let mut gaps = Vec::with_capacity(n);
        for i in 0..n {
            let a = &self.components[i];
            let b = &self.components[(i + 1) % n];
            gaps.push(CircleInterval::new(a.hi(), b.lo));
        }
        RegionUnion::new(gaps)
    }

    pub fn intersection(&self, other: &RegionUnion) -> RegionUnion {
        self.complement().union(&other.complement()).complement()
    }

    /// `self ∖ other`, closed.
    pub fn difference(&self, other: &RegionUnion) -> RegionUnion {
        self.intersection(&other.complement())
    }

    /// Shift every component by `t` revolutions.
    pub fn shift(&self, t: f64) -> RegionUnion {
        RegionUnion::new(self.components.iter().map(|c| c.translate(t)).collect())
    }

    /// Shift every component by `k·ω`.
    pub fn translate(&self, k: i64, omega: CirclePoint) -> RegionUnion {
        self.shift(mod1(k as f64 * omega.0))
    }

    pub fn dilate(&self, r: f64) -> RegionUnion {
        RegionUnion::new(self.components.iter().map(|c| c.dilate(r)).collect())
    }

    /// `self ⊆ other` up to `TOL`.
    pub fn is_subset_of(&self, other: &RegionUnion) -> bool {
        self.components
            .iter()
            .all(|c| other.components.iter().any(|o| c.is_subset_of(o)))
    }

    /// Distance from a point to the region; infinite when empty.
    pub fn distance_to(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.distance_to(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance between regions; `+∞` when either is empty.
    pub fn distance_or_inf(&self, other: &RegionUnion) -> f64 {
        let mut best = f64::INFINITY;
        for a in &self.components {
            for b in &other.components {
                best = best.min(a.distance(b));
                if best == 0.0 {
                    return 0.0;
                }
            }
        }
        best
    }
}

impl FromIterator<CircleInterval> for RegionUnion {
    fn from_iter<T: IntoIterator<Item = CircleInterval>>(iter: T) -> Self {
        RegionUnion::new(iter.into_iter().collect())
    }
}

/// Infimum of point distances between two nonempty regions.
pub fn region_distance(a: &RegionUnion, b: &RegionUnion) -> Result<f64, CircleError> {
    if a.is_empty() || b.is_empty() {
        return Err(CircleError::EmptyRegion);
    }
    Ok(a.distance_or_inf(b))
}

pub fn translate(a: &RegionUnion, k: i64, omega: CirclePoint) -> RegionUnion {
    a.translate(k, omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(x: f64) -> CirclePoint {
        CirclePoint::new(x)
    }

    fn iv(a: f64, b: f64) -> CircleInterval {
        CircleInterval::from_reals(a, b)
    }

    #[test]
    fn mod1_stays_half_open() {
        assert_eq!(mod1(1.0), 0.0);
        assert_eq!(mod1(-1e-20), 0.0);
        assert!(mod1(-0.25) == 0.75);
        assert!(mod1(3.5) == 0.5);
    }

    #[test]
    fn ccw_lengths() {
        assert_abs_diff_eq!(ccw_length(p(0.25), p(0.75)), 0.5);
        assert_abs_diff_eq!(ccw_length(p(0.75), p(0.25)), 0.5);
        assert_eq!(ccw_length(p(0.3), p(0.3)), 0.0);
    }

    #[test]
    fn distances() {
        assert_abs_diff_eq!(circle_dist(p(0.9), p(0.1)), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(circle_dist(p(0.0), p(0.5)), 0.5);
        assert_eq!(circle_dist(p(0.123), p(0.123)), 0.0);
    }

    #[test]
    fn containment() {
        assert!(contains(&iv(0.9, 0.1), p(0.95)));
        assert!(!contains(&iv(0.9, 0.1), p(0.5)));
        assert!(contains(&iv(0.2, 0.4), p(0.2)));
    }

    #[test]
    fn region_distances() {
        let r = |a, b| RegionUnion::single(iv(a, b));
        assert_abs_diff_eq!(
            region_distance(&r(0.1, 0.2), &r(0.3, 0.4)).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        assert_eq!(region_distance(&r(0.1, 0.3), &r(0.2, 0.4)).unwrap(), 0.0);
        let (a, b) = (r(0.9, 0.95), r(0.05, 0.1));
        let brute = [0.9, 0.95]
            .iter()
            .flat_map(|&x| [0.05, 0.1].map(move |y| dist(x, y)))
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(region_distance(&a, &b).unwrap(), brute, epsilon = 1e-15);
        assert_abs_diff_eq!(brute, 0.1, epsilon = 1e-15);
        assert_eq!(
            region_distance(&RegionUnion::empty(), &a),
            Err(CircleError::EmptyRegion)
        );
    }

    #[test]
    fn translations() {
        let a = RegionUnion::single(iv(0.0, 0.1));
        let t = translate(&a, 1, p(0.25));
        assert_abs_diff_eq!(t.components()[0].lo().value(), 0.25);
        assert_abs_diff_eq!(t.components()[0].hi().value(), 0.35, epsilon = 1e-15);

        let w = RegionUnion::single(iv(0.9, 0.05));
        let t = translate(&w, 2, p(0.5));
        assert_abs_diff_eq!(t.components()[0].lo().value(), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(t.components()[0].length(), 0.15, epsilon = 1e-15);

        let two = RegionUnion::new(vec![iv(0.1, 0.2), iv(0.6, 0.7)]);
        let t = translate(&two, -1, p(0.3));
        let c = t.components();
        assert_eq!(c.len(), 2);
        assert_abs_diff_eq!(c[0].lo().value(), 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(c[0].hi().value(), 0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(c[1].lo().value(), 0.8, epsilon = 1e-14);
        assert_abs_diff_eq!(c[1].hi().value(), 0.9, epsilon = 1e-14);
    }

    #[test]
    fn canonical_merging() {
        let r = RegionUnion::new(vec![
            iv(0.95, 0.05),
            iv(0.0, 0.1),
            iv(0.5, 0.5),
            iv(0.3, 0.4),
        ]);
        assert_eq!(r.len(), 2);
        assert_abs_diff_eq!(r.measure(), 0.25, epsilon = 1e-14);
        let full = RegionUnion::new(vec![iv(0.0, 0.6), iv(0.5, 0.1)]);
        assert!(full.is_full());
        assert!(full.complement().is_empty());
    }

    #[test]
    fn complement_and_intersection() {
        let a = RegionUnion::new(vec![iv(0.1, 0.2), iv(0.6, 0.7)]);
        let c = a.complement();
        assert_abs_diff_eq!(c.measure(), 0.8, epsilon = 1e-14);
        let b = RegionUnion::single(iv(0.15, 0.65));
        let i = a.intersection(&b);
        assert_eq!(i.len(), 2);
        assert_abs_diff_eq!(i.measure(), 0.1, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn ccw_lengths_sum_to_one(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (pa, pb) = (p(a), p(b));
            let s = ccw_length(pa, pb) + ccw_length(pb, pa);
            if circle_dist(pa, pb) > TOL {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn closed_xor_open_complement(a in 0.0f64..1.0, b in 0.0f64..1.0, x in 0.0f64..1.0) {
            prop_assume!(dist(x, a) > 1e-9 && dist(x, b) > 1e-9 && dist(a, b) > 1e-9);
            let i = iv(a, b);
            let open_comp = i.complement();
            prop_assert!(i.contains_val(x) ^ open_comp.contains_interior(x));
        }

        #[test]
        fn region_distance_symmetric_and_zero_iff_meet(
            a in 0.0f64..1.0, la in 0.0f64..0.3, b in 0.0f64..1.0, lb in 0.0f64..0.3
        ) {
            let ra = RegionUnion::single(CircleInterval::with_length(p(a), la + 1e-6));
            let rb = RegionUnion::single(CircleInterval::with_length(p(b), lb + 1e-6));
            let d1 = region_distance(&ra, &rb).unwrap();
            let d2 = region_distance(&rb, &ra).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-15);
            let meet = !ra.intersection(&rb).is_empty()
                || ra.components()[0].intersects(&rb.components()[0]);
            prop_assert_eq!(d1 <= TOL, meet);
        }

        #[test]
        fn translate_roundtrip(a in 0.0f64..1.0, la in 0.001f64..0.2, k in -50i64..50, w in 0.0f64..1.0) {
            let r = RegionUnion::new(vec![
                CircleInterval::with_length(p(a), la),
                CircleInterval::with_length(p(a + 0.5), la),
            ]);
            let back = translate(&translate(&r, k, p(w)), -k, p(w));
            prop_assert_eq!(back.len(), r.len());
            for (x, y) in back.components().iter().zip(r.components()) {
                prop_assert!(dist(x.lo().value(), y.lo().value()) < 1e-12);
                prop_assert!((x.length() - y.length()).abs() < 1e-12);
            }
        }

        #[test]
        fn union_measure_bounded(xs in proptest::collection::vec((0.0f64..1.0, 0.0f64..0.2), 1..8)) {
            let r: RegionUnion = xs.iter().map(|&(a, l)| CircleInterval::with_length(p(a), l)).collect();
            let total: f64 = xs.iter().map(|x| x.1).sum();
            prop_assert!(r.measure() <= total + 1e-12);
            prop_assert!((r.measure() + r.complement().measure() - 1.0).abs() < 1e-9);
            for w in r.components().windows(2) {
                prop_assert!(w[0].lo().value() <= w[1].lo().value());
                prop_assert!(!w[0].intersects(&w[1]));
            }
        }
    }
}
