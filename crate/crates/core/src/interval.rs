//! Finite unions of half-open intervals [a, b).

use serde::Serialize;

/// Points closer than this are treated as the same endpoint.
pub const POINT_TOL: f64 = 1e-13;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IntervalSet {
    parts: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self { parts: Vec::new() }
    }

    pub fn unit() -> Self {
        Self { parts: vec![(0.0, 1.0)] }
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Self::from_parts(vec![(a, b)])
    }

    /// Sorts, drops empty pieces and merges overlapping or touching ones.
    pub fn from_parts(mut parts: Vec<(f64, f64)>) -> Self {
        parts.retain(|(a, b)| b - a > POINT_TOL);
        parts.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(parts.len());
        for (a, b) in parts {
            match out.last_mut() {
                Some(last) if a <= last.1 + POINT_TOL => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        Self { parts: out }
    }

    pub fn parts(&self) -> &[(f64, f64)] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.parts.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        let i = self.parts.partition_point(|p| p.1 <= x);
        self.parts.get(i).is_some_and(|&(a, _)| a <= x)
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut v = self.parts.clone();
        v.extend_from_slice(&other.parts);
        Self::from_parts(v)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.parts.len() && j < other.parts.len() {
            let (a, b) = self.parts[i];
            let (c, d) = other.parts[j];
            let lo = a.max(c);
            let hi = b.min(d);
            if hi - lo > POINT_TOL {
                out.push((lo, hi));
            }
            if b < d {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { parts: out }
    }

    pub fn intersect_interval(&self, a: f64, b: f64) -> Self {
        self.intersect(&Self::interval(a, b))
    }

    /// Complement inside [0, 1).
    pub fn complement(&self) -> Self {
        let mut out = Vec::new();
        let mut x = 0.0;
        for &(a, b) in &self.parts {
            if a - x > POINT_TOL {
                out.push((x, a));
            }
            x = b;
        }
        if 1.0 - x > POINT_TOL {
            out.push((x, 1.0));
        }
        Self { parts: out }
    }

    pub fn endpoints(&self) -> Vec<f64> {
        self.parts.iter().flat_map(|&(a, b)| [a, b]).collect()
    }

    /// True when every piece is contained in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        (self.measure() - self.intersect(other).measure()).abs() <= POINT_TOL * (1 + self.len()) as f64
    }
}

/// Sorted, deduplicated points; within `tol` the earlier point wins.
pub fn dedup_points(mut pts: Vec<f64>, tol: f64) -> Vec<f64> {
    pts.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(pts.len());
    for p in pts {
        if out.last().is_none_or(|&q| p - q > tol) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn merge_and_measure() {
        let s = IntervalSet::from_parts(vec![(0.5, 0.75), (0.0, 0.25), (0.25, 0.3)]);
        assert_eq!(s.parts(), &[(0.0, 0.3), (0.5, 0.75)]);
        assert!((s.measure() - 0.55).abs() < 1e-15);
        assert!(s.contains(0.0) && s.contains(0.6) && !s.contains(0.3) && !s.contains(0.75));
    }

    #[test]
    fn complement_and_intersection() {
        let h = IntervalSet::interval(0.0, 0.25);
        assert_eq!(h.complement().parts(), &[(0.25, 1.0)]);
        let s = IntervalSet::from_parts(vec![(0.1, 0.4), (0.6, 0.9)]);
        let t = IntervalSet::from_parts(vec![(0.3, 0.7)]);
        assert_eq!(s.intersect(&t).parts(), &[(0.3, 0.4), (0.6, 0.7)]);
        assert!(s.intersect(&t).is_subset_of(&s));
    }

    fn arb_set() -> impl Strategy<Value = IntervalSet> {
        proptest::collection::vec((0.0f64..1.0, 0.0f64..0.3), 0..6)
            .prop_map(|v| IntervalSet::from_parts(v.into_iter().map(|(a, w)| (a, (a + w).min(1.0))).collect()))
    }

    proptest! {
        #[test]
        fn measure_is_additive(s in arb_set(), t in arb_set()) {
            let lhs = s.union(&t).measure() + s.intersect(&t).measure();
            prop_assert!((lhs - s.measure() - t.measure()).abs() < 1e-10);
        }

        #[test]
        fn complement_partitions_unit(s in arb_set()) {
            prop_assert!((s.measure() + s.complement().measure() - 1.0).abs() < 1e-10);
            prop_assert!(s.intersect(&s.complement()).measure() < 1e-10);
        }
    }
}
