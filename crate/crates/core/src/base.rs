//! Finite realizations of the driving system: single-cycle permutations and
//! seeded orbit windows.

use serde::Serialize;

use crate::error::{Error, Result};

pub type FiberId = usize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum BaseKind {
    /// θ is a single-cycle permutation of the fibers.
    Cycle,
    /// Fibers are times −N..=N of one orbit; index i stands for time i − N.
    OrbitWindow { half_width: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct BaseSystem {
    kind: BaseKind,
    weights: Vec<f64>,
    succ: Vec<usize>,
    pred: Vec<usize>,
}

impl BaseSystem {
    /// Cyclic shift ω ↦ ω+1 mod n.
    pub fn cycle(n: usize, weights: Option<Vec<f64>>) -> Result<Self> {
        let perm: Vec<usize> = (0..n).map(|i| (i + 1) % n.max(1)).collect();
        Self::from_permutation(perm, weights)
    }

    pub fn from_permutation(perm: Vec<usize>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = perm.len();
        if n == 0 {
            return Err(Error::invalid("base needs at least one fiber"));
        }
        let mut pred = vec![usize::MAX; n];
        for (i, &j) in perm.iter().enumerate() {
            if j >= n || pred[j] != usize::MAX {
                return Err(Error::invalid("shift rule is not a permutation"));
            }
            pred[j] = i;
        }
        let mut len = 1;
        let mut w = perm[0];
        while w != 0 {
            w = perm[w];
            len += 1;
        }
        if len != n {
            return Err(Error::invalid(format!(
                "permutation splits into several cycles (cycle through 0 has length {len} of {n})"
            )));
        }
        let weights = check_weights(weights, n)?;
        Ok(Self { kind: BaseKind::Cycle, weights, succ: perm, pred })
    }

    /// Window of 2N+1 fibers with uniform weights.
    pub fn orbit_window(half_width: usize) -> Self {
        let n = 2 * half_width + 1;
        let succ = (0..n).map(|i| if i + 1 < n { i + 1 } else { usize::MAX }).collect();
        let pred = (0..n).map(|i| if i > 0 { i - 1 } else { usize::MAX }).collect();
        Self {
            kind: BaseKind::OrbitWindow { half_width },
            weights: vec![1.0 / n as f64; n],
            succ,
            pred,
        }
    }

    pub fn kind(&self) -> &BaseKind {
        &self.kind
    }

    pub fn size(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cycle length for cycles, `None` for windows.
    pub fn period(&self) -> Option<usize> {
        match self.kind {
            BaseKind::Cycle => Some(self.size()),
            BaseKind::OrbitWindow { .. } => None,
        }
    }

    /// θⁿω.
    pub fn advance(&self, omega: FiberId, n: i64) -> Result<FiberId> {
        if omega >= self.size() {
            return Err(Error::invalid(format!("fiber {omega} out of range")));
        }
        match self.kind {
            BaseKind::Cycle => {
                let p = self.size() as i64;
                let steps = n.rem_euclid(p);
                let mut w = omega;
                // For plain cyclic shifts this is arithmetic; general permutations walk.
                for _ in 0..steps {
                    w = self.succ[w];
                }
                Ok(w)
            }
            BaseKind::OrbitWindow { .. } => {
                let target = omega as i64 + n;
                if target < 0 || target >= self.size() as i64 {
                    Err(Error::WindowExceeded { fiber: omega, shift: n })
                } else {
                    Ok(target as usize)
                }
            }
        }
    }

    pub fn next(&self, omega: FiberId) -> Result<FiberId> {
        self.advance(omega, 1)
    }

    pub fn prev(&self, omega: FiberId) -> Result<FiberId> {
        self.advance(omega, -1)
    }

    /// Number of forward steps available from ω (unbounded for cycles).
    pub fn forward_room(&self, omega: FiberId) -> usize {
        match self.kind {
            BaseKind::Cycle => usize::MAX,
            BaseKind::OrbitWindow { .. } => self.size() - 1 - omega,
        }
    }

    /// Fibers that have a successor.
    pub fn has_next(&self, omega: FiberId) -> bool {
        self.succ.get(omega).is_some_and(|&s| s != usize::MAX)
    }

    /// Fibers in θ-order starting from 0.
    pub fn orbit_order(&self) -> Vec<FiberId> {
        let mut out = Vec::with_capacity(self.size());
        let mut w = 0;
        for _ in 0..self.size() {
            out.push(w);
            if !self.has_next(w) {
                break;
            }
            w = self.succ[w];
        }
        out
    }

    /// Σ weights·values.
    pub fn birkhoff_average(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.size() {
            return Err(Error::invalid("one value per fiber is required"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in Birkhoff average"));
        }
        Ok(self.weights.iter().zip(values).map(|(w, v)| w * v).sum())
    }

    /// Weighted average over a subset of fibers, weights renormalized.
    pub fn average_over(&self, fibers: &[FiberId], values: &[f64]) -> Result<f64> {
        if fibers.len() != values.len() || fibers.is_empty() {
            return Err(Error::invalid("average needs matching non-empty fiber/value lists"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in Birkhoff average"));
        }
        let total: f64 = fibers.iter().map(|&f| self.weights[f]).sum();
        Ok(fibers.iter().zip(values).map(|(&f, v)| self.weights[f] * v).sum::<f64>() / total)
    }
}

fn check_weights(weights: Option<Vec<f64>>, n: usize) -> Result<Vec<f64>> {
    let w = weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
    if w.len() != n {
        return Err(Error::invalid(format!("expected {n} weights, got {}", w.len())));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("weights sum to {s}, not 1")));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cycle_shifts() {
        let b = BaseSystem::cycle(3, None).unwrap();
        assert_eq!(b.advance(0, 1).unwrap(), 1);
        assert_eq!(b.advance(0, -1).unwrap(), 2);
        assert_eq!(b.advance(2, 4).unwrap(), 0);
    }

    #[test]
    fn averages() {
        let b = BaseSystem::cycle(2, None).unwrap();
        let v = b.birkhoff_average(&[0.0, (2.0f64 / 3.0).ln()]).unwrap();
        assert!((v - 0.5 * (2.0f64 / 3.0).ln()).abs() < 1e-15);
        let b = BaseSystem::cycle(2, Some(vec![0.25, 0.75])).unwrap();
        assert_eq!(b.birkhoff_average(&[4.0, 0.0]).unwrap(), 1.0);
        assert_eq!(b.birkhoff_average(&[3.5, 3.5]).unwrap(), 3.5);
        assert!(b.birkhoff_average(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn rejects_bad_bases() {
        assert!(BaseSystem::from_permutation(vec![1, 0, 2], None).is_err());
        assert!(BaseSystem::from_permutation(vec![0, 0], None).is_err());
        assert!(BaseSystem::cycle(2, Some(vec![0.5, 0.6])).is_err());
        assert!(BaseSystem::cycle(2, Some(vec![1.5, -0.5])).is_err());
    }

    #[test]
    fn general_single_cycle_permutation() {
        let b = BaseSystem::from_permutation(vec![2, 0, 1], None).unwrap();
        assert_eq!(b.advance(0, 1).unwrap(), 2);
        assert_eq!(b.advance(0, -1).unwrap(), 1);
        assert_eq!(b.orbit_order(), vec![0, 2, 1]);
    }

    #[test]
    fn window_boundary_is_an_error() {
        let b = BaseSystem::orbit_window(2);
        assert_eq!(b.size(), 5);
        assert_eq!(b.advance(2, 2).unwrap(), 4);
        assert!(matches!(b.advance(2, 3), Err(Error::WindowExceeded { .. })));
        assert!(b.advance(0, -1).is_err());
        assert_eq!(b.forward_room(1), 3);
    }

    proptest! {
        #[test]
        fn advance_composes(n in 1usize..9, w in 0usize..9, a in -20i64..20, c in -20i64..20) {
            let b = BaseSystem::cycle(n, None).unwrap();
            let w = w % n;
            let lhs = b.advance(w, a + c).unwrap();
            let rhs = b.advance(b.advance(w, a).unwrap(), c).unwrap();
            prop_assert_eq!(lhs, rhs);
            prop_assert_eq!(b.advance(b.advance(w, a).unwrap(), -a).unwrap(), w);
        }

        #[test]
        fn window_advance_composes(w in 0usize..11, a in -5i64..5, c in -5i64..5) {
            let b = BaseSystem::orbit_window(5);
            if let (Ok(x), Ok(y)) = (b.advance(w, a), b.advance(w, a + c)) {
                if let Ok(z) = b.advance(x, c) {
                    prop_assert_eq!(y, z);
                }
                prop_assert_eq!(b.advance(x, -a).unwrap(), w);
            }
        }

        #[test]
        fn average_is_linear(v in proptest::collection::vec(-5.0f64..5.0, 3), u in proptest::collection::vec(-5.0f64..5.0, 3), s in -3.0f64..3.0) {
            let b = BaseSystem::cycle(3, Some(vec![0.2, 0.3, 0.5])).unwrap();
            let mix: Vec<f64> = v.iter().zip(&u).map(|(x, y)| x + s * y).collect();
            let lhs = b.birkhoff_average(&mix).unwrap();
            let rhs = b.birkhoff_average(&v).unwrap() + s * b.birkhoff_average(&u).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
