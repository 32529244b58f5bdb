//! Piecewise monotone fiber maps, holes, monotonicity partitions and survivor sets.

use std::fmt;
use std::sync::Arc;

use crate::base::{BaseSystem, FiberId};
use crate::error::{Error, Result};
use crate::interval::{dedup_points, IntervalSet, POINT_TOL};

pub type MapFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tolerance for bisection on nonlinear branch inverses.
pub const INVERSE_TOL: f64 = 1e-13;

/// Upper limit on partition size before refinement is refused.
const MAX_PARTITION_POINTS: usize = 4_000_000;

#[derive(Clone)]
pub enum BranchKind {
    Affine { slope: f64, intercept: f64 },
    /// x ↦ 1/x − k on [1/(k+1), 1/k).
    Gauss { k: u64 },
    Callable { f: MapFn, inverse: Option<MapFn>, derivative: Option<MapFn> },
}

impl fmt::Debug for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchKind::Affine { slope, intercept } => write!(f, "Affine({slope}, {intercept})"),
            BranchKind::Gauss { k } => write!(f, "Gauss({k})"),
            BranchKind::Callable { .. } => write!(f, "Callable"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub kind: BranchKind,
}

impl Branch {
    pub fn affine(lo: f64, hi: f64, slope: f64, intercept: f64) -> Self {
        Self { lo, hi, kind: BranchKind::Affine { slope, intercept } }
    }

    pub fn gauss(k: u64) -> Self {
        Self { lo: 1.0 / (k as f64 + 1.0), hi: 1.0 / k as f64, kind: BranchKind::Gauss { k } }
    }

    pub fn callable(lo: f64, hi: f64, f: MapFn, inverse: Option<MapFn>, derivative: Option<MapFn>) -> Self {
        Self { lo, hi, kind: BranchKind::Callable { f, inverse, derivative } }
    }

    /// Continuous extension of the branch to the closed domain, clamped to I.
    pub fn eval(&self, x: f64) -> f64 {
        let y = match &self.kind {
            BranchKind::Affine { slope, intercept } => slope * x + intercept,
            BranchKind::Gauss { k } => 1.0 / x - *k as f64,
            BranchKind::Callable { f, .. } => f(x),
        };
        y.clamp(0.0, 1.0)
    }

    pub fn increasing(&self) -> bool {
        self.eval(self.hi) > self.eval(self.lo)
    }

    /// Image interval (sorted endpoints).
    pub fn image(&self) -> (f64, f64) {
        let (a, b) = (self.eval(self.lo), self.eval(self.hi));
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            BranchKind::Affine { slope, .. } => *slope,
            BranchKind::Gauss { .. } => -1.0 / (x * x),
            BranchKind::Callable { f, derivative, .. } => match derivative {
                Some(d) => d(x),
                None => {
                    let h = 1e-6 * (self.hi - self.lo);
                    let a = (x - h).max(self.lo);
                    let b = (x + h).min(self.hi);
                    (f(b) - f(a)) / (b - a)
                }
            },
        }
    }

    /// Preimage of y inside the closed domain.
    pub fn inverse(&self, y: f64) -> std::result::Result<f64, String> {
        let x = match &self.kind {
            BranchKind::Affine { slope, intercept } => (y - intercept) / slope,
            BranchKind::Gauss { k } => 1.0 / (y + *k as f64),
            BranchKind::Callable { inverse: Some(inv), .. } => inv(y),
            BranchKind::Callable { f, .. } => bisect(f.as_ref(), self.lo, self.hi, y)?,
        };
        Ok(x.clamp(self.lo, self.hi))
    }

    /// Preimage of [c, d) as an interval inside the domain, if nonempty.
    pub fn preimage(&self, c: f64, d: f64) -> std::result::Result<Option<(f64, f64)>, String> {
        let (ia, ib) = self.image();
        let lo = c.max(ia);
        let hi = d.min(ib);
        if hi - lo <= POINT_TOL {
            return Ok(None);
        }
        let (x, y) = (self.inverse(lo)?, self.inverse(hi)?);
        let (x, y) = if x <= y { (x, y) } else { (y, x) };
        Ok((y - x > 0.0).then_some((x, y)))
    }

    /// Sampled strict monotonicity over 33 ordered points.
    pub fn check_monotone(&self) -> std::result::Result<(), String> {
        let raw = |x: f64| match &self.kind {
            BranchKind::Affine { slope, intercept } => slope * x + intercept,
            BranchKind::Gauss { k } => 1.0 / x - *k as f64,
            BranchKind::Callable { f, .. } => f(x),
        };
        let n = 33;
        let ys: Vec<f64> = (0..n)
            .map(|i| raw(self.lo + (self.hi - self.lo) * (i as f64 + 0.5) / n as f64))
            .collect();
        let inc = ys.windows(2).all(|w| w[1] > w[0]);
        let dec = ys.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return Err("branch is not strictly monotone on its domain".into());
        }
        let tol = 1e-12;
        if ys.iter().any(|y| *y < -tol || *y > 1.0 + tol) {
            return Err("branch image leaves [0,1]".into());
        }
        Ok(())
    }
}

fn bisect(f: &(dyn Fn(f64) -> f64 + Send + Sync), lo: f64, hi: f64, y: f64) -> std::result::Result<f64, String> {
    let (fa, fb) = (f(lo), f(hi));
    let inc = fb > fa;
    let (mut a, mut b) = (lo, hi);
    if (inc && (y < fa - 1e-12 || y > fb + 1e-12)) || (!inc && (y > fa + 1e-12 || y < fb - 1e-12)) {
        return Err(format!("value {y} is not bracketed by the branch image"));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if b - a <= INVERSE_TOL {
            return Ok(m);
        }
        let below = f(m) < y;
        if below == inc {
            a = m;
        } else {
            b = m;
        }
    }
    Err("bisection did not reach tolerance".into())
}

/// What happens to branches beyond the retained truncation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tail {
    None,
    /// Gauss branches k > k_max; `resum` aggregates them analytically at grid resolution.
    Gauss { k_max: u64, resum: bool },
}

#[derive(Clone, Debug)]
pub struct FiberMap {
    pub name: String,
    pub branches: Vec<Branch>,
    pub tail: Tail,
    /// Bound on Σ sup |1/T'| over dropped branches.
    pub tail_bound: f64,
}

impl FiberMap {
    pub fn new(name: impl Into<String>, mut branches: Vec<Branch>, tail: Tail, tail_bound: f64) -> Result<Self> {
        branches.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let m = Self { name: name.into(), branches, tail, tail_bound };
        m.validate()?;
        Ok(m)
    }

    pub fn doubling() -> Self {
        Self::new(
            "doubling",
            vec![Branch::affine(0.0, 0.5, 2.0, 0.0), Branch::affine(0.5, 1.0, 2.0, -1.0)],
            Tail::None,
            0.0,
        )
        .expect("doubling map is valid")
    }

    pub fn tripling() -> Self {
        Self::new(
            "tripling",
            vec![
                Branch::affine(0.0, 1.0 / 3.0, 3.0, 0.0),
                Branch::affine(1.0 / 3.0, 2.0 / 3.0, 3.0, -1.0),
                Branch::affine(2.0 / 3.0, 1.0, 3.0, -2.0),
            ],
            Tail::None,
            0.0,
        )
        .expect("tripling map is valid")
    }

    /// Gauss map truncated to branches 1..=k_max.
    pub fn gauss(k_max: u64, resum: bool) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::invalid("gauss family needs k_max >= 1"));
        }
        let branches = (1..=k_max).map(Branch::gauss).collect();
        Self::new(format!("gauss {k_max}"), branches, Tail::Gauss { k_max, resum }, 1.0 / k_max as f64)
    }

    pub fn affine(rows: &[(f64, f64, f64, f64)]) -> Result<Self> {
        let branches = rows.iter().map(|&(a, b, s, c)| Branch::affine(a, b, s, c)).collect();
        Self::new("affine", branches, Tail::None, 0.0)
    }

    fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::invalid(format!("map `{}` has no branches", self.name)));
        }
        let mut prev_hi = 0.0;
        for (i, b) in self.branches.iter().enumerate() {
            let err = |msg: String| Error::Branch { fiber: usize::MAX, branch: i, msg };
            if !(b.lo >= -POINT_TOL && b.hi <= 1.0 + POINT_TOL && b.hi - b.lo > POINT_TOL) {
                return Err(err(format!("domain [{}, {}) is not a subinterval of [0,1]", b.lo, b.hi)));
            }
            if b.lo < prev_hi - POINT_TOL {
                return Err(err("branch domains overlap".into()));
            }
            prev_hi = b.hi;
            b.check_monotone().map_err(err)?;
        }
        Ok(())
    }

    /// Branch endpoints together with 0 and 1.
    pub fn endpoints(&self) -> Vec<f64> {
        let mut v = vec![0.0, 1.0];
        for b in &self.branches {
            v.push(b.lo);
            v.push(b.hi);
        }
        dedup_points(v, POINT_TOL)
    }

    pub fn branch_index_at(&self, x: f64) -> Option<usize> {
        let i = self.branches.partition_point(|b| b.hi <= x);
        self.branches.get(i).filter(|b| b.lo <= x).map(|_| i)
    }

    /// Union of branch domains.
    pub fn domain(&self) -> IntervalSet {
        IntervalSet::from_parts(self.branches.iter().map(|b| (b.lo, b.hi)).collect())
    }
}

/// Geometry of the random map: base, per-fiber maps and holes.
#[derive(Clone, Debug)]
pub struct PhaseSpace {
    pub base: BaseSystem,
    pub maps: Vec<Arc<FiberMap>>,
    pub holes: Vec<IntervalSet>,
}

impl PhaseSpace {
    pub fn new(base: BaseSystem, maps: Vec<Arc<FiberMap>>, holes: Vec<IntervalSet>) -> Result<Self> {
        if maps.len() != base.size() || holes.len() != base.size() {
            return Err(Error::invalid("one map and one hole entry per fiber are required"));
        }
        Ok(Self { base, maps, holes })
    }

    pub fn size(&self) -> usize {
        self.base.size()
    }

    pub fn is_open(&self) -> bool {
        self.holes.iter().any(|h| !h.is_empty())
    }

    /// Open system requested: some fiber has a hole with nonempty complement.
    pub fn hole_is_nontrivial(&self) -> bool {
        self.holes.iter().any(|h| !h.is_empty() && h.measure() < 1.0 - POINT_TOL)
    }

    /// J_ω = I ∖ H_ω.
    pub fn survivor_domain(&self, omega: FiberId) -> IntervalSet {
        self.holes[omega].complement()
    }

    fn branch_err(omega: FiberId, branch: usize, msg: String) -> Error {
        Error::Branch { fiber: omega, branch, msg }
    }

    /// Endpoint set of Z_ω^n, refined by hole endpoints at every level.
    pub fn refine_partition(&self, omega: FiberId, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::invalid("refine_partition needs n >= 1"));
        }
        let map = &self.maps[omega];
        let mut pts = map.endpoints();
        pts.extend(self.holes[omega].endpoints());
        if n > 1 {
            let next = self.base.next(omega)?;
            let inner = self.refine_partition(next, n - 1)?;
            for (bi, b) in map.branches.iter().enumerate() {
                let (c, d) = b.image();
                let lo = inner.partition_point(|&p| p <= c);
                let hi = inner.partition_point(|&p| p < d);
                for &y in &inner[lo..hi] {
                    pts.push(b.inverse(y).map_err(|m| Self::branch_err(omega, bi, m))?);
                }
                if pts.len() > MAX_PARTITION_POINTS {
                    return Err(Error::invalid(format!(
                        "partition of fiber {omega} at level {n} exceeds {MAX_PARTITION_POINTS} points"
                    )));
                }
            }
        }
        Ok(dedup_points(pts, POINT_TOL))
    }

    /// Preimage of `set` under T_ω intersected with J_ω.
    pub fn pull_back(&self, omega: FiberId, set: &IntervalSet) -> Result<IntervalSet> {
        let mut parts = Vec::new();
        for (bi, b) in self.maps[omega].branches.iter().enumerate() {
            let (c, d) = b.image();
            let lo = set.parts().partition_point(|p| p.1 <= c);
            for &(s, t) in &set.parts()[lo..] {
                if s >= d {
                    break;
                }
                if let Some(p) = b.preimage(s, t).map_err(|m| Self::branch_err(omega, bi, m))? {
                    parts.push(p);
                }
            }
        }
        Ok(IntervalSet::from_parts(parts).intersect(&self.survivor_domain(omega)))
    }

    /// K_{ω,n} ∩ T_ω^{−n}(target), with `target` living on θⁿω.
    pub fn pullback_survivors(&self, omega: FiberId, n: usize, target: &IntervalSet) -> Result<IntervalSet> {
        let mut fibers = vec![omega];
        for _ in 0..n {
            let last = *fibers.last().expect("nonempty");
            fibers.push(self.base.next(last)?);
        }
        let top = fibers[n];
        let mut set = target.intersect(&self.survivor_domain(top));
        for k in (0..n).rev() {
            set = self.pull_back(fibers[k], &set)?;
        }
        Ok(set)
    }

    /// K_{ω,n} as exact interval unions.
    pub fn survivor_set(&self, omega: FiberId, n: usize) -> Result<IntervalSet> {
        self.pullback_survivors(omega, n, &IntervalSet::unit())
    }

    /// Branch indices followed by x over n steps, or `None` if x leaves the branch domains.
    pub fn itinerary(&self, omega: FiberId, x: f64, n: usize) -> Result<Option<Vec<(FiberId, usize)>>> {
        let mut out = Vec::with_capacity(n);
        let (mut w, mut y) = (omega, x);
        for _ in 0..n {
            let Some(bi) = self.maps[w].branch_index_at(y) else { return Ok(None) };
            out.push((w, bi));
            y = self.maps[w].branches[bi].eval(y);
            w = self.base.next(w)?;
        }
        Ok(Some(out))
    }

    /// T_ω^n([a, b)) for a cell on which T_ω^n is monotone, following the midpoint's itinerary.
    pub fn image_of_cell(&self, omega: FiberId, a: f64, b: f64, n: usize) -> Result<Option<(f64, f64)>> {
        let Some(path) = self.itinerary(omega, 0.5 * (a + b), n)? else { return Ok(None) };
        let (mut lo, mut hi) = (a, b);
        for (w, bi) in path {
            let br = &self.maps[w].branches[bi];
            let (x, y) = (br.eval(lo.max(br.lo)), br.eval(hi.min(br.hi)));
            (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        }
        Ok(Some((lo, hi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(map: FiberMap, hole: IntervalSet) -> PhaseSpace {
        PhaseSpace::new(BaseSystem::cycle(1, None).unwrap(), vec![Arc::new(map)], vec![hole]).unwrap()
    }

    #[test]
    fn doubling_partitions() {
        let ps = single(FiberMap::doubling(), IntervalSet::empty());
        assert_eq!(ps.refine_partition(0, 1).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(ps.refine_partition(0, 2).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn hole_endpoints_refine_each_level() {
        let ps = single(FiberMap::doubling(), IntervalSet::interval(0.0, 0.25));
        // level 0 only: branch endpoints and the hole endpoint
        assert_eq!(ps.refine_partition(0, 1).unwrap(), vec![0.0, 0.25, 0.5, 1.0]);
        // level 1 adds preimages of 1/4 and 1/2
        assert_eq!(
            ps.refine_partition(0, 2).unwrap(),
            vec![0.0, 0.125, 0.25, 0.5, 0.625, 0.75, 1.0]
        );
    }

    #[test]
    fn survivor_sets() {
        let ps = single(FiberMap::doubling(), IntervalSet::interval(0.5, 1.0));
        assert_eq!(ps.survivor_set(0, 0).unwrap().parts(), &[(0.0, 0.5)]);
        assert_eq!(ps.survivor_set(0, 1).unwrap().parts(), &[(0.0, 0.25)]);
        let ps = single(FiberMap::doubling(), IntervalSet::interval(0.0, 0.25));
        assert_eq!(ps.survivor_set(0, 1).unwrap().parts(), &[(0.25, 0.5), (0.625, 1.0)]);
        let closed = single(FiberMap::doubling(), IntervalSet::empty());
        assert_eq!(closed.survivor_set(0, 5).unwrap().parts(), &[(0.0, 1.0)]);
    }

    #[test]
    fn survivor_masses_follow_fibonacci() {
        // hole [0,1/4): ν(K_n) counts binary words avoiding "00"
        let ps = single(FiberMap::doubling(), IntervalSet::interval(0.0, 0.25));
        let mut fib = (3u64, 5u64);
        for n in 0..10 {
            let m = ps.survivor_set(0, n).unwrap().measure();
            let expect = fib.0 as f64 / 2f64.powi(n as i32 + 2);
            assert!((m - expect).abs() < 1e-14, "n={n}: {m} vs {expect}");
            fib = (fib.1, fib.0 + fib.1);
        }
    }

    #[test]
    fn gauss_branches() {
        let g = FiberMap::gauss(8, false).unwrap();
        assert_eq!(g.branches.len(), 8);
        let b = &g.branches[7];
        assert!((b.eval(0.75) - (1.0 / 0.75 - 1.0)).abs() < 1e-15);
        assert!(!b.increasing());
        let x = b.inverse(0.3).unwrap();
        assert!((b.eval(x) - 0.3).abs() < 1e-14);
        assert_eq!(g.branch_index_at(0.05), None);
    }

    #[test]
    fn callable_branch_uses_bisection() {
        let f: MapFn = Arc::new(|x: f64| x * x);
        let b = Branch::callable(0.0, 1.0, f, None, None);
        let x = b.inverse(0.25).unwrap();
        assert!((x - 0.5).abs() < 1e-12);
        assert!((b.derivative(0.5) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_invalid_maps() {
        assert!(FiberMap::affine(&[(0.0, 0.6, 2.0, 0.0)]).is_err());
        assert!(FiberMap::affine(&[(0.0, 0.5, 2.0, 0.0), (0.4, 1.0, 1.0, 0.0)]).is_err());
        let f: MapFn = Arc::new(|x: f64| (x - 0.5).abs());
        let m = FiberMap::new("vee", vec![Branch::callable(0.0, 1.0, f, None, None)], Tail::None, 0.0);
        assert!(m.is_err());
    }

    #[test]
    fn cell_images() {
        let ps = single(FiberMap::doubling(), IntervalSet::empty());
        assert_eq!(ps.image_of_cell(0, 0.25, 0.5, 2).unwrap(), Some((0.0, 1.0)));
        let g = single(FiberMap::gauss(4, false).unwrap(), IntervalSet::empty());
        let (a, b) = g.image_of_cell(0, 0.5, 1.0, 1).unwrap().unwrap();
        assert!(a.abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn survivors_nest(a in 0.0f64..0.9, w in 0.01f64..0.1, n in 0usize..6) {
            let ps = single(FiberMap::tripling(), IntervalSet::interval(a, (a + w).min(1.0)));
            let k0 = ps.survivor_set(0, n).unwrap();
            let k1 = ps.survivor_set(0, n + 1).unwrap();
            prop_assert!(k1.is_subset_of(&k0));
        }

        #[test]
        fn partition_cells_are_monotone(n in 1usize..4, a in 0.05f64..0.9) {
            let ps = single(FiberMap::gauss(6, false).unwrap(), IntervalSet::interval(a, (a + 0.05).min(1.0)));
            let pts = ps.refine_partition(0, n).unwrap();
            prop_assert!(pts.windows(2).all(|w| w[1] > w[0]));
            for w in pts.windows(2) {
                let m = 0.5 * (w[0] + w[1]);
                if let Some(path) = ps.itinerary(0, m, n).unwrap() {
                    // endpoints must follow the same itinerary as the midpoint
                    let inner = |x: f64| ps.itinerary(0, x, n).unwrap();
                    let l = w[0] + 1e-9 * (w[1] - w[0]);
                    let r = w[1] - 1e-9 * (w[1] - w[0]);
                    prop_assert_eq!(inner(l), Some(path.clone()));
                    prop_assert_eq!(inner(r), Some(path));
                }
            }
        }
    }
}
