//! Random functional F_ω, Hilbert metrics on Birkhoff cones, Lasota–Yorke constants,
//! good/bad cells and fibers, and measured cone contraction.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::base::{BaseKind, BaseSystem, FiberId};
use crate::bv::{random_step, GridFunction};
use crate::error::{Error, Result};
use crate::interval::{dedup_points, IntervalSet, POINT_TOL};
use crate::rng::SeedTree;
use crate::rpf::linear_fit;
use crate::scalar::Real;
use crate::transfer::{semi_normalized, support_of, Family, RandomSystem, EPS_SUPP};

/// Relative bisection tolerance for α and β.
pub const BISECTION_TOL: f64 = 1e-10;
/// Interior sample points per cell when measuring sup and variation of gⁿ.
const WEIGHT_SAMPLES: usize = 16;
/// Hilbert distances below this are treated as converged in decay fits.
const THETA_FLOOR: f64 = 1e-13;
/// Survivor intervals beyond this count are not sampled individually.
const SURVIVOR_SAMPLE_CAP: usize = 1 << 16;

/// Truncated F_ω(f) with its monotone sequence of inf-ratios.
#[derive(Clone, Debug, Serialize)]
pub struct FunctionalEstimate {
    pub fiber: FiberId,
    pub value: f64,
    pub depth: usize,
    /// Number of cells in S(depth, depth).
    pub support_cells: usize,
    pub sequence: Vec<f64>,
}

/// Caches Lᵏ1 along the forward orbit of one fiber.
#[derive(Clone, Debug)]
pub struct FunctionalEstimator<'a, T: Real> {
    family: &'a Family<T>,
    pub fiber: FiberId,
    pub depth: usize,
    ones: Vec<Vec<T>>,
    supports: Vec<Vec<bool>>,
}

impl<'a, T: Real> FunctionalEstimator<'a, T> {
    /// Depth is capped by the steps available on an orbit window.
    pub fn new(family: &'a Family<T>, fiber: FiberId, depth: usize) -> Result<Self> {
        let depth = depth.min(family.base.forward_room(fiber));
        let unit = family.unit(fiber);
        let mut ones = vec![unit.values.clone()];
        let mut supports = vec![support_of(&unit.values)];
        let mut g = GridFunction::constant(family.grids[fiber].clone(), T::one());
        let mut w = fiber;
        for _ in 0..depth {
            g = family.apply(w, &g)?;
            w = family.op(w)?.target;
            supports.push(support_of(&g.values));
            ones.push(g.values.clone());
        }
        if !supports[depth].iter().any(|&s| s) {
            return Err(Error::EmptySupport { fiber, depth });
        }
        Ok(Self { family, fiber, depth, ones, supports })
    }

    fn ratio(&self, k: usize, values: &[T]) -> f64 {
        let mut inf = f64::INFINITY;
        for ((&v, &u), &s) in values.iter().zip(&self.ones[k]).zip(&self.supports[k]) {
            if s {
                inf = inf.min(v.f64() / u.f64());
            }
        }
        inf
    }

    /// L^depth f on θ^depth ω.
    pub fn image(&self, f: &GridFunction<T>) -> Result<Vec<T>> {
        Ok(self.family.apply_n(self.fiber, self.depth, f)?.values)
    }

    /// Truncated F from a precomputed L^depth f.
    pub fn value_of_image(&self, image: &[T]) -> f64 {
        self.ratio(self.depth, image)
    }

    pub fn value(&self, f: &GridFunction<T>) -> Result<f64> {
        Ok(self.value_of_image(&self.image(f)?))
    }

    pub fn estimate(&self, f: &GridFunction<T>) -> Result<FunctionalEstimate> {
        let orbit = self.family.orbit(self.fiber, self.depth, f)?;
        let sequence: Vec<f64> = orbit.iter().enumerate().map(|(k, g)| self.ratio(k, &g.values)).collect();
        Ok(FunctionalEstimate {
            fiber: self.fiber,
            value: *sequence.last().expect("depth + 1 terms"),
            depth: self.depth,
            support_cells: self.supports[self.depth].iter().filter(|&&s| s).count(),
            sequence,
        })
    }
}

/// One estimator per fiber of the family.
pub fn estimators<T: Real>(family: &Family<T>, depth: usize) -> Result<Vec<FunctionalEstimator<'_, T>>> {
    (0..family.base.size()).into_par_iter().map(|w| FunctionalEstimator::new(family, w, depth)).collect()
}

/// ρ_ω = F_θω(L_ω 1_ω); NaN on fibers without an operator.
pub fn rho<T: Real>(family: &Family<T>, est: &[FunctionalEstimator<'_, T>]) -> Result<Vec<f64>> {
    (0..family.base.size())
        .map(|w| {
            if !family.has_op(w) {
                return Ok(f64::NAN);
            }
            let one = GridFunction::constant(family.grids[w].clone(), T::one());
            let image = family.apply(w, &one)?;
            est[family.op(w)?.target].value(&image)
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Cone<'e, 'a, T: Real> {
    Positive,
    Lambda { a: f64, est: &'e FunctionalEstimator<'a, T> },
}

fn sup_abs<T: Real>(v: &[T]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.f64().abs()))
}

fn variation_of(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// var(h) ≤ a·F(h) with an infinite-a convention and a small absolute slack.
fn within_cone(var: f64, a: f64, f: f64, scale: f64) -> bool {
    let tiny = 1e-12 * scale;
    if f > 0.0 {
        a.is_infinite() || var <= a * f * (1.0 + 1e-9) + tiny
    } else {
        var <= tiny && f >= -tiny
    }
}

/// Membership of f in Λ_a (or Λ_+).
pub fn in_cone<T: Real>(f: &GridFunction<T>, cone: &Cone<'_, '_, T>) -> Result<bool> {
    let scale = sup_abs(&f.values);
    if scale == 0.0 || f.values.iter().any(|v| v.f64() < -1e-14 * scale) {
        return Ok(false);
    }
    match cone {
        Cone::Positive => Ok(true),
        Cone::Lambda { a, est } => Ok(within_cone(f.variation().f64(), *a, est.value(f)?, scale)),
    }
}

/// f together with L^d f for the estimator of a Λ cone.
pub struct Imaged<'f, T: Real> {
    pub f: &'f GridFunction<T>,
    pub image: Option<Vec<T>>,
}

impl<'f, T: Real> Imaged<'f, T> {
    pub fn new(f: &'f GridFunction<T>, cone: &Cone<'_, '_, T>) -> Result<Self> {
        let image = match cone {
            Cone::Positive => None,
            Cone::Lambda { est, .. } => Some(est.image(f)?),
        };
        Ok(Self { f, image })
    }

    fn in_cone(&self, cone: &Cone<'_, '_, T>) -> bool {
        let f = self.f;
        let scale = sup_abs(&f.values);
        if scale == 0.0 || f.values.iter().any(|v| v.f64() < -1e-14 * scale) {
            return false;
        }
        match (cone, &self.image) {
            (Cone::Lambda { a, est }, Some(img)) => {
                within_cone(f.variation().f64(), *a, est.value_of_image(img), scale)
            }
            _ => true,
        }
    }
}

/// Θ(f, g) = log β/α, +∞ when no finite β or zero α.
pub fn hilbert_distance<T: Real>(f: &GridFunction<T>, g: &GridFunction<T>, cone: &Cone<'_, '_, T>) -> Result<f64> {
    let g = g.on_grid(&f.grid);
    hilbert_distance_imaged(&Imaged::new(f, cone)?, &Imaged::new(&g, cone)?, cone)
}

/// Θ with the depth-d images supplied; both functions must share a grid.
pub fn hilbert_distance_imaged<T: Real>(fi: &Imaged<'_, T>, gi: &Imaged<'_, T>, cone: &Cone<'_, '_, T>) -> Result<f64> {
    for (name, h) in [("f", fi), ("g", gi)] {
        if !h.in_cone(cone) {
            return Err(Error::Invariant(format!("{name} is not in the cone")));
        }
    }
    let (f, g) = (fi.f, gi.f);
    let fv: Vec<f64> = f.values.iter().map(|v| v.f64()).collect();
    let gv: Vec<f64> = g.values.iter().map(|v| v.f64()).collect();
    let (fs, gs) = (sup_abs(&f.values), gv.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    let (mut lo_ratio, mut hi_ratio) = (f64::INFINITY, 0.0f64);
    for (&x, &y) in fv.iter().zip(&gv) {
        let (xz, yz) = (x <= 1e-300 + 1e-15 * fs, y <= 1e-300 + 1e-15 * gs);
        match (xz, yz) {
            (true, true) => {}
            (true, false) => hi_ratio = f64::INFINITY,
            (false, true) => lo_ratio = 0.0,
            (false, false) => {
                lo_ratio = lo_ratio.min(y / x);
                hi_ratio = hi_ratio.max(y / x);
            }
        }
    }
    let (alpha, beta) = match cone {
        Cone::Positive => (lo_ratio, hi_ratio),
        Cone::Lambda { a, est } => {
            let fd: Vec<f64> = fi.image.as_ref().expect("imaged for Λ").iter().map(|v| v.f64()).collect();
            let gd: Vec<f64> = gi.image.as_ref().expect("imaged for Λ").iter().map(|v| v.f64()).collect();
            let ones: Vec<f64> = est.ones[est.depth].iter().map(|v| v.f64()).collect();
            let supp = &est.supports[est.depth];
            let scale = fs.max(gs);
            // s·f + t·g ∈ Λ_a ∪ {0}
            let feasible = |s: f64, t: f64| -> bool {
                let h: Vec<f64> = fv.iter().zip(&gv).map(|(x, y)| s * x + t * y).collect();
                let hs = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let tol = 1e-12 * scale * (s.abs() + t.abs());
                if hs <= tol {
                    return true;
                }
                if h.iter().any(|&v| v < -tol) {
                    return false;
                }
                let mut fval = f64::INFINITY;
                for k in 0..ones.len() {
                    if supp[k] {
                        fval = fval.min((s * fd[k] + t * gd[k]) / ones[k]);
                    }
                }
                within_cone(variation_of(&h), *a, fval, hs)
            };
            let alpha = if lo_ratio == 0.0 || !lo_ratio.is_finite() {
                0.0
            } else if feasible(-lo_ratio, 1.0) {
                lo_ratio
            } else {
                let (mut lo, mut hi) = (0.0, lo_ratio);
                while hi - lo > BISECTION_TOL * hi {
                    let mid = 0.5 * (lo + hi);
                    if feasible(-mid, 1.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            let beta = if !hi_ratio.is_finite() {
                f64::INFINITY
            } else if feasible(hi_ratio, -1.0) {
                hi_ratio
            } else {
                let (mut lo, mut hi) = (hi_ratio, 2.0 * hi_ratio.max(1e-300));
                while !feasible(hi, -1.0) && hi < 1e15 * hi_ratio {
                    lo = hi;
                    hi *= 2.0;
                }
                if !feasible(hi, -1.0) {
                    f64::INFINITY
                } else {
                    while hi - lo > BISECTION_TOL * hi {
                        let mid = 0.5 * (lo + hi);
                        if feasible(mid, -1.0) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    hi
                }
            };
            (alpha, beta)
        }
    };
    if alpha <= 0.0 || !beta.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok((beta / alpha).ln().max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CellClass {
    Good,
    Bad,
    /// Disjoint from K_{ω,n−1}.
    Hole,
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionClassification {
    pub fiber: FiberId,
    pub n: usize,
    pub cells: Vec<(f64, f64)>,
    pub classes: Vec<CellClass>,
    /// F_ω(1_U), NaN on hole cells.
    pub f_values: Vec<f64>,
    pub delta: f64,
    pub eta: usize,
    /// ‖gⁿ_ω‖_∞ on K_{ω,n−1}.
    pub g_sup: f64,
    pub a: f64,
    pub b: f64,
}

impl PartitionClassification {
    pub fn count(&self, class: CellClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

/// Longest run of bad cells; hole cells join their neighbours, good cells break runs.
pub fn contiguous_bad(classes: &[CellClass]) -> usize {
    let (mut best, mut run) = (0, 0);
    for c in classes {
        match c {
            CellClass::Bad => {
                run += 1;
                best = best.max(run);
            }
            CellClass::Good => run = 0,
            CellClass::Hole => {}
        }
    }
    best
}

/// gⁿ_ω(x) along the open orbit: zero once x meets a hole before step n.
pub fn open_weight_n<T: Real>(sys: &RandomSystem<T>, omega: FiberId, x: f64, n: usize) -> Result<f64> {
    let (mut w, mut y, mut acc) = (omega, x, 1.0);
    for _ in 0..n {
        if sys.phase.holes[w].contains(y) {
            return Ok(0.0);
        }
        let map = &sys.phase.maps[w];
        let Some(i) = map.branch_index_at(y) else { return Ok(0.0) };
        acc *= sys.potentials[w].weight(i, &map.branches[i], y)?;
        y = map.branches[i].eval(y);
        w = sys.phase.base.next(w)?;
    }
    Ok(acc)
}

fn has_tail<T: Real>(sys: &RandomSystem<T>) -> bool {
    sys.phase.maps.iter().any(|m| !matches!(m.tail, crate::phase::Tail::None))
}

/// Coarsest common refinement Ũ of Z_ω^n and the K_{ω,n−1}, K_{ω,n} boundaries, classified by F_ω(1_U).
pub fn classify_cells<T: Real>(
    sys: &RandomSystem<T>,
    est: &FunctionalEstimator<'_, T>,
    omega: FiberId,
    n: usize,
) -> Result<PartitionClassification> {
    if n > 1 && has_tail(sys) {
        return Err(Error::invalid("cell classification of maps with an infinite tail is limited to n = 1"));
    }
    let k_prev = if n == 1 { sys.phase.survivor_domain(omega) } else { sys.phase.survivor_set(omega, n - 1)? };
    let k_n = sys.phase.survivor_set(omega, n)?;
    let mut pts = sys.phase.refine_partition(omega, n)?;
    pts.extend(k_prev.endpoints());
    pts.extend(k_n.endpoints());
    pts.extend([0.0, 1.0]);
    let pts = dedup_points(pts, POINT_TOL);
    let cells: Vec<(f64, f64)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    let grid = &sys.grids[omega];
    let rows: Vec<(CellClass, f64, f64, f64)> = cells
        .par_iter()
        .map(|&(a, b)| -> Result<(CellClass, f64, f64, f64)> {
            if !k_prev.contains(0.5 * (a + b)) {
                return Ok((CellClass::Hole, f64::NAN, 0.0, 0.0));
            }
            let ind = GridFunction::<T>::indicator(grid.clone(), &IntervalSet::interval(a, b));
            let fv = est.value(&ind)?;
            let mut vals = Vec::with_capacity(WEIGHT_SAMPLES);
            for s in 0..WEIGHT_SAMPLES {
                let x = a + (b - a) * (s as f64 + 0.5) / WEIGHT_SAMPLES as f64;
                vals.push(open_weight_n(sys, omega, x, n)?);
            }
            let sup = vals.iter().copied().fold(0.0, f64::max);
            let class = if fv <= EPS_SUPP { CellClass::Bad } else { CellClass::Good };
            Ok((class, fv, sup, variation_of(&vals)))
        })
        .collect::<Result<_>>()?;
    let classes: Vec<CellClass> = rows.iter().map(|r| r.0).collect();
    let f_values: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let g_sup = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let min_good = rows.iter().filter(|r| r.0 == CellClass::Good).map(|r| r.1).fold(f64::INFINITY, f64::min);
    if !min_good.is_finite() || !(g_sup > 0.0) {
        return Err(Error::Invariant(format!("fiber {omega}, n = {n}: no good cells, δ is undefined")));
    }
    let a = rows.iter().map(|r| r.3).fold(0.0, f64::max) / g_sup;
    let tail = if n == 1 { sys.summability[omega].tail_bound } else { 0.0 };
    let b = (tail / g_sup).max(1.0);
    let eta = contiguous_bad(&classes);
    Ok(PartitionClassification { fiber: omega, n, cells, classes, f_values, delta: min_good / 2.0, eta, g_sup, a, b })
}

#[derive(Clone, Debug, Serialize)]
pub struct LyCoefficients {
    pub fiber: FiberId,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub eta: usize,
    pub g_sup: f64,
    /// ρⁿ_ω.
    pub rho_n: f64,
    pub big_a: f64,
    pub big_b: f64,
    pub big_c: f64,
    pub big_d: f64,
    /// Empirical bounds s·A, s·B with s the worst observed ratio.
    pub empirical_a: f64,
    pub empirical_b: f64,
    pub worst_ratio: f64,
    pub samples: usize,
    pub violations: usize,
}

impl LyCoefficients {
    fn from_classification(c: &PartitionClassification, rho_n: f64) -> Self {
        let eta = c.eta as f64;
        let big_a = (c.a + 2.0 * c.b + 1.0 + (2.0 * c.a + 4.0 * c.b) * eta) * c.g_sup;
        let big_b = (c.a + 2.0 * c.b) * (1.0 + 2.0 * eta) * c.g_sup / c.delta;
        Self {
            fiber: c.fiber,
            n: c.n,
            a: c.a,
            b: c.b,
            delta: c.delta,
            eta: c.eta,
            g_sup: c.g_sup,
            rho_n,
            big_a,
            big_b,
            big_c: big_a / rho_n,
            big_d: big_b / rho_n,
            empirical_a: 0.0,
            empirical_b: 0.0,
            worst_ratio: 0.0,
            samples: 0,
            violations: 0,
        }
    }
}

fn rho_n(base: &BaseSystem, rho: &[f64], omega: FiberId, n: usize) -> Result<f64> {
    let (mut w, mut acc) = (omega, 1.0);
    for _ in 0..n {
        acc *= rho[w];
        w = base.next(w)?;
    }
    Ok(acc)
}

/// Constructive A, B from the cell classification plus the sampled check var(Lⁿf) ≤ A var f + B F(|f|).
pub fn measure_ly_coefficients<T: Real>(
    sys: &RandomSystem<T>,
    est: &[FunctionalEstimator<'_, T>],
    rho: &[f64],
    class: &PartitionClassification,
    samples: usize,
    seeds: &SeedTree,
) -> Result<LyCoefficients> {
    let (omega, n) = (class.fiber, class.n);
    let mut ly = LyCoefficients::from_classification(class, rho_n(sys.base(), rho, omega, n)?);
    let grid = sys.grids[omega].clone();
    let mut tests: Vec<GridFunction<T>> = vec![
        GridFunction::constant(grid.clone(), T::one()),
        GridFunction::indicator(grid.clone(), &IntervalSet::interval(0.0, 0.5)),
        GridFunction::indicator(grid.clone(), &IntervalSet::interval(0.5, 1.0)),
    ];
    for s in 0..samples {
        let mut rng = seeds.stream("cone_metric", &format!("ly/{omega}/{n}"), s as u64);
        tests.push(random_step(grid.clone(), &mut rng, 12, -1.0, 1.0));
    }
    let ratios: Vec<f64> = tests
        .par_iter()
        .map(|f| -> Result<f64> {
            let lhs = sys.open.apply_n(omega, n, f)?.variation().f64();
            let rhs = ly.big_a * f.variation().f64() + ly.big_b * est[omega].value(&f.abs())?;
            Ok(if rhs > 0.0 { lhs / rhs } else if lhs <= 1e-14 { 0.0 } else { f64::INFINITY })
        })
        .collect::<Result<_>>()?;
    ly.samples = ratios.len();
    ly.worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    ly.violations = ratios.iter().filter(|&&r| r > 1.0 + 1e-9).count();
    ly.empirical_a = ly.worst_ratio * ly.big_a;
    ly.empirical_b = ly.worst_ratio * ly.big_b;
    Ok(ly)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConeOptions {
    pub depth: usize,
    pub samples: usize,
    /// Samples drawn in Λ_a for the pairwise contraction checks.
    pub pair_samples: usize,
    pub epsilon: f64,
    pub u: f64,
    pub v: f64,
    /// Overrides ã for the contraction diagnostics.
    pub a: Option<f64>,
    /// Highest level searched for N_c.
    pub nc_cap: usize,
    pub coating_cap: usize,
    /// Iterates of the (1, 1 + 1_[0,1/2)) decay series.
    pub iterates: usize,
    /// Level used for the growth-rate estimates of the contracting condition.
    pub rate_level: usize,
    /// Block length used when R is unavailable.
    pub block: usize,
}

impl Default for ConeOptions {
    fn default() -> Self {
        Self {
            depth: 24,
            samples: 16,
            pair_samples: 16,
            epsilon: 0.1,
            u: 0.25,
            v: 0.4,
            a: None,
            nc_cap: 8,
            coating_cap: 64,
            iterates: 30,
            rate_level: 12,
            block: 8,
        }
    }
}

impl ConeOptions {
    pub fn validate(&self) -> Result<()> {
        let (u, v) = (self.u, self.v);
        if !(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0 && u + v < 0.75 && (1.0 - u) * v <= 0.5) {
            return Err(Error::invalid(format!("cone parameters u = {u}, v = {v} need u+v < 3/4 and (1-u)v <= 1/2")));
        }
        if !(self.epsilon > 0.0) || self.depth == 0 || self.nc_cap == 0 {
            return Err(Error::invalid("epsilon, depth and nc_cap must be positive"));
        }
        if self.a.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::invalid("cone parameter a must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSummary {
    pub n: usize,
    /// Weighted average of log C_{ω,n} over fibers with enough room.
    pub mean_log_c: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthConstants {
    pub nc: usize,
    pub xi: f64,
    pub zeta: f64,
    /// log L_ω per fiber.
    pub log_l: Vec<f64>,
    /// log C_ε(ω) per fiber (NaN where the window is too short).
    pub log_c_eps: Vec<f64>,
    pub log_b: f64,
    pub q: usize,
    pub q_a: usize,
    pub r: usize,
    pub cond1: bool,
    pub log_a_tilde: f64,
    pub log_a0: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FiberClassification {
    pub fiber: FiberId,
    pub in_omega1: bool,
    pub cond2: bool,
    pub good: bool,
    pub log_gamma: f64,
    /// `None` when the cap is exceeded (l = ∞).
    pub coating_length: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractingRates {
    pub fiber: FiberId,
    pub n: usize,
    pub log_g_rate: f64,
    pub log_eta_rate: f64,
    pub log_inf_rate: f64,
    pub contracting: bool,
}

/// Everything measured from the classification stage.
#[derive(Clone, Debug, Serialize)]
pub struct ConeAnalysis {
    pub options: ConeOptions,
    pub rho: Vec<f64>,
    pub ly: Vec<LyCoefficients>,
    pub levels: Vec<LevelSummary>,
    pub constants: Option<GrowthConstants>,
    pub fibers: Vec<FiberClassification>,
    pub rates: Vec<ContractingRates>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub classifications: BTreeMap<(FiberId, usize), PartitionClassification>,
}

impl ConeAnalysis {
    pub fn ly_at(&self, omega: FiberId, n: usize) -> Option<&LyCoefficients> {
        self.ly.iter().find(|l| l.fiber == omega && l.n == n)
    }

    /// Cone parameter used by diagnostics: the override, else ã.
    pub fn cone_parameter(&self) -> Option<f64> {
        self.options.a.or_else(|| self.constants.as_ref().map(|c| c.log_a_tilde.exp()))
    }

    /// Block length: l(ω)R when finite, else R, else the configured block.
    pub fn block(&self, omega: FiberId) -> usize {
        match &self.constants {
            Some(c) => match self.fibers.get(omega).and_then(|f| f.coating_length) {
                Some(l) => l * c.r,
                None => c.r,
            },
            None => self.options.block,
        }
    }

    pub fn all_contracting(&self) -> bool {
        !self.rates.is_empty() && self.rates.iter().all(|r| r.contracting)
    }
}

fn shift(base: &BaseSystem, omega: FiberId, k: i64) -> Option<FiberId> {
    base.advance(omega, k).ok()
}

fn log1p_exp(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn average(base: &BaseSystem, pairs: &[(FiberId, f64)]) -> Result<f64> {
    let fibers: Vec<FiberId> = pairs.iter().map(|p| p.0).collect();
    let values: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    base.average_over(&fibers, &values)
}

/// Weight of the fibers satisfying `pred`, renormalized over `fibers`.
fn weight_of(base: &BaseSystem, fibers: &[FiberId], pred: impl Fn(FiberId) -> bool) -> f64 {
    let total: f64 = fibers.iter().map(|&f| base.weights()[f]).sum();
    fibers.iter().filter(|&&f| pred(f)).map(|&f| base.weights()[f]).sum::<f64>() / total
}

/// Classification, Lasota–Yorke constants, N_c, ξ, ζ, C_ε, B, R, ã and fiber flags.
pub fn analyze<T: Real>(
    sys: &RandomSystem<T>,
    est: &[FunctionalEstimator<'_, T>],
    ly_levels: &[usize],
    opts: &ConeOptions,
    seeds: &SeedTree,
) -> Result<ConeAnalysis> {
    opts.validate()?;
    let base = sys.base();
    let p = base.size();
    let rho = rho(&sys.open, est)?;
    let mut warnings = Vec::new();
    if matches!(base.kind(), BaseKind::OrbitWindow { .. }) {
        warnings.push("orbit window: density conditions use window frequencies".to_string());
    }
    let level_cap = if has_tail(sys) {
        warnings.push("infinite-tail map: classification limited to n = 1".to_string());
        1
    } else {
        usize::MAX
    };
    let mut classifications = BTreeMap::new();
    let mut ly: Vec<LyCoefficients> = Vec::new();
    let level = |n: usize, classifications: &mut BTreeMap<(FiberId, usize), PartitionClassification>,
                     ly: &mut Vec<LyCoefficients>|
     -> Result<Vec<(FiberId, f64, f64)>> {
        let mut out = Vec::new();
        for w in 0..p {
            if base.forward_room(w) < n || est[w].depth <= n || !rho_n(base, &rho, w, n).is_ok_and(|r| r > 0.0) {
                continue;
            }
            if let std::collections::btree_map::Entry::Vacant(slot) = classifications.entry((w, n)) {
                let c = classify_cells(sys, &est[w], w, n)?;
                ly.push(measure_ly_coefficients(sys, est, &rho, &c, opts.samples, seeds)?);
                slot.insert(c);
            }
            let l = ly.iter().find(|l| l.fiber == w && l.n == n).expect("just measured");
            out.push((w, l.big_c, l.big_d));
        }
        Ok(out)
    };
    for &n in ly_levels {
        if n <= level_cap {
            level(n, &mut classifications, &mut ly)?;
        }
    }
    let mut levels = Vec::new();
    let mut nc = None;
    let mut cd: Vec<Vec<(FiberId, f64, f64)>> = Vec::new();
    for n in 1..=opts.nc_cap.min(level_cap) {
        let row = level(n, &mut classifications, &mut ly)?;
        if row.is_empty() {
            break;
        }
        let mean = average(base, &row.iter().map(|r| (r.0, r.1.ln())).collect::<Vec<_>>())?;
        levels.push(LevelSummary { n, mean_log_c: mean });
        cd.push(row);
        if mean < 0.0 {
            nc = Some(n);
            break;
        }
    }
    ly.sort_by_key(|l| (l.n, l.fiber));

    let rates = contracting_rates(sys, &classifications, opts)?;

    let Some(nc) = nc else {
        warnings.push(format!("no level n <= {} has negative averaged log C; N_c not found", opts.nc_cap.min(level_cap)));
        return Ok(ConeAnalysis { options: *opts, rho, ly, levels, constants: None, fibers: vec![], rates, warnings, classifications });
    };
    let xi = -levels[nc - 1].mean_log_c / nc as f64;
    if opts.epsilon >= xi {
        return Err(Error::invalid(format!("epsilon = {} must be below ξ = {xi:.6}", opts.epsilon)));
    }
    if opts.epsilon >= xi / 2.0 {
        warnings.push(format!("epsilon = {} is not below ξ/2 = {:.6}", opts.epsilon, xi / 2.0));
    }
    let eps = opts.epsilon;
    let ncf = nc as f64;
    // log L_ω = log max_{i ≤ N_c} max(6, 2C, 2D + 1)
    let mut log_l = vec![f64::NAN; p];
    let mut log_c_nc = vec![f64::NAN; p];
    let mut log_d_nc = vec![f64::NAN; p];
    for w in 0..p {
        let mut best: f64 = 6.0;
        let mut complete = true;
        for row in cd.iter() {
            match row.iter().find(|r| r.0 == w) {
                Some(&(_, c, d)) => best = best.max(2.0 * c).max(2.0 * d + 1.0),
                None => complete = false,
            }
        }
        if complete {
            log_l[w] = best.ln();
        }
        if let Some(&(_, c, d)) = cd[nc - 1].iter().find(|r| r.0 == w) {
            log_c_nc[w] = c.ln();
            log_d_nc[w] = d.ln();
        }
    }
    let sum_l = |w: FiberId, start: i64, count: usize| -> Option<f64> {
        let mut acc = 0.0;
        for i in 0..count as i64 {
            let x = log_l[shift(base, w, start + i)?];
            if x.is_nan() {
                return None;
            }
            acc += x;
        }
        Some(acc)
    };
    // log L^{N_c}_ω
    let log_l_nc: Vec<Option<f64>> = (0..p).map(|w| sum_l(w, 0, nc)).collect();
    let zeta_pairs: Vec<(FiberId, f64)> = (0..p).filter_map(|w| log_l_nc[w].map(|v| (w, v / ncf))).collect();
    let zeta = average(base, &zeta_pairs)?;

    let horizon: i64 = match base.kind() {
        BaseKind::Cycle => (p as i64).max(1),
        BaseKind::OrbitWindow { .. } => p as i64,
    };
    let block_horizon: usize = match base.kind() {
        BaseKind::Cycle => 1000,
        BaseKind::OrbitWindow { .. } => p / nc,
    };
    let delta = eps / (4.0 * ncf);
    let decay = (1.0 - (-(xi - eps) * ncf).exp()).ln();
    let log_c_eps: Vec<f64> = (0..p)
        .map(|w| {
            let Some(c1) = sum_l(w, -(nc as i64), nc) else { return f64::NAN };
            let c1 = ncf.ln() + c1;
            let mut c_delta = f64::NEG_INFINITY;
            for k in -horizon + 1..horizon {
                if let Some(x) = shift(base, w, k).map(|u| log_l[u]).filter(|x| !x.is_nan()) {
                    c_delta = c_delta.max(x - delta * k.abs() as f64);
                }
            }
            let c2 = ncf.ln() + ncf * c_delta;
            let (mut c3, mut acc) = (f64::NEG_INFINITY, 0.0);
            let mut c4 = f64::NEG_INFINITY;
            for s in 1..=block_horizon.max(1) {
                let Some(u) = shift(base, w, -((s * nc) as i64)) else { break };
                if log_c_nc[u].is_nan() {
                    break;
                }
                acc += log_c_nc[u];
                c3 = c3.max(acc + (xi - eps / 2.0) * (s * nc) as f64);
                c4 = c4.max(log_d_nc[u] - eps / 2.0 * (s * nc) as f64);
            }
            if !c3.is_finite() {
                return f64::NAN;
            }
            let c4 = c4.max(c3);
            let c5 = c4.max(2.0 * c4 - decay);
            c1 + c2 + c5 + log1p_exp(c5) + (2.0 * xi - eps) * ncf
        })
        .collect();
    let measured: Vec<FiberId> = (0..p).filter(|&w| !log_c_eps[w].is_nan()).collect();
    if measured.is_empty() {
        return Err(Error::invalid("base too short to evaluate C_ε on any fiber"));
    }
    let mut sorted: Vec<f64> = measured.iter().map(|&w| log_c_eps[w]).collect();
    sorted.sort_by(f64::total_cmp);
    let log_b = *sorted
        .iter()
        .find(|&&v| weight_of(base, &measured, |w| log_c_eps[w] <= v) >= 1.0 - eps / 8.0 - 1e-12)
        .expect("the largest value has full weight");
    let lu = opts.u.ln();
    let cond = |q: usize| log_b + (q as f64).ln() - xi * (q * nc) as f64 / 2.0 <= lu;
    let q = (1..=10_000_000usize)
        .find(|&q| q as f64 * xi * ncf / 2.0 > log_b - lu && cond(q))
        .ok_or_else(|| Error::NonConvergence { what: "block count q".into(), iterations: 10_000_000, last: xi })?;
    let window_avg = |w: FiberId, qa: usize| -> Option<f64> {
        let mut acc = 0.0;
        for k in 0..qa {
            acc += log_l_nc[shift(base, w, (k * nc) as i64)?]?;
        }
        Some(acc / (qa * nc) as f64)
    };
    let cond2_at = |w: FiberId, qa: usize| window_avg(w, qa).is_some_and(|m| (m - zeta).abs() <= eps);
    let mut q_a = q;
    let all: Vec<FiberId> = (0..p).collect();
    while weight_of(base, &all, |w| cond2_at(w, q_a)) < 1.0 - eps / 8.0 - 1e-12 {
        q_a += 1;
        if q_a > q + 10_000 {
            warnings.push("no q_a within 10000 blocks meets the ζ-window frequency".to_string());
            q_a = q;
            break;
        }
    }
    let r = q_a * nc;
    let cond1 = cond(q_a);
    let root_eps = eps.sqrt();
    let log_a_tilde = log_b + zeta * r as f64 * root_eps - ((1.0 - opts.u) * opts.v).ln();
    let log_a0 = log_b - opts.v.ln();
    let log_gamma: Vec<f64> = (0..p)
        .map(|w| {
            let mut acc = 0.0;
            for k in 0..q_a {
                match shift(base, w, (k * nc) as i64).and_then(|u| log_l_nc[u]) {
                    Some(x) => acc += x,
                    None => return f64::NAN,
                }
            }
            acc
        })
        .collect();
    let in_omega1 = |w: FiberId| !log_c_eps[w].is_nan() && log_c_eps[w] <= log_b;
    let good: Vec<bool> = (0..p)
        .map(|w| cond1 && cond2_at(w, q_a) && shift(base, w, r as i64).is_some_and(in_omega1))
        .collect();
    let threshold = zeta * r as f64 * root_eps;
    let fibers = (0..p)
        .map(|w| {
            let coating_length = if good[w] {
                Some(1)
            } else {
                let mut acc = 0.0;
                let mut found = None;
                for n in 1..=opts.coating_cap {
                    let Some(u) = shift(base, w, ((n - 1) * r) as i64) else { break };
                    if !good[u] {
                        acc += log_gamma[u];
                    }
                    if acc.is_nan() {
                        break;
                    }
                    if acc / n as f64 <= threshold {
                        found = Some(n);
                        break;
                    }
                }
                found
            };
            FiberClassification {
                fiber: w,
                in_omega1: in_omega1(w),
                cond2: cond2_at(w, q_a),
                good: good[w],
                log_gamma: log_gamma[w],
                coating_length,
            }
        })
        .collect();
    let constants = GrowthConstants {
        nc,
        xi,
        zeta,
        log_l,
        log_c_eps,
        log_b,
        q,
        q_a,
        r,
        cond1,
        log_a_tilde,
        log_a0,
    };
    Ok(ConeAnalysis { options: *opts, rho, ly, levels, constants: Some(constants), fibers, rates, warnings, classifications })
}

/// (1/n) log ‖gⁿ‖, (1/m) log max(ηᵐ, 1) at the deepest classified level, (1/n) log inf Lⁿ1.
fn contracting_rates<T: Real>(
    sys: &RandomSystem<T>,
    classifications: &BTreeMap<(FiberId, usize), PartitionClassification>,
    opts: &ConeOptions,
) -> Result<Vec<ContractingRates>> {
    let base = sys.base();
    (0..base.size())
        .filter_map(|w| {
            let n = opts.rate_level.min(base.forward_room(w));
            (n > 0).then_some((w, n))
        })
        .map(|(w, n)| {
            let grid = &sys.grids[w];
            let mut g_sup: f64 = 0.0;
            let mut pieces: Vec<(f64, f64)> = (0..grid.cells()).map(|i| grid.cell(i)).collect();
            if !has_tail(sys) {
                let k = sys.phase.survivor_set(w, n - 1)?;
                if k.len() <= SURVIVOR_SAMPLE_CAP {
                    pieces.extend_from_slice(k.parts());
                }
            }
            for (a, b) in pieces {
                for t in [0.25, 0.5, 0.75] {
                    g_sup = g_sup.max(open_weight_n(sys, w, a + t * (b - a), n)?);
                }
            }
            let one = GridFunction::constant(grid.clone(), T::one());
            let img = sys.open.apply_n(w, n, &one)?;
            let supp = support_of(&img.values);
            let inf = img.values.iter().zip(&supp).filter(|p| *p.1).map(|p| p.0.f64()).fold(f64::INFINITY, f64::min);
            let eta = if sys.phase.is_open() {
                classifications
                    .range((w, 0)..=(w, usize::MAX))
                    .next_back()
                    .map(|(&(_, m), c)| (c.eta.max(1) as f64).ln() / m as f64)
                    .unwrap_or(0.0)
            } else {
                0.0
            };
            let nf = n as f64;
            let (lg, li) = (g_sup.ln() / nf, inf.ln() / nf);
            Ok(ContractingRates {
                fiber: w,
                n,
                log_g_rate: lg,
                log_eta_rate: eta,
                log_inf_rate: li,
                contracting: lg + eta < li - 1e-9,
            })
        })
        .collect()
}

/// Samples of Λ_a on fiber ω: positive random steps lifted by a constant until var ≤ a·F.
pub fn cone_samples<T: Real>(
    est: &FunctionalEstimator<'_, T>,
    grid: std::sync::Arc<crate::bv::Grid>,
    a: f64,
    count: usize,
    seeds: &SeedTree,
    purpose: &str,
) -> Result<Vec<GridFunction<T>>> {
    (0..count)
        .map(|s| {
            let mut rng = seeds.stream("cone_metric", purpose, s as u64);
            let f = random_step::<T, _>(grid.clone(), &mut rng, 10, 0.05, 1.0);
            let (var, fv) = (f.variation().f64(), est.value(&f)?);
            let lift = if a.is_finite() { (var / a - fv).max(0.0) * 1.01 } else { 0.0 };
            Ok(f.map(|v| v + T::of(lift)))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub fiber: FiberId,
    pub target: FiberId,
    pub block: usize,
    pub log_a: f64,
    pub pairs: usize,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    /// Largest sampled image distance, a lower bound of the true diameter.
    pub delta_est: f64,
    pub birkhoff_factor: f64,
    pub worst_ratio: f64,
    pub birkhoff_ok: bool,
    /// Sample indices whose image leaves Λ_{(u+v)a}.
    pub escapes: Vec<usize>,
    /// Positive-cone distance of L̃ⁿ1 and L̃ⁿ(1 + 1_[0,1/2)), n = 0..=iterates.
    pub series: Vec<f64>,
    pub fitted_d: Option<f64>,
    pub first_below: Option<usize>,
    /// Pairs violating ‖f − g‖ ≤ (e^Θ − 1) min(‖f‖, ‖g‖) after F-normalization.
    pub norm_violations: usize,
}

/// Sampled Birkhoff contraction of L̃^block on Λ_a, the (1, 1 + 1_[0,1/2)) decay series and the sup-norm bound.
pub fn contraction_diagnostics<T: Real>(
    sys: &RandomSystem<T>,
    est: &[FunctionalEstimator<'_, T>],
    analysis: &ConeAnalysis,
    omega: FiberId,
    seeds: &SeedTree,
) -> Result<ContractionReport> {
    let opts = &analysis.options;
    let base = sys.base();
    let tilde = semi_normalized(&sys.open, &analysis.rho)?;
    let a = analysis.cone_parameter().unwrap_or(f64::INFINITY);
    let block = analysis.block(omega).min(base.forward_room(omega)).max(if base.forward_room(omega) > 0 { 1 } else { 0 });
    let target = base.advance(omega, block as i64)?;
    let cone0 = Cone::Lambda { a, est: &est[omega] };
    let cone1 = Cone::Lambda { a, est: &est[target] };
    let samples = cone_samples(&est[omega], sys.grids[omega].clone(), a, opts.pair_samples.max(2), seeds, "contraction")?;
    let images: Vec<GridFunction<T>> = samples.par_iter().map(|f| tilde.apply_n(omega, block, f)).collect::<Result<_>>()?;
    let contracted = a * (opts.u + opts.v);
    let mut escapes = Vec::new();
    for (i, g) in images.iter().enumerate() {
        if !in_cone(g, &Cone::Lambda { a: contracted, est: &est[target] })? {
            escapes.push(i);
        }
    }
    let m = samples.len();
    let mut delta_est: f64 = 0.0;
    let image_pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let imaged: Vec<Imaged<'_, T>> = images.par_iter().map(|g| Imaged::new(g, &cone1)).collect::<Result<_>>()?;
    let image_d: Vec<f64> = image_pairs
        .par_iter()
        .map(|&(i, j)| hilbert_distance_imaged(&imaged[i], &imaged[j], &cone1))
        .collect::<Result<_>>()?;
    for d in &image_d {
        delta_est = delta_est.max(*d);
    }
    let factor = if delta_est.is_finite() { (delta_est / 4.0).tanh() } else { 1.0 };
    let (mut pre, mut post) = (Vec::new(), Vec::new());
    let mut worst_ratio: f64 = 0.0;
    let mut ok = true;
    for i in 0..m - 1 {
        let d0 = hilbert_distance(&samples[i], &samples[i + 1], &cone0)?;
        let k = image_pairs.iter().position(|&p| p == (i, i + 1)).expect("adjacent pair");
        let d1 = image_d[k];
        if d0 > 0.0 && d0.is_finite() {
            let ratio = d1 / d0;
            worst_ratio = worst_ratio.max(ratio);
            let both_in = !escapes.contains(&i) && !escapes.contains(&(i + 1));
            if both_in && delta_est.is_finite() && ratio > factor + 0.05 {
                ok = false;
            }
        }
        pre.push(d0);
        post.push(d1);
    }
    // sup-norm bound after normalizing by F
    let image_f: Vec<f64> =
        imaged.iter().map(|h| est[target].value_of_image(h.image.as_ref().expect("imaged for Λ"))).collect();
    let mut norm_violations = 0;
    for &(i, j) in &image_pairs {
        let (f, g) = (&images[i], &images[j]);
        let (ff, fg) = (image_f[i], image_f[j]);
        if !(ff > 0.0 && fg > 0.0) {
            continue;
        }
        let (f, g) = (f.scale(T::of(1.0 / ff)), g.scale(T::of(1.0 / fg)));
        let theta = hilbert_distance(&f, &g, &Cone::Positive)?;
        let diff = f.zip_with(&g, |x, y| x - y).sup_norm().f64();
        let bound = theta.exp_m1() * f.sup_norm().f64().min(g.sup_norm().f64());
        if diff > bound + 1e-12 * (1.0 + bound) {
            norm_violations += 1;
        }
    }
    let grid = sys.grids[omega].clone();
    let mut f = GridFunction::constant(grid.clone(), T::one());
    let mut g = GridFunction::indicator(grid, &IntervalSet::interval(0.0, 0.5)).map(|v| v + T::one());
    let mut series = Vec::new();
    let steps = opts.iterates.min(base.forward_room(omega));
    let mut w = omega;
    for n in 0..=steps {
        let mask: Vec<bool> = if n == 0 { support_of(&sys.open.unit(w).values) } else { vec![true; f.len()] };
        let restrict = |h: &GridFunction<T>| GridFunction {
            grid: h.grid.clone(),
            values: h.values.iter().zip(&mask).map(|(&v, &k)| if k { v } else { T::zero() }).collect(),
        };
        series.push(hilbert_distance(&restrict(&f), &restrict(&g), &Cone::Positive)?);
        if n < steps {
            f = tilde.apply(w, &f)?;
            g = tilde.apply(w, &g)?;
            w = tilde.op(w)?.target;
        }
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| **v > THETA_FLOOR && v.is_finite())
        .map(|(n, v)| (n as f64, v.ln()))
        .collect();
    let fitted_d = linear_fit(&pts).map(|(s, _)| s.exp());
    let first_below = series.iter().position(|&v| v < 1e-8);
    Ok(ContractionReport {
        fiber: omega,
        target,
        block,
        log_a: a.ln(),
        pairs: m - 1,
        pre,
        post,
        delta_est,
        birkhoff_factor: factor,
        worst_ratio,
        birkhoff_ok: ok,
        escapes,
        series,
        fitted_d,
        first_below,
        norm_violations,
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BoundChecks {
    /// Functional sequences that decrease, or values outside [inf f, sup f].
    pub functional_violations: usize,
    /// ρⁿF(f) ≤ F(Lⁿf) and ρⁿ ≤ F(Lⁿ1).
    pub chain_checked: usize,
    pub chain_violations: usize,
    pub chain_worst: f64,
    /// Θ(1, f) against the log[(sup f + cF)/min(inf f, (1−c)F)] bound, c = 1/2.
    pub bound_checked: usize,
    pub bound_violations: usize,
    /// F(L̃^{lR} f) ≤ (ã + 1) F(L̃^{lR} 1) F(f).
    pub block_checked: usize,
    pub block_violations: usize,
    /// First n with ‖gⁿ‖ < ρⁿ/(8ã³).
    pub first_small_cells: Option<usize>,
    /// Classified cells violating F(1_U) ≤ ‖gⁿ‖/ρⁿ.
    pub cell_bound_violations: usize,
    /// Cone parameter and level of the good-cell lower bound check.
    pub lower_bound_a: f64,
    pub lower_bound_level: usize,
    pub lower_bound_checked: usize,
    pub lower_bound_violations: usize,
}

impl BoundChecks {
    pub fn total_violations(&self) -> usize {
        self.functional_violations
            + self.chain_violations
            + self.bound_violations
            + self.block_violations
            + self.cell_bound_violations
            + self.lower_bound_violations
    }
}

/// Property checks of the functional, the ρ chain, the Θ(1, f) bound and the cell bounds on fiber ω.
pub fn bound_checks<T: Real>(
    sys: &RandomSystem<T>,
    est: &[FunctionalEstimator<'_, T>],
    analysis: &ConeAnalysis,
    omega: FiberId,
    seeds: &SeedTree,
) -> Result<BoundChecks> {
    let opts = &analysis.options;
    let base = sys.base();
    let grid = sys.grids[omega].clone();
    let mut out = BoundChecks::default();
    let positives: Vec<GridFunction<T>> = (0..opts.samples)
        .map(|s| {
            let mut rng = seeds.stream("cone_metric", "bounds", s as u64);
            random_step(grid.clone(), &mut rng, 10, 0.0, 1.0)
        })
        .collect();

    let mut f_omega = Vec::with_capacity(positives.len() + 1);
    for f in &positives {
        let e = est[omega].estimate(f)?;
        f_omega.push(e.value);
        let mono = e.sequence.windows(2).all(|w| w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()));
        let (lo, hi) = (f.min().f64(), f.max().f64());
        if !mono || e.value < lo - 1e-12 || e.value > hi + 1e-12 {
            out.functional_violations += 1;
        }
    }

    let room = base.forward_room(omega);
    let mut tests = positives.clone();
    tests.push(GridFunction::constant(grid.clone(), T::one()));
    f_omega.push(est[omega].value(&tests[positives.len()])?);
    for n in [1usize, 2, 4].into_iter().filter(|&n| n <= room) {
        let target = base.advance(omega, n as i64)?;
        let rn = rho_n(base, &analysis.rho, omega, n)?;
        for (f, fv) in tests.iter().zip(&f_omega) {
            let lhs = rn * fv;
            let rhs = est[target].value(&sys.open.apply_n(omega, n, f)?)?;
            out.chain_checked += 1;
            let excess = (lhs - rhs) / rhs.abs().max(1e-300);
            out.chain_worst = out.chain_worst.max(excess);
            if lhs > rhs + 1e-8 * rhs.abs().max(1.0) {
                out.chain_violations += 1;
            }
        }
    }

    if let Some(a) = analysis.cone_parameter() {
        let c = 0.5;
        let cone = Cone::Lambda { a, est: &est[omega] };
        let one = GridFunction::constant(grid.clone(), T::one());
        for f in cone_samples(&est[omega], grid.clone(), c * a, opts.samples, seeds, "bound")? {
            let fv = est[omega].value(&f)?;
            let (lo, hi) = (f.min().f64(), f.max().f64());
            let bound = ((hi + c * fv) / lo.min((1.0 - c) * fv)).ln();
            let theta = hilbert_distance(&one, &f, &cone)?;
            out.bound_checked += 1;
            if theta > bound + 1e-8 * (1.0 + bound) {
                out.bound_violations += 1;
            }
        }
    }

    if let Some(k) = &analysis.constants {
        let block = analysis.block(omega).min(room);
        if block > 0 {
            let tilde = semi_normalized(&sys.open, &analysis.rho)?;
            let target = base.advance(omega, block as i64)?;
            let a1 = analysis.cone_parameter().unwrap_or(f64::INFINITY) + 1.0;
            let f1 = est[target].value(&tilde.apply_n(omega, block, &GridFunction::constant(grid.clone(), T::one()))?)?;
            for (f, fv) in positives.iter().zip(&f_omega) {
                let lhs = est[target].value(&tilde.apply_n(omega, block, f)?)?;
                let rhs = a1 * f1 * fv;
                out.block_checked += 1;
                if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
                    out.block_violations += 1;
                }
            }
        }
        // ‖gⁿ‖ < ρⁿ/(8ã³) in logs, with ‖gⁿ‖ and ρⁿ extrapolated from the deepest classified level
        let log_a = k.log_a_tilde;
        if let Some((&(_, m), c)) = analysis.classifications.range((omega, 0)..=(omega, usize::MAX)).next_back() {
            let per_step = (c.g_sup.ln() - rho_n(base, &analysis.rho, omega, m)?.ln()) / m as f64;
            let need = -(8.0f64.ln() + 3.0 * log_a);
            if per_step < 0.0 {
                out.first_small_cells = Some((need / per_step).floor() as usize + 1);
            }
        }
    }
    for (&(w, n), c) in analysis.classifications.iter().filter(|(k, _)| k.0 == omega) {
        let bound = c.g_sup / rho_n(base, &analysis.rho, w, n)?;
        out.cell_bound_violations += c
            .classes
            .iter()
            .zip(&c.f_values)
            .filter(|(cl, f)| **cl != CellClass::Hole && **f > bound * (1.0 + 1e-9) + 1e-12)
            .count();
    }

    // Good-cell lower bound at the deepest level, with a cone small enough for that level.
    if let Some((&(_, n), c)) = analysis.classifications.range((omega, 0)..=(omega, usize::MAX)).next_back() {
        let sup_f = c.f_values.iter().copied().filter(|v| !v.is_nan()).fold(0.0, f64::max);
        let a_low = 0.9 * (8.0 * sup_f).powf(-1.0 / 3.0);
        out.lower_bound_a = a_low;
        out.lower_bound_level = n;
        for f in cone_samples(&est[omega], grid.clone(), a_low, opts.samples, seeds, "lower_bound")? {
            let half = 0.5 * est[omega].value(&f)?;
            let found = c.cells.iter().zip(&c.classes).any(|(&(lo, hi), &cl)| {
                if cl != CellClass::Good {
                    return false;
                }
                let mut inf = f64::INFINITY;
                for i in grid.overlapping(lo, hi) {
                    let (x, y) = grid.cell(i);
                    if y.min(hi) - x.max(lo) > POINT_TOL {
                        inf = inf.min(f.values[i].f64());
                    }
                }
                inf >= half - 1e-8
            });
            out.lower_bound_checked += 1;
            if !found {
                out.lower_bound_violations += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{FiberMap, PhaseSpace};
    use crate::potential::Potential;
    use crate::transfer::Discretization;
    use std::sync::Arc;

    fn system(maps: Vec<FiberMap>, holes: Vec<IntervalSet>, pots: Vec<Potential>, cells: usize) -> RandomSystem<f64> {
        let base = BaseSystem::cycle(maps.len(), None).unwrap();
        let ps = PhaseSpace::new(base, maps.into_iter().map(Arc::new).collect(), holes).unwrap();
        RandomSystem::build(ps, pots.into_iter().map(Arc::new).collect(), Discretization { cells, depth: 1 }).unwrap()
    }

    fn doubling(hole: IntervalSet, cells: usize) -> RandomSystem<f64> {
        system(vec![FiberMap::doubling()], vec![hole], vec![Potential::Geometric], cells)
    }

    #[test]
    fn functional_of_one_is_one() {
        for hole in [IntervalSet::empty(), IntervalSet::interval(0.5, 1.0), IntervalSet::interval(0.0, 0.25)] {
            let sys = doubling(hole, 256);
            let est = FunctionalEstimator::new(&sys.open, 0, 16).unwrap();
            let one = GridFunction::constant(sys.grids[0].clone(), 1.0);
            assert!((est.value(&one).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_doubling_functional_is_the_mean() {
        let sys = doubling(IntervalSet::empty(), 1024);
        let est = FunctionalEstimator::new(&sys.closed, 0, 8).unwrap();
        let f = GridFunction::from_fn(sys.grids[0].clone(), |x| (3.0 * x).sin() + x * x);
        let mean = ((1.0 - 3.0f64.cos()) / 3.0) + 1.0 / 3.0;
        let e = est.estimate(&f).unwrap();
        assert!((e.value - mean).abs() <= f.variation() / 256.0);
        assert!(e.sequence.windows(2).all(|w| w[1] >= w[0] - 1e-14));
        assert_eq!(e.sequence.len(), 9);
    }

    #[test]
    fn indicator_of_the_hole_side_has_zero_functional() {
        let sys = doubling(IntervalSet::interval(0.5, 1.0), 256);
        let est = FunctionalEstimator::new(&sys.open, 0, 12).unwrap();
        let f = GridFunction::indicator(sys.grids[0].clone(), &IntervalSet::interval(0.5, 1.0));
        assert_eq!(est.value(&f).unwrap(), 0.0);
    }

    #[test]
    fn full_hole_has_empty_support() {
        let sys = doubling(IntervalSet::unit(), 16);
        assert!(matches!(FunctionalEstimator::new(&sys.open, 0, 3), Err(Error::EmptySupport { .. })));
    }

    #[test]
    fn positive_cone_distance() {
        let grid = Arc::new(crate::bv::Grid::uniform(2));
        let f = GridFunction::new(grid.clone(), vec![1.0, 1.0]).unwrap();
        let g = GridFunction::new(grid.clone(), vec![1.0, 2.0]).unwrap();
        let d = hilbert_distance(&f, &g, &Cone::<f64>::Positive).unwrap();
        assert!((d - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(hilbert_distance(&f, &f.scale(2.0), &Cone::<f64>::Positive).unwrap(), 0.0);
        let z = GridFunction::new(grid, vec![0.0, 1.0]).unwrap();
        assert!(hilbert_distance(&f, &z, &Cone::<f64>::Positive).unwrap().is_infinite());
    }

    #[test]
    fn lambda_cone_distance_of_proportional_elements() {
        let sys = doubling(IntervalSet::empty(), 64);
        let est = FunctionalEstimator::new(&sys.closed, 0, 8).unwrap();
        let f = GridFunction::from_fn(sys.grids[0].clone(), |x| 1.0 + x);
        let cone = Cone::Lambda { a: 4.0, est: &est };
        assert!(hilbert_distance(&f, &f.scale(2.0), &cone).unwrap() < 1e-9);
        let bad = GridFunction::indicator(sys.grids[0].clone(), &IntervalSet::interval(0.0, 0.5));
        assert!(hilbert_distance(&f, &bad.scale(-1.0), &cone).is_err());
    }

    #[test]
    fn lambda_cone_distance_dominates_positive_cone() {
        let sys = doubling(IntervalSet::empty(), 64);
        let est = FunctionalEstimator::new(&sys.closed, 0, 8).unwrap();
        let f = GridFunction::from_fn(sys.grids[0].clone(), |x| 1.0 + x);
        let g = GridFunction::from_fn(sys.grids[0].clone(), |x| 2.0 - x * x);
        let cone = Cone::Lambda { a: 6.0, est: &est };
        let dl = hilbert_distance(&f, &g, &cone).unwrap();
        let dp = hilbert_distance(&f, &g, &Cone::Positive).unwrap();
        assert!(dl >= dp - 1e-9 && dl.is_finite());
    }

    #[test]
    fn closed_doubling_level_one() {
        let sys = doubling(IntervalSet::empty(), 256);
        let est = estimators(&sys.open, 12).unwrap();
        let c = classify_cells(&sys, &est[0], 0, 1).unwrap();
        assert_eq!(c.count(CellClass::Good), 2);
        assert_eq!((c.eta, c.a, c.b), (0, 0.0, 1.0));
        assert!((c.delta - 0.25).abs() < 1e-12);
        let rho = rho(&sys.open, &est).unwrap();
        let ly = measure_ly_coefficients(&sys, &est, &rho, &c, 20, &SeedTree::new(1)).unwrap();
        assert!((ly.big_a - 1.5).abs() < 1e-12);
        assert_eq!(ly.violations, 0);
        assert!(ly.worst_ratio <= 1.0);
    }

    #[test]
    fn half_hole_level_one() {
        let sys = doubling(IntervalSet::interval(0.5, 1.0), 256);
        let est = estimators(&sys.open, 12).unwrap();
        let c = classify_cells(&sys, &est[0], 0, 1).unwrap();
        assert_eq!(c.cells, vec![(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)]);
        assert_eq!(c.classes, vec![CellClass::Good, CellClass::Bad, CellClass::Hole]);
        assert_eq!(c.eta, 1);
        // indicator of [0,1/2) maps to the constant 1/2
        let f = GridFunction::indicator(sys.grids[0].clone(), &IntervalSet::interval(0.0, 0.5));
        assert!(sys.open.apply(0, &f).unwrap().variation() < 1e-15);
    }

    #[test]
    fn contiguity_skips_hole_cells() {
        use CellClass::*;
        assert_eq!(contiguous_bad(&[Bad, Hole, Bad, Good, Bad]), 2);
        assert_eq!(contiguous_bad(&[Good, Good]), 0);
        assert_eq!(contiguous_bad(&[Bad, Bad, Bad, Hole]), 3);
    }

    #[test]
    fn closed_doubling_fiber_is_good() {
        let sys = doubling(IntervalSet::empty(), 256);
        let est = estimators(&sys.open, 12).unwrap();
        let opts = ConeOptions { samples: 8, ..Default::default() };
        let an = analyze(&sys, &est, &[1], &opts, &SeedTree::new(3)).unwrap();
        let k = an.constants.as_ref().unwrap();
        assert_eq!(k.nc, 2);
        assert!((k.xi + 0.75f64.ln() / 2.0).abs() < 1e-12);
        assert!((k.zeta - 9.0f64.ln()).abs() < 1e-12);
        assert!(k.cond1 && an.fibers[0].good && an.fibers[0].coating_length == Some(1));
        assert!(an.all_contracting());
    }

    #[test]
    fn half_hole_is_not_contracting() {
        let sys = doubling(IntervalSet::interval(0.5, 1.0), 256);
        let est = estimators(&sys.open, 12).unwrap();
        let opts = ConeOptions { samples: 4, nc_cap: 4, ..Default::default() };
        let an = analyze(&sys, &est, &[], &opts, &SeedTree::new(3)).unwrap();
        assert!(an.constants.is_none());
        assert!(!an.all_contracting(), "{:?}", an.rates);
    }

    #[test]
    fn golden_hole_contracts() {
        let sys = doubling(IntervalSet::interval(0.0, 0.25), 512);
        let est = estimators(&sys.open, 16).unwrap();
        let opts = ConeOptions { samples: 6, iterates: 30, epsilon: 0.04, ..Default::default() };
        let seeds = SeedTree::new(7);
        let an = analyze(&sys, &est, &[1, 2], &opts, &seeds).unwrap();
        assert!(an.all_contracting());
        let rep = contraction_diagnostics(&sys, &est, &an, 0, &seeds).unwrap();
        assert!(rep.first_below.is_some_and(|n| n <= 30), "{:?}", rep.series);
        assert!(rep.fitted_d.is_some_and(|d| d < 1.0));
        assert!(rep.birkhoff_ok && rep.norm_violations == 0);
        let checks = bound_checks(&sys, &est, &an, 0, &seeds).unwrap();
        assert_eq!(checks.total_violations(), 0, "{checks:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn positive(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.1f64..4.0, n)
        }

        fn gf(v: Vec<f64>) -> GridFunction<f64> {
            GridFunction::new(Arc::new(crate::bv::Grid::uniform(v.len())), v).unwrap()
        }

        proptest! {
            #[test]
            fn positive_cone_metric(a in positive(16), b in positive(16), c in positive(16), s in 0.1f64..10.0) {
                let (f, g, h) = (gf(a), gf(b), gf(c));
                let d = |x: &GridFunction<f64>, y: &GridFunction<f64>| hilbert_distance(x, y, &Cone::Positive).unwrap();
                prop_assert!((d(&f, &g) - d(&g, &f)).abs() < 1e-9);
                prop_assert!(d(&f, &f.scale(s)) < 1e-9);
                prop_assert!(d(&f, &h) <= d(&f, &g) + d(&g, &h) + 1e-9);
            }

            #[test]
            fn smaller_cone_is_farther(a in positive(64), b in positive(64), big in 50.0f64..500.0) {
                let sys = doubling(IntervalSet::interval(0.0, 0.25), 64);
                let est = FunctionalEstimator::new(&sys.open, 0, 12).unwrap();
                let (f, g) = (gf(a), gf(b));
                let (f, g) = (GridFunction { grid: sys.grids[0].clone(), values: f.values }, GridFunction { grid: sys.grids[0].clone(), values: g.values });
                let a_min = (f.variation() / est.value(&f).unwrap()).max(g.variation() / est.value(&g).unwrap()) * 1.01;
                let pos = hilbert_distance(&f, &g, &Cone::Positive).unwrap();
                let d1 = hilbert_distance(&f, &g, &Cone::Lambda { a: a_min * big, est: &est }).unwrap();
                let d0 = hilbert_distance(&f, &g, &Cone::Lambda { a: a_min, est: &est }).unwrap();
                prop_assert!(d1 >= pos - 1e-8);
                prop_assert!(d0 >= d1 - 1e-8);
            }

            #[test]
            fn operator_is_a_weak_contraction(a in positive(64), b in positive(64)) {
                let sys = doubling(IntervalSet::interval(0.0, 0.25), 64);
                let (f, g) = (gf(a), gf(b));
                let (f, g) = (GridFunction { grid: sys.grids[0].clone(), values: f.values }, GridFunction { grid: sys.grids[0].clone(), values: g.values });
                let before = hilbert_distance(&f, &g, &Cone::Positive).unwrap();
                let (lf, lg) = (sys.closed.apply(0, &f).unwrap(), sys.closed.apply(0, &g).unwrap());
                prop_assert!(hilbert_distance(&lf, &lg, &Cone::Positive).unwrap() <= before + 1e-9);
            }

            #[test]
            fn functional_sequence_is_monotone(a in positive(64)) {
                let sys = doubling(IntervalSet::interval(0.0, 0.25), 64);
                let est = FunctionalEstimator::new(&sys.open, 0, 10).unwrap();
                let f = GridFunction { grid: sys.grids[0].clone(), values: a };
                let e = est.estimate(&f).unwrap();
                for w in e.sequence.windows(2) {
                    prop_assert!(w[1] >= w[0] - 1e-12);
                }
                prop_assert!(e.value <= f.max() + 1e-12);
            }
        }
    }
}
