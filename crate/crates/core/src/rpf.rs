//! Leading eigendata (λ, q, ν, μ), equivariance checks and correlation decay.

use serde::Serialize;

use crate::base::{BaseKind, FiberId};
use crate::bv::{integrate, CellMeasure, GridFunction};
use crate::error::{Error, Result};
use crate::interval::IntervalSet;
use crate::scalar::Real;
use crate::transfer::{Family, RandomSystem, Variant};

/// Correlations below this are excluded from rate fits.
pub const CORR_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StartFunction {
    One,
    OnePlusX,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub start: StartFunction,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 10_000, start: StartFunction::One }
    }
}

#[derive(Clone, Debug)]
pub struct FiberSpectralData<T: Real> {
    pub fiber: FiberId,
    pub variant: Variant,
    /// `None` on the last fiber of an orbit window.
    pub lambda: Option<f64>,
    pub q: GridFunction<T>,
    pub nu: CellMeasure<T>,
    pub mu: CellMeasure<T>,
    /// ‖L q_ω − λ q_θω‖_∞ / ‖q_θω‖_∞.
    pub residual: f64,
    /// max(|ν(1) − 1|, |ν(q) − 1|).
    pub normalization_residual: f64,
    /// Steps available behind and ahead of the fiber on an orbit window.
    pub edge_steps: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct SpectralData<T: Real> {
    pub variant: Variant,
    pub fibers: Vec<FiberSpectralData<T>>,
    pub iterations: usize,
    pub tail_bound: f64,
}

impl<T: Real> SpectralData<T> {
    pub fn lambda(&self, omega: FiberId) -> Result<f64> {
        self.fibers[omega]
            .lambda
            .ok_or_else(|| Error::invalid(format!("no eigenvalue on window edge fiber {omega}")))
    }

    /// λ per fiber with NaN where undefined.
    pub fn lambdas(&self) -> Vec<f64> {
        self.fibers.iter().map(|d| d.lambda.unwrap_or(f64::NAN)).collect()
    }

    pub fn qs(&self) -> Vec<GridFunction<T>> {
        self.fibers.iter().map(|d| d.q.clone()).collect()
    }

    /// Fibers carrying an eigenvalue.
    pub fn solved_fibers(&self) -> Vec<FiberId> {
        self.fibers.iter().filter(|d| d.lambda.is_some()).map(|d| d.fiber).collect()
    }

    /// λ_ω λ_θω ⋯ λ_{θ^{n−1}ω}.
    pub fn lambda_n(&self, base: &crate::base::BaseSystem, omega: FiberId, n: usize) -> Result<f64> {
        let (mut w, mut acc) = (omega, 1.0);
        for _ in 0..n {
            acc *= self.lambda(w)?;
            w = base.next(w)?;
        }
        Ok(acc)
    }

    pub fn max_residual(&self) -> f64 {
        self.fibers.iter().map(|d| d.residual).fold(0.0, f64::max)
    }
}

fn sup<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

fn start_values<T: Real>(family: &Family<T>, omega: FiberId, start: StartFunction) -> Vec<T> {
    let unit = family.unit(omega);
    match start {
        StartFunction::One => unit.values.clone(),
        StartFunction::OnePlusX => {
            let g = &family.grids[omega];
            unit.values.iter().enumerate().map(|(i, &u)| u * T::of(1.0 + g.midpoint(i))).collect()
        }
    }
}

/// Eigendata of one family (closed or open) along the whole base.
pub fn solve<T: Real>(family: &Family<T>, tail_bound: f64, opts: &SolverOptions) -> Result<SpectralData<T>> {
    match family.base.kind() {
        BaseKind::Cycle => solve_cycle(family, tail_bound, opts),
        BaseKind::OrbitWindow { .. } => solve_window(family, tail_bound, opts),
    }
}

fn solve_cycle<T: Real>(family: &Family<T>, tail_bound: f64, opts: &SolverOptions) -> Result<SpectralData<T>> {
    let order = family.base.orbit_order();
    let p = order.len();
    let w0 = order[0];
    let tol = T::floor_tol(opts.tol);
    let mat = |w: FiberId| family.op(w).map(|o| &o.matrix);

    // right eigenvector of the cycle product at ω0
    let mut v = start_values(family, w0, opts.start);
    let s = sup(&v);
    if s == T::zero() {
        return Err(Error::ZeroEigenvalue(w0));
    }
    v.iter_mut().for_each(|x| *x /= s);
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut w = v.clone();
        for &f in &order {
            w = mat(f)?.apply(&w);
        }
        let s = sup(&w);
        if s == T::zero() || !s.is_finite() {
            return Err(Error::ZeroEigenvalue(w0));
        }
        w.iter_mut().for_each(|x| *x /= s);
        change = sup(&w.iter().zip(&v).map(|(a, b)| *a - *b).collect::<Vec<_>>()).f64();
        v = w;
        if change < tol {
            break;
        }
    }
    if !(change < tol) {
        return Err(Error::NonConvergence { what: "right eigenvector".into(), iterations, last: change });
    }

    // left eigenvector: ν_ω0 ∝ M_ω0ᵀ ⋯ M_ω(p−1)ᵀ ν_ω0
    let lebesgue = CellMeasure::<T>::lebesgue(family.grids[w0].clone()).masses;
    let mut m = lebesgue;
    let mut left_iter = 0;
    change = f64::INFINITY;
    while left_iter < opts.max_iter {
        left_iter += 1;
        let mut w = m.clone();
        for &f in order.iter().rev() {
            w = mat(f)?.apply_transpose(&w);
        }
        let total: T = w.iter().copied().sum();
        if total == T::zero() || !total.is_finite() {
            return Err(Error::ZeroEigenvalue(w0));
        }
        w.iter_mut().for_each(|x| *x /= total);
        let d: Vec<T> = w.iter().zip(&m).map(|(a, b)| *a - *b).collect();
        change = (sup(&d) / sup(&w)).f64();
        m = w;
        if change < tol {
            break;
        }
    }
    if !(change < tol) {
        return Err(Error::NonConvergence { what: "left eigenvector".into(), iterations: left_iter, last: change });
    }

    let n = family.base.size();
    let mut nus: Vec<Option<Vec<T>>> = vec![None; n];
    let mut lambdas = vec![0.0; n];
    nus[w0] = Some(m);
    for k in (0..p).rev() {
        let w = order[k];
        let target = order[(k + 1) % p];
        let raw = mat(w)?.apply_transpose(nus[target].as_ref().expect("target measure set"));
        let total: T = raw.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::ZeroEigenvalue(w));
        }
        lambdas[w] = total.f64();
        if k != 0 {
            nus[w] = Some(raw.into_iter().map(|x| x / total).collect());
        }
    }
    let nus: Vec<Vec<T>> = nus.into_iter().map(|v| v.expect("every fiber visited")).collect();

    let scale: T = v.iter().zip(&nus[w0]).map(|(a, b)| *a * *b).sum();
    let mut qs: Vec<Vec<T>> = vec![Vec::new(); n];
    qs[w0] = v.iter().map(|&x| x / scale).collect();
    for k in 0..p - 1 {
        let (w, t) = (order[k], order[k + 1]);
        let l = T::of(lambdas[w]);
        qs[t] = mat(w)?.apply(&qs[w]).into_iter().map(|x| x / l).collect();
    }
    assemble(family, tail_bound, lambdas.into_iter().map(Some).collect(), qs, nus, iterations + left_iter, None)
}

fn solve_window<T: Real>(family: &Family<T>, tail_bound: f64, opts: &SolverOptions) -> Result<SpectralData<T>> {
    let n = family.base.size();
    let mut nus: Vec<Vec<T>> = vec![Vec::new(); n];
    let mut lambdas: Vec<Option<f64>> = vec![None; n];
    nus[n - 1] = CellMeasure::<T>::lebesgue(family.grids[n - 1].clone()).masses;
    for w in (0..n - 1).rev() {
        let raw = family.op(w)?.matrix.apply_transpose(&nus[w + 1]);
        let total: T = raw.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::ZeroEigenvalue(w));
        }
        lambdas[w] = Some(total.f64());
        nus[w] = raw.into_iter().map(|x| x / total).collect();
    }
    let v = start_values(family, 0, opts.start);
    let scale: T = v.iter().zip(&nus[0]).map(|(a, b)| *a * *b).sum();
    if !(scale > T::zero()) {
        return Err(Error::ZeroEigenvalue(0));
    }
    let mut qs: Vec<Vec<T>> = vec![Vec::new(); n];
    qs[0] = v.into_iter().map(|x| x / scale).collect();
    for w in 0..n - 1 {
        let l = T::of(lambdas[w].expect("set above"));
        qs[w + 1] = family.op(w)?.matrix.apply(&qs[w]).into_iter().map(|x| x / l).collect();
    }
    let edges = (0..n).map(|w| (w, n - 1 - w)).collect();
    assemble(family, tail_bound, lambdas, qs, nus, n, Some(edges))
}

fn assemble<T: Real>(
    family: &Family<T>,
    tail_bound: f64,
    lambdas: Vec<Option<f64>>,
    qs: Vec<Vec<T>>,
    nus: Vec<Vec<T>>,
    iterations: usize,
    edges: Option<Vec<(usize, usize)>>,
) -> Result<SpectralData<T>> {
    let n = family.base.size();
    let mut fibers = Vec::with_capacity(n);
    for w in 0..n {
        let grid = family.grids[w].clone();
        let q = GridFunction { grid: grid.clone(), values: qs[w].clone() };
        let nu = CellMeasure { grid: grid.clone(), masses: nus[w].clone() };
        let raw: Vec<T> = q.values.iter().zip(&nu.masses).map(|(a, b)| *a * *b).collect();
        let total: T = raw.iter().copied().sum();
        let mu = CellMeasure { grid: grid.clone(), masses: raw.into_iter().map(|x| x / total).collect() };
        let residual = match lambdas[w] {
            Some(l) if family.has_op(w) => {
                let op = family.op(w)?;
                let lq = op.matrix.apply(&q.values);
                let qt = &qs[op.target];
                let d: Vec<T> = lq.iter().zip(qt).map(|(a, b)| *a - T::of(l) * *b).collect();
                (sup(&d) / sup(qt)).f64()
            }
            _ => 0.0,
        };
        let normalization_residual =
            (nu.total().f64() - 1.0).abs().max((integrate(&q, &nu).f64() - 1.0).abs());
        fibers.push(FiberSpectralData {
            fiber: w,
            variant: family.variant,
            lambda: lambdas[w],
            q,
            nu,
            mu,
            residual,
            normalization_residual,
            edge_steps: edges.as_ref().map(|e| e[w]),
        });
    }
    Ok(SpectralData { variant: family.variant, fibers, iterations, tail_bound })
}

/// Largest relative sup-distance between q computed from two starting functions.
pub fn start_independence<T: Real>(family: &Family<T>, tail_bound: f64, opts: &SolverOptions) -> Result<f64> {
    let a = solve(family, tail_bound, &SolverOptions { start: StartFunction::One, ..*opts })?;
    let b = solve(family, tail_bound, &SolverOptions { start: StartFunction::OnePlusX, ..*opts })?;
    let mut worst = 0.0f64;
    for (x, y) in a.fibers.iter().zip(&b.fibers) {
        let d: Vec<T> = x.q.values.iter().zip(&y.q.values).map(|(u, v)| *u - *v).collect();
        worst = worst.max((sup(&d) / sup(&x.q.values)).f64());
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivarianceReport {
    /// max |ν_θω(L f) − λ ν_ω(f)| / ‖f‖_BV.
    pub equivariance: f64,
    /// max |μ_θω(f) − μ_ω(K f)| / ‖f‖_∞, K the ν-dual Koopman operator.
    pub t_invariance: f64,
    pub samples: usize,
}

/// Checks ν and μ against test functions on each fiber that carries an operator.
pub fn verify_equivariance<T: Real>(
    family: &Family<T>,
    data: &SpectralData<T>,
    tests: &[Vec<GridFunction<T>>],
) -> Result<EquivarianceReport> {
    let mut eq = 0.0f64;
    let mut inv = 0.0f64;
    let mut samples = 0;
    for d in &data.fibers {
        let (w, Some(l)) = (d.fiber, d.lambda) else { continue };
        if !family.has_op(w) {
            continue;
        }
        let op = family.op(w)?;
        let tgt = &data.fibers[op.target];
        for f in &tests[w] {
            let f = f.on_grid(&family.grids[w]);
            let lf = family.apply(w, &f)?;
            let r = (integrate(&lf, &tgt.nu).f64() - l * integrate(&f, &d.nu).f64()).abs();
            let norm = f.bv_norm().f64();
            if norm > 0.0 {
                eq = eq.max(r / norm);
            }
            // f on θω, pulled back with the ν-dual Koopman operator
            let h = f.on_grid(&family.grids[op.target]);
            let weighted: Vec<T> = h.values.iter().zip(&tgt.nu.masses).map(|(a, b)| *a * *b).collect();
            let back = op.matrix.apply_transpose(&weighted);
            let lhs = integrate(&h, &tgt.mu).f64();
            let total: T = d.q.values.iter().zip(&d.nu.masses).map(|(a, b)| *a * *b).sum();
            let rhs: T = back.iter().zip(&d.q.values).map(|(b, q)| *b * *q).sum::<T>() / (T::of(l) * total);
            let norm = h.sup_norm().f64();
            if norm > 0.0 {
                inv = inv.max((lhs - rhs.f64()).abs() / norm);
            }
            samples += 1;
        }
    }
    Ok(EquivarianceReport { equivariance: eq, t_invariance: inv, samples })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConformalityReport {
    pub max_residual: f64,
    pub cells: usize,
}

/// ν_θⁿω(Tⁿ A) against λⁿ ∫_A 1/gⁿ dν over monotonicity cells A inside K_{ω,n−1}.
pub fn verify_conformality<T: Real>(
    sys: &RandomSystem<T>,
    data: &SpectralData<T>,
    n_max: usize,
) -> Result<ConformalityReport> {
    let base = sys.base();
    let open = data.variant == Variant::Open;
    let mut worst = 0.0f64;
    let mut cells = 0;
    for n in 1..=n_max {
        for w in data.solved_fibers() {
            if base.forward_room(w) < n {
                continue;
            }
            let Ok(ln) = data.lambda_n(base, w, n) else { continue };
            let top = base.advance(w, n as i64)?;
            let keep = if open { sys.phase.survivor_set(w, n - 1)? } else { IntervalSet::unit() };
            let pts = sys.phase.refine_partition(w, n)?;
            let grid = &sys.grids[w];
            for c in pts.windows(2) {
                let (a, b) = (c[0], c[1]);
                if !keep.contains(0.5 * (a + b)) {
                    continue;
                }
                let Some((lo, hi)) = sys.phase.image_of_cell(w, a, b, n)? else { continue };
                let lhs = data.fibers[top].nu.measure_interval(lo, hi).f64();
                let mut rhs = 0.0;
                for i in grid.overlapping(a, b) {
                    let (s, t) = grid.cell(i);
                    let (s2, t2) = (s.max(a), t.min(b));
                    if t2 <= s2 {
                        continue;
                    }
                    let gn = sys.weight_n(w, 0.5 * (s2 + t2), n)?;
                    if gn > 0.0 {
                        rhs += data.fibers[w].nu.masses[i].f64() * (t2 - s2) / (t - s) / gn;
                    }
                }
                worst = worst.max((lhs - ln * rhs).abs());
                cells += 1;
            }
        }
    }
    Ok(ConformalityReport { max_residual: worst, cells })
}

/// Least-squares line through (x, y); returns (slope, intercept).
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// exp of the fitted slope of log|v_n| over n ≥ 1 with |v_n| above the floor, plus the prefactor.
pub fn fit_rate(values: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| v.abs() > CORR_FLOOR)
        .map(|(n, v)| (n as f64, v.abs().ln()))
        .collect();
    linear_fit(&pts).map(|(s, c)| (s.exp(), c.exp()))
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationSeries {
    pub fiber: FiberId,
    pub values: Vec<f64>,
    pub kappa: Option<f64>,
    pub prefactor: Option<f64>,
}

/// corr(n) = μ_θⁿω((L̂ⁿ f̃)·g) with f̃ = f − μ_ω(f), for n = 0..=n_max.
pub fn correlation_series<T: Real>(
    normalized: &Family<T>,
    data: &SpectralData<T>,
    omega: FiberId,
    f: &dyn Fn(f64) -> f64,
    g: &dyn Fn(f64) -> f64,
    n_max: usize,
) -> Result<CorrelationSeries> {
    if normalized.variant != Variant::FullyNormalized {
        return Err(Error::invalid("correlations need the fully normalized operator"));
    }
    let fw = GridFunction::<T>::from_fn(normalized.grids[omega].clone(), f);
    let mean = integrate(&fw, &data.fibers[omega].mu);
    let mut h = fw.map(|v| v - mean);
    let mut w = omega;
    let mut values = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let gw = GridFunction::<T>::from_fn(normalized.grids[w].clone(), g);
        values.push(integrate(&h.zip_with(&gw, |a, b| a * b), &data.fibers[w].mu).f64());
        if n < n_max {
            h = normalized.apply(w, &h)?;
            w = normalized.op(w)?.target;
        }
    }
    let fit = fit_rate(&values);
    Ok(CorrelationSeries { fiber: omega, values, kappa: fit.map(|f| f.0), prefactor: fit.map(|f| f.1) })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceSeries {
    pub fiber: FiberId,
    /// ‖λ_ω^{−n} Lⁿ f − ν_ω(f) q_θⁿω‖_∞.
    pub values: Vec<f64>,
    pub iota: Option<f64>,
}

pub fn convergence_series<T: Real>(
    family: &Family<T>,
    data: &SpectralData<T>,
    omega: FiberId,
    f: &GridFunction<T>,
    n_max: usize,
) -> Result<ConvergenceSeries> {
    let f = f.on_grid(&family.grids[omega]);
    let nf = integrate(&f, &data.fibers[omega].nu);
    let mut h = f;
    let mut w = omega;
    let mut values = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let q = &data.fibers[w].q;
        let d: Vec<T> = h.values.iter().zip(&q.values).map(|(a, b)| *a - nf * *b).collect();
        values.push(sup(&d).f64());
        if n < n_max {
            let l = T::of(data.lambda(w)?);
            h = family.apply(w, &h)?.map(|v| v / l);
            w = family.op(w)?.target;
        }
    }
    let iota = fit_rate(&values).map(|f| f.0);
    Ok(ConvergenceSeries { fiber: omega, values, iota })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::BaseSystem;
    use crate::phase::{FiberMap, PhaseSpace};
    use crate::potential::Potential;
    use crate::transfer::{fully_normalized, Discretization};
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
    fn closed_doubling_eigendata() {
        let s = doubling(IntervalSet::empty(), 64);
        let d = solve(&s.closed, 0.0, &SolverOptions::default()).unwrap();
        let f = &d.fibers[0];
        assert!((f.lambda.unwrap() - 1.0).abs() < 1e-14);
        assert!(f.q.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(f.nu.masses.iter().all(|m| (m - 1.0 / 64.0).abs() < 1e-14));
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn golden_mean_hole() {
        let s = doubling(IntervalSet::interval(0.0, 0.25), 256);
        let d = solve(&s.open, 0.0, &SolverOptions::default()).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 4.0;
        assert!((d.lambda(0).unwrap() - golden).abs() < 1e-10);
        assert!(d.fibers[0].normalization_residual < 1e-10);
        assert!(d.fibers[0].q.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn period_two_cocycle() {
        let s = system(
            vec![FiberMap::doubling(), FiberMap::tripling()],
            vec![IntervalSet::empty(), IntervalSet::interval(2.0 / 3.0, 1.0)],
            vec![Potential::Geometric, Potential::Geometric],
            81,
        );
        let d = solve(&s.open, 0.0, &SolverOptions::default()).unwrap();
        assert!((d.lambda(0).unwrap() - 1.0).abs() < 1e-12);
        assert!((d.lambda(1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        for f in &d.fibers {
            assert!(f.residual < 1e-10, "{}", f.residual);
        }
    }

    #[test]
    fn equivariance_on_indicator() {
        let s = doubling(IntervalSet::empty(), 32);
        let d = solve(&s.closed, 0.0, &SolverOptions::default()).unwrap();
        let ind = GridFunction::indicator(s.grids[0].clone(), &IntervalSet::interval(0.0, 0.5));
        let one = GridFunction::constant(s.grids[0].clone(), 1.0);
        let r = verify_equivariance(&s.closed, &d, &[vec![ind, one]]).unwrap();
        assert!(r.equivariance < 1e-14 && r.t_invariance < 1e-14);
    }

    #[test]
    fn conformality_closed_doubling() {
        let s = doubling(IntervalSet::empty(), 64);
        let d = solve(&s.closed, 0.0, &SolverOptions::default()).unwrap();
        let r = verify_conformality(&s, &d, 2).unwrap();
        assert_eq!(r.cells, 2 + 4);
        assert!(r.max_residual < 1e-13);
    }

    #[test]
    fn correlations_of_indicator_vanish() {
        let s = doubling(IntervalSet::empty(), 64);
        let d = solve(&s.closed, 0.0, &SolverOptions::default()).unwrap();
        let hat = fully_normalized(&s.closed, &d.lambdas(), &d.qs()).unwrap();
        let ind = |x: f64| if x < 0.5 { 1.0 } else { 0.0 };
        let c = correlation_series(&hat, &d, 0, &ind, &ind, 6).unwrap();
        assert!((c.values[0] - 0.25).abs() < 1e-14);
        assert!(c.values[1..].iter().all(|v| v.abs() < 1e-15));
        assert!(c.kappa.is_none());
        let id = |x: f64| x;
        let c = correlation_series(&hat, &d, 0, &id, &id, 12).unwrap();
        // grid resolution finishes the decay slightly early
        let k = c.kappa.unwrap();
        assert!(k > 0.4 && k <= 0.51, "{k}");
    }

    #[test]
    fn starting_function_does_not_matter() {
        let s = doubling(IntervalSet::interval(0.0, 0.25), 128);
        assert!(start_independence(&s.open, 0.0, &SolverOptions::default()).unwrap() < 1e-10);
    }

    #[test]
    fn convergence_to_q() {
        let s = doubling(IntervalSet::interval(0.0, 0.25), 128);
        let d = solve(&s.open, 0.0, &SolverOptions::default()).unwrap();
        let f = GridFunction::from_fn(s.grids[0].clone(), |x| 1.0 + x);
        let c = convergence_series(&s.open, &d, 0, &f, 25).unwrap();
        assert!(c.iota.unwrap() < 1.0);
        assert!(c.values[25] < 1e-4);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let (s, c) = linear_fit(&pts).unwrap();
        assert!((s + 0.5).abs() < 1e-14 && (c - 2.0).abs() < 1e-14);
        assert!(linear_fit(&pts[..1]).is_none());
    }

    #[test]
    fn fully_escaping_system_is_reported() {
        let s = doubling(IntervalSet::unit(), 16);
        assert!(matches!(solve(&s.open, 0.0, &SolverOptions::default()), Err(Error::ZeroEigenvalue(_))));
    }
}
