//! Expected pressure, escape rates and the conditionally invariant measure.

use std::io::Write;

use serde::Serialize;

use crate::base::{BaseKind, FiberId};
use crate::bv::{integrate, CellMeasure, GridFunction};
use crate::error::{Error, Result};
use crate::interval::IntervalSet;
use crate::rpf::{linear_fit, SpectralData};
use crate::scalar::Real;
use crate::transfer::{RandomSystem, Variant};

/// Survivor masses below this end the direct escape sequence.
pub const UNDERFLOW: f64 = 1e-300;

#[derive(Clone, Debug, Serialize)]
pub struct PressureReport {
    pub ep_closed: f64,
    pub ep_open: f64,
    pub log_lambda_closed: Vec<f64>,
    pub log_lambda_open: Vec<f64>,
    /// |(1/n) log ‖Lⁿ1‖_∞ − (1/n) log λⁿ| on the first fiber, n = 1..
    pub sanity: Vec<f64>,
}

/// Weighted average of per-fiber values over the fibers that carry one.
fn expected<T: Real>(sys: &RandomSystem<T>, data: &SpectralData<T>, values: &[f64]) -> Result<f64> {
    let base = sys.base();
    match base.kind() {
        BaseKind::Cycle => base.birkhoff_average(values),
        BaseKind::OrbitWindow { .. } => {
            let fibers = data.solved_fibers();
            let vals: Vec<f64> = fibers.iter().map(|&w| values[w]).collect();
            base.average_over(&fibers, &vals)
        }
    }
}

fn log_lambdas<T: Real>(data: &SpectralData<T>) -> Vec<f64> {
    data.fibers.iter().map(|d| d.lambda.map_or(f64::NAN, f64::ln)).collect()
}

pub fn expected_pressure<T: Real>(
    sys: &RandomSystem<T>,
    closed: &SpectralData<T>,
    open: &SpectralData<T>,
    sanity_steps: usize,
) -> Result<PressureReport> {
    let lc = log_lambdas(closed);
    let lo = log_lambdas(open);
    let ep_closed = expected(sys, closed, &lc)?;
    let ep_open = expected(sys, open, &lo)?;
    let mut sanity = Vec::new();
    let w0 = sys.base().orbit_order()[0];
    let steps = sanity_steps.min(sys.base().forward_room(w0));
    let mut g = sys.open.unit(w0).clone();
    let (mut w, mut log_ln) = (w0, 0.0);
    for n in 1..=steps {
        log_ln += open.lambda(w)?.ln();
        g = sys.open.apply(w, &g)?;
        w = sys.open.op(w)?.target;
        let s = g.sup_norm().f64();
        if !(s > 0.0) {
            break;
        }
        sanity.push((s.ln() - log_ln).abs() / n as f64);
    }
    Ok(PressureReport { ep_closed, ep_open, log_lambda_closed: lc, log_lambda_open: lo, sanity })
}

#[derive(Clone, Debug, Serialize)]
pub struct EscapeReport {
    pub fiber: FiberId,
    /// log ν_c(K_{ω,n}) for n = 0, 1, …
    pub log_masses: Vec<f64>,
    pub fitted_rate: f64,
    /// Smallest and largest rate estimate over the tail half.
    pub lower: f64,
    pub upper: f64,
    pub spectral_rate: f64,
    pub discrepancy: f64,
    pub truncated: bool,
    /// Largest |log| difference between grid transport and exact survivor intervals, when checked.
    pub exact_check: Option<f64>,
}

impl EscapeReport {
    /// −(1/n) log ν_c(K_{ω,n}) for n ≥ 1.
    pub fn running(&self) -> Vec<f64> {
        self.log_masses.iter().enumerate().skip(1).map(|(n, l)| -l / n as f64).collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,log_survivor_mass,running_rate")?;
        for (n, l) in self.log_masses.iter().enumerate().skip(1) {
            writeln!(w, "{n},{l:e},{:e}", -l / n as f64)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EscapeOptions {
    pub n_max: usize,
    /// Compare with exact survivor intervals up to this depth (0 disables).
    pub exact_depth: usize,
}

impl Default for EscapeOptions {
    fn default() -> Self {
        Self { n_max: 48, exact_depth: 0 }
    }
}

/// Direct survivor-mass sequence under ν_c, fitted rate and the spectral comparison.
pub fn escape_rate<T: Real>(
    sys: &RandomSystem<T>,
    closed: &SpectralData<T>,
    pressure: &PressureReport,
    omega: FiberId,
    opts: &EscapeOptions,
) -> Result<EscapeReport> {
    if closed.variant != Variant::Closed {
        return Err(Error::invalid("escape rates are measured with the closed conformal measure"));
    }
    let base = sys.base();
    let n_max = opts.n_max.min(base.forward_room(omega));
    if n_max < 2 {
        return Err(Error::invalid("escape sequence needs at least two steps"));
    }
    let cover = |w: FiberId| &sys.j_cover[w];
    let mut mass: Vec<f64> =
        closed.fibers[omega].nu.masses.iter().zip(cover(omega)).map(|(m, c)| m.f64() * c).collect();
    let mut log_masses = vec![mass.iter().sum::<f64>().ln()];
    let mut w = omega;
    let mut truncated = false;
    for _ in 1..=n_max {
        let p = &sys.pushforward[w];
        let m64: Vec<T> = mass.iter().map(|&x| T::of(x)).collect();
        let next = base.next(w)?;
        mass = p.apply(&m64).iter().zip(cover(next)).map(|(m, c)| m.f64() * c).collect();
        w = next;
        let total: f64 = mass.iter().sum();
        if !(total > UNDERFLOW) {
            truncated = true;
            break;
        }
        log_masses.push(total.ln());
    }
    let exact_check = if opts.exact_depth > 0 {
        let nu = &closed.fibers[omega].nu;
        let mut worst = 0.0f64;
        for n in 0..=opts.exact_depth.min(log_masses.len() - 1) {
            let k = sys.phase.survivor_set(omega, n)?;
            worst = worst.max((nu.measure_of(&k).f64().ln() - log_masses[n]).abs());
        }
        Some(worst)
    } else {
        None
    };
    let stride = base.period().unwrap_or(1).max(1);
    let last = log_masses.len() - 1;
    let start = last / 2;
    let pts: Vec<(f64, f64)> =
        (start..=last).filter(|n| (last - n) % stride == 0).map(|n| (n as f64, log_masses[n])).collect();
    let spectral_rate = pressure.ep_closed - pressure.ep_open;
    let (fitted_rate, local) = match linear_fit(&pts) {
        Some((slope, _)) => {
            let local: Vec<f64> = pts.windows(2).map(|p| -(p[1].1 - p[0].1) / (p[1].0 - p[0].0)).collect();
            (-slope, local)
        }
        None => (f64::NAN, Vec::new()),
    };
    let running: Vec<f64> = (start.max(1)..=last).map(|n| -log_masses[n] / n as f64).collect();
    let all = local.iter().chain(&running).copied();
    let lower = all.clone().fold(f64::INFINITY, f64::min);
    let upper = all.fold(f64::NEG_INFINITY, f64::max);
    Ok(EscapeReport {
        fiber: omega,
        log_masses,
        fitted_rate,
        lower,
        upper,
        spectral_rate,
        discrepancy: (fitted_rate - spectral_rate).abs(),
        truncated,
        exact_check,
    })
}

#[derive(Clone, Debug)]
pub struct CondInvMeasure<T: Real> {
    pub tau: Vec<CellMeasure<T>>,
    /// λ_ω / λ_{ω,c}.
    pub c_factors: Vec<f64>,
    /// τ_ω(K_{ω,1}).
    pub survival_factors: Vec<f64>,
    /// ‖1_J (L_ω(q 1_J) − c λ_c q_θω)‖_∞ / ‖q_θω‖_∞ per fiber.
    pub eigen_residuals: Vec<f64>,
}

/// τ_ω = 1_J q_ω ν_{ω,c}, normalized, with its factors.
pub fn conditionally_invariant<T: Real>(
    sys: &RandomSystem<T>,
    closed: &SpectralData<T>,
    open: &SpectralData<T>,
) -> Result<CondInvMeasure<T>> {
    let n = sys.size();
    let mut tau = Vec::with_capacity(n);
    for w in 0..n {
        let q = &open.fibers[w].q;
        let nu = &closed.fibers[w].nu;
        let raw: Vec<T> = q
            .values
            .iter()
            .zip(&nu.masses)
            .zip(&sys.j_cover[w])
            .map(|((a, b), &c)| *a * *b * T::of(c))
            .collect();
        let total: T = raw.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::Invariant(format!("conditionally invariant measure has no mass on J of fiber {w}")));
        }
        tau.push(CellMeasure { grid: nu.grid.clone(), masses: raw.into_iter().map(|x| x / total).collect() });
    }
    let mut c_factors = vec![f64::NAN; n];
    let mut survival_factors = vec![f64::NAN; n];
    let mut eigen_residuals = vec![f64::NAN; n];
    for w in 0..n {
        if let (Some(l), Some(lc)) = (open.fibers[w].lambda, closed.fibers[w].lambda) {
            c_factors[w] = l / lc;
        }
        if sys.base().has_next(w) {
            survival_factors[w] = tau[w].measure_of(&sys.phase.survivor_set(w, 1)?).f64();
            if let Some(lc) = closed.fibers[w].lambda {
                let op = sys.open.op(w)?;
                let q = &open.fibers[w].q;
                let lq = op.matrix.apply(&q.values);
                let qt = &open.fibers[op.target].q.values;
                let cl = T::of(c_factors[w] * lc);
                let j = &sys.j_cover[op.target];
                let worst = lq
                    .iter()
                    .zip(qt)
                    .zip(j)
                    .map(|((a, b), &c)| ((*a - cl * *b) * T::of(c)).abs())
                    .fold(T::zero(), T::max);
                let norm = qt.iter().fold(T::zero(), |m, x| m.max(x.abs()));
                eigen_residuals[w] = (worst / norm).f64();
            }
        }
    }
    Ok(CondInvMeasure { tau, c_factors, survival_factors, eigen_residuals })
}

#[derive(Clone, Debug, Serialize)]
pub struct CondInvReport {
    /// max |τ(K_n ∩ T⁻ⁿA) − τ(K_n) τ_θⁿ(A)|.
    pub max_residual: f64,
    /// max |τ(K_{n+m}) − τ(K_n) τ_θⁿ(K_m)|.
    pub multiplicativity: f64,
    /// max |τ(K_n) − ∏ survival factors|.
    pub product_rule: f64,
    pub tests: usize,
}

/// Level-`level` dyadic intervals intersected with `within`, at most `cap` nonempty sets.
pub fn dyadic_sets(level: usize, within: &IntervalSet, cap: usize) -> Vec<IntervalSet> {
    let k = 1usize << level.min(30);
    (0..k)
        .map(|i| within.intersect_interval(i as f64 / k as f64, (i + 1) as f64 / k as f64))
        .filter(|s| s.measure() > 0.0)
        .take(cap)
        .collect()
}

pub fn verify_conditional_invariance<T: Real>(
    sys: &RandomSystem<T>,
    ci: &CondInvMeasure<T>,
    depth: usize,
    cap: usize,
) -> Result<CondInvReport> {
    let base = sys.base();
    let mut worst = 0.0f64;
    let mut mult = 0.0f64;
    let mut prod = 0.0f64;
    let mut tests = 0;
    let fibers: Vec<FiberId> = (0..sys.size()).filter(|&w| base.has_next(w)).collect();
    for &w in &fibers {
        let room = depth.min(base.forward_room(w));
        let mut k_mass = Vec::with_capacity(room + 1);
        for n in 0..=room {
            k_mass.push(ci.tau[w].measure_of(&sys.phase.survivor_set(w, n)?).f64());
        }
        for n in 0..=room {
            let top = base.advance(w, n as i64)?;
            let sets = dyadic_sets(depth, &sys.phase.survivor_domain(top), cap);
            for a in &sets {
                let lhs = ci.tau[w].measure_of(&sys.phase.pullback_survivors(w, n, a)?).f64();
                let rhs = k_mass[n] * ci.tau[top].measure_of(a).f64();
                worst = worst.max((lhs - rhs).abs());
                tests += 1;
            }
            let mut p = 1.0;
            let mut v = w;
            for _ in 0..n {
                p *= ci.survival_factors[v];
                v = base.next(v)?;
            }
            prod = prod.max((k_mass[n] - p).abs());
            for m in 0..=room - n {
                if base.forward_room(top) < m {
                    continue;
                }
                let km = ci.tau[top].measure_of(&sys.phase.survivor_set(top, m)?).f64();
                mult = mult.max((k_mass[n + m] - k_mass[n] * km).abs());
            }
        }
    }
    Ok(CondInvReport { max_residual: worst, multiplicativity: mult, product_rule: prod, tests })
}

/// max |∫ 1_A Lⁿ g dν_{θⁿω,c} − λ_cⁿ ∫ 1_{K_n ∩ T⁻ⁿA} g dν_{ω,c}| over dyadic A and the given g.
pub fn verify_duality<T: Real>(
    sys: &RandomSystem<T>,
    closed: &SpectralData<T>,
    omega: FiberId,
    depth: usize,
    tests: &[GridFunction<T>],
) -> Result<f64> {
    let base = sys.base();
    let mut worst = 0.0f64;
    for n in 1..=depth.min(base.forward_room(omega)) {
        let top = base.advance(omega, n as i64)?;
        let ln = closed.lambda_n(base, omega, n)?;
        for g in tests {
            let lg = sys.open.apply_n(omega, n, g)?;
            for a in dyadic_sets(depth, &sys.phase.survivor_domain(top), 64) {
                let ind = GridFunction::<T>::indicator(sys.grids[top].clone(), &a);
                let lhs = integrate(&ind.zip_with(&lg, |x, y| x * y), &closed.fibers[top].nu).f64();
                let back = sys.phase.pullback_survivors(omega, n, &a)?;
                let ib = GridFunction::<T>::indicator(sys.grids[omega].clone(), &back);
                let rhs = ln * integrate(&ib.zip_with(g, |x, y| x * y), &closed.fibers[omega].nu).f64();
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    Ok(worst)
}
