//! Ulam discretization of the closed, open and normalized transfer operators.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::base::{BaseSystem, FiberId};
use crate::bv::{CellMeasure, Grid, GridFunction};
use crate::error::{Error, Result};
use crate::interval::IntervalSet;
use crate::phase::{Branch, PhaseSpace, Tail};
use crate::potential::{summability_report, Potential, SummabilityReport};
use crate::scalar::Real;
use crate::sparse::Csr;
use crate::special::{sum_inv_diff, sum_inv_sq};

/// Relative threshold for support detection.
pub const EPS_SUPP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    Closed,
    Open,
    SemiNormalized,
    FullyNormalized,
}

/// One fiber's operator: maps functions on the source grid to the target grid.
#[derive(Clone, Debug)]
pub struct OperatorMatrix<T: Real> {
    pub source: FiberId,
    pub target: FiberId,
    pub variant: Variant,
    pub matrix: Csr<T>,
    /// ρ_ω for the semi-normalized operator, λ_ω for the fully normalized one.
    pub normalization: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Discretization {
    /// Uniform cells before merging partition endpoints.
    pub cells: usize,
    /// Level of the monotonicity partition whose endpoints join the grid.
    pub depth: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Self { cells: 4096, depth: 1 }
    }
}

/// Operators of one variant along the base, with the unit function 1_ω of each fiber.
#[derive(Clone, Debug)]
pub struct Family<T: Real> {
    pub base: BaseSystem,
    pub variant: Variant,
    pub grids: Vec<Arc<Grid>>,
    pub ops: Vec<Arc<OperatorMatrix<T>>>,
    pub units: Vec<GridFunction<T>>,
}

impl<T: Real> Family<T> {
    pub fn op(&self, omega: FiberId) -> Result<&OperatorMatrix<T>> {
        self.ops.get(omega).map(|o| o.as_ref()).ok_or(Error::WindowExceeded { fiber: omega, shift: 1 })
    }

    pub fn has_op(&self, omega: FiberId) -> bool {
        omega < self.ops.len()
    }

    pub fn unit(&self, omega: FiberId) -> &GridFunction<T> {
        &self.units[omega]
    }

    /// One application; f is projected onto the source grid when needed.
    pub fn apply(&self, omega: FiberId, f: &GridFunction<T>) -> Result<GridFunction<T>> {
        let op = self.op(omega)?;
        let f = f.on_grid(&self.grids[omega]);
        Ok(GridFunction { grid: self.grids[op.target].clone(), values: op.matrix.apply(&f.values) })
    }

    pub fn apply_n(&self, omega: FiberId, n: usize, f: &GridFunction<T>) -> Result<GridFunction<T>> {
        let mut w = omega;
        let mut g = f.on_grid(&self.grids[omega]);
        for _ in 0..n {
            g = self.apply(w, &g)?;
            w = self.op(w)?.target;
        }
        Ok(g)
    }

    /// Every iterate f, Lf, …, Lⁿf.
    pub fn orbit(&self, omega: FiberId, n: usize, f: &GridFunction<T>) -> Result<Vec<GridFunction<T>>> {
        let mut out = vec![f.on_grid(&self.grids[omega])];
        let mut w = omega;
        for _ in 0..n {
            let next = self.apply(w, out.last().expect("nonempty"))?;
            out.push(next);
            w = self.op(w)?.target;
        }
        Ok(out)
    }

    /// Measure m on θω pulled back by the transpose: f ↦ m(L f).
    pub fn apply_transpose(&self, omega: FiberId, m: &CellMeasure<T>) -> Result<CellMeasure<T>> {
        let op = self.op(omega)?;
        Ok(CellMeasure { grid: self.grids[omega].clone(), masses: op.matrix.apply_transpose(&m.masses) })
    }

    /// Cells of ω where L^j_{θ^{−j}ω} 1 exceeds the relative threshold.
    pub fn support_set(&self, omega: FiberId, j: usize) -> Result<Vec<bool>> {
        let start = self.base.advance(omega, -(j as i64))?;
        let g = self.apply_n(start, j, self.unit(start))?;
        Ok(support_of(&g.values))
    }
}

/// Cells where v > EPS_SUPP·sup v.
pub fn support_of<T: Real>(v: &[T]) -> Vec<bool> {
    let sup = v.iter().copied().fold(T::zero(), T::max);
    let thr = sup * T::of(EPS_SUPP);
    v.iter().map(|&x| sup > T::zero() && x > thr).collect()
}

/// Assembled random system: geometry, potentials, grids and operators.
#[derive(Clone, Debug)]
pub struct RandomSystem<T: Real> {
    pub phase: PhaseSpace,
    pub potentials: Vec<Arc<Potential>>,
    pub discretization: Discretization,
    pub grids: Vec<Arc<Grid>>,
    /// Fraction of each cell lying in J_ω.
    pub j_cover: Vec<Vec<f64>>,
    pub summability: Vec<SummabilityReport>,
    pub closed: Family<T>,
    pub open: Family<T>,
    /// Lebesgue-split pushforward of cell masses (rows: target cells, columns: source cells).
    pub pushforward: Vec<Csr<T>>,
}

impl<T: Real> RandomSystem<T> {
    pub fn build(phase: PhaseSpace, potentials: Vec<Arc<Potential>>, disc: Discretization) -> Result<Self> {
        let n = phase.size();
        if potentials.len() != n {
            return Err(Error::invalid("one potential per fiber is required"));
        }
        if disc.cells == 0 || disc.depth == 0 {
            return Err(Error::invalid("discretization needs cells >= 1 and depth >= 1"));
        }
        let summability = (0..n)
            .map(|w| summability_report(&potentials[w], &phase.maps[w], w))
            .collect::<Result<Vec<_>>>()?;
        for w in 0..n {
            if let Tail::Gauss { resum: true, .. } = phase.maps[w].tail {
                if !potentials[w].is_geometric() {
                    return Err(Error::invalid(format!(
                        "fiber {w}: tail resummation needs the geometric-derivative potential"
                    )));
                }
            }
        }
        let grids = (0..n)
            .into_par_iter()
            .map(|w| {
                let room = phase.base.forward_room(w);
                let levels = disc.depth.min(room.saturating_add(1));
                let mut extra = phase.refine_partition(w, levels)?;
                extra.extend(phase.holes[w].endpoints());
                Ok(Arc::new(Grid::refined(disc.cells, &extra)))
            })
            .collect::<Result<Vec<_>>>()?;
        let j_cover: Vec<Vec<f64>> = (0..n).map(|w| grids[w].coverage(&phase.survivor_domain(w))).collect();

        let with_op: Vec<FiberId> = (0..n).filter(|&w| phase.base.has_next(w)).collect();
        let assembled = with_op
            .par_iter()
            .map(|&w| {
                let target = phase.base.next(w)?;
                assemble_fiber::<T>(&phase, &potentials[w], w, &grids[w], &grids[target])
            })
            .collect::<Result<Vec<_>>>()?;

        let mut closed_ops = Vec::with_capacity(with_op.len());
        let mut open_ops = Vec::with_capacity(with_op.len());
        let mut pushforward = Vec::with_capacity(with_op.len());
        for (&w, (m, p)) in with_op.iter().zip(assembled) {
            let target = phase.base.next(w)?;
            let cover: Vec<T> = j_cover[w].iter().map(|&c| T::of(c)).collect();
            open_ops.push(Arc::new(OperatorMatrix {
                source: w,
                target,
                variant: Variant::Open,
                matrix: m.scale_columns(&cover),
                normalization: None,
            }));
            closed_ops.push(Arc::new(OperatorMatrix {
                source: w,
                target,
                variant: Variant::Closed,
                matrix: m,
                normalization: None,
            }));
            pushforward.push(p);
        }
        let ones: Vec<GridFunction<T>> = grids.iter().map(|g| GridFunction::constant(g.clone(), T::one())).collect();
        let j_units: Vec<GridFunction<T>> = (0..n)
            .map(|w| GridFunction { grid: grids[w].clone(), values: j_cover[w].iter().map(|&c| T::of(c)).collect() })
            .collect();
        let closed = Family {
            base: phase.base.clone(),
            variant: Variant::Closed,
            grids: grids.clone(),
            ops: closed_ops,
            units: ones,
        };
        let open = Family {
            base: phase.base.clone(),
            variant: Variant::Open,
            grids: grids.clone(),
            ops: open_ops,
            units: j_units,
        };
        Ok(Self { phase, potentials, discretization: disc, grids, j_cover, summability, closed, open, pushforward })
    }

    pub fn base(&self) -> &BaseSystem {
        &self.phase.base
    }

    pub fn size(&self) -> usize {
        self.phase.size()
    }

    pub fn family(&self, variant: Variant) -> Result<&Family<T>> {
        match variant {
            Variant::Closed => Ok(&self.closed),
            Variant::Open => Ok(&self.open),
            _ => Err(Error::invalid("normalized operators need solved eigendata")),
        }
    }

    /// Largest retained-truncation tail bound over fibers.
    pub fn tail_bound(&self) -> f64 {
        self.summability.iter().map(|s| s.tail_bound).fold(0.0, f64::max)
    }

    /// g on the branch containing x, or 0 outside the branch domains.
    pub fn weight_at(&self, omega: FiberId, x: f64) -> Result<f64> {
        let map = &self.phase.maps[omega];
        match map.branch_index_at(x) {
            Some(i) => self.potentials[omega].weight(i, &map.branches[i], x),
            None => Ok(0.0),
        }
    }

    /// gⁿ_ω(x) = ∏ g_{θ^kω}(T^k x), zero once the orbit leaves the branch domains.
    pub fn weight_n(&self, omega: FiberId, x: f64, n: usize) -> Result<f64> {
        let (mut w, mut y, mut acc) = (omega, x, 1.0);
        for _ in 0..n {
            let map = &self.phase.maps[w];
            let Some(i) = map.branch_index_at(y) else { return Ok(0.0) };
            acc *= self.potentials[w].weight(i, &map.branches[i], y)?;
            y = map.branches[i].eval(y);
            w = self.phase.base.next(w)?;
        }
        Ok(acc)
    }
}

/// Closed Ulam matrix and Lebesgue pushforward for one fiber.
fn assemble_fiber<T: Real>(
    phase: &PhaseSpace,
    potential: &Potential,
    omega: FiberId,
    src: &Grid,
    tgt: &Grid,
) -> Result<(Csr<T>, Csr<T>)> {
    let map = &phase.maps[omega];
    let mut m: Vec<(usize, usize, T)> = Vec::new();
    let mut p: Vec<(usize, usize, T)> = Vec::new();
    let mut add_branch = |index: usize, b: &Branch| -> Result<()> {
        let err = |msg: String| Error::Branch { fiber: omega, branch: index, msg };
        for i in src.overlapping(b.lo, b.hi) {
            let (a, c) = src.cell(i);
            let (lo, hi) = (a.max(b.lo), c.min(b.hi));
            if hi <= lo {
                continue;
            }
            let (u, v) = (b.eval(lo), b.eval(hi));
            let (s, t) = if u <= v { (u, v) } else { (v, u) };
            for j in tgt.overlapping(s, t) {
                let (cj, dj) = tgt.cell(j);
                let (os, ot) = (s.max(cj), t.min(dj));
                if ot <= os {
                    continue;
                }
                let Some((x0, x1)) = b.preimage(os, ot).map_err(err)? else { continue };
                let (x0, x1) = (x0.max(lo), x1.min(hi));
                if x1 <= x0 {
                    continue;
                }
                let g = potential.weight(index, b, 0.5 * (x0 + x1))?;
                m.push((j, i, T::of(g * (ot - os) / (dj - cj))));
                p.push((j, i, T::of((x1 - x0) / (c - a))));
            }
        }
        Ok(())
    };
    for (index, b) in map.branches.iter().enumerate() {
        add_branch(index, b)?;
    }
    if let Tail::Gauss { k_max, resum: true } = map.tail {
        // Branches wider than a quarter cell are handled exactly, the rest per cell in closed form.
        let h = src.min_width().min(tgt.min_width());
        let k_exact = k_max.max((2.0 / h.sqrt()).ceil() as u64);
        for k in k_max + 1..=k_exact {
            add_branch(k as usize - 1, &Branch::gauss(k))?;
        }
        let edge = 1.0 / (k_exact as f64 + 1.0);
        for i in src.overlapping(0.0, edge) {
            let (a, c) = src.cell(i);
            // branch k belongs to the cell holding the midpoint-ish point 1/(k+1/2)
            let k1 = ((1.0 / c - 0.5).floor() as u64 + 1).max(k_exact + 1);
            let k2 = (a > 0.0).then(|| (1.0 / a - 0.5).floor() as u64);
            if k2.is_some_and(|k2| k2 < k1) {
                continue;
            }
            for j in 0..tgt.cells() {
                let (cj, dj) = tgt.cell(j);
                let y = 0.5 * (cj + dj);
                m.push((j, i, T::of(sum_inv_sq(k1, k2, y))));
                p.push((j, i, T::of(sum_inv_diff(k1, k2, cj, dj) / (c - a))));
            }
        }
    }
    Ok((Csr::from_triplets(tgt.cells(), src.cells(), m), Csr::from_triplets(tgt.cells(), src.cells(), p)))
}

/// Semi-normalized family ρ_ω^{−1} L_ω.
pub fn semi_normalized<T: Real>(open: &Family<T>, rho: &[f64]) -> Result<Family<T>> {
    let ops = open
        .ops
        .iter()
        .map(|op| {
            let r = rho[op.source];
            if !(r > 0.0) {
                return Err(Error::Invariant(format!("ρ on fiber {} is not positive", op.source)));
            }
            Ok(Arc::new(OperatorMatrix {
                source: op.source,
                target: op.target,
                variant: Variant::SemiNormalized,
                matrix: op.matrix.scale(T::of(1.0 / r)),
                normalization: Some(r),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Family { variant: Variant::SemiNormalized, ops, ..open.clone() })
}

/// Fully normalized family L̂f = L(f q_ω)/(λ_ω q_{θω}), zero off the support of q_{θω}.
pub fn fully_normalized<T: Real>(open: &Family<T>, lambda: &[f64], q: &[GridFunction<T>]) -> Result<Family<T>> {
    let ops = open
        .ops
        .iter()
        .map(|op| {
            let l = lambda[op.source];
            let qt = &q[op.target].values;
            let keep = support_of(qt);
            let row: Vec<T> = qt
                .iter()
                .zip(&keep)
                .map(|(&v, &k)| if k { T::one() / (T::of(l) * v) } else { T::zero() })
                .collect();
            let matrix = op.matrix.scale_columns(&q[op.source].values).scale_rows(&row);
            Ok(Arc::new(OperatorMatrix {
                source: op.source,
                target: op.target,
                variant: Variant::FullyNormalized,
                matrix,
                normalization: Some(l),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Family { variant: Variant::FullyNormalized, ops, ..open.clone() })
}

/// Indicator of an interval set on fiber ω's grid.
pub fn indicator<T: Real>(sys: &RandomSystem<T>, omega: FiberId, set: &IntervalSet) -> GridFunction<T> {
    GridFunction::indicator(sys.grids[omega].clone(), set)
}
