//! Piecewise-constant BV functions and cell measures on fiber grids.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::interval::{dedup_points, IntervalSet};
use crate::scalar::Real;

/// Extra points closer than this to a uniform grid point are snapped onto it.
const SNAP_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 || *points.last().expect("nonempty") != 1.0 {
            return Err(Error::invalid("grid must start at 0 and end at 1"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        Ok(Self { points })
    }

    pub fn uniform(cells: usize) -> Self {
        let points = (0..=cells).map(|i| i as f64 / cells as f64).collect();
        Self { points }
    }

    /// Uniform grid with `cells` cells merged with `extra` breakpoints.
    pub fn refined(cells: usize, extra: &[f64]) -> Self {
        let u = cells as f64;
        let mut pts: Vec<f64> = (0..=cells).map(|i| i as f64 / u).collect();
        for &p in extra {
            if !(0.0..=1.0).contains(&p) {
                continue;
            }
            let nearest = (p * u).round() / u;
            if (p - nearest).abs() > SNAP_TOL {
                pts.push(p);
            }
        }
        Self { points: dedup_points(pts, SNAP_TOL) }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.points[i], self.points[i + 1])
    }

    pub fn width(&self, i: usize) -> f64 {
        self.points[i + 1] - self.points[i]
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        0.5 * (self.points[i] + self.points[i + 1])
    }

    pub fn min_width(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Index of the cell containing x (clamped to the last cell at x = 1).
    pub fn locate(&self, x: f64) -> usize {
        let i = self.points.partition_point(|&p| p <= x);
        i.saturating_sub(1).min(self.cells() - 1)
    }

    /// Range of cells overlapping [a, b).
    pub fn overlapping(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let lo = self.points.partition_point(|&p| p <= a).saturating_sub(1);
        let hi = self.points.partition_point(|&p| p < b).min(self.cells());
        lo..hi.max(lo)
    }

    /// Fraction of each cell covered by `set`.
    pub fn coverage(&self, set: &IntervalSet) -> Vec<f64> {
        let mut out = vec![0.0; self.cells()];
        for &(a, b) in set.parts() {
            for i in self.overlapping(a, b) {
                let (c, d) = self.cell(i);
                let len = b.min(d) - a.max(c);
                if len > 0.0 {
                    out[i] += len / (d - c);
                }
            }
        }
        for v in &mut out {
            *v = v.min(1.0);
        }
        out
    }
}

/// Piecewise-constant function on a grid.
#[derive(Clone, Debug)]
pub struct GridFunction<T: Real> {
    pub grid: Arc<Grid>,
    pub values: Vec<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(grid: Arc<Grid>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::invalid("value count does not match grid cells"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid>, c: T) -> Self {
        let values = vec![c; grid.cells()];
        Self { grid, values }
    }

    /// Cell-average projection of an indicator.
    pub fn indicator(grid: Arc<Grid>, set: &IntervalSet) -> Self {
        let values = grid.coverage(set).into_iter().map(T::of).collect();
        Self { grid, values }
    }

    /// Midpoint samples of f.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.cells()).map(|i| T::of(f(grid.midpoint(i)))).collect();
        Self { grid, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn variation(&self) -> T {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn bv_norm(&self) -> T {
        self.sup_norm() + self.variation()
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Minimum over the cells flagged in `cells`.
    pub fn inf_on(&self, cells: &[bool]) -> Result<T> {
        let mut it = self.values.iter().zip(cells).filter(|(_, &c)| c).map(|(v, _)| *v).peekable();
        if it.peek().is_none() {
            return Err(Error::invalid("inf_on over an empty cell set"));
        }
        Ok(it.fold(T::infinity(), T::min))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        let other = other.on_grid(&self.grid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid.clone(), values }
    }

    pub fn abs(&self) -> Self {
        self.map(T::abs)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// Representation on another grid by cell-average projection.
    pub fn on_grid(&self, grid: &Arc<Grid>) -> Self {
        if Arc::ptr_eq(grid, &self.grid) || grid.as_ref() == self.grid.as_ref() {
            return Self { grid: grid.clone(), values: self.values.clone() };
        }
        let mut values = vec![T::zero(); grid.cells()];
        for (i, v) in values.iter_mut().enumerate() {
            let (a, b) = grid.cell(i);
            let mut acc = T::zero();
            for j in self.grid.overlapping(a, b) {
                let (c, d) = self.grid.cell(j);
                let len = b.min(d) - a.max(c);
                if len > 0.0 {
                    acc += self.values[j] * T::of(len);
                }
            }
            *v = acc / T::of(b - a);
        }
        Self { grid: grid.clone(), values }
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "x_left,x_right,value")?;
        for (i, v) in self.values.iter().enumerate() {
            let (a, b) = self.grid.cell(i);
            writeln!(w, "{a:e},{b:e},{:e}", v.f64())?;
        }
        Ok(())
    }
}

/// Nonnegative masses on the cells of a grid.
#[derive(Clone, Debug)]
pub struct CellMeasure<T: Real> {
    pub grid: Arc<Grid>,
    pub masses: Vec<T>,
}

impl<T: Real> CellMeasure<T> {
    pub fn new(grid: Arc<Grid>, masses: Vec<T>) -> Result<Self> {
        if masses.len() != grid.cells() {
            return Err(Error::invalid("mass count does not match grid cells"));
        }
        if masses.iter().any(|m| *m < T::zero() || !m.is_finite()) {
            return Err(Error::invalid("cell masses must be finite and nonnegative"));
        }
        Ok(Self { grid, masses })
    }

    pub fn lebesgue(grid: Arc<Grid>) -> Self {
        let masses = (0..grid.cells()).map(|i| T::of(grid.width(i))).collect();
        Self { grid, masses }
    }

    pub fn total(&self) -> T {
        self.masses.iter().copied().sum()
    }

    pub fn normalized(&self) -> Self {
        let t = self.total();
        Self { grid: self.grid.clone(), masses: self.masses.iter().map(|&m| m / t).collect() }
    }

    /// Mass of a set, splitting cells proportionally to length.
    pub fn measure_of(&self, set: &IntervalSet) -> T {
        let cov = self.grid.coverage(set);
        self.masses.iter().zip(cov).map(|(&m, c)| m * T::of(c)).sum()
    }

    /// Mass of the interval [a, b).
    pub fn measure_interval(&self, a: f64, b: f64) -> T {
        let mut acc = T::zero();
        for i in self.grid.overlapping(a, b) {
            let (c, d) = self.grid.cell(i);
            let len = b.min(d) - a.max(c);
            if len > 0.0 {
                acc += self.masses[i] * T::of(len / (d - c));
            }
        }
        acc
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "x_left,x_right,mass")?;
        for (i, m) in self.masses.iter().enumerate() {
            let (a, b) = self.grid.cell(i);
            writeln!(w, "{a:e},{b:e},{:e}", m.f64())?;
        }
        Ok(())
    }
}

/// ∫ f dm on the common refinement of the two grids.
pub fn integrate<T: Real>(f: &GridFunction<T>, m: &CellMeasure<T>) -> T {
    if Arc::ptr_eq(&f.grid, &m.grid) || f.grid.as_ref() == m.grid.as_ref() {
        return f.values.iter().zip(&m.masses).map(|(&a, &b)| a * b).sum();
    }
    let mut acc = T::zero();
    for (i, &mass) in m.masses.iter().enumerate() {
        if mass == T::zero() {
            continue;
        }
        let (a, b) = m.grid.cell(i);
        for j in f.grid.overlapping(a, b) {
            let (c, d) = f.grid.cell(j);
            let len = b.min(d) - a.max(c);
            if len > 0.0 {
                acc += f.values[j] * mass * T::of(len / (b - a));
            }
        }
    }
    acc
}

/// Random step function with up to `max_pieces` pieces and values in [lo, hi).
pub fn random_step<T: Real, R: rand::Rng + ?Sized>(
    grid: Arc<Grid>,
    rng: &mut R,
    max_pieces: usize,
    lo: f64,
    hi: f64,
) -> GridFunction<T> {
    use rand::RngExt;
    let pieces = rng.random_range(1..=max_pieces.max(1));
    let mut cuts: Vec<f64> = (1..pieces).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let levels: Vec<f64> = (0..pieces).map(|_| rng.random_range(lo..hi)).collect();
    GridFunction::from_fn(grid, |x| levels[cuts.partition_point(|&c| c <= x)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(n: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(n))
    }

    #[test]
    fn variation_examples() {
        assert_eq!(GridFunction::<f64>::constant(g(8), 1.0).variation(), 0.0);
        let ind = GridFunction::<f64>::indicator(g(8), &IntervalSet::interval(0.0, 0.5));
        assert_eq!(ind.variation(), 1.0);
        assert_eq!(ind.bv_norm(), 2.0);
        let f = GridFunction::new(g(3), vec![0.0f64, 2.0, 1.0]).unwrap();
        assert_eq!(f.variation(), 3.0);
        assert_eq!(GridFunction::<f64>::constant(g(4), -2.5).bv_norm(), 2.5);
    }

    #[test]
    fn inf_on_examples() {
        let f = GridFunction::new(g(3), vec![3.0f64, 5.0, 2.0]).unwrap();
        assert_eq!(f.inf_on(&[true, true, false]).unwrap(), 3.0);
        assert!(f.inf_on(&[false, false, false]).is_err());
    }

    #[test]
    fn integration_examples() {
        let leb = CellMeasure::<f64>::lebesgue(g(16));
        assert!((integrate(&GridFunction::constant(g(16), 1.0), &leb) - 1.0).abs() < 1e-15);
        let ind = GridFunction::indicator(g(16), &IntervalSet::interval(0.0, 0.5));
        assert!((integrate(&ind, &leb) - 0.5).abs() < 1e-15);
        let x = GridFunction::<f64>::from_fn(g(4), |x| x);
        let leb4 = CellMeasure::lebesgue(g(4));
        assert!((integrate(&x, &leb4) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn snapping_and_refinement() {
        let gr = Grid::refined(8, &[1.0 / 3.0, 0.25 + 1e-15, 2.0]);
        assert_eq!(gr.cells(), 9);
        assert!(gr.points().contains(&(1.0 / 3.0)));
        assert_eq!(gr.locate(0.0), 0);
        assert_eq!(gr.locate(1.0), gr.cells() - 1);
        assert_eq!(gr.overlapping(0.25, 0.5), 2..5);
    }

    #[test]
    fn cross_grid_integration() {
        let a = g(4);
        let b = Arc::new(Grid::refined(2, &[1.0 / 3.0]));
        let f = GridFunction::<f64>::from_fn(a.clone(), |x| if x < 0.5 { 1.0 } else { 3.0 });
        let m = CellMeasure::lebesgue(b);
        assert!((integrate(&f, &m) - 2.0).abs() < 1e-15);
        let p = f.on_grid(&m.grid);
        assert!((integrate(&p, &m) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_precision() {
        let f = GridFunction::<f32>::from_fn(g(4), |x| x);
        let m = CellMeasure::<f32>::lebesgue(g(4));
        assert!((integrate(&f, &m) - 0.5).abs() < 1e-6);
    }

    fn arb_fn(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n)
    }

    proptest! {
        #[test]
        fn variation_is_a_seminorm(a in arb_fn(12), b in arb_fn(12), c in -4.0f64..4.0) {
            let gr = g(12);
            let f = GridFunction::new(gr.clone(), a).unwrap();
            let h = GridFunction::new(gr, b).unwrap();
            let sum = f.zip_with(&h, |x, y| x + y);
            prop_assert!(sum.variation() <= f.variation() + h.variation() + 1e-12);
            prop_assert!((f.scale(c).variation() - c.abs() * f.variation()).abs() < 1e-10);
        }

        #[test]
        fn integration_is_bilinear(a in arb_fn(8), b in arb_fn(8), m in proptest::collection::vec(0.0f64..1.0, 8), s in -2.0f64..2.0) {
            let gr = g(8);
            let f = GridFunction::new(gr.clone(), a).unwrap();
            let h = GridFunction::new(gr.clone(), b).unwrap();
            let mu = CellMeasure::new(gr, m).unwrap();
            let lhs = integrate(&f.zip_with(&h, |x, y| x + s * y), &mu);
            let rhs = integrate(&f, &mu) + s * integrate(&h, &mu);
            prop_assert!((lhs - rhs).abs() < 1e-10);
            prop_assert!(integrate(&f, &mu) <= f.sup_norm() * mu.total() + 1e-12);
        }
    }
}
