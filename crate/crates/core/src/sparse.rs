//! Compressed sparse row matrices with nonnegative entries.

use std::io::Write;

use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct Csr<T: Real> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// Builds from (row, col, value) triplets, summing duplicates and dropping zeros.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < rows && c < cols);
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let mut m = Self { rows, cols, indptr, indices, values };
        m.prune();
        m
    }

    fn prune(&mut self) {
        if self.values.iter().all(|v| *v != T::zero()) {
            return;
        }
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.values[k] != T::zero() {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn min_entry(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    /// y = M x.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "dimension mismatch in apply");
        (0..self.rows)
            .map(|r| {
                let mut acc = T::zero();
                for k in self.indptr[r]..self.indptr[r + 1] {
                    acc += self.values[k] * x[self.indices[k]];
                }
                acc
            })
            .collect()
    }

    /// y = Mᵀ x.
    pub fn apply_transpose(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "dimension mismatch in apply_transpose");
        let mut y = vec![T::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == T::zero() {
                continue;
            }
            for k in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[k]] += self.values[k] * xr;
            }
        }
        y
    }

    /// M with column j scaled by s[j].
    pub fn scale_columns(&self, s: &[T]) -> Self {
        let mut m = self.clone();
        for k in 0..m.values.len() {
            m.values[k] *= s[m.indices[k]];
        }
        m.prune();
        m
    }

    /// M with row i scaled by s[i].
    pub fn scale_rows(&self, s: &[T]) -> Self {
        let mut m = self.clone();
        for r in 0..m.rows {
            for k in m.indptr[r]..m.indptr[r + 1] {
                m.values[k] *= s[r];
            }
        }
        m.prune();
        m
    }

    pub fn scale(&self, s: T) -> Self {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= s;
        }
        m
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for (r, c, v) in self.iter() {
            writeln!(w, "{r},{c},{:e}", v.f64())?;
        }
        Ok(())
    }
}
