//! Envelope (skyline) storage and Cholesky factorization for the sparse
//! symmetric positive-definite systems produced by the forward model.

use crate::error::{Error, Result};

/// Lower envelope of a symmetric matrix: row `i` stores columns
/// `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// Allocates a zero matrix whose envelope covers every `(i, j)` pair in
    /// `pattern` (either triangle).
    pub fn with_pattern(n: usize, pattern: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in pattern {
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            first[hi] = first[hi].min(lo);
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self {
            first,
            start,
            values: vec![0.0; acc],
        }
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    fn index(&self, i: usize, j: usize) -> Option<usize> {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if lo < self.first[hi] {
            None
        } else {
            Some(self.start[hi] + lo - self.first[hi])
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.index(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    ///
    /// Panics if the entry lies outside the envelope.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .index(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside envelope"));
        self.values[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let f = self.first[i];
            for (off, &a) in row.iter().enumerate() {
                let j = f + off;
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// `b − A x` accumulated with error-free transformations, so the result
    /// is accurate even when it is many orders below `‖b‖`.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut hi = b.to_vec();
        let mut lo = vec![0.0; n];
        let mut sub = |k: usize, a: f64, v: f64| {
            let p = a * v;
            let perr = a.mul_add(v, -p);
            let s = hi[k] - p;
            let bb = s - hi[k];
            let e = (hi[k] - (s - bb)) + (-p - bb);
            hi[k] = s;
            lo[k] += e - perr;
        };
        for i in 0..n {
            let f = self.first[i];
            for (off, &a) in self.values[self.start[i]..self.start[i + 1]].iter().enumerate() {
                let j = f + off;
                sub(i, a, x[j]);
                if j != i {
                    sub(j, a, x[i]);
                }
            }
        }
        hi.iter().zip(&lo).map(|(h, l)| h + l).collect()
    }

    /// In-place row-oriented Cholesky factorization `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<SkylineCholesky> {
        let n = self.n();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.values[si + j - fi];
                for k in k0..j {
                    s -= self.values[si + k - fi] * self.values[sj + k - fj];
                }
                let ljj = self.values[sj + j - fj];
                self.values[si + j - fi] = s / ljj;
            }
            let mut d = self.values[si + i - fi];
            for k in fi..i {
                let l = self.values[si + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular(format!(
                    "non-positive pivot {d:e} at row {i} of {n}"
                )));
            }
            self.values[si + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky { factor: self })
    }
}

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    factor: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn n(&self) -> usize {
        self.factor.n()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.factor;
        let n = l.n();
        for i in 0..n {
            let f = l.first[i];
            let row = &l.values[l.start[i]..l.start[i + 1]];
            let mut s = b[i];
            for (off, &v) in row[..row.len() - 1].iter().enumerate() {
                s -= v * b[f + off];
            }
            b[i] = s / row[row.len() - 1];
        }
        for i in (0..n).rev() {
            let f = l.first[i];
            let row = &l.values[l.start[i]..l.start[i + 1]];
            b[i] /= row[row.len() - 1];
            let xi = b[i];
            for (off, &v) in row[..row.len() - 1].iter().enumerate() {
                b[f + off] -= v * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
