//! One-vs-rest linear SVM trained by full-batch sub-gradient descent on the
//! L2-regularized hinge loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_EPOCHS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    /// Inputs are standardized with the training mean and deviation.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// One weight row per class; the last entry multiplies a constant 1.
    pub weights: Vec<Vec<f64>>,
    pub c: f64,
    pub epochs: usize,
    /// Primal objective of each class's averaged iterate after every epoch.
    #[serde(skip)]
    pub objective_trace: Vec<Vec<f64>>,
}

fn augment(row: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    let mut z: Vec<f64> = row.iter().zip(mean).zip(scale).map(|((x, m), s)| (x - m) / s).collect();
    z.push(1.0);
    z
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn objective(w: &[f64], z: &[Vec<f64>], y: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = z.iter().zip(y).map(|(r, t)| (1.0 - t * dot(w, r)).max(0.0)).sum();
    0.5 * lambda * dot(w, w) + hinge / z.len() as f64
}

/// Binary ±1 problem; returns the Polyak average of the iterates and the
/// per-epoch objective of that average.
fn train_binary(z: &[Vec<f64>], y: &[f64], lambda: f64, epochs: usize) -> (Vec<f64>, Vec<f64>) {
    let d = z[0].len();
    let n = z.len() as f64;
    let mut w = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let mut trace = Vec::with_capacity(epochs);
    for t in 1..=epochs {
        let eta = 1.0 / (lambda * t as f64);
        let mut g: Vec<f64> = w.iter().map(|v| lambda * v).collect();
        for (r, &yt) in z.iter().zip(y) {
            if yt * dot(&w, r) < 1.0 {
                for (gi, ri) in g.iter_mut().zip(r) {
                    *gi -= yt * ri / n;
                }
            }
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi;
        }
        let tf = t as f64;
        for (a, wi) in avg.iter_mut().zip(&w) {
            *a += (wi - *a) / tf;
        }
        trace.push(objective(&avg, z, y, lambda));
    }
    (avg, trace)
}

impl LinearSvm {
    pub fn fit(x: &[Vec<f64>], labels: &[usize], c: f64, epochs: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidParameter("SVM needs training rows".into()));
        }
        if x.len() != labels.len() {
            return Err(Error::dims("labels", x.len(), labels.len()));
        }
        if !(c > 0.0) || epochs == 0 {
            return Err(Error::InvalidParameter("SVM needs C > 0 and at least one epoch".into()));
        }
        let d = x[0].len();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(Error::dims("training row", d, r.len()));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let present = (0..n_classes).filter(|c| labels.contains(c)).count();
        if present < 2 {
            return Err(Error::Degenerate("SVM needs at least two classes".into()));
        }
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = x.iter().map(|r| augment(r, &mean, &scale)).collect();
        let lambda = 1.0 / (c * n);
        let mut weights = Vec::with_capacity(n_classes);
        let mut objective_trace = Vec::with_capacity(n_classes);
        for class in 0..n_classes {
            let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let (w, trace) = train_binary(&z, &y, lambda, epochs);
            weights.push(w);
            objective_trace.push(trace);
        }
        Ok(Self {
            mean,
            scale,
            weights,
            c,
            epochs,
            objective_trace,
        })
    }

    pub fn decision(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::dims("query", self.mean.len(), row.len()));
        }
        let z = augment(row, &self.mean, &self.scale);
        Ok(self.weights.iter().map(|w| dot(w, &z)).collect())
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        x.iter()
            .map(|r| self.decision(r).map(|d| super::mlp::argmax(&d)))
            .collect()
    }
}

pub fn train_linear_svm(x: &[Vec<f64>], labels: &[usize], c: f64, epochs: usize) -> Result<LinearSvm> {
    LinearSvm::fit(x, labels, c, epochs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut l = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let off = if c == 0 { -2.0 } else { 2.0 };
            x.push(vec![off + r.random_range(-1.0..1.0), 0.5 * off + r.random_range(-1.0..1.0)]);
            l.push(c);
        }
        (x, l)
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let (x, l) = blobs(1);
        let m = train_linear_svm(&x, &l, 10.0, DEFAULT_EPOCHS).unwrap();
        assert_eq!(m.predict(&x).unwrap(), l);
    }

    #[test]
    fn input_scaling_leaves_decisions_unchanged() {
        let (x, l) = blobs(2);
        let x10: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 10.0 * v).collect()).collect();
        let a = train_linear_svm(&x, &l, 1.0, 500).unwrap().predict(&x).unwrap();
        let b = train_linear_svm(&x10, &l, 1.0, 500).unwrap().predict(&x10).unwrap();
        let c = train_linear_svm(&x10, &l, 100.0, 500).unwrap().predict(&x10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn averaged_objective_non_increasing() {
        let (mut x, mut l) = blobs(3);
        // overlapping third class makes the hinge active throughout
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            x.push(vec![r.random_range(-2.0..2.0), r.random_range(-1.0..1.0)]);
            l.push(2);
        }
        let m = train_linear_svm(&x, &l, 1.0, DEFAULT_EPOCHS).unwrap();
        for trace in &m.objective_trace {
            // averages over consecutive blocks of 50 epochs
            let blocks: Vec<f64> = trace.chunks(50).map(|b| b.iter().sum::<f64>() / b.len() as f64).collect();
            for w in blocks.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{blocks:?}");
            }
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(train_linear_svm(&x, &[1, 1], 1.0, 10), Err(Error::Degenerate(_))));
    }
}
