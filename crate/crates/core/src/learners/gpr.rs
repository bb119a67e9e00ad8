//! Exact Gaussian process regression with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HyperPolicy {
    /// Median pairwise distance, target variance, 1% of target variance.
    Median,
    Explicit {
        length_scale: f64,
        signal_variance: f64,
        noise_variance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Diagonal jitter that was needed on top of the noise variance.
    pub jitter: f64,
    pub mean: f64,
    pub x: Vec<Vec<f64>>,
    /// `(K + σ_n² I)⁻¹ (y − mean)`.
    pub alpha: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn median_pairwise_distance(x: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(x.len() * x.len().saturating_sub(1) / 2);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            d.push(sq_dist(&x[i], &x[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

impl GprModel {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance * (-0.5 * sq_dist(a, b) / (self.length_scale * self.length_scale)).exp()
    }

    pub fn fit(x: &[Vec<f64>], y: &[f64], policy: HyperPolicy) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidParameter("GPR needs training rows".into()));
        }
        if x.len() != y.len() {
            return Err(Error::dims("targets", x.len(), y.len()));
        }
        let d = x[0].len();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(Error::dims("training row", d, r.len()));
        }
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let (ell, s2, sn2) = match policy {
            HyperPolicy::Median => {
                let ell = median_pairwise_distance(x);
                (if ell > 0.0 { ell } else { 1.0 }, var, 1e-2 * var)
            }
            HyperPolicy::Explicit {
                length_scale,
                signal_variance,
                noise_variance,
            } => (length_scale, signal_variance, noise_variance),
        };
        if !(ell > 0.0 && s2 >= 0.0 && sn2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "GPR hyperparameters must be positive (l = {ell}, s2 = {s2}, sn2 = {sn2})"
            )));
        }
        let mut model = Self {
            length_scale: ell,
            signal_variance: s2,
            noise_variance: sn2,
            jitter: 0.0,
            mean,
            x: x.to_vec(),
            alpha: vec![0.0; n],
        };
        if s2 == 0.0 {
            // constant targets: the posterior is the prior mean everywhere
            return Ok(model);
        }
        let k = DMatrix::from_fn(n, n, |i, j| model.kernel(&x[i], &x[j]));
        let mut jitter = 0.0;
        let chol = loop {
            let mut a = k.clone();
            for i in 0..n {
                a[(i, i)] += sn2 + jitter;
            }
            if let Some(c) = a.cholesky() {
                break c;
            }
            jitter = if jitter == 0.0 { 1e-10 * s2 } else { jitter * 10.0 };
            if jitter > 1e-4 * s2 * (1.0 + 1e-12) {
                return Err(Error::Singular(format!(
                    "GPR kernel matrix not positive definite with jitter up to {:e}",
                    1e-4 * s2
                )));
            }
        };
        let centered = DVector::from_iterator(n, y.iter().map(|v| v - mean));
        model.alpha = chol.solve(&centered).as_slice().to_vec();
        model.jitter = jitter;
        Ok(model)
    }

    fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        let n = self.x.len();
        let mut a = DMatrix::from_fn(n, n, |i, j| self.kernel(&self.x[i], &self.x[j]));
        for i in 0..n {
            a[(i, i)] += self.noise_variance + self.jitter;
        }
        a.cholesky()
            .ok_or_else(|| Error::Singular("GPR kernel matrix lost definiteness".into()))
    }

    /// Posterior mean and latent-function variance at each query row.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        let d = self.x[0].len();
        if let Some(q) = x.iter().find(|q| q.len() != d) {
            return Err(Error::dims("query", d, q.len()));
        }
        if self.signal_variance == 0.0 {
            return Ok(vec![(self.mean, 0.0); x.len()]);
        }
        let f = self.factor()?;
        Ok(x.iter()
            .map(|q| {
                let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|r| self.kernel(r, q)));
                let mean = self.mean + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
                let var = (self.signal_variance - ks.dot(&f.solve(&ks))).max(0.0);
                (mean, var)
            })
            .collect())
    }

    pub fn predict_one(&self, query: &[f64]) -> Result<(f64, f64)> {
        Ok(self.predict(&[query.to_vec()])?[0])
    }
}

pub fn train_gpr(x: &[Vec<f64>], y: &[f64], policy: HyperPolicy) -> Result<GprModel> {
    GprModel::fit(x, y, policy)
}
