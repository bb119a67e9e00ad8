//! Principal component pretreatment of voltage frames.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COMPONENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Selector {
    Fixed(usize),
    /// Smallest k whose cumulative explained ratio reaches the threshold.
    Threshold(f64),
}

impl Default for Selector {
    fn default() -> Self {
        Selector::Fixed(DEFAULT_COMPONENTS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Per-column divisor applied after centering when fitted standardized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
    /// `k` orthonormal rows.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    pub k: usize,
}

fn to_matrix(x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = x.first().map_or(0, |r| r.len());
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::dims("frame row", d, bad.len()));
    }
    Ok(DMatrix::from_fn(x.len(), d, |i, j| x[i][j]))
}

/// Fits on the given rows only (centering, no scaling).
pub fn fit_pca(x: &[Vec<f64>], selector: Selector) -> Result<PcaModel> {
    fit_pca_with(x, selector, false)
}

pub fn fit_pca_with(x: &[Vec<f64>], selector: Selector, standardize: bool) -> Result<PcaModel> {
    if x.len() < 2 {
        return Err(Error::InvalidParameter(format!("PCA needs at least 2 rows, got {}", x.len())));
    }
    let mut m = to_matrix(x)?;
    let (n, d) = m.shape();
    if d == 0 {
        return Err(Error::InvalidParameter("PCA rows are empty".into()));
    }
    let mean: Vec<f64> = m.column_iter().map(|c| c.sum() / n as f64).collect();
    for (j, mut c) in m.column_iter_mut().enumerate() {
        c.add_scalar_mut(-mean[j]);
    }
    let scale = if standardize {
        let s: Vec<f64> = m
            .column_iter()
            .map(|c| {
                let sd = (c.norm_squared() / (n - 1) as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        for (j, mut c) in m.column_iter_mut().enumerate() {
            c /= s[j];
        }
        Some(s)
    } else {
        None
    };
    let cov = (m.transpose() * &m) / (n - 1) as f64;
    let total: f64 = cov.diagonal().sum();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let k = match selector {
        Selector::Fixed(k) => {
            if k == 0 || k > d {
                return Err(Error::InvalidParameter(format!(
                    "component count must lie in 1..={d}, got {k}"
                )));
            }
            k
        }
        Selector::Threshold(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "variance threshold must lie in (0, 1], got {tau}"
                )));
            }
            if !(total > 0.0) {
                return Err(Error::Degenerate(
                    "all rows identical; explained variance undefined".into(),
                ));
            }
            let mut acc = 0.0;
            let mut k = d;
            for (i, v) in values.iter().enumerate() {
                acc += v / total;
                // guard against round-off just below an exactly reachable threshold
                if acc >= tau - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    let components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let mut big = 0;
            for (j, x) in v.iter().enumerate() {
                if x.abs() > v[big].abs() {
                    big = j;
                }
            }
            if v[big] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let explained_variance = values[..k].to_vec();
    let explained_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaModel {
        mean,
        scale,
        components,
        explained_variance,
        explained_ratio,
        total_variance: total,
        k,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_ratio.iter().sum()
    }

    fn prepare(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::dims("frame row", self.dim(), row.len()));
        }
        let mut c: Vec<f64> = row.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        if let Some(s) = &self.scale {
            c.iter_mut().zip(s).for_each(|(x, s)| *x /= s);
        }
        Ok(c)
    }

    pub fn project_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let c = self.prepare(row)?;
        Ok(self
            .components
            .iter()
            .map(|v| v.iter().zip(&c).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Maps scores back to the (centered, unscaled) input space.
    pub fn back_project(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.k {
            return Err(Error::dims("score row", self.k, scores.len()));
        }
        let mut out = vec![0.0; self.dim()];
        for (s, v) in scores.iter().zip(&self.components) {
            for (o, c) in out.iter_mut().zip(v) {
                *o += s * c;
            }
        }
        if let Some(sc) = &self.scale {
            out.iter_mut().zip(sc).for_each(|(x, s)| *x *= s);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn project(model: &PcaModel, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    x.iter().map(|r| model.project_row(r)).collect()
}

/// Per class: is the distance from its centroid to the nearest other
/// centroid more than twice the mean distance of its members to it?
pub fn cluster_separation(scores: &[Vec<f64>], labels: &[usize]) -> Result<Vec<bool>> {
    if scores.len() != labels.len() {
        return Err(Error::dims("labels", scores.len(), labels.len()));
    }
    let d = scores.first().map_or(0, |r| r.len());
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut centroid = vec![vec![0.0; d]; n_classes];
    let mut count = vec![0usize; n_classes];
    for (s, &l) in scores.iter().zip(labels) {
        count[l] += 1;
        for (c, v) in centroid[l].iter_mut().zip(s) {
            *c += v;
        }
    }
    for (c, &n) in centroid.iter_mut().zip(&count) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut spread = vec![0.0; n_classes];
    for (s, &l) in scores.iter().zip(labels) {
        spread[l] += dist(s, &centroid[l]) / count[l] as f64;
    }
    Ok((0..n_classes)
        .map(|c| {
            if count[c] == 0 {
                return false;
            }
            let nearest = (0..n_classes)
                .filter(|&o| o != c && count[o] > 0)
                .map(|o| dist(&centroid[c], &centroid[o]))
                .fold(f64::INFINITY, f64::min);
            nearest > 2.0 * spread[c]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let x = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.1], vec![0.0, -0.1]];
        let m = fit_pca(&x, Selector::Fixed(1)).unwrap();
        assert_eq!(m.k, 1);
        assert!((m.components[0][0] - 1.0).abs() < 1e-12);
        assert!(m.components[0][1].abs() < 1e-12);
        assert!((m.explained_ratio[0] - 2.0 / 2.02).abs() < 1e-12);
        // sample covariance diag(2/3, 0.02/3)
        assert!((m.explained_variance[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn line_data_reaches_full_ratio() {
        let x: Vec<Vec<f64>> = (0..7)
            .map(|i| {
                let t = i as f64 - 2.5;
                vec![1.0 + 2.0 * t, -3.0 - t, 0.5 * t]
            })
            .collect();
        let m = fit_pca(&x, Selector::Threshold(0.999_999)).unwrap();
        assert_eq!(m.k, 1);
        assert!((m.explained_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_threshold_rejected() {
        let x = vec![vec![1.0, 2.0]; 5];
        assert!(matches!(fit_pca(&x, Selector::Threshold(0.9)), Err(Error::Degenerate(_))));
        assert!(fit_pca(&x, Selector::Fixed(1)).is_ok());
        assert!(fit_pca(&x[..1], Selector::Fixed(1)).is_err());
        assert!(fit_pca(&[vec![1.0, 2.0], vec![1.0]], Selector::Fixed(1)).is_err());
        assert!(fit_pca(&x, Selector::Fixed(3)).is_err());
    }

    #[test]
    fn full_rank_round_trip() {
        let x: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..4).map(|j| ((i * 7 + j * 3) as f64).sin()).collect())
            .collect();
        let m = fit_pca(&x, Selector::Fixed(4)).unwrap();
        for row in &x {
            let back = m.back_project(&m.project_row(row).unwrap()).unwrap();
            for j in 0..4 {
                assert!((back[j] - (row[j] - m.mean[j])).abs() < 1e-10);
            }
        }
        let total: f64 = m.explained_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean_row = m.mean.clone();
        assert!(m.project_row(&mean_row).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(m.project_row(&[1.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64, 1.0 / (1.0 + i as f64)]).collect();
        let m = fit_pca_with(&x, Selector::Fixed(2), true).unwrap();
        assert_eq!(PcaModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn separation_statistic() {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for c in 0..3 {
            for i in 0..5 {
                s.push(vec![10.0 * c as f64 + 0.1 * i as f64, 0.0]);
                l.push(c);
            }
        }
        // class 3 overlaps class 2
        s.push(vec![20.5, 0.0]);
        s.push(vec![19.5, 10.0]);
        l.extend([3, 3]);
        let sep = cluster_separation(&s, &l).unwrap();
        assert_eq!(sep, vec![true, true, true, false]);
    }
}
