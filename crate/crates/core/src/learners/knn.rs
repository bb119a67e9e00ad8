//! k-nearest-neighbour classification with Euclidean distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

impl KnnModel {
    pub fn fit(x: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidParameter("KNN needs a non-empty training set".into()));
        }
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        if x.len() != labels.len() {
            return Err(Error::dims("labels", x.len(), labels.len()));
        }
        let d = x[0].len();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(Error::dims("training row", d, r.len()));
        }
        Ok(Self {
            k,
            x: x.to_vec(),
            labels: labels.to_vec(),
        })
    }

    /// Majority vote among the `k` nearest training rows (index order breaks
    /// distance ties). A tied vote goes to the tied class owning the nearest
    /// neighbour, then to the lowest class index.
    pub fn predict_one(&self, query: &[f64]) -> Result<usize> {
        let d = self.x[0].len();
        if query.len() != d {
            return Err(Error::dims("query", d, query.len()));
        }
        let mut order: Vec<(f64, usize)> =
            self.x.iter().enumerate().map(|(i, r)| (sq_dist(r, query), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.min(order.len());
        let n_classes = self.labels.iter().max().map_or(0, |m| m + 1);
        let mut votes = vec![0usize; n_classes];
        let mut nearest = vec![f64::INFINITY; n_classes];
        for &(dist, i) in &order[..k] {
            let c = self.labels[i];
            votes[c] += 1;
            nearest[c] = nearest[c].min(dist);
        }
        let top = *votes.iter().max().unwrap_or(&0);
        let mut best: Option<usize> = None;
        for c in (0..n_classes).filter(|&c| votes[c] == top) {
            match best {
                Some(b) if nearest[c] >= nearest[b] => {}
                _ => best = Some(c),
            }
        }
        Ok(best.unwrap_or(0))
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        x.iter().map(|q| self.predict_one(q)).collect()
    }
}

pub fn knn(x: &[Vec<f64>], labels: &[usize], k: usize, query: &[f64]) -> Result<usize> {
    KnnModel::fit(x, labels, k)?.predict_one(query)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_and_global_majority() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![10.0]];
        let l = vec![0, 1, 1, 0, 1];
        assert_eq!(knn(&x, &l, 1, &[3.0]).unwrap(), 0);
        assert_eq!(knn(&x, &l, 5, &[0.0]).unwrap(), 1);
        assert!(knn(&[], &[], 1, &[0.0]).is_err());
        assert!(knn(&x, &l, 0, &[0.0]).is_err());
    }

    #[test]
    fn tie_goes_to_nearest_then_lowest_class() {
        let x = vec![vec![1.0], vec![-2.0], vec![3.0], vec![-4.0]];
        let l = vec![2, 0, 2, 0];
        // votes 2 vs 2, class 2 owns the nearest neighbour
        assert_eq!(knn(&x, &l, 4, &[0.0]).unwrap(), 2);
        // symmetric tie in distance: lowest class index
        let x = vec![vec![1.0], vec![-1.0]];
        assert_eq!(knn(&x, &[1, 0], 2, &[0.0]).unwrap(), 0);
    }

    #[test]
    fn k1_training_accuracy_is_perfect() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
        let l: Vec<usize> = (0..30).map(|i| i % 4).collect();
        let m = KnnModel::fit(&x, &l, 1).unwrap();
        assert_eq!(m.predict(&x).unwrap(), l);
    }
}
