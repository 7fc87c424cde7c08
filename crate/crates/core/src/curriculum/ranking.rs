use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{FlstError, Result};
use crate::nn::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mahalanobis,
    Cosine,
}

/// Fitted difficulty metric for one node's data.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingModel {
    metric: Metric,
    mean: Vec<f64>,
    covariance: Option<Matrix>,
    /// Lower Cholesky factor of `S + λI`.
    cholesky: Option<Matrix>,
    regularization: f64,
}

impl RankingModel {
    /// Mahalanobis model from an explicit mean and covariance (`λ` is added to the diagonal).
    pub fn mahalanobis(mean: Vec<f64>, covariance: Matrix, regularization: f64) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(FlstError::shape(format!(
                "covariance {:?} for a {}-dimensional mean",
                covariance.shape(),
                d
            )));
        }
        let mut reg = covariance.clone();
        for i in 0..d {
            reg.set(i, i, reg.get(i, i) + regularization);
        }
        let cholesky = cholesky(&reg).ok_or_else(|| {
            FlstError::Estimation("covariance is not positive definite after regularization".into())
        })?;
        Ok(RankingModel {
            metric: Metric::Mahalanobis,
            mean,
            covariance: Some(covariance),
            cholesky: Some(cholesky),
            regularization,
        })
    }

    pub fn cosine(reference: Vec<f64>) -> Self {
        RankingModel {
            metric: Metric::Cosine,
            mean: reference,
            covariance: None,
            cholesky: None,
            regularization: 0.0,
        }
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> Option<&Matrix> {
        self.covariance.as_ref()
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// Mahalanobis distance (≥ 0) or cosine similarity (in `[-1, 1]`).
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(FlstError::shape(format!(
                "vector of length {} scored against a {}-dimensional model",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(match self.metric {
            Metric::Mahalanobis => {
                let l = self
                    .cholesky
                    .as_ref()
                    .expect("mahalanobis model has a factor");
                let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
                forward_substitute(l, &diff)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            }
            Metric::Cosine => cosine_similarity(x, &self.mean),
        })
    }

    /// Difficulty used for ordering: the distance itself, or `1 - cos` for cosine.
    pub fn difficulty(&self, x: &[f64]) -> Result<f64> {
        let s = self.score(x)?;
        Ok(match self.metric {
            Metric::Mahalanobis => s,
            Metric::Cosine => 1.0 - s,
        })
    }

    pub fn difficulties(&self, features: &Matrix) -> Result<Vec<f64>> {
        features.row_iter().map(|r| self.difficulty(r)).collect()
    }
}

/// `μ` = sample mean; Mahalanobis adds `S` = sample covariance regularized by
/// `λ = 1e-6 · trace(S) / d`.
pub fn fit_ranking(data: &Dataset, metric: Metric) -> Result<RankingModel> {
    let n = data.len();
    let d = data.feature_dim();
    if n == 0 {
        return Err(FlstError::Estimation(
            "cannot fit a ranking to no data".into(),
        ));
    }
    let mean = data.features.column_means();
    match metric {
        Metric::Cosine => Ok(RankingModel::cosine(mean)),
        Metric::Mahalanobis => {
            if n < d + 1 {
                return Err(FlstError::Estimation(format!(
                    "{} instances cannot estimate a {}-dimensional covariance (need {})",
                    n,
                    d,
                    d + 1
                )));
            }
            let mut centered = data.features.clone();
            for r in 0..n {
                for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
                    *v -= m;
                }
            }
            let mut cov = centered.transpose_matmul(&centered)?;
            cov.scale(1.0 / (n as f64 - 1.0));
            let trace: f64 = (0..d).map(|i| cov.get(i, i)).sum();
            let lambda = 1e-6 * trace / d as f64;
            RankingModel::mahalanobis(mean, cov, lambda).map_err(|e| match e {
                FlstError::Estimation(msg) => {
                    FlstError::Estimation(format!("{} (trace {}, λ {})", msg, trace, lambda))
                }
                other => other,
            })
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Solves `L y = b` for lower-triangular `L`.
fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
        let n = rows.len();
        Dataset::new(
            Matrix::from_rows(&rows).unwrap(),
            vec![0; n],
            (0..n as u64).collect(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn identical_points_cannot_be_ranked() {
        let d = dataset(vec![vec![2.0], vec![2.0]]);
        assert!(matches!(
            fit_ranking(&d, Metric::Mahalanobis),
            Err(FlstError::Estimation(_))
        ));
    }

    #[test]
    fn too_few_rows() {
        let d = dataset(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            fit_ranking(&d, Metric::Mahalanobis),
            Err(FlstError::Estimation(_))
        ));
    }

    #[test]
    fn sample_mean_of_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let m = fit_ranking(&dataset(rows), Metric::Mahalanobis).unwrap();
        assert!(m.mean().iter().all(|v| v.abs() < 0.1));
    }

    #[test]
    fn cosine_model_stores_mean_only() {
        let d = dataset(vec![vec![1.0, 0.0], vec![0.0, 3.0]]);
        let m = fit_ranking(&d, Metric::Cosine).unwrap();
        assert_eq!(m.mean(), &[0.5, 1.5]);
        assert!(m.covariance().is_none());
    }

    #[test]
    fn mean_scores_zero_and_identity_gives_euclid() {
        let m = RankingModel::mahalanobis(vec![1.0, -2.0, 0.5], Matrix::identity(3), 0.0).unwrap();
        assert_eq!(m.score(&[1.0, -2.0, 0.5]).unwrap(), 0.0);
        let x = [4.0, 2.0, 0.5];
        let euclid = (9.0f64 + 16.0).sqrt();
        assert!((m.score(&x).unwrap() - euclid).abs() < 1e-12);
        assert!(matches!(m.score(&[1.0]), Err(FlstError::Shape(_))));
    }

    #[test]
    fn cosine_definition() {
        let m = RankingModel::cosine(vec![1.0, 1.0]);
        assert!((m.score(&[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(m.score(&[1.0, -1.0]).unwrap(), 0.0);
    }
}
