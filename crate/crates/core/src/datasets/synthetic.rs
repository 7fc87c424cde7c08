//! Gaussian-cluster tabular generator with optional per-node covariate shift.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CorpusSource, RawCorpus};
use crate::error::{FlstError, Result};
use crate::nn::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub feature_dim: usize,
    pub instances: usize,
    /// Magnitude of the mean offset applied to each node's portion.
    pub node_shift: f64,
    pub node_count: usize,
    /// Standard deviation of the class-mean coordinates; larger is easier.
    pub separation: f64,
    pub seed: u64,
}

/// Draws `instances` rows from per-class Gaussian clusters with seeded means and
/// covariances. Classes are balanced (`instances / class_count` each, remainder to
/// the lowest classes) and each node's portion is shifted by a seeded vector of
/// norm `node_shift`.
pub fn gen_synthetic_tabular(spec: &SyntheticSpec) -> Result<RawCorpus> {
    let &SyntheticSpec {
        class_count,
        feature_dim,
        instances,
        node_shift,
        node_count,
        separation,
        seed,
    } = spec;
    if class_count < 2 || feature_dim == 0 || node_count == 0 {
        return Err(FlstError::config(
            "synthetic corpus needs class_count >= 2, feature_dim >= 1, node_count >= 1",
        ));
    }
    if instances < class_count * 10 {
        return Err(FlstError::config(format!(
            "{} instances is too few for {} classes (need at least {})",
            instances,
            class_count,
            class_count * 10
        )));
    }
    if !(node_shift >= 0.0) || !(separation > 0.0) {
        return Err(FlstError::config(
            "node_shift must be >= 0 and separation > 0",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let means: Vec<Vec<f64>> = (0..class_count)
        .map(|_| (0..feature_dim).map(|_| separation * normal()).collect())
        .collect();
    // x = mean + A z, with A lower-triangular so each class has its own covariance.
    let scale = 1.0 / (feature_dim as f64).sqrt();
    let factors: Vec<Vec<f64>> = (0..class_count)
        .map(|_| {
            let mut a = vec![0.0; feature_dim * feature_dim];
            for i in 0..feature_dim {
                for j in 0..i {
                    a[i * feature_dim + j] = 0.5 * scale * normal();
                }
                a[i * feature_dim + i] = 0.6 + 0.4 * normal().abs().min(2.0);
            }
            a
        })
        .collect();
    let shifts: Vec<Vec<f64>> = (0..node_count)
        .map(|_| {
            let v: Vec<f64> = (0..feature_dim).map(|_| normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| node_shift * x / norm).collect()
        })
        .collect();

    let mut data = Vec::with_capacity(instances * feature_dim);
    let mut labels = Vec::with_capacity(instances);
    let mut origin = Vec::with_capacity(instances);
    let mut z = vec![0.0; feature_dim];
    for i in 0..instances {
        let class = i % class_count;
        let node = (i / class_count) % node_count;
        z.iter_mut().for_each(|v| *v = normal());
        let a = &factors[class];
        for r in 0..feature_dim {
            let mut x = means[class][r] + shifts[node][r];
            for c in 0..=r {
                x += a[r * feature_dim + c] * z[c];
            }
            data.push(x);
        }
        labels.push(class);
        origin.push(node);
    }
    Ok(RawCorpus {
        features: Matrix::from_vec(instances, feature_dim, data)?,
        labels,
        class_count,
        source: CorpusSource::SyntheticTabular,
        origin: Some(origin),
    })
}
