use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{FlstError, Result};
use crate::nn::{loss_eval, sgd_step, Activation, LossKind, Matrix, Mlp, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub latent_dim: usize,
    /// Corruption std as a fraction of each feature's standard deviation.
    pub noise_level: f64,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl EncoderSpec {
    pub fn new(latent_dim: usize, noise_level: f64, epochs: usize, seed: u64) -> Self {
        EncoderSpec {
            latent_dim,
            noise_level,
            epochs,
            seed,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 32,
        }
    }
}

/// Encoder half of a trained denoising autoencoder, including the fixed feature
/// standardization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    net: Mlp,
    latent_dim: usize,
    noise_level: f64,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    initial_mse: f64,
    final_mse: f64,
}

impl Encoder {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Clean-input reconstruction MSE (standardized units) before and after training.
    pub fn reconstruction_mse(&self) -> (f64, f64) {
        (self.initial_mse, self.final_mse)
    }

    pub fn checksum(&self) -> u64 {
        self.net.checksum()
    }

    fn standardize(&self, features: &Matrix) -> Matrix {
        standardize(features, &self.feature_mean, &self.feature_scale)
    }
}

fn standardize(features: &Matrix, mean: &[f64], scale: &[f64]) -> Matrix {
    let mut out = features.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    out
}

/// Trains a linear denoising autoencoder `d → latent → d` to reconstruct clean
/// standardized inputs from Gaussian-corrupted ones, and keeps the encoder half.
pub fn fit_encoder(data: &Dataset, spec: &EncoderSpec) -> Result<Encoder> {
    let d = data.feature_dim();
    if spec.latent_dim == 0 || spec.latent_dim >= d {
        return Err(FlstError::config(format!(
            "latent_dim {} must be in [1, {})",
            spec.latent_dim, d
        )));
    }
    if !(0.0..1.0).contains(&spec.noise_level) {
        return Err(FlstError::config("noise_level must lie in [0, 1)"));
    }
    if data.is_empty() || spec.batch_size == 0 {
        return Err(FlstError::config(
            "encoder training needs data and a positive batch size",
        ));
    }
    let mean = data.features.column_means();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = data
                .features
                .row_iter()
                .map(|r| (r[j] - mean[j]).powi(2))
                .sum::<f64>()
                / data.len().max(2).saturating_sub(1) as f64;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let clean = standardize(&data.features, &mean, &scale);

    let mut ae = Mlp::new(
        &[d, spec.latent_dim, d],
        &[Activation::Linear, Activation::Linear],
        spec.seed,
    )?;
    let mut opt = OptimizerState::new(spec.learning_rate, spec.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0e4c);
    let noise = Normal::new(0.0, spec.noise_level.max(0.0))
        .map_err(|e| FlstError::config(e.to_string()))?;
    let mse = |net: &Mlp| -> Result<f64> {
        Ok(loss_eval(LossKind::Mse, &net.predict(&clean)?, &clean)?.0)
    };
    let initial_mse = mse(&ae)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            let target = clean.select_rows(chunk);
            let mut input = target.clone();
            if spec.noise_level > 0.0 {
                input
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v += noise.sample(&mut rng));
            }
            let cache = ae.forward(&input)?;
            let (_, grad) = loss_eval(LossKind::Mse, cache.output(), &target)?;
            let grads = ae.backward(&cache, &grad)?;
            sgd_step(&mut ae, &grads, &mut opt)?;
        }
    }
    let final_mse = mse(&ae)?;
    if !(final_mse < initial_mse) {
        log::warn!(
            "denoising autoencoder did not improve: reconstruction mse {} -> {}",
            initial_mse,
            final_mse
        );
    }
    let encoder = Mlp::from_parts(
        vec![d, spec.latent_dim],
        vec![ae.weights()[0].clone()],
        vec![ae.biases()[0].clone()],
        vec![Activation::Linear],
    )?;
    Ok(Encoder {
        net: encoder,
        latent_dim: spec.latent_dim,
        noise_level: spec.noise_level,
        feature_mean: mean,
        feature_scale: scale,
        initial_mse,
        final_mse,
    })
}

/// Deterministic latent codes for `features`.
pub fn encode_batch(enc: &Encoder, features: &Matrix) -> Result<Matrix> {
    if features.cols() != enc.input_dim() {
        return Err(FlstError::shape(format!(
            "{} features given to an encoder expecting {}",
            features.cols(),
            enc.input_dim()
        )));
    }
    enc.net.predict(&enc.standardize(features))
}
