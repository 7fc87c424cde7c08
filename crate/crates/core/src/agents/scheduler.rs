use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::StudentState;
use crate::error::{FlstError, Result};
use crate::nn::{sgd_step, Activation, GradientAt, Matrix, Mlp, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub hidden: usize,
    pub epsilon: f64,
    pub entropy_weight: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub baseline_decay: f64,
    /// Optional explicit output width; must equal the node count when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_size: Option<usize>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            hidden: 100,
            epsilon: 1e-5,
            entropy_weight: 0.01,
            learning_rate: 0.001,
            momentum: 0.9,
            baseline_decay: 0.9,
            output_size: None,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(FlstError::config("scheduler.hidden must be positive"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(FlstError::config(format!(
                "scheduler.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.entropy_weight >= 0.0) || !self.entropy_weight.is_finite() {
            return Err(FlstError::config(
                "scheduler.entropy_weight must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(FlstError::config(
                "scheduler.baseline_decay must lie in [0, 1)",
            ));
        }
        OptimizerState::new(self.learning_rate, self.momentum).map(|_| ())
    }
}

/// `H(p) = −Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Inverse-entropy penalty `1 / (H(p) + ε)`.
pub fn entropy_penalty(p: &[f64], epsilon: f64) -> f64 {
    1.0 / (entropy(p) + epsilon)
}

/// Gradient of `entropy_penalty` w.r.t. the softmax logits that produced `p`.
pub fn entropy_penalty_logit_grad(p: &[f64], epsilon: f64) -> Vec<f64> {
    let h = entropy(p);
    let scale = 1.0 / ((h + epsilon) * (h + epsilon));
    let logs: Vec<f64> = p
        .iter()
        .map(|&x| if x > 0.0 { x.ln() } else { 0.0 })
        .collect();
    p.iter()
        .zip(&logs)
        .map(|(&pj, &lj)| {
            if pj == 0.0 {
                return 0.0;
            }
            // ln p_j + H, written so a uniform p yields exact zeros.
            let centered: f64 = p
                .iter()
                .zip(&logs)
                .filter(|(&pk, _)| pk > 0.0)
                .map(|(&pk, &lk)| pk * (lj - lk))
                .sum();
            pj * centered * scale
        })
        .collect()
}

/// `advantage · Σ_sel ∂ln p_sel/∂z`.
pub fn score_logit_grad(p: &[f64], selected: &[usize], advantage: f64) -> Vec<f64> {
    let mut g = vec![0.0; p.len()];
    if advantage == 0.0 {
        return g;
    }
    for &sel in selected {
        for (j, gj) in g.iter_mut().enumerate() {
            let e = if j == sel { 1.0 } else { 0.0 };
            *gj += advantage * (e - p[j]);
        }
    }
    g
}

/// Draws `k` distinct nodes; one draw at a time from the renormalized remainder.
pub fn sample_nodes<R: Rng + ?Sized>(p: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let k = k.min(p.len());
    let mut weights = p.to_vec();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        let i = pick.unwrap_or_else(|| (0..p.len()).find(|i| !chosen.contains(i)).unwrap());
        weights[i] = 0.0;
        chosen.push(i);
    }
    chosen
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchedulerStep {
    pub applied: bool,
    pub advantage: f64,
    pub entropy_penalty: f64,
}

/// Coordinator-level policy over nodes trained by a score-function meta-gradient.
#[derive(Clone, Debug)]
pub struct Scheduler {
    config: SchedulerConfig,
    net: Mlp,
    opt: OptimizerState,
    baseline: Option<f64>,
}

impl Scheduler {
    pub fn new(
        state_dim: usize,
        node_count: usize,
        config: SchedulerConfig,
        seed: u64,
    ) -> Result<Self> {
        if let Some(out) = config.output_size {
            if out != node_count {
                return Err(FlstError::config(format!(
                    "scheduler.output_size {out} does not match node count {node_count}"
                )));
            }
        }
        let h = config.hidden;
        let net = Mlp::new(
            &[state_dim, h, h, node_count],
            &[Activation::Relu, Activation::Relu, Activation::Softmax],
            seed,
        )?;
        Self::from_net(net, config)
    }

    pub fn from_net(net: Mlp, config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        if *net.activations().last().unwrap() != Activation::Softmax {
            return Err(FlstError::config("scheduler network must end in softmax"));
        }
        Ok(Scheduler {
            opt: OptimizerState::new(config.learning_rate, config.momentum)?,
            net,
            config,
            baseline: None,
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn node_count(&self) -> usize {
        self.net.output_dim()
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn set_baseline(&mut self, baseline: Option<f64>) {
        self.baseline = baseline;
    }

    pub fn checkpoint_metadata(&self) -> Vec<(String, String)> {
        vec![
            ("epsilon".into(), self.config.epsilon.to_string()),
            (
                "entropy_weight".into(),
                self.config.entropy_weight.to_string(),
            ),
            (
                "baseline".into(),
                self.baseline
                    .map_or_else(|| "none".into(), |b| b.to_string()),
            ),
        ]
    }

    fn input(&self, s: &StudentState) -> Result<Matrix> {
        if s.len() != self.net.input_dim() {
            return Err(FlstError::shape(format!(
                "state of length {} given to a scheduler expecting {}",
                s.len(),
                self.net.input_dim()
            )));
        }
        Matrix::from_vec(1, s.len(), s.as_slice().to_vec())
    }

    pub fn probs(&self, s: &StudentState) -> Result<Vec<f64>> {
        Ok(self.net.predict(&self.input(s)?)?.into_vec())
    }

    /// Descends `(L − b)·Σ_sel ln p + w·ℓ_ent` through the momentum trace, then
    /// moves the baseline toward `L`. A non-finite `L` skips everything.
    pub fn update(
        &mut self,
        s: &StudentState,
        selected: &[usize],
        meta_loss: f64,
    ) -> Result<SchedulerStep> {
        let x = self.input(s)?;
        let n = self.node_count();
        if selected.is_empty() || selected.iter().any(|&i| i >= n) {
            return Err(FlstError::config(format!(
                "selected nodes {:?} out of range for {} nodes",
                selected, n
            )));
        }
        let cache = self.net.forward(&x)?;
        let p = cache.output().row(0).to_vec();
        let penalty = entropy_penalty(&p, self.config.epsilon);
        if !meta_loss.is_finite() {
            return Ok(SchedulerStep {
                applied: false,
                advantage: f64::NAN,
                entropy_penalty: penalty,
            });
        }
        let baseline = *self.baseline.get_or_insert(meta_loss);
        let advantage = meta_loss - baseline;
        let mut gz: Vec<f64> = entropy_penalty_logit_grad(&p, self.config.epsilon)
            .into_iter()
            .map(|g| self.config.entropy_weight * g)
            .collect();
        for (g, s) in gz.iter_mut().zip(score_logit_grad(&p, selected, advantage)) {
            *g += s;
        }
        let grad = Matrix::from_vec(1, n, gz)?;
        let (grads, _) = self
            .net
            .backward_full(&cache, &grad, GradientAt::Logits, false)?;
        sgd_step(&mut self.net, &grads, &mut self.opt)?;
        let d = self.config.baseline_decay;
        self.baseline = Some(d * baseline + (1.0 - d) * meta_loss);
        Ok(SchedulerStep {
            applied: true,
            advantage,
            entropy_penalty: penalty,
        })
    }
}
