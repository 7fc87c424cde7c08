use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Evaluation};
use crate::agents::Teacher;
use crate::curriculum::{
    build_curriculum, encode_batch, fit_ranking, Curriculum, Encoder, Metric, RankingModel,
};
use crate::datasets::Dataset;
use crate::error::{FlstError, Result};
use crate::nn::{Matrix, Mlp, OptimizerState};

/// Which feature space the difficulty ranking is fitted in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSpace {
    #[default]
    Raw,
    Latent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSpec {
    pub metric: Metric,
    pub batch_count: usize,
    pub window_max: usize,
    #[serde(default)]
    pub rank_space: RankSpace,
}

impl CurriculumSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_count == 0 {
            return Err(FlstError::config(
                "curriculum.batch_count must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Clean,
    DataPoisoned,
    ModelPoisoned,
}

/// One federated participant.
#[derive(Clone, Debug)]
pub struct Node {
    id: usize,
    train: Dataset,
    train_inputs: Matrix,
    train_targets: Matrix,
    validation: Dataset,
    validation_inputs: Matrix,
    curriculum: Curriculum,
    ranking: RankingModel,
    spec: CurriculumSpec,
    encoder: Option<Arc<Encoder>>,
    teacher: Option<Teacher>,
    local_opt: OptimizerState,
    status: NodeStatus,
    worst_loss: Option<f64>,
}

fn student_inputs(encoder: Option<&Encoder>, features: &Matrix) -> Result<Matrix> {
    match encoder {
        Some(enc) => encode_batch(enc, features),
        None => Ok(features.clone()),
    }
}

impl Node {
    pub fn new(
        id: usize,
        train: Dataset,
        validation: Dataset,
        spec: CurriculumSpec,
        encoder: Option<Arc<Encoder>>,
        teacher: Option<Teacher>,
        local_opt: OptimizerState,
    ) -> Result<Self> {
        spec.validate()?;
        train.validate()?;
        validation.validate()?;
        if train.is_empty() || validation.is_empty() {
            return Err(FlstError::config(format!(
                "node {id} needs non-empty train and validation shards"
            )));
        }
        let validation_inputs = student_inputs(encoder.as_deref(), &validation.features)?;
        let mut node = Node {
            id,
            train_inputs: Matrix::zeros(0, 0),
            train_targets: Matrix::zeros(0, 0),
            curriculum: Curriculum::from_difficulties(vec![0.0], 1)?,
            ranking: RankingModel::cosine(vec![1.0]),
            train,
            validation,
            validation_inputs,
            spec,
            encoder,
            teacher,
            local_opt,
            status: NodeStatus::Clean,
            worst_loss: None,
        };
        node.refit()?;
        Ok(node)
    }

    /// Recomputes student inputs, ranking and curriculum from the current train shard.
    fn refit(&mut self) -> Result<()> {
        self.train_inputs = student_inputs(self.encoder.as_deref(), &self.train.features)?;
        self.train_targets = self.train.targets();
        let rank_data = match self.spec.rank_space {
            RankSpace::Raw => self.train.clone(),
            RankSpace::Latent => Dataset {
                features: self.train_inputs.clone(),
                ..self.train.clone()
            },
        };
        self.ranking = fit_ranking(&rank_data, self.spec.metric)?;
        self.curriculum = build_curriculum(&rank_data, &self.ranking, self.spec.batch_count)?;
        Ok(())
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn train_inputs(&self) -> &Matrix {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &Matrix {
        &self.train_targets
    }

    pub fn validation(&self) -> &Dataset {
        &self.validation
    }

    pub fn validation_inputs(&self) -> &Matrix {
        &self.validation_inputs
    }

    pub fn curriculum(&self) -> &Curriculum {
        &self.curriculum
    }

    pub fn ranking(&self) -> &RankingModel {
        &self.ranking
    }

    pub fn curriculum_spec(&self) -> &CurriculumSpec {
        &self.spec
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.encoder.as_deref()
    }

    pub fn teacher(&self) -> Option<&Teacher> {
        self.teacher.as_ref()
    }

    pub fn teacher_mut(&mut self) -> Option<&mut Teacher> {
        self.teacher.as_mut()
    }

    /// Swaps in a different validation shard (e.g. one drawn from another task).
    pub fn set_validation(&mut self, validation: Dataset) -> Result<()> {
        validation.validate()?;
        if validation.is_empty() {
            return Err(FlstError::config(format!("node {} validation shard is empty", self.id)));
        }
        self.validation_inputs = student_inputs(self.encoder.as_deref(), &validation.features)?;
        self.validation = validation;
        self.worst_loss = None;
        Ok(())
    }

    pub fn set_teacher(&mut self, teacher: Option<Teacher>) {
        self.teacher = teacher;
    }

    pub fn local_opt_mut(&mut self) -> &mut OptimizerState {
        &mut self.local_opt
    }

    pub fn status(&self) -> NodeStatus {
        self.status
    }

    pub fn worst_loss(&self) -> Option<f64> {
        self.worst_loss
    }

    pub(crate) fn record_loss(&mut self, loss: f64) {
        if loss.is_finite() {
            self.worst_loss = Some(self.worst_loss.map_or(loss, |w| w.max(loss)));
        }
    }

    /// Accuracy and mean loss of `student` on this node's validation shard.
    pub fn validate_student(&self, student: &Mlp) -> Result<Evaluation> {
        evaluate(student, &self.validation_inputs, &self.validation.labels)
    }

    /// Replaces every training feature with a uniform draw over that feature's observed
    /// range and every label with a uniform class, then refits the curriculum.
    pub fn poison_data(&mut self, seed: u64, poison_validation: bool) -> Result<()> {
        if self.status == NodeStatus::DataPoisoned {
            log::warn!(
                "node {} is already data-poisoned; leaving it unchanged",
                self.id
            );
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        randomize(&mut self.train, &mut rng);
        if poison_validation {
            randomize(&mut self.validation, &mut rng);
            self.validation_inputs =
                student_inputs(self.encoder.as_deref(), &self.validation.features)?;
        }
        self.refit()?;
        self.status = NodeStatus::DataPoisoned;
        Ok(())
    }

    /// Overwrites one (seeded) weight matrix of the teacher actor with `U(-1, 1)` values.
    pub fn poison_model(&mut self, seed: u64) -> Result<usize> {
        let teacher = self.teacher.as_mut().ok_or_else(|| {
            FlstError::config(format!("node {} has no teacher to corrupt", self.id))
        })?;
        let k = corrupt_one_matrix(teacher.actor_mut(), seed);
        self.status = NodeStatus::ModelPoisoned;
        Ok(k)
    }

    /// Marks the node as model-poisoned without touching a teacher (used by FedAvg,
    /// where the corruption hits the node's local student each round).
    pub fn mark_model_poisoned(&mut self) {
        self.status = NodeStatus::ModelPoisoned;
    }
}

fn randomize(data: &mut Dataset, rng: &mut ChaCha8Rng) {
    let (n, d) = data.features.shape();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in data.features.row_iter() {
        for (j, &v) in row.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    for r in 0..n {
        for (j, v) in data.features.row_mut(r).iter_mut().enumerate() {
            *v = if hi[j] > lo[j] {
                rng.random_range(lo[j]..=hi[j])
            } else {
                lo[j]
            };
        }
    }
    for l in &mut data.labels {
        *l = rng.random_range(0..data.class_count);
    }
}

/// Picks one weight matrix by seed and fills it with `U(-1, 1)`; returns its index.
pub fn corrupt_one_matrix(net: &mut Mlp, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(0..net.weights().len());
    for v in net.weights_mut()[k].as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::TeacherConfig;
    use crate::datasets::{gen_synthetic_tabular, SyntheticSpec};

    fn shard(seed: u64) -> (Dataset, Dataset) {
        let corpus = gen_synthetic_tabular(&SyntheticSpec {
            class_count: 3,
            feature_dim: 4,
            instances: 120,
            node_shift: 0.0,
            node_count: 1,
            separation: 2.0,
            seed,
        })
        .unwrap();
        let all = corpus.as_dataset();
        let idx: Vec<usize> = (0..all.len()).collect();
        (all.subset(&idx[..90]), all.subset(&idx[90..]))
    }

    fn node(teacher: bool) -> Node {
        let (train, val) = shard(1);
        let spec = CurriculumSpec {
            metric: Metric::Mahalanobis,
            batch_count: 5,
            window_max: 1,
            rank_space: RankSpace::Raw,
        };
        let t = teacher.then(|| {
            Teacher::new(
                10,
                TeacherConfig {
                    hidden: 6,
                    ..TeacherConfig::default()
                },
                3,
            )
            .unwrap()
        });
        Node::new(
            0,
            train,
            val,
            spec,
            None,
            t,
            OptimizerState::new(0.1, 0.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn data_poisoning_is_deterministic_and_keeps_ids() {
        let mut a = node(false);
        let mut b = node(false);
        let ids = a.train().ids.clone();
        let shape = a.train().features.shape();
        let val_before = a.validation().features.clone();
        a.poison_data(9, false).unwrap();
        b.poison_data(9, false).unwrap();
        assert_eq!(a.train().features, b.train().features);
        assert_eq!(a.train().labels, b.train().labels);
        assert_eq!(a.train().ids, ids);
        assert_eq!(a.train().features.shape(), shape);
        assert_eq!(a.validation().features, val_before);
        assert_eq!(a.status(), NodeStatus::DataPoisoned);
        let again = a.train().features.clone();
        a.poison_data(10, false).unwrap();
        assert_eq!(a.train().features, again);
    }

    #[test]
    fn model_poisoning_hits_exactly_one_matrix() {
        let mut a = node(true);
        let mut b = node(true);
        let before = a.teacher().unwrap().actor().clone();
        let k = a.poison_model(4).unwrap();
        b.poison_model(4).unwrap();
        let after = a.teacher().unwrap().actor();
        assert_eq!(after.checksum(), b.teacher().unwrap().actor().checksum());
        let changed: Vec<usize> = (0..before.weights().len())
            .filter(|&i| before.weights()[i] != after.weights()[i])
            .collect();
        assert_eq!(changed, vec![k]);
        assert_eq!(before.biases(), after.biases());
        let state = crate::agents::StudentState::new(vec![3.0; 10]);
        let act = a.teacher_mut().unwrap().act(&state, false).unwrap();
        assert!(act.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn model_poisoning_needs_a_teacher() {
        assert!(node(false).poison_model(1).is_err());
    }
}
