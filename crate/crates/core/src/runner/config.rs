use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{SchedulerConfig, TeacherConfig};
use crate::curriculum::Metric;
use crate::datasets::{PartitionPlan, PartitionScheme};
use crate::error::{FlstError, Result};
use crate::federation::{RankSpace, Selection};
use crate::nn::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Flst,
    Fedavg,
    Smbt,
    Curric,
    FlstDataPoison,
    FlstModelPoison,
    FedavgDataPoison,
    FedavgModelPoison,
    TeacherSelect,
}

impl Scenario {
    pub fn uses_teachers(self) -> bool {
        matches!(
            self,
            Scenario::Flst
                | Scenario::FlstDataPoison
                | Scenario::FlstModelPoison
                | Scenario::TeacherSelect
        )
    }

    pub fn is_fedavg(self) -> bool {
        matches!(
            self,
            Scenario::Fedavg | Scenario::FedavgDataPoison | Scenario::FedavgModelPoison
        )
    }

    pub fn data_poisoned(self) -> bool {
        matches!(self, Scenario::FlstDataPoison | Scenario::FedavgDataPoison)
    }

    pub fn model_poisoned(self) -> bool {
        matches!(self, Scenario::FlstModelPoison | Scenario::FedavgModelPoison)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instances: Option<usize>,
    },
    SyntheticTabular {
        #[serde(default = "d_classes")]
        class_count: usize,
        #[serde(default = "d_features")]
        feature_dim: usize,
        instances: usize,
        #[serde(default = "d_shift")]
        node_shift: f64,
        #[serde(default = "d_separation")]
        separation: f64,
    },
}

fn d_classes() -> usize {
    7
}
fn d_features() -> usize {
    12
}
fn d_shift() -> f64 {
    0.5
}
fn d_separation() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub node_count: usize,
    pub scheme: PartitionScheme,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            node_count: 4,
            scheme: PartitionScheme::RandomUniform,
            train_fraction: 0.6,
            validation_fraction: 0.2,
            test_fraction: 0.2,
        }
    }
}

impl PartitionConfig {
    pub fn plan(&self, seed: u64) -> PartitionPlan {
        PartitionPlan {
            node_count: self.node_count,
            scheme: self.scheme,
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
            test_fraction: self.test_fraction,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            hidden: vec![50, 50],
            activation: Activation::Relu,
            learning_rate: 0.1,
            momentum: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Defaults to cosine for images and Mahalanobis for tabular data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    pub batch_count: usize,
    pub window_max: usize,
    pub rank_space: RankSpace,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            metric: None,
            batch_count: 10,
            window_max: 1,
            rank_space: RankSpace::Raw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub latent_dim: usize,
    #[serde(default = "d_noise")]
    pub noise_level: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_enc_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_enc_batch")]
    pub batch_size: usize,
}

fn d_noise() -> f64 {
    0.1
}
fn d_epochs() -> usize {
    20
}
fn d_enc_lr() -> f64 {
    0.02
}
fn d_momentum() -> f64 {
    0.9
}
fn d_enc_batch() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainingConfig {
    /// Teacher warm-up steps against a fresh student; 0 means joint training only.
    pub iterations: usize,
    /// Freeze teachers after warm-up.
    pub freeze: bool,
}

impl Default for PretrainingConfig {
    fn default() -> Self {
        PretrainingConfig {
            iterations: 0,
            freeze: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub selection: Selection,
    /// FedAvg replacement rate η.
    pub eta: f64,
    pub local_epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            selection: Selection::OneHot,
            eta: 1.0,
            local_epochs: 1,
            batch_size: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// SMBT minibatch size; defaults to one curriculum batch of the pooled data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonConfig {
    pub nodes: Vec<usize>,
    #[serde(default)]
    pub poison_validation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSelectConfig {
    pub target_task: usize,
    pub pretrain_iterations: usize,
}

impl Default for TeacherSelectConfig {
    fn default() -> Self {
        TeacherSelectConfig {
            target_task: 0,
            pretrain_iterations: 300,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub federation: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poison: Option<u64>,
}

/// Fully resolved per-subsystem seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub partition: u64,
    pub encoder: u64,
    pub student: u64,
    pub teacher: u64,
    pub scheduler: u64,
    pub federation: u64,
    pub poison: u64,
}

/// Written into manifests after a run; ignored when a manifest is re-run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub iterations: usize,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default = "d_final_window")]
    pub final_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: SeedsConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub student: StudentConfig,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub pretraining: PretrainingConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison: Option<PoisonConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_select: Option<TeacherSelectConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_record: Option<RunRecord>,
}

fn d_eval_every() -> usize {
    100
}
fn d_final_window() -> usize {
    100
}

/// SplitMix64 finalizer over the master seed and a subsystem tag.
fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut z = master ^ tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    });
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ExperimentConfig {
    /// Parses TOML text, rejecting unknown keys (with a closest-match hint), then
    /// resolves defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let msg = e.to_string();
            FlstError::Config(match suggest_key(&msg) {
                Some(hint) => format!("{}\n{}", msg.trim_end(), hint),
                None => msg,
            })
        })?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FlstError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            FlstError::Config(msg) => FlstError::Config(format!("{}: {}", path.display(), msg)),
            other => other,
        })
    }

    /// Fills every derivable default so the serialized form is self-contained.
    pub fn resolve(&mut self) {
        let m = self.seed;
        let s = &mut self.seeds;
        for (slot, tag) in [
            (&mut s.data, "data"),
            (&mut s.partition, "partition"),
            (&mut s.encoder, "encoder"),
            (&mut s.student, "student"),
            (&mut s.teacher, "teacher"),
            (&mut s.scheduler, "scheduler"),
            (&mut s.federation, "federation"),
            (&mut s.poison, "poison"),
        ] {
            slot.get_or_insert_with(|| derive_seed(m, tag));
        }
        if self.curriculum.metric.is_none() {
            self.curriculum.metric = Some(match self.dataset {
                DatasetConfig::Mnist { .. } => Metric::Cosine,
                DatasetConfig::SyntheticTabular { .. } => Metric::Mahalanobis,
            });
        }
        if self.scheduler.output_size.is_none() {
            self.scheduler.output_size = Some(self.partition.node_count);
        }
        if self.scenario == Scenario::TeacherSelect && self.teacher_select.is_none() {
            self.teacher_select = Some(TeacherSelectConfig::default());
        }
    }

    pub fn seeds(&self) -> Seeds {
        let s = &self.seeds;
        let m = self.seed;
        let get = |v: Option<u64>, tag: &str| v.unwrap_or_else(|| derive_seed(m, tag));
        Seeds {
            data: get(s.data, "data"),
            partition: get(s.partition, "partition"),
            encoder: get(s.encoder, "encoder"),
            student: get(s.student, "student"),
            teacher: get(s.teacher, "teacher"),
            scheduler: get(s.scheduler, "scheduler"),
            federation: get(s.federation, "federation"),
            poison: get(s.poison, "poison"),
        }
    }

    pub fn metric(&self) -> Metric {
        self.curriculum.metric.unwrap_or(Metric::Mahalanobis)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.partition.node_count;
        self.partition.plan(0).validate()?;
        self.teacher.validate()?;
        self.scheduler.validate()?;
        if let Some(out) = self.scheduler.output_size {
            if out != n {
                return Err(FlstError::config(format!(
                    "scheduler.output_size {out} does not match partition.node_count {n}"
                )));
            }
        }
        if self.eval_every == 0 {
            return Err(FlstError::config("eval_every must be at least 1"));
        }
        if self.curriculum.batch_count == 0 {
            return Err(FlstError::config("curriculum.batch_count must be at least 1"));
        }
        if self.student.hidden.is_empty() || self.student.hidden.contains(&0) {
            return Err(FlstError::config(
                "student.hidden must list at least one positive layer width",
            ));
        }
        if self.student.activation == Activation::Softmax {
            return Err(FlstError::config("student.activation cannot be softmax"));
        }
        crate::nn::OptimizerState::new(self.student.learning_rate, self.student.momentum)?;
        if let Some(enc) = &self.encoder {
            if enc.latent_dim == 0 || !(0.0..1.0).contains(&enc.noise_level) {
                return Err(FlstError::config(
                    "encoder.latent_dim must be positive and encoder.noise_level in [0, 1)",
                ));
            }
        }
        if let Selection::TopK { k } = self.federation.selection {
            if k == 0 || k > n {
                return Err(FlstError::config(format!(
                    "federation.selection k = {k} must lie in 1..={n}"
                )));
            }
        }
        if !(self.federation.eta > 0.0) || !self.federation.eta.is_finite() {
            return Err(FlstError::config("federation.eta must be positive"));
        }
        if self.scenario.data_poisoned() || self.scenario.model_poisoned() {
            let p = self.poison.as_ref().ok_or_else(|| {
                FlstError::config(format!(
                    "scenario {:?} requires a [poison] table listing the attacked nodes",
                    self.scenario
                ))
            })?;
            if let Some(&bad) = p.nodes.iter().find(|&&i| i >= n) {
                return Err(FlstError::config(format!(
                    "poison.nodes contains {bad}, but there are only {n} nodes"
                )));
            }
        }
        if self.scenario == Scenario::TeacherSelect {
            if !matches!(self.dataset, DatasetConfig::SyntheticTabular { .. }) {
                return Err(FlstError::config(
                    "teacher_select builds its tasks from dataset.source = \"synthetic_tabular\"",
                ));
            }
            let ts = self.teacher_select.clone().unwrap_or_default();
            if ts.target_task >= n {
                return Err(FlstError::config(format!(
                    "teacher_select.target_task {} must be below partition.node_count {n}",
                    ts.target_task
                )));
            }
        }
        Ok(())
    }

    /// The resolved configuration as TOML, suitable for re-running.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FlstError::config(format!("cannot serialize config: {e}")))
    }
}

/// For serde's "unknown field `x`, expected one of `a`, `b`" messages, names the
/// closest valid key.
fn suggest_key(msg: &str) -> Option<String> {
    let rest = msg.split("unknown field `").nth(1)?;
    let unknown = rest.split('`').next()?;
    let expected = rest.split("expected").nth(1)?;
    let candidates: Vec<&str> = expected
        .split('`')
        .enumerate()
        .filter(|(i, _)| i % 2 == 1)
        .map(|(_, s)| s)
        .collect();
    let (best, score) = candidates
        .iter()
        .map(|c| (*c, strsim::normalized_damerau_levenshtein(unknown, c)))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    (score >= 0.5).then(|| format!("help: did you mean `{best}`?"))
}
