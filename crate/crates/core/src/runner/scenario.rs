use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DatasetConfig, ExperimentConfig, RunRecord, Scenario, Seeds};
use super::summary::{render_report, summarize_rows, RunSummary};
use crate::agents::{Scheduler, Teacher};
use crate::curriculum::{build_curriculum, encode_batch, fit_encoder, fit_ranking, Encoder, EncoderSpec};
use crate::datasets::{
    gen_synthetic_tabular, load_mnist_dir, partition_and_split, Dataset, FederatedSplit, PartitionPlan,
    PartitionScheme, RawCorpus, SyntheticSpec,
};
use crate::error::{FlstError, Result};
use crate::federation::{
    check_disjoint, evaluate, pretrain_teacher, CurriculumSpec, Evaluation, FederationState, MetricsRow,
    MetricsWriter, Node, RankSpace,
};
use crate::nn::{checkpoint, loss_eval, sgd_step, Activation, LossKind, Matrix, Mlp, OptimizerState};

/// Shards, held-out test set and the optional shared encoder.
pub struct Prepared {
    pub split: FederatedSplit,
    /// Per-node validation shards from each node's own data (teacher pretraining only).
    pub pretrain_validation: Option<Vec<Dataset>>,
    pub encoder: Option<Arc<Encoder>>,
    pub class_count: usize,
}

impl Prepared {
    pub fn input_dim(&self) -> usize {
        match &self.encoder {
            Some(e) => e.latent_dim(),
            None => self.split.test.feature_dim(),
        }
    }

    pub fn student_inputs(&self, features: &Matrix) -> Result<Matrix> {
        match &self.encoder {
            Some(e) => encode_batch(e, features),
            None => Ok(features.clone()),
        }
    }
}

fn load_corpus(cfg: &ExperimentConfig, seeds: &Seeds, node_count: usize, seed_offset: u64) -> Result<RawCorpus> {
    match &cfg.dataset {
        DatasetConfig::Mnist { path, instances } => load_mnist_dir(path, *instances, seeds.data),
        DatasetConfig::SyntheticTabular {
            class_count,
            feature_dim,
            instances,
            node_shift,
            separation,
        } => gen_synthetic_tabular(&SyntheticSpec {
            class_count: *class_count,
            feature_dim: *feature_dim,
            instances: *instances,
            node_shift: *node_shift,
            node_count,
            separation: *separation,
            seed: seeds.data.wrapping_add(seed_offset),
        }),
    }
}

fn fit_shared_encoder(cfg: &ExperimentConfig, seeds: &Seeds, pooled: &Dataset) -> Result<Option<Arc<Encoder>>> {
    let Some(ec) = &cfg.encoder else { return Ok(None) };
    let spec = EncoderSpec {
        latent_dim: ec.latent_dim,
        noise_level: ec.noise_level,
        epochs: ec.epochs,
        seed: seeds.encoder,
        learning_rate: ec.learning_rate,
        momentum: ec.momentum,
        batch_size: ec.batch_size,
    };
    let enc = fit_encoder(pooled, &spec)?;
    let (before, after) = enc.reconstruction_mse();
    log::info!("encoder reconstruction MSE {before:.4} -> {after:.4}");
    Ok(Some(Arc::new(enc)))
}

/// Loads and partitions the configured data and fits the shared encoder.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let seeds = cfg.seeds();
    let n = cfg.partition.node_count;
    if cfg.scenario == Scenario::TeacherSelect {
        return prepare_tasks(cfg, &seeds);
    }
    let corpus = load_corpus(cfg, &seeds, n, 0)?;
    let split = partition_and_split(&corpus, &cfg.partition.plan(seeds.partition))?;
    let encoder = fit_shared_encoder(cfg, &seeds, &split.pooled_train()?)?;
    Ok(Prepared {
        split,
        pretrain_validation: None,
        encoder,
        class_count: corpus.class_count,
    })
}

/// One synthetic task per node; validation and test come from the target task.
fn prepare_tasks(cfg: &ExperimentConfig, seeds: &Seeds) -> Result<Prepared> {
    let n = cfg.partition.node_count;
    let target = cfg.teacher_select.clone().unwrap_or_default().target_task;
    let mut tasks = Vec::with_capacity(n);
    for t in 0..n {
        let corpus = load_corpus(cfg, seeds, 1, 1000 * t as u64)?;
        let mut plan: PartitionPlan = cfg.partition.plan(seeds.partition.wrapping_add(t as u64));
        plan.node_count = 1;
        plan.scheme = PartitionScheme::RandomUniform;
        let mut split = partition_and_split(&corpus, &plan)?;
        let offset = (t as u64) << 40;
        let mut shards = split.nodes.pop().unwrap();
        for d in [&mut shards.train, &mut shards.validation, &mut split.test] {
            d.ids.iter_mut().for_each(|id| *id += offset);
        }
        tasks.push((corpus.class_count, shards, split.test));
    }
    let class_count = tasks[0].0;
    let target_val = tasks[target].1.validation.clone();
    let test = tasks[target].2.clone();
    let parts: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..target_val.len()).filter(|r| r % n == i).collect())
        .collect();
    let mut nodes = Vec::with_capacity(n);
    let mut own_val = Vec::with_capacity(n);
    for (i, (_, shards, _)) in tasks.into_iter().enumerate() {
        own_val.push(shards.validation.clone());
        nodes.push(crate::datasets::NodeShards {
            train: shards.train,
            validation: target_val.subset(&parts[i]),
            test: Dataset::new(Matrix::zeros(0, target_val.feature_dim()), vec![], vec![], class_count)?,
        });
    }
    let split = FederatedSplit { nodes, test };
    let encoder = fit_shared_encoder(cfg, seeds, &split.pooled_train()?)?;
    Ok(Prepared {
        split,
        pretrain_validation: Some(own_val),
        encoder,
        class_count,
    })
}

pub fn student_layout(cfg: &ExperimentConfig, input_dim: usize, classes: usize) -> (Vec<usize>, Vec<Activation>) {
    let mut sizes = vec![input_dim];
    sizes.extend(&cfg.student.hidden);
    sizes.push(classes);
    let mut acts = vec![cfg.student.activation; cfg.student.hidden.len()];
    acts.push(Activation::Softmax);
    (sizes, acts)
}

fn curriculum_spec(cfg: &ExperimentConfig) -> CurriculumSpec {
    CurriculumSpec {
        metric: cfg.metric(),
        batch_count: cfg.curriculum.batch_count,
        window_max: cfg.curriculum.window_max,
        rank_space: cfg.curriculum.rank_space,
    }
}

fn student_opt(cfg: &ExperimentConfig) -> Result<OptimizerState> {
    OptimizerState::new(cfg.student.learning_rate, cfg.student.momentum)
}

/// Builds the node registry, applying pretraining and poisoning as the scenario asks.
pub fn build_nodes(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<Node>> {
    let seeds = cfg.seeds();
    let (sizes, acts) = student_layout(cfg, prep.input_dim(), prep.class_count);
    let state_dim = 2 * cfg.student.hidden.iter().sum::<usize>();
    let mut nodes = Vec::with_capacity(prep.split.nodes.len());
    for (i, shards) in prep.split.nodes.iter().enumerate() {
        let teacher = if cfg.scenario.uses_teachers() {
            Some(Teacher::new(state_dim, cfg.teacher.clone(), seeds.teacher.wrapping_add(i as u64))?)
        } else {
            None
        };
        let own_val = prep
            .pretrain_validation
            .as_ref()
            .map_or_else(|| shards.validation.clone(), |v| v[i].clone());
        let mut node = Node::new(
            i,
            shards.train.clone(),
            own_val,
            curriculum_spec(cfg),
            prep.encoder.clone(),
            teacher,
            student_opt(cfg)?,
        )?;
        let poisoned = |c: &ExperimentConfig| c.poison.as_ref().is_some_and(|p| p.nodes.contains(&i));
        if cfg.scenario.data_poisoned() && poisoned(cfg) {
            let pv = cfg.poison.as_ref().is_some_and(|p| p.poison_validation);
            node.poison_data(seeds.poison.wrapping_add(i as u64), pv)?;
        }
        let pretrain = match cfg.scenario {
            Scenario::TeacherSelect => cfg.teacher_select.clone().unwrap_or_default().pretrain_iterations,
            _ if cfg.scenario.uses_teachers() => cfg.pretraining.iterations,
            _ => 0,
        };
        if pretrain > 0 {
            let fresh = Mlp::new(&sizes, &acts, seeds.student.wrapping_add(1 + i as u64))?;
            pretrain_teacher(&mut node, fresh, student_opt(cfg)?, pretrain)?;
            if cfg.pretraining.freeze {
                if let Some(t) = node.teacher_mut() {
                    t.set_frozen(true);
                }
            }
        }
        if prep.pretrain_validation.is_some() {
            node.set_validation(shards.validation.clone())?;
        }
        if cfg.scenario.model_poisoned() && poisoned(cfg) {
            if node.teacher().is_some() {
                let k = node.poison_model(seeds.poison.wrapping_add(i as u64))?;
                log::info!("node {i}: teacher actor weight matrix {k} randomized");
            } else {
                node.mark_model_poisoned();
            }
        }
        nodes.push(node);
    }
    check_disjoint(&nodes, Some(&prep.split.test))?;
    Ok(nodes)
}

/// Builds the federation for scheduler-driven and FedAvg scenarios.
pub fn build_federation(cfg: &ExperimentConfig, prep: &Prepared) -> Result<FederationState> {
    let seeds = cfg.seeds();
    let nodes = build_nodes(cfg, prep)?;
    let (sizes, acts) = student_layout(cfg, prep.input_dim(), prep.class_count);
    let student = Mlp::new(&sizes, &acts, seeds.student)?;
    let state_dim = 2 * cfg.student.hidden.iter().sum::<usize>();
    let scheduler = Scheduler::new(state_dim, nodes.len(), cfg.scheduler.clone(), seeds.scheduler)?;
    FederationState::new(
        nodes,
        student,
        student_opt(cfg)?,
        scheduler,
        cfg.federation.selection,
        seeds.federation,
    )
}

fn is_eval_step(t: usize, cfg: &ExperimentConfig) -> bool {
    (t + 1) % cfg.eval_every == 0 || t + 1 == cfg.iterations
}

struct Outputs {
    rows: Vec<MetricsRow>,
    initial: Evaluation,
    last: Evaluation,
}

struct Sink<'a> {
    writer: MetricsWriter,
    rows: Vec<MetricsRow>,
    cfg: &'a ExperimentConfig,
}

impl Sink<'_> {
    fn push(&mut self, row: MetricsRow) -> Result<()> {
        self.writer.write(&row)?;
        if is_eval_step(row.iteration as usize, self.cfg) {
            self.writer.flush()?;
            log::info!(
                "iteration {}: test accuracy {}",
                row.iteration,
                row.test_accuracy.map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
            );
        }
        self.rows.push(row);
        Ok(())
    }
}

fn run_federated(cfg: &ExperimentConfig, prep: &Prepared, sink: &mut Sink, ckpt: &Path) -> Result<(Evaluation, Evaluation)> {
    let mut fs = build_federation(cfg, prep)?;
    let test = &prep.split.test;
    let initial = fs.evaluate_global(test)?;
    let mut last = initial;
    let fedavg = cfg.scenario.is_fedavg();
    let result = (|| {
        for t in 0..cfg.iterations {
            let mut row = if fedavg {
                fs.fedavg_round(cfg.federation.local_epochs, cfg.federation.eta, cfg.federation.batch_size)?
            } else {
                fs.run_outer_iteration()?
            };
            if is_eval_step(t, cfg) {
                last = fs.evaluate_global(test)?;
                row.test_accuracy = Some(last.accuracy);
                if fedavg {
                    fs.refresh_validation()?;
                    row.validation_accuracy = fs.validation().iter().map(|e| Some(e.accuracy)).collect();
                }
            }
            sink.push(row)?;
        }
        Ok(())
    })();
    save_federation(&fs, ckpt, cfg)?;
    result.map(|_| (initial, last))
}

fn save_federation(fs: &FederationState, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let meta = |role: &str| -> Vec<(String, String)> {
        vec![
            ("role".into(), role.into()),
            ("scenario".into(), format!("{:?}", cfg.scenario)),
            ("iteration".into(), fs.iteration().to_string()),
        ]
    };
    checkpoint::save(&dir.join("student.flst"), fs.student(), &meta("student"))?;
    if !cfg.scenario.is_fedavg() {
        let mut m = meta("scheduler");
        m.extend(fs.scheduler().checkpoint_metadata());
        checkpoint::save(&dir.join("scheduler.flst"), fs.scheduler().net(), &m)?;
    }
    for n in fs.nodes() {
        if let Some(t) = n.teacher() {
            let mut m = meta("teacher_actor");
            m.extend(t.checkpoint_metadata());
            checkpoint::save(&dir.join(format!("teacher_{}_actor.flst", n.id())), t.actor(), &m)?;
            let mut m = meta("teacher_critic");
            m.extend(t.checkpoint_metadata());
            checkpoint::save(&dir.join(format!("teacher_{}_critic.flst", n.id())), t.critic(), &m)?;
        }
    }
    if let Some(enc) = fs.nodes()[0].encoder() {
        checkpoint::save(&dir.join("encoder.flst"), enc.net(), &meta("encoder"))?;
    }
    Ok(())
}

/// Centralized SMBT (uniform minibatches) or CURRIC (easy-to-hard sweep) training on the pooled shards.
fn run_central(cfg: &ExperimentConfig, prep: &Prepared, sink: &mut Sink, ckpt: &Path) -> Result<(Evaluation, Evaluation)> {
    let seeds = cfg.seeds();
    let pooled = prep.split.pooled_train()?;
    let inputs = prep.student_inputs(&pooled.features)?;
    let targets = pooled.targets();
    let n_batches = cfg.curriculum.batch_count;
    let (sizes, acts) = student_layout(cfg, prep.input_dim(), prep.class_count);
    let mut student = Mlp::new(&sizes, &acts, seeds.student)?;
    let mut opt = student_opt(cfg)?;
    let test_inputs = prep.student_inputs(&prep.split.test.features)?;
    let test_labels = &prep.split.test.labels;
    let node_val: Vec<(Matrix, Vec<usize>)> = prep
        .split
        .nodes
        .iter()
        .map(|s| Ok((prep.student_inputs(&s.validation.features)?, s.validation.labels.clone())))
        .collect::<Result<_>>()?;
    let node_count = node_val.len();

    let curriculum = if cfg.scenario == Scenario::Curric {
        let rank_data = match cfg.curriculum.rank_space {
            RankSpace::Raw => pooled.clone(),
            RankSpace::Latent => Dataset {
                features: inputs.clone(),
                ..pooled.clone()
            },
        };
        let model = fit_ranking(&rank_data, cfg.metric())?;
        Some(build_curriculum(&rank_data, &model, n_batches)?)
    } else {
        None
    };
    let batch = cfg
        .baseline
        .batch_size
        .unwrap_or_else(|| pooled.len().div_ceil(n_batches))
        .clamp(1, pooled.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.federation);
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    let mut cursor = order.len();

    let initial = evaluate(&student, &test_inputs, test_labels)?;
    let mut last = initial;
    let total = cfg.iterations;
    let result = (|| {
        for t in 0..total {
            let idx: Vec<usize> = match &curriculum {
                Some(c) => c.batch(t * n_batches / total).to_vec(),
                None => {
                    if cursor + batch > order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    cursor += batch;
                    order[cursor - batch..cursor].to_vec()
                }
            };
            let x = inputs.select_rows(&idx);
            let y = targets.select_rows(&idx);
            let cache = student.forward(&x)?;
            let (loss, grad) = loss_eval(LossKind::CrossEntropy, cache.output(), &y)?;
            if !loss.is_finite() {
                return Err(FlstError::numeric(format!("iteration {t}: non-finite training loss")));
            }
            let grads = student.backward(&cache, &grad)?;
            sgd_step(&mut student, &grads, &mut opt)?;
            let mut row = MetricsRow {
                iteration: t as u64,
                probabilities: vec![1.0 / node_count as f64; node_count],
                selected: Vec::new(),
                action: None,
                batch_size: Some(idx.len()),
                inner_loss: Some(loss),
                meta_loss: None,
                validation_accuracy: vec![None; node_count],
                test_accuracy: None,
                reward: None,
                flags: Vec::new(),
            };
            if is_eval_step(t, cfg) {
                last = evaluate(&student, &test_inputs, test_labels)?;
                row.test_accuracy = Some(last.accuracy);
                row.validation_accuracy = node_val
                    .iter()
                    .map(|(x, l)| evaluate(&student, x, l).map(|e| Some(e.accuracy)))
                    .collect::<Result<_>>()?;
            }
            sink.push(row)?;
        }
        Ok(())
    })();
    let meta = vec![
        ("role".to_string(), "student".to_string()),
        ("scenario".to_string(), format!("{:?}", cfg.scenario)),
    ];
    checkpoint::save(&ckpt.join("student.flst"), &student, &meta)?;
    result.map(|_| (initial, last))
}

fn execute(cfg: &ExperimentConfig, out_dir: &Path, sink: &mut Sink) -> Result<Outputs> {
    let prep = prepare(cfg)?;
    let ckpt = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| FlstError::io(&ckpt, e))?;
    let (initial, last) = match cfg.scenario {
        Scenario::Smbt | Scenario::Curric => run_central(cfg, &prep, sink, &ckpt)?,
        _ => run_federated(cfg, &prep, sink, &ckpt)?,
    };
    Ok(Outputs {
        rows: std::mem::take(&mut sink.rows),
        initial,
        last,
    })
}

/// Runs a scenario to budget, writing `metrics.csv`, `manifest.toml`,
/// `checkpoints/` and `summary.{txt,toml}` under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| FlstError::io(out_dir, e))?;
    let mut resolved = cfg.clone();
    resolved.resolve();
    resolved.run_record = None;
    resolved.validate()?;
    let node_count = resolved.partition.node_count;
    let mut sink = Sink {
        writer: MetricsWriter::create(&out_dir.join("metrics.csv"), node_count)?,
        rows: Vec::new(),
        cfg: &resolved,
    };
    let outcome = execute(&resolved, out_dir, &mut sink);
    sink.writer.flush()?;
    let wall = start.elapsed().as_secs_f64();
    let record = |status: &str, error: Option<String>| RunRecord {
        status: status.into(),
        error,
        wall_clock_seconds: wall,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    match outcome {
        Ok(out) => {
            write_manifest(out_dir, &resolved, record("completed", None))?;
            let mut summary = summarize_rows(&out.rows, node_count, resolved.final_window);
            if summary.final_test_accuracy.is_none() {
                summary.final_test_accuracy = Some(out.initial.accuracy);
                summary.best_test_accuracy = Some(out.initial.accuracy);
            }
            summary.final_auc = out.last.auc;
            summary.wall_clock_seconds = Some(wall);
            write_summary(out_dir, &summary)?;
            Ok(summary)
        }
        Err(e) => {
            write_manifest(out_dir, &resolved, record("failed", Some(e.to_string())))?;
            Err(e)
        }
    }
}

fn write_manifest(out_dir: &Path, cfg: &ExperimentConfig, record: RunRecord) -> Result<()> {
    let mut m = cfg.clone();
    m.run_record = Some(record);
    let path = out_dir.join("manifest.toml");
    fs::write(&path, m.to_toml()?).map_err(|e| FlstError::io(&path, e))
}

fn write_summary(out_dir: &Path, s: &RunSummary) -> Result<()> {
    let txt = out_dir.join("summary.txt");
    fs::write(&txt, render_report(s)).map_err(|e| FlstError::io(&txt, e))?;
    let toml_path = out_dir.join("summary.toml");
    let body = toml::to_string(s).map_err(|e| FlstError::config(e.to_string()))?;
    fs::write(&toml_path, body).map_err(|e| FlstError::io(&toml_path, e))
}

/// Output directory: explicit override, then the config's own, then `runs/<scenario>`.
pub fn output_dir_for(cfg: &ExperimentConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{:?}", cfg.scenario).to_lowercase()))
}
