use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Evaluation};
use super::metrics::MetricsRow;
use super::node::{corrupt_one_matrix, Node, NodeStatus};
use crate::agents::{
    compute_reward, entropy, sample_nodes, Scheduler, StudentEmbedder, StudentState, Transition,
};
use crate::curriculum::{encode_batch, select_window, WindowAction};
use crate::datasets::Dataset;
use crate::error::{FlstError, Result};
use crate::nn::{loss_eval, sgd_step, GradientSet, LossKind, Matrix, Mlp, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Selection {
    OneHot,
    TopK { k: usize },
}

impl Selection {
    pub fn count(self) -> usize {
        match self {
            Selection::OneHot => 1,
            Selection::TopK { k } => k,
        }
    }
}

/// Outcome of one teacher-driven student update at a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerStep {
    pub loss: f64,
    pub action: [f64; 2],
    pub batch_size: usize,
}

/// Teacher picks a curriculum window and the student takes one SGD step on it; the
/// post-update loss on that window is returned.
pub fn inner_train_step(
    node: &mut Node,
    student: &mut Mlp,
    opt: &mut OptimizerState,
    state: &StudentState,
    explore: bool,
) -> Result<InnerStep> {
    let window_max = node.curriculum_spec().window_max;
    let teacher = node
        .teacher_mut()
        .ok_or_else(|| FlstError::config("inner step requires a node teacher"))?;
    let action = teacher.act(state, explore)?;
    let idx = select_window(
        node.curriculum(),
        WindowAction::new(action[0], action[1]),
        window_max,
    );
    let x = node.train_inputs().select_rows(&idx);
    let y = node.train_targets().select_rows(&idx);
    let cache = student.forward(&x)?;
    let (loss, grad) = loss_eval(LossKind::CrossEntropy, cache.output(), &y)?;
    if !loss.is_finite() {
        return Err(FlstError::numeric(format!(
            "node {}: non-finite batch loss",
            node.id()
        )));
    }
    let grads = student.backward(&cache, &grad)?;
    sgd_step(student, &grads, opt)?;
    let (after, _) = loss_eval(LossKind::CrossEntropy, &student.predict(&x)?, &y)?;
    if !after.is_finite() {
        return Err(FlstError::numeric(format!(
            "node {}: non-finite post-update loss",
            node.id()
        )));
    }
    Ok(InnerStep {
        loss: after,
        action,
        batch_size: idx.len(),
    })
}

/// Meta-loss: selected-batch loss plus the mean validation loss of every
/// non-selected node. Non-finite node losses fall back to that node's worst
/// recorded loss (or `fallback` without history); the flag reports a substitution.
pub fn aggregate_validation_losses(
    teacher_batch_loss: f64,
    validation_losses: &[f64],
    selected: &[usize],
    worst: &[Option<f64>],
    fallback: f64,
) -> (f64, bool) {
    let mut substituted = false;
    let mut total = teacher_batch_loss;
    for (i, &l) in validation_losses.iter().enumerate() {
        if selected.contains(&i) {
            continue;
        }
        if l.is_finite() {
            total += l;
        } else {
            substituted = true;
            total += worst[i].unwrap_or(fallback);
        }
    }
    (total, substituted)
}

/// `G' = (1 − η)·G + (η/m)·Σ L_i`, the rearranged form of `G + (η/m)Σ(L_i − G)`.
pub fn fedavg_combine(global: &Mlp, locals: &[&Mlp], eta: f64) -> Result<Mlp> {
    if locals.is_empty() {
        return Ok(global.clone());
    }
    if locals.iter().any(|l| !l.same_architecture(global)) {
        return Err(FlstError::shape(
            "local model architecture differs from the global model",
        ));
    }
    let mut out = global.clone();
    let keep = 1.0 - eta;
    let share = eta / locals.len() as f64;
    let local_slices: Vec<Vec<&[f64]>> = locals.iter().map(|l| l.slices()).collect();
    for (k, dst) in out.slices_mut().into_iter().enumerate() {
        for (j, g) in dst.iter_mut().enumerate() {
            let sum: f64 = local_slices.iter().map(|s| s[k][j]).sum();
            *g = keep * *g + share * sum;
        }
    }
    Ok(out)
}

/// Minibatch SGD over the whole shard for a number of epochs (shuffled when
/// `batch_size` is smaller than the shard). Returns the mean loss of the last epoch.
pub fn local_train(
    student: &mut Mlp,
    opt: &mut OptimizerState,
    inputs: &Matrix,
    targets: &Matrix,
    epochs: usize,
    batch_size: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = inputs.rows();
    let b = batch_size.unwrap_or(n).clamp(1, n.max(1));
    let mut last = f64::NAN;
    for _ in 0..epochs {
        let mut total = 0.0;
        let mut steps = 0;
        if b >= n {
            total += sgd_on(student, opt, inputs, targets)?;
            steps += 1;
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            for chunk in order.chunks(b) {
                total += sgd_on(
                    student,
                    opt,
                    &inputs.select_rows(chunk),
                    &targets.select_rows(chunk),
                )?;
                steps += 1;
            }
        }
        last = total / steps as f64;
    }
    Ok(last)
}

fn sgd_on(student: &mut Mlp, opt: &mut OptimizerState, x: &Matrix, y: &Matrix) -> Result<f64> {
    let cache = student.forward(x)?;
    let (loss, grad) = loss_eval(LossKind::CrossEntropy, cache.output(), y)?;
    if !loss.is_finite() {
        return Err(FlstError::numeric("non-finite training loss"));
    }
    let grads = student.backward(&cache, &grad)?;
    sgd_step(student, &grads, opt)?;
    Ok(loss)
}

/// Coordinator state: the global student plus the scheduler over the node registry.
#[derive(Clone, Debug)]
pub struct FederationState {
    nodes: Vec<Node>,
    student: Mlp,
    student_opt: OptimizerState,
    scheduler: Scheduler,
    embedder: StudentEmbedder,
    selection: Selection,
    iteration: u64,
    rng: ChaCha8Rng,
    explore: bool,
    learn_scheduler: bool,
    validation: Vec<Evaluation>,
}

impl FederationState {
    pub fn new(
        nodes: Vec<Node>,
        student: Mlp,
        student_opt: OptimizerState,
        scheduler: Scheduler,
        selection: Selection,
        seed: u64,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(FlstError::config("a federation needs at least one node"));
        }
        if scheduler.node_count() != nodes.len() {
            return Err(FlstError::config(format!(
                "scheduler output size {} does not match node count {}",
                scheduler.node_count(),
                nodes.len()
            )));
        }
        if selection.count() == 0 || selection.count() > nodes.len() {
            return Err(FlstError::config(format!(
                "top_k k = {} must lie in 1..={}",
                selection.count(),
                nodes.len()
            )));
        }
        for n in &nodes {
            if n.train_inputs().cols() != student.input_dim() {
                return Err(FlstError::shape(format!(
                    "node {} feeds {} features to a student expecting {}",
                    n.id(),
                    n.train_inputs().cols(),
                    student.input_dim()
                )));
            }
        }
        check_disjoint(&nodes, None)?;
        let embedder = StudentEmbedder::new(student.layer_sizes())?;
        let validation = nodes
            .iter()
            .map(|n| n.validate_student(&student))
            .collect::<Result<Vec<_>>>()?;
        Ok(FederationState {
            nodes,
            student,
            student_opt,
            scheduler,
            embedder,
            selection,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            explore: true,
            learn_scheduler: true,
            validation,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_mut(&mut self, i: usize) -> &mut Node {
        &mut self.nodes[i]
    }

    pub fn student(&self) -> &Mlp {
        &self.student
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn embedder(&self) -> &StudentEmbedder {
        &self.embedder
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Training mode samples nodes and explores; evaluation mode takes the argmax
    /// node and acts greedily.
    pub fn set_training(&mut self, training: bool) {
        self.explore = training;
    }

    pub fn set_scheduler_learning(&mut self, on: bool) {
        self.learn_scheduler = on;
    }

    /// Validation accuracy/loss of the current global student at every node.
    pub fn validation(&self) -> &[Evaluation] {
        &self.validation
    }

    pub fn refresh_validation(&mut self) -> Result<()> {
        self.validation = self
            .nodes
            .iter()
            .map(|n| n.validate_student(&self.student))
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    pub fn scheduler_probs(&self) -> Result<Vec<f64>> {
        self.scheduler.probs(&self.embedder.embed(&self.student)?)
    }

    fn choose(&mut self, p: &[f64]) -> Vec<usize> {
        let k = self.selection.count();
        let mut sel = if self.explore {
            sample_nodes(p, k, &mut self.rng)
        } else {
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            order.truncate(k);
            order
        };
        sel.sort_unstable();
        sel
    }

    /// One outer iteration: embed, schedule, train at the selected node(s), merge,
    /// validate everywhere, update the scheduler, then let the teachers learn.
    pub fn run_outer_iteration(&mut self) -> Result<MetricsRow> {
        let state = self.embedder.embed(&self.student)?;
        let p = self.scheduler.probs(&state)?;
        let selected = self.choose(&p);
        let mut flags = Vec::new();

        let mut outcomes: Vec<(usize, Option<(Mlp, OptimizerState, InnerStep)>)> = Vec::new();
        for &i in &selected {
            let mut student = self.student.clone();
            let mut opt = self.student_opt.clone();
            let res = inner_train_step(
                &mut self.nodes[i],
                &mut student,
                &mut opt,
                &state,
                self.explore,
            );
            match res {
                Ok(step) => outcomes.push((i, Some((student, opt, step)))),
                Err(FlstError::Numeric(msg)) => {
                    log::warn!("iteration {}: {}", self.iteration, msg);
                    flags.push(format!("node_failure_{i}"));
                    outcomes.push((i, None));
                }
                Err(e) => return Err(e),
            }
        }

        let ok: Vec<&(Mlp, OptimizerState, InnerStep)> =
            outcomes.iter().filter_map(|(_, o)| o.as_ref()).collect();
        match ok.len() {
            0 => {}
            1 if self.selection == Selection::OneHot => {
                self.student = ok[0].0.clone();
                self.student_opt = ok[0].1.clone();
            }
            _ => {
                let locals: Vec<&Mlp> = ok.iter().map(|o| &o.0).collect();
                self.student = fedavg_combine(&self.student, &locals, 1.0)?;
                let vels: Vec<&GradientSet> = ok.iter().filter_map(|o| o.1.velocity()).collect();
                if vels.len() == ok.len() {
                    let mut v = GradientSet::zeros_like(&self.student);
                    for g in &vels {
                        v.add_scaled(g, 1.0 / vels.len() as f64);
                    }
                    self.student_opt.set_velocity(Some(v));
                }
            }
        }

        let before = std::mem::take(&mut self.validation);
        let after = self
            .nodes
            .iter()
            .map(|n| n.validate_student(&self.student))
            .collect::<Result<Vec<_>>>()?;
        let worst: Vec<Option<f64>> = self.nodes.iter().map(Node::worst_loss).collect();
        let fallback = worst
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let fallback = if fallback.is_finite() {
            fallback
        } else {
            (self.student.output_dim() as f64).ln()
        };
        let batch_loss: f64 = outcomes
            .iter()
            .map(|(_, o)| o.as_ref().map_or(fallback, |(_, _, s)| s.loss))
            .sum();
        let val_losses: Vec<f64> = after.iter().map(|e| e.mean_loss).collect();
        let (meta_loss, substituted) =
            aggregate_validation_losses(batch_loss, &val_losses, &selected, &worst, fallback);
        if substituted {
            flags.push("validation_substituted".into());
        }
        for (n, e) in self.nodes.iter_mut().zip(&after) {
            n.record_loss(e.mean_loss);
        }

        if self.learn_scheduler {
            let step = self.scheduler.update(&state, &selected, meta_loss)?;
            if !step.applied {
                flags.push("scheduler_skipped".into());
            }
        }

        let next_state = self.embedder.embed(&self.student)?;
        let mut reward_sum = 0.0;
        for (i, o) in &outcomes {
            let Some((_, _, step)) = o else { continue };
            let reward = compute_reward(before[*i].accuracy, after[*i].accuracy);
            reward_sum += reward;
            if self.explore {
                if let Some(t) = self.nodes[*i].teacher_mut() {
                    t.learn(Transition {
                        state: state.clone(),
                        action: step.action,
                        reward,
                        next_state: next_state.clone(),
                    })?;
                }
            }
        }

        let succeeded: Vec<&InnerStep> = ok.iter().map(|o| &o.2).collect();
        let row = MetricsRow {
            iteration: self.iteration,
            probabilities: p,
            selected,
            action: succeeded.first().map(|s| s.action),
            batch_size: (!succeeded.is_empty())
                .then(|| succeeded.iter().map(|s| s.batch_size).sum()),
            inner_loss: (!succeeded.is_empty())
                .then(|| succeeded.iter().map(|s| s.loss).sum::<f64>() / succeeded.len() as f64),
            meta_loss: Some(meta_loss),
            validation_accuracy: after.iter().map(|e| Some(e.accuracy)).collect(),
            test_accuracy: None,
            reward: (!succeeded.is_empty()).then(|| reward_sum / succeeded.len() as f64),
            flags,
        };
        self.validation = after;
        self.iteration += 1;
        Ok(row)
    }

    /// One FedAvg round over every node: local training from `G`, then the
    /// merge. Nodes whose local model turns non-finite are dropped from the round.
    pub fn fedavg_round(
        &mut self,
        local_epochs: usize,
        eta: f64,
        batch_size: Option<usize>,
    ) -> Result<MetricsRow> {
        let mut locals = Vec::with_capacity(self.nodes.len());
        let mut losses = Vec::new();
        let mut flags = Vec::new();
        for i in 0..self.nodes.len() {
            let mut local = self.student.clone();
            let seed: u64 = self.rng.random();
            let node = &mut self.nodes[i];
            let (x, y) = (node.train_inputs().clone(), node.train_targets().clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let res = local_train(
                &mut local,
                node.local_opt_mut(),
                &x,
                &y,
                local_epochs,
                batch_size,
                &mut rng,
            );
            if node.status() == NodeStatus::ModelPoisoned {
                corrupt_one_matrix(&mut local, seed ^ 0x9e37_79b9);
            }
            match res {
                Ok(l) if local.is_finite() => {
                    losses.push(l);
                    locals.push(local);
                }
                Ok(_) | Err(FlstError::Numeric(_)) => {
                    flags.push(format!("node_failure_{i}"));
                }
                Err(e) => return Err(e),
            }
        }
        let refs: Vec<&Mlp> = locals.iter().collect();
        self.student = fedavg_combine(&self.student, &refs, eta)?;
        let n = self.nodes.len();
        let row = MetricsRow {
            iteration: self.iteration,
            probabilities: vec![1.0 / n as f64; n],
            selected: (0..n).collect(),
            action: None,
            batch_size,
            inner_loss: (!losses.is_empty())
                .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            meta_loss: None,
            validation_accuracy: vec![None; n],
            test_accuracy: None,
            reward: None,
            flags,
        };
        self.iteration += 1;
        Ok(row)
    }

    /// Held-out performance of the global student; raw test features are encoded
    /// with the shared encoder when one is in use.
    pub fn evaluate_global(&self, test: &Dataset) -> Result<Evaluation> {
        if test.is_empty() {
            return Err(FlstError::config("test set is empty"));
        }
        let inputs = match self.nodes[0].encoder() {
            Some(enc) => encode_batch(enc, &test.features)?,
            None => test.features.clone(),
        };
        evaluate(&self.student, &inputs, &test.labels)
    }

    pub fn scheduler_entropy(&self) -> Result<f64> {
        Ok(entropy(&self.scheduler_probs()?))
    }
}

/// Trains a node's teacher alone against a fresh student for `iterations` steps,
/// rewarding validation-accuracy gains on the node's own validation shard.
pub fn pretrain_teacher(
    node: &mut Node,
    mut student: Mlp,
    mut opt: OptimizerState,
    iterations: usize,
) -> Result<()> {
    let embedder = StudentEmbedder::new(student.layer_sizes())?;
    let mut before = node.validate_student(&student)?.accuracy;
    for _ in 0..iterations {
        let state = embedder.embed(&student)?;
        let step = inner_train_step(node, &mut student, &mut opt, &state, true)?;
        let after = node.validate_student(&student)?.accuracy;
        let next_state = embedder.embed(&student)?;
        if let Some(t) = node.teacher_mut() {
            t.learn(Transition {
                state,
                action: step.action,
                reward: compute_reward(before, after),
                next_state,
            })?;
        }
        before = after;
    }
    Ok(())
}

/// Train and validation ids must be pairwise disjoint across all nodes (and the test set).
pub fn check_disjoint(nodes: &[Node], test: Option<&Dataset>) -> Result<()> {
    let mut seen = std::collections::HashMap::new();
    let mut visit = |ids: &[u64], owner: String| -> Result<()> {
        for &id in ids {
            if let Some(prev) = seen.insert(id, owner.clone()) {
                return Err(FlstError::Validation(format!(
                    "instance {id} appears in both {prev} and {owner}"
                )));
            }
        }
        Ok(())
    };
    for n in nodes {
        visit(&n.train().ids, format!("node {} train", n.id()))?;
        visit(&n.validation().ids, format!("node {} validation", n.id()))?;
    }
    if let Some(t) = test {
        visit(&t.ids, "test".into())?;
    }
    Ok(())
}
