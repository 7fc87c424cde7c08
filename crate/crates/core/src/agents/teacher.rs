use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::embed::StudentState;
use crate::error::{FlstError, Result};
use crate::nn::{sgd_step, Activation, GradientAt, Matrix, Mlp, OptimizerState};

/// Hyperparameters of a node-local DDPG teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub target_refresh: u64,
    pub replay_capacity: usize,
    pub minibatch: usize,
    pub exploration_std: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub momentum: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            hidden: 150,
            gamma: 0.95,
            target_refresh: 100,
            replay_capacity: 10_000,
            minibatch: 64,
            exploration_std: 0.1,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            momentum: 0.9,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(FlstError::config("teacher.hidden must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(FlstError::config(format!(
                "teacher.gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.target_refresh == 0 {
            return Err(FlstError::config(
                "teacher.target_refresh must be at least 1",
            ));
        }
        if self.minibatch == 0 || self.replay_capacity < self.minibatch {
            return Err(FlstError::config(format!(
                "teacher.replay_capacity ({}) must be at least teacher.minibatch ({}) and both positive",
                self.replay_capacity, self.minibatch
            )));
        }
        if !(self.exploration_std >= 0.0) || !self.exploration_std.is_finite() {
            return Err(FlstError::config(
                "teacher.exploration_std must be finite and non-negative",
            ));
        }
        OptimizerState::new(self.actor_lr, self.momentum)?;
        OptimizerState::new(self.critic_lr, self.momentum)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: StudentState,
    pub action: [f64; 2],
    pub reward: f64,
    pub next_state: StudentState,
}

/// Anything that can report `Q(s, a)` and `∂Q/∂a` row by row.
pub trait ActionValue {
    fn q_and_action_grad(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)>;
}

impl ActionValue for Mlp {
    fn q_and_action_grad(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let input = states.hconcat(actions)?;
        let cache = self.forward(&input)?;
        let q: Vec<f64> = cache.output().as_slice().to_vec();
        let ones = Matrix::from_vec(q.len(), 1, vec![1.0; q.len()])?;
        let (_, input_grad) = self.backward_full(&cache, &ones, GradientAt::Output, true)?;
        let input_grad = input_grad.expect("input gradient requested");
        let a_grad = input_grad.columns(states.cols(), states.cols() + actions.cols());
        Ok((q, a_grad))
    }
}

/// Result of feeding one transition to [`Teacher::learn`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LearnOutcome {
    /// Replay not yet full enough for a minibatch, or the teacher is frozen.
    Skipped,
    Stepped {
        critic_loss: f64,
        actor_q: f64,
        targets_refreshed: bool,
    },
}

/// Actor-critic teacher choosing curriculum windows from the student state.
#[derive(Clone, Debug)]
pub struct Teacher {
    config: TeacherConfig,
    actor: Mlp,
    critic: Mlp,
    target_actor: Mlp,
    target_critic: Mlp,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    replay: VecDeque<Transition>,
    rng: ChaCha8Rng,
    learner_steps: u64,
    frozen: bool,
}

impl Teacher {
    pub fn new(state_dim: usize, config: TeacherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let actor = Mlp::new(
            &[state_dim, h, h, 2],
            &[Activation::Relu, Activation::Relu, Activation::Tanh],
            seed,
        )?;
        let critic = Mlp::new(
            &[state_dim + 2, h, h, 1],
            &[Activation::Relu, Activation::Relu, Activation::Linear],
            seed.wrapping_add(1),
        )?;
        Self::from_nets(actor, critic, config, seed)
    }

    /// Assembles a teacher around existing networks; targets start as copies.
    pub fn from_nets(actor: Mlp, critic: Mlp, config: TeacherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let sizes = actor.layer_sizes();
        if actor.output_dim() != 2 || *actor.activations().last().unwrap() != Activation::Tanh {
            return Err(FlstError::config(
                "teacher actor must end in a tanh layer of size 2",
            ));
        }
        if critic.input_dim() != sizes[0] + 2 || critic.output_dim() != 1 {
            return Err(FlstError::shape(format!(
                "critic {:?} does not fit actor {:?}",
                critic.layer_sizes(),
                sizes
            )));
        }
        Ok(Teacher {
            actor_opt: OptimizerState::new(config.actor_lr, config.momentum)?,
            critic_opt: OptimizerState::new(config.critic_lr, config.momentum)?,
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            replay: VecDeque::with_capacity(config.replay_capacity.min(4096)),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7ea_c4e5),
            learner_steps: 0,
            frozen: false,
            config,
        })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn target_actor(&self) -> &Mlp {
        &self.target_actor
    }

    pub fn target_critic(&self) -> &Mlp {
        &self.target_critic
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner_steps
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// A frozen teacher still acts but ignores `learn`.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn checkpoint_metadata(&self) -> Vec<(String, String)> {
        vec![
            ("gamma".into(), self.config.gamma.to_string()),
            (
                "target_refresh".into(),
                self.config.target_refresh.to_string(),
            ),
            ("learner_steps".into(), self.learner_steps.to_string()),
        ]
    }

    fn check_state(&self, s: &StudentState) -> Result<()> {
        if s.len() != self.state_dim() {
            return Err(FlstError::shape(format!(
                "state of length {} given to a teacher expecting {}",
                s.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    /// Deterministic actor output, optionally perturbed by Gaussian noise and clamped to `[-1, 1]`.
    pub fn act(&mut self, s: &StudentState, explore: bool) -> Result<[f64; 2]> {
        self.check_state(s)?;
        let out = self
            .actor
            .predict(&Matrix::from_vec(1, s.len(), s.as_slice().to_vec())?)?;
        let mut a = [out.get(0, 0), out.get(0, 1)];
        if explore && self.config.exploration_std > 0.0 {
            let noise = Normal::new(0.0, self.config.exploration_std)
                .map_err(|e| FlstError::config(e.to_string()))?;
            for x in &mut a {
                *x += noise.sample(&mut self.rng);
            }
        }
        for x in &mut a {
            *x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        }
        Ok(a)
    }

    /// One gradient step on the mean squared TD error; returns the loss before the step.
    pub fn critic_update(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(FlstError::config(
                "critic update needs a non-empty minibatch",
            ));
        }
        let (states, actions, next_states) = stack(batch)?;
        let next_actions = self.target_actor.predict(&next_states)?;
        let next_q = self
            .target_critic
            .predict(&next_states.hconcat(&next_actions)?)?;
        let cache = self.critic.forward(&states.hconcat(&actions)?)?;
        let q = cache.output();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut grad = Matrix::zeros(batch.len(), 1);
        for (i, t) in batch.iter().enumerate() {
            let y = t.reward + self.config.gamma * next_q.get(i, 0);
            let d = q.get(i, 0) - y;
            loss += d * d;
            grad.set(i, 0, 2.0 * d / n);
        }
        let grads = self.critic.backward(&cache, &grad)?;
        sgd_step(&mut self.critic, &grads, &mut self.critic_opt)?;
        Ok(loss / n)
    }

    /// Deterministic policy-gradient ascent on mean `Q(s, μ(s))` using this teacher's critic.
    pub fn actor_update(&mut self, states: &Matrix) -> Result<f64> {
        let critic = self.critic.clone();
        self.actor_update_with(states, &critic)
    }

    /// As [`Teacher::actor_update`] with an arbitrary action-value function.
    pub fn actor_update_with(&mut self, states: &Matrix, q_fn: &dyn ActionValue) -> Result<f64> {
        let cache = self.actor.forward(states)?;
        let (q, dq_da) = q_fn.q_and_action_grad(states, cache.output())?;
        let n = q.len() as f64;
        let mut grad = dq_da;
        grad.scale(-1.0 / n);
        let grads = self.actor.backward(&cache, &grad)?;
        sgd_step(&mut self.actor, &grads, &mut self.actor_opt)?;
        Ok(q.iter().sum::<f64>() / n)
    }

    /// Hard-copies the live nets into the targets when `step` is a multiple of K.
    pub fn target_sync(&mut self, step: u64) -> bool {
        if step % self.config.target_refresh == 0 {
            self.target_actor = self.actor.clone();
            self.target_critic = self.critic.clone();
            true
        } else {
            false
        }
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        self.check_state(&t.state)?;
        self.check_state(&t.next_state)?;
        if self.replay.len() == self.config.replay_capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(t);
        Ok(())
    }

    /// Stores the transition and, once the replay holds a minibatch, runs one
    /// critic step followed by one actor step with its target update.
    pub fn learn(&mut self, t: Transition) -> Result<LearnOutcome> {
        if self.frozen {
            return Ok(LearnOutcome::Skipped);
        }
        self.remember(t)?;
        let m = self.config.minibatch;
        if self.replay.len() < m {
            return Ok(LearnOutcome::Skipped);
        }
        let batch: Vec<Transition> = (0..m)
            .map(|_| self.replay[self.rng.random_range(0..self.replay.len())].clone())
            .collect();
        let critic_loss = self.critic_update(&batch)?;
        let (states, _, _) = stack(&batch)?;
        let actor_q = self.actor_update(&states)?;
        self.learner_steps += 1;
        let targets_refreshed = self.target_sync(self.learner_steps);
        Ok(LearnOutcome::Stepped {
            critic_loss,
            actor_q,
            targets_refreshed,
        })
    }
}

/// Accuracy delta on the same node-local validation set.
pub fn compute_reward(val_metric_before: f64, val_metric_after: f64) -> f64 {
    val_metric_after - val_metric_before
}

fn stack(batch: &[Transition]) -> Result<(Matrix, Matrix, Matrix)> {
    let d = batch[0].state.len();
    let mut s = Vec::with_capacity(batch.len() * d);
    let mut a = Vec::with_capacity(batch.len() * 2);
    let mut s2 = Vec::with_capacity(batch.len() * d);
    for t in batch {
        s.extend_from_slice(t.state.as_slice());
        a.extend_from_slice(&t.action);
        s2.extend_from_slice(t.next_state.as_slice());
    }
    Ok((
        Matrix::from_vec(batch.len(), d, s)?,
        Matrix::from_vec(batch.len(), 2, a)?,
        Matrix::from_vec(batch.len(), d, s2)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    fn small_config() -> TeacherConfig {
        TeacherConfig {
            hidden: 8,
            minibatch: 4,
            replay_capacity: 16,
            ..TeacherConfig::default()
        }
    }

    fn state(v: &[f64]) -> StudentState {
        StudentState::new(v.to_vec())
    }

    fn zero_net(sizes: &[usize], acts: &[Activation]) -> Mlp {
        let mut net = Mlp::new(sizes, acts, 0).unwrap();
        for s in net.slices_mut() {
            s.fill(0.0);
        }
        net
    }

    fn constant_critic(state_dim: usize, value: f64) -> Mlp {
        let mut net = zero_net(
            &[state_dim + 2, 3, 1],
            &[Activation::Relu, Activation::Linear],
        );
        let last = net.slices_mut().pop().unwrap();
        last[0] = value;
        net
    }

    #[test]
    fn deterministic_and_bounded_actions() {
        let mut t = Teacher::new(5, small_config(), 3).unwrap();
        let s = state(&[0.3, -1.0, 2.0, 0.0, 5.0]);
        let a = t.act(&s, false).unwrap();
        assert_eq!(a, t.act(&s, false).unwrap());
        assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn zero_actor_outputs_origin() {
        let actor = zero_net(&[3, 4, 2], &[Activation::Relu, Activation::Tanh]);
        let critic = constant_critic(3, 0.0);
        let mut t = Teacher::from_nets(actor, critic, small_config(), 0).unwrap();
        assert_eq!(t.act(&state(&[1.0, 2.0, 3.0]), false).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn wrong_state_length() {
        let mut t = Teacher::new(5, small_config(), 3).unwrap();
        assert!(matches!(
            t.act(&state(&[1.0]), false),
            Err(FlstError::Shape(_))
        ));
    }

    #[test]
    fn reward_is_accuracy_delta() {
        assert_eq!(compute_reward(0.7, 0.7), 0.0);
        assert!((compute_reward(0.50, 0.55) - 0.05).abs() < 1e-12);
        assert!((compute_reward(0.60, 0.40) + 0.20).abs() < 1e-12);
    }

    #[test]
    fn bellman_loss_by_hand() {
        // Live critic ≡ 0; target critic ≡ 2.
        let actor = zero_net(&[2, 3, 2], &[Activation::Relu, Activation::Tanh]);
        let cfg = TeacherConfig {
            gamma: 0.5,
            ..small_config()
        };
        let mut t = Teacher::from_nets(actor, constant_critic(2, 0.0), cfg, 0).unwrap();
        t.target_critic = constant_critic(2, 2.0);
        let tr = Transition {
            state: state(&[0.1, 0.2]),
            action: [0.0, 0.5],
            reward: 1.0,
            next_state: state(&[0.3, 0.4]),
        };
        let mut twin = t.clone();
        assert_eq!(t.critic_update(std::slice::from_ref(&tr)).unwrap(), 4.0);
        assert_eq!(twin.critic_update(std::slice::from_ref(&tr)).unwrap(), 4.0);
    }

    #[test]
    fn fixed_point_has_no_critic_gradient() {
        let actor = zero_net(&[2, 3, 2], &[Activation::Relu, Activation::Tanh]);
        let cfg = TeacherConfig {
            gamma: 0.0,
            ..small_config()
        };
        let critic = constant_critic(2, 0.7);
        let mut t = Teacher::from_nets(actor, critic.clone(), cfg, 0).unwrap();
        let tr = Transition {
            state: state(&[0.1, 0.2]),
            action: [0.3, -0.5],
            reward: 0.7,
            next_state: state(&[0.3, 0.4]),
        };
        assert_eq!(t.critic_update(&[tr]).unwrap(), 0.0);
        assert_eq!(t.critic().flat_params(), critic.flat_params());
    }

    #[test]
    fn zero_critic_leaves_actor_unchanged() {
        let mut t = Teacher::new(3, small_config(), 9).unwrap();
        let before = t.actor().flat_params();
        let states = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]).unwrap();
        let q = t
            .actor_update_with(&states, &constant_critic(3, 0.0))
            .unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(t.actor().flat_params(), before);
    }

    struct Quadratic(f64);

    impl ActionValue for Quadratic {
        fn q_and_action_grad(&self, _: &Matrix, a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
            let mut grad = a.clone();
            grad.map_inplace(|x| -2.0 * (x - self.0));
            let q = a
                .row_iter()
                .map(|r| -r.iter().map(|x| (x - self.0).powi(2)).sum::<f64>())
                .collect();
            Ok((q, grad))
        }
    }

    #[test]
    fn quadratic_critic_drives_actor_to_optimum() {
        let cfg = TeacherConfig {
            actor_lr: 0.01,
            ..small_config()
        };
        let mut t = Teacher::new(4, cfg, 1).unwrap();
        let states = Matrix::from_rows(&[[0.5, -0.2, 0.1, 0.9]]).unwrap();
        for _ in 0..500 {
            t.actor_update_with(&states, &Quadratic(0.3)).unwrap();
        }
        let a = t.actor().predict(&states).unwrap();
        for &x in a.as_slice() {
            assert!((x - 0.3).abs() < 0.05, "action {x}");
        }
    }

    #[test]
    fn actor_step_matches_finite_difference_ascent() {
        let cfg = TeacherConfig {
            hidden: 5,
            actor_lr: 1.0,
            momentum: 0.0,
            ..small_config()
        };
        let mut t = Teacher::new(3, cfg, 4).unwrap();
        let critic = Mlp::new(&[5, 6, 1], &[Activation::Tanh, Activation::Linear], 8).unwrap();
        let states =
            Matrix::from_rows(&[[0.2, -0.4, 0.9], [0.5, 0.1, -0.3], [-0.7, 0.6, 0.2]]).unwrap();
        let mean_q = |actor: &Mlp| {
            let a = actor.predict(&states).unwrap();
            let q = critic.predict(&states.hconcat(&a).unwrap()).unwrap();
            q.as_slice().iter().sum::<f64>() / 3.0
        };
        let base = t.actor().clone();
        t.actor_update_with(&states, &critic).unwrap();
        // With ω = 1 and no momentum the step equals +∇J.
        let step: Vec<f64> = t
            .actor()
            .flat_params()
            .iter()
            .zip(base.flat_params())
            .map(|(a, b)| a - b)
            .collect();
        let h = 1e-6;
        let mut fd = Vec::with_capacity(step.len());
        for k in 0..step.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            nudge(&mut plus, k, h);
            nudge(&mut minus, k, -h);
            fd.push((mean_q(&plus) - mean_q(&minus)) / (2.0 * h));
        }
        let num: f64 = step
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num / den < 1e-3, "relative error {}", num / den);
    }

    fn nudge(net: &mut Mlp, mut k: usize, h: f64) {
        for s in net.slices_mut() {
            if k < s.len() {
                s[k] += h;
                return;
            }
            k -= s.len();
        }
    }

    #[test]
    fn targets_refresh_only_on_boundaries() {
        let cfg = TeacherConfig {
            target_refresh: 3,
            ..small_config()
        };
        let mut t = Teacher::new(2, cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut snapshot = t.target_actor().checksum();
        for i in 0..40 {
            let tr = Transition {
                state: state(&[rng.random(), rng.random()]),
                action: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                reward: rng.random(),
                next_state: state(&[rng.random(), rng.random()]),
            };
            let before_steps = t.learner_steps();
            let outcome = t.learn(tr).unwrap();
            assert_eq!(outcome == LearnOutcome::Skipped, i < 3);
            let now = t.target_actor().checksum();
            if t.learner_steps() > before_steps && t.learner_steps() % 3 == 0 {
                assert_eq!(now, t.actor().checksum());
                assert_eq!(t.target_critic().checksum(), t.critic().checksum());
            } else {
                assert_eq!(now, snapshot);
                if t.learner_steps() > 0 {
                    assert_ne!(t.critic().checksum(), t.target_critic().checksum());
                }
            }
            snapshot = now;
        }
        assert!(t.replay_len() <= 16);
    }

    #[test]
    fn unit_refresh_keeps_targets_current() {
        let cfg = TeacherConfig {
            target_refresh: 1,
            minibatch: 1,
            ..small_config()
        };
        let mut t = Teacher::new(2, cfg, 5).unwrap();
        for i in 0..5 {
            let tr = Transition {
                state: state(&[0.1 * i as f64, 0.2]),
                action: [0.1, -0.1],
                reward: 0.5,
                next_state: state(&[0.2, 0.1]),
            };
            t.learn(tr).unwrap();
            assert_eq!(t.target_actor().checksum(), t.actor().checksum());
            assert_eq!(t.target_critic().checksum(), t.critic().checksum());
        }
    }

    #[test]
    fn frozen_teacher_does_not_learn() {
        let mut t = Teacher::new(
            2,
            TeacherConfig {
                minibatch: 1,
                ..small_config()
            },
            5,
        )
        .unwrap();
        t.set_frozen(true);
        let before = t.actor().checksum();
        let tr = Transition {
            state: state(&[0.1, 0.2]),
            action: [0.1, -0.1],
            reward: 0.5,
            next_state: state(&[0.2, 0.1]),
        };
        assert_eq!(t.learn(tr).unwrap(), LearnOutcome::Skipped);
        assert_eq!(t.actor().checksum(), before);
    }

    proptest! {
        #[test]
        fn exploration_never_escapes_the_box(std in 0.0f64..50.0, seed in any::<u64>(), x in -10.0f64..10.0) {
            let cfg = TeacherConfig { exploration_std: std, ..small_config() };
            let mut t = Teacher::new(3, cfg, seed).unwrap();
            for _ in 0..10 {
                let a = t.act(&state(&[x, -x, 1.0]), true).unwrap();
                prop_assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
