use super::{GradientSet, Mlp};
use crate::error::{FlstError, Result};

/// Momentum SGD state: `v ← α·v + g`, `θ ← θ − ω·v`.
///
/// The velocity is the exponentially decayed sum of past gradients, so a step
/// applies `ω Σ_{t'≤t} α^{t−t'} g_{t'}`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<GradientSet>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(FlstError::config(format!(
                "learning rate must be a finite non-negative number, got {}",
                learning_rate
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(FlstError::config(format!(
                "momentum must lie in [0, 1), got {}",
                momentum
            )));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            velocity: None,
        })
    }

    pub fn velocity(&self) -> Option<&GradientSet> {
        self.velocity.as_ref()
    }

    pub fn reset(&mut self) {
        self.velocity = None;
    }

    /// Replaces the velocity, e.g. after averaging optimizer states across nodes.
    pub fn set_velocity(&mut self, velocity: Option<GradientSet>) {
        self.velocity = velocity;
    }
}

/// One momentum-SGD descent step. Non-finite gradients reject the step and leave
/// both the network and the optimizer untouched.
pub fn sgd_step(net: &mut Mlp, grads: &GradientSet, opt: &mut OptimizerState) -> Result<()> {
    if !grads.matches(net) {
        return Err(FlstError::shape("gradient set does not match network"));
    }
    if !grads.is_finite() {
        return Err(FlstError::numeric("non-finite gradient; step rejected"));
    }
    let velocity = opt
        .velocity
        .get_or_insert_with(|| GradientSet::zeros_like(net));
    if !velocity.matches(net) {
        return Err(FlstError::shape(
            "optimizer velocity does not match network",
        ));
    }
    let (lr, mom) = (opt.learning_rate, opt.momentum);
    for ((p, v), g) in net
        .slices_mut()
        .into_iter()
        .zip(velocity.slices_mut())
        .zip(grads.slices())
    {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mom * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Matrix};

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_parts(
            vec![1, 1],
            vec![Matrix::from_vec(1, 1, vec![w]).unwrap()],
            vec![vec![0.0]],
            vec![Activation::Linear],
        )
        .unwrap()
    }

    fn scalar_grad(g: f64) -> GradientSet {
        GradientSet {
            weights: vec![Matrix::from_vec(1, 1, vec![g]).unwrap()],
            biases: vec![vec![0.0]],
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut net = Mlp::new(&[3, 4, 2], &[Activation::Relu, Activation::Linear], 1).unwrap();
        let before = net.clone();
        let mut opt = OptimizerState::new(0.1, 0.9).unwrap();
        let g = GradientSet::zeros_like(&net);
        sgd_step(&mut net, &g, &mut opt).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut net = scalar_net(2.0);
        let mut opt = OptimizerState::new(0.25, 0.0).unwrap();
        sgd_step(&mut net, &scalar_grad(3.0), &mut opt).unwrap();
        assert_eq!(net.weights()[0].get(0, 0), 2.0 - 0.25 * 3.0);
    }

    #[test]
    fn momentum_trace_accumulates() {
        let mut net = scalar_net(0.0);
        let mut opt = OptimizerState::new(1.0, 0.5).unwrap();
        sgd_step(&mut net, &scalar_grad(1.0), &mut opt).unwrap();
        sgd_step(&mut net, &scalar_grad(1.0), &mut opt).unwrap();
        assert_eq!(net.weights()[0].get(0, 0), -2.5);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut net = scalar_net(1.0);
        let mut opt = OptimizerState::new(0.1, 0.5).unwrap();
        let err = sgd_step(&mut net, &scalar_grad(f64::NAN), &mut opt).unwrap_err();
        assert!(matches!(err, FlstError::Numeric(_)));
        assert_eq!(net.weights()[0].get(0, 0), 1.0);
        assert!(opt.velocity().is_none());
    }

    #[test]
    fn bad_hyperparameters() {
        assert!(OptimizerState::new(-0.1, 0.0).is_err());
        assert!(OptimizerState::new(0.1, 1.0).is_err());
    }
}
