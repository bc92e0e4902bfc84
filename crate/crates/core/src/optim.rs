//! Adam optimizer.

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Adam state: step count plus first/second moment estimates per parameter.
#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S, param_shapes: &[&[usize]]) -> Self {
        Self {
            lr,
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            step: 0,
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_params(lr: S, params: &[Tensor<S>]) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        Self::new(lr, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Restore moment buffers and step count from a checkpoint.
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<S>>, v: Vec<Tensor<S>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    pub fn moments(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>]) -> Result<(), TensorError> {
        assert_eq!(params.len(), grads.len(), "params/grads arity mismatch");
        self.step += 1;
        let t = self.step as f64;
        let bc1 = S::one() - self.beta1.powi(self.step as i32);
        let bc2 = S::one() - self.beta2.powi(self.step as i32);
        let _ = t;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = p.data_mut();
            let gd = g.data();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (S::one() - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (S::one() - self.beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] = pd[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut params = vec![Tensor::<f64>::from_vec(vec![2], vec![1.0, -2.0]).unwrap()];
        let grads = vec![Tensor::<f64>::zeros(&[2])];
        let mut opt = Adam::for_params(0.1, &params);
        for _ in 0..5 {
            opt.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // With constant unit gradient, the bias-corrected first update is
        // lr * g / (|g| + eps) ~= lr.
        let mut params = vec![Tensor::<f64>::scalar(0.0)];
        let grads = vec![Tensor::<f64>::scalar(1.0)];
        let mut opt = Adam::for_params(0.1, &params);
        opt.step(&mut params, &grads).unwrap();
        assert!((params[0].data()[0] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = ||x||^2, gradient 2x; 500 steps from x0 = 1 reach ||x|| < 1e-3.
        let mut params = vec![Tensor::<f64>::ones(&[4])];
        let mut opt = Adam::for_params(0.05, &params);
        for _ in 0..500 {
            let grads = vec![params[0].scale(2.0)];
            opt.step(&mut params, &grads).unwrap();
        }
        assert!(params[0].norm() < 1e-3, "norm = {}", params[0].norm());
    }
}
