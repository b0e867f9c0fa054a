//! First-order optimizers for the training loops.

use crate::dpo::OptimizerKind;
use crate::scalar::Scalar;

/// Optimizer state over a flat parameter vector. A fresh value carries no
/// history, so constructing one at a step boundary resets the optimizer.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd {
        lr: T,
    },
    Adam {
        lr: T,
        beta1: T,
        beta2: T,
        epsilon: T,
        m: Vec<T>,
        v: Vec<T>,
        t: u32,
    },
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, dim: usize) -> Self {
        let lr = T::from_f64(learning_rate);
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam { beta1, beta2, epsilon } => Optimizer::Adam {
                lr,
                beta1: T::from_f64(beta1),
                beta2: T::from_f64(beta2),
                epsilon: T::from_f64(epsilon),
                m: vec![T::zero(); dim],
                v: vec![T::zero(); dim],
                t: 0,
            },
        }
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, theta: &mut [T], grad: &[T]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (w, &g) in theta.iter_mut().zip(grad) {
                    *w = *w - *lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
                m,
                v,
                t,
            } => {
                *t += 1;
                let one = T::one();
                let bc1 = one - beta1.powi(*t as i32);
                let bc2 = one - beta2.powi(*t as i32);
                for i in 0..theta.len() {
                    m[i] = *beta1 * m[i] + (one - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (one - *beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    theta[i] = theta[i] - *lr * m_hat / (v_hat.sqrt() + *epsilon);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_plain_descent() {
        let mut opt = Optimizer::<f64>::new(OptimizerKind::Sgd, 0.1, 2);
        let mut theta = vec![5.0, -3.0];
        opt.step(&mut theta, &[10.0, -6.0]);
        assert_eq!(theta, vec![4.0, -2.4]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction, the first Adam step is lr * g / (|g| + eps).
        let mut opt = Optimizer::<f64>::new(OptimizerKind::default(), 1e-3, 1);
        let mut theta = vec![0.0];
        opt.step(&mut theta, &[2.5]);
        assert!((theta[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_identity_for_sgd() {
        let mut opt = Optimizer::<f64>::new(OptimizerKind::Sgd, 0.5, 3);
        let mut theta = vec![1.0, 2.0, 3.0];
        opt.step(&mut theta, &[0.0; 3]);
        assert_eq!(theta, vec![1.0, 2.0, 3.0]);
    }
}
