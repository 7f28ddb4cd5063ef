use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// SGD or bias-corrected Adam over an ordered list of parameter tensors.
///
/// Moment buffers are allocated on the first step and tied to parameter position,
/// so callers must always pass the same parameters in the same order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::contract(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using each tensor's gradient slot.
    ///
    /// Tensors that do not require gradients are skipped; a trainable tensor
    /// without a gradient is a contract error.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if p.requires_grad() && p.grad().is_none() {
                return Err(Error::contract(format!(
                    "parameter {i} has no gradient at optimizer step"
                )));
            }
        }
        if self.first_moment.is_empty() && self.kind == OptimizerKind::Adam {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.kind == OptimizerKind::Adam && self.first_moment.len() != params.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut().filter(|p| p.requires_grad()) {
                    let g = p.grad.take().expect("checked above");
                    p.data.iter_mut().zip(&g).for_each(|(w, g)| *w -= lr * g);
                    p.grad = Some(g);
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - BETA1.powi(t);
                let bc2 = 1.0 - BETA2.powi(t);
                for (i, p) in params.iter_mut().enumerate() {
                    if !p.requires_grad() {
                        continue;
                    }
                    let m = &mut self.first_moment[i];
                    let v = &mut self.second_moment[i];
                    if m.len() != p.len() {
                        return Err(Error::contract(format!(
                            "moment length {} for parameter of length {}",
                            m.len(),
                            p.len()
                        )));
                    }
                    let g = p.grad.take().expect("checked above");
                    for k in 0..g.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        let m_hat = m[k] / bc1;
                        let v_hat = v[k] / bc2;
                        p.data[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                    p.grad = Some(g);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut theta = Tensor::scalar(1.0).with_grad();
        theta.accumulate_grad(&[1.0]).unwrap();
        let mut opt = Optimizer::sgd(0.1).unwrap();
        opt.step(&mut [&mut theta]).unwrap();
        assert!((theta.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut theta = Tensor::vector(vec![0.3, -2.0]).unwrap().with_grad();
            theta.accumulate_grad(&[0.0, 0.0]).unwrap();
            let mut opt = Optimizer::new(kind, 0.5).unwrap();
            opt.step(&mut [&mut theta]).unwrap();
            assert_eq!(theta.data(), &[0.3, -2.0]);
        }
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let mut theta = Tensor::scalar(5.0).with_grad();
        let mut opt = Optimizer::adam(0.05).unwrap();
        let mut reached = None;
        for step in 1..=500 {
            theta.zero_grad();
            let g = 2.0 * theta.data()[0];
            theta.accumulate_grad(&[g]).unwrap();
            opt.step(&mut [&mut theta]).unwrap();
            if theta.data()[0].abs() < 0.1 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "theta ended at {}", theta.data()[0]);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut theta = Tensor::scalar(1.0).with_grad();
        let mut opt = Optimizer::adam(0.1).unwrap();
        assert!(matches!(
            opt.step(&mut [&mut theta]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut frozen = Tensor::scalar(1.0);
        let mut live = Tensor::scalar(1.0).with_grad();
        live.accumulate_grad(&[1.0]).unwrap();
        let mut opt = Optimizer::sgd(0.1).unwrap();
        opt.step(&mut [&mut frozen, &mut live]).unwrap();
        assert_eq!(frozen.data()[0], 1.0);
    }
}
