use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Nadam,
}

/// First/second moment estimates, flattened in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Apply the Nesterov look-ahead (NADAM only).
    pub nesterov: bool,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &Parameters) -> Self {
        let n = params.count();
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            nesterov: kind == OptimizerKind::Nadam,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters) -> Result<()> {
        let n = params.count();
        if grads.count() != n || self.m.len() != n {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, parameters {n}, gradients {}",
                self.m.len(),
                grads.count()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c1_next = 1.0 - b1.powi(t + 1);
        let c2 = 1.0 - b2.powi(t);
        let nesterov = self.kind == OptimizerKind::Nadam && self.nesterov;
        let mut k = 0;
        for (pt, gt) in params.0.iter_mut().zip(&grads.0) {
            for (p, &g) in pt.data.iter_mut().zip(&gt.data) {
                let m = b1 * self.m[k] + (1.0 - b1) * g;
                let v = b2 * self.v[k] + (1.0 - b2) * g * g;
                self.m[k] = m;
                self.v[k] = v;
                let m_hat = if nesterov { b1 * m / c1_next + (1.0 - b1) * g / c1 } else { m / c1 };
                *p -= self.learning_rate * m_hat / ((v / c2).sqrt() + self.epsilon);
                k += 1;
            }
        }
        Ok(())
    }
}

pub fn adam_update(state: &mut OptimizerState, params: &mut Parameters, grads: &Parameters) -> Result<()> {
    debug_assert_eq!(state.kind, OptimizerKind::Adam);
    state.update(params, grads)
}

pub fn nadam_update(state: &mut OptimizerState, params: &mut Parameters, grads: &Parameters) -> Result<()> {
    debug_assert_eq!(state.kind, OptimizerKind::Nadam);
    state.update(params, grads)
}
