//! First-order optimizers over lists of matrices. The same code updates
//! weights or targets.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM: Self = Self::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam { .. } => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(Self::Sgd),
            "adam" => Some(Self::ADAM),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub steps: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::ADAM, lr)
    }

    /// Updates `params` in place from `grads`.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid("parameter and gradient lists differ in length"));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shapes("optimizer step", p.shape(), g.shape()));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.axpy(-self.lr, g)?;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
                    self.v = self.m.clone();
                } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape()) {
                    return Err(Error::invalid("parameters changed shape between Adam steps"));
                }
                let t = (self.steps + 1) as f64;
                let c1 = 1.0 - libm::pow(beta1, t);
                let c2 = 1.0 - libm::pow(beta2, t);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    let pd = p.data_mut();
                    let (md, vd) = (m.data_mut(), v.data_mut());
                    for (i, &gi) in g.data().iter().enumerate() {
                        md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                        vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                        let mh = md[i] / c1;
                        let vh = vd[i] / c2;
                        pd[i] -= self.lr * mh / (libm::sqrt(vh) + eps);
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}
