//! Patience-based early stopping on a maximized validation metric.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// New best; persist a checkpoint.
    Improved,
    Continue,
    Stop,
}

/// Ties do not count as improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(config_err!("patience must be at least 1"));
        }
        Ok(Self { patience, best: None, best_epoch: 0, stale: 0, epochs: 0 })
    }

    pub fn observe(&mut self, metric: f64) -> Verdict {
        self.epochs += 1;
        if self.best.map_or(true, |b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = self.epochs;
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based epoch of the best metric.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }
}

/// Run a scripted metric sequence; returns the 1-based stopping epoch and
/// the reason.
pub fn simulate(patience: usize, metrics: &[f64]) -> Result<(usize, StopReason)> {
    let mut es = EarlyStopping::new(patience)?;
    for &m in metrics {
        if es.observe(m) == Verdict::Stop {
            return Ok((es.epochs(), StopReason::EarlyStop));
        }
    }
    Ok((es.epochs(), StopReason::MaxEpochs))
}
