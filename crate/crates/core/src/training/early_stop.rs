use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_val_mcd: f64,
    pub counter: usize,
    pub patience: usize,
    /// Epoch whose parameters are the saved checkpoint.
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    /// Keep training; `improved` means the checkpoint must be replaced.
    Continue {
        improved: bool,
    },
    Stop,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            best_val_mcd: f64::INFINITY,
            counter: 0,
            patience,
            best_epoch: None,
        }
    }
}

/// Strict improvement resets the counter; anything else (ties included)
/// increments it, and training stops once it reaches the patience.
pub fn early_stop_update(state: &mut EarlyStopState, epoch: usize, val_mcd: f64) -> Result<StopDecision> {
    if !val_mcd.is_finite() {
        return data_err(format!("validation MCD {val_mcd} at epoch {epoch}"));
    }
    if val_mcd < state.best_val_mcd {
        state.best_val_mcd = val_mcd;
        state.counter = 0;
        state.best_epoch = Some(epoch);
        return Ok(StopDecision::Continue { improved: true });
    }
    state.counter += 1;
    if state.counter >= state.patience {
        Ok(StopDecision::Stop)
    } else {
        Ok(StopDecision::Continue { improved: false })
    }
}
