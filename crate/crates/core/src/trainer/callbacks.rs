//! Plateau learning-rate decay and early stopping as a pure state machine.

use super::{EpochRow, Monitor, TrainConfig, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallbackAction {
    Continue,
    /// The rate for the next epoch was multiplied by the decay factor.
    Decayed,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    /// Last completed epoch, 1-based; 0 before training.
    pub epoch: usize,
    /// Rate for the next epoch.
    pub current_lr: f64,
    pub best_value: f64,
    /// 0 until the first epoch completes.
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub epochs_since_lr_action: usize,
    pub decays: u32,
    pub history: Vec<EpochRow>,
}

impl TrainerState {
    pub fn new(cfg: &TrainConfig) -> Self {
        TrainerState {
            epoch: 0,
            current_lr: cfg.initial_lr,
            best_value: match cfg.monitor {
                Monitor::ValLoss => f64::INFINITY,
                Monitor::ValAccuracy => f64::NEG_INFINITY,
            },
            best_epoch: 0,
            epochs_since_improvement: 0,
            epochs_since_lr_action: 0,
            decays: 0,
            history: Vec::new(),
        }
    }

    pub fn improves(&self, value: f64, cfg: &TrainConfig) -> bool {
        match cfg.monitor {
            Monitor::ValLoss => value < self.best_value - cfg.min_delta,
            Monitor::ValAccuracy => value > self.best_value + cfg.min_delta,
        }
    }
}

/// Advance the callbacks by one completed epoch.
///
/// A strict improvement resets both counters. Otherwise both count up; the
/// early-stop check runs first, and when it does not fire the rate decays once
/// `lr_patience` stagnant epochs have accumulated since the last improvement
/// or decay. Decaying leaves the early-stop counter alone.
pub fn step_callbacks(state: &mut TrainerState, value: f64, cfg: &TrainConfig) -> Result<CallbackAction, TrainError> {
    if !value.is_finite() {
        return Err(TrainError::NonFinite {
            epoch: state.epoch + 1,
            what: format!("monitored {} = {value}", cfg.monitor),
        });
    }
    state.epoch += 1;
    if state.improves(value, cfg) {
        state.best_value = value;
        state.best_epoch = state.epoch;
        state.epochs_since_improvement = 0;
        state.epochs_since_lr_action = 0;
        return Ok(CallbackAction::Continue);
    }
    state.epochs_since_improvement += 1;
    state.epochs_since_lr_action += 1;
    if state.epochs_since_improvement >= cfg.early_stop_patience {
        return Ok(CallbackAction::Stop);
    }
    if state.epochs_since_lr_action >= cfg.lr_patience {
        state.decays += 1;
        state.current_lr = cfg.initial_lr * cfg.lr_decay_factor.powi(state.decays as i32);
        state.epochs_since_lr_action = 0;
        return Ok(CallbackAction::Decayed);
    }
    Ok(CallbackAction::Continue)
}
