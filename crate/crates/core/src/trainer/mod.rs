//! Mini-batch training of the recurrent head over cached backbone features.
//!
//! The backbone is frozen, so each clip is embedded once up front and the
//! loop only touches [`RecurrentHead`] parameters. Per-sample gradients are
//! computed in parallel and summed in sample order, which keeps runs
//! bit-identical for a given seed.

mod callbacks;
mod history;

pub use callbacks::{step_callbacks, CallbackAction, TrainerState};
pub use history::{read_history, write_history, EpochRow, HISTORY_COLUMNS};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::BinaryLabel;
use crate::model::{bce_with_logit, predict, FeatureSequence, Model, ModelError, RecurrentHead};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("non-finite value at epoch {epoch}: {what}")]
    NonFinite { epoch: usize, what: String },
    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error("history file {path}: {reason}")]
    History { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValAccuracy,
}

impl Monitor {
    pub fn as_str(self) -> &'static str {
        match self {
            Monitor::ValLoss => "val_loss",
            Monitor::ValAccuracy => "val_accuracy",
        }
    }

    pub fn pick(self, row: &EpochRow) -> f64 {
        match self {
            Monitor::ValLoss => row.val_loss,
            Monitor::ValAccuracy => row.val_accuracy,
        }
    }
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Monitor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "val_loss" => Ok(Monitor::ValLoss),
            "val_accuracy" => Ok(Monitor::ValAccuracy),
            other => Err(format!("unknown monitor `{other}` (val_loss | val_accuracy)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub max_epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub monitor: Monitor,
    pub min_delta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.001,
            max_epochs: 30,
            lr_decay_factor: 0.5,
            lr_patience: 3,
            early_stop_patience: 7,
            monitor: Monitor::ValLoss,
            min_delta: 0.0,
            batch_size: 4,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must lie in (0, 1)");
        }
        if self.lr_patience == 0 || self.lr_patience >= self.early_stop_patience {
            return bad("need 0 < lr_patience < early_stop_patience");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad("min_delta must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }
}

/// A labelled, already-embedded clip.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: BinaryLabel,
    pub sequence: FeatureSequence,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best epoch under the monitor.
    pub model: Model,
    pub history: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_value: f64,
    pub stopped_early: bool,
}

/// Adam over the flattened head parameters.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let lr_t = lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t));
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + self.eps);
        }
    }
}

/// Mean loss and accuracy of `head` over `samples` in inference mode.
pub fn measure(head: &RecurrentHead, samples: &[Sample], threshold: f64) -> (f64, f64) {
    let per: Vec<(f64, bool)> = samples
        .par_iter()
        .map(|s| {
            let logit = head.logit(&s.sequence);
            let p = crate::model::gru::sigmoid(logit);
            (bce_with_logit(logit, s.label.target()), predict(p, threshold) == s.label)
        })
        .collect();
    let n = samples.len() as f64;
    let loss = per.iter().map(|(l, _)| l).sum::<f64>() / n;
    let acc = per.iter().filter(|(_, c)| *c).count() as f64 / n;
    (loss, acc)
}

fn dropout_mask(width: usize, rate: f64, rng: &mut ChaCha8Rng) -> Option<Array1<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(Array1::from_shape_simple_fn(width, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }))
}

/// Train `model`'s head. Returns the best-epoch parameters and the history.
pub fn train(model: Model, train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    for s in train_set.iter().chain(val_set) {
        model
            .check_sequence(&s.sequence)
            .map_err(|source| TrainError::Sample { id: s.id.clone(), source })?;
    }

    let threshold = model.config.classification_threshold;
    let rate = model.config.dropout_rate;
    let width = *model.config.recurrent_layers.last().expect("validated non-empty");
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.head.param_count(), cfg);
    let mut params = model.head.to_flat();
    let mut best = params.clone();
    let mut state = TrainerState::new(cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = state.current_lr;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let masks: Vec<Option<Array1<f64>>> = batch.iter().map(|_| dropout_mask(width, rate, &mut rng)).collect();
            let head = &model.head;
            let grads: Vec<(f64, RecurrentHead)> = batch
                .par_iter()
                .zip(masks.par_iter())
                .map(|(&i, mask)| {
                    let s = &train_set[i];
                    let (loss, _, g) = head.loss_and_grad(&s.sequence, s.label.target(), mask.as_ref());
                    (loss, g)
                })
                .collect();
            let mut total = model.head.zeros_like();
            for (i, (loss, g)) in batch.iter().zip(&grads) {
                if !loss.is_finite() || !g.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        what: format!("training loss on sample {}", train_set[*i].id),
                    });
                }
                total.add_scaled(g, 1.0 / batch.len() as f64);
            }
            adam.step(&mut params, &total.to_flat(), lr);
            model.head.set_flat(&params);
        }

        let (train_loss, train_accuracy) = measure(&model.head, train_set, threshold);
        let (val_loss, val_accuracy) = measure(&model.head, val_set, threshold);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                what: format!("train_loss = {train_loss}, val_loss = {val_loss}"),
            });
        }
        let row = EpochRow { epoch, train_loss, train_accuracy, val_loss, val_accuracy, lr };
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.4} train_acc {train_accuracy:.4} val_loss {val_loss:.4} val_acc {val_accuracy:.4} lr {lr}"
        );
        state.history.push(row);
        let action = step_callbacks(&mut state, cfg.monitor.pick(&row), cfg)?;
        if state.best_epoch == epoch {
            best.clone_from(&params);
        }
        match action {
            CallbackAction::Stop => {
                log::info!("early stop after epoch {epoch}; best epoch {}", state.best_epoch);
                stopped_early = true;
                break;
            }
            CallbackAction::Decayed => log::info!("learning rate -> {}", state.current_lr),
            CallbackAction::Continue => {}
        }
    }

    model.head.set_flat(&best);
    Ok(TrainOutcome {
        model,
        history: state.history,
        best_epoch: state.best_epoch,
        best_value: state.best_value,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use ndarray::Array2;

    fn model() -> Model {
        let cfg = ModelConfig { backbone_id: "tiny_conv".into(), recurrent_layers: vec![6, 4], ..Default::default() };
        let pre = cfg.preprocess_defaults().unwrap();
        let m = Model::new(&cfg, &pre, 3).unwrap();
        assert_eq!(m.feature_dim(), 48);
        m
    }

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { BinaryLabel::Positive } else { BinaryLabel::Negative };
                let shift = if label.is_positive() { 0.8 } else { -0.8 };
                let len = 3 + i % 4;
                let mut features = Array2::zeros((8, 48));
                for t in 0..len {
                    for d in 0..48 {
                        features[[t, d]] = shift + rng.random_range(-0.5..0.5);
                    }
                }
                Sample {
                    id: format!("s{i}"),
                    label,
                    sequence: FeatureSequence { features, mask: (0..8).map(|t| t < len).collect() },
                }
            })
            .collect()
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr_decay_factor: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_patience: 7, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { max_epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn one_epoch_gives_one_row() {
        let cfg = TrainConfig { max_epochs: 1, ..Default::default() };
        let out = train(model(), &samples(6, 1), &samples(4, 2), &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].lr, 0.001);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn empty_sets_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(train(model(), &[], &samples(2, 1), &cfg), Err(TrainError::EmptySet(_))));
        assert!(matches!(train(model(), &samples(2, 1), &[], &cfg), Err(TrainError::EmptySet(_))));
    }

    #[test]
    fn wrong_feature_width_rejected() {
        let mut s = samples(2, 1);
        s[0].sequence.features = Array2::zeros((8, 5));
        assert!(matches!(train(model(), &s, &samples(2, 2), &TrainConfig::default()), Err(TrainError::Sample { .. })));
    }

    #[test]
    fn same_seed_same_history() {
        let cfg = TrainConfig { max_epochs: 5, seed: 11, ..Default::default() };
        let mut m = model();
        m.config.dropout_rate = 0.3;
        let a = train(m.clone(), &samples(8, 1), &samples(4, 2), &cfg).unwrap();
        let b = train(m, &samples(8, 1), &samples(4, 2), &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.head, b.model.head);
    }

    #[test]
    fn restores_best_epoch() {
        let cfg = TrainConfig { max_epochs: 12, initial_lr: 0.05, ..Default::default() };
        let val = samples(4, 2);
        let out = train(model(), &samples(8, 1), &val, &cfg).unwrap();
        let best = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        let (v, _) = measure(&out.model.head, &val, 0.5);
        assert_eq!(v, best);
        assert_eq!(out.history[out.best_epoch - 1].val_loss, best);
    }

    #[test]
    fn learns_separable_features() {
        let cfg = TrainConfig { max_epochs: 30, initial_lr: 0.01, ..Default::default() };
        let out = train(model(), &samples(8, 1), &samples(4, 2), &cfg).unwrap();
        assert!(out.history.iter().any(|r| r.train_accuracy == 1.0));
    }
}
