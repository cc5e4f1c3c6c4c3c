//! Mini-batch SGD with early stopping on validation QWK.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{discretize, N_CLASSES};
use crate::error::{Error, Result};
use crate::eval::qwk;
use crate::model::Predictor;
use crate::net::{check_finite, Batch, Gradients, Network};
use crate::preprocess::FeatureMatrix;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout_p: f64,
    pub patience: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 150,
            lr: 0.01,
            batch_size: 32,
            dropout_p: 0.5,
            patience: 15,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs_max < 1 {
            return bad("epochs_max must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        Ok(())
    }
}

/// Features with their integer targets (0..=8) as reals.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub features: &'a FeatureMatrix,
    pub targets: &'a [f64],
}

impl<'a> Labeled<'a> {
    pub fn new(features: &'a FeatureMatrix, targets: &'a [f64]) -> Result<Self> {
        if features.n_rows != targets.len() {
            return Err(Error::Config(format!(
                "{} feature rows but {} targets",
                features.n_rows,
                targets.len()
            )));
        }
        if let Some(t) = targets
            .iter()
            .find(|t| !(t.fract() == 0.0 && (0.0..N_CLASSES as f64).contains(*t)))
        {
            return Err(Error::Config(format!(
                "target {t} is not an integer in 0..=8"
            )));
        }
        Ok(Labeled { features, targets })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_qwk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub best_val_qwk: f64,
    /// Inference-mode training MSE of the initial weights.
    pub initial_train_mse: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience bookkeeping: stops after `patience` consecutive epochs without a
/// strict improvement of the monitored score.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter()
        .zip(y)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

/// QWK of discretized scores against integer targets.
pub fn score_qwk(pred: &[f64], targets: &[f64]) -> Result<f64> {
    let y_pred = pred
        .iter()
        .map(|&p| discretize(p).map(|c| c.index()))
        .collect::<Result<Vec<_>>>()?;
    let y_true: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    qwk(&y_true, &y_pred, N_CLASSES)
}

/// Trains `net` and returns the weights of the epoch with the best
/// validation QWK.
pub fn train_model(
    net: Network,
    train: Labeled,
    val: Labeled,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if val.features.n_rows == 0 {
        return Err(Error::Config("validation set is empty".into()));
    }
    if train.features.n_rows == 0 {
        return Err(Error::Config("training set is empty".into()));
    }

    let mut shuffle_rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = rng::stream(cfg.seed, Stream::Dropout);
    let x = train.features;
    let (nd, ml) = (x.n_dense, x.max_len);
    let n = x.n_rows;

    let initial_train_mse = mse(&net.predict(x)?, train.targets);
    let mut net = net;
    let mut best = net.clone();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut velocity: Option<Gradients> = None;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut dense_buf = Vec::with_capacity(cfg.batch_size * nd);
    let mut token_buf = Vec::with_capacity(cfg.batch_size * ml);
    let mut y_buf = Vec::with_capacity(cfg.batch_size);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs_max {
        order.shuffle(&mut shuffle_rng);
        let mut sq_err = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            dense_buf.clear();
            token_buf.clear();
            y_buf.clear();
            for &i in chunk {
                dense_buf.extend_from_slice(x.dense_row(i));
                token_buf.extend_from_slice(x.tokens_row(i));
                y_buf.push(train.targets[i]);
            }
            let batch = Batch {
                n_rows: chunk.len(),
                dense: &dense_buf,
                tokens: &token_buf,
            };
            let (pred, trace) = net.forward_train(batch, &mut dropout_rng)?;
            let batch_sq: f64 = pred.iter().zip(&y_buf).map(|(p, y)| (p - y).powi(2)).sum();
            if !batch_sq.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {b}"
                )));
            }
            sq_err += batch_sq;
            let scale = 2.0 / chunk.len() as f64;
            let d_pred: Vec<f64> = pred
                .iter()
                .zip(&y_buf)
                .map(|(p, y)| scale * (p - y))
                .collect();
            let grads = net.backward(&trace, &d_pred)?;
            let step = if cfg.momentum > 0.0 {
                check_finite(&grads).map_err(|e| with_epoch(e, epoch))?;
                let v = velocity.get_or_insert_with(|| grads.zeros_like());
                for (vs, gs) in v.slices_mut().into_iter().zip(grads.slices()) {
                    for (vi, gi) in vs.iter_mut().zip(gs) {
                        *vi = cfg.momentum * *vi + gi;
                    }
                }
                net.sgd_step(v, cfg.lr)
            } else {
                net.sgd_step(&grads, cfg.lr)
            };
            step.map_err(|e| with_epoch(e, epoch))?;
        }

        let val_qwk = score_qwk(&net.predict(val.features)?, val.targets)?;
        history.push(EpochRecord {
            epoch,
            train_mse: sq_err / n as f64,
            val_qwk,
        });
        match stopper.observe(epoch, val_qwk) {
            StopDecision::Improved => best = net.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = epoch < cfg.epochs_max;
                break;
            }
        }
    }

    let report = TrainReport {
        epochs_run: history.len(),
        best_epoch: stopper.best_epoch(),
        best_val_qwk: stopper.best(),
        initial_train_mse,
        history,
        stopped_early,
    };
    Ok((best, report))
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
        other => other,
    }
}
