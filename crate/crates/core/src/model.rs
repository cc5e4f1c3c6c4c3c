//! Model families, the common prediction interface, and fitting a
//! pipeline plus model on one training set.

use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_linear, fit_ovr_logistic, LinearModel, LogisticConfig, OvrLogisticModel,
};
use crate::error::{Error, Result};
use crate::eval::stratified_split;
use crate::ingest::Dataset;
use crate::net::{Batch, NetConfig, NetSpec, Network};
use crate::preprocess::{FeatureMatrix, FittedPipeline, TextEncoding};
use crate::rng::{self, Stream};
use crate::train::{train_model, Labeled, TrainConfig, TrainReport};

/// Anything that maps transformed feature rows to scores on the 0..=8 scale.
pub trait Predictor: Sync {
    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>>;
}

impl<F> Predictor for F
where
    F: Fn(&FeatureMatrix) -> Vec<f64> + Sync,
{
    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self(x))
    }
}

const PREDICT_CHUNK: usize = 512;

impl Predictor for Network {
    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.n_rows);
        let mut start = 0;
        while start < x.n_rows {
            let end = (start + PREDICT_CHUNK).min(x.n_rows);
            let batch = Batch {
                n_rows: end - start,
                dense: &x.dense[start * x.n_dense..end * x.n_dense],
                tokens: &x.token_seqs[start * x.max_len..end * x.max_len],
            };
            out.extend(self.predict_batch(batch)?);
            start = end;
        }
        Ok(out)
    }
}

/// The four model families compared by the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Network with a learned embedding of the sector description.
    AnnEmb,
    /// Same network with the sector description one-hot encoded.
    Ann,
    Linear,
    Logistic,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::AnnEmb,
        ModelKind::Ann,
        ModelKind::Linear,
        ModelKind::Logistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AnnEmb => "ann_emb",
            ModelKind::Ann => "ann",
            ModelKind::Linear => "linear",
            ModelKind::Logistic => "logistic",
        }
    }

    pub fn text_encoding(self) -> TextEncoding {
        match self {
            ModelKind::AnnEmb => TextEncoding::Embedding,
            _ => TextEncoding::OneHot,
        }
    }

    pub fn is_network(self) -> bool {
        matches!(self, ModelKind::AnnEmb | ModelKind::Ann)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TrainedModel {
    Network(Network),
    Linear(LinearModel),
    Logistic(OvrLogisticModel),
}

impl Predictor for TrainedModel {
    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Network(m) => m.predict(x),
            TrainedModel::Linear(m) => m.predict(x),
            TrainedModel::Logistic(m) => m.predict(x),
        }
    }
}

/// Settings shared by every model family; each kind reads what it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub logistic: LogisticConfig,
    /// Share of the training side held out for early stopping.
    pub inner_val_frac: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            net: NetConfig::default(),
            train: TrainConfig::default(),
            logistic: LogisticConfig::default(),
            inner_val_frac: 0.2,
        }
    }
}

/// A pipeline and model fitted together on one training set.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub pipeline: FittedPipeline,
    pub model: TrainedModel,
    pub train_report: Option<TrainReport>,
    /// Rows of the training set (local indices) used only for early stopping.
    pub early_stop_rows: Vec<usize>,
}

/// Fits the pipeline on all of `train`, then the model. Network kinds carve
/// a stratified early-stopping split out of `train`; all randomness derives
/// from `seed`.
pub fn fit_model(
    train: &Dataset,
    kind: ModelKind,
    cfg: &ModelConfig,
    seed: u64,
    fitted_on: &str,
) -> Result<FittedModel> {
    let pipeline = FittedPipeline::fit(train, kind.text_encoding(), fitted_on)?;
    let x = pipeline.transform(train)?;
    let targets = train.targets();
    let classes = train.classes();

    let (model, train_report, early_stop_rows) = match kind {
        ModelKind::Linear => (
            TrainedModel::Linear(fit_linear(&x.dense, x.n_dense, &targets)?),
            None,
            Vec::new(),
        ),
        ModelKind::Logistic => (
            TrainedModel::Logistic(fit_ovr_logistic(
                &x.dense,
                x.n_dense,
                &classes,
                &cfg.logistic,
            )?),
            None,
            Vec::new(),
        ),
        ModelKind::AnnEmb | ModelKind::Ann => {
            let labels: Vec<usize> = classes.iter().map(|c| c.index()).collect();
            let all: Vec<usize> = (0..train.len()).collect();
            let (fit_rows, stop_rows) = stratified_split(&all, &labels, cfg.inner_val_frac, seed)?;
            let x_fit = x.select(&fit_rows);
            let x_stop = x.select(&stop_rows);
            let y_fit: Vec<f64> = fit_rows.iter().map(|&i| targets[i]).collect();
            let y_stop: Vec<f64> = stop_rows.iter().map(|&i| targets[i]).collect();

            let spec = NetSpec::new(
                pipeline.n_dense(),
                pipeline.vocab_size(),
                pipeline.max_len(),
                &cfg.net,
                cfg.train.dropout_p,
            );
            let net = Network::new(spec, &mut rng::stream(seed, Stream::Init))?;
            let train_cfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let (net, report) = train_model(
                net,
                Labeled::new(&x_fit, &y_fit)?,
                Labeled::new(&x_stop, &y_stop)?,
                &train_cfg,
            )?;
            (TrainedModel::Network(net), Some(report), stop_rows)
        }
    };
    Ok(FittedModel {
        kind,
        pipeline,
        model,
        train_report,
        early_stop_rows,
    })
}
