//! On-disk model and pipeline artifacts. A pair is written together and
//! carries one fingerprint; loading refuses pairs that do not belong together.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{FittedModel, ModelKind, TrainedModel};
use crate::net::LayerKind;
use crate::preprocess::FittedPipeline;
use crate::train::TrainReport;

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.json";
pub const PIPELINE_FILE: &str = "pipeline.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub kind: ModelKind,
    pub fingerprint: String,
    /// Layer listing for networks; absent for the baselines.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub manifest: Option<Vec<LayerKind>>,
    pub model: TrainedModel,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_report: Option<TrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineArtifact {
    pub format_version: u32,
    pub fingerprint: String,
    pub pipeline: FittedPipeline,
}

/// A validated pair, ready for prediction.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub kind: ModelKind,
    pub fingerprint: String,
    pub pipeline: FittedPipeline,
    pub model: TrainedModel,
}

/// SHA-256 over the serialized pipeline and model.
pub fn fingerprint(
    kind: ModelKind,
    pipeline: &FittedPipeline,
    model: &TrainedModel,
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&kind)?);
    h.update(serde_json::to_vec(pipeline)?);
    h.update(serde_json::to_vec(model)?);
    Ok(hex::encode(h.finalize()))
}

fn manifest_of(model: &TrainedModel) -> Option<Vec<LayerKind>> {
    match model {
        TrainedModel::Network(n) => Some(n.spec().manifest()),
        _ => None,
    }
}

pub fn to_artifacts(fitted: &FittedModel) -> Result<(ModelArtifact, PipelineArtifact)> {
    let fp = fingerprint(fitted.kind, &fitted.pipeline, &fitted.model)?;
    Ok((
        ModelArtifact {
            format_version: FORMAT_VERSION,
            kind: fitted.kind,
            fingerprint: fp.clone(),
            manifest: manifest_of(&fitted.model),
            model: fitted.model.clone(),
            train_report: fitted.train_report.clone(),
        },
        PipelineArtifact {
            format_version: FORMAT_VERSION,
            fingerprint: fp,
            pipeline: fitted.pipeline.clone(),
        },
    ))
}

/// Writes `model.json` and `pipeline.json` into `dir`.
pub fn save(dir: &Path, fitted: &FittedModel) -> Result<String> {
    let (m, p) = to_artifacts(fitted)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(MODEL_FILE), &m)?;
    write_json(&dir.join(PIPELINE_FILE), &p)?;
    Ok(m.fingerprint)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
}

pub fn load(model_path: &Path, pipeline_path: &Path) -> Result<LoadedModel> {
    let m: ModelArtifact = read_json(model_path)?;
    let p: PipelineArtifact = read_json(pipeline_path)?;
    validate_pair(m, p)
}

/// Loads the pair written by [`save`] from `dir`.
pub fn load_dir(dir: &Path) -> Result<LoadedModel> {
    load(&dir.join(MODEL_FILE), &dir.join(PIPELINE_FILE))
}

pub fn validate_pair(m: ModelArtifact, p: PipelineArtifact) -> Result<LoadedModel> {
    for v in [m.format_version, p.format_version] {
        if v != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported format version {v}, expected {FORMAT_VERSION}"
            )));
        }
    }
    if m.fingerprint != p.fingerprint {
        return Err(Error::Artifact(format!(
            "fingerprint mismatch: model {} vs pipeline {}",
            m.fingerprint, p.fingerprint
        )));
    }
    let actual = fingerprint(m.kind, &p.pipeline, &m.model)?;
    if actual != m.fingerprint {
        return Err(Error::Artifact(format!(
            "contents do not match fingerprint {} (got {actual})",
            m.fingerprint
        )));
    }
    if m.manifest != manifest_of(&m.model) {
        return Err(Error::Artifact(
            "layer manifest does not match the weights".into(),
        ));
    }
    check_input_shape(m.kind, &p.pipeline, &m.model)?;
    Ok(LoadedModel {
        kind: m.kind,
        fingerprint: m.fingerprint,
        pipeline: p.pipeline,
        model: m.model,
    })
}

fn check_input_shape(
    kind: ModelKind,
    pipeline: &FittedPipeline,
    model: &TrainedModel,
) -> Result<()> {
    let n_dense = pipeline.n_dense();
    let bad = |what: String| {
        Err(Error::Artifact(format!(
            "model does not fit the pipeline: {what}"
        )))
    };
    match (kind, model) {
        (ModelKind::AnnEmb | ModelKind::Ann, TrainedModel::Network(net)) => {
            let s = net.spec();
            if s.n_dense != n_dense {
                return bad(format!("{} dense inputs vs {n_dense}", s.n_dense));
            }
            if s.has_embedding()
                && (s.vocab_size != pipeline.vocab_size() || s.max_len != pipeline.max_len())
            {
                return bad("embedding vocabulary or sequence length".into());
            }
            if s.has_embedding() != (pipeline.vocab_size() > 0) {
                return bad("embedding branch presence".into());
            }
        }
        (ModelKind::Linear, TrainedModel::Linear(lin)) => {
            if lin.weights.len() != n_dense {
                return bad(format!(
                    "{} weights vs {n_dense} columns",
                    lin.weights.len()
                ));
            }
        }
        (ModelKind::Logistic, TrainedModel::Logistic(ovr)) => {
            if let Some(c) = ovr.classifiers.iter().find(|c| c.weights.len() != n_dense) {
                return bad(format!("{} weights vs {n_dense} columns", c.weights.len()));
            }
        }
        _ => {
            return bad(format!(
                "kind {} does not match the stored model",
                kind.name()
            ))
        }
    }
    Ok(())
}
