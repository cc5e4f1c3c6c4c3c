//! The CLI commands. Each is a pure function of its config, the files the
//! config names and the seed; everything it writes lands under the output
//! directory next to a `run.json` manifest.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::{self, write_json, LoadedModel, FORMAT_VERSION};
use crate::domain::discretize;
use crate::error::{Error, Result};
use crate::eval::{cross_validate, CvConfig, EvalReport, HeldOutPrediction};
use crate::explain::{
    explain_rows, force_plot_data, importance, summary_plot_data, Background, ShapExplanation,
    ShapMethod, DEFAULT_BACKGROUND_SIZE, DEFAULT_N_SAMPLES, MAX_EXACT_GROUPS,
};
use crate::ingest::{generate_synthetic, load_csv, write_csv, Dataset, FeatureSchema, SynthSpec};
use crate::model::{fit_model, ModelConfig, ModelKind, Predictor};

pub const RUN_MANIFEST: &str = "run.json";

/// Where a command reads its rows from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv(CsvSource),
    Synthetic(SynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: SchemaRef,
}

/// A schema given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaRef {
    Inline(FeatureSchema),
    Path(PathBuf),
}

impl DataSource {
    /// Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(spec) => generate_synthetic(spec),
            DataSource::Csv(src) => {
                let schema = match &src.schema {
                    SchemaRef::Inline(s) => s.clone(),
                    SchemaRef::Path(p) => {
                        let p = base.join(p);
                        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                        serde_json::from_str(&text)
                            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                    }
                };
                load_csv(base.join(&src.path), &schema)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub spec: SynthSpec,
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: DataSource,
    pub models: Vec<ModelKind>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: DataSource,
    pub kind: ModelKind,
    #[serde(default)]
    pub model: ModelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// Exact when the groups fit the enumeration limit, kernel otherwise.
    #[default]
    Auto,
    Exact,
    Kernel,
}

fn default_n_samples() -> usize {
    DEFAULT_N_SAMPLES
}

fn default_background_size() -> usize {
    DEFAULT_BACKGROUND_SIZE
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Rows to explain and draw the background from.
    pub data: DataSource,
    /// Directory holding `model.json` and `pipeline.json`.
    pub artifacts: PathBuf,
    pub rows: Vec<usize>,
    #[serde(default)]
    pub method: MethodChoice,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_background_size")]
    pub background_size: usize,
    #[serde(default = "yes")]
    pub svg: bool,
}

/// Flag values that beat the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Resolved run settings.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    /// Directory relative config paths resolve against.
    pub base_dir: PathBuf,
}

impl Context {
    pub fn resolve(
        file_seed: Option<u64>,
        file_out: Option<&Path>,
        overrides: &Overrides,
        base_dir: &Path,
    ) -> Result<Self> {
        let seed = overrides.seed.or(file_seed).ok_or_else(|| {
            Error::Config("missing field `seed` (set it in the config or pass --seed)".into())
        })?;
        let out = match (&overrides.out, file_out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => base_dir.join(o),
            (None, None) => {
                return Err(Error::Config(
                    "missing field `out` (set it in the config or pass --out)".into(),
                ))
            }
        };
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Context {
            seed,
            out,
            base_dir: base_dir.to_path_buf(),
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }
}

/// Provenance record; its timestamp is the only non-reproducible output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub created_unix: u64,
    pub outputs: Vec<String>,
}

fn write_manifest<T: Serialize>(
    ctx: &Context,
    command: &str,
    cfg: &T,
    outputs: Vec<String>,
) -> Result<RunManifest> {
    let cfg_json = serde_json::to_vec(cfg)?;
    let versions = BTreeMap::from([
        (
            "shadow_rating".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        ),
        ("artifact_format".to_string(), FORMAT_VERSION.to_string()),
    ]);
    let manifest = RunManifest {
        command: command.to_string(),
        config_hash: hex::encode(Sha256::digest(&cfg_json)),
        seed: ctx.seed,
        versions,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        outputs,
    };
    write_json(&ctx.out.join(RUN_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Parses a config file; serde names any missing or unknown field.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub n_rows: usize,
    pub csv_sha256: String,
}

/// Writes `data.csv`, `schema.json` and `synth.json`.
pub fn cmd_synth(mut cfg: SynthConfig, ctx: &Context) -> Result<SynthManifest> {
    cfg.spec.seed = ctx.seed;
    cfg.seed = Some(ctx.seed);
    let data = generate_synthetic(&cfg.spec)?;
    let csv_path = ctx.out.join("data.csv");
    write_csv(&csv_path, &data)?;
    let bytes = fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_json(&ctx.out.join("schema.json"), data.schema())?;
    let manifest = SynthManifest {
        spec: cfg.spec.clone(),
        n_rows: data.len(),
        csv_sha256: hex::encode(Sha256::digest(&bytes)),
    };
    write_json(&ctx.out.join("synth.json"), &manifest)?;
    cfg.out = None;
    write_manifest(
        ctx,
        "synth",
        &cfg,
        vec!["data.csv".into(), "schema.json".into(), "synth.json".into()],
    )?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub k: usize,
    pub n_rows: usize,
    pub models: Vec<EvalReport>,
}

fn predictions_csv(preds: &[HeldOutPrediction]) -> String {
    let mut s = String::from("row,fold,score,predicted,actual\n");
    for p in preds {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            p.row, p.fold, p.score, p.predicted, p.actual
        ));
    }
    s
}

/// Cross-validates every requested model kind and writes `report.json`
/// plus per-model confusion matrices, class tables and held-out scores.
pub fn cmd_evaluate(mut cfg: EvaluateConfig, ctx: &Context) -> Result<ComparisonReport> {
    if cfg.models.is_empty() {
        return Err(Error::Config("`models` lists no model kinds".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = cfg.models.iter().find(|m| !seen.insert(**m)) {
        return Err(Error::Config(format!(
            "model kind {} listed twice",
            dup.name()
        )));
    }
    let data = cfg.data.load(&ctx.base_dir)?;
    let cv = CvConfig {
        k: cfg.k,
        seed: ctx.seed,
        model: cfg.model.clone(),
    };
    let mut reports = Vec::with_capacity(cfg.models.len());
    let mut outputs = vec!["report.json".to_string()];
    for &kind in &cfg.models {
        log::info!(
            "cross-validating {} ({} folds, {} rows)",
            kind.name(),
            cfg.k,
            data.len()
        );
        let outcome = cross_validate(&data, kind, &cv)?;
        let r = &outcome.report;
        log::info!(
            "{}: QWK {:.4} ± {:.4}",
            kind.name(),
            r.qwk_mean,
            r.qwk_std_over_folds
        );
        let name = kind.name();
        let files = [
            (format!("{name}/confusion.csv"), r.confusion.to_csv()),
            (
                format!("{name}/confusion.svg"),
                r.confusion
                    .to_svg(&format!("{name} (pooled over {} folds)", cfg.k)),
            ),
            (
                format!("{name}/class_metrics.csv"),
                r.class_metrics.to_csv(),
            ),
            (
                format!("{name}/predictions.csv"),
                predictions_csv(&outcome.predictions),
            ),
        ];
        for (file, contents) in files {
            ctx.write(&file, &contents)?;
            outputs.push(file);
        }
        reports.push(outcome.report);
    }
    let report = ComparisonReport {
        seed: ctx.seed,
        k: cfg.k,
        n_rows: data.len(),
        models: reports,
    };
    write_json(&ctx.out.join("report.json"), &report)?;
    cfg.seed = Some(ctx.seed);
    cfg.out = None;
    write_manifest(ctx, "evaluate", &cfg, outputs)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub fingerprint: String,
    /// Held-in scores of every row, in data order.
    pub scores: Vec<f64>,
}

/// Fits the pipeline and model on the whole dataset and writes the artifact
/// pair, the training report and held-in predictions.
pub fn cmd_train(mut cfg: TrainRunConfig, ctx: &Context) -> Result<TrainOutcome> {
    let data = cfg.data.load(&ctx.base_dir)?;
    let fitted = fit_model(&data, cfg.kind, &cfg.model, ctx.seed, "full")?;
    let fingerprint = artifact::save(&ctx.out, &fitted)?;
    let mut outputs = vec![
        artifact::MODEL_FILE.to_string(),
        artifact::PIPELINE_FILE.to_string(),
    ];
    if let Some(report) = &fitted.train_report {
        write_json(&ctx.out.join("train_report.json"), report)?;
        outputs.push("train_report.json".into());
    }
    let x = fitted.pipeline.transform(&data)?;
    let scores = fitted.model.predict(&x)?;
    let mut csv = String::from("row,score,predicted,actual\n");
    for (i, (s, r)) in scores.iter().zip(data.rows()).enumerate() {
        let predicted = discretize(*s)?;
        csv.push_str(&format!("{i},{s},{predicted},{}\n", r.class()));
    }
    ctx.write("predictions.csv", &csv)?;
    outputs.push("predictions.csv".into());
    cfg.seed = Some(ctx.seed);
    cfg.out = None;
    write_manifest(ctx, "train", &cfg, outputs)?;
    Ok(TrainOutcome {
        fingerprint,
        scores,
    })
}

/// Explains the configured rows with a model artifact pair: one force-plot
/// JSON per row, importance and summary CSVs, optional SVG charts.
pub fn cmd_explain(mut cfg: ExplainConfig, ctx: &Context) -> Result<Vec<ShapExplanation>> {
    let LoadedModel {
        pipeline, model, ..
    } = artifact::load_dir(&ctx.base_dir.join(&cfg.artifacts))?;
    if cfg.rows.is_empty() {
        return Err(Error::Config("`rows` lists no rows to explain".into()));
    }
    let data = cfg.data.load(&ctx.base_dir)?;
    if let Some(&r) = cfg.rows.iter().find(|&&r| r >= data.len()) {
        return Err(Error::Bounds(format!(
            "row {r} requested but the data has {} rows",
            data.len()
        )));
    }
    let x = pipeline.transform(&data)?;
    let labels: Vec<usize> = data.classes().iter().map(|c| c.index()).collect();
    let bg = Background::stratified(&x, &labels, cfg.background_size, ctx.seed)?;
    let method = match cfg.method {
        MethodChoice::Exact => ShapMethod::Exact,
        MethodChoice::Kernel => ShapMethod::Kernel {
            n_samples: cfg.n_samples,
        },
        MethodChoice::Auto if x.groups.len() <= MAX_EXACT_GROUPS => ShapMethod::Exact,
        MethodChoice::Auto => ShapMethod::Kernel {
            n_samples: cfg.n_samples,
        },
    };
    let mut exps = explain_rows(&model, &x, &cfg.rows, &bg, method, ctx.seed)?;

    let mut outputs = Vec::new();
    for (e, &row) in exps.iter_mut().zip(&cfg.rows) {
        e.set_text_display(&x.groups, &data.rows()[row].text);
        let mut fp = force_plot_data(e);
        fp.row = Some(row);
        let name = format!("force_plots/row_{row}.json");
        ctx.write(&name, &(fp.to_json()? + "\n"))?;
        outputs.push(name);
    }
    let table = importance(&exps)?;
    let summary = summary_plot_data(&exps)?;
    ctx.write("importance.csv", &table.to_csv()?)?;
    ctx.write("summary.csv", &summary.to_csv()?)?;
    outputs.extend(["importance.csv".to_string(), "summary.csv".to_string()]);
    if cfg.svg {
        ctx.write("importance.svg", &table.to_svg())?;
        ctx.write("summary.svg", &summary.to_svg())?;
        outputs.extend(["importance.svg".to_string(), "summary.svg".to_string()]);
    }
    cfg.seed = Some(ctx.seed);
    cfg.out = None;
    write_manifest(ctx, "explain", &cfg, outputs)?;
    Ok(exps)
}
