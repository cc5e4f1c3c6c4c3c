//! Agreement metrics, stratified folds and cross-validated evaluation.

use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{discretize, RatingClass, N_CLASSES};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{fit_model, ModelConfig, ModelKind, Predictor};
use crate::rng::{self, Stream};

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Bounds(format!("label {l} outside 0..{n_classes}")));
    }
    Ok(())
}

/// Quadratic weighted kappa between two raters.
///
/// With weights `(i - j)² / (n - 1)²` the observed and chance-expected
/// disagreement reduce to sums over the label vectors:
///
/// ```text
/// Σ w·O ∝ Σ (t - p)²
/// Σ w·E ∝ Σ t² + Σ p² - 2 (Σ t)(Σ p) / N
/// ```
///
/// so κ is computed from integer moments without building the matrices.
/// When the expected disagreement is zero (both raters constant and equal)
/// κ is defined as 1.
pub fn qwk(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Numeric(format!(
            "qwk needs equal non-zero lengths, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::Numeric("qwk needs at least two classes".into()));
    }
    check_labels(y_true, n_classes)?;
    check_labels(y_pred, n_classes)?;

    let n = y_true.len() as i128;
    let (mut st, mut sp, mut st2, mut sp2, mut sd2) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let (t, p) = (t as i128, p as i128);
        st += t;
        sp += p;
        st2 += t * t;
        sp2 += p * p;
        sd2 += (t - p) * (t - p);
    }
    // Both sides scaled by N to stay in integers.
    let observed = n * sd2;
    let expected = n * (st2 + sp2) - 2 * st * sp;
    if expected == 0 {
        if observed == 0 {
            return Ok(1.0);
        }
        return Err(Error::Numeric(
            "qwk undefined: zero expected disagreement with off-diagonal counts".into(),
        ));
    }
    Ok(1.0 - observed as f64 / expected as f64)
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn get(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class][pred_class]
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|c| self.counts[c][c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::Numeric("confusion matrices differ in size".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Header row of predicted classes; each line starts with the true class.
    pub fn to_csv(&self) -> String {
        let names = class_names(self.n_classes);
        let mut s = String::from("true\\pred");
        for n in &names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (name, row) in names.iter().zip(&self.counts) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Heatmap with true classes on the vertical axis and predicted classes
    /// on the horizontal axis; cell shade is the row-normalized count.
    pub fn to_svg(&self, title: &str) -> String {
        let names = class_names(self.n_classes);
        let cell = 44.0;
        let (left, top) = (70.0, 60.0);
        let size = cell * self.n_classes as f64;
        let mut s = String::new();
        let _ = write!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#,
            w = left + size + 20.0,
            h = top + size + 50.0
        );
        let _ = write!(
            s,
            r#"<text x="{x}" y="20" text-anchor="middle" font-size="14">{t}</text>"#,
            x = left + size / 2.0,
            t = xml_escape(title)
        );
        for (i, name) in names.iter().enumerate() {
            let row_total = self.row_sum(i).max(1) as f64;
            let _ = write!(
                s,
                r#"<text x="{x}" y="{y}" text-anchor="end">{name}</text>"#,
                x = left - 8.0,
                y = top + cell * i as f64 + cell / 2.0 + 4.0
            );
            let _ = write!(
                s,
                r#"<text x="{x}" y="{y}" text-anchor="middle">{name}</text>"#,
                x = left + cell * i as f64 + cell / 2.0,
                y = top + size + 18.0
            );
            for j in 0..self.n_classes {
                let v = self.counts[i][j];
                let shade = v as f64 / row_total;
                let level = (255.0 * (1.0 - shade)).round() as u8;
                let _ = write!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({level},{level},255)" stroke="#999"/>"##,
                    x = left + cell * j as f64,
                    y = top + cell * i as f64
                );
                let colour = if shade > 0.5 { "white" } else { "black" };
                let _ = write!(
                    s,
                    r#"<text x="{x}" y="{y}" text-anchor="middle" fill="{colour}">{v}</text>"#,
                    x = left + cell * j as f64 + cell / 2.0,
                    y = top + cell * i as f64 + cell / 2.0 + 4.0
                );
            }
        }
        let _ = write!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="middle">predicted</text>"#,
            x = left + size / 2.0,
            y = top + size + 40.0
        );
        let _ = write!(
            s,
            r#"<text x="14" y="{y}" text-anchor="middle" transform="rotate(-90 14 {y})">true</text>"#,
            y = top + size / 2.0
        );
        s.push_str("</svg>\n");
        s
    }
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn class_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|c| {
            RatingClass::from_target(c as u8)
                .map(|r| r.name().to_string())
                .unwrap_or_else(|| c.to_string())
        })
        .collect()
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Numeric(format!(
            "confusion needs equal lengths, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    check_labels(y_true, n_classes)?;
    check_labels(y_pred, n_classes)?;
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub classes: Vec<ClassScore>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1; every 0/0 is reported as 0.
pub fn class_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let names = class_names(cm.n_classes);
    let classes = (0..cm.n_classes)
        .map(|c| {
            let tp = cm.counts[c][c];
            let fp = cm.col_sum(c) - tp;
            let fn_ = cm.row_sum(c) - tp;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScore {
                class: names[c].clone(),
                precision,
                recall,
                f1,
                support: tp + fn_,
            }
        })
        .collect();
    ClassMetrics { classes }
}

impl ClassMetrics {
    /// Rows precision / recall / f1 / support, one column per class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric");
        for c in &self.classes {
            let _ = write!(s, ",{}", c.class);
        }
        s.push('\n');
        let line = |s: &mut String, name: &str, f: &dyn Fn(&ClassScore) -> String| {
            s.push_str(name);
            for c in &self.classes {
                let _ = write!(s, ",{}", f(c));
            }
            s.push('\n');
        };
        line(&mut s, "precision", &|c| format!("{:.4}", c.precision));
        line(&mut s, "recall", &|c| format!("{:.4}", c.recall));
        line(&mut s, "f1", &|c| format!("{:.4}", c.f1));
        line(&mut s, "support", &|c| c.support.to_string());
        s
    }
}

/// Disjoint folds covering every row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Sorted row indices per fold.
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Row indices outside fold `f`, sorted.
    pub fn training_rows(&self, f: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

/// Per class, shuffles that class's rows and deals them round-robin into
/// `k` folds. Dealing continues across classes where the previous class
/// stopped, which keeps fold sizes within one of each other overall as well.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the number of rows ({})",
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = rng::stream(seed, Stream::Folds);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for c in 0..n_classes {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() < k {
            warn!(
                "class {c} has {} rows, fewer than k = {k}; some folds will not contain it",
                rows.len()
            );
        }
        rows.shuffle(&mut rng);
        for r in rows {
            folds[next].push(r);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Stratified holdout of `frac` of `rows` (indices into `labels`). Returns
/// `(kept, held_out)`, both sorted. Each class contributes
/// `round(frac · count)` rows to the holdout.
pub fn stratified_split(
    rows: &[usize],
    labels: &[usize],
    frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must lie in (0, 1), got {frac}"
        )));
    }
    let mut rng = rng::stream(seed, Stream::InnerSplit);
    let n_classes = rows.iter().map(|&r| labels[r]).max().map_or(0, |m| m + 1);
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut members: Vec<usize> = rows.iter().copied().filter(|&r| labels[r] == c).collect();
        members.shuffle(&mut rng);
        let take = (frac * members.len() as f64).round() as usize;
        held.extend_from_slice(&members[..take]);
        kept.extend_from_slice(&members[take..]);
    }
    if held.is_empty() || kept.is_empty() {
        return Err(Error::Config(format!(
            "a {frac} holdout of {} rows leaves one side empty",
            rows.len()
        )));
    }
    kept.sort_unstable();
    held.sort_unstable();
    Ok((kept, held))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub n_early_stop: usize,
    pub n_test: usize,
    pub qwk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_run: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub k: usize,
    pub n_rows: usize,
    pub per_fold_qwk: Vec<f64>,
    pub qwk_mean: f64,
    /// Sample standard deviation of the per-fold QWK values.
    pub qwk_std_over_folds: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub per_fold_confusion: Vec<ConfusionMatrix>,
    pub class_metrics: ClassMetrics,
    pub folds: Vec<FoldSummary>,
    pub config_fingerprint: String,
}

/// Held-out prediction for one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub row: usize,
    pub fold: usize,
    pub score: f64,
    pub predicted: RatingClass,
    pub actual: RatingClass,
}

/// Row sets used by one fold; indices refer to the full dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRows {
    pub fold: usize,
    pub test: Vec<usize>,
    pub train: Vec<usize>,
    /// Subset of `train` used only for early stopping.
    pub early_stop: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: EvalReport,
    pub predictions: Vec<HeldOutPrediction>,
    pub fold_rows: Vec<FoldRows>,
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn config_fingerprint(kind: ModelKind, cfg: &CvConfig) -> String {
    let json = serde_json::to_string(&(kind, cfg)).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

struct FoldResult {
    rows: FoldRows,
    predictions: Vec<HeldOutPrediction>,
    confusion: ConfusionMatrix,
    summary: FoldSummary,
}

fn run_fold(
    data: &Dataset,
    labels: &[usize],
    plan: &FoldPlan,
    fold: usize,
    kind: ModelKind,
    cfg: &CvConfig,
) -> Result<FoldResult> {
    let train_rows = plan.training_rows(fold);
    let test_rows = plan.folds[fold].clone();
    let seed = rng::derive(cfg.seed, fold as u64);
    let train = data.subset(&train_rows)?;
    let test = data.subset(&test_rows)?;
    let fitted = fit_model(&train, kind, &cfg.model, seed, &format!("fold-{fold}"))?;

    let x_test = fitted.pipeline.transform(&test)?;
    let scores = fitted.model.predict(&x_test)?;
    let y_pred = scores
        .iter()
        .map(|&s| discretize(s).map(|c| c.index()))
        .collect::<Result<Vec<_>>>()?;
    let y_true: Vec<usize> = test_rows.iter().map(|&r| labels[r]).collect();
    let fold_qwk = qwk(&y_true, &y_pred, N_CLASSES)?;
    let cm = confusion(&y_true, &y_pred, N_CLASSES)?;

    let predictions = test_rows
        .iter()
        .zip(scores.iter().zip(&y_pred))
        .map(|(&row, (&score, &p))| HeldOutPrediction {
            row,
            fold,
            score,
            predicted: RatingClass::ALL[p],
            actual: RatingClass::ALL[labels[row]],
        })
        .collect();
    let early_stop: Vec<usize> = fitted
        .early_stop_rows
        .iter()
        .map(|&i| train_rows[i])
        .collect();
    let summary = FoldSummary {
        fold,
        n_train: train_rows.len() - early_stop.len(),
        n_early_stop: early_stop.len(),
        n_test: test_rows.len(),
        qwk: fold_qwk,
        epochs_run: fitted.train_report.as_ref().map(|r| r.epochs_run),
        best_epoch: fitted.train_report.as_ref().map(|r| r.best_epoch),
    };
    Ok(FoldResult {
        rows: FoldRows {
            fold,
            test: test_rows,
            train: train_rows,
            early_stop,
        },
        predictions,
        confusion: cm,
        summary,
    })
}

/// Stratified K-fold evaluation of one model kind. Each fold fits its own
/// pipeline and model on the other K−1 folds; folds run in parallel on the
/// current rayon pool and are merged in fold order.
pub fn cross_validate(data: &Dataset, kind: ModelKind, cfg: &CvConfig) -> Result<CvOutcome> {
    let labels: Vec<usize> = data.classes().iter().map(|c| c.index()).collect();
    let plan = stratified_folds(&labels, cfg.k, cfg.seed)?;
    let results: Vec<FoldResult> = (0..cfg.k)
        .into_par_iter()
        .map(|f| {
            run_fold(data, &labels, &plan, f, kind, cfg).map_err(|e| Error::Fold {
                model: kind.name().to_string(),
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut pooled = ConfusionMatrix::zeros(N_CLASSES);
    let mut predictions = Vec::with_capacity(data.len());
    let mut per_fold_confusion = Vec::with_capacity(cfg.k);
    let mut folds = Vec::with_capacity(cfg.k);
    let mut fold_rows = Vec::with_capacity(cfg.k);
    for r in results {
        pooled.add(&r.confusion)?;
        per_fold_confusion.push(r.confusion);
        predictions.extend(r.predictions);
        folds.push(r.summary);
        fold_rows.push(r.rows);
    }
    predictions.sort_by_key(|p| p.row);
    let per_fold_qwk: Vec<f64> = folds.iter().map(|f| f.qwk).collect();
    let (qwk_mean, qwk_std) = mean_and_sample_std(&per_fold_qwk);

    let report = EvalReport {
        model: kind,
        k: cfg.k,
        n_rows: data.len(),
        qwk_mean,
        qwk_std_over_folds: qwk_std,
        per_fold_qwk,
        accuracy: pooled.accuracy(),
        class_metrics: class_metrics(&pooled),
        confusion: pooled,
        per_fold_confusion,
        folds,
        config_fingerprint: config_fingerprint(kind, cfg),
    };
    Ok(CvOutcome {
        report,
        predictions,
        fold_rows,
    })
}
