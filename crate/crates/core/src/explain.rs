//! Shapley-value attributions over feature groups of the transformed input:
//! exact enumeration for up to 12 groups, kernel-weighted regression
//! otherwise, plus force-plot, importance and summary exports.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{discretize, RatingClass};
use crate::error::{Error, Result};
use crate::eval::xml_escape;
use crate::model::Predictor;
use crate::preprocess::{FeatureGroup, FeatureMatrix, GroupInput};
use crate::rng::{self, Stream};

pub const MAX_EXACT_GROUPS: usize = 12;
pub const DEFAULT_BACKGROUND_SIZE: usize = 16;
pub const DEFAULT_N_SAMPLES: usize = 2048;
const COALITION_CHUNK: usize = 256;
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ShapMethod {
    Exact,
    Kernel { n_samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    /// Mean model output over the background rows.
    pub base_value: f64,
    pub phis: Vec<f64>,
    pub prediction: f64,
    pub feature_names: Vec<String>,
    /// Transformed value per group; the active slot index for one-hot
    /// groups, `None` for token sequences.
    pub feature_values: Vec<Option<f64>>,
    pub feature_display: Vec<String>,
    /// Groups whose raw value was missing and imputed.
    pub imputed: Vec<bool>,
    pub method: ShapMethod,
}

impl ShapExplanation {
    /// |base + Σφ − prediction|.
    pub fn additivity_error(&self) -> f64 {
        (self.base_value + self.phis.iter().sum::<f64>() - self.prediction).abs()
    }

    /// Replaces the display string of token-sequence groups with `text`.
    pub fn set_text_display(&mut self, groups: &[FeatureGroup], text: &str) {
        for (g, d) in groups.iter().zip(&mut self.feature_display) {
            if g.input == GroupInput::Tokens {
                *d = text.to_string();
            }
        }
    }
}

/// Reference rows that stand in for absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    rows: FeatureMatrix,
}

impl Background {
    pub fn new(rows: FeatureMatrix) -> Result<Self> {
        if rows.n_rows == 0 {
            return Err(Error::Config("background set is empty".into()));
        }
        Ok(Background { rows })
    }

    /// `size` rows drawn proportionally from each class (all rows if the
    /// data is smaller).
    pub fn stratified(x: &FeatureMatrix, labels: &[usize], size: usize, seed: u64) -> Result<Self> {
        if labels.len() != x.n_rows {
            return Err(Error::Config(format!(
                "{} labels for {} rows",
                labels.len(),
                x.n_rows
            )));
        }
        if size == 0 {
            return Err(Error::Config("background size must be positive".into()));
        }
        let mut rng = rng::stream(seed, Stream::Background);
        let mut order: Vec<usize> = (0..x.n_rows).collect();
        order.shuffle(&mut rng);
        // Stable sort keeps the shuffled order within each class; systematic
        // sampling along the class-sorted list then stratifies.
        order.sort_by_key(|&i| labels[i]);
        let n = order.len();
        let picked: Vec<usize> = if size >= n {
            order
        } else {
            (0..size)
                .map(|i| order[((2 * i + 1) * n) / (2 * size)])
                .collect()
        };
        Background::new(x.select(&picked))
    }

    pub fn rows(&self) -> &FeatureMatrix {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.n_rows == 0
    }
}

fn same_layout(a: &FeatureMatrix, b: &FeatureMatrix) -> bool {
    a.n_dense == b.n_dense && a.max_len == b.max_len && a.groups == b.groups
}

/// The cooperative game for one row: v(S) averages the model over the
/// background with groups in S taken from the row.
struct Game<'a, P: Predictor + ?Sized> {
    model: &'a P,
    x: &'a FeatureMatrix,
    row: usize,
    bg: &'a FeatureMatrix,
    base: f64,
    prediction: f64,
}

impl<'a, P: Predictor + ?Sized> Game<'a, P> {
    fn new(model: &'a P, x: &'a FeatureMatrix, row: usize, bg: &'a Background) -> Result<Self> {
        if row >= x.n_rows {
            return Err(Error::Bounds(format!("row {row} of {}", x.n_rows)));
        }
        let bg = bg.rows();
        if !same_layout(x, bg) {
            return Err(Error::Config(
                "background rows and explained rows come from different pipelines".into(),
            ));
        }
        let base = mean(&model.predict(bg)?);
        let prediction = model.predict(&x.select(&[row]))?[0];
        if !(base.is_finite() && prediction.is_finite()) {
            return Err(Error::Numeric("model output is not finite".into()));
        }
        Ok(Game {
            model,
            x,
            row,
            bg,
            base,
            prediction,
        })
    }

    fn groups(&self) -> &[FeatureGroup] {
        &self.x.groups
    }

    /// True where some background row differs from the explained row.
    fn varying(&self) -> Vec<bool> {
        let xd = self.x.dense_row(self.row);
        let xt = self.x.tokens_row(self.row);
        self.groups()
            .iter()
            .map(|g| {
                (0..self.bg.n_rows).any(|b| match g.input {
                    GroupInput::Dense { start, len } => {
                        self.bg.dense_row(b)[start..start + len] != xd[start..start + len]
                    }
                    GroupInput::Tokens => self.bg.tokens_row(b) != xt,
                })
            })
            .collect()
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
        let nb = self.bg.n_rows;
        let xd = self.x.dense_row(self.row);
        let xt = self.x.tokens_row(self.row);
        let mut out = Vec::with_capacity(coalitions.len());
        for chunk in coalitions.chunks(COALITION_CHUNK) {
            let mut m = self.bg.empty_like();
            for s in chunk {
                for b in 0..nb {
                    let mut dense = self.bg.dense_row(b).to_vec();
                    let mut tokens = self.bg.tokens_row(b);
                    for (g, &on) in self.groups().iter().zip(s) {
                        if !on {
                            continue;
                        }
                        match g.input {
                            GroupInput::Dense { start, len } => {
                                dense[start..start + len].copy_from_slice(&xd[start..start + len])
                            }
                            GroupInput::Tokens => tokens = xt,
                        }
                    }
                    m.push_row(&dense, tokens);
                }
            }
            let preds = self.model.predict(&m)?;
            out.extend(preds.chunks(nb).map(mean));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("model output is not finite".into()));
        }
        Ok(out)
    }

    fn explanation(&self, phis: Vec<f64>, method: ShapMethod) -> ShapExplanation {
        let xd = self.x.dense_row(self.row);
        let xt = self.x.tokens_row(self.row);
        let mut values = Vec::new();
        let mut display = Vec::new();
        for g in self.groups() {
            match g.input {
                GroupInput::Dense { start, len: 1 } => {
                    values.push(Some(xd[start]));
                    display.push(format!("{:.4}", xd[start]));
                }
                GroupInput::Dense { start, len } => {
                    let slot = xd[start..start + len]
                        .iter()
                        .position(|&v| v != 0.0)
                        .unwrap_or(len - 1);
                    let name = &self.x.dense_names[start + slot];
                    values.push(Some(slot as f64));
                    display.push(
                        name.split_once('=')
                            .map_or(name.as_str(), |(_, c)| c)
                            .to_string(),
                    );
                }
                GroupInput::Tokens => {
                    values.push(None);
                    let ids: Vec<String> = xt.iter().map(u32::to_string).collect();
                    display.push(ids.join(" "));
                }
            }
        }
        ShapExplanation {
            base_value: self.base,
            phis,
            prediction: self.prediction,
            feature_names: self.groups().iter().map(|g| g.name.clone()).collect(),
            feature_values: values,
            feature_display: display,
            imputed: self.x.imputed_row(self.row).to_vec(),
            method,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley values of row `row` of `x` by enumerating all 2ⁿ
/// coalitions of its feature groups.
pub fn shap_exact<P: Predictor + ?Sized>(
    model: &P,
    x: &FeatureMatrix,
    row: usize,
    bg: &Background,
) -> Result<ShapExplanation> {
    let n = x.groups.len();
    if n > MAX_EXACT_GROUPS {
        return Err(Error::Config(format!(
            "{n} feature groups exceed the exact limit of {MAX_EXACT_GROUPS}; use shap_kernel"
        )));
    }
    let game = Game::new(model, x, row, bg)?;
    let full = (1usize << n) - 1;
    // The full coalition also goes through the background average, so a
    // group the model ignores gives bit-identical v(S ∪ j) and v(S).
    let coalitions: Vec<Vec<bool>> = (1..=full)
        .map(|mask| (0..n).map(|j| mask >> j & 1 == 1).collect())
        .collect();
    let mut v = Vec::with_capacity(full + 1);
    v.push(game.base);
    v.extend(game.values(&coalitions)?);

    // |S|!(n−|S|−1)!/n! = 1 / (n · C(n−1, |S|))
    let weight: Vec<f64> = (0..n)
        .map(|s| 1.0 / (n as f64 * binomial(n - 1, s)))
        .collect();
    let phis = (0..n)
        .map(|j| {
            let bit = 1usize << j;
            (0..=full)
                .filter(|m| m & bit == 0)
                .map(|m| weight[m.count_ones() as usize] * (v[m | bit] - v[m]))
                .sum()
        })
        .collect();
    Ok(game.explanation(phis, ShapMethod::Exact))
}

/// Visits every `k`-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Kernel SHAP: whole coalition sizes are enumerated while the budget
/// covers them, the rest sampled with Shapley-kernel weights; φ solves the
/// weighted least-squares problem with Σφ fixed to prediction − base.
pub fn shap_kernel<P: Predictor + ?Sized>(
    model: &P,
    x: &FeatureMatrix,
    row: usize,
    bg: &Background,
    n_samples: usize,
    seed: u64,
) -> Result<ShapExplanation> {
    let n_groups = x.groups.len();
    if n_samples < 2 * n_groups + 2 {
        return Err(Error::Config(format!(
            "n_samples must be at least {} for {n_groups} feature groups, got {n_samples}",
            2 * n_groups + 2
        )));
    }
    let game = Game::new(model, x, row, bg)?;
    let method = ShapMethod::Kernel { n_samples };
    let delta = game.prediction - game.base;
    let active: Vec<usize> = game
        .varying()
        .iter()
        .enumerate()
        .filter_map(|(j, &v)| v.then_some(j))
        .collect();
    let m = active.len();
    let mut phis = vec![0.0; n_groups];
    match m {
        0 => return Ok(game.explanation(phis, method)),
        1 => {
            phis[active[0]] = delta;
            return Ok(game.explanation(phis, method));
        }
        _ => {}
    }

    let (masks, weights) = kernel_coalitions(m, n_samples - 2, seed);
    // Constant groups sit inside every coalition; their values match the
    // background anyway.
    let coalitions: Vec<Vec<bool>> = masks
        .iter()
        .map(|mask| {
            let mut full = vec![true; n_groups];
            for (&j, &on) in active.iter().zip(mask) {
                full[j] = on;
            }
            full
        })
        .collect();
    let v = game.values(&coalitions)?;

    // Eliminate the last active group through the additivity constraint.
    let k = masks.len();
    let last = m - 1;
    let mut a = DMatrix::<f64>::zeros(k, last);
    let mut y = DVector::<f64>::zeros(k);
    for (r, mask) in masks.iter().enumerate() {
        let z_last = if mask[last] { 1.0 } else { 0.0 };
        for j in 0..last {
            a[(r, j)] = (if mask[j] { 1.0 } else { 0.0 }) - z_last;
        }
        y[r] = v[r] - game.base - z_last * delta;
    }
    let w = DVector::from_vec(weights);
    let aw = DMatrix::from_fn(k, last, |r, c| a[(r, c)] * w[r]);
    let lhs = aw.transpose() * &a;
    let rhs = aw.transpose() * y;
    let sol = match lhs.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            log::warn!("kernel SHAP system is singular; adding a {RIDGE:e} ridge");
            let ridged = lhs + DMatrix::<f64>::identity(last, last) * RIDGE;
            ridged
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numeric("kernel SHAP system could not be solved".into()))?
        }
    };
    let mut rest = delta;
    for (j, &g) in active[..last].iter().enumerate() {
        phis[g] = sol[j];
        rest -= sol[j];
    }
    phis[active[last]] = rest;
    if phis.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric(
            "kernel SHAP produced non-finite values".into(),
        ));
    }
    Ok(game.explanation(phis, method))
}

/// Coalitions over `m` players (excluding empty and full) with their
/// regression weights, using at most `budget` distinct coalitions.
fn kernel_coalitions(m: usize, budget: usize, seed: u64) -> (Vec<Vec<bool>>, Vec<f64>) {
    // Sizes 1..=ceil((m−1)/2); size s is paired with m−s when they differ.
    let n_sizes = (m - 1).div_ceil(2);
    let n_paired = (m - 1) / 2;
    let mut size_weight: Vec<f64> = (1..=n_sizes)
        .map(|s| {
            let w = (m - 1) as f64 / (s * (m - s)) as f64;
            if s <= n_paired {
                2.0 * w
            } else {
                w
            }
        })
        .collect();
    let total: f64 = size_weight.iter().sum();
    size_weight.iter_mut().for_each(|w| *w /= total);

    let mut masks: Vec<Vec<bool>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut left = budget as f64;
    let mut remaining = size_weight.clone();
    let mut n_full = 0;
    for (i, s) in (1..=n_sizes).enumerate() {
        let paired = s <= n_paired;
        let n_subsets = binomial(m, s) * if paired { 2.0 } else { 1.0 };
        if left * remaining[i] / n_subsets < 1.0 - 1e-8 {
            break;
        }
        n_full += 1;
        left -= n_subsets;
        if remaining[i] < 1.0 {
            let scale = 1.0 - remaining[i];
            remaining.iter_mut().for_each(|w| *w /= scale);
        }
        let w = size_weight[i] / n_subsets;
        for_each_combination(m, s, |idx| {
            let mut mask = vec![false; m];
            idx.iter().for_each(|&j| mask[j] = true);
            if paired {
                masks.push(mask.iter().map(|b| !b).collect());
                weights.push(w);
            }
            masks.push(mask);
            weights.push(w);
        });
    }

    if n_full < n_sizes {
        let rest = &size_weight[n_full..];
        let weight_left: f64 = rest.iter().sum();
        let dist = WeightedIndex::new(rest).expect("positive kernel weights");
        let mut rng = rng::stream(seed, Stream::ShapSampling);
        let mut slots = left.max(0.0) as usize;
        let mut seen: HashMap<Vec<bool>, usize> = HashMap::new();
        let first_sampled = masks.len();
        let max_draws = 16 * budget.max(1);
        let mut add =
            |mask: Vec<bool>, masks: &mut Vec<Vec<bool>>, weights: &mut Vec<f64>| -> bool {
                if let Some(&i) = seen.get(&mask) {
                    weights[i] += 1.0;
                    false
                } else {
                    seen.insert(mask.clone(), masks.len());
                    masks.push(mask);
                    weights.push(1.0);
                    true
                }
            };
        let mut draws = 0;
        while slots > 0 && draws < max_draws {
            draws += 1;
            let s = n_full + 1 + dist.sample(&mut rng);
            let mut mask = vec![false; m];
            for j in rand::seq::index::sample(&mut rng, m, s) {
                mask[j] = true;
            }
            let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
            if add(mask, &mut masks, &mut weights) {
                slots -= 1;
            }
            if s <= n_paired && slots > 0 && add(complement, &mut masks, &mut weights) {
                slots -= 1;
            }
        }
        let sampled: f64 = weights[first_sampled..].iter().sum();
        if sampled > 0.0 {
            weights[first_sampled..]
                .iter_mut()
                .for_each(|w| *w *= weight_left / sampled);
        }
    }
    (masks, weights)
}

/// Explains each listed row in parallel; kernel rows use seeds derived from
/// `seed` and the row index.
pub fn explain_rows<P: Predictor + ?Sized>(
    model: &P,
    x: &FeatureMatrix,
    rows: &[usize],
    bg: &Background,
    method: ShapMethod,
    seed: u64,
) -> Result<Vec<ShapExplanation>> {
    rows.par_iter()
        .map(|&r| match method {
            ShapMethod::Exact => shap_exact(model, x, r, bg),
            ShapMethod::Kernel { n_samples } => {
                shap_kernel(model, x, r, bg, n_samples, rng::derive(seed, r as u64))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Increase,
    Decrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: Option<f64>,
    pub display: String,
    pub phi: f64,
    pub effect: Effect,
    pub imputed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePlot {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub row: Option<usize>,
    pub base_value: f64,
    pub prediction: f64,
    pub predicted_class: Option<RatingClass>,
    pub method: ShapMethod,
    /// Non-zero attributions by decreasing magnitude.
    pub contributions: Vec<Contribution>,
}

impl ForcePlot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn force_plot_data(e: &ShapExplanation) -> ForcePlot {
    let mut order: Vec<usize> = (0..e.phis.len()).filter(|&j| e.phis[j] != 0.0).collect();
    order.sort_by(|&a, &b| e.phis[b].abs().total_cmp(&e.phis[a].abs()));
    ForcePlot {
        row: None,
        base_value: e.base_value,
        prediction: e.prediction,
        predicted_class: discretize(e.prediction).ok(),
        method: e.method,
        contributions: order
            .into_iter()
            .map(|j| Contribution {
                feature: e.feature_names[j].clone(),
                value: e.feature_values[j],
                display: e.feature_display[j].clone(),
                phi: e.phis[j],
                effect: if e.phis[j] > 0.0 {
                    Effect::Increase
                } else {
                    Effect::Decrease
                },
                imputed: e.imputed.get(j).copied().unwrap_or(false),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub feature: String,
    pub mean_abs_shap: f64,
}

/// Features by decreasing mean |φ|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub rows: Vec<ImportanceRow>,
}

fn check_same_space(exps: &[ShapExplanation]) -> Result<&[String]> {
    let first = exps
        .first()
        .ok_or_else(|| Error::Config("no explanations given".into()))?;
    if let Some(i) = exps
        .iter()
        .position(|e| e.feature_names != first.feature_names)
    {
        return Err(Error::Config(format!(
            "explanation {i} uses a different feature space than explanation 0"
        )));
    }
    Ok(&first.feature_names)
}

pub fn importance(exps: &[ShapExplanation]) -> Result<ImportanceTable> {
    let names = check_same_space(exps)?;
    let n = exps.len() as f64;
    let mut rows: Vec<ImportanceRow> = names
        .iter()
        .enumerate()
        .map(|(j, name)| ImportanceRow {
            feature: name.clone(),
            mean_abs_shap: exps.iter().map(|e| e.phis[j].abs()).sum::<f64>() / n,
        })
        .collect();
    rows.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap));
    Ok(ImportanceTable { rows })
}

impl ImportanceTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["feature", "mean_abs_shap"])?;
        for r in &self.rows {
            w.write_record([r.feature.clone(), r.mean_abs_shap.to_string()])?;
        }
        csv_string(w)
    }

    /// Horizontal bar chart.
    pub fn to_svg(&self) -> String {
        let (left, bar_h, width) = (180.0, 22.0, 360.0);
        let max = self
            .rows
            .iter()
            .map(|r| r.mean_abs_shap)
            .fold(0.0, f64::max);
        let height = 40.0 + bar_h * self.rows.len() as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
            left + width + 80.0
        );
        let _ = writeln!(s, r#"<text x="{left}" y="16">mean(|SHAP value|)</text>"#);
        for (i, r) in self.rows.iter().enumerate() {
            let y = 28.0 + bar_h * i as f64;
            let w = if max > 0.0 {
                width * r.mean_abs_shap / max
            } else {
                0.0
            };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                left - 6.0,
                y + 14.0,
                xml_escape(&r.feature)
            );
            let _ = writeln!(
                s,
                r##"<rect x="{left}" y="{y}" width="{w:.2}" height="{}" fill="#1e88e5"/>"##,
                bar_h - 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}">{:.4}</text>"#,
                left + w + 4.0,
                y + 14.0,
                r.mean_abs_shap
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub feature: String,
    /// Position in the importance ordering, 0 = most important.
    pub rank: usize,
    pub explanation: usize,
    pub shap: f64,
    pub feature_value: Option<f64>,
    /// Feature value min-max scaled over the explanation set; 0.5 when the
    /// feature is constant or has no numeric value.
    pub color: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryData {
    pub points: Vec<SummaryPoint>,
}

pub fn summary_plot_data(exps: &[ShapExplanation]) -> Result<SummaryData> {
    let names = check_same_space(exps)?;
    let table = importance(exps)?;
    let mut points = Vec::with_capacity(exps.len() * names.len());
    for (rank, row) in table.rows.iter().enumerate() {
        let j = names
            .iter()
            .position(|n| *n == row.feature)
            .expect("feature from table");
        let values: Vec<f64> = exps.iter().filter_map(|e| e.feature_values[j]).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, e) in exps.iter().enumerate() {
            let v = e.feature_values[j];
            let color = match v {
                Some(v) if hi > lo => (v - lo) / (hi - lo),
                _ => 0.5,
            };
            points.push(SummaryPoint {
                feature: row.feature.clone(),
                rank,
                explanation: i,
                shap: e.phis[j],
                feature_value: v,
                color,
            });
        }
    }
    Ok(SummaryData { points })
}

impl SummaryData {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "feature",
            "rank",
            "explanation",
            "shap",
            "feature_value",
            "color",
        ])?;
        for p in &self.points {
            w.write_record([
                p.feature.clone(),
                p.rank.to_string(),
                p.explanation.to_string(),
                p.shap.to_string(),
                p.feature_value.map_or(String::new(), |v| v.to_string()),
                p.color.to_string(),
            ])?;
        }
        csv_string(w)
    }

    /// Beeswarm-style scatter: one row per feature, x = φ, colour = value.
    pub fn to_svg(&self) -> String {
        let (left, row_h, width) = (180.0, 26.0, 420.0);
        let n_features = self.points.iter().map(|p| p.rank + 1).max().unwrap_or(0);
        let span = self.points.iter().map(|p| p.shap.abs()).fold(0.0, f64::max);
        let span = if span > 0.0 { span } else { 1.0 };
        let x_of = |phi: f64| left + width / 2.0 + phi / span * (width / 2.0);
        let height = 50.0 + row_h * n_features as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
            left + width + 40.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="20" x2="{0}" y2="{1}" stroke="#888"/>"##,
            x_of(0.0),
            height - 20.0
        );
        let mut labelled = vec![false; n_features];
        for p in &self.points {
            let y = 32.0 + row_h * p.rank as f64;
            if !labelled[p.rank] {
                labelled[p.rank] = true;
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                    left - 6.0,
                    y + 4.0,
                    xml_escape(&p.feature)
                );
            }
            let jitter = ((p.explanation * 7919) % 17) as f64 / 17.0 - 0.5;
            let red = (255.0 * p.color).round();
            let blue = (255.0 * (1.0 - p.color)).round();
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="rgb({red},30,{blue})" fill-opacity="0.8"/>"#,
                x_of(p.shap),
                y + jitter * row_h * 0.6
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">SHAP value</text>"#,
            x_of(0.0),
            height - 4.0
        );
        s.push_str("</svg>\n");
        s
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::State(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::State(format!("csv buffer: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n_dense: usize, rows: &[&[f64]]) -> FeatureMatrix {
        let names = (0..n_dense).map(|j| format!("x{j}")).collect();
        FeatureMatrix::dense_only(n_dense, rows.concat(), names).unwrap()
    }

    fn sum_model(x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows).map(|i| x.dense_row(i).iter().sum()).collect()
    }

    #[test]
    fn linear_sum_against_zero_background() {
        let x = matrix(2, &[&[0.7, -1.3]]);
        let bg = Background::new(matrix(2, &[&[0.0, 0.0]])).unwrap();
        let e = shap_exact(&sum_model, &x, 0, &bg).unwrap();
        assert!((e.phis[0] - 0.7).abs() < 1e-12);
        assert!((e.phis[1] + 1.3).abs() < 1e-12);
        assert_eq!(e.base_value, 0.0);
    }

    #[test]
    fn symmetric_model_equal_values() {
        let f = |x: &FeatureMatrix| -> Vec<f64> {
            (0..x.n_rows)
                .map(|i| {
                    let r = x.dense_row(i);
                    r[0] * r[1] + r[2]
                })
                .collect()
        };
        let x = matrix(3, &[&[2.0, 2.0, 1.0]]);
        let bg = Background::new(matrix(3, &[&[0.5, -1.0, 0.0], &[-1.0, 0.5, 2.0]])).unwrap();
        let e = shap_exact(&f, &x, 0, &bg).unwrap();
        assert!((e.phis[0] - e.phis[1]).abs() < 1e-12);
        assert!(e.additivity_error() < 1e-12);
    }

    #[test]
    fn constant_model_gives_zero_attributions() {
        let f = |x: &FeatureMatrix| vec![3.0; x.n_rows];
        let x = matrix(2, &[&[1.0, 2.0]]);
        let bg = Background::new(matrix(2, &[&[0.0, 0.0], &[5.0, 5.0]])).unwrap();
        let e = shap_exact(&f, &x, 0, &bg).unwrap();
        assert_eq!(e.phis, vec![0.0, 0.0]);
        assert_eq!(e.base_value, e.prediction);
        assert!(force_plot_data(&e).contributions.is_empty());
    }

    #[test]
    fn exact_refuses_many_groups() {
        let x = matrix(13, &[&[0.0; 13]]);
        let bg = Background::new(x.clone()).unwrap();
        let err = shap_exact(&sum_model, &x, 0, &bg).unwrap_err();
        assert!(err.to_string().contains("shap_kernel"));
    }

    #[test]
    fn kernel_budget_check_and_bounds() {
        let x = matrix(3, &[&[1.0, 2.0, 3.0]]);
        let bg = Background::new(matrix(3, &[&[0.0, 0.0, 0.0]])).unwrap();
        assert!(matches!(
            shap_kernel(&sum_model, &x, 0, &bg, 7, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            shap_exact(&sum_model, &x, 1, &bg),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn kernel_is_exact_for_additive_models() {
        let row: Vec<f64> = (0..14).map(|j| j as f64 * 0.1 - 0.5).collect();
        let x = matrix(14, &[&row]);
        let bg = Background::new(matrix(14, &[&[0.0; 14], &[1.0; 14]])).unwrap();
        let e = shap_kernel(&sum_model, &x, 0, &bg, 256, 3).unwrap();
        for (j, p) in e.phis.iter().enumerate() {
            assert!((p - (row[j] - 0.5)).abs() < 1e-9, "feature {j}: {p}");
        }
        assert!(e.additivity_error() < 1e-9);
    }

    #[test]
    fn kernel_constant_feature_gets_zero() {
        let f = |x: &FeatureMatrix| -> Vec<f64> {
            (0..x.n_rows)
                .map(|i| {
                    let r = x.dense_row(i);
                    (r[0] * r[1]).sin() + r[2] * r[3] + r[4]
                })
                .collect()
        };
        let x = matrix(5, &[&[0.3, 0.9, 0.5, -0.2, 0.7]]);
        let bg = Background::new(matrix(
            5,
            &[&[0.1, 0.2, 0.5, 0.4, 0.0], &[0.8, 0.1, 0.5, 0.9, 1.0]],
        ))
        .unwrap();
        let e = shap_kernel(&f, &x, 0, &bg, 64, 1).unwrap();
        assert_eq!(e.phis[2], 0.0);
        assert!(e.additivity_error() < 1e-9);
    }

    #[test]
    fn kernel_coalitions_enumerate_small_games() {
        let (masks, weights) = kernel_coalitions(4, 100, 0);
        assert_eq!(masks.len(), 14);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut sorted = masks.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 14);
    }

    #[test]
    fn force_plot_orders_by_magnitude() {
        let e = ShapExplanation {
            base_value: 1.0,
            phis: vec![-0.1, 0.4],
            prediction: 1.3,
            feature_names: vec!["f2".into(), "f1".into()],
            feature_values: vec![Some(0.0), Some(1.0)],
            feature_display: vec!["0".into(), "1".into()],
            imputed: vec![false, true],
            method: ShapMethod::Exact,
        };
        let fp = force_plot_data(&e);
        let order: Vec<(&str, Effect)> = fp
            .contributions
            .iter()
            .map(|c| (c.feature.as_str(), c.effect))
            .collect();
        assert_eq!(
            order,
            vec![("f1", Effect::Increase), ("f2", Effect::Decrease)]
        );
        assert!(fp.contributions[0].imputed);
        assert_eq!(ForcePlot::from_json(&fp.to_json().unwrap()).unwrap(), fp);
    }

    fn explanation(phis: Vec<f64>, values: Vec<Option<f64>>) -> ShapExplanation {
        let n = phis.len();
        ShapExplanation {
            base_value: 0.0,
            prediction: phis.iter().sum(),
            feature_names: (0..n).map(|j| format!("f{j}")).collect(),
            feature_display: vec![String::new(); n],
            imputed: vec![false; n],
            feature_values: values,
            phis,
            method: ShapMethod::Exact,
        }
    }

    #[test]
    fn importance_contracts() {
        let a = explanation(vec![0.0, -2.0, 1.0], vec![Some(0.0); 3]);
        let b = explanation(vec![0.0, 1.0, -0.5], vec![Some(1.0); 3]);
        let single = importance(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.rows[0].feature, "f1");
        assert_eq!(single.rows[0].mean_abs_shap, 2.0);
        assert_eq!(single.rows[2].feature, "f0");
        assert_eq!(single.rows[2].mean_abs_shap, 0.0);

        let t = importance(&[a.clone(), b.clone()]).unwrap();
        let doubled = importance(&[a.clone(), b.clone(), a.clone(), b.clone()]).unwrap();
        assert_eq!(t, doubled);

        let mut other = b.clone();
        other.feature_names[0] = "zz".into();
        assert!(importance(&[a, other]).is_err());
        assert!(importance(&[]).is_err());
    }

    #[test]
    fn summary_shape_and_colors() {
        let a = explanation(vec![0.5, 0.1], vec![Some(2.0), Some(7.0)]);
        let b = explanation(vec![-0.5, 0.2], vec![Some(4.0), Some(7.0)]);
        let c = explanation(vec![0.0, 0.3], vec![Some(3.0), None]);
        let exps = [a, b, c];
        let s = summary_plot_data(&exps).unwrap();
        assert_eq!(s.points.len(), 6);
        let table = importance(&exps).unwrap();
        let order: Vec<&str> = s
            .points
            .iter()
            .step_by(3)
            .map(|p| p.feature.as_str())
            .collect();
        let expected: Vec<&str> = table.rows.iter().map(|r| r.feature.as_str()).collect();
        assert_eq!(order, expected);
        let f0: Vec<f64> = s
            .points
            .iter()
            .filter(|p| p.feature == "f0")
            .map(|p| p.color)
            .collect();
        assert_eq!(f0, vec![0.0, 1.0, 0.5]);
        let f1: Vec<f64> = s
            .points
            .iter()
            .filter(|p| p.feature == "f1")
            .map(|p| p.color)
            .collect();
        assert_eq!(f1, vec![0.5, 0.5, 0.5]);
        assert_eq!(s.to_csv().unwrap().lines().count(), 7);
    }

    #[test]
    fn stratified_background_covers_classes() {
        let rows: Vec<f64> = (0..40).map(f64::from).collect();
        let x = FeatureMatrix::dense_only(1, rows, vec!["x".into()]).unwrap();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 30)).collect();
        let bg = Background::stratified(&x, &labels, 8, 5).unwrap();
        assert_eq!(bg.len(), 8);
        let minority = (0..8)
            .filter(|&i| bg.rows().dense_row(i)[0] >= 30.0)
            .count();
        assert_eq!(minority, 2);
        let again = Background::stratified(&x, &labels, 8, 5).unwrap();
        assert_eq!(bg, again);
    }
}
