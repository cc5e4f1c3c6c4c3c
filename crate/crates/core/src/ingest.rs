//! Tabular data: schema, CSV loading/writing and the synthetic generator.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Label, Notch, RatingClass, N_CLASSES};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Category assigned to empty categorical cells.
pub const MISSING_CATEGORY: &str = "⟨missing⟩";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Text,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Column {
            name: name.into(),
            kind,
        }
    }
}

/// Ordered column declaration for a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct FeatureSchema {
    columns: Vec<Column>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    columns: Vec<Column>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        FeatureSchema::new(raw.columns)
    }
}

impl From<FeatureSchema> for RawSchema {
    fn from(s: FeatureSchema) -> Self {
        RawSchema { columns: s.columns }
    }
}

impl FeatureSchema {
    /// Validates: unique names, exactly one label, at least one numeric
    /// column, at most one text column.
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name {:?}", c.name)));
            }
        }
        let count = |k: ColumnKind| columns.iter().filter(|c| c.kind == k).count();
        if count(ColumnKind::Label) != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one label column, found {}",
                count(ColumnKind::Label)
            )));
        }
        if count(ColumnKind::Numeric) == 0 {
            return Err(Error::Schema(
                "at least one numeric column is required".into(),
            ));
        }
        if count(ColumnKind::Text) > 1 {
            return Err(Error::Schema("at most one text column is allowed".into()));
        }
        Ok(FeatureSchema { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    fn names_of(&self, kind: ColumnKind) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn numeric_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Numeric)
    }

    pub fn categorical_names(&self) -> Vec<&str> {
        self.names_of(ColumnKind::Categorical)
    }

    pub fn text_name(&self) -> Option<&str> {
        self.names_of(ColumnKind::Text).into_iter().next()
    }

    pub fn label_name(&self) -> &str {
        self.names_of(ColumnKind::Label)[0]
    }

    pub fn n_numeric(&self) -> usize {
        self.names_of(ColumnKind::Numeric).len()
    }

    pub fn n_categorical(&self) -> usize {
        self.names_of(ColumnKind::Categorical).len()
    }

    pub fn has_text(&self) -> bool {
        self.text_name().is_some()
    }
}

/// One observation. Field vectors follow the schema's column order within
/// each kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub numeric: Vec<Option<f64>>,
    pub categorical: Vec<String>,
    /// Sector description; empty when the schema has no text column.
    pub text: String,
    pub label: Label,
}

impl Record {
    pub fn class(&self) -> RatingClass {
        self.label.class()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<Record>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Record>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Schema("dataset has no rows".into()));
        }
        let (n_num, n_cat) = (schema.n_numeric(), schema.n_categorical());
        for (i, r) in rows.iter().enumerate() {
            if r.numeric.len() != n_num || r.categorical.len() != n_cat {
                return Err(Error::Schema(format!(
                    "row {i} has {} numeric and {} categorical cells, schema declares {n_num} and {n_cat}",
                    r.numeric.len(),
                    r.categorical.len()
                )));
            }
            if !schema.has_text() && !r.text.is_empty() {
                return Err(Error::Schema(format!(
                    "row {i} carries text but the schema has no text column"
                )));
            }
        }
        Ok(Dataset { schema, rows })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn classes(&self) -> Vec<RatingClass> {
        self.rows.iter().map(Record::class).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.class().target() as f64)
            .collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let rows = indices
            .iter()
            .map(|&i| {
                self.rows.get(i).cloned().ok_or_else(|| {
                    Error::Bounds(format!("row {i} out of range for {} rows", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.schema.clone(), rows)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses CSV from any reader. Row numbers in errors are 1-based data rows.
pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
    if header != expected {
        return Err(Error::Schema(format!(
            "header {header:?} does not match schema columns {expected:?}"
        )));
    }

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let mut numeric = Vec::with_capacity(schema.n_numeric());
        let mut categorical = Vec::with_capacity(schema.n_categorical());
        let mut text = String::new();
        let mut label = None;
        for (col, cell) in schema.columns().iter().zip(rec.iter()) {
            let cell_err = |message: String| Error::Cell {
                row,
                column: col.name.clone(),
                message,
            };
            match col.kind {
                ColumnKind::Numeric => {
                    let trimmed = cell.trim();
                    if trimmed.is_empty() {
                        numeric.push(None);
                    } else {
                        let v: f64 = trimmed
                            .parse()
                            .map_err(|_| cell_err(format!("unparseable number {cell:?}")))?;
                        if !v.is_finite() {
                            return Err(cell_err(format!("non-finite number {cell:?}")));
                        }
                        numeric.push(Some(v));
                    }
                }
                ColumnKind::Categorical => categorical.push(if cell.is_empty() {
                    MISSING_CATEGORY.to_string()
                } else {
                    cell.to_string()
                }),
                ColumnKind::Text => text = cell.to_string(),
                ColumnKind::Label => {
                    label = Some(
                        cell.parse::<Label>()
                            .map_err(|_| cell_err(format!("unknown rating label {cell:?}")))?,
                    )
                }
            }
        }
        let label = label.ok_or_else(|| Error::Cell {
            row,
            column: schema.label_name().to_string(),
            message: "missing label".into(),
        })?;
        rows.push(Record {
            numeric,
            categorical,
            text,
            label,
        });
    }
    Dataset::new(schema.clone(), rows)
}

pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(file, data)
}

pub fn write_csv_to<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let schema = data.schema();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.columns().iter().map(|c| c.name.as_str()))?;
    for r in data.rows() {
        let (mut ni, mut ci) = (0, 0);
        let mut cells: Vec<String> = Vec::with_capacity(schema.columns().len());
        for col in schema.columns() {
            cells.push(match col.kind {
                ColumnKind::Numeric => {
                    ni += 1;
                    r.numeric[ni - 1].map(|v| v.to_string()).unwrap_or_default()
                }
                ColumnKind::Categorical => {
                    ci += 1;
                    let c = &r.categorical[ci - 1];
                    if c == MISSING_CATEGORY {
                        String::new()
                    } else {
                        c.clone()
                    }
                }
                ColumnKind::Text => r.text.clone(),
                ColumnKind::Label => r.label.code().to_string(),
            });
        }
        wtr.write_record(&cells)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

const NUMERIC_NAMES: [&str; 12] = [
    "roi", "capi", "oope", "tfas", "fire", "solr", "curr", "gear", "prma", "ebma", "irs_5y",
    "eonia",
];
const CATEGORICAL_NAMES: [&str; 2] = ["country", "size_class"];
const COUNTRIES: [&str; 5] = ["IT", "DE", "FR", "ES", "NL"];
const COUNTRY_EFFECT: [f64; 5] = [0.3, -0.2, 0.1, 0.0, -0.2];
const SIZE_CLASSES: [&str; 3] = ["small", "medium", "large"];
const STOP_WORDS: [&str; 4] = ["of", "and", "the", "n.e.c."];

/// Scale of the log-normal (skewed) numeric columns.
const SKEW_SIGMA: f64 = 0.75;

/// Settings for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub n_numeric: usize,
    pub n_categorical: usize,
    pub sector_vocab: Vec<String>,
    pub class_weights: Vec<f64>,
    pub missing_rate: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Standard deviation of the sector effect across the vocabulary.
    pub sector_strength: f64,
    /// Multiplier on the interaction and threshold terms.
    pub nonlinear_strength: f64,
}

/// Class frequencies concentrated on A..B with thin tails, shaped like
/// typical corporate rating populations.
pub const SKEWED_CLASS_WEIGHTS: [f64; N_CLASSES] =
    [0.01, 0.05, 0.17, 0.27, 0.22, 0.17, 0.08, 0.02, 0.01];

/// Cartesian product of word slots joined with spaces.
pub fn compose_phrases(slots: &[&[&str]]) -> Vec<String> {
    slots.iter().fold(vec![String::new()], |acc, slot| {
        acc.iter()
            .flat_map(|prefix| {
                slot.iter().map(move |w| {
                    if prefix.is_empty() {
                        w.to_string()
                    } else {
                        format!("{prefix} {w}")
                    }
                })
            })
            .collect()
    })
}

pub fn default_sector_vocab() -> Vec<String> {
    compose_phrases(&[
        &[
            "manufacture of",
            "wholesale trade of",
            "retail sale of",
            "repair of",
            "rental of",
            "import and export of",
        ],
        &[
            "machinery",
            "food products",
            "textiles",
            "chemicals",
            "motor vehicles",
            "electronic equipment",
            "furniture",
            "basic metals",
        ],
    ])
}

/// Four-slot descriptions ("listed coastal rental of textiles"), 960 in all.
/// Most phrases are rare in a few thousand rows while every word is common.
pub fn detailed_sector_vocab() -> Vec<String> {
    let base = default_sector_vocab();
    let base: Vec<&str> = base.iter().map(String::as_str).collect();
    compose_phrases(&[
        &["family owned", "listed", "cooperative", "state owned"],
        &["northern", "southern", "coastal", "inland", "metropolitan"],
        &base,
    ])
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_rows: 5000,
            n_numeric: 8,
            n_categorical: 2,
            sector_vocab: default_sector_vocab(),
            class_weights: SKEWED_CLASS_WEIGHTS.to_vec(),
            missing_rate: 0.05,
            noise_std: 0.3,
            seed: 20_190_101,
            sector_strength: 1.0,
            nonlinear_strength: 1.0,
        }
    }
}

impl SynthSpec {
    /// Rows per class after slicing the sorted latent score.
    pub fn class_counts(&self) -> Result<[usize; N_CLASSES]> {
        self.validate()?;
        let n = self.n_rows as f64;
        let mut counts = [0usize; N_CLASSES];
        let mut cum = 0.0;
        let mut prev = 0usize;
        for (c, w) in self.class_weights.iter().enumerate() {
            cum += w;
            let boundary = if c + 1 == N_CLASSES {
                self.n_rows
            } else {
                ((n * cum).round() as usize).min(self.n_rows)
            };
            let boundary = boundary.max(prev);
            counts[c] = boundary - prev;
            prev = boundary;
        }
        for (c, (&count, &w)) in counts.iter().zip(&self.class_weights).enumerate() {
            if w > 0.0 && count == 0 {
                return Err(Error::Config(format!(
                    "n_rows = {} is too small: class {} (weight {w}) would receive no rows",
                    self.n_rows,
                    RatingClass::ALL[c]
                )));
            }
        }
        Ok(counts)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_rows < N_CLASSES {
            return bad(format!(
                "n_rows must be at least {N_CLASSES}, got {}",
                self.n_rows
            ));
        }
        if self.n_numeric < 3 {
            return bad(format!(
                "n_numeric must be at least 3 (interaction and threshold terms), got {}",
                self.n_numeric
            ));
        }
        if self.class_weights.len() != N_CLASSES {
            return bad(format!(
                "class_weights must have {N_CLASSES} entries, got {}",
                self.class_weights.len()
            ));
        }
        if self
            .class_weights
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return bad("class_weights must be finite and nonnegative".into());
        }
        let sum: f64 = self.class_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("class_weights must sum to 1, got {sum}"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!(
                "missing_rate must lie in [0, 1), got {}",
                self.missing_rate
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            ));
        }
        if self.sector_vocab.is_empty() || self.sector_vocab.iter().any(|p| p.trim().is_empty()) {
            return bad("sector_vocab must be a non-empty list of non-empty phrases".into());
        }
        if !(self.sector_strength >= 0.0 && self.nonlinear_strength >= 0.0) {
            return bad("sector_strength and nonlinear_strength must be nonnegative".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        let mut cols: Vec<Column> = (0..self.n_numeric)
            .map(|j| Column::new(numeric_name(j), ColumnKind::Numeric))
            .collect();
        cols.extend(
            (0..self.n_categorical)
                .map(|j| Column::new(categorical_name(j), ColumnKind::Categorical)),
        );
        cols.push(Column::new("sector_description", ColumnKind::Text));
        cols.push(Column::new("rating", ColumnKind::Label));
        FeatureSchema::new(cols).expect("generated schema is valid")
    }
}

fn numeric_name(j: usize) -> String {
    NUMERIC_NAMES
        .get(j)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("num_{j}"))
}

fn categorical_name(j: usize) -> String {
    CATEGORICAL_NAMES
        .get(j)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("cat_{j}"))
}

fn is_skewed(j: usize) -> bool {
    j % 2 == 1
}

/// Noise-free latent score as a function of the observed features.
///
/// Column `j` is either standard normal or log-normal; the score works on the
/// underlying normal draw `u_j`:
///
/// `z = a·u + s·(1.2·u₀·u₁ + 1.5·[u₂ > 0.5]) + country + sector(phrase)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    pub linear: Vec<f64>,
    pub nonlinear_strength: f64,
    /// Sector effect per phrase, aligned with the spec's vocabulary.
    pub phrases: Vec<String>,
    pub phrase_effects: Vec<f64>,
}

impl LatentModel {
    fn new(spec: &SynthSpec, rng: &mut rng::Rng) -> Self {
        let linear = (0..spec.n_numeric)
            .map(|j| match j {
                0 | 1 => 0.0,
                2 => 0.4,
                _ => {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * 0.7 * 0.8f64.powi(j as i32 - 3)
                }
            })
            .collect();

        // Additive word effects so phrases sharing words share signal.
        let mut words: Vec<String> = spec
            .sector_vocab
            .iter()
            .flat_map(|p| crate::preprocess::tokenize(p))
            .filter(|w| !STOP_WORDS.contains(&w.as_str()))
            .collect();
        words.sort();
        words.dedup();
        let word_effects: Vec<f64> = words.iter().map(|_| rng.sample(StandardNormal)).collect();
        let raw: Vec<f64> = spec
            .sector_vocab
            .iter()
            .map(|p| {
                crate::preprocess::tokenize(p)
                    .iter()
                    .filter_map(|w| words.binary_search(w).ok().map(|i| word_effects[i]))
                    .sum()
            })
            .collect();
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let phrase_effects = raw
            .iter()
            .map(|v| {
                if sd > 0.0 {
                    spec.sector_strength * (v - mean) / sd
                } else {
                    0.0
                }
            })
            .collect();

        LatentModel {
            linear,
            nonlinear_strength: spec.nonlinear_strength,
            phrases: spec.sector_vocab.clone(),
            phrase_effects,
        }
    }

    pub fn sector_effect(&self, phrase: &str) -> f64 {
        self.phrases
            .iter()
            .position(|p| p == phrase)
            .map(|i| self.phrase_effects[i])
            .unwrap_or(0.0)
    }

    fn score_normals(&self, u: &[f64], country: Option<&str>, phrase: &str) -> f64 {
        let linear: f64 = self.linear.iter().zip(u).map(|(a, x)| a * x).sum();
        let threshold = if u[2] > 0.5 { 1.5 } else { 0.0 };
        let nonlinear = self.nonlinear_strength * (1.2 * u[0] * u[1] + threshold);
        let country = country
            .and_then(|c| COUNTRIES.iter().position(|k| *k == c))
            .map(|i| COUNTRY_EFFECT[i])
            .unwrap_or(0.0);
        linear + nonlinear + country + self.sector_effect(phrase)
    }

    /// Noise-free score of a fully observed record; `None` if any numeric
    /// cell is missing.
    pub fn score(&self, record: &Record) -> Option<f64> {
        let u: Vec<f64> = record
            .numeric
            .iter()
            .enumerate()
            .map(|(j, v)| v.map(|x| if is_skewed(j) { x.ln() / SKEW_SIGMA } else { x }))
            .collect::<Option<_>>()?;
        Some(self.score_normals(
            &u,
            record.categorical.first().map(String::as_str),
            &record.text,
        ))
    }
}

/// Generated data together with the latent quantities that produced it.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Latent score including noise, per row.
    pub latent: Vec<f64>,
    /// Sector component of `latent`, per row.
    pub sector_effect: Vec<f64>,
    pub model: LatentModel,
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    generate_synthetic_detailed(spec).map(|d| d.dataset)
}

pub fn generate_synthetic_detailed(spec: &SynthSpec) -> Result<SynthData> {
    let counts = spec.class_counts()?;
    let mut rng = rng::stream(spec.seed, Stream::Synth);
    let model = LatentModel::new(spec, &mut rng);

    let n = spec.n_rows;
    let mut rows = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut sector_effect = Vec::with_capacity(n);
    for _ in 0..n {
        let u: Vec<f64> = (0..spec.n_numeric)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let numeric = u
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                Some(if is_skewed(j) {
                    (SKEW_SIGMA * x).exp()
                } else {
                    x
                })
            })
            .collect();
        let categorical: Vec<String> = (0..spec.n_categorical)
            .map(|j| match j {
                0 => COUNTRIES[rng.random_range(0..COUNTRIES.len())].to_string(),
                1 => SIZE_CLASSES[rng.random_range(0..SIZE_CLASSES.len())].to_string(),
                _ => format!("c{}_{}", j, rng.random_range(0..4)),
            })
            .collect();
        let phrase = spec.sector_vocab[rng.random_range(0..spec.sector_vocab.len())].clone();
        let noise: f64 = StandardNormal.sample(&mut rng);
        let z = model.score_normals(&u, categorical.first().map(String::as_str), &phrase)
            + spec.noise_std * noise;
        latent.push(z);
        sector_effect.push(model.sector_effect(&phrase));
        rows.push(Record {
            numeric,
            categorical,
            text: phrase,
            label: Label::Class(RatingClass::Aaa),
        });
    }

    // Slice the sorted latent score into classes of the requested sizes.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]).then(a.cmp(&b)));
    let mut pos = 0;
    for (c, &count) in counts.iter().enumerate() {
        let class = RatingClass::ALL[c];
        let notches: Vec<Notch> = Notch::of_class(class).collect();
        for &row in &order[pos..pos + count] {
            let notch = notches[rng.random_range(0..notches.len())];
            rows[row].label = Label::Notch(notch);
        }
        pos += count;
    }

    let n_cells = n * spec.n_numeric;
    let n_missing = (spec.missing_rate * n_cells as f64).round() as usize;
    for cell in index::sample(&mut rng, n_cells, n_missing) {
        rows[cell / spec.n_numeric].numeric[cell % spec.n_numeric] = None;
    }

    Ok(SynthData {
        dataset: Dataset::new(spec.schema(), rows)?,
        latent,
        sector_effect,
        model,
    })
}
