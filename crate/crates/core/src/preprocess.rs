//! Fold-local feature transformation.
//!
//! A [`FittedPipeline`] is fitted on one training fold and then applied to
//! both sides of the split. Numeric columns are median-imputed and mapped
//! through their training empirical CDF onto [0, 1]; categorical columns are
//! one-hot encoded with a reserved unknown slot; the sector description is
//! either tokenized for an embedding layer or one-hot encoded as a whole
//! phrase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, FeatureSchema};

pub const PAD_TOKEN: u32 = 0;
pub const OOV_TOKEN: u32 = 1;

const UNKNOWN_SLOT: &str = "⟨unknown⟩";

/// How the sector description reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoding {
    /// Token sequences for an embedding layer.
    Embedding,
    /// The normalized phrase as one categorical value.
    OneHot,
}

/// Lowercase, turn punctuation into spaces, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    /// Sorted vocabulary; word `i` has index `i + 2`.
    words: Vec<String>,
    max_len: usize,
}

impl Tokenizer {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = Vec::new();
        let mut max_len = 1;
        for t in texts {
            let toks = tokenize(t);
            max_len = max_len.max(toks.len());
            words.extend(toks);
        }
        words.sort();
        words.dedup();
        Tokenizer { words, max_len }
    }

    /// Includes the padding and out-of-vocabulary indices.
    pub fn vocab_size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn index_of(&self, word: &str) -> u32 {
        match self.words.binary_search_by(|w| w.as_str().cmp(word)) {
            Ok(i) => i as u32 + 2,
            Err(_) => OOV_TOKEN,
        }
    }

    pub fn word(&self, index: u32) -> Option<&str> {
        match index {
            PAD_TOKEN => None,
            OOV_TOKEN => Some("<oov>"),
            i => self.words.get(i as usize - 2).map(String::as_str),
        }
    }

    /// Word indices truncated or zero-padded at the end to `max_len`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut seq: Vec<u32> = tokenize(text)
            .iter()
            .take(self.max_len)
            .map(|w| self.index_of(w))
            .collect();
        seq.resize(self.max_len, PAD_TOKEN);
        seq
    }

    pub fn decode(&self, seq: &[u32]) -> String {
        seq.iter()
            .filter_map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Empirical CDF of one training column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    support: Vec<f64>,
}

impl QuantileMap {
    pub fn fit(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        QuantileMap { support: values }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    /// Position of `v` in the support scaled to [0, 1]. Each run of equal
    /// support values maps to the midpoint of its index range; values in
    /// between are linearly interpolated and values outside the fitted range
    /// clamp to exactly 0 or 1.
    pub fn transform(&self, v: f64) -> f64 {
        let s = &self.support;
        let n = s.len();
        if v < s[0] {
            return 0.0;
        }
        if v > s[n - 1] {
            return 1.0;
        }
        if n == 1 {
            return 0.5;
        }
        let scale = (n - 1) as f64;
        let run_mid = |lo: usize, hi_excl: usize| (lo + hi_excl - 1) as f64 / 2.0;
        let lower = s.partition_point(|x| *x < v);
        let upper = s.partition_point(|x| *x <= v);
        if lower < upper {
            return run_mid(lower, upper) / scale;
        }
        // s[lower - 1] < v < s[lower]
        let (left, right) = (s[lower - 1], s[lower]);
        let left_mid = run_mid(s.partition_point(|x| *x < left), lower);
        let right_mid = run_mid(lower, s.partition_point(|x| *x <= right));
        let t = (v - left) / (right - left);
        (left_mid + t * (right_mid - left_mid)) / scale
    }
}

/// One-hot vector of length `vocab.len() + 1`; the last slot is the unknown
/// slot for values not in `vocab`.
pub fn onehot(value: &str, vocab: &[String]) -> Vec<f64> {
    let mut out = vec![0.0; vocab.len() + 1];
    out[onehot_slot(value, vocab)] = 1.0;
    out
}

fn onehot_slot(value: &str, vocab: &[String]) -> usize {
    vocab
        .binary_search_by(|c| c.as_str().cmp(value))
        .unwrap_or(vocab.len())
}

/// Integer codes in vocabulary order; unseen values get `vocab.len()`.
///
/// Not used by the models (integer codes impose an ordering the categories
/// do not have) but kept for inspection and export.
pub fn label_encode(values: &[String], vocab: &[String]) -> Vec<usize> {
    values.iter().map(|v| onehot_slot(v, vocab)).collect()
}

fn sorted_vocab<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = values.map(str::to_string).collect();
    v.sort();
    v.dedup();
    v
}

fn phrase_key(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Median ignoring missing values; the mean of the two central values for
/// even counts.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Which part of the model input a feature group covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupInput {
    /// Columns `start..start + len` of the dense block.
    Dense { start: usize, len: usize },
    /// The whole token sequence.
    Tokens,
}

/// An original input column as seen by the model; explanations attribute to
/// groups rather than to individual one-hot slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub input: GroupInput,
}

/// Model-ready features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub n_dense: usize,
    /// Row-major `n_rows × n_dense`.
    pub dense: Vec<f64>,
    pub max_len: usize,
    /// Row-major `n_rows × max_len`.
    pub token_seqs: Vec<u32>,
    pub dense_names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    /// Row-major `n_rows × groups.len()`; true where the value was imputed.
    pub imputed: Vec<bool>,
}

impl FeatureMatrix {
    /// Dense-only matrix with one group per column.
    pub fn dense_only(n_dense: usize, dense: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if n_dense == 0 || !dense.len().is_multiple_of(n_dense) || names.len() != n_dense {
            return Err(Error::Transform(format!(
                "inconsistent dense shape: {} values, {n_dense} columns, {} names",
                dense.len(),
                names.len()
            )));
        }
        let n_rows = dense.len() / n_dense;
        let groups = names
            .iter()
            .enumerate()
            .map(|(j, n)| FeatureGroup {
                name: n.clone(),
                input: GroupInput::Dense { start: j, len: 1 },
            })
            .collect();
        Ok(FeatureMatrix {
            n_rows,
            n_dense,
            dense,
            max_len: 0,
            token_seqs: Vec::new(),
            dense_names: names,
            groups,
            imputed: vec![false; n_rows * n_dense],
        })
    }

    pub fn dense_row(&self, i: usize) -> &[f64] {
        &self.dense[i * self.n_dense..(i + 1) * self.n_dense]
    }

    pub fn tokens_row(&self, i: usize) -> &[u32] {
        &self.token_seqs[i * self.max_len..(i + 1) * self.max_len]
    }

    pub fn imputed_row(&self, i: usize) -> &[bool] {
        let g = self.groups.len();
        &self.imputed[i * g..(i + 1) * g]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut dense = Vec::with_capacity(indices.len() * self.n_dense);
        let mut tokens = Vec::with_capacity(indices.len() * self.max_len);
        let mut imputed = Vec::with_capacity(indices.len() * self.groups.len());
        for &i in indices {
            dense.extend_from_slice(self.dense_row(i));
            tokens.extend_from_slice(self.tokens_row(i));
            imputed.extend_from_slice(self.imputed_row(i));
        }
        FeatureMatrix {
            n_rows: indices.len(),
            dense,
            token_seqs: tokens,
            imputed,
            ..self.empty_like()
        }
    }

    /// Same layout, zero rows.
    pub fn empty_like(&self) -> FeatureMatrix {
        FeatureMatrix {
            n_rows: 0,
            n_dense: self.n_dense,
            dense: Vec::new(),
            max_len: self.max_len,
            token_seqs: Vec::new(),
            dense_names: self.dense_names.clone(),
            groups: self.groups.clone(),
            imputed: Vec::new(),
        }
    }

    pub fn push_row(&mut self, dense: &[f64], tokens: &[u32]) {
        debug_assert_eq!(dense.len(), self.n_dense);
        debug_assert_eq!(tokens.len(), self.max_len);
        self.dense.extend_from_slice(dense);
        self.token_seqs.extend_from_slice(tokens);
        self.imputed
            .extend(std::iter::repeat_n(false, self.groups.len()));
        self.n_rows += 1;
    }
}

/// Transform state fitted on a single training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub fitted_on: String,
    pub schema: FeatureSchema,
    pub text_encoding: TextEncoding,
    pub medians: Vec<f64>,
    pub quantile_maps: Vec<QuantileMap>,
    pub onehot_vocabs: Vec<Vec<String>>,
    /// Whole-phrase vocabulary when the text is one-hot encoded.
    pub text_vocab: Option<Vec<String>>,
    pub tokenizer: Option<Tokenizer>,
}

impl FittedPipeline {
    pub fn fit(train: &Dataset, text_encoding: TextEncoding, fitted_on: &str) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Fit("training data is empty".into()));
        }
        let schema = train.schema().clone();
        let names = schema.numeric_names();
        let mut medians = Vec::with_capacity(names.len());
        let mut quantile_maps = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let col: Vec<Option<f64>> = train.rows().iter().map(|r| r.numeric[j]).collect();
            let m = median(&col).ok_or_else(|| {
                Error::Fit(format!("numeric column {name:?} has no non-missing values"))
            })?;
            medians.push(m);
            quantile_maps.push(QuantileMap::fit(col.into_iter().flatten().collect()));
        }

        let onehot_vocabs = (0..schema.n_categorical())
            .map(|j| sorted_vocab(train.rows().iter().map(|r| r.categorical[j].as_str())))
            .collect();

        let texts = || train.rows().iter().map(|r| r.text.as_str());
        let (text_vocab, tokenizer) = match (schema.has_text(), text_encoding) {
            (false, _) => (None, None),
            (true, TextEncoding::Embedding) => (None, Some(Tokenizer::fit(texts()))),
            (true, TextEncoding::OneHot) => {
                let keys: Vec<String> = texts().map(phrase_key).collect();
                (Some(sorted_vocab(keys.iter().map(String::as_str))), None)
            }
        };

        Ok(FittedPipeline {
            fitted_on: fitted_on.to_string(),
            schema,
            text_encoding,
            medians,
            quantile_maps,
            onehot_vocabs,
            text_vocab,
            tokenizer,
        })
    }

    pub fn n_dense(&self) -> usize {
        self.medians.len()
            + self
                .onehot_vocabs
                .iter()
                .map(|v| v.len() + 1)
                .sum::<usize>()
            + self.text_vocab.as_ref().map_or(0, |v| v.len() + 1)
    }

    pub fn max_len(&self) -> usize {
        self.tokenizer.as_ref().map_or(0, Tokenizer::max_len)
    }

    /// Embedding vocabulary size, zero without an embedding branch.
    pub fn vocab_size(&self) -> usize {
        self.tokenizer.as_ref().map_or(0, Tokenizer::vocab_size)
    }

    pub fn dense_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .schema
            .numeric_names()
            .iter()
            .map(|s| s.to_string())
            .collect();
        let slot_names = |col: &str, vocab: &[String]| {
            vocab
                .iter()
                .map(|c| format!("{col}={c}"))
                .chain(std::iter::once(format!("{col}={UNKNOWN_SLOT}")))
                .collect::<Vec<_>>()
        };
        for (col, vocab) in self
            .schema
            .categorical_names()
            .iter()
            .zip(&self.onehot_vocabs)
        {
            names.extend(slot_names(col, vocab));
        }
        if let (Some(vocab), Some(col)) = (&self.text_vocab, self.schema.text_name()) {
            names.extend(slot_names(col, vocab));
        }
        names
    }

    pub fn groups(&self) -> Vec<FeatureGroup> {
        let mut groups = Vec::new();
        let mut start = 0;
        for name in self.schema.numeric_names() {
            groups.push(FeatureGroup {
                name: name.to_string(),
                input: GroupInput::Dense { start, len: 1 },
            });
            start += 1;
        }
        for (name, vocab) in self
            .schema
            .categorical_names()
            .iter()
            .zip(&self.onehot_vocabs)
        {
            let len = vocab.len() + 1;
            groups.push(FeatureGroup {
                name: name.to_string(),
                input: GroupInput::Dense { start, len },
            });
            start += len;
        }
        if let Some(name) = self.schema.text_name() {
            let input = match &self.text_vocab {
                Some(vocab) => GroupInput::Dense {
                    start,
                    len: vocab.len() + 1,
                },
                None => GroupInput::Tokens,
            };
            groups.push(FeatureGroup {
                name: name.to_string(),
                input,
            });
        }
        groups
    }

    pub fn transform(&self, data: &Dataset) -> Result<FeatureMatrix> {
        if data.schema() != &self.schema {
            return Err(Error::Transform(
                "dataset schema differs from the schema the pipeline was fitted on".into(),
            ));
        }
        let n_dense = self.n_dense();
        let max_len = self.max_len();
        let groups = self.groups();
        let n_groups = groups.len();
        let n = data.len();
        let mut dense = Vec::with_capacity(n * n_dense);
        let mut token_seqs = Vec::with_capacity(n * max_len);
        let mut imputed = vec![false; n * n_groups];

        for (i, r) in data.rows().iter().enumerate() {
            for (j, v) in r.numeric.iter().enumerate() {
                let x = v.unwrap_or_else(|| {
                    imputed[i * n_groups + j] = true;
                    self.medians[j]
                });
                dense.push(self.quantile_maps[j].transform(x));
            }
            for (value, vocab) in r.categorical.iter().zip(&self.onehot_vocabs) {
                dense.extend(onehot(value, vocab));
            }
            if let Some(vocab) = &self.text_vocab {
                dense.extend(onehot(&phrase_key(&r.text), vocab));
            }
            if let Some(tok) = &self.tokenizer {
                token_seqs.extend(tok.encode(&r.text));
            }
        }

        Ok(FeatureMatrix {
            n_rows: n,
            n_dense,
            dense,
            max_len,
            token_seqs,
            dense_names: self.dense_names(),
            groups,
            imputed,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
