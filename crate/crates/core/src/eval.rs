//! Field-level scoring of extracted records against gold annotations and
//! weighted aggregation into run scores.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{cosine, Embedder, GatewayError};
use crate::schema::{
    canonicalize_field_text, EvalMethod, FieldKey, PersonRecord, SchemaDefinition,
};

/// Tolerance on the sum of a scheme's weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-3;

/// Scheme used when none is requested.
pub const DEFAULT_SCHEME: &str = "Average Distribution";

const BUILTIN_WEIGHT_TABLE: &str = include_str!("../data/weight_schemes.csv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("scheme {scheme}: expected 14 weights, got {len}")]
    SchemeLength { scheme: String, len: usize },
    #[error("scheme {scheme}: weight {index} = {value} is outside [0, 1]")]
    WeightRange {
        scheme: String,
        index: usize,
        value: f64,
    },
    #[error("scheme {scheme}: weights sum to {sum}, expected 1 ± 0.001")]
    WeightSum { scheme: String, sum: f64 },
    #[error("expected 14 field scores, got {0}")]
    ScoreCount(usize),
    #[error("weight table: {0}")]
    WeightTable(String),
    #[error("unknown weight scheme {name:?} (available: {})", .available.join(", "))]
    UnknownScheme {
        name: String,
        available: Vec<String>,
    },
    #[error("duplicate record_id {0:?}")]
    DuplicateId(String),
    #[error("no records")]
    NoRecords,
    #[error("predictions with no gold record: {}", .0.join(", "))]
    UnmatchedIds(Vec<String>),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// A named 14-vector of field weights in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub name: String,
    pub weights: Vec<f64>,
}

impl WeightScheme {
    pub fn new(name: impl Into<String>, weights: Vec<f64>) -> Result<Self, EvalError> {
        let s = WeightScheme {
            name: name.into(),
            weights,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.weights.len() != FieldKey::ALL.len() {
            return Err(EvalError::SchemeLength {
                scheme: self.name.clone(),
                len: self.weights.len(),
            });
        }
        if let Some((index, &value)) = self
            .weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(0.0..=1.0).contains(*w))
        {
            return Err(EvalError::WeightRange {
                scheme: self.name.clone(),
                index,
                value,
            });
        }
        let sum = self.sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(EvalError::WeightSum {
                scheme: self.name.clone(),
                sum,
            });
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn weight(&self, key: FieldKey) -> f64 {
        self.weights[key.index()]
    }
}

/// Lowercase alphanumerics only, so `random1`, `Random 1` and `random-1` agree.
fn scheme_key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Looks a scheme up by name, ignoring case, spaces and punctuation.
pub fn find_scheme<'a>(
    schemes: &'a [WeightScheme],
    name: &str,
) -> Result<&'a WeightScheme, EvalError> {
    let key = scheme_key(name);
    schemes
        .iter()
        .find(|s| scheme_key(&s.name) == key)
        .ok_or_else(|| EvalError::UnknownScheme {
            name: name.to_string(),
            available: schemes.iter().map(|s| s.name.clone()).collect(),
        })
}

/// Parses a weight table laid out as `No., Component, <scheme>...`, one row
/// per schema component. Rows may appear in any order; components are matched
/// by any accepted field name.
pub fn parse_weight_table(
    text: &str,
    schema: &SchemaDefinition,
) -> Result<Vec<WeightScheme>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| EvalError::WeightTable(e.to_string()))?
        .clone();
    if headers.len() < 3 || scheme_key(&headers[1]) != "component" {
        return Err(EvalError::WeightTable(
            "expected header `No.,Component,<scheme>...`".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut columns = vec![vec![f64::NAN; FieldKey::ALL.len()]; names.len()];
    let mut seen = BTreeSet::new();
    for (row_no, row) in reader.records().enumerate() {
        let line = row_no + 2;
        let row = row.map_err(|e| EvalError::WeightTable(format!("line {line}: {e}")))?;
        if row.len() != headers.len() {
            return Err(EvalError::WeightTable(format!(
                "line {line}: expected {} columns",
                headers.len()
            )));
        }
        let spec = schema.field_for_input_key(&row[1]).ok_or_else(|| {
            EvalError::WeightTable(format!("line {line}: unknown component {:?}", &row[1]))
        })?;
        if !seen.insert(spec.key) {
            return Err(EvalError::WeightTable(format!(
                "line {line}: component {} listed twice",
                spec.key
            )));
        }
        for (col, cell) in row.iter().skip(2).enumerate() {
            columns[col][spec.key.index()] = cell.parse().map_err(|_| {
                EvalError::WeightTable(format!("line {line}: {cell:?} is not a number"))
            })?;
        }
    }
    let missing: Vec<String> = FieldKey::ALL
        .iter()
        .filter(|k| !seen.contains(*k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::WeightTable(format!(
            "missing components: {}",
            missing.join(", ")
        )));
    }
    names
        .into_iter()
        .zip(columns)
        .map(|(name, weights)| WeightScheme::new(name, weights))
        .collect()
}

pub fn load_weight_table(
    path: &Path,
    schema: &SchemaDefinition,
) -> Result<Vec<WeightScheme>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_weight_table(&text, schema)
}

/// The ten shipped schemes: average, importance-based and eight random allocations.
pub fn builtin_schemes() -> Vec<WeightScheme> {
    parse_weight_table(BUILTIN_WEIGHT_TABLE, &SchemaDefinition::builtin())
        .expect("shipped weight table is valid")
}

/// The shipped weight table in its file form.
pub fn builtin_weight_table() -> &'static str {
    BUILTIN_WEIGHT_TABLE
}

pub fn exact_match_score(pred: &str, gold: &str) -> f64 {
    if pred.trim() == gold.trim() {
        100.0
    } else {
        0.0
    }
}

/// Clamped cosine similarity of the two texts' embeddings, scaled to [0, 100].
///
/// Two empty texts agree perfectly (100); exactly one empty text scores 0.
pub fn similarity_score(
    pred: &str,
    gold: &str,
    embedder: &dyn Embedder,
) -> Result<f64, GatewayError> {
    match (pred.trim().is_empty(), gold.trim().is_empty()) {
        (true, true) => return Ok(100.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let a = embedder.embed(pred)?;
    let b = embedder.embed(gold)?;
    Ok(cosine(&a, &b).clamp(0.0, 1.0) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldScore {
    pub field_key: FieldKey,
    pub method: EvalMethod,
    pub score: f64,
}

/// An embedding failure while scoring one field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {source}")]
pub struct FieldError {
    pub field: FieldKey,
    pub source: GatewayError,
}

/// Scores every field, recording embedding failures as 0 plus an error.
fn score_fields(
    pred: Option<&PersonRecord>,
    gold: &PersonRecord,
    schema: &SchemaDefinition,
    embedder: &dyn Embedder,
) -> (Vec<FieldScore>, Vec<FieldError>) {
    let mut errors = Vec::new();
    let scores = schema
        .fields
        .iter()
        .map(|spec| {
            let score = match pred {
                None => 0.0,
                Some(pred) => {
                    let p = canonicalize_field_text(pred, spec.key);
                    let g = canonicalize_field_text(gold, spec.key);
                    match spec.eval_method {
                        EvalMethod::ExactMatch => exact_match_score(&p, &g),
                        EvalMethod::VectorSimilarity => similarity_score(&p, &g, embedder)
                            .unwrap_or_else(|e| {
                                errors.push(FieldError {
                                    field: spec.key,
                                    source: e,
                                });
                                0.0
                            }),
                    }
                }
            };
            FieldScore {
                field_key: spec.key,
                method: spec.eval_method,
                score,
            }
        })
        .collect();
    (scores, errors)
}

/// Scores a prediction field by field. `None` (unparseable or missing output)
/// scores 0 on every field.
pub fn score_record(
    pred: Option<&PersonRecord>,
    gold: &PersonRecord,
    schema: &SchemaDefinition,
    embedder: &dyn Embedder,
) -> Result<Vec<FieldScore>, FieldError> {
    let (scores, mut errors) = score_fields(pred, gold, schema, embedder);
    match errors.is_empty() {
        true => Ok(scores),
        false => Err(errors.swap_remove(0)),
    }
}

/// Weighted mean of 14 field scores in schema order.
///
/// Divides by the weight sum, so constant scores aggregate to that constant
/// even for schemes whose tabulated weights sum to 1.00002.
pub fn aggregate(scores: &[f64], scheme: &WeightScheme) -> Result<f64, EvalError> {
    if scheme.weights.len() != FieldKey::ALL.len() {
        return Err(EvalError::SchemeLength {
            scheme: scheme.name.clone(),
            len: scheme.weights.len(),
        });
    }
    if scores.len() != FieldKey::ALL.len() {
        return Err(EvalError::ScoreCount(scores.len()));
    }
    let total: f64 = scheme.weights.iter().zip(scores).map(|(w, s)| w * s).sum();
    Ok(total / scheme.sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub record_id: String,
    /// `None` when the model output could not be parsed or validated.
    pub record: Option<PersonRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldEntry {
    pub record_id: String,
    pub record: PersonRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub record_id: String,
    pub field_scores: Vec<FieldScore>,
    pub weighted_total: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub missing_prediction: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMean {
    pub field_key: FieldKey,
    pub method: EvalMethod,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scheme_name: String,
    pub weights: Vec<f64>,
    pub run_mean: f64,
    pub field_means: Vec<FieldMean>,
    pub per_record: Vec<RecordReport>,
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<BTreeSet<&'a str>, EvalError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(EvalError::DuplicateId(id.to_string()));
        }
    }
    Ok(seen)
}

/// Scores every gold record against the prediction with the same id.
///
/// Gold records without a prediction score 0 everywhere; predictions without
/// a gold record are an error. Per-record order follows `golds`.
pub fn evaluate_run(
    preds: &[PredictionEntry],
    golds: &[GoldEntry],
    schema: &SchemaDefinition,
    scheme: &WeightScheme,
    embedder: &dyn Embedder,
) -> Result<EvaluationReport, EvalError> {
    scheme.validate()?;
    if golds.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let gold_ids = check_unique(golds.iter().map(|g| g.record_id.as_str()))?;
    check_unique(preds.iter().map(|p| p.record_id.as_str()))?;
    let unmatched: Vec<String> = preds
        .iter()
        .filter(|p| !gold_ids.contains(p.record_id.as_str()))
        .map(|p| p.record_id.clone())
        .collect();
    if !unmatched.is_empty() {
        return Err(EvalError::UnmatchedIds(unmatched));
    }
    let by_id: HashMap<&str, &PredictionEntry> =
        preds.iter().map(|p| (p.record_id.as_str(), p)).collect();

    let mut per_record = Vec::with_capacity(golds.len());
    for gold in golds {
        let pred = by_id.get(gold.record_id.as_str());
        let (field_scores, errors) = score_fields(
            pred.and_then(|p| p.record.as_ref()),
            &gold.record,
            schema,
            embedder,
        );
        let values: Vec<f64> = field_scores.iter().map(|f| f.score).collect();
        per_record.push(RecordReport {
            record_id: gold.record_id.clone(),
            weighted_total: aggregate(&values, scheme)?,
            field_scores,
            missing_prediction: pred.is_none(),
            errors: errors.iter().map(ToString::to_string).collect(),
        });
    }
    Ok(summarize(per_record, scheme))
}

fn summarize(per_record: Vec<RecordReport>, scheme: &WeightScheme) -> EvaluationReport {
    let n = per_record.len() as f64;
    let field_means = FieldKey::ALL
        .iter()
        .enumerate()
        .map(|(i, key)| FieldMean {
            field_key: *key,
            method: per_record[0].field_scores[i].method,
            mean: per_record
                .iter()
                .map(|r| r.field_scores[i].score)
                .sum::<f64>()
                / n,
        })
        .collect();
    EvaluationReport {
        scheme_name: scheme.name.clone(),
        weights: scheme.weights.clone(),
        run_mean: per_record.iter().map(|r| r.weighted_total).sum::<f64>() / n,
        field_means,
        per_record,
    }
}

impl EvaluationReport {
    /// Same field scores aggregated under another scheme.
    pub fn reweighted(&self, scheme: &WeightScheme) -> Result<EvaluationReport, EvalError> {
        scheme.validate()?;
        let mut per_record = self.per_record.clone();
        for r in &mut per_record {
            let values: Vec<f64> = r.field_scores.iter().map(|f| f.score).collect();
            r.weighted_total = aggregate(&values, scheme)?;
        }
        Ok(summarize(per_record, scheme))
    }

    /// Record ids in report order.
    pub fn record_ids(&self) -> Vec<&str> {
        self.per_record
            .iter()
            .map(|r| r.record_id.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering: per-field means, then per-record totals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scheme: {}", self.scheme_name);
        let _ = writeln!(
            out,
            "{:<16} {:<17} {:>6} {:>9}",
            "field", "method", "weight", "mean"
        );
        for (fm, w) in self.field_means.iter().zip(&self.weights) {
            let _ = writeln!(
                out,
                "{:<16} {:<17} {:>6.4} {:>9.4}",
                fm.field_key.as_str(),
                fm.method.to_string(),
                w,
                fm.mean
            );
        }
        let id_width = self
            .per_record
            .iter()
            .map(|r| r.record_id.chars().count())
            .max()
            .unwrap_or(0)
            .max(9);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<id_width$} {:>14}", "record_id", "weighted_total");
        for r in &self.per_record {
            let flag = if r.missing_prediction {
                "  (missing)"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "{:<id_width$} {:>14.4}{flag}",
                r.record_id, r.weighted_total
            );
        }
        let _ = writeln!(out, "{:<id_width$} {:>14.4}", "run_mean", self.run_mean);
        out
    }
}
