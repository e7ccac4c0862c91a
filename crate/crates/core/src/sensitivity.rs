//! How strongly each weight scheme separates checkpoints of a fine-tuning run.
//!
//! A scheme whose aggregated run scores vary more across checkpoints is the
//! more discriminative one.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{aggregate, EvaluationReport, WeightScheme};

const REFERENCE_MATRIX: &str = include_str!("../data/reference_scores.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceMode::Population => "population",
            VarianceMode::Sample => "sample",
        })
    }
}

impl FromStr for VarianceMode {
    type Err = SensitivityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "population" | "pop" => Ok(VarianceMode::Population),
            "sample" => Ok(VarianceMode::Sample),
            other => Err(SensitivityError::Mode(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("{mode} variance needs at least {needed} values, got {got}")]
    TooFewPoints {
        mode: VarianceMode,
        needed: usize,
        got: usize,
    },
    #[error("need at least 2 checkpoints, got {0}")]
    TooFewCheckpoints(usize),
    #[error("no schemes given")]
    NoSchemes,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("checkpoint {0:?} was evaluated on a different test set")]
    DifferingTestSets(String),
    #[error("unknown variance mode {0:?} (expected population or sample)")]
    Mode(String),
    #[error("score matrix: {0}")]
    Matrix(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub fn variance(xs: &[f64], mode: VarianceMode) -> Result<f64, SensitivityError> {
    let needed = match mode {
        VarianceMode::Population => 1,
        VarianceMode::Sample => 2,
    };
    if xs.len() < needed {
        return Err(SensitivityError::TooFewPoints {
            mode,
            needed,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    Ok(match mode {
        VarianceMode::Population => ss / n,
        VarianceMode::Sample => ss / (n - 1.0),
    })
}

/// Run scores per scheme (rows) and checkpoint (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityInput {
    pub checkpoints: Vec<String>,
    pub schemes: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl SensitivityInput {
    pub fn validate(&self) -> Result<(), SensitivityError> {
        if self.checkpoints.len() < 2 {
            return Err(SensitivityError::TooFewCheckpoints(self.checkpoints.len()));
        }
        if self.schemes.is_empty() {
            return Err(SensitivityError::NoSchemes);
        }
        if self.scores.len() != self.schemes.len() {
            return Err(SensitivityError::Dimension(format!(
                "{} schemes but {} score rows",
                self.schemes.len(),
                self.scores.len()
            )));
        }
        for (name, row) in self.schemes.iter().zip(&self.scores) {
            if row.len() != self.checkpoints.len() {
                return Err(SensitivityError::Dimension(format!(
                    "row {name:?} has {} scores for {} checkpoints",
                    row.len(),
                    self.checkpoints.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeVariance {
    pub scheme_name: String,
    /// Variance under the report's mode.
    pub variance: f64,
    pub population: f64,
    pub sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub variance_mode: VarianceMode,
    pub checkpoints: Vec<String>,
    pub per_scheme: Vec<SchemeVariance>,
    pub selected_scheme: String,
}

/// Variance of every scheme's scores and the scheme with the largest one
/// (earliest scheme wins ties).
pub fn scheme_sensitivity(
    input: &SensitivityInput,
    mode: VarianceMode,
) -> Result<SensitivityReport, SensitivityError> {
    input.validate()?;
    let mut per_scheme = Vec::with_capacity(input.schemes.len());
    for (name, row) in input.schemes.iter().zip(&input.scores) {
        let population = variance(row, VarianceMode::Population)?;
        let sample = variance(row, VarianceMode::Sample)?;
        let variance = match mode {
            VarianceMode::Population => population,
            VarianceMode::Sample => sample,
        };
        per_scheme.push(SchemeVariance {
            scheme_name: name.clone(),
            variance,
            population,
            sample,
        });
    }
    let mut best = 0;
    for (i, s) in per_scheme.iter().enumerate() {
        if s.variance > per_scheme[best].variance {
            best = i;
        }
    }
    Ok(SensitivityReport {
        variance_mode: mode,
        checkpoints: input.checkpoints.clone(),
        selected_scheme: per_scheme[best].scheme_name.clone(),
        per_scheme,
    })
}

/// Builds the score matrix from per-checkpoint evaluation reports by
/// re-aggregating their per-field means under every scheme.
pub fn recompute_from_field_scores(
    reports: &[(String, EvaluationReport)],
    schemes: &[WeightScheme],
) -> Result<SensitivityInput, SensitivityError> {
    if schemes.is_empty() {
        return Err(SensitivityError::NoSchemes);
    }
    if let Some((_, first)) = reports.first() {
        let mut reference = first.record_ids();
        reference.sort_unstable();
        for (label, r) in &reports[1..] {
            let mut ids = r.record_ids();
            ids.sort_unstable();
            if ids != reference {
                return Err(SensitivityError::DifferingTestSets(label.clone()));
            }
        }
    }
    let mut scores = Vec::with_capacity(schemes.len());
    for scheme in schemes {
        let mut row = Vec::with_capacity(reports.len());
        for (label, r) in reports {
            let means: Vec<f64> = r.field_means.iter().map(|f| f.mean).collect();
            row.push(
                aggregate(&means, scheme)
                    .map_err(|e| SensitivityError::Dimension(format!("{label}: {e}")))?,
            );
        }
        scores.push(row);
    }
    Ok(SensitivityInput {
        checkpoints: reports.iter().map(|(l, _)| l.clone()).collect(),
        schemes: schemes.iter().map(|s| s.name.clone()).collect(),
        scores,
    })
}

/// A parsed score-matrix file. `listed_variance` holds an optional trailing
/// `Variance` column as given in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub input: SensitivityInput,
    pub listed_variance: Vec<Option<f64>>,
}

/// Parses `Weighting Method,<checkpoint>...[,Variance]` CSV text.
pub fn parse_score_matrix(text: &str) -> Result<ScoreMatrix, SensitivityError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| SensitivityError::Matrix(e.to_string()))?
        .clone();
    let has_variance = headers
        .iter()
        .next_back()
        .is_some_and(|h| h.eq_ignore_ascii_case("variance"));
    let end = if has_variance {
        headers.len() - 1
    } else {
        headers.len()
    };
    let checkpoints: Vec<String> = headers
        .iter()
        .take(end)
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut schemes = Vec::new();
    let mut scores = Vec::new();
    let mut listed_variance = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| SensitivityError::Matrix(format!("line {line}: {e}")))?;
        let num = |cell: &str| {
            cell.parse::<f64>().map_err(|_| {
                SensitivityError::Matrix(format!("line {line}: {cell:?} is not a number"))
            })
        };
        if row.len() != headers.len() {
            return Err(SensitivityError::Matrix(format!(
                "line {line}: expected {} columns",
                headers.len()
            )));
        }
        schemes.push(row[0].to_string());
        scores.push(
            row.iter()
                .take(end)
                .skip(1)
                .map(num)
                .collect::<Result<Vec<_>, _>>()?,
        );
        listed_variance.push(match has_variance && !row[end].is_empty() {
            true => Some(num(&row[end])?),
            false => None,
        });
    }
    let input = SensitivityInput {
        checkpoints,
        schemes,
        scores,
    };
    input.validate()?;
    Ok(ScoreMatrix {
        input,
        listed_variance,
    })
}

pub fn load_score_matrix(path: &Path) -> Result<ScoreMatrix, SensitivityError> {
    let text = std::fs::read_to_string(path).map_err(|e| SensitivityError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_score_matrix(&text)
}

/// Run scores of ten weight schemes at fine-tuning epochs 0/10/30/50, with
/// the variance column as originally printed.
pub fn reference_score_matrix() -> &'static str {
    REFERENCE_MATRIX
}

impl SensitivityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_table(&self) -> String {
        let w = self
            .per_scheme
            .iter()
            .map(|s| s.scheme_name.chars().count())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w$}  {:>12}  {:>12}",
            "scheme", "population", "sample"
        );
        for s in &self.per_scheme {
            let mark = if s.scheme_name == self.selected_scheme {
                "  *"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "{:<w$}  {:>12.4}  {:>12.4}{mark}",
                s.scheme_name, s.population, s.sample
            );
        }
        let _ = writeln!(
            out,
            "selected ({} variance): {}",
            self.variance_mode, self.selected_scheme
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_arithmetic() {
        assert_eq!(
            variance(&[0.0, 10.0], VarianceMode::Population).unwrap(),
            25.0
        );
        assert_eq!(variance(&[0.0, 10.0], VarianceMode::Sample).unwrap(), 50.0);
        assert_eq!(variance(&[7.5; 4], VarianceMode::Population).unwrap(), 0.0);
        assert_eq!(variance(&[3.0], VarianceMode::Population).unwrap(), 0.0);
    }

    #[test]
    fn too_few_points() {
        assert!(variance(&[], VarianceMode::Population).is_err());
        assert_eq!(
            variance(&[1.0], VarianceMode::Sample),
            Err(SensitivityError::TooFewPoints {
                mode: VarianceMode::Sample,
                needed: 2,
                got: 1
            })
        );
    }

    #[test]
    fn average_row() {
        let v = variance(
            &[77.3896, 87.3133, 88.3156, 88.3746],
            VarianceMode::Population,
        )
        .unwrap();
        assert!((v - 21.2913).abs() < 5e-4, "{v}");
    }

    #[test]
    fn reference_selects_random1() {
        let m = parse_score_matrix(reference_score_matrix()).unwrap();
        assert_eq!(m.input.checkpoints, ["0", "10", "30", "50"]);
        assert_eq!(m.input.schemes.len(), 10);
        for mode in [VarianceMode::Population, VarianceMode::Sample] {
            assert_eq!(
                scheme_sensitivity(&m.input, mode).unwrap().selected_scheme,
                "Random 1"
            );
        }
    }

    #[test]
    fn tie_goes_to_first() {
        let input = SensitivityInput {
            checkpoints: vec!["a".into(), "b".into()],
            schemes: vec!["x".into(), "y".into(), "z".into()],
            scores: vec![vec![1.0, 1.0], vec![0.0, 4.0], vec![10.0, 14.0]],
        };
        assert_eq!(
            scheme_sensitivity(&input, VarianceMode::Population)
                .unwrap()
                .selected_scheme,
            "y"
        );
    }

    #[test]
    fn dimension_errors() {
        let mut input = SensitivityInput {
            checkpoints: vec!["a".into(), "b".into()],
            schemes: vec!["x".into()],
            scores: vec![vec![1.0]],
        };
        assert!(matches!(
            scheme_sensitivity(&input, VarianceMode::Population),
            Err(SensitivityError::Dimension(_))
        ));
        input.checkpoints.pop();
        assert_eq!(
            input.validate(),
            Err(SensitivityError::TooFewCheckpoints(1))
        );
    }

    #[test]
    fn matrix_without_variance_column() {
        let m = parse_score_matrix("Weighting Method,0,10\nA,1,2\nB,3,3\n").unwrap();
        assert_eq!(m.listed_variance, [None, None]);
        assert_eq!(m.input.scores[1], [3.0, 3.0]);
        assert!(parse_score_matrix("Weighting Method,0,10\nA,1,x\n").is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "Sample".parse::<VarianceMode>().unwrap(),
            VarianceMode::Sample
        );
        assert!("median".parse::<VarianceMode>().is_err());
    }
}
