//! Alpaca-format instruction samples.
//!
//! Each sample folds the character text into the rendered extraction prompt
//! (`instruction`), leaves `input` empty and stores the gold record as
//! minified JSON with Chinese keys (`output`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prompt::PromptTemplate;
use crate::schema::{
    validate_value, KeyLanguage, SchemaDefinition, ValidationIssue, ValidationMode,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("requested {requested} samples but only {available} are available")]
    NotEnoughSamples { requested: usize, available: usize },
    #[error("sample {index} ({person}) has no strata labels")]
    MissingStrata { index: usize, person: String },
    #[error("{path}: malformed JSON at line {line}, column {column}: {message}")]
    Malformed {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: record {index}: {message}")]
    Schema {
        path: String,
        index: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub person_name: String,
    pub strata_labels: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub meta: SampleMeta,
}

/// The three keys a trainer sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlpacaRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl From<&InstructionSample> for AlpacaRecord {
    fn from(s: &InstructionSample) -> Self {
        AlpacaRecord {
            instruction: s.instruction.clone(),
            input: s.input.clone(),
            output: s.output.clone(),
        }
    }
}

/// One (character text, gold annotation) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldPair {
    pub character_text: String,
    /// Raw gold annotation; validated strictly during building.
    pub gold: Value,
    pub person_name: String,
    pub strata_labels: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Put the character text in `input` and render the instruction with an empty frame.
    pub split_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairError {
    pub index: usize,
    pub person_name: String,
    pub issues: Vec<ValidationIssue>,
    pub prompt_error: Option<String>,
}

#[derive(Debug, Default)]
pub struct BuildOutcome {
    pub samples: Vec<InstructionSample>,
    pub errors: Vec<PairError>,
}

/// One sample per valid pair, in input order. Invalid pairs are skipped and reported.
pub fn build_samples(
    pairs: &[GoldPair],
    template: &PromptTemplate,
    schema: &SchemaDefinition,
    opts: BuildOptions,
) -> BuildOutcome {
    let mut out = BuildOutcome::default();
    for (index, pair) in pairs.iter().enumerate() {
        let record = match validate_value(&pair.gold, schema, ValidationMode::Strict) {
            Ok(v) => v.record,
            Err(issues) => {
                out.errors.push(PairError {
                    index,
                    person_name: pair.person_name.clone(),
                    issues: issues
                        .into_iter()
                        .filter(ValidationIssue::is_error)
                        .collect(),
                    prompt_error: None,
                });
                continue;
            }
        };
        let rendered = if opts.split_input {
            template
                .render("")
                .map(|i| (i, pair.character_text.clone()))
        } else {
            template
                .render(&pair.character_text)
                .map(|i| (i, String::new()))
        };
        let (instruction, input) = match rendered {
            Ok(v) => v,
            Err(e) => {
                out.errors.push(PairError {
                    index,
                    person_name: pair.person_name.clone(),
                    issues: Vec::new(),
                    prompt_error: Some(e.to_string()),
                });
                continue;
            }
        };
        out.samples.push(InstructionSample {
            instruction,
            input,
            output: record.to_json_string(schema, KeyLanguage::Zh),
            meta: SampleMeta {
                person_name: if pair.person_name.is_empty() {
                    record.name.clone()
                } else {
                    pair.person_name.clone()
                },
                strata_labels: pair.strata_labels.clone(),
            },
        });
    }
    out
}

/// Largest-remainder apportionment of `n` over strata with the given sizes.
/// Ties in the remainder go to the earlier stratum.
pub fn largest_remainder_quotas(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&c| n * c / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Stable sort keeps stratum order among equal remainders.
    order.sort_by(|&a, &b| ((n * sizes[b]) % total).cmp(&((n * sizes[a]) % total)));
    for &i in order.iter().take(n - assigned) {
        quotas[i] += 1;
    }
    quotas
}

/// Stratum used for quota purposes: the lexicographically first label.
fn primary_stratum(sample: &InstructionSample) -> Option<&str> {
    sample.meta.strata_labels.iter().next().map(String::as_str)
}

/// Proportional stratified subset of size `n`, deterministic in `seed`.
///
/// Strata are apportioned by largest remainder; within a stratum the
/// selection is a seeded uniform shuffle. Output keeps input order.
pub fn stratified_sample(
    samples: &[InstructionSample],
    n: usize,
    seed: u64,
) -> Result<Vec<InstructionSample>, DatasetError> {
    if n > samples.len() {
        return Err(DatasetError::NotEnoughSamples {
            requested: n,
            available: samples.len(),
        });
    }
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let label = primary_stratum(s).ok_or_else(|| DatasetError::MissingStrata {
            index: i,
            person: s.meta.person_name.clone(),
        })?;
        strata.entry(label).or_default().push(i);
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let quotas = largest_remainder_quotas(&sizes, n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for (members, quota) in strata.into_values().zip(quotas) {
        let mut members = members;
        members.shuffle(&mut rng);
        chosen.extend(members.into_iter().take(quota));
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| samples[i].clone()).collect())
}

/// Sidecar path holding per-sample metadata.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.jsonl");
    PathBuf::from(s)
}

/// Writes the Alpaca JSON array and the `.meta.jsonl` sidecar.
pub fn export_alpaca(samples: &[InstructionSample], path: &Path) -> Result<(), DatasetError> {
    let records: Vec<AlpacaRecord> = samples.iter().map(AlpacaRecord::from).collect();
    let json = serde_json::to_string_pretty(&records).expect("alpaca records serialize");
    fs::write(path, json).map_err(io_err(path))?;
    let meta = meta_path(path);
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, &s.meta).expect("meta serializes");
        buf.push(b'\n');
    }
    fs::File::create(&meta)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io_err(&meta))
}

/// Reads an Alpaca file, enforcing exactly the keys `instruction`, `input`, `output`.
/// Metadata is attached from the sidecar when present.
pub fn import_alpaca(path: &Path) -> Result<Vec<InstructionSample>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| DatasetError::Malformed {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let records = parse_alpaca_value(&value).map_err(|(index, message)| DatasetError::Schema {
        path: path.display().to_string(),
        index,
        message,
    })?;

    let meta_file = meta_path(path);
    let mut metas: Vec<SampleMeta> = Vec::new();
    if meta_file.exists() {
        let f = fs::File::open(&meta_file).map_err(io_err(&meta_file))?;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(&meta_file))?;
            if line.trim().is_empty() {
                continue;
            }
            metas.push(
                serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                    path: meta_file.display().to_string(),
                    line: i + 1,
                    column: e.column(),
                    message: e.to_string(),
                })?,
            );
        }
    }
    let mut metas = metas.into_iter();
    Ok(records
        .into_iter()
        .map(|r| InstructionSample {
            instruction: r.instruction,
            input: r.input,
            output: r.output,
            meta: metas.next().unwrap_or_default(),
        })
        .collect())
}

/// Checks the Alpaca key-set contract on an already parsed document.
pub fn parse_alpaca_value(value: &Value) -> Result<Vec<AlpacaRecord>, (usize, String)> {
    let items = value
        .as_array()
        .ok_or((0, "top-level value must be an array".to_string()))?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or((i, "entry is not an object".to_string()))?;
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        if keys != ["input", "instruction", "output"] {
            return Err((
                i,
                format!(
                    "expected keys instruction, input, output; found {}",
                    keys.join(", ")
                ),
            ));
        }
        let field = |k: &str| {
            obj[k]
                .as_str()
                .map(str::to_string)
                .ok_or((i, format!("`{k}` must be a string")))
        };
        out.push(AlpacaRecord {
            instruction: field("instruction")?,
            input: field("input")?,
            output: field("output")?,
        });
    }
    Ok(out)
}
