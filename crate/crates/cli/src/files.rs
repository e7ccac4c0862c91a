//! JSONL line formats shared by the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use personkg_core::corpus::{person_texts, read_corpus_dir, CorpusLine};
use personkg_core::schema::{validate_value, PersonRecord, SchemaDefinition, ValidationMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One gold annotation. `text` may be omitted when a corpus supplies it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLine {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub record: Value,
}

/// One extraction input. Gold lines are accepted too; extra keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestLine {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ParseError,
    Invalid,
    RequestError,
    PromptError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub record_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_record: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_jsonl(&text).with_context(|| path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("lines serialize"));
        out.push('\n');
    }
    out
}

/// Name used to look a record up in the corpus: the explicit person name,
/// else the annotation's name field.
pub fn lookup_name(
    person_name: Option<&str>,
    record: Option<&Value>,
    schema: &SchemaDefinition,
) -> Option<String> {
    if let Some(p) = person_name.filter(|p| !p.trim().is_empty()) {
        return Some(p.trim().to_string());
    }
    let v = validate_value(record?, schema, ValidationMode::Lenient).ok()?;
    Some(v.record.name)
}

/// Per-person corpus texts (documents joined by newlines) and tags.
#[derive(Debug, Default)]
pub struct CorpusIndex {
    pub texts: BTreeMap<String, String>,
    pub tags: BTreeMap<String, Vec<String>>,
}

impl CorpusIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let lines = read_corpus_dir(dir)?;
        Ok(Self::from_lines(&lines))
    }

    pub fn from_lines(lines: &[CorpusLine]) -> Self {
        let mut idx = CorpusIndex::default();
        for (person, docs) in person_texts(lines) {
            let joined: Vec<&str> = docs.iter().map(|(_, t)| t.as_str()).collect();
            idx.texts.insert(person, joined.join("\n"));
        }
        for line in lines {
            let tags = idx.tags.entry(line.person_name.clone()).or_default();
            for t in &line.tags {
                if !tags.contains(t) {
                    tags.push(t.clone());
                }
            }
        }
        idx
    }
}

/// Resolves the character text for a line, preferring its own `text`.
pub fn character_text(
    own: Option<&str>,
    name: Option<&str>,
    corpus: Option<&CorpusIndex>,
) -> Option<String> {
    if let Some(t) = own.filter(|t| !t.trim().is_empty()) {
        return Some(t.to_string());
    }
    corpus?.texts.get(name?).cloned()
}

/// Records to graph from any of: prediction lines (`status`/`person_record`),
/// gold lines (`record`), or bare record objects. Lines that are not `ok`
/// predictions are skipped silently; unusable records produce warnings.
pub fn records_from_lines(
    text: &str,
    schema: &SchemaDefinition,
) -> Result<(Vec<PersonRecord>, Vec<String>)> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        let candidate = if value.get("status").is_some() {
            if value["status"] != "ok" {
                continue;
            }
            value.get("person_record")
        } else if let Some(r) = value.get("record") {
            Some(r)
        } else {
            Some(&value)
        };
        let Some(candidate) = candidate else {
            warnings.push(format!("line {}: no record", i + 1));
            continue;
        };
        match validate_value(candidate, schema, ValidationMode::Lenient) {
            Ok(v) => records.push(v.record),
            Err(issues) => {
                let first = issues
                    .iter()
                    .find(|x| x.is_error())
                    .map(|x| x.to_string())
                    .unwrap_or_default();
                warnings.push(format!("line {}: {first}", i + 1));
            }
        }
    }
    Ok((records, warnings))
}
