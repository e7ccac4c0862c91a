//! Character-text preparation: clean, deduplicate, group per person, segment.
//!
//! Ingestion starts from local files listed in a manifest or laid out as
//! `person_name/source_kind/*.txt`. Output is one line-delimited JSON corpus
//! file per person.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::sha256_hex;

pub const MIN_SEGMENT_CHARS: usize = 50;
pub const DEFAULT_SEGMENT_CHARS: usize = 300;
pub const DEFAULT_NEAR_DUP_THRESHOLD: f64 = 0.9;
pub const NGRAM: usize = 5;
/// Group receiving documents without a person label.
pub const UNASSIGNED: &str = "<unassigned>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("max_segment_chars must be at least {MIN_SEGMENT_CHARS}, got {0}")]
    SegmentLimit(usize),
    #[error("near-duplicate threshold must be in (0, 1], got {0}")]
    Threshold(f64),
    #[error("unknown source kind `{0}` (expected encyclopedia, news, thematic-site or book)")]
    SourceKind(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("corpus file {path} line {line}: {message}")]
    CorpusLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Encyclopedia,
    News,
    ThematicSite,
    Book,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Encyclopedia => "encyclopedia",
            SourceKind::News => "news",
            SourceKind::ThematicSite => "thematic-site",
            SourceKind::Book => "book",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "encyclopedia" => Ok(SourceKind::Encyclopedia),
            "news" => Ok(SourceKind::News),
            "thematic-site" | "thematic" => Ok(SourceKind::ThematicSite),
            "book" | "document" => Ok(SourceKind::Book),
            _ => Err(CorpusError::SourceKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    /// May be empty until grouping routes it to [`UNASSIGNED`].
    pub person_name: String,
    pub source_kind: SourceKind,
    pub raw_text: String,
    pub segments: Vec<String>,
    /// Free-form stratification tags (domain, period) carried from the manifest.
    #[serde(default)]
    pub tags: Vec<String>,
}

fn is_zero_width(c: char) -> bool {
    matches!(
        c,
        '\u{200b}'..='\u{200f}' | '\u{2060}' | '\u{feff}' | '\u{00ad}'
    )
}

/// Decorative glyphs stripped from scraped pages.
fn is_decorative(c: char) -> bool {
    matches!(
        c,
        '★' | '☆'
            | '▲'
            | '△'
            | '▼'
            | '▽'
            | '◆'
            | '◇'
            | '■'
            | '□'
            | '●'
            | '○'
            | '◎'
            | '※'
            | '❤'
            | '♥'
            | '♦'
            | '♠'
            | '♣'
            | '►'
            | '◄'
            | '▶'
            | '◀'
            | '✦'
            | '✧'
            | '✪'
            | '✿'
            | '❀'
            | '\u{fffd}'
    )
}

/// Removes control characters, zero-width characters and decorative symbols,
/// collapses whitespace runs to one space and trims. Idempotent.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if c.is_control() || is_zero_width(c) || is_decorative(c) {
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

fn ngram_set(text: &str, n: usize) -> HashSet<&str> {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain([text.len()])
        .collect();
    let chars = bounds.len() - 1;
    if chars == 0 {
        return HashSet::new();
    }
    if chars < n {
        return HashSet::from([text]);
    }
    (0..=chars - n)
        .map(|i| &text[bounds[i]..bounds[i + n]])
        .collect()
}

/// Jaccard similarity of the character n-gram sets of two texts.
/// Texts shorter than `n` contribute themselves as a single gram.
pub fn char_ngram_jaccard(a: &str, b: &str, n: usize) -> f64 {
    let sa = ngram_set(a, n);
    let sb = ngram_set(b, n);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DedupeStats {
    pub exact_removed: usize,
    pub near_removed: usize,
}

/// Removes exact duplicates (after whitespace normalization) keeping the
/// first occurrence, then, when `near_threshold` is set, any document whose
/// 5-gram Jaccard similarity with an already kept document reaches it.
pub fn dedupe(
    docs: Vec<CorpusDocument>,
    near_threshold: Option<f64>,
) -> Result<(Vec<CorpusDocument>, DedupeStats), CorpusError> {
    if let Some(t) = near_threshold {
        if !(t > 0.0 && t <= 1.0) {
            return Err(CorpusError::Threshold(t));
        }
    }
    let mut stats = DedupeStats::default();
    let mut seen = HashSet::new();
    let mut kept: Vec<CorpusDocument> = Vec::with_capacity(docs.len());
    for doc in docs {
        let key = doc
            .raw_text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if !seen.insert(key) {
            stats.exact_removed += 1;
            continue;
        }
        if let Some(t) = near_threshold {
            if kept
                .iter()
                .any(|k| char_ngram_jaccard(&k.raw_text, &doc.raw_text, NGRAM) >= t)
            {
                stats.near_removed += 1;
                continue;
            }
        }
        kept.push(doc);
    }
    Ok((kept, stats))
}

fn is_terminator(c: char) -> bool {
    matches!(c, '。' | '！' | '？' | '；' | '.' | '!' | '?')
}

/// Greedily packs sentences into segments of at most `max_chars` characters.
///
/// Sentences end at `。！？；.!?` and keep their terminator. A sentence longer
/// than the limit is hard-split. Concatenating the output reproduces `text`.
pub fn segment(text: &str, max_chars: usize) -> Result<Vec<String>, CorpusError> {
    if max_chars < MIN_SEGMENT_CHARS {
        return Err(CorpusError::SegmentLimit(max_chars));
    }
    let mut sentences: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        cur.push(c);
        if is_terminator(c) {
            sentences.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        sentences.push(cur);
    }

    let mut segments = Vec::new();
    let mut current = String::new();
    let mut current_len = 0usize;
    for sentence in sentences {
        let len = sentence.chars().count();
        if current_len + len <= max_chars {
            current.push_str(&sentence);
            current_len += len;
            continue;
        }
        if !current.is_empty() {
            segments.push(std::mem::take(&mut current));
            current_len = 0;
        }
        if len <= max_chars {
            current = sentence;
            current_len = len;
            continue;
        }
        let chars: Vec<char> = sentence.chars().collect();
        let mut chunks = chars.chunks(max_chars).peekable();
        while let Some(chunk) = chunks.next() {
            let piece: String = chunk.iter().collect();
            if chunks.peek().is_some() {
                segments.push(piece);
            } else {
                current_len = chunk.len();
                current = piece;
            }
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }
    Ok(segments)
}

#[derive(Debug, Default)]
pub struct Grouped {
    pub groups: BTreeMap<String, Vec<CorpusDocument>>,
    pub warnings: Vec<String>,
}

/// Partitions documents by person label, keeping input order within a group.
pub fn group_by_person(docs: Vec<CorpusDocument>) -> Grouped {
    let mut out = Grouped::default();
    for doc in docs {
        let key = if doc.person_name.trim().is_empty() {
            out.warnings.push(format!(
                "document {} has no person name; routed to {UNASSIGNED}",
                doc.doc_id
            ));
            UNASSIGNED.to_string()
        } else {
            doc.person_name.trim().to_string()
        };
        out.groups.entry(key).or_default().push(doc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub person_name: String,
    pub source_kind: SourceKind,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(default)]
    doc: Vec<ManifestEntry>,
}

/// Reads a TOML manifest of `[[doc]]` tables. Relative paths resolve against
/// the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parsed: ManifestFile = toml::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parsed
        .doc
        .into_iter()
        .map(|mut e| {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            e
        })
        .collect())
}

/// Builds manifest entries from a `person_name/source_kind/*.txt` tree, sorted by path.
pub fn scan_directory(root: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let mut entries = Vec::new();
    for person in sorted_dir(root)? {
        if !person.is_dir() {
            continue;
        }
        let person_name = person
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        for kind_dir in sorted_dir(&person)? {
            if !kind_dir.is_dir() {
                continue;
            }
            let kind: SourceKind = kind_dir
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .parse()?;
            for file in sorted_dir(&kind_dir)? {
                if file.extension().is_some_and(|e| e == "txt") {
                    entries.push(ManifestEntry {
                        path: file,
                        person_name: person_name.clone(),
                        source_kind: kind,
                        tags: Vec::new(),
                    });
                }
            }
        }
    }
    Ok(entries)
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub max_segment_chars: usize,
    /// Near-duplicate pass is off unless a threshold is given.
    pub near_duplicate_threshold: Option<f64>,
    /// Documents shorter than this (in characters, after cleaning) are dropped.
    pub min_chars: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_segment_chars: DEFAULT_SEGMENT_CHARS,
            near_duplicate_threshold: None,
            min_chars: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub docs_in: usize,
    pub docs_kept: usize,
    pub unreadable: Vec<String>,
    pub exact_duplicates: usize,
    pub near_duplicates: usize,
    pub too_short: usize,
    pub segments: usize,
    pub persons: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in, {} kept", self.docs_in, self.docs_kept)
    }
}

/// Runs read → clean → filter → dedupe → group → segment.
/// Unreadable files are reported in the summary and skipped.
pub fn run_pipeline(
    entries: &[ManifestEntry],
    cfg: &PipelineConfig,
) -> Result<(BTreeMap<String, Vec<CorpusDocument>>, CorpusSummary), CorpusError> {
    if cfg.max_segment_chars < MIN_SEGMENT_CHARS {
        return Err(CorpusError::SegmentLimit(cfg.max_segment_chars));
    }
    let mut summary = CorpusSummary {
        docs_in: entries.len(),
        ..Default::default()
    };
    let mut docs = Vec::with_capacity(entries.len());
    for entry in entries {
        let raw = match fs::read(&entry.path) {
            Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
            Err(e) => {
                summary
                    .unreadable
                    .push(format!("{}: {e}", entry.path.display()));
                continue;
            }
        };
        let text = clean_text(&raw);
        if text.is_empty() || text.chars().count() < cfg.min_chars {
            summary.too_short += 1;
            continue;
        }
        let doc_id = sha256_hex(format!(
            "{}\0{}\0{}",
            entry.person_name,
            entry.source_kind,
            entry.path.to_string_lossy()
        ))[..16]
            .to_string();
        docs.push(CorpusDocument {
            doc_id,
            person_name: entry.person_name.clone(),
            source_kind: entry.source_kind,
            raw_text: text,
            segments: Vec::new(),
            tags: entry.tags.clone(),
        });
    }
    let (kept, stats) = dedupe(docs, cfg.near_duplicate_threshold)?;
    summary.exact_duplicates = stats.exact_removed;
    summary.near_duplicates = stats.near_removed;
    summary.docs_kept = kept.len();

    let Grouped {
        mut groups,
        warnings,
    } = group_by_person(kept);
    summary.warnings = warnings;
    for (person, docs) in groups.iter_mut() {
        for doc in docs.iter_mut() {
            doc.segments = segment(&doc.raw_text, cfg.max_segment_chars)?;
            summary.segments += doc.segments.len();
        }
        summary.persons.insert(person.clone(), docs.len());
    }
    Ok((groups, summary))
}

/// One line of a per-person corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub doc_id: String,
    pub person_name: String,
    pub source_kind: SourceKind,
    pub segment_index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

/// File-system-safe stem for a person's corpus file.
pub fn corpus_file_stem(person: &str) -> String {
    person
        .chars()
        .map(|c| {
            if c.is_control() || "/\\:*?\"<>|".contains(c) {
                '_'
            } else {
                c
            }
        })
        .collect()
}

/// Writes `<out_dir>/<person>.jsonl` for every group; returns the written paths.
pub fn write_corpus(
    groups: &BTreeMap<String, Vec<CorpusDocument>>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CorpusError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for (person, docs) in groups {
        let path = out_dir.join(format!("{}.jsonl", corpus_file_stem(person)));
        let mut buf = Vec::new();
        for doc in docs {
            for (i, seg) in doc.segments.iter().enumerate() {
                let line = CorpusLine {
                    doc_id: doc.doc_id.clone(),
                    person_name: person.clone(),
                    source_kind: doc.source_kind,
                    segment_index: i,
                    text: seg.clone(),
                    tags: doc.tags.clone(),
                };
                serde_json::to_writer(&mut buf, &line).expect("corpus lines serialize");
                buf.push(b'\n');
            }
        }
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(&buf).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads every `*.jsonl` corpus file in `dir` (sorted by file name).
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<CorpusLine>, CorpusError> {
    let mut lines = Vec::new();
    for path in sorted_dir(dir)? {
        if path.extension().is_some_and(|e| e == "jsonl") {
            lines.extend(read_corpus_file(&path)?);
        }
    }
    Ok(lines)
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<CorpusLine>, CorpusError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CorpusError::CorpusLine {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Reassembles each person's document texts from corpus lines, keyed by
/// person, in first-seen document order.
pub fn person_texts(lines: &[CorpusLine]) -> BTreeMap<String, Vec<(String, String)>> {
    let mut out: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for line in lines {
        let docs = out.entry(line.person_name.clone()).or_default();
        match docs.iter_mut().find(|(id, _)| *id == line.doc_id) {
            Some((_, text)) => text.push_str(&line.text),
            None => docs.push((line.doc_id.clone(), line.text.clone())),
        }
    }
    out
}
