#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use personkg_core::schema::{
    Achievement, KeyLanguage, PersonRecord, Position, Relation, SchemaDefinition,
};
use serde_json::{json, Value};

pub const CORE_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core");

pub fn core_file(rel: &str) -> PathBuf {
    Path::new(CORE_DIR).join(rel)
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    /// Path printed on the `output:` line.
    pub fn output_path(&self) -> PathBuf {
        let line = self
            .stdout
            .lines()
            .find_map(|l| l.strip_prefix("output: "))
            .expect("output line");
        PathBuf::from(line)
    }
}

impl std::fmt::Debug for Run {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "exit {}\n--- stdout\n{}--- stderr\n{}",
            self.code, self.stdout, self.stderr
        )
    }
}

pub fn personkg(cwd: &Path, args: &[&str]) -> Run {
    let Output {
        status,
        stdout,
        stderr,
    } = Command::new(env!("CARGO_BIN_EXE_personkg"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}

pub const STRATA: [&str; 2] = ["military", "literature"];

/// Three in five persons fall in the first stratum.
pub fn stratum_of(i: usize) -> &'static str {
    if i % 5 < 3 {
        STRATA[0]
    } else {
        STRATA[1]
    }
}

/// A fully populated record; every field differs between persons.
pub fn synthetic_record(i: usize) -> PersonRecord {
    let stratum = stratum_of(i);
    PersonRecord {
        name: format!("Person {i:03}"),
        alias: format!("Courtesy name Zi{i}"),
        gender: if i % 2 == 1 {
            "Female".into()
        } else {
            "Male".into()
        },
        ethnicity: "Han".into(),
        era: format!("Dynasty {}", i % 7),
        birthplace: format!("County {} of Province {}", i * 3 % 17, i % 4),
        birth_date: format!("{}", 1700 + i),
        death_date: format!("{}", 1760 + i),
        achievements: vec![Achievement {
            influence: format!("Led the {stratum} reform number {i}"),
            location: format!("City {}", i % 9),
            time: format!("{}", 1730 + i),
        }],
        works: format!("Collected Writings {i}、Notes on {stratum}"),
        social_relations: vec![Relation {
            person: format!("Friend {i}"),
            relation: "friend".into(),
        }],
        family_relations: vec![Relation {
            person: format!("Parent {i}"),
            relation: "father".into(),
        }],
        field_domain: stratum.into(),
        positions: vec![Position {
            title: format!("Governor of Region {}", i % 11),
            start_time: format!("{}", 1740 + i),
        }],
    }
}

/// The same person with several fields wrong or missing.
pub fn degraded(r: &PersonRecord) -> PersonRecord {
    PersonRecord {
        gender: "Unknown".into(),
        birthplace: String::new(),
        death_date: "1900".into(),
        achievements: Vec::new(),
        works: "Unrelated pamphlet".into(),
        positions: Vec::new(),
        ..r.clone()
    }
}

pub fn record_json(r: &PersonRecord) -> Value {
    r.to_json_value(&SchemaDefinition::builtin(), KeyLanguage::Zh)
}

pub fn biography(r: &PersonRecord) -> String {
    format!(
        "{} ({}) was born in {} in {} and died in {}. {} served as {} and is remembered for {}.",
        r.name,
        r.alias,
        r.birthplace,
        r.birth_date,
        r.death_date,
        r.name,
        r.positions.first().map(|p| p.title.as_str()).unwrap_or(""),
        r.achievements
            .first()
            .map(|a| a.influence.as_str())
            .unwrap_or("")
    )
}

pub fn jsonl(values: impl IntoIterator<Item = Value>) -> String {
    values.into_iter().map(|v| v.to_string() + "\n").collect()
}

/// Gold lines for persons `0..n`, with text and tags inline.
pub fn gold_lines(n: usize) -> String {
    jsonl((0..n).map(|i| {
        let r = synthetic_record(i);
        json!({
            "record_id": format!("r{i:03}"),
            "tags": [stratum_of(i)],
            "text": biography(&r),
            "record": record_json(&r),
        })
    }))
}

/// Canned completions answering each record with `f(record)`.
pub fn replay_lines(n: usize, f: impl Fn(&PersonRecord) -> PersonRecord) -> String {
    jsonl((0..n).map(|i| {
        let r = f(&synthetic_record(i));
        json!({"record_id": format!("r{i:03}"), "response": format!("```json\n{}\n```", record_json(&r))})
    }))
}

/// Raw documents for `clean`: one biography per person in `<dir>/docs`,
/// plus a TOML manifest tagging each with its stratum.
pub fn write_raw_corpus(dir: &Path, n: usize) -> PathBuf {
    let docs = dir.join("docs");
    fs::create_dir_all(&docs).unwrap();
    let mut manifest = String::new();
    for i in 0..n {
        let r = synthetic_record(i);
        let file = format!("p{i:03}.txt");
        fs::write(docs.join(&file), format!("  {}\n\n", biography(&r))).unwrap();
        manifest.push_str(&format!(
            "[[doc]]\npath = \"docs/{file}\"\nperson_name = \"{}\"\nsource_kind = \"encyclopedia\"\ntags = [\"{}\"]\n\n",
            r.name,
            stratum_of(i)
        ));
    }
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest).unwrap();
    path
}

pub fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Every file below `dir` as (relative path, bytes), sorted.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
