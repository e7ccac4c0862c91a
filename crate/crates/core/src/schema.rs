//! The fourteen-component person schema.
//!
//! Owns the canonical field list with its evaluation-method assignment, the
//! graph vocabulary (entity labels, attribute predicates, relation predicates)
//! and validation of raw model/annotation JSON into [`PersonRecord`]s.
//!
//! Both the Chinese field names used by the extraction prompt (`姓名`, `别名`,
//! ...) and several English spellings (`Name`, `Aliases`, `Date of Birth`,
//! `MajorAchievements`, ...) are accepted on input. Output always uses one
//! language consistently, see [`PersonRecord::to_json_value`].

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Literal used by annotators and models for "unknown".
pub const UNKNOWN_MARKER: &str = "未知";

/// Returns true when a value carries no information (empty, whitespace or `未知`).
pub fn is_absent(value: &str) -> bool {
    let t = value.trim();
    t.is_empty() || t == UNKNOWN_MARKER
}

/// Canonical, language-neutral identifier of a schema component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldKey {
    Name,
    Alias,
    Gender,
    Ethnicity,
    Era,
    Birthplace,
    DateOfBirth,
    DateOfDeath,
    Achievements,
    Works,
    SocialRelations,
    FamilyRelations,
    Domain,
    PositionsHeld,
}

impl FieldKey {
    /// All components in scoring order.
    pub const ALL: [FieldKey; 14] = [
        FieldKey::Name,
        FieldKey::Alias,
        FieldKey::Gender,
        FieldKey::Ethnicity,
        FieldKey::Era,
        FieldKey::Birthplace,
        FieldKey::DateOfBirth,
        FieldKey::DateOfDeath,
        FieldKey::Achievements,
        FieldKey::Works,
        FieldKey::SocialRelations,
        FieldKey::FamilyRelations,
        FieldKey::Domain,
        FieldKey::PositionsHeld,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FieldKey::Name => "Name",
            FieldKey::Alias => "Alias",
            FieldKey::Gender => "Gender",
            FieldKey::Ethnicity => "Ethnicity",
            FieldKey::Era => "Era",
            FieldKey::Birthplace => "Birthplace",
            FieldKey::DateOfBirth => "DateOfBirth",
            FieldKey::DateOfDeath => "DateOfDeath",
            FieldKey::Achievements => "Achievements",
            FieldKey::Works => "Works",
            FieldKey::SocialRelations => "SocialRelations",
            FieldKey::FamilyRelations => "FamilyRelations",
            FieldKey::Domain => "Domain",
            FieldKey::PositionsHeld => "PositionsHeld",
        }
    }

    /// Position in the canonical order (0..14).
    pub fn index(self) -> usize {
        FieldKey::ALL
            .iter()
            .position(|k| *k == self)
            .expect("key is in ALL")
    }

    /// Resolves any accepted spelling (canonical id, Chinese name or English alias).
    pub fn lookup(name: &str) -> Option<FieldKey> {
        let norm = normalize_key(name);
        FieldKey::ALL.into_iter().find(|k| {
            normalize_key(k.as_str()) == norm
                || builtin_spec(*k)
                    .accepted_names()
                    .any(|alias| normalize_key(alias) == norm)
        })
    }
}

impl fmt::Display for FieldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldKey {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FieldKey::lookup(s).ok_or_else(|| SchemaError::UnknownField(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    ScalarText,
    ObjectList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalMethod {
    ExactMatch,
    VectorSimilarity,
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMethod::ExactMatch => f.write_str("ExactMatch"),
            EvalMethod::VectorSimilarity => f.write_str("VectorSimilarity"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub key: FieldKey,
    /// Name used in the Chinese prompt and in training targets.
    pub zh_name: String,
    /// Name used in the English prompt variant.
    pub en_name: String,
    /// Additional spellings accepted on input.
    pub aliases: Vec<String>,
    pub kind: FieldKind,
    pub eval_method: EvalMethod,
}

impl FieldSpec {
    pub fn accepted_names(&self) -> impl Iterator<Item = &str> {
        [self.zh_name.as_str(), self.en_name.as_str()]
            .into_iter()
            .chain(self.aliases.iter().map(String::as_str))
    }
}

fn builtin_spec(key: FieldKey) -> FieldSpec {
    use EvalMethod::*;
    use FieldKind::*;
    let (zh, en, aliases, kind, eval): (&str, &str, &[&str], FieldKind, EvalMethod) = match key {
        FieldKey::Name => ("姓名", "Name", &["Full Name"], ScalarText, ExactMatch),
        FieldKey::Alias => ("别名", "Alias", &["Aliases"], ScalarText, VectorSimilarity),
        FieldKey::Gender => ("性别", "Gender", &["Sex"], ScalarText, ExactMatch),
        FieldKey::Ethnicity => ("民族", "Ethnicity", &["Ethnic"], ScalarText, ExactMatch),
        FieldKey::Era => ("所处时代", "Era", &["Period"], ScalarText, VectorSimilarity),
        FieldKey::Birthplace => (
            "籍贯",
            "BirthPlace",
            &["Place of Origin", "Native Place"],
            ScalarText,
            VectorSimilarity,
        ),
        FieldKey::DateOfBirth => (
            "出生日期",
            "BirthDate",
            &["Date of Birth"],
            ScalarText,
            ExactMatch,
        ),
        FieldKey::DateOfDeath => (
            "逝世日期",
            "DeathDate",
            &["Date of Death"],
            ScalarText,
            ExactMatch,
        ),
        FieldKey::Achievements => (
            "主要成就",
            "MajorAchievements",
            &["Major Achievements", "Achievements"],
            ObjectList,
            VectorSimilarity,
        ),
        FieldKey::Works => (
            "主要作品",
            "MajorWorks",
            &["Major Works", "Works", "Representative Works"],
            ScalarText,
            VectorSimilarity,
        ),
        FieldKey::SocialRelations => (
            "主要社会关系",
            "MajorSocialRelations",
            &[
                "Major Social Relations",
                "Social Relations",
                "Social Relationships",
            ],
            ObjectList,
            VectorSimilarity,
        ),
        FieldKey::FamilyRelations => (
            "主要家族关系",
            "MajorFamilyRelations",
            &[
                "Major Family Relations",
                "Family Relations",
                "Family Relationships",
            ],
            ObjectList,
            VectorSimilarity,
        ),
        FieldKey::Domain => ("领域", "Field", &["Domain"], ScalarText, VectorSimilarity),
        FieldKey::PositionsHeld => (
            "历任职务",
            "OfficialPositions",
            &["Official Positions", "Positions Held", "Positions"],
            ObjectList,
            VectorSimilarity,
        ),
    };
    FieldSpec {
        key,
        zh_name: zh.to_string(),
        en_name: en.to_string(),
        aliases: aliases.iter().map(|s| s.to_string()).collect(),
        kind,
        eval_method: eval,
    }
}

/// Lowercases and drops whitespace, `_` and `-` so `Date of Birth`,
/// `date_of_birth` and `DateOfBirth` compare equal.
fn normalize_key(key: &str) -> String {
    key.chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

pub const ENTITY_VOCAB: [&str; 5] = [
    "Person",
    "Achievements",
    "Works",
    "Relationships",
    "Positions",
];

/// Attribute predicates. `hasFiled` is kept with its original spelling;
/// `hasField` is accepted as an alias via [`SchemaDefinition::resolve_attribute`].
pub const ATTRIBUTE_VOCAB: [&str; 8] = [
    "hasName",
    "hasAlias",
    "hasGender",
    "hasBirthPlace",
    "hasEthnic",
    "hasBirthDate",
    "hasDeathDate",
    "hasFiled",
];

pub const RELATION_VOCAB: [&str; 12] = [
    "hasSpouse",
    "hasParent",
    "hasStudent",
    "hasColleague",
    "hasSupervisor",
    "hasSubordinate",
    "workFor",
    "Found",
    "belongTo",
    "ParticipateIn",
    "WinAward",
    "Create",
];

const ATTRIBUTE_ALIASES: [(&str, &str); 1] = [("hasField", "hasFiled")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDefinition {
    pub fields: Vec<FieldSpec>,
    pub attribute_vocab: Vec<String>,
    pub relation_vocab: Vec<String>,
    pub entity_vocab: Vec<String>,
}

impl SchemaDefinition {
    pub fn builtin() -> Self {
        SchemaDefinition {
            fields: FieldKey::ALL.into_iter().map(builtin_spec).collect(),
            attribute_vocab: ATTRIBUTE_VOCAB.iter().map(|s| s.to_string()).collect(),
            relation_vocab: RELATION_VOCAB.iter().map(|s| s.to_string()).collect(),
            entity_vocab: ENTITY_VOCAB.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn field(&self, key: FieldKey) -> &FieldSpec {
        &self.fields[key.index()]
    }

    /// Finds the field whose accepted names include `name`.
    pub fn field_for_input_key(&self, name: &str) -> Option<&FieldSpec> {
        let norm = normalize_key(name);
        self.fields.iter().find(|f| {
            normalize_key(f.key.as_str()) == norm
                || f.accepted_names().any(|n| normalize_key(n) == norm)
        })
    }

    /// Maps an attribute predicate (or a known alias of one) onto the vocabulary spelling.
    pub fn resolve_attribute<'a>(&'a self, name: &str) -> Option<&'a str> {
        let target = ATTRIBUTE_ALIASES
            .iter()
            .find(|(alias, _)| *alias == name)
            .map(|(_, canon)| *canon)
            .unwrap_or(name);
        self.attribute_vocab
            .iter()
            .map(String::as_str)
            .find(|a| *a == target)
    }

    pub fn is_relation(&self, predicate: &str) -> bool {
        self.relation_vocab.iter().any(|r| r == predicate)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("failed to read schema config {path}: {message}")]
    Io { path: String, message: String },
    #[error("schema config is not valid: {0}")]
    Parse(String),
    #[error("schema config has unrecognised keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("{}", field_set_message(.missing, .extra))]
    FieldSet {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("field {key}: {message}")]
    FieldMismatch { key: String, message: String },
    #[error("vocabulary {name} must be exactly {expected:?}")]
    Vocabulary { name: String, expected: Vec<String> },
    #[error("unknown field: {0}")]
    UnknownField(String),
}

fn field_set_message(missing: &[String], extra: &[String]) -> String {
    let mut parts: Vec<String> = missing
        .iter()
        .map(|m| format!("missing field: {m}"))
        .collect();
    parts.extend(extra.iter().map(|e| format!("unexpected field: {e}")));
    parts.join("; ")
}

/// Where to load the schema from.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemaSource<'a> {
    Builtin,
    File(&'a Path),
}

impl<'a> SchemaSource<'a> {
    /// `"builtin"` selects the embedded schema; anything else is a path.
    pub fn parse(arg: &'a str) -> Self {
        if arg == "builtin" {
            SchemaSource::Builtin
        } else {
            SchemaSource::File(Path::new(arg))
        }
    }
}

pub fn load_schema(source: SchemaSource<'_>) -> Result<SchemaDefinition, SchemaError> {
    match source {
        SchemaSource::Builtin => Ok(SchemaDefinition::builtin()),
        SchemaSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| SchemaError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            parse_schema_config(&text)
        }
    }
}

/// Parses a TOML schema description.
///
/// ```toml
/// [[field]]
/// key = "Name"
/// zh_name = "姓名"
/// en_name = "Name"
/// aliases = ["Full Name"]
/// kind = "scalar-text"
/// eval_method = "ExactMatch"
///
/// [vocab]
/// attributes = ["hasName", ...]
/// ```
///
/// The config may rename fields and add aliases. Field kinds, evaluation
/// methods and vocabularies must agree with the builtin definition.
pub fn parse_schema_config(text: &str) -> Result<SchemaDefinition, SchemaError> {
    let root: toml::Table = toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;

    let mut unknown = Vec::new();
    for key in root.keys() {
        if key != "field" && key != "vocab" {
            unknown.push(key.clone());
        }
    }
    let raw_fields = match root.get("field") {
        Some(toml::Value::Array(items)) => items.clone(),
        Some(_) => {
            return Err(SchemaError::Parse(
                "`field` must be an array of tables".into(),
            ))
        }
        None => Vec::new(),
    };
    const FIELD_KEYS: [&str; 6] = [
        "key",
        "zh_name",
        "en_name",
        "aliases",
        "kind",
        "eval_method",
    ];
    for (i, item) in raw_fields.iter().enumerate() {
        let table = item
            .as_table()
            .ok_or_else(|| SchemaError::Parse(format!("field[{i}] is not a table")))?;
        for k in table.keys() {
            if !FIELD_KEYS.contains(&k.as_str()) {
                unknown.push(format!("field[{i}].{k}"));
            }
        }
    }
    if let Some(vocab) = root.get("vocab").and_then(toml::Value::as_table) {
        for k in vocab.keys() {
            if !["attributes", "relations", "entities"].contains(&k.as_str()) {
                unknown.push(format!("vocab.{k}"));
            }
        }
    }
    if !unknown.is_empty() {
        return Err(SchemaError::UnknownKeys(unknown));
    }

    #[derive(Deserialize)]
    struct RawField {
        key: String,
        zh_name: Option<String>,
        en_name: Option<String>,
        #[serde(default)]
        aliases: Vec<String>,
        kind: Option<FieldKind>,
        eval_method: Option<EvalMethod>,
    }
    #[derive(Deserialize, Default)]
    struct RawVocab {
        attributes: Option<Vec<String>>,
        relations: Option<Vec<String>>,
        entities: Option<Vec<String>>,
    }

    let mut parsed: Vec<RawField> = Vec::with_capacity(raw_fields.len());
    for item in raw_fields {
        parsed.push(
            item.try_into()
                .map_err(|e: toml::de::Error| SchemaError::Parse(e.to_string()))?,
        );
    }
    let vocab: RawVocab = match root.get("vocab") {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| SchemaError::Parse(e.to_string()))?,
        None => RawVocab::default(),
    };

    // Field-set check: every canonical key exactly once.
    let mut seen: Vec<Option<RawField>> = (0..14).map(|_| None).collect();
    let mut extra = Vec::new();
    for raw in parsed {
        match FieldKey::lookup(&raw.key) {
            Some(k) if seen[k.index()].is_none() => seen[k.index()] = Some(raw),
            Some(_) => extra.push(format!("{} (duplicate)", raw.key)),
            None => extra.push(raw.key),
        }
    }
    let missing: Vec<String> = FieldKey::ALL
        .iter()
        .filter(|k| seen[k.index()].is_none())
        .map(|k| k.as_str().to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(SchemaError::FieldSet { missing, extra });
    }

    let mut fields = Vec::with_capacity(14);
    for (key, raw) in FieldKey::ALL.into_iter().zip(seen) {
        let raw = raw.expect("checked above");
        let base = builtin_spec(key);
        if let Some(kind) = raw.kind {
            if kind != base.kind {
                return Err(SchemaError::FieldMismatch {
                    key: key.to_string(),
                    message: format!("kind must be {:?}", base.kind),
                });
            }
        }
        if let Some(method) = raw.eval_method {
            if method != base.eval_method {
                return Err(SchemaError::FieldMismatch {
                    key: key.to_string(),
                    message: format!("eval_method must be {}", base.eval_method),
                });
            }
        }
        let mut aliases = base.aliases.clone();
        for a in raw.aliases {
            if !aliases.contains(&a) {
                aliases.push(a);
            }
        }
        fields.push(FieldSpec {
            key,
            zh_name: raw.zh_name.unwrap_or(base.zh_name),
            en_name: raw.en_name.unwrap_or(base.en_name),
            aliases,
            kind: base.kind,
            eval_method: base.eval_method,
        });
    }

    let mut schema = SchemaDefinition::builtin();
    schema.fields = fields;
    check_vocab("attributes", vocab.attributes, &schema.attribute_vocab)?;
    check_vocab("relations", vocab.relations, &schema.relation_vocab)?;
    check_vocab("entities", vocab.entities, &schema.entity_vocab)?;
    Ok(schema)
}

fn check_vocab(
    name: &str,
    given: Option<Vec<String>>,
    expected: &[String],
) -> Result<(), SchemaError> {
    let Some(given) = given else { return Ok(()) };
    let given_set: BTreeSet<&String> = given.iter().collect();
    let expected_set: BTreeSet<&String> = expected.iter().collect();
    if given_set.len() != given.len() || given_set != expected_set {
        return Err(SchemaError::Vocabulary {
            name: name.to_string(),
            expected: expected.to_vec(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Achievement {
    pub influence: String,
    pub location: String,
    pub time: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub person: String,
    pub relation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub title: String,
    pub start_time: String,
}

/// A validated extraction result. Unknown values are `""` or `未知`, never missing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub name: String,
    pub alias: String,
    pub gender: String,
    pub ethnicity: String,
    pub era: String,
    pub birthplace: String,
    pub birth_date: String,
    pub death_date: String,
    pub achievements: Vec<Achievement>,
    pub works: String,
    pub social_relations: Vec<Relation>,
    pub family_relations: Vec<Relation>,
    pub field_domain: String,
    pub positions: Vec<Position>,
}

/// Key language used when serializing a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyLanguage {
    Zh,
    En,
}

impl PersonRecord {
    pub fn scalar(&self, key: FieldKey) -> Option<&str> {
        Some(match key {
            FieldKey::Name => &self.name,
            FieldKey::Alias => &self.alias,
            FieldKey::Gender => &self.gender,
            FieldKey::Ethnicity => &self.ethnicity,
            FieldKey::Era => &self.era,
            FieldKey::Birthplace => &self.birthplace,
            FieldKey::DateOfBirth => &self.birth_date,
            FieldKey::DateOfDeath => &self.death_date,
            FieldKey::Works => &self.works,
            FieldKey::Domain => &self.field_domain,
            _ => return None,
        })
    }

    fn scalar_mut(&mut self, key: FieldKey) -> Option<&mut String> {
        Some(match key {
            FieldKey::Name => &mut self.name,
            FieldKey::Alias => &mut self.alias,
            FieldKey::Gender => &mut self.gender,
            FieldKey::Ethnicity => &mut self.ethnicity,
            FieldKey::Era => &mut self.era,
            FieldKey::Birthplace => &mut self.birthplace,
            FieldKey::DateOfBirth => &mut self.birth_date,
            FieldKey::DateOfDeath => &mut self.death_date,
            FieldKey::Works => &mut self.works,
            FieldKey::Domain => &mut self.field_domain,
            _ => return None,
        })
    }

    /// Serializes with the prompt's key layout, in schema order.
    pub fn to_json_value(&self, schema: &SchemaDefinition, lang: KeyLanguage) -> Value {
        let zh = lang == KeyLanguage::Zh;
        let mut obj = Map::new();
        for spec in &schema.fields {
            let name = if zh {
                spec.zh_name.clone()
            } else {
                spec.en_name.clone()
            };
            let value = match spec.key {
                FieldKey::Achievements => Value::Array(
                    self.achievements
                        .iter()
                        .map(|a| {
                            let (i, l, t) = if zh {
                                ("成就影响", "发生地点", "发生时间")
                            } else {
                                ("Achievement", "Location", "Time")
                            };
                            object([(i, &a.influence), (l, &a.location), (t, &a.time)])
                        })
                        .collect(),
                ),
                FieldKey::SocialRelations | FieldKey::FamilyRelations => {
                    let list = if spec.key == FieldKey::SocialRelations {
                        &self.social_relations
                    } else {
                        &self.family_relations
                    };
                    let (p, r) = if zh {
                        ("人物", "关系")
                    } else {
                        ("Person", "Relation")
                    };
                    Value::Array(
                        list.iter()
                            .map(|x| object([(p, &x.person), (r, &x.relation)]))
                            .collect(),
                    )
                }
                FieldKey::PositionsHeld => Value::Array(
                    self.positions
                        .iter()
                        .enumerate()
                        .map(|(i, p)| {
                            let title_key = if zh {
                                format!("职务{}", i + 1)
                            } else {
                                format!("Position{}", i + 1)
                            };
                            let time_key = if zh { "时间" } else { "Time" };
                            let mut m = Map::new();
                            m.insert(title_key, Value::String(p.title.clone()));
                            m.insert(time_key.to_string(), Value::String(p.start_time.clone()));
                            Value::Object(m)
                        })
                        .collect(),
                ),
                key => Value::String(self.scalar(key).unwrap_or_default().to_string()),
            };
            obj.insert(name, value);
        }
        Value::Object(obj)
    }

    /// Minified JSON with the given key language.
    pub fn to_json_string(&self, schema: &SchemaDefinition, lang: KeyLanguage) -> String {
        serde_json::to_string(&self.to_json_value(schema, lang)).expect("records always serialize")
    }
}

fn object<const N: usize>(pairs: [(&str, &String); N]) -> Value {
    let mut m = Map::new();
    for (k, v) in pairs {
        m.insert(k.to_string(), Value::String(v.clone()));
    }
    Value::Object(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// Canonical field id, or `<document>` for document-level problems.
    pub field_key: String,
    pub severity: Severity,
    pub message: String,
}

impl ValidationIssue {
    fn error(field: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationIssue {
            field_key: field.into(),
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(field: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationIssue {
            field_key: field.into(),
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} [{}]: {}", self.field_key, self.message)
    }
}

pub const DOCUMENT_FIELD: &str = "<document>";

/// How to treat keys that are absent from the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// Every one of the 14 keys must be present (gold annotations, training targets).
    #[default]
    Strict,
    /// Absent keys other than the name become warnings and default to empty
    /// (model output, excerpted examples).
    Lenient,
}

/// A successfully validated record together with any non-fatal findings.
#[derive(Debug, Clone, PartialEq)]
pub struct Validated {
    pub record: PersonRecord,
    pub warnings: Vec<ValidationIssue>,
}

/// Validates raw JSON text into a [`PersonRecord`].
///
/// On failure returns every issue found, errors and warnings alike.
pub fn validate_record(
    raw_json: &str,
    schema: &SchemaDefinition,
    mode: ValidationMode,
) -> Result<Validated, Vec<ValidationIssue>> {
    let value: Value =
        serde_json::from_str(raw_json.trim_start_matches('\u{feff}')).map_err(|e| {
            vec![ValidationIssue::error(
                DOCUMENT_FIELD,
                format!("not valid JSON: {e}"),
            )]
        })?;
    validate_value(&value, schema, mode)
}

pub fn validate_value(
    value: &Value,
    schema: &SchemaDefinition,
    mode: ValidationMode,
) -> Result<Validated, Vec<ValidationIssue>> {
    let Some(obj) = value.as_object() else {
        return Err(vec![ValidationIssue::error(
            DOCUMENT_FIELD,
            "top-level JSON value must be an object",
        )]);
    };

    let mut issues = Vec::new();
    let mut slots: Vec<Option<&Value>> = vec![None; 14];
    for (k, v) in obj {
        match schema.field_for_input_key(k) {
            Some(spec) => {
                let slot = &mut slots[spec.key.index()];
                if slot.is_some() {
                    issues.push(ValidationIssue::warning(
                        spec.key.as_str(),
                        format!("duplicate key `{k}` ignored; first occurrence kept"),
                    ));
                } else {
                    *slot = Some(v);
                }
            }
            None => issues.push(ValidationIssue::warning(
                DOCUMENT_FIELD,
                format!("unrecognised key `{k}` ignored"),
            )),
        }
    }

    let mut record = PersonRecord::default();
    for spec in &schema.fields {
        let key = spec.key;
        let Some(v) = slots[key.index()] else {
            let strict = mode == ValidationMode::Strict || key == FieldKey::Name;
            let msg = format!("missing field: {key}");
            issues.push(if strict {
                ValidationIssue::error(key.as_str(), msg)
            } else {
                ValidationIssue::warning(key.as_str(), msg)
            });
            continue;
        };
        match spec.kind {
            FieldKind::ScalarText => match scalar_text(v) {
                Ok((s, note)) => {
                    if let Some(note) = note {
                        issues.push(ValidationIssue::warning(key.as_str(), note));
                    }
                    *record.scalar_mut(key).expect("scalar field") = s;
                }
                Err(kind) => issues.push(ValidationIssue::error(
                    key.as_str(),
                    format!("shape error: expected text, found {kind}"),
                )),
            },
            FieldKind::ObjectList => {
                let items: Vec<&Map<String, Value>> = match v {
                    Value::Array(items) => {
                        let mut objs = Vec::with_capacity(items.len());
                        let mut bad = false;
                        for (i, item) in items.iter().enumerate() {
                            match item.as_object() {
                                Some(o) => objs.push(o),
                                None => {
                                    bad = true;
                                    issues.push(ValidationIssue::error(
                                        key.as_str(),
                                        format!(
                                            "shape error: item {i} is {}, expected an object",
                                            json_kind(item)
                                        ),
                                    ));
                                }
                            }
                        }
                        if bad {
                            continue;
                        }
                        objs
                    }
                    Value::Object(o) => {
                        issues.push(ValidationIssue::warning(
                            key.as_str(),
                            "single object treated as a one-item list",
                        ));
                        vec![o]
                    }
                    Value::Null => {
                        issues.push(ValidationIssue::warning(
                            key.as_str(),
                            "null treated as an empty list",
                        ));
                        Vec::new()
                    }
                    other => {
                        issues.push(ValidationIssue::error(
                            key.as_str(),
                            format!(
                                "shape error: expected a list of objects, found {}",
                                json_kind(other)
                            ),
                        ));
                        continue;
                    }
                };
                fill_list(&mut record, key, &items, &mut issues);
            }
        }
    }

    if slots[FieldKey::Name.index()].is_some() && record.name.trim().is_empty() {
        issues.push(ValidationIssue::error(
            FieldKey::Name.as_str(),
            "name is empty",
        ));
    }

    if issues.iter().any(ValidationIssue::is_error) {
        Err(issues)
    } else {
        Ok(Validated {
            record,
            warnings: issues,
        })
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "an object",
    }
}

/// Text value of a scalar slot. Numbers are stringified; null becomes `""` with a note.
fn scalar_text(v: &Value) -> Result<(String, Option<String>), &'static str> {
    match v {
        Value::String(s) => Ok((s.clone(), None)),
        Value::Number(n) => Ok((n.to_string(), None)),
        Value::Null => Ok((String::new(), Some("null treated as empty".to_string()))),
        other => Err(json_kind(other)),
    }
}

fn item_text(field: FieldKey, key: &str, v: &Value) -> Result<String, ValidationIssue> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Null => Ok(String::new()),
        other => Err(ValidationIssue::error(
            field.as_str(),
            format!(
                "shape error: `{key}` is {}, expected text",
                json_kind(other)
            ),
        )),
    }
}

#[derive(Clone, Copy)]
enum ItemSlot {
    First,
    Second,
    Third,
}

fn achievement_slot(key: &str) -> Option<ItemSlot> {
    match normalize_key(key).as_str() {
        "成就影响" | "成就" | "influence" | "achievement" | "event" => Some(ItemSlot::First),
        "发生地点" | "地点" | "location" | "place" => Some(ItemSlot::Second),
        "发生时间" | "时间" | "time" | "date" => Some(ItemSlot::Third),
        _ => None,
    }
}

fn relation_slot(key: &str) -> Option<ItemSlot> {
    match normalize_key(key).as_str() {
        "人物" | "person" | "name" => Some(ItemSlot::First),
        "关系" | "relation" | "relationship" => Some(ItemSlot::Second),
        _ => None,
    }
}

/// `职务`, `职务1`, `职务12`, `Position3`, `title` → title; `时间`/`Time` → start time.
fn position_slot(key: &str) -> Option<ItemSlot> {
    let norm = normalize_key(key);
    let enumerated = |prefix: &str| {
        norm.strip_prefix(prefix)
            .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()))
    };
    if enumerated("职务") || enumerated("position") || norm == "title" {
        Some(ItemSlot::First)
    } else if matches!(norm.as_str(), "时间" | "time" | "starttime" | "开始时间") {
        Some(ItemSlot::Second)
    } else {
        None
    }
}

fn fill_list(
    record: &mut PersonRecord,
    key: FieldKey,
    items: &[&Map<String, Value>],
    issues: &mut Vec<ValidationIssue>,
) {
    let slot_of: fn(&str) -> Option<ItemSlot> = match key {
        FieldKey::Achievements => achievement_slot,
        FieldKey::SocialRelations | FieldKey::FamilyRelations => relation_slot,
        FieldKey::PositionsHeld => position_slot,
        _ => unreachable!("not a list field"),
    };
    let mut errors = Vec::new();
    let mut parsed: Vec<[String; 3]> = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let mut vals: [Option<String>; 3] = [None, None, None];
        for (k, v) in item.iter() {
            let Some(slot) = slot_of(k) else {
                issues.push(ValidationIssue::warning(
                    key.as_str(),
                    format!("item {i}: unrecognised key `{k}` ignored"),
                ));
                continue;
            };
            let idx = slot as usize;
            if vals[idx].is_some() {
                errors.push(ValidationIssue::error(
                    key.as_str(),
                    format!("item {i}: key `{k}` duplicates another key"),
                ));
                continue;
            }
            match item_text(key, k, v) {
                Ok(s) => vals[idx] = Some(s),
                Err(e) => errors.push(e),
            }
        }
        parsed.push(vals.map(Option::unwrap_or_default));
    }
    if !errors.is_empty() {
        issues.append(&mut errors);
        return;
    }
    match key {
        FieldKey::Achievements => {
            record.achievements = parsed
                .into_iter()
                .map(|[influence, location, time]| Achievement {
                    influence,
                    location,
                    time,
                })
                .collect();
        }
        FieldKey::SocialRelations | FieldKey::FamilyRelations => {
            let list = parsed
                .into_iter()
                .map(|[person, relation, _]| Relation { person, relation })
                .collect();
            if key == FieldKey::SocialRelations {
                record.social_relations = list;
            } else {
                record.family_relations = list;
            }
        }
        FieldKey::PositionsHeld => {
            record.positions = parsed
                .into_iter()
                .map(|[title, start_time, _]| Position { title, start_time })
                .collect();
        }
        _ => unreachable!(),
    }
}

/// Item separator inside a canonicalized list field.
pub const LIST_ITEM_SEPARATOR: &str = "；";
/// Value separator inside one canonicalized list item.
pub const ITEM_VALUE_SEPARATOR: &str = "，";

/// Deterministic text form of a field, used for similarity scoring.
///
/// Scalars are returned verbatim. List items are joined with `；`, and the
/// values inside one item with `，`, in declaration order.
pub fn canonicalize_field_text(record: &PersonRecord, key: FieldKey) -> String {
    if let Some(s) = record.scalar(key) {
        return s.to_string();
    }
    let items: Vec<String> = match key {
        FieldKey::Achievements => record
            .achievements
            .iter()
            .map(|a| [a.influence.as_str(), &a.location, &a.time].join(ITEM_VALUE_SEPARATOR))
            .collect(),
        FieldKey::SocialRelations => relation_items(&record.social_relations),
        FieldKey::FamilyRelations => relation_items(&record.family_relations),
        FieldKey::PositionsHeld => record
            .positions
            .iter()
            .map(|p| [p.title.as_str(), &p.start_time].join(ITEM_VALUE_SEPARATOR))
            .collect(),
        _ => unreachable!("scalar handled above"),
    };
    items.join(LIST_ITEM_SEPARATOR)
}

fn relation_items(list: &[Relation]) -> Vec<String> {
    list.iter()
        .map(|r| [r.person.as_str(), &r.relation].join(ITEM_VALUE_SEPARATOR))
        .collect()
}

/// String-keyed variant for callers holding a field name from user input.
pub fn canonicalize_field_text_by_name(
    record: &PersonRecord,
    field: &str,
) -> Result<String, SchemaError> {
    let key: FieldKey = field.parse()?;
    Ok(canonicalize_field_text(record, key))
}
