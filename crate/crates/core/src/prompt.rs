//! Extraction prompt templates.
//!
//! The builtin Chinese and English templates frame the character text between
//! two `******` delimiter lines, followed by the fixed JSON output format:
//!
//! ```text
//! <task description>
//! ******<space>
//! <character text>
//! ******
//! <output format block>
//! ```
//!
//! User templates are plain-text files containing `{{character_text}}` and
//! optionally `{{schema_block}}` placeholders.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::schema::KeyLanguage as Language;

pub const DEFAULT_DELIMITER: &str = "******";
pub const TEXT_PLACEHOLDER: &str = "{{character_text}}";
pub const SCHEMA_PLACEHOLDER: &str = "{{schema_block}}";

const ZH_PREAMBLE: &str = include_str!("../templates/zh_preamble.txt");
const ZH_SCHEMA: &str = include_str!("../templates/zh_schema.txt");
const EN_PREAMBLE: &str = include_str!("../templates/en_preamble.txt");
const EN_SCHEMA: &str = include_str!("../templates/en_schema.txt");

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("character text contains the frame delimiter `{0}`")]
    DelimiterCollision(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub language: Language,
    /// Task description placed before the framed text.
    pub preamble: String,
    pub delimiter: String,
    /// Fixed JSON output format block.
    pub schema_block: String,
    /// Opaque directive appended after the schema block, e.g. a model's
    /// reasoning-off switch.
    pub think_suffix: Option<String>,
    /// Full body with placeholders, for user templates.
    pub custom_body: Option<String>,
}

impl PromptTemplate {
    pub fn builtin(language: Language) -> Self {
        let (name, preamble, schema) = match language {
            Language::Zh => ("zh", ZH_PREAMBLE, ZH_SCHEMA),
            Language::En => ("en", EN_PREAMBLE, EN_SCHEMA),
        };
        PromptTemplate {
            name: name.to_string(),
            language,
            preamble: preamble.trim_end().to_string(),
            delimiter: DEFAULT_DELIMITER.to_string(),
            schema_block: schema.trim_end().to_string(),
            think_suffix: None,
            custom_body: None,
        }
    }

    pub fn with_think_suffix(mut self, suffix: impl Into<String>) -> Self {
        let s = suffix.into();
        self.think_suffix = if s.is_empty() { None } else { Some(s) };
        self
    }

    /// Renders the prompt for one character text.
    pub fn render(&self, character_text: &str) -> Result<String, PromptError> {
        if !self.delimiter.is_empty() && character_text.contains(&self.delimiter) {
            return Err(PromptError::DelimiterCollision(self.delimiter.clone()));
        }
        let mut out = match &self.custom_body {
            Some(body) => body
                .replace(SCHEMA_PLACEHOLDER, &self.schema_block)
                .replace(TEXT_PLACEHOLDER, character_text),
            None => format!(
                "{}\n{} \n{}\n{}\n{}",
                self.preamble, self.delimiter, character_text, self.delimiter, self.schema_block
            ),
        };
        if let Some(suffix) = &self.think_suffix {
            out.push('\n');
            out.push_str(suffix);
        }
        Ok(out)
    }

    /// Recovers the character text from a prompt rendered by a builtin-style template.
    pub fn framed_text<'a>(&self, rendered: &'a str) -> Option<&'a str> {
        if self.custom_body.is_some() {
            return None;
        }
        let open = format!("{}\n{} \n", self.preamble, self.delimiter);
        let rest = rendered.strip_prefix(open.as_str())?;
        let close = format!("\n{}\n{}", self.delimiter, self.schema_block);
        let end = rest.rfind(close.as_str())?;
        Some(&rest[..end])
    }
}

/// Renders `character_text` with `template`.
pub fn render_prompt(
    template: &PromptTemplate,
    character_text: &str,
) -> Result<String, PromptError> {
    template.render(character_text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDescriptor {
    pub name: String,
    pub language: Language,
    /// `None` for builtins.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct TemplateListing {
    pub templates: Vec<TemplateDescriptor>,
    pub warnings: Vec<String>,
}

/// Builtin `zh` and `en` templates plus every readable `*.txt` in `dir`.
///
/// A user file named `foo.en.txt` gets the English schema block; anything
/// else gets the Chinese one. Unreadable or placeholder-less files are skipped
/// with a warning.
pub fn list_templates(dir: Option<&Path>) -> TemplateListing {
    let mut listing = TemplateListing::default();
    for lang in [Language::Zh, Language::En] {
        let t = PromptTemplate::builtin(lang);
        listing.templates.push(TemplateDescriptor {
            name: t.name,
            language: lang,
            path: None,
        });
    }
    let Some(dir) = dir else { return listing };
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            listing
                .warnings
                .push(format!("templates directory {}: {e}", dir.display()));
            return listing;
        }
    };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
    {
        match load_user_template(&path) {
            Ok(t) => listing.templates.push(TemplateDescriptor {
                name: t.name,
                language: t.language,
                path: Some(path),
            }),
            Err(msg) => listing
                .warnings
                .push(format!("skipping template {}: {msg}", path.display())),
        }
    }
    listing
}

fn load_user_template(path: &Path) -> Result<PromptTemplate, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let body = String::from_utf8(bytes).map_err(|_| "not valid UTF-8".to_string())?;
    if !body.contains(TEXT_PLACEHOLDER) {
        return Err(format!("missing {TEXT_PLACEHOLDER} placeholder"));
    }
    let stem = path
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    let (name, language) = match stem.strip_suffix(".en") {
        Some(base) => (base.to_string(), Language::En),
        None => (
            stem.strip_suffix(".zh").unwrap_or(&stem).to_string(),
            Language::Zh,
        ),
    };
    let base = PromptTemplate::builtin(language);
    Ok(PromptTemplate {
        name,
        custom_body: Some(body),
        ..base
    })
}

/// Resolves a template by name: `zh`, `en`, or a user template in `dir`.
pub fn find_template(name: &str, dir: Option<&Path>) -> Result<PromptTemplate, PromptError> {
    match name {
        "zh" => return Ok(PromptTemplate::builtin(Language::Zh)),
        "en" => return Ok(PromptTemplate::builtin(Language::En)),
        _ => {}
    }
    let listing = list_templates(dir);
    let desc = listing
        .templates
        .into_iter()
        .find(|d| d.name == name && d.path.is_some())
        .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
    load_user_template(desc.path.as_deref().expect("user template"))
        .map_err(|_| PromptError::UnknownTemplate(name.to_string()))
}
