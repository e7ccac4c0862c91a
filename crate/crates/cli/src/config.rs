//! Run configuration file (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use personkg_core::corpus::{PipelineConfig, DEFAULT_SEGMENT_CHARS};
use personkg_core::gateway::http::GraphDbConfig;
use personkg_core::gateway::{ChatEndpointConfig, EmbeddingEndpointConfig};
use personkg_core::sensitivity::VarianceMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Parent of the run-stamped output directories.
    pub output_dir: PathBuf,
    pub variance_mode: VarianceMode,
    pub sample_sizes: Vec<usize>,
    /// `"builtin"` or a path to a schema file.
    pub schema: String,
    pub template: String,
    pub templates_dir: Option<PathBuf>,
    pub think_suffix: Option<String>,
    /// Weight table CSV; the builtin table when unset.
    pub weights: Option<PathBuf>,
    pub scheme: String,
    pub paths: Paths,
    pub corpus: CorpusSettings,
    pub chat: ChatSettings,
    pub embedding: EmbeddingSettings,
    pub graph_db: GraphDbConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: PathBuf::from("runs"),
            variance_mode: VarianceMode::Population,
            sample_sizes: vec![50, 100, 150],
            schema: "builtin".into(),
            template: "zh".into(),
            templates_dir: None,
            think_suffix: None,
            weights: None,
            scheme: "average-distribution".into(),
            paths: Paths::default(),
            corpus: CorpusSettings::default(),
            chat: ChatSettings::default(),
            embedding: EmbeddingSettings::default(),
            graph_db: GraphDbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub golds: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub max_segment_chars: usize,
    pub near_duplicate_threshold: Option<f64>,
    pub min_chars: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            max_segment_chars: DEFAULT_SEGMENT_CHARS,
            near_duplicate_threshold: None,
            min_chars: 0,
        }
    }
}

impl CorpusSettings {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            max_segment_chars: self.max_segment_chars,
            near_duplicate_threshold: self.near_duplicate_threshold,
            min_chars: self.min_chars,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatKind {
    /// OpenAI-compatible chat completions endpoint.
    #[default]
    Openai,
    /// Canned `{record_id, response}` lines.
    Replay,
    /// The same response for every record.
    Fixed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSettings {
    pub kind: ChatKind,
    pub replay_file: Option<PathBuf>,
    pub fixed_response: Option<String>,
    pub endpoint: ChatEndpointConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Deterministic hashed character bigrams; no network.
    #[default]
    Mock,
    Openai,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub kind: EmbeddingKind,
    pub cache_dir: Option<PathBuf>,
    pub endpoint: EmbeddingEndpointConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut cfg =
            Self::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.templates_dir,
            &mut self.weights,
            &mut self.paths.manifest,
            &mut self.paths.corpus_dir,
            &mut self.paths.golds,
            &mut self.paths.test,
            &mut self.chat.replay_file,
            &mut self.embedding.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if self.schema != "builtin" {
            let mut p = PathBuf::from(&self.schema);
            fix(&mut p);
            self.schema = p.to_string_lossy().into_owned();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn populated_round_trips() {
        let mut cfg = RunConfig {
            seed: 7,
            variance_mode: VarianceMode::Sample,
            think_suffix: Some("/no_think".into()),
            ..Default::default()
        };
        cfg.paths.golds = Some("golds.jsonl".into());
        cfg.corpus.near_duplicate_threshold = Some(0.85);
        cfg.chat.kind = ChatKind::Replay;
        cfg.chat.replay_file = Some("canned.jsonl".into());
        cfg.chat.endpoint.api_key_env = Some("CHAT_API_KEY".into());
        cfg.chat.endpoint.temperature = 0.25;
        cfg.embedding.endpoint.dims = None;
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml(&text).unwrap().to_toml(), text);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg =
            RunConfig::from_toml("seed = 3\n[chat]\nkind = \"fixed\"\nfixed_response = \"{}\"\n")
                .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.chat.kind, ChatKind::Fixed);
        assert_eq!(cfg.sample_sizes, [50, 100, 150]);
        assert_eq!(cfg.chat.endpoint, ChatEndpointConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sead = 3").is_err());
        assert!(RunConfig::from_toml("[paths]\ngold = \"x\"").is_err());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "output_dir = \"out\"\nschema = \"schema.toml\"\n[paths]\ngolds = \"g.jsonl\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.paths.golds, Some(dir.path().join("g.jsonl")));
        assert_eq!(PathBuf::from(cfg.schema), dir.path().join("schema.toml"));
    }
}
