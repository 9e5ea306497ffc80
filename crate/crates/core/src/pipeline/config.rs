use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::backend::{build_backend, Backend, BackendConfig, BackendKind, CachedBackend};
use crate::engine::GradingSettings;
use crate::extract::{BoxLayout, MarkerGrammar, MarkerPatterns};
use crate::metrics::AlphaScale;
use crate::model::{load_exam_config, ConfigError, ExamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Workflow {
    /// Crop configured answer boxes and transcribe each region.
    Box,
    /// Transcribe whole pages and split at problem/solution markers.
    #[default]
    WholePage,
}

fn default_runs_dir() -> String {
    "runs".into()
}

fn default_transcripts() -> String {
    "transcripts.jsonl".into()
}

fn default_pages() -> String {
    "pages".into()
}

/// Run configuration file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub exam: String,
    #[serde(default = "default_pages")]
    pub pages: String,
    #[serde(default)]
    pub workflow: Workflow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grammar: Option<MarkerPatterns>,
    pub backends: Vec<BackendConfig>,
    pub ocr_backend: String,
    pub grading_backend: String,
    #[serde(flatten)]
    pub grading: GradingSettings,
    #[serde(default)]
    pub include_question_in_ocr: bool,
    #[serde(default = "default_transcripts")]
    pub transcripts: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<String>,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: String,
    #[serde(default)]
    pub review_unanswered: bool,
    #[serde(default)]
    pub alpha_scale: AlphaScale,
}

/// A parsed run configuration together with its exam and origin.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub exam: ExamConfig,
    pub base_dir: PathBuf,
    /// The configuration text exactly as read.
    pub raw: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: RunConfig =
            serde_json::from_str(&raw).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let exam = load_exam_config(&base_dir.join(&config.exam))?;
        let loaded = LoadedConfig {
            config,
            exam,
            base_dir,
            raw,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let c = &self.config;
        c.grading.plan.validate()?;
        for name in [&c.ocr_backend, &c.grading_backend] {
            if !c.backends.iter().any(|b| &b.name == name) {
                return Err(ConfigError::validation("backends", format!("no backend named `{name}`")).into());
            }
        }
        if !(0.0..=1.0).contains(&c.grading.max_drop_rate) {
            return Err(ConfigError::validation("max_drop_rate", "must lie in [0, 1]").into());
        }
        if c.workflow == Workflow::Box && c.layout.is_none() {
            return Err(ConfigError::validation("layout", "box workflow needs a layout file").into());
        }
        Ok(())
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.path(&self.config.runs_dir)
    }

    pub fn transcripts_path(&self) -> PathBuf {
        self.path(&self.config.transcripts)
    }

    pub fn grammar(&self) -> Result<MarkerGrammar, PipelineError> {
        let patterns = self.config.grammar.clone().unwrap_or_default();
        MarkerGrammar::new(&patterns).map_err(|e| ConfigError::validation("grammar", e.to_string()).into())
    }

    pub fn layout(&self) -> Result<BoxLayout, PipelineError> {
        let rel = self
            .config
            .layout
            .as_deref()
            .ok_or_else(|| ConfigError::validation("layout", "box workflow needs a layout file"))?;
        Ok(BoxLayout::load(&self.path(rel))?)
    }

    pub fn backend_config(&self, name: &str) -> Result<&BackendConfig, PipelineError> {
        self.config
            .backends
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| ConfigError::validation("backends", format!("no backend named `{name}`")).into())
    }

    /// Replace every backend by a scripted one reading `dir`.
    pub fn use_mock_fixtures(&mut self, dir: &Path) {
        let dir = std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf());
        for b in &mut self.config.backends {
            *b = BackendConfig::mock(b.name.clone(), dir.display().to_string());
        }
    }

    /// Instantiate the configured backends, cached when a cache directory
    /// is configured.
    pub fn backends(&self) -> Result<BTreeMap<String, Arc<dyn Backend>>, PipelineError> {
        let cache_root = self.config.cache_dir.as_deref().map(|d| self.path(d));
        let mut out = BTreeMap::new();
        for cfg in &self.config.backends {
            let backend = build_backend(cfg, &self.base_dir)?;
            let backend: Arc<dyn Backend> = match (&cache_root, cfg.kind) {
                (Some(root), kind) if kind != BackendKind::Mock => Arc::new(CachedBackend::new(backend, root)?),
                _ => backend,
            };
            out.insert(cfg.name.clone(), backend);
        }
        Ok(out)
    }
}
