//! Declarative experiment configuration (TOML, or JSON for snapshots).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use supericl_core::{ConfidenceProfile, PromptConfig, TaskSchema};

use crate::data::load_schema;
use crate::error::{HarnessError, Result};
use crate::http::DEFAULT_API_KEY_ENV;
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    SuperIcl,
    Icl,
    PluginOnly,
}

/// A schema given by path or written inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaRef {
    Path(PathBuf),
    Inline(TaskSchema),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginSpec {
    /// Name printed in prompts; overrides `prompt.plugin_display_name` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    pub adapter: AdapterSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterSpec {
    PredictionsFile {
        path: PathBuf,
        /// Predictions for the context dataset when its ids differ from the eval file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        context_path: Option<PathBuf>,
    },
    HttpClassifier {
        url: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    CalibratedMock {
        target_accuracy: f64,
        #[serde(default = "default_profile")]
        profile: ConfidenceProfile,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Gold,
    EchoPlugin,
    ThresholdOverride {
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

impl BackendSpec {
    pub fn model_id(&self) -> String {
        match self {
            BackendSpec::Gold => "oracle/gold".into(),
            BackendSpec::EchoPlugin => "oracle/echo-plugin".into(),
            BackendSpec::ThresholdOverride { threshold } => {
                format!("oracle/threshold-override@{threshold}")
            }
            BackendSpec::Http { model, .. } => model.clone(),
        }
    }

    /// Parses the `--backend` flag: `gold`, `echo`, `threshold[:tau]`. HTTP needs a config file.
    pub fn parse_flag(flag: &str) -> Result<Self> {
        let (name, arg) = flag
            .split_once(':')
            .map_or((flag, None), |(n, a)| (n, Some(a)));
        match (name, arg) {
            ("gold", None) => Ok(BackendSpec::Gold),
            ("echo" | "echo_plugin" | "echo-plugin", None) => Ok(BackendSpec::EchoPlugin),
            ("threshold" | "threshold_override" | "threshold-override", arg) => {
                let threshold = match arg {
                    Some(a) => a
                        .parse()
                        .map_err(|_| HarnessError::Config(format!("bad threshold {a:?}")))?,
                    None => default_threshold(),
                };
                Ok(BackendSpec::ThresholdOverride { threshold })
            }
            _ => Err(HarnessError::Config(format!(
                "unknown backend {flag:?}; expected gold, echo or threshold[:tau]"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub label_max_tokens: u32,
    pub explanation_max_tokens: u32,
    pub temperature: f64,
    pub label_stop: Vec<String>,
    pub explanation_stop: Vec<String>,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            label_max_tokens: 16,
            explanation_max_tokens: 128,
            temperature: 0.0,
            label_stop: vec!["\n\n".into()],
            explanation_stop: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: SchemaRef,
    /// Source of the in-context examples.
    pub context_dataset: PathBuf,
    /// Examples to evaluate; may come from a different task's data.
    pub eval_dataset: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub prompt: PromptConfig,
    pub plugin: PluginSpec,
    pub backend: BackendSpec,
    #[serde(default = "default_k")]
    pub num_examples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub token_budget: usize,
    #[serde(default = "default_headroom")]
    pub completion_headroom: usize,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub parallelism: usize,
    #[serde(default = "default_true")]
    pub explanations: bool,
    #[serde(default = "default_bin_width")]
    pub histogram_bin_width: f64,
    #[serde(default)]
    pub dump_prompts: bool,
}

fn default_k() -> usize {
    32
}
fn default_seed() -> u64 {
    42
}
fn default_budget() -> usize {
    4096
}
fn default_headroom() -> usize {
    128
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    60
}
fn default_true() -> bool {
    true
}
fn default_bin_width() -> f64 {
    supericl_core::eval::DEFAULT_BIN_WIDTH
}
fn default_threshold() -> f64 {
    0.7
}
fn default_profile() -> ConfidenceProfile {
    ConfidenceProfile::NoisyCalibrated
}
fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

impl ExperimentConfig {
    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg: Self = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let SchemaRef::Path(p) = &mut self.schema {
            fix(p);
        }
        fix(&mut self.context_dataset);
        fix(&mut self.eval_dataset);
        if let AdapterSpec::PredictionsFile { path, context_path } = &mut self.plugin.adapter {
            fix(path);
            if let Some(p) = context_path {
                fix(p);
            }
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
        if let Some(p) = &mut self.cache_dir {
            fix(p);
        }
    }

    pub fn load_schema(&self) -> Result<TaskSchema> {
        match &self.schema {
            SchemaRef::Path(p) => load_schema(p),
            SchemaRef::Inline(s) => {
                s.check()?;
                Ok(s.clone())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_budget <= self.completion_headroom {
            return Err(HarnessError::Config(format!(
                "token_budget {} must exceed completion_headroom {}",
                self.token_budget, self.completion_headroom
            )));
        }
        if self.parallelism == 0 {
            return Err(HarnessError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.decoding.label_max_tokens == 0 || self.decoding.explanation_max_tokens == 0 {
            return Err(HarnessError::Config(
                "max token counts must be at least 1".into(),
            ));
        }
        if let AdapterSpec::CalibratedMock {
            target_accuracy, ..
        } = self.plugin.adapter
        {
            if !(0.0..=1.0).contains(&target_accuracy) {
                return Err(HarnessError::Config(
                    "target_accuracy must lie in [0, 1]".into(),
                ));
            }
        }
        self.prompt
            .check()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(name) = &self.plugin.display_name {
            if name.is_empty() || name.contains('\n') {
                return Err(HarnessError::Config(
                    "plugin display_name must be single-line and non-empty".into(),
                ));
            }
        }
        Ok(())
    }

    /// Prompt settings after applying the mode and the plug-in display name.
    pub fn effective_prompt(&self) -> PromptConfig {
        let mut p = self.prompt.clone();
        if let Some(name) = &self.plugin.display_name {
            p.plugin_display_name = name.clone();
        }
        if self.mode == Mode::Icl {
            p = p.icl();
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = "schema.toml"
context_dataset = "train.jsonl"
eval_dataset = "dev.jsonl"

[plugin]
display_name = "DeBERTa"
adapter = { kind = "calibrated_mock", target_accuracy = 0.8 }

[backend]
kind = "threshold_override"
"#;

    #[test]
    fn defaults_and_path_resolution() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.num_examples, 32);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.token_budget, 4096);
        assert_eq!(cfg.completion_headroom, 128);
        assert_eq!(cfg.parallelism, 4);
        assert_eq!(cfg.mode, Mode::SuperIcl);
        assert_eq!(cfg.context_dataset, PathBuf::from("/data/train.jsonl"));
        assert_eq!(
            cfg.backend,
            BackendSpec::ThresholdOverride { threshold: 0.7 }
        );
        assert_eq!(cfg.decoding, Decoding::default());
        assert_eq!(cfg.effective_prompt().plugin_display_name, "DeBERTa");
        cfg.validate().unwrap();
    }

    #[test]
    fn icl_mode_strips_plugin_output() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/")).unwrap();
        cfg.mode = Mode::Icl;
        let p = cfg.effective_prompt();
        assert!(!p.include_plugin_prediction_for_test);
        assert!(!p.include_plugin_prediction_in_context);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let bad = format!("{MINIMAL}\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml(&bad, Path::new("/")).is_err());
        let mut cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/")).unwrap();
        cfg.token_budget = 100;
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn backend_flag_parsing() {
        assert_eq!(BackendSpec::parse_flag("gold").unwrap(), BackendSpec::Gold);
        assert_eq!(
            BackendSpec::parse_flag("echo").unwrap(),
            BackendSpec::EchoPlugin
        );
        assert_eq!(
            BackendSpec::parse_flag("threshold:0.6").unwrap(),
            BackendSpec::ThresholdOverride { threshold: 0.6 }
        );
        assert!(BackendSpec::parse_flag("gpt").is_err());
    }

    #[test]
    fn snapshot_round_trips_through_json() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/d")).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
