//! Context construction and prompt assembly.
//!
//! A context entry renders as one `<display name>: <value>` line per input
//! field, an optional `<plug-in> Prediction: <label> (Confidence: <c>)` line
//! and the `Label: <gold>` line. The test block has the same shape but ends
//! with the bare `Label:` cue that the completion model fills in. Entries are
//! joined by `entry_separator` (one blank line by default).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::plugin::PluginPrediction;
use crate::schema::{LabeledExample, TaskSchema};
use crate::tokens::TokenCounter;

/// Completion cue appended when the model overrides the plug-in.
pub const EXPLANATION_CUE: &str = "Explanation for overriding the prediction:";

/// Marker searched for when reading a prediction line back out of a prompt.
pub const PREDICTION_MARKER: &str = " Prediction: ";

pub const CONFIDENCE_OPEN: &str = " (Confidence: ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Ablation component (a): in-context examples.
    pub include_context: bool,
    /// Ablation component (b): confidence scores, in context and test block.
    pub include_confidence: bool,
    /// Ablation component (c): plug-in prediction for the test input.
    pub include_plugin_prediction_for_test: bool,
    pub include_plugin_prediction_in_context: bool,
    pub plugin_display_name: String,
    pub confidence_decimals: u32,
    pub entry_separator: String,
    pub label_cue: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            include_context: true,
            include_confidence: true,
            include_plugin_prediction_for_test: true,
            include_plugin_prediction_in_context: true,
            plugin_display_name: "RoBERTa-Large".into(),
            confidence_decimals: 2,
            entry_separator: "\n\n".into(),
            label_cue: "Label:".into(),
        }
    }
}

impl PromptConfig {
    /// Plain in-context learning: no plug-in output anywhere.
    pub fn icl(mut self) -> Self {
        self.include_plugin_prediction_in_context = false;
        self.include_plugin_prediction_for_test = false;
        self
    }

    /// Sets the three ablation components; plug-in predictions stay in the context.
    pub fn with_components(mut self, context: bool, confidence: bool, reference: bool) -> Self {
        self.include_context = context;
        self.include_confidence = confidence;
        self.include_plugin_prediction_for_test = reference;
        self
    }

    pub fn check(&self) -> Result<(), PromptError> {
        if self.confidence_decimals == 0 || self.confidence_decimals > 9 {
            return Err(PromptError::BadConfig(
                "confidence_decimals must be in 1..=9".into(),
            ));
        }
        if self.plugin_display_name.is_empty() || self.plugin_display_name.contains('\n') {
            return Err(PromptError::BadConfig(
                "plugin_display_name must be non-empty and single-line".into(),
            ));
        }
        if self.label_cue.is_empty() || self.label_cue.contains('\n') {
            return Err(PromptError::BadConfig(
                "label_cue must be non-empty and single-line".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("test block needs {needed} tokens but the budget allows {available}")]
    TestBlockTooLarge { needed: usize, available: usize },
    #[error("token budget {budget} does not exceed completion headroom {headroom}")]
    BudgetBelowHeadroom { budget: usize, headroom: usize },
    #[error("plug-in prediction for the test input is required by the prompt config")]
    MissingTestPrediction,
    #[error("invalid prompt config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntry {
    pub example: LabeledExample,
    pub plugin_pred: Option<PluginPrediction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub token_count: usize,
    pub entries_included: usize,
    pub entries_requested: usize,
}

/// Fixed-point rendering with half-up rounding, e.g. `0.515 -> "0.52"` at 2 decimals.
pub fn format_confidence(confidence: f64, decimals: u32) -> String {
    let scale = 10u64.pow(decimals);
    // The epsilon keeps decimal ties such as 0.515 (stored as 0.51499..) rounding up.
    let scaled = libm::floor(confidence * scale as f64 + 0.5 + 1e-9) as u64;
    let whole = scaled / scale;
    let frac = scaled % scale;
    alloc::format!("{whole}.{frac:0width$}", width = decimals as usize)
}

fn push_field_lines(out: &mut String, values: &BTreeMap<String, String>, schema: &TaskSchema) {
    for (i, field) in schema.input_fields.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&field.display_name);
        out.push_str(": ");
        out.push_str(values.get(&field.key).map(String::as_str).unwrap_or(""));
    }
}

/// The `<display name>: <value>` lines of an input, newline-joined.
pub fn render_field_lines(values: &BTreeMap<String, String>, schema: &TaskSchema) -> String {
    let mut out = String::new();
    push_field_lines(&mut out, values, schema);
    out
}

fn push_prediction_line(out: &mut String, pred: &PluginPrediction, cfg: &PromptConfig) {
    out.push('\n');
    out.push_str(&cfg.plugin_display_name);
    out.push_str(PREDICTION_MARKER);
    out.push_str(&pred.label);
    if cfg.include_confidence {
        out.push_str(CONFIDENCE_OPEN);
        out.push_str(&format_confidence(pred.confidence, cfg.confidence_decimals));
        out.push(')');
    }
}

pub fn render_context_entry(
    entry: &ContextEntry,
    schema: &TaskSchema,
    cfg: &PromptConfig,
) -> String {
    let mut out = String::new();
    push_field_lines(&mut out, &entry.example.values, schema);
    if cfg.include_plugin_prediction_in_context {
        if let Some(pred) = &entry.plugin_pred {
            push_prediction_line(&mut out, pred, cfg);
        }
    }
    out.push('\n');
    out.push_str(&cfg.label_cue);
    out.push(' ');
    out.push_str(&entry.example.gold_label);
    out
}

/// Test input block ending with the bare label cue.
///
/// The prediction line is rendered only when the config asks for it and a
/// prediction is supplied.
pub fn render_test_block(
    values: &BTreeMap<String, String>,
    plugin_pred: Option<&PluginPrediction>,
    schema: &TaskSchema,
    cfg: &PromptConfig,
) -> String {
    let mut out = String::new();
    push_field_lines(&mut out, values, schema);
    if cfg.include_plugin_prediction_for_test {
        if let Some(pred) = plugin_pred {
            push_prediction_line(&mut out, pred, cfg);
        }
    }
    out.push('\n');
    out.push_str(&cfg.label_cue);
    out
}

fn assemble(entries: &[String], test_block: &str, separator: &str) -> String {
    let mut text = String::new();
    for entry in entries {
        text.push_str(entry);
        text.push_str(separator);
    }
    text.push_str(test_block);
    text
}

/// Builds `context + test block`, keeping the longest prefix of
/// `context_entries` for which `tokens(prompt) + headroom <= token_budget`.
#[allow(clippy::too_many_arguments)]
pub fn build_prompt(
    context_entries: &[ContextEntry],
    test_values: &BTreeMap<String, String>,
    plugin_pred: Option<&PluginPrediction>,
    schema: &TaskSchema,
    cfg: &PromptConfig,
    token_budget: usize,
    completion_headroom: usize,
    counter: &impl TokenCounter,
) -> Result<RenderedPrompt, PromptError> {
    if token_budget <= completion_headroom {
        return Err(PromptError::BudgetBelowHeadroom {
            budget: token_budget,
            headroom: completion_headroom,
        });
    }
    if cfg.include_plugin_prediction_for_test && plugin_pred.is_none() {
        return Err(PromptError::MissingTestPrediction);
    }
    let available = token_budget - completion_headroom;
    let test_block = render_test_block(test_values, plugin_pred, schema, cfg);

    let rendered: Vec<String> = if cfg.include_context {
        context_entries
            .iter()
            .map(|e| render_context_entry(e, schema, cfg))
            .collect()
    } else {
        Vec::new()
    };

    for n in (0..=rendered.len()).rev() {
        let text = assemble(&rendered[..n], &test_block, &cfg.entry_separator);
        let token_count = counter.count(&text);
        if token_count <= available {
            return Ok(RenderedPrompt {
                text,
                token_count,
                entries_included: n,
                entries_requested: context_entries.len(),
            });
        }
    }
    Err(PromptError::TestBlockTooLarge {
        needed: counter.count(&test_block),
        available,
    })
}

/// Completes the label cue with `final_label` and appends the explanation cue.
pub fn render_explanation_prompt(prior_prompt: &str, final_label: &str) -> String {
    let mut out =
        String::with_capacity(prior_prompt.len() + final_label.len() + EXPLANATION_CUE.len() + 2);
    out.push_str(prior_prompt);
    out.push(' ');
    out.push_str(final_label);
    out.push('\n');
    out.push_str(EXPLANATION_CUE);
    out
}

/// A prediction line read back from prompt text.
#[derive(Debug, Clone, PartialEq)]
pub struct ScannedPrediction {
    pub label: String,
    pub confidence: Option<f64>,
}

/// Finds the last prediction line of the final block (the test block) of a prompt.
///
/// Returns `None` when the test block carries no plug-in prediction.
pub fn scan_test_prediction(prompt: &str, separator: &str) -> Option<ScannedPrediction> {
    let block = match prompt.rfind(separator) {
        Some(i) if !separator.is_empty() => &prompt[i + separator.len()..],
        _ => prompt,
    };
    let line = block
        .lines()
        .rev()
        .find(|l| l.contains(PREDICTION_MARKER))?;
    let rest = &line[line.find(PREDICTION_MARKER)? + PREDICTION_MARKER.len()..];
    match rest.find(CONFIDENCE_OPEN) {
        Some(i) => {
            let label = rest[..i].to_string();
            let num = rest[i + CONFIDENCE_OPEN.len()..].trim_end_matches(')');
            Some(ScannedPrediction {
                label,
                confidence: num.parse().ok(),
            })
        }
        None => Some(ScannedPrediction {
            label: rest.to_string(),
            confidence: None,
        }),
    }
}
