//! Deterministic completion backends for offline verification.
//!
//! Each oracle reads only the prompt (plus its own fixed configuration) and
//! answers label calls with ` <label>`. Explanation calls, recognised by the
//! trailing explanation cue, get a fixed sentence.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use super::{
    apply_stop_sequences, CompletionBackend, CompletionRequest, CompletionResponse, LlmError,
};
use crate::prompt::{render_field_lines, scan_test_prediction, EXPLANATION_CUE};
use crate::schema::{LabeledExample, TaskSchema};
use crate::tokens::{ByteHeuristic, TokenCounter};

const EXPLANATION: &str = " The plug-in prediction is not supported by the input.";

fn respond(request: &CompletionRequest, text: String) -> Result<CompletionResponse, LlmError> {
    request.check()?;
    let text = apply_stop_sequences(&text, &request.stop_sequences);
    Ok(CompletionResponse {
        prompt_tokens: ByteHeuristic.count(&request.prompt) as u64,
        completion_tokens: ByteHeuristic.count(&text) as u64,
        text,
        from_cache: false,
    })
}

fn is_explanation_call(prompt: &str) -> bool {
    prompt.ends_with(EXPLANATION_CUE)
}

fn final_block<'a>(prompt: &'a str, separator: &str) -> &'a str {
    match prompt.rfind(separator) {
        Some(i) if !separator.is_empty() => &prompt[i + separator.len()..],
        _ => prompt,
    }
}

/// Answers with the gold label of the test input.
///
/// The gold labels are indexed by the rendered field lines of each example,
/// so field values must not contain newlines.
#[derive(Debug, Clone)]
pub struct GoldOracle {
    gold: BTreeMap<String, String>,
    field_count: usize,
    separator: String,
}

impl GoldOracle {
    pub fn new<'a>(
        schema: &TaskSchema,
        examples: impl IntoIterator<Item = &'a LabeledExample>,
        separator: impl Into<String>,
    ) -> Self {
        let gold = examples
            .into_iter()
            .map(|e| (render_field_lines(&e.values, schema), e.gold_label.clone()))
            .collect();
        Self {
            gold,
            field_count: schema.input_fields.len(),
            separator: separator.into(),
        }
    }
}

impl CompletionBackend for GoldOracle {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if is_explanation_call(&request.prompt) {
            return respond(request, EXPLANATION.into());
        }
        let block = final_block(&request.prompt, &self.separator);
        let key = block
            .split('\n')
            .take(self.field_count)
            .collect::<Vec<_>>()
            .join("\n");
        match self.gold.get(&key) {
            Some(label) => respond(request, alloc::format!(" {label}")),
            None => Err(LlmError::Provider {
                status: 404,
                body: "test input unknown to gold oracle".into(),
            }),
        }
    }
}

/// Echoes the plug-in prediction found in the test block.
///
/// Without a prediction line (plain ICL prompts) it answers with `fallback`.
#[derive(Debug, Clone)]
pub struct EchoPluginOracle {
    fallback: String,
    separator: String,
}

impl EchoPluginOracle {
    pub fn new(fallback: impl Into<String>, separator: impl Into<String>) -> Self {
        Self {
            fallback: fallback.into(),
            separator: separator.into(),
        }
    }
}

impl CompletionBackend for EchoPluginOracle {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if is_explanation_call(&request.prompt) {
            return respond(request, EXPLANATION.into());
        }
        let label = scan_test_prediction(&request.prompt, &self.separator)
            .map(|p| p.label)
            .unwrap_or_else(|| self.fallback.clone());
        respond(request, alloc::format!(" {label}"))
    }
}

/// Overrides the plug-in whenever its stated confidence is below `threshold`.
///
/// An override answers with the label following the plug-in's label in the
/// label order (cyclically); otherwise the plug-in label is echoed. A test
/// block without a confidence counts as confident. Without any prediction
/// line the answer is picked by hashing the whole prompt, which makes plain
/// ICL runs depend on the sampled context.
#[derive(Debug, Clone)]
pub struct ThresholdOverrideOracle {
    threshold: f64,
    labels: Vec<String>,
    separator: String,
}

impl ThresholdOverrideOracle {
    pub fn new(threshold: f64, labels: Vec<String>, separator: impl Into<String>) -> Self {
        assert!(!labels.is_empty(), "oracle needs a label set");
        Self {
            threshold,
            labels,
            separator: separator.into(),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn pick(&self, prompt: &str) -> String {
        match scan_test_prediction(prompt, &self.separator) {
            Some(pred) => {
                let confident = pred.confidence.is_none_or(|c| c >= self.threshold);
                match self.labels.iter().position(|l| *l == pred.label) {
                    Some(i) if !confident => self.labels[(i + 1) % self.labels.len()].clone(),
                    _ => pred.label,
                }
            }
            None => {
                let digest = Sha256::digest(prompt.as_bytes());
                let mut word = [0u8; 8];
                word.copy_from_slice(&digest[..8]);
                let i = u64::from_le_bytes(word) % self.labels.len() as u64;
                self.labels[i as usize].clone()
            }
        }
    }
}

impl CompletionBackend for ThresholdOverrideOracle {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if is_explanation_call(&request.prompt) {
            return respond(request, EXPLANATION.into());
        }
        respond(request, alloc::format!(" {}", self.pick(&request.prompt)))
    }
}
