//! Allocation-only core of the SuperICL harness.
//!
//! Everything here is a pure function of its inputs: task schemas, seeded
//! in-context sampling, plug-in prediction types, prompt construction with
//! token-budget fitting, completion request identity, deterministic oracle
//! backends, label parsing and the evaluation statistics. File formats,
//! HTTP transports, the on-disk cache and the CLI live in the `supericl`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod eval;
pub mod llm;
pub mod plugin;
pub mod prompt;
pub mod sampling;
pub mod schema;
pub mod tokens;

pub use eval::{parse_label, EvalError, EvalReport, HistogramBin, PredictionRecord};
pub use llm::{
    apply_stop_sequences, CacheKey, CompletionBackend, CompletionRequest, CompletionResponse,
    EchoPluginOracle, GoldOracle, LlmError, ThresholdOverrideOracle,
};
pub use plugin::{CalibratedMock, ConfidenceProfile, Plugin, PluginError, PluginPrediction};
pub use prompt::{ContextEntry, PromptConfig, PromptError, RenderedPrompt};
pub use sampling::{sample_in_context, SampleError};
pub use schema::{Dataset, InputField, LabeledExample, Metric, SchemaError, TaskSchema, Violation};
pub use tokens::{ByteHeuristic, TokenCounter};
