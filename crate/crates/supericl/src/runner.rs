//! Experiment orchestration.
//!
//! One run: sample the context, collect plug-in predictions, build each
//! test prompt within the token budget, ask the completion model for a label,
//! ask for an explanation when the label overrides the plug-in, parse and
//! aggregate. Test examples fan out to a bounded pool of scoped threads and
//! records are collected back in dataset order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use supericl_core::eval::{parse_label, variance_across_seeds};
use supericl_core::llm::CountingBackend;
use supericl_core::prompt::{build_prompt, render_explanation_prompt};
use supericl_core::sampling::sample_in_context;
use supericl_core::{
    ByteHeuristic, CalibratedMock, CompletionBackend, CompletionRequest, CompletionResponse,
    ContextEntry, Dataset, EchoPluginOracle, EvalReport, GoldOracle, LabeledExample, LlmError,
    Plugin, PluginPrediction, PredictionRecord, PromptConfig, TaskSchema, ThresholdOverrideOracle,
};

use crate::cache::{cached_complete, ResponseCache};
use crate::config::{AdapterSpec, BackendSpec, ExperimentConfig, Mode, SchemaRef};
use crate::data::{check_predictions, load_dataset, load_predictions_file, DataFormat};
use crate::error::{HarnessError, Result};
use crate::http::{HttpClassifier, HttpProvider};
use crate::retry::{RetryPolicy, RetryingBackend};

pub type DynPlugin = Box<dyn Plugin + Send + Sync>;
pub type DynBackend = Box<dyn CompletionBackend + Send + Sync>;

/// Plug-in predictions keyed by (dataset role, id), computed at most once.
#[derive(Default)]
struct PluginMemo {
    map: Mutex<HashMap<(bool, String), PluginPrediction>>,
}

impl PluginMemo {
    fn get(
        &self,
        plugin: &dyn Plugin,
        schema: &TaskSchema,
        context: bool,
        ex: &LabeledExample,
    ) -> Result<PluginPrediction> {
        let key = (context, ex.id.clone());
        if let Some(p) = self.map.lock().unwrap().get(&key) {
            return Ok(p.clone());
        }
        let pred = plugin.predict(ex)?;
        pred.check(schema)?;
        self.map.lock().unwrap().insert(key, pred.clone());
        Ok(pred)
    }
}

struct ContextAndEvalPlugins {
    eval: DynPlugin,
    context: Option<DynPlugin>,
}

/// The completion stack: optional cache over retries over the raw backend.
struct Completer {
    raw: CountingBackend<DynBackend>,
    retry: RetryPolicy,
    cache: Option<ResponseCache>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl Completer {
    fn complete(
        &self,
        request: &CompletionRequest,
    ) -> std::result::Result<CompletionResponse, LlmError> {
        let retrying = RetryingBackend::new(&self.raw, self.retry.clone());
        let resp = match &self.cache {
            Some(cache) => cached_complete(cache, &retrying, request)?,
            None => retrying.complete(request)?,
        };
        let counter = if resp.from_cache {
            &self.hits
        } else {
            &self.misses
        };
        counter.fetch_add(1, Ordering::SeqCst);
        Ok(resp)
    }

    fn snapshot(&self) -> (usize, usize, usize) {
        (
            self.hits.load(Ordering::SeqCst),
            self.misses.load(Ordering::SeqCst),
            self.raw.calls(),
        )
    }
}

/// Per-run knobs that sweeps vary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub mode: Mode,
    pub seed: u64,
    pub num_examples: usize,
    pub prompt: PromptConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub backend_calls: usize,
    pub label_calls: usize,
    pub explanation_calls: usize,
    pub entries_included_min: Option<usize>,
    pub entries_included_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptDump {
    pub id: String,
    pub entries_included: usize,
    pub token_count: usize,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    /// Resolved config for this run, schema inlined.
    pub config: ExperimentConfig,
    pub context_ids: Vec<String>,
    pub report: EvalReport,
    pub prompts: Option<Vec<PromptDump>>,
    pub stats: RunStats,
}

/// A failed run with whatever records completed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: HarnessError,
    pub partial: Vec<PredictionRecord>,
}

impl From<HarnessError> for RunFailure {
    fn from(error: HarnessError) -> Self {
        Self {
            error,
            partial: Vec::new(),
        }
    }
}

pub struct Experiment {
    config: ExperimentConfig,
    schema: TaskSchema,
    context: Dataset,
    eval: Dataset,
    plugins: ContextAndEvalPlugins,
    memo: PluginMemo,
    completer: Completer,
}

impl Experiment {
    /// Loads data, plug-in and backend described by `config`.
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let schema = config.load_schema()?;
        let context = load_dataset(
            &config.context_dataset,
            DataFormat::from_path(&config.context_dataset),
            &schema,
        )?;
        let eval = load_dataset(
            &config.eval_dataset,
            DataFormat::from_path(&config.eval_dataset),
            &schema,
        )?;
        let plugins = build_plugins(&config, &schema, &context, &eval)?;
        let backend = build_backend(&config.backend, &schema, &eval, &config)?;
        Self::assemble(config, schema, context, eval, plugins, backend)
    }

    /// Builds an experiment from in-memory parts; `plugin` serves both datasets.
    pub fn from_parts(
        config: ExperimentConfig,
        schema: TaskSchema,
        context: Dataset,
        eval: Dataset,
        plugin: DynPlugin,
        backend: DynBackend,
    ) -> Result<Self> {
        config.validate()?;
        let plugins = ContextAndEvalPlugins {
            eval: plugin,
            context: None,
        };
        Self::assemble(config, schema, context, eval, plugins, backend)
    }

    fn assemble(
        mut config: ExperimentConfig,
        schema: TaskSchema,
        context: Dataset,
        eval: Dataset,
        plugins: ContextAndEvalPlugins,
        backend: DynBackend,
    ) -> Result<Self> {
        if eval.is_empty() {
            return Err(HarnessError::InvalidDataset("eval dataset is empty".into()));
        }
        config.schema = SchemaRef::Inline(schema.clone());
        let completer = Completer {
            raw: CountingBackend::new(backend),
            retry: config.retry.clone(),
            cache: config.cache_dir.clone().map(ResponseCache::new),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        };
        Ok(Self {
            config,
            schema,
            context,
            eval,
            plugins,
            memo: PluginMemo::default(),
            completer,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn schema(&self) -> &TaskSchema {
        &self.schema
    }

    pub fn context_dataset(&self) -> &Dataset {
        &self.context
    }

    pub fn eval_dataset(&self) -> &Dataset {
        &self.eval
    }

    /// Total raw backend invocations so far.
    pub fn backend_calls(&self) -> usize {
        self.completer.raw.calls()
    }

    pub fn default_params(&self) -> RunParams {
        RunParams {
            mode: self.config.mode,
            seed: self.config.seed,
            num_examples: self.config.num_examples,
            prompt: self.config.prompt.clone(),
        }
    }

    fn context_plugin(&self) -> &dyn Plugin {
        self.plugins
            .context
            .as_deref()
            .unwrap_or(&*self.plugins.eval)
    }

    fn snapshot_config(&self, params: &RunParams) -> ExperimentConfig {
        let mut cfg = self.config.clone();
        cfg.mode = params.mode;
        cfg.seed = params.seed;
        cfg.num_examples = params.num_examples;
        cfg.prompt = params.prompt.clone();
        cfg
    }

    pub fn run(&self, params: &RunParams) -> std::result::Result<RunArtifact, RunFailure> {
        let config = self.snapshot_config(params);
        let prompt = config.effective_prompt();
        prompt
            .check()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let sampled = sample_in_context(&self.context, params.num_examples, params.seed)
            .map_err(HarnessError::from)?;
        let context_ids: Vec<String> = sampled.iter().map(|e| e.id.clone()).collect();

        let wants_context_preds = params.mode == Mode::SuperIcl
            && prompt.include_context
            && prompt.include_plugin_prediction_in_context;
        let mut entries = Vec::with_capacity(sampled.len());
        if params.mode != Mode::PluginOnly {
            for example in sampled {
                let plugin_pred = if wants_context_preds {
                    Some(
                        self.memo
                            .get(self.context_plugin(), &self.schema, true, &example)?,
                    )
                } else {
                    None
                };
                entries.push(ContextEntry {
                    example,
                    plugin_pred,
                });
            }
        }

        let before = self.completer.snapshot();
        let label_calls = AtomicUsize::new(0);
        let explanation_calls = AtomicUsize::new(0);
        let job = Job {
            exp: self,
            mode: params.mode,
            prompt: &prompt,
            entries: &entries,
            label_calls: &label_calls,
            explanation_calls: &explanation_calls,
        };
        let outcomes = run_pool(&self.eval.examples, self.config.parallelism, |ex| {
            job.run_one(ex)
        });

        let mut records = Vec::with_capacity(outcomes.len());
        let mut dumps = Vec::new();
        let mut first_error = None;
        for (ex, outcome) in self.eval.examples.iter().zip(outcomes) {
            match outcome {
                Some(Ok((record, dump))) => {
                    records.push(record);
                    dumps.extend(dump);
                }
                Some(Err(e)) if first_error.is_none() => {
                    first_error = Some(HarnessError::Example {
                        id: ex.id.clone(),
                        source: Box::new(e),
                    })
                }
                _ => {}
            }
        }
        if let Some(error) = first_error {
            return Err(RunFailure {
                error,
                partial: records,
            });
        }

        let report =
            EvalReport::from_records(records, &self.schema, self.config.histogram_bin_width)
                .map_err(HarnessError::from)?;
        let after = self.completer.snapshot();
        let stats = RunStats {
            cache_hits: after.0 - before.0,
            cache_misses: after.1 - before.1,
            backend_calls: after.2 - before.2,
            label_calls: label_calls.into_inner(),
            explanation_calls: explanation_calls.into_inner(),
            entries_included_min: dumps.iter().map(|d| d.entries_included).min(),
            entries_included_max: dumps.iter().map(|d| d.entries_included).max(),
        };
        Ok(RunArtifact {
            config,
            context_ids,
            report,
            prompts: self.config.dump_prompts.then_some(dumps),
            stats,
        })
    }
}

struct Job<'a> {
    exp: &'a Experiment,
    mode: Mode,
    prompt: &'a PromptConfig,
    entries: &'a [ContextEntry],
    label_calls: &'a AtomicUsize,
    explanation_calls: &'a AtomicUsize,
}

impl Job<'_> {
    fn run_one(&self, ex: &LabeledExample) -> Result<(PredictionRecord, Option<PromptDump>)> {
        let exp = self.exp;
        let plugin_pred = match self.mode {
            Mode::Icl => None,
            _ => Some(exp.memo.get(&*exp.plugins.eval, &exp.schema, false, ex)?),
        };
        if self.mode == Mode::PluginOnly {
            let label = plugin_pred.as_ref().map(|p| p.label.clone());
            return Ok((
                PredictionRecord::new(&ex.id, &ex.gold_label, plugin_pred, label, ""),
                None,
            ));
        }

        let shown = plugin_pred
            .clone()
            .filter(|_| self.prompt.include_plugin_prediction_for_test);
        let rendered = build_prompt(
            self.entries,
            &ex.values,
            shown.as_ref(),
            &exp.schema,
            self.prompt,
            exp.config.token_budget,
            exp.config.completion_headroom,
            &ByteHeuristic,
        )?;
        let decoding = &exp.config.decoding;
        let model_id = exp.config.backend.model_id();
        let label_req = CompletionRequest {
            model_id: model_id.clone(),
            prompt: rendered.text.clone(),
            max_tokens: decoding.label_max_tokens,
            temperature: decoding.temperature,
            stop_sequences: decoding.label_stop.clone(),
        };
        self.label_calls.fetch_add(1, Ordering::SeqCst);
        let resp = exp.completer.complete(&label_req)?;
        let final_label = parse_label(&resp.text, &exp.schema.labels).map(String::from);
        let mut record = PredictionRecord::new(
            &ex.id,
            &ex.gold_label,
            plugin_pred,
            final_label.clone(),
            resp.text,
        );

        if record.overridden && shown.is_some() && exp.config.explanations {
            let final_label = final_label.expect("overridden implies a parsed label");
            let exp_req = CompletionRequest {
                model_id,
                prompt: render_explanation_prompt(&rendered.text, &final_label),
                max_tokens: decoding.explanation_max_tokens,
                temperature: decoding.temperature,
                stop_sequences: decoding.explanation_stop.clone(),
            };
            self.explanation_calls.fetch_add(1, Ordering::SeqCst);
            let exp_resp = exp.completer.complete(&exp_req)?;
            record.explanation = Some(exp_resp.text.trim().to_string());
        }
        let dump = PromptDump {
            id: ex.id.clone(),
            entries_included: rendered.entries_included,
            token_count: rendered.token_count,
            prompt: rendered.text,
        };
        Ok((record, Some(dump)))
    }
}

/// Runs `f` over `items` on at most `workers` threads; stops handing out work after the first error.
fn run_pool<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Vec<Option<Result<R>>> {
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                if out.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap()).collect()
}

fn build_plugins(
    config: &ExperimentConfig,
    schema: &TaskSchema,
    context: &Dataset,
    eval: &Dataset,
) -> Result<ContextAndEvalPlugins> {
    Ok(match &config.plugin.adapter {
        AdapterSpec::PredictionsFile { path, context_path } => {
            let eval_table = load_predictions_file(path)?;
            check_predictions(&eval_table, schema)?;
            let context_table = match context_path {
                Some(p) => {
                    let t = load_predictions_file(p)?;
                    check_predictions(&t, schema)?;
                    Some(Box::new(t) as DynPlugin)
                }
                None => None,
            };
            ContextAndEvalPlugins {
                eval: Box::new(eval_table),
                context: context_table,
            }
        }
        AdapterSpec::HttpClassifier {
            url,
            max_in_flight,
            timeout_secs,
        } => ContextAndEvalPlugins {
            eval: Box::new(HttpClassifier::new(
                url,
                schema.clone(),
                *max_in_flight,
                Duration::from_secs(*timeout_secs),
            )),
            context: None,
        },
        AdapterSpec::CalibratedMock {
            target_accuracy,
            profile,
            seed,
        } => ContextAndEvalPlugins {
            eval: Box::new(CalibratedMock::from_examples(
                schema,
                &eval.examples,
                *target_accuracy,
                *profile,
                *seed,
            )),
            context: Some(Box::new(CalibratedMock::from_examples(
                schema,
                &context.examples,
                *target_accuracy,
                *profile,
                *seed,
            ))),
        },
    })
}

/// Builds the raw backend named by `spec`. Oracles read the eval dataset and prompt separator.
pub fn build_backend(
    spec: &BackendSpec,
    schema: &TaskSchema,
    eval: &Dataset,
    config: &ExperimentConfig,
) -> Result<DynBackend> {
    let sep = config.prompt.entry_separator.clone();
    Ok(match spec {
        BackendSpec::Gold => Box::new(GoldOracle::new(schema, &eval.examples, sep)),
        BackendSpec::EchoPlugin => Box::new(EchoPluginOracle::new(schema.labels[0].clone(), sep)),
        BackendSpec::ThresholdOverride { threshold } => Box::new(ThresholdOverrideOracle::new(
            *threshold,
            schema.labels.clone(),
            sep,
        )),
        BackendSpec::Http {
            endpoint,
            api_key_env,
            timeout_secs,
            ..
        } => Box::new(HttpProvider::from_env(
            endpoint,
            api_key_env,
            config.parallelism,
            Duration::from_secs(*timeout_secs),
        )),
    })
}

/// Loads and runs the experiment described by `config`.
pub fn run_experiment(config: ExperimentConfig) -> std::result::Result<RunArtifact, RunFailure> {
    let exp = Experiment::load(config)?;
    exp.run(&exp.default_params())
}

pub const DEFAULT_SEEDS: [u64; 5] = [42, 0, 1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedTable {
    pub rows: Vec<SeedRow>,
    /// Sample variance of the accuracies in percentage points squared.
    pub variance: f64,
    #[serde(skip)]
    pub artifacts: Vec<RunArtifact>,
}

/// One run per seed; plug-in predictions are shared across runs.
pub fn run_multi_seed(
    exp: &Experiment,
    base: &RunParams,
    seeds: &[u64],
) -> std::result::Result<MultiSeedTable, RunFailure> {
    if seeds.len() < 2 {
        return Err(HarnessError::Config("multi-seed needs at least two seeds".into()).into());
    }
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for &seed in seeds {
        let art = exp.run(&RunParams {
            seed,
            ..base.clone()
        })?;
        rows.push(SeedRow {
            seed,
            accuracy: art.report.accuracy,
        });
        artifacts.push(art);
    }
    let pct: Vec<f64> = rows.iter().map(|r| r.accuracy * 100.0).collect();
    let variance = variance_across_seeds(&pct).map_err(HarnessError::from)?;
    Ok(MultiSeedTable {
        rows,
        variance,
        artifacts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub accuracy: f64,
    pub entries_included_min: Option<usize>,
}

/// One run per example count, all with the same seed.
pub fn sweep_num_examples(
    exp: &Experiment,
    base: &RunParams,
    ks: &[usize],
) -> std::result::Result<(Vec<SweepRow>, Vec<RunArtifact>), RunFailure> {
    if ks.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one k".into()).into());
    }
    if let Some(&k) = ks.iter().find(|&&k| k > exp.context_dataset().len()) {
        return Err(HarnessError::from(supericl_core::SampleError::KTooLarge {
            k,
            available: exp.context_dataset().len(),
        })
        .into());
    }
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for &k in ks {
        let art = exp.run(&RunParams {
            num_examples: k,
            ..base.clone()
        })?;
        rows.push(SweepRow {
            k,
            accuracy: art.report.accuracy,
            entries_included_min: art.stats.entries_included_min,
        });
        artifacts.push(art);
    }
    Ok((rows, artifacts))
}

/// The ablation grid: (name, context, confidence, reference).
pub const ABLATION_ROWS: [(&str, bool, bool, bool); 5] = [
    ("(1)", true, true, false),
    ("(2)", true, false, true),
    ("(3)", false, true, true),
    ("(4)", false, false, true),
    ("full", true, true, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub context: bool,
    pub confidence: bool,
    pub reference: bool,
    pub accuracy: f64,
}

pub fn run_ablation_grid(
    exp: &Experiment,
    base: &RunParams,
) -> std::result::Result<(Vec<AblationRow>, Vec<RunArtifact>), RunFailure> {
    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for (name, context, confidence, reference) in ABLATION_ROWS {
        let params = RunParams {
            mode: Mode::SuperIcl,
            prompt: base
                .prompt
                .clone()
                .with_components(context, confidence, reference),
            ..base.clone()
        };
        let art = exp.run(&params)?;
        rows.push(AblationRow {
            name: name.into(),
            context,
            confidence,
            reference,
            accuracy: art.report.accuracy,
        });
        artifacts.push(art);
    }
    Ok((rows, artifacts))
}
