//! Task schemas, labeled examples and datasets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Scoring metric reported for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MatthewsCorrelation,
}

/// One input column: the key used in data files and the name printed in prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputField {
    pub key: String,
    pub display_name: String,
}

impl InputField {
    pub fn new(key: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            display_name: display_name.into(),
        }
    }
}

/// Field names, closed label vocabulary and metric of a classification task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub task_id: String,
    pub input_fields: Vec<InputField>,
    pub labels: Vec<String>,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema has no labels")]
    NoLabels,
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("label {0:?} contains a newline")]
    LabelHasNewline(String),
    #[error("schema has no input fields")]
    NoInputFields,
    #[error("duplicate field key {0:?}")]
    DuplicateFieldKey(String),
    #[error("duplicate display name {0:?}")]
    DuplicateDisplayName(String),
}

impl TaskSchema {
    /// Builds a schema and checks its invariants.
    pub fn new(
        task_id: impl Into<String>,
        input_fields: Vec<InputField>,
        labels: Vec<String>,
        metric: Metric,
    ) -> Result<Self, SchemaError> {
        let schema = Self {
            task_id: task_id.into(),
            input_fields,
            labels,
            metric,
        };
        schema.check()?;
        Ok(schema)
    }

    pub fn check(&self) -> Result<(), SchemaError> {
        if self.labels.is_empty() {
            return Err(SchemaError::NoLabels);
        }
        let mut seen = BTreeSet::new();
        for label in &self.labels {
            if label.contains('\n') || label.contains('\r') {
                return Err(SchemaError::LabelHasNewline(label.clone()));
            }
            if !seen.insert(label.as_str()) {
                return Err(SchemaError::DuplicateLabel(label.clone()));
            }
        }
        if self.input_fields.is_empty() {
            return Err(SchemaError::NoInputFields);
        }
        let mut keys = BTreeSet::new();
        let mut names = BTreeSet::new();
        for field in &self.input_fields {
            if !keys.insert(field.key.as_str()) {
                return Err(SchemaError::DuplicateFieldKey(field.key.clone()));
            }
            if !names.insert(field.display_name.as_str()) {
                return Err(SchemaError::DuplicateDisplayName(
                    field.display_name.clone(),
                ));
            }
        }
        Ok(())
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// A training or test instance: input field values and the gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub values: BTreeMap<String, String>,
    pub gold_label: String,
}

impl LabeledExample {
    pub fn new<K, V>(
        id: impl Into<String>,
        values: impl IntoIterator<Item = (K, V)>,
        gold_label: impl Into<String>,
    ) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            id: id.into(),
            values: values
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            gold_label: gold_label.into(),
        }
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_id: String,
    pub split: String,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledExample> {
        self.examples.iter().find(|e| e.id == id)
    }
}

/// A single broken invariant found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Schema(String),
    SchemaMismatch { expected: String, found: String },
    DuplicateId(String),
    MissingField { id: String, key: String },
    UnexpectedField { id: String, key: String },
    UnknownLabel { id: String, label: String },
}

/// Lists every invariant the dataset breaks against `schema`. Empty means valid.
pub fn validate_dataset(dataset: &Dataset, schema: &TaskSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Err(e) = schema.check() {
        out.push(Violation::Schema(alloc::format!("{e}")));
    }
    if dataset.schema_id != schema.task_id {
        out.push(Violation::SchemaMismatch {
            expected: schema.task_id.clone(),
            found: dataset.schema_id.clone(),
        });
    }
    let mut ids = BTreeSet::new();
    for example in &dataset.examples {
        if !ids.insert(example.id.as_str()) {
            out.push(Violation::DuplicateId(example.id.clone()));
        }
        out.extend(validate_example(example, schema));
    }
    out
}

/// Field and label checks for a single example.
pub fn validate_example(example: &LabeledExample, schema: &TaskSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    for field in &schema.input_fields {
        if !example.values.contains_key(&field.key) {
            out.push(Violation::MissingField {
                id: example.id.clone(),
                key: field.key.clone(),
            });
        }
    }
    for key in example.values.keys() {
        if !schema.input_fields.iter().any(|f| &f.key == key) {
            out.push(Violation::UnexpectedField {
                id: example.id.clone(),
                key: key.clone(),
            });
        }
    }
    if !schema.has_label(&example.gold_label) {
        out.push(Violation::UnknownLabel {
            id: example.id.clone(),
            label: example.gold_label.clone(),
        });
    }
    out
}
