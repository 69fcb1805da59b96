//! Schema, dataset and predictions files.
//!
//! Datasets are jsonl (`{"id": .., "<field key>": .., "label": ..}` per line)
//! or GLUE-style tsv: a header of field keys plus `label` (and optionally
//! `id`), tab separated, UTF-8, no quoting. Without an `id` column, tsv rows
//! are numbered from 1.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde_json::{Map, Value};
use supericl_core::plugin::PredictionTable;
use supericl_core::schema::validate_dataset;
use supericl_core::{Dataset, LabeledExample, PluginPrediction, TaskSchema};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Tsv,
}

impl DataFormat {
    /// Guesses the format from the file extension (`.tsv` or anything else as jsonl).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => DataFormat::Tsv,
            _ => DataFormat::Jsonl,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Reads a schema document, TOML or JSON by extension.
pub fn load_schema(path: &Path) -> Result<TaskSchema> {
    let text = read(path)?;
    let schema: TaskSchema = if path.extension().and_then(|e| e.to_str()) == Some("json") {
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
    };
    schema.check()?;
    Ok(schema)
}

pub fn load_dataset(path: &Path, format: DataFormat, schema: &TaskSchema) -> Result<Dataset> {
    let text = read(path)?;
    let examples = match format {
        DataFormat::Jsonl => parse_jsonl(path, &text, schema)?,
        DataFormat::Tsv => parse_tsv(path, &text, schema)?,
    };
    let dataset = Dataset {
        schema_id: schema.task_id.clone(),
        split: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        examples,
    };
    let violations = validate_dataset(&dataset, schema);
    if let Some(v) = violations.first() {
        return Err(HarnessError::InvalidDataset(format!(
            "{}: {v:?}",
            path.display()
        )));
    }
    Ok(dataset)
}

fn parse_jsonl(path: &Path, text: &str, schema: &TaskSchema) -> Result<Vec<LabeledExample>> {
    let malformed = |line: usize, reason: String| HarnessError::MalformedRecord {
        path: path.into(),
        line,
        reason,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> =
            serde_json::from_str(raw).map_err(|e| malformed(line, e.to_string()))?;
        let string_field = |key: &str| -> Result<String> {
            match obj.get(key) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(malformed(line, format!("field {key:?} is not a string"))),
                None => Err(HarnessError::MissingField {
                    path: path.into(),
                    line,
                    key: key.into(),
                }),
            }
        };
        let id = string_field("id")?;
        let mut values = std::collections::BTreeMap::new();
        for field in &schema.input_fields {
            values.insert(field.key.clone(), string_field(&field.key)?);
        }
        let label = string_field("label")?;
        if !schema.has_label(&label) {
            return Err(HarnessError::UnknownLabel {
                path: path.into(),
                line,
                value: label,
            });
        }
        out.push(LabeledExample {
            id,
            values,
            gold_label: label,
        });
    }
    Ok(out)
}

fn parse_tsv(path: &Path, text: &str, schema: &TaskSchema) -> Result<Vec<LabeledExample>> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split('\t').collect(),
        None => return Ok(Vec::new()),
    };
    let column = |key: &str| header.iter().position(|h| *h == key);
    let missing = |key: &str| HarnessError::MissingField {
        path: path.into(),
        line: 1,
        key: key.into(),
    };
    let label_col = column("label").ok_or_else(|| missing("label"))?;
    let id_col = column("id");
    let field_cols = schema
        .input_fields
        .iter()
        .map(|f| {
            column(&f.key)
                .map(|c| (f.key.clone(), c))
                .ok_or_else(|| missing(&f.key))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for (i, row) in lines.enumerate() {
        let line = i + 2;
        if row.is_empty() {
            continue;
        }
        let cells: Vec<&str> = row.split('\t').collect();
        if cells.len() != header.len() {
            return Err(HarnessError::MalformedRecord {
                path: path.into(),
                line,
                reason: format!("expected {} columns, found {}", header.len(), cells.len()),
            });
        }
        let label = cells[label_col].to_string();
        if !schema.has_label(&label) {
            return Err(HarnessError::UnknownLabel {
                path: path.into(),
                line,
                value: label,
            });
        }
        out.push(LabeledExample {
            id: id_col.map_or_else(|| (out.len() + 1).to_string(), |c| cells[c].to_string()),
            values: field_cols
                .iter()
                .map(|(k, c)| (k.clone(), cells[*c].to_string()))
                .collect(),
            gold_label: label,
        });
    }
    Ok(out)
}

pub fn write_dataset(
    path: &Path,
    dataset: &Dataset,
    format: DataFormat,
    schema: &TaskSchema,
) -> Result<()> {
    let mut out = String::new();
    match format {
        DataFormat::Jsonl => {
            for e in &dataset.examples {
                let mut obj = Map::new();
                obj.insert("id".into(), Value::String(e.id.clone()));
                for field in &schema.input_fields {
                    let v = e.value(&field.key).unwrap_or_default();
                    obj.insert(field.key.clone(), Value::String(v.into()));
                }
                obj.insert("label".into(), Value::String(e.gold_label.clone()));
                out.push_str(&Value::Object(obj).to_string());
                out.push('\n');
            }
        }
        DataFormat::Tsv => {
            let mut header = vec!["id"];
            header.extend(schema.input_fields.iter().map(|f| f.key.as_str()));
            header.push("label");
            out.push_str(&header.join("\t"));
            out.push('\n');
            for e in &dataset.examples {
                let mut cells = vec![e.id.as_str()];
                cells.extend(
                    schema
                        .input_fields
                        .iter()
                        .map(|f| e.value(&f.key).unwrap_or_default()),
                );
                cells.push(&e.gold_label);
                if cells.iter().any(|c| c.contains(['\t', '\n', '\r'])) {
                    return Err(HarnessError::InvalidDataset(format!(
                        "example {:?} has a tab or newline, which tsv cannot hold",
                        e.id
                    )));
                }
                out.push_str(&cells.join("\t"));
                out.push('\n');
            }
        }
    }
    fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

#[derive(serde::Deserialize, serde::Serialize)]
struct PredictionLine {
    id: String,
    label: String,
    confidence: f64,
}

/// Reads a jsonl predictions file of `{"id", "label", "confidence"}` records.
pub fn load_predictions_file(path: &Path) -> Result<PredictionTable> {
    let text = read(path)?;
    let mut table = PredictionTable::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let rec: PredictionLine =
            serde_json::from_str(raw).map_err(|e| HarnessError::MalformedRecord {
                path: path.into(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        table.insert(
            rec.id,
            PluginPrediction {
                label: rec.label,
                confidence: rec.confidence,
            },
        )?;
    }
    Ok(table)
}

pub fn write_predictions_file(path: &Path, table: &PredictionTable) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    for (id, pred) in table.iter() {
        let line = serde_json::to_string(&PredictionLine {
            id: id.clone(),
            label: pred.label.clone(),
            confidence: pred.confidence,
        })
        .expect("prediction serializes");
        writeln!(file, "{line}").map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(())
}

/// Checks a loaded table against the task labels.
pub fn check_predictions(table: &PredictionTable, schema: &TaskSchema) -> Result<()> {
    Ok(table.check(schema)?)
}
