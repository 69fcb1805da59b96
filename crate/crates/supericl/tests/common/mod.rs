//! Fixture generator shared by the integration tests: writes a small
//! MRPC-like task (schema, train and dev splits, optional predictions files)
//! into a temporary directory and builds configs that point at it.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use supericl::config::ExperimentConfig;
use supericl::core::plugin::PredictionTable;
use supericl::core::{
    CalibratedMock, ConfidenceProfile, Dataset, InputField, LabeledExample, Metric, Plugin,
    TaskSchema,
};
use supericl::data::{write_dataset, write_predictions_file, DataFormat};
use tempfile::TempDir;

pub const LABELS: [&str; 2] = ["equivalent", "not_equivalent"];

pub fn mrpc_schema() -> TaskSchema {
    TaskSchema::new(
        "mrpc",
        vec![
            InputField::new("sentence1", "Sentence 1"),
            InputField::new("sentence2", "Sentence 2"),
        ],
        LABELS.iter().map(|l| l.to_string()).collect(),
        Metric::Accuracy,
    )
    .unwrap()
}

const SUBJECTS: [&str; 6] = [
    "The senator",
    "A spokesman",
    "The company",
    "Police",
    "Researchers",
    "The court",
];
const VERBS: [&str; 5] = ["said", "announced", "denied", "confirmed", "reported"];
const OBJECTS: [&str; 7] = [
    "the deal would close on Friday",
    "profits rose 12 percent",
    "no charges were filed",
    "the vaccine trial ended early",
    "shares fell in early trading",
    "the ruling would be appealed",
    "the plant will shut down",
];

pub fn examples(prefix: &str, n: usize, salt: usize) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            let j = i * 7 + salt;
            let s1 = format!("{} {} {}.", SUBJECTS[j % 6], VERBS[j % 5], OBJECTS[j % 7]);
            let s2 = format!(
                "{} {} that {} ({prefix}{i}).",
                SUBJECTS[(j + 1) % 6],
                VERBS[(j + 2) % 5],
                OBJECTS[(j + 3) % 7]
            );
            let gold = if (j * 31 + 7) % 5 < 2 {
                LABELS[1]
            } else {
                LABELS[0]
            };
            LabeledExample::new(
                format!("{prefix}{i}"),
                [("sentence1", s1), ("sentence2", s2)],
                gold,
            )
        })
        .collect()
}

pub struct Fixture {
    pub dir: TempDir,
    pub schema: TaskSchema,
    pub train: Dataset,
    pub dev: Dataset,
}

impl Fixture {
    pub fn new(n_train: usize, n_dev: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let schema = mrpc_schema();
        let train = Dataset {
            schema_id: "mrpc".into(),
            split: "train".into(),
            examples: examples("tr", n_train, 0),
        };
        let dev = Dataset {
            schema_id: "mrpc".into(),
            split: "dev".into(),
            examples: examples("dv", n_dev, 3),
        };
        std::fs::write(
            dir.path().join("schema.toml"),
            toml::to_string(&schema).unwrap(),
        )
        .unwrap();
        write_dataset(
            &dir.path().join("train.jsonl"),
            &train,
            DataFormat::Jsonl,
            &schema,
        )
        .unwrap();
        write_dataset(
            &dir.path().join("dev.jsonl"),
            &dev,
            DataFormat::Jsonl,
            &schema,
        )
        .unwrap();
        Self {
            dir,
            schema,
            train,
            dev,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Writes predictions files for both splits from a calibrated mock.
    pub fn write_predictions(
        &self,
        target: f64,
        profile: ConfidenceProfile,
        seed: u64,
    ) -> PredictionTable {
        let dump = |ds: &Dataset, file: &str| {
            let gold: BTreeMap<String, String> = ds
                .examples
                .iter()
                .map(|e| (e.id.clone(), e.gold_label.clone()))
                .collect();
            let mock = CalibratedMock::new(&self.schema, gold, target, profile, seed);
            let mut table = PredictionTable::new();
            for e in &ds.examples {
                table
                    .insert(e.id.clone(), mock.predict(e).unwrap())
                    .unwrap();
            }
            write_predictions_file(&self.path(file), &table).unwrap();
            table
        };
        dump(&self.train, "train_preds.jsonl");
        dump(&self.dev, "dev_preds.jsonl")
    }

    /// Config TOML with a calibrated-mock plug-in, the given backend table and extra lines.
    pub fn toml(&self, backend: &str, extra: &str) -> String {
        format!(
            r#"schema = "schema.toml"
context_dataset = "train.jsonl"
eval_dataset = "dev.jsonl"
num_examples = 8
seed = 42
{extra}

[plugin.adapter]
kind = "calibrated_mock"
target_accuracy = 0.8
seed = 7

[backend]
{backend}
"#
        )
    }

    pub fn config(&self, backend: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&self.toml(backend, extra), self.dir.path()).unwrap()
    }

    pub fn write_config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }
}

pub const GOLD: &str = r#"kind = "gold""#;
pub const ECHO: &str = r#"kind = "echo_plugin""#;
pub const THRESHOLD: &str = "kind = \"threshold_override\"\nthreshold = 0.7";

/// A request seen by [`StubServer`].
#[derive(Debug, Clone)]
pub struct Captured {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Captured {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(&'static str, String)>,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            headers: Vec::new(),
            body: body.into(),
        }
    }
}

type Handler = dyn Fn(&Captured) -> Reply + Send + Sync;

/// Minimal HTTP/1.1 server on a loopback port; one thread per connection.
pub struct StubServer {
    pub url: String,
    pub seen: std::sync::Arc<std::sync::Mutex<Vec<Captured>>>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&Captured) -> Reply + Send + Sync + 'static) -> Self {
        use std::io::{BufRead, BufReader, Read, Write};
        use std::sync::{Arc, Mutex};

        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen: Arc<Mutex<Vec<Captured>>> = Arc::default();
        let handler: Arc<Handler> = Arc::new(handler);
        let log = seen.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let handler = handler.clone();
                let log = log.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                    let mut headers = Vec::new();
                    loop {
                        line.clear();
                        reader.read_line(&mut line).unwrap();
                        let l = line.trim_end();
                        if l.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = l.split_once(':') {
                            headers.push((k.trim().to_string(), v.trim().to_string()));
                        }
                    }
                    let len = headers
                        .iter()
                        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                        .and_then(|(_, v)| v.parse::<usize>().ok())
                        .unwrap_or(0);
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let req = Captured {
                        path,
                        headers,
                        body: String::from_utf8(body).unwrap(),
                    };
                    let reply = handler(&req);
                    log.lock().unwrap().push(req);
                    let mut head = format!(
                        "HTTP/1.1 {} Stub\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n",
                        reply.status,
                        reply.body.len()
                    );
                    for (k, v) in &reply.headers {
                        head.push_str(&format!("{k}: {v}\r\n"));
                    }
                    head.push_str("\r\n");
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(reply.body.as_bytes());
                });
            }
        });
        Self { url, seen }
    }

    pub fn requests(&self) -> Vec<Captured> {
        self.seen.lock().unwrap().clone()
    }
}
