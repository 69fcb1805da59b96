mod common;

use std::fs;

use common::{mrpc_schema, Fixture};
use proptest::prelude::*;
use supericl::core::{Dataset, LabeledExample, PluginError, PluginPrediction};
use supericl::data::{
    load_dataset, load_predictions_file, load_schema, write_dataset, write_predictions_file,
    DataFormat,
};
use supericl::HarnessError;

#[test]
fn jsonl_and_tsv_describe_the_same_split() {
    let fx = Fixture::new(12, 5);
    let schema = mrpc_schema();
    write_dataset(&fx.path("train.tsv"), &fx.train, DataFormat::Tsv, &schema).unwrap();
    let a = load_dataset(&fx.path("train.jsonl"), DataFormat::Jsonl, &schema).unwrap();
    let b = load_dataset(&fx.path("train.tsv"), DataFormat::Tsv, &schema).unwrap();
    assert_eq!(a.examples, b.examples);
    assert_eq!(a.examples, fx.train.examples);
    assert_eq!(a.split, "train");
    assert_eq!(load_schema(&fx.path("schema.toml")).unwrap(), schema);
}

#[test]
fn glue_tsv_without_id_column_is_numbered_from_one() {
    let fx = Fixture::new(1, 1);
    let p = fx.path("dev.tsv");
    fs::write(
        &p,
        "sentence1\tsentence2\tlabel\nA man plays.\tA man performs.\tequivalent\nIt rained.\tIt was sunny.\tnot_equivalent\n",
    )
    .unwrap();
    let ds = load_dataset(&p, DataFormat::from_path(&p), &mrpc_schema()).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.examples[0].id, "1");
    assert_eq!(ds.examples[1].id, "2");
    assert_eq!(ds.examples[1].value("sentence2"), Some("It was sunny."));
}

#[test]
fn unknown_label_reports_file_and_line() {
    let fx = Fixture::new(1, 1);
    let p = fx.path("bad.jsonl");
    fs::write(
        &p,
        "{\"id\":\"a\",\"sentence1\":\"x\",\"sentence2\":\"y\",\"label\":\"equivalent\"}\n\
         {\"id\":\"b\",\"sentence1\":\"x\",\"sentence2\":\"y\",\"label\":\"paraphrase\"}\n",
    )
    .unwrap();
    let err = load_dataset(&p, DataFormat::Jsonl, &mrpc_schema()).unwrap_err();
    match &err {
        HarnessError::UnknownLabel { line, value, .. } => {
            assert_eq!(*line, 2);
            assert_eq!(value, "paraphrase");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_and_incomplete_rows_are_rejected() {
    let fx = Fixture::new(1, 1);
    let schema = mrpc_schema();
    let p = fx.path("broken.jsonl");
    fs::write(&p, "{\"id\":\"a\",\"sentence1\":\"x\"\n").unwrap();
    assert!(matches!(
        load_dataset(&p, DataFormat::Jsonl, &schema),
        Err(HarnessError::MalformedRecord { line: 1, .. })
    ));
    fs::write(
        &p,
        "{\"id\":\"a\",\"sentence1\":\"x\",\"label\":\"equivalent\"}\n",
    )
    .unwrap();
    assert!(matches!(
        load_dataset(&p, DataFormat::Jsonl, &schema),
        Err(HarnessError::MissingField { .. })
    ));
    let t = fx.path("short.tsv");
    fs::write(&t, "sentence1\tsentence2\tlabel\nonly one\tequivalent\n").unwrap();
    assert!(matches!(
        load_dataset(&t, DataFormat::Tsv, &schema),
        Err(HarnessError::MalformedRecord { line: 2, .. })
    ));
    let d = fx.path("dup.jsonl");
    fs::write(
        &d,
        "{\"id\":\"a\",\"sentence1\":\"x\",\"sentence2\":\"y\",\"label\":\"equivalent\"}\n\
         {\"id\":\"a\",\"sentence1\":\"x\",\"sentence2\":\"y\",\"label\":\"equivalent\"}\n",
    )
    .unwrap();
    assert!(matches!(
        load_dataset(&d, DataFormat::Jsonl, &schema),
        Err(HarnessError::InvalidDataset(_))
    ));
}

#[test]
fn predictions_file_cases() {
    let fx = Fixture::new(1, 1);
    let p = fx.path("preds.jsonl");

    fs::write(&p, "").unwrap();
    assert_eq!(load_predictions_file(&p).unwrap().len(), 0);

    fs::write(
        &p,
        "{\"id\":\"a\",\"label\":\"equivalent\",\"confidence\":1.3}\n",
    )
    .unwrap();
    assert!(matches!(
        load_predictions_file(&p),
        Err(HarnessError::Plugin(PluginError::ConfidenceOutOfRange(c))) if c == 1.3
    ));

    fs::write(
        &p,
        "{\"id\":\"a\",\"label\":\"equivalent\",\"confidence\":0.51}\n\
         {\"id\":\"b\",\"label\":\"not_equivalent\",\"confidence\":0.98}\n\
         {\"id\":\"c\",\"label\":\"equivalent\",\"confidence\":0.82}\n",
    )
    .unwrap();
    let table = load_predictions_file(&p).unwrap();
    assert_eq!(table.len(), 3);
    assert_eq!(
        table.get("b"),
        Some(&PluginPrediction {
            label: "not_equivalent".into(),
            confidence: 0.98
        })
    );

    fs::write(
        &p,
        "{\"id\":\"a\",\"label\":\"equivalent\",\"confidence\":0.5}\n{\"id\":\"a\",\"label\":\"equivalent\",\"confidence\":0.6}\n",
    )
    .unwrap();
    assert!(matches!(
        load_predictions_file(&p),
        Err(HarnessError::Plugin(PluginError::DuplicateId(_)))
    ));
}

#[test]
fn predictions_round_trip() {
    let fx = Fixture::new(6, 9);
    let table = fx.write_predictions(0.8, supericl::core::ConfidenceProfile::NoisyCalibrated, 3);
    let again = load_predictions_file(&fx.path("dev_preds.jsonl")).unwrap();
    assert_eq!(again, table);
    write_predictions_file(&fx.path("copy.jsonl"), &again).unwrap();
    assert_eq!(
        fs::read(fx.path("copy.jsonl")).unwrap(),
        fs::read(fx.path("dev_preds.jsonl")).unwrap()
    );
}

fn cell() -> impl Strategy<Value = String> {
    // Tabs and newlines are excluded: tsv has no quoting.
    "[a-zA-Z0-9 .,'\"!?ก-ฮ一-龥é]{0,24}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_load_is_identity(rows in prop::collection::vec((cell(), cell(), any::<bool>()), 1..12), tsv in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let schema = mrpc_schema();
        let ds = Dataset {
            schema_id: "mrpc".into(),
            split: "sample".into(),
            examples: rows
                .iter()
                .enumerate()
                .map(|(i, (a, b, pos))| {
                    LabeledExample::new(
                        format!("r{i}"),
                        [("sentence1", a.as_str()), ("sentence2", b.as_str())],
                        if *pos { "equivalent" } else { "not_equivalent" },
                    )
                })
                .collect(),
        };
        let (fmt, name) = if tsv { (DataFormat::Tsv, "sample.tsv") } else { (DataFormat::Jsonl, "sample.jsonl") };
        let path = dir.path().join(name);
        write_dataset(&path, &ds, fmt, &schema).unwrap();
        let back = load_dataset(&path, fmt, &schema).unwrap();
        prop_assert_eq!(back, ds);
    }
}
