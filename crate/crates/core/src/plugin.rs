//! The small task-specific classifier that SuperICL plugs into the prompt.
//!
//! A plug-in is anything that maps an example to a predicted label and a
//! confidence. Confidence is the classifier's probability for its predicted
//! class (maximum class probability), so adapters must report values in
//! `[0, 1]` and labels from the task's closed label set.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sampling::SeededRng;
use crate::schema::{LabeledExample, TaskSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginPrediction {
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PluginError {
    #[error("no plug-in prediction for example {0:?}")]
    MissingPrediction(String),
    #[error("duplicate prediction for example {0:?}")]
    DuplicateId(String),
    #[error("plug-in label {0:?} is not in the task label set")]
    UnknownLabel(String),
    #[error("plug-in confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("plug-in transport error: {0}")]
    Transport(String),
    #[error("bad plug-in response: {0}")]
    BadResponse(String),
}

impl PluginPrediction {
    /// Checks the label against `schema` and the confidence range.
    pub fn new(
        label: impl Into<String>,
        confidence: f64,
        schema: &TaskSchema,
    ) -> Result<Self, PluginError> {
        let pred = Self {
            label: label.into(),
            confidence,
        };
        pred.check(schema)?;
        Ok(pred)
    }

    pub fn check(&self, schema: &TaskSchema) -> Result<(), PluginError> {
        // NaN fails the range test as well.
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(PluginError::ConfidenceOutOfRange(self.confidence));
        }
        if !schema.has_label(&self.label) {
            return Err(PluginError::UnknownLabel(self.label.clone()));
        }
        Ok(())
    }
}

/// Source of plug-in predictions.
pub trait Plugin {
    fn predict(&self, example: &LabeledExample) -> Result<PluginPrediction, PluginError>;
}

impl<P: Plugin + ?Sized> Plugin for &P {
    fn predict(&self, example: &LabeledExample) -> Result<PluginPrediction, PluginError> {
        (**self).predict(example)
    }
}

/// Precomputed predictions keyed by example id, e.g. loaded from a predictions file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    map: BTreeMap<String, PluginPrediction>,
}

impl PredictionTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a prediction; a second entry for the same id is an error.
    pub fn insert(&mut self, id: String, pred: PluginPrediction) -> Result<(), PluginError> {
        if !(0.0..=1.0).contains(&pred.confidence) {
            return Err(PluginError::ConfidenceOutOfRange(pred.confidence));
        }
        if self.map.contains_key(&id) {
            return Err(PluginError::DuplicateId(id));
        }
        self.map.insert(id, pred);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&PluginPrediction> {
        self.map.get(id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &PluginPrediction)> {
        self.map.iter()
    }

    /// Checks every stored label against the schema.
    pub fn check(&self, schema: &TaskSchema) -> Result<(), PluginError> {
        self.map.values().try_for_each(|p| p.check(schema))
    }
}

impl Plugin for PredictionTable {
    fn predict(&self, example: &LabeledExample) -> Result<PluginPrediction, PluginError> {
        self.map
            .get(&example.id)
            .cloned()
            .ok_or_else(|| PluginError::MissingPrediction(example.id.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceProfile {
    /// Every prediction carries confidence 0.99.
    ConstantHigh,
    /// Correct predictions draw from `[0.7, 1.0]`, wrong ones from `[1/L, 0.75]`.
    NoisyCalibrated,
}

/// Synthetic classifier with a target accuracy, deterministic per (example id, seed).
///
/// When a prediction is wrong the label is drawn uniformly from the non-gold labels.
#[derive(Debug, Clone)]
pub struct CalibratedMock {
    labels: Vec<String>,
    gold: BTreeMap<String, String>,
    target_accuracy: f64,
    profile: ConfidenceProfile,
    seed: u64,
}

impl CalibratedMock {
    pub fn new(
        schema: &TaskSchema,
        gold: BTreeMap<String, String>,
        target_accuracy: f64,
        profile: ConfidenceProfile,
        seed: u64,
    ) -> Self {
        assert!(
            (0.0..=1.0).contains(&target_accuracy),
            "target accuracy must lie in [0, 1]"
        );
        Self {
            labels: schema.labels.clone(),
            gold,
            target_accuracy,
            profile,
            seed,
        }
    }

    /// Uses each example's own gold label as the assignment.
    pub fn from_examples<'a>(
        schema: &TaskSchema,
        examples: impl IntoIterator<Item = &'a LabeledExample>,
        target_accuracy: f64,
        profile: ConfidenceProfile,
        seed: u64,
    ) -> Self {
        let gold = examples
            .into_iter()
            .map(|e| (e.id.clone(), e.gold_label.clone()))
            .collect();
        Self::new(schema, gold, target_accuracy, profile, seed)
    }

    fn rng_for(&self, id: &str) -> SeededRng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(id.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        SeededRng::from_bytes(seed)
    }

    fn predict_id(&self, id: &str) -> Result<PluginPrediction, PluginError> {
        let gold = self
            .gold
            .get(id)
            .ok_or_else(|| PluginError::MissingPrediction(id.into()))?;
        let mut rng = self.rng_for(id);
        let correct = rng.unit() < self.target_accuracy;
        let others: Vec<&String> = self.labels.iter().filter(|l| *l != gold).collect();
        let label = if correct || others.is_empty() {
            gold.clone()
        } else {
            others[rng.below(others.len() as u64) as usize].clone()
        };
        let correct = &label == gold;
        let confidence = match self.profile {
            ConfidenceProfile::ConstantHigh => 0.99,
            ConfidenceProfile::NoisyCalibrated => {
                let u = rng.unit();
                if correct {
                    0.7 + 0.3 * u
                } else {
                    let floor = 1.0 / self.labels.len() as f64;
                    floor + (0.75 - floor).max(0.0) * u
                }
            }
        };
        Ok(PluginPrediction { label, confidence })
    }
}

impl Plugin for CalibratedMock {
    fn predict(&self, example: &LabeledExample) -> Result<PluginPrediction, PluginError> {
        self.predict_id(&example.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::{dataset, example, mrpc};
    use crate::schema::{InputField, Metric};
    use alloc::vec;

    #[test]
    fn prediction_validation() {
        let s = mrpc();
        assert!(PluginPrediction::new("equivalent", 0.51, &s).is_ok());
        assert_eq!(
            PluginPrediction::new("equivalent", 1.3, &s),
            Err(PluginError::ConfidenceOutOfRange(1.3))
        );
        assert!(matches!(
            PluginPrediction::new("equivalent", f64::NAN, &s),
            Err(PluginError::ConfidenceOutOfRange(_))
        ));
        assert_eq!(
            PluginPrediction::new("maybe", 0.5, &s),
            Err(PluginError::UnknownLabel("maybe".into()))
        );
    }

    #[test]
    fn table_lookup_and_duplicates() {
        let mut t = PredictionTable::new();
        let p = PluginPrediction {
            label: "not_equivalent".into(),
            confidence: 0.98,
        };
        t.insert("7".into(), p.clone()).unwrap();
        assert_eq!(
            t.insert("7".into(), p.clone()),
            Err(PluginError::DuplicateId("7".into()))
        );
        assert_eq!(t.predict(&example("7", "a", "b", "equivalent")).unwrap(), p);
        assert_eq!(
            t.predict(&example("8", "a", "b", "equivalent")),
            Err(PluginError::MissingPrediction("8".into()))
        );
    }

    #[test]
    fn perfect_mock_is_gold_with_high_confidence() {
        let ds = dataset(200);
        let m = CalibratedMock::from_examples(
            &mrpc(),
            &ds.examples,
            1.0,
            ConfidenceProfile::ConstantHigh,
            3,
        );
        for e in &ds.examples {
            let p = m.predict(e).unwrap();
            assert_eq!(p.label, e.gold_label);
            assert_eq!(p.confidence, 0.99);
        }
    }

    #[test]
    fn zero_accuracy_binary_mock_always_flips() {
        let ds = dataset(200);
        let m = CalibratedMock::from_examples(
            &mrpc(),
            &ds.examples,
            0.0,
            ConfidenceProfile::ConstantHigh,
            3,
        );
        for e in &ds.examples {
            assert_ne!(m.predict(e).unwrap().label, e.gold_label);
        }
    }

    #[test]
    fn empirical_accuracy_tracks_target() {
        let ds = dataset(1000);
        let m = CalibratedMock::from_examples(
            &mrpc(),
            &ds.examples,
            0.8,
            ConfidenceProfile::NoisyCalibrated,
            11,
        );
        let hits = ds
            .examples
            .iter()
            .filter(|e| m.predict(e).unwrap().label == e.gold_label)
            .count();
        let acc = hits as f64 / 1000.0;
        assert!((acc - 0.8).abs() <= 0.03, "accuracy {acc}");
    }

    #[test]
    fn noisy_profile_is_calibrated_on_average() {
        let ds = dataset(1000);
        let schema = mrpc();
        let m = CalibratedMock::from_examples(
            &schema,
            &ds.examples,
            0.8,
            ConfidenceProfile::NoisyCalibrated,
            5,
        );
        let (mut right, mut nr, mut wrong, mut nw) = (0.0, 0.0, 0.0, 0.0);
        for e in &ds.examples {
            let p = m.predict(e).unwrap();
            p.check(&schema).unwrap();
            if p.label == e.gold_label {
                right += p.confidence;
                nr += 1.0;
            } else {
                wrong += p.confidence;
                nw += 1.0;
            }
        }
        assert!(nr > 0.0 && nw > 0.0);
        assert!(right / nr > wrong / nw);
    }

    #[test]
    fn mock_is_deterministic_and_uses_non_gold_labels() {
        let schema = TaskSchema::new(
            "mnli",
            vec![
                InputField::new("p", "Premise"),
                InputField::new("h", "Hypothesis"),
            ],
            vec![
                "entailment".into(),
                "neutral".into(),
                "contradiction".into(),
            ],
            Metric::Accuracy,
        )
        .unwrap();
        let ex: Vec<LabeledExample> = (0..300)
            .map(|i| {
                LabeledExample::new(alloc::format!("{i}"), [("p", "x"), ("h", "y")], "neutral")
            })
            .collect();
        let m =
            CalibratedMock::from_examples(&schema, &ex, 0.0, ConfidenceProfile::NoisyCalibrated, 9);
        let mut seen = BTreeMap::new();
        for e in &ex {
            let p = m.predict(e).unwrap();
            assert_eq!(p, m.predict(e).unwrap());
            assert_ne!(p.label, "neutral");
            *seen.entry(p.label).or_insert(0) += 1;
        }
        assert_eq!(seen.len(), 2);
    }
}
