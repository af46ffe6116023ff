//! Intent classifiers: random forest over skeletal windows, a bidirectional
//! LSTM over feature sequences and a small 3D dense network over crop clips.

pub mod adam;
pub mod densenet;
pub mod forest;
pub mod rnn;
pub mod window;

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::formats::{data_lines, expect_columns, malformed, num, read};
use crate::ingest::IngestError;
use crate::types::{Intent, SequenceWindow};

pub use densenet::{DenseNet3d, DenseNetConfig};
pub use forest::{train_random_forest, ForestConfig, RandomForest};
pub use rnn::{train_bilstm, BiLstm, RnnConfig};
pub use window::{sliding_window_predict, track_windows, TrackHistory};

/// Lower clamp applied to probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

const MODEL_MAGIC: &[u8; 8] = b"FUSSIMDL";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set contains a single class")]
    SingleClassDataset,
    #[error("expected {expected} input values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model has not been trained")]
    UntrainedModel,
    #[error("track has no frames")]
    EmptyTrack,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Negative log likelihood `-sum ln p_i` of the true-label probabilities.
pub fn nll_loss(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| p.max(PROB_FLOOR).ln()).sum::<f64>()
}

/// Relative error used by the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Most probable label. A tie at 0.5 resolves to not crossing.
pub fn decide(p_cross: f64) -> Intent {
    Intent::from_bool(p_cross > 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub frame: u32,
    pub track_id: u32,
    pub p_cross: f64,
    pub label: Intent,
}

impl Prediction {
    pub fn new(frame: u32, track_id: u32, p_cross: f64) -> Self {
        Prediction {
            frame,
            track_id,
            p_cross,
            label: decide(p_cross),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Rf,
    Rnn,
    Densenet,
}

impl ClassifierKind {
    /// Window length each classifier is trained and evaluated on.
    pub fn default_window(self) -> usize {
        match self {
            ClassifierKind::Rf | ClassifierKind::Rnn => 14,
            ClassifierKind::Densenet => 16,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Rf => "rf",
            ClassifierKind::Rnn => "rnn",
            ClassifierKind::Densenet => "densenet",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rf" => Ok(ClassifierKind::Rf),
            "rnn" => Ok(ClassifierKind::Rnn),
            "densenet" => Ok(ClassifierKind::Densenet),
            other => Err(format!("unknown classifier {other:?} (expected rf, rnn or densenet)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Optimizer steps for the gradient-trained models.
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Draw mini-batches with equal class counts.
    pub class_balance: bool,
    pub forest: ForestConfig,
    pub rnn: RnnConfig,
    pub densenet: DenseNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            steps: 200,
            learning_rate: 1e-3,
            batch_size: 16,
            class_balance: true,
            forest: ForestConfig::default(),
            rnn: RnnConfig::default(),
            densenet: DenseNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        self.forest.validate()?;
        self.rnn.validate()?;
        self.densenet.validate()
    }
}

/// Any trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IntentModel {
    Forest(RandomForest),
    Rnn(BiLstm),
    DenseNet(DenseNet3d),
}

impl IntentModel {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            IntentModel::Forest(_) => ClassifierKind::Rf,
            IntentModel::Rnn(_) => ClassifierKind::Rnn,
            IntentModel::DenseNet(_) => ClassifierKind::Densenet,
        }
    }

    pub fn window_len(&self) -> usize {
        match self {
            IntentModel::Forest(m) => m.window_len(),
            IntentModel::Rnn(_) => self.kind().default_window(),
            IntentModel::DenseNet(m) => m.config().clip_len,
        }
    }

    /// Crossing probability of each window.
    pub fn predict_windows(&self, windows: &[SequenceWindow]) -> Result<Vec<f64>, ClassifierError> {
        match self {
            IntentModel::Forest(m) => windows
                .iter()
                .map(|w| m.predict_proba(&window::flat_features(w)))
                .collect(),
            IntentModel::Rnn(m) => windows
                .iter()
                .map(|w| m.predict_proba(&window::feature_sequence(w)))
                .collect(),
            IntentModel::DenseNet(m) => m.predict_windows(windows),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ClassifierError> {
        let mut out = MODEL_MAGIC.to_vec();
        out.extend(MODEL_VERSION.to_le_bytes());
        bincode::serialize_into(&mut out, self).map_err(|e| ClassifierError::ModelFormat(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClassifierError> {
        if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
            return Err(ClassifierError::ModelFormat("not a model file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(ClassifierError::ModelFormat(format!("unsupported version {version}")));
        }
        bincode::deserialize(&bytes[12..]).map_err(|e| ClassifierError::ModelFormat(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let io = |source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()?).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let io = |source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        IntentModel::from_bytes(&bytes)
    }
}

/// predictions.csv: `frame,track_id,p_cross,label` with label 1 for
/// crossing.
pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut s = String::from("frame,track_id,p_cross,label\n");
    for p in preds {
        let _ = writeln!(s, "{},{},{},{}", p.frame, p.track_id, p.p_cross, p.label.is_crossing() as u8);
    }
    s
}

/// Parses predictions.csv. The label column must agree with `p_cross`.
pub fn parse_predictions_str(text: &str) -> Result<Vec<Prediction>, IngestError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        expect_columns(line, &f, 4)?;
        let frame = num::<u32>(line, f[0], "frame")?;
        let track_id = num::<u32>(line, f[1], "track_id")?;
        let p = num::<f64>(line, f[2], "p_cross")?;
        if !(0.0..=1.0).contains(&p) {
            return Err(malformed(line, format!("p_cross {p} outside [0, 1]")));
        }
        let pred = Prediction::new(frame, track_id, p);
        let label = num::<u8>(line, f[3], "label")?;
        if label > 1 || (label == 1) != pred.label.is_crossing() {
            return Err(malformed(line, format!("label {label} disagrees with p_cross {p}")));
        }
        out.push(pred);
    }
    Ok(out)
}

pub fn parse_predictions(path: &Path) -> Result<Vec<Prediction>, IngestError> {
    parse_predictions_str(&read(path)?)
}

/// Labelled prediction for one window.
pub fn predict_intent(model: &IntentModel, w: &SequenceWindow) -> Result<Prediction, ClassifierError> {
    if let IntentModel::DenseNet(m) = model {
        if !m.is_trained() {
            return Err(ClassifierError::UntrainedModel);
        }
    }
    let p = model.predict_windows(std::slice::from_ref(w))?[0];
    Ok(Prediction::new(w.end_frame(), w.track_id, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loss_examples() {
        assert_eq!(nll_loss(&[1.0, 1.0]), 0.0);
        assert!((nll_loss(&[0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((nll_loss(&[0.9, 0.8]) - 0.328_504_066_972_034_6).abs() < 1e-12);
        assert!((nll_loss(&[0.0]) - 27.631_021_115_928_547).abs() < 1e-9);
    }

    #[test]
    fn tie_is_not_crossing() {
        assert_eq!(decide(0.7), Intent::Crossing);
        assert_eq!(decide(0.5), Intent::NotCrossing);
        assert_eq!(Prediction::new(3, 1, 0.2).label, Intent::NotCrossing);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("rf".parse::<ClassifierKind>().unwrap(), ClassifierKind::Rf);
        assert!("svm".parse::<ClassifierKind>().is_err());
        assert_eq!(ClassifierKind::Densenet.default_window(), 16);
    }

    #[test]
    fn bad_model_bytes_rejected() {
        assert!(IntentModel::from_bytes(b"garbage").is_err());
        let mut b = MODEL_MAGIC.to_vec();
        b.extend(7u32.to_le_bytes());
        assert!(matches!(IntentModel::from_bytes(&b), Err(ClassifierError::ModelFormat(_))));
    }

    #[test]
    fn predictions_csv_round_trip() {
        let preds = vec![Prediction::new(3, 1, 0.25), Prediction::new(4, 2, 0.875)];
        let text = format_predictions(&preds);
        assert_eq!(text, "frame,track_id,p_cross,label\n3,1,0.25,0\n4,2,0.875,1\n");
        assert_eq!(parse_predictions_str(&text).unwrap(), preds);
        assert!(parse_predictions_str("3,1,0.9,0\n").is_err());
        assert!(parse_predictions_str("3,1,1.5,1\n").is_err());
    }

    proptest! {
        #[test]
        fn label_is_argmax(p in 0.0..=1.0f64) {
            let pred = Prediction::new(0, 0, p);
            prop_assert_eq!(pred.label.is_crossing(), p > 1.0 - p);
        }

        #[test]
        fn loss_nonnegative(ps in prop::collection::vec(0.0..=1.0f64, 0..20)) {
            prop_assert!(nll_loss(&ps) >= 0.0);
        }
    }
}
