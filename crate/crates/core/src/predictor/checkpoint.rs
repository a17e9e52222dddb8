use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, FrequencyModel, PredictError, Prediction, RecurrentModel};
use crate::event::{Event, EventCatalog, EventTrace};

pub const CHECKPOINT_FORMAT: &str = "efp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Either classifier implementation, dispatched by variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyClassifier {
    Frequency(FrequencyModel),
    Recurrent(RecurrentModel),
}

impl AnyClassifier {
    pub fn catalog(&self) -> &EventCatalog {
        match self {
            AnyClassifier::Frequency(m) => m.catalog(),
            AnyClassifier::Recurrent(m) => m.catalog(),
        }
    }
}

impl Classifier for AnyClassifier {
    fn predict(&self, history: &[Event]) -> Result<Prediction, PredictError> {
        match self {
            AnyClassifier::Frequency(m) => m.predict(history),
            AnyClassifier::Recurrent(m) => m.predict(history),
        }
    }

    fn train_online(&mut self, trace: &EventTrace) -> Result<(), PredictError> {
        match self {
            AnyClassifier::Frequency(m) => m.train_online(trace),
            AnyClassifier::Recurrent(m) => m.train_online(trace),
        }
    }
}

/// Self-describing JSON checkpoint. The header carries the catalog
/// fingerprint so that a model is never paired with a different catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub catalog_fingerprint: String,
    pub classifier: AnyClassifier,
}

impl Checkpoint {
    pub fn new(classifier: AnyClassifier) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            catalog_fingerprint: classifier.catalog().fingerprint(),
            classifier,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    /// Parses a checkpoint and validates its header. When `catalog` is given,
    /// it must match the one the classifier was trained with.
    pub fn from_json(text: &str, catalog: Option<&EventCatalog>) -> Result<Self, PredictError> {
        let mut cp: Checkpoint = serde_json::from_str(text).map_err(|e| PredictError::Checkpoint(e.to_string()))?;
        if cp.format != CHECKPOINT_FORMAT {
            return Err(PredictError::Checkpoint(format!("not a checkpoint (format {:?})", cp.format)));
        }
        if cp.version != CHECKPOINT_VERSION {
            return Err(PredictError::Checkpoint(format!("unsupported version {}", cp.version)));
        }
        if cp.catalog_fingerprint != cp.classifier.catalog().fingerprint() {
            return Err(PredictError::Checkpoint("catalog fingerprint does not match the embedded catalog".into()));
        }
        if let Some(catalog) = catalog {
            if catalog.fingerprint() != cp.catalog_fingerprint {
                return Err(PredictError::DimensionMismatch);
            }
        }
        if let AnyClassifier::Frequency(m) = &mut cp.classifier {
            m.rebuild_index();
        }
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictError> {
        std::fs::write(path, self.to_json()).map_err(|e| PredictError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path, catalog: Option<&EventCatalog>) -> Result<Self, PredictError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PredictError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, catalog)
    }
}
