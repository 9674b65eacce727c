use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{GraceError, Result};
use crate::gcn::train::{TrainConfig, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON snapshot of a model, its optimizer position, and the
/// configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub version: u32,
    /// `"grace"` or `"baseline"`.
    pub kind: String,
    pub model: M,
    pub state: TrainState,
    pub train: TrainConfig,
    pub config_fingerprint: String,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| GraceError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GraceError::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(GraceError::InvalidArgument(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::{Ablation, GraceModel, Hyper};

    fn checkpoint(ablation: Ablation) -> Checkpoint<GraceModel> {
        let model = GraceModel::init(8, Hyper::default().with_ablation(ablation), 3).unwrap();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: "grace".into(),
            state: TrainState::fresh(&model),
            model,
            train: TrainConfig::default(),
            config_fingerprint: "0123456789abcdef".into(),
        }
    }

    #[test]
    fn round_trips_with_ablation_flags() {
        let dir = tempfile::tempdir().unwrap();
        for ablation in Ablation::ALL {
            let path = dir.path().join(format!("{}.json", ablation.name()));
            let ck = checkpoint(ablation);
            ck.write(&path).unwrap();
            let back: Checkpoint<GraceModel> = Checkpoint::read(&path).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.model.hyper.ablation(), ablation);
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = checkpoint(Ablation::Full);
        ck.version = 99;
        ck.write(&path).unwrap();
        assert!(Checkpoint::<GraceModel>::read(&path).is_err());
        assert!(Checkpoint::<GraceModel>::read(&dir.path().join("missing.json")).is_err());
    }
}
