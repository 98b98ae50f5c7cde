use crate::checkpoint::{PredictorCheckpoint, PredictorKind, CHECKPOINT_VERSION};
use crate::csi::{ComplexCsi, Identity};
use crate::error::Result;
use crate::fingerprint::NormMode;
use crate::train::Precision;

use super::{history_window, Predictor};

/// Jack's fingerprint used as-is as the reference for Alice.
pub fn direct_reference(x_j: &ComplexCsi) -> ComplexCsi {
    x_j.clone().relabel(Identity::Reference)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DirectPredictor;

impl DirectPredictor {
    pub fn from_checkpoint(ckpt: &PredictorCheckpoint) -> Result<Self> {
        ckpt.expect_kind(&[PredictorKind::Direct])?;
        Ok(Self)
    }
}

impl Predictor for DirectPredictor {
    fn kind(&self) -> PredictorKind {
        PredictorKind::Direct
    }

    fn predict_batch(&self, histories: &[&[ComplexCsi]]) -> Result<Vec<ComplexCsi>> {
        histories
            .iter()
            .map(|h| Ok(direct_reference(&history_window(h, 1)?[0])))
            .collect()
    }

    fn checkpoint(&self) -> Result<PredictorCheckpoint> {
        Ok(PredictorCheckpoint {
            version: CHECKPOINT_VERSION,
            kind: PredictorKind::Direct,
            spec: serde_json::json!({}),
            schedule: None,
            norm_mode: NormMode::PerSample,
            seed: 0,
            precision: Precision::F64,
            training_log: Vec::new(),
            weights: Vec::new(),
        })
    }
}
