//! The common predictor contract and the comparison schemes.
//!
//! Every scheme maps Jack's observed fingerprints to a prediction of Alice's
//! current fingerprint. Schemes that look at more than the current sample
//! declare it through [`Predictor::context_len`].

mod direct;
mod recurrent;
mod vae;

pub use direct::{direct_reference, DirectPredictor};
pub use recurrent::{train_recurrent, RecurrentPredictor, RecurrentSpec};
pub use vae::{kl_divergence, train_vae, VaePredictor, VaeSpec};

use candle_core::Device;

use crate::checkpoint::{PredictorCheckpoint, PredictorKind};
use crate::csi::ComplexCsi;
use crate::diffusion::GdmPredictor;
use crate::error::{PlaError, Result};

pub trait Predictor: Send + Sync {
    fn kind(&self) -> PredictorKind;

    /// Number of consecutive Jack observations consumed, ending with the
    /// current one.
    fn context_len(&self) -> usize {
        1
    }

    /// Predict for several histories at once. Each history is ordered by
    /// time and ends with the current Jack observation.
    fn predict_batch(&self, histories: &[&[ComplexCsi]]) -> Result<Vec<ComplexCsi>>;

    fn predict(&self, history: &[ComplexCsi]) -> Result<ComplexCsi> {
        Ok(self.predict_batch(&[history])?.remove(0))
    }

    fn checkpoint(&self) -> Result<PredictorCheckpoint>;
}

/// The last `w` entries of `history`, or an error if there are fewer.
pub fn history_window(history: &[ComplexCsi], w: usize) -> Result<&[ComplexCsi]> {
    if history.len() < w || w == 0 {
        return Err(PlaError::argument(
            "history",
            format!("need {w} consecutive observations, got {}", history.len()),
        ));
    }
    Ok(&history[history.len() - w..])
}

/// Rebuild any predictor from its checkpoint.
pub fn load_predictor(ckpt: &PredictorCheckpoint, device: &Device) -> Result<Box<dyn Predictor>> {
    Ok(match ckpt.kind {
        PredictorKind::Gdm => Box::new(GdmPredictor::from_checkpoint(ckpt, device)?),
        PredictorKind::Vae => Box::new(VaePredictor::from_checkpoint(ckpt, device)?),
        PredictorKind::Lstm | PredictorKind::Gru => {
            Box::new(RecurrentPredictor::from_checkpoint(ckpt, device)?)
        }
        PredictorKind::Direct => Box::new(DirectPredictor::from_checkpoint(ckpt)?),
    })
}

/// Shape check shared by the learned predictors.
pub(crate) fn check_shape(x: &ComplexCsi, n_antennas: usize, n_subcarriers: usize) -> Result<()> {
    if x.shape() != (n_antennas, n_subcarriers) {
        return Err(PlaError::shape(
            format!("{n_antennas}x{n_subcarriers} fingerprint"),
            format!("{}x{}", x.n_antennas(), x.n_subcarriers()),
        ));
    }
    Ok(())
}
