//! Self-describing predictor checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::ScheduleConfig;
use crate::error::{PlaError, Result};
use crate::fingerprint::NormMode;
use crate::params::NamedTensor;
use crate::train::{LogEntry, Precision};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Gdm,
    Vae,
    Lstm,
    Gru,
    Direct,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 5] = [
        PredictorKind::Gdm,
        PredictorKind::Vae,
        PredictorKind::Lstm,
        PredictorKind::Gru,
        PredictorKind::Direct,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PredictorKind::Gdm => "gdm",
            PredictorKind::Vae => "vae",
            PredictorKind::Lstm => "lstm",
            PredictorKind::Gru => "gru",
            PredictorKind::Direct => "direct",
        }
    }

    pub fn is_learned(&self) -> bool {
        !matches!(self, PredictorKind::Direct)
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = PlaError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| PlaError::argument("scheme", format!("unknown scheme {s:?}; expected one of gdm, vae, lstm, gru, direct")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorCheckpoint {
    pub version: u32,
    pub kind: PredictorKind,
    /// Architecture descriptor; its schema depends on `kind`.
    pub spec: serde_json::Value,
    pub schedule: Option<ScheduleConfig>,
    pub norm_mode: NormMode,
    pub seed: u64,
    pub precision: Precision,
    pub training_log: Vec<LogEntry>,
    pub weights: Vec<NamedTensor>,
}

impl PredictorCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PlaError::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| PlaError::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(PlaError::Format {
                path: path.to_path_buf(),
                reason: format!("checkpoint version {} unsupported", ckpt.version),
            });
        }
        Ok(ckpt)
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn spec_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.spec.clone()).map_err(|e| {
            PlaError::Serde(format!("{} checkpoint spec: {e}", self.kind))
        })
    }

    pub fn expect_kind(&self, kinds: &[PredictorKind]) -> Result<()> {
        if kinds.contains(&self.kind) {
            Ok(())
        } else {
            Err(PlaError::argument(
                "kind",
                format!("checkpoint holds a {} model, expected {:?}", self.kind, kinds),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parsing() {
        for k in PredictorKind::ALL {
            assert_eq!(k.as_str().parse::<PredictorKind>().unwrap(), k);
        }
        assert_eq!("GDM".parse::<PredictorKind>().unwrap(), PredictorKind::Gdm);
        assert_eq!("rnn".parse::<PredictorKind>().unwrap_err().code(), "E_ARGUMENT");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = PredictorCheckpoint {
            version: CHECKPOINT_VERSION,
            kind: PredictorKind::Direct,
            spec: serde_json::json!({}),
            schedule: None,
            norm_mode: NormMode::PerSample,
            seed: 3,
            precision: Precision::F32,
            training_log: vec![LogEntry { epoch: 0, loss: 0.1 + 0.2 }],
            weights: vec![],
        };
        let p = dir.path().join("sub/c.json");
        ckpt.save(&p).unwrap();
        let back = PredictorCheckpoint::load(&p).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.content_hash().unwrap(), ckpt.content_hash().unwrap());
        assert_eq!(
            PredictorCheckpoint::load(&dir.path().join("nope.json")).unwrap_err().code(),
            "E_MISSING_FILE"
        );
    }
}
