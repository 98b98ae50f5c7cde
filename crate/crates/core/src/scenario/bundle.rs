use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::csi::ComplexCsi;
use crate::error::{PlaError, Result};

use super::container::ExternalMapping;
use super::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Jack and Alice fingerprints observed at the same time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub jack: ComplexCsi,
    pub alice: ComplexCsi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BundleSource {
    Synthetic(ScenarioConfig),
    External {
        path: String,
        mapping: ExternalMapping,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub pairs: Vec<Pair>,
    pub eve_samples: Vec<ComplexCsi>,
    pub split: Split,
    pub source: BundleSource,
}

impl DatasetBundle {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Fingerprint shape shared by every sample, if any.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.pairs.first().map(|p| p.jack.shape())
    }

    pub fn time_indices(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.jack.time_index).collect()
    }

    /// Checks alignment and shape homogeneity.
    pub fn validate(&self) -> Result<()> {
        let Some(shape) = self.shape() else {
            return Ok(());
        };
        let mut seen = HashSet::new();
        for p in &self.pairs {
            if p.jack.time_index != p.alice.time_index {
                return Err(PlaError::Data(format!(
                    "pair misaligned: jack t={} alice t={}",
                    p.jack.time_index, p.alice.time_index
                )));
            }
            if !seen.insert(p.jack.time_index) {
                return Err(PlaError::Data(format!(
                    "duplicate time index {}",
                    p.jack.time_index
                )));
            }
            for x in [&p.jack, &p.alice] {
                if x.shape() != shape {
                    return Err(PlaError::shape(format!("{shape:?}"), format!("{:?}", x.shape())));
                }
            }
        }
        for e in &self.eve_samples {
            if e.shape() != shape {
                return Err(PlaError::shape(format!("{shape:?}"), format!("{:?}", e.shape())));
            }
        }
        Ok(())
    }

    /// Pairs sorted by time index.
    pub fn sorted(mut self) -> Self {
        self.pairs.sort_by_key(|p| p.jack.time_index);
        self.eve_samples.sort_by_key(|e| e.time_index);
        self
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SplitOptions {
    /// Permit empty parts, e.g. fractions `(1, 0, 0)`.
    pub allow_empty: bool,
}

/// Split into contiguous train/val/test blocks by time index. Eve samples
/// follow the pair that shares their time index.
pub fn split_dataset(
    bundle: &DatasetBundle,
    fractions: (f64, f64, f64),
    opts: SplitOptions,
) -> Result<(DatasetBundle, DatasetBundle, DatasetBundle)> {
    let (ft, fv, fs) = fractions;
    for (name, f) in [("train", ft), ("val", fv), ("test", fs)] {
        if !f.is_finite() || f < 0.0 || (f == 0.0 && !opts.allow_empty) {
            return Err(PlaError::argument(
                "fractions",
                format!("{name} fraction {f} must be positive"),
            ));
        }
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(PlaError::argument(
            "fractions",
            format!("sum {} differs from 1", ft + fv + fs),
        ));
    }
    bundle.validate()?;
    let sorted = bundle.clone().sorted();
    let n = sorted.len();
    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_val;
    if !opts.allow_empty && (n_train == 0 || n_val == 0 || n_test == 0) {
        return Err(PlaError::argument(
            "fractions",
            format!("degenerate split {n_train}/{n_val}/{n_test} of {n} pairs"),
        ));
    }

    let mut parts = Vec::with_capacity(3);
    let bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, n)];
    let mut claimed = 0;
    for (split, (lo, hi)) in [Split::Train, Split::Val, Split::Test].into_iter().zip(bounds) {
        let pairs: Vec<Pair> = sorted.pairs[lo..hi].to_vec();
        let times: HashSet<u64> = pairs.iter().map(|p| p.jack.time_index).collect();
        let eve: Vec<ComplexCsi> = sorted
            .eve_samples
            .iter()
            .filter(|e| times.contains(&e.time_index))
            .cloned()
            .collect();
        claimed += eve.len();
        parts.push(DatasetBundle {
            pairs,
            eve_samples: eve,
            split,
            source: bundle.source.clone(),
        });
    }
    if claimed != sorted.eve_samples.len() {
        return Err(PlaError::Data(
            "eve samples whose time index matches no pair".into(),
        ));
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_pair_sequence;

    fn bundle(n: usize) -> DatasetBundle {
        let cfg = ScenarioConfig {
            n_antennas: 2,
            n_subcarriers: 4,
            n_paths: 2,
            n_samples_train: n,
            n_samples_val: 1,
            n_samples_test: 1,
            ..Default::default()
        };
        generate_pair_sequence(&cfg).unwrap().train
    }

    #[test]
    fn eighty_ten_ten() {
        let b = bundle(100);
        let (tr, va, te) = split_dataset(&b, (0.8, 0.1, 0.1), SplitOptions::default()).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        assert_eq!(tr.eve_samples.len(), 80);
        let all: HashSet<u64> = tr
            .time_indices()
            .into_iter()
            .chain(va.time_indices())
            .chain(te.time_indices())
            .collect();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn all_train_with_relaxed_flag() {
        let b = bundle(10);
        assert!(split_dataset(&b, (1.0, 0.0, 0.0), SplitOptions::default()).is_err());
        let (tr, va, te) =
            split_dataset(&b, (1.0, 0.0, 0.0), SplitOptions { allow_empty: true }).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (10, 0, 0));
    }

    #[test]
    fn deterministic_and_rejects_bad_sum() {
        let b = bundle(37);
        let a = split_dataset(&b, (0.6, 0.2, 0.2), SplitOptions::default()).unwrap();
        let c = split_dataset(&b, (0.6, 0.2, 0.2), SplitOptions::default()).unwrap();
        assert_eq!(a.0, c.0);
        assert_eq!(a.2, c.2);
        assert!(split_dataset(&b, (0.6, 0.2, 0.3), SplitOptions::default()).is_err());
        let tiny = bundle(2);
        assert!(split_dataset(&tiny, (0.8, 0.1, 0.1), SplitOptions::default()).is_err());
    }
}
