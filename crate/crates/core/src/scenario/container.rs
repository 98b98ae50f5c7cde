//! Fingerprint container files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! PLACSI/1\n                      magic line
//! {json header}\n                 one line of JSON, see `ContainerHeader`
//! payload                         f64 pairs (re, im), ordered
//!                                 [time][user][antenna][subcarrier]
//! ```
//!
//! A saved [`DatasetBundle`] is a container whose users are its roles
//! (`jack`, `alice`, optionally `eve`). A DeepMIMO-style export is a
//! container over a user grid, `user = row * grid_cols + col`; an
//! [`ExternalMapping`] selects which users play Alice, Jack and Eve.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::csi::{ComplexCsi, Identity, Provenance};
use crate::error::{PlaError, Result};

use super::bundle::{BundleSource, DatasetBundle, Pair, Split};

const MAGIC: &[u8] = b"PLACSI/1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Bundle,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub kind: ContainerKind,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub n_users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<Identity>>,
    pub time_indices: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<BundleSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl ContainerHeader {
    fn matrix_len(&self) -> usize {
        self.n_antennas * self.n_subcarriers
    }

    fn payload_bytes(&self) -> usize {
        self.time_indices.len() * self.n_users * self.matrix_len() * 16
    }
}

/// A user as a flat index or as a grid position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UserRef {
    Index(usize),
    Grid { row: usize, col: usize },
}

/// Role assignment for an external dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalMapping {
    pub alice: UserRef,
    pub jack: UserRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eve: Option<UserRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ExternalMapping {
    /// The role layout written by [`save_bundle`].
    pub fn bundle_roles() -> Self {
        Self {
            jack: UserRef::Index(0),
            alice: UserRef::Index(1),
            eve: Some(UserRef::Index(2)),
            split: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PlaError::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&fs::read_to_string(path)?)
    }
}

/// DeepMIMO-style channel export: one matrix per (time, grid user).
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub time_indices: Vec<u64>,
    /// Flattened `[time][user][antenna][subcarrier]`.
    pub channels: Vec<Complex64>,
}

fn write_container(path: &Path, header: &ContainerHeader, payload: &[Complex64]) -> Result<()> {
    debug_assert_eq!(payload.len() * 16, header.payload_bytes());
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut out = Vec::with_capacity(MAGIC.len() + 512 + payload.len() * 16);
    out.extend_from_slice(MAGIC);
    serde_json::to_writer(&mut out, header)?;
    out.push(b'\n');
    for v in payload {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

fn read_container(path: &Path) -> Result<(ContainerHeader, Vec<Complex64>)> {
    if !path.exists() {
        return Err(PlaError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let fmt_err = |reason: &str| PlaError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| fmt_err("bad magic line"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt_err("unterminated header"))?;
    let header: ContainerHeader =
        serde_json::from_slice(&rest[..nl]).map_err(|e| fmt_err(&e.to_string()))?;
    if let (Some((r, c)), ContainerKind::Grid) = (header.grid, header.kind) {
        if r * c != header.n_users {
            return Err(PlaError::shape(
                format!("{} users", r * c),
                format!("{} users for grid {r}x{c}", header.n_users),
            ));
        }
    }
    let payload = &rest[nl + 1..];
    if payload.len() != header.payload_bytes() {
        return Err(PlaError::shape(
            format!(
                "{} payload bytes for {} times x {} users x {}x{}",
                header.payload_bytes(),
                header.time_indices.len(),
                header.n_users,
                header.n_antennas,
                header.n_subcarriers
            ),
            format!("{} bytes", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok((header, values))
}

/// Persist a bundle of noiseless fingerprints.
pub fn save_bundle(bundle: &DatasetBundle, path: &Path) -> Result<()> {
    bundle.validate()?;
    let (n_ant, n_sc) = bundle
        .shape()
        .ok_or_else(|| PlaError::argument("bundle", "cannot save an empty bundle"))?;
    let all = bundle
        .pairs
        .iter()
        .flat_map(|p| [&p.jack, &p.alice])
        .chain(&bundle.eve_samples);
    if all.into_iter().any(|x| x.snr_db.is_some()) {
        return Err(PlaError::State(
            "bundles are stored noiseless; noise is applied at evaluation time".into(),
        ));
    }
    let with_eve = !bundle.eve_samples.is_empty();
    if with_eve {
        let aligned = bundle.eve_samples.len() == bundle.pairs.len()
            && bundle
                .pairs
                .iter()
                .zip(&bundle.eve_samples)
                .all(|(p, e)| p.jack.time_index == e.time_index);
        if !aligned {
            return Err(PlaError::Data(
                "eve samples must be empty or aligned one-to-one with pairs".into(),
            ));
        }
    }
    let mut roles = vec![Identity::Jack, Identity::Alice];
    if with_eve {
        roles.push(Identity::Eve);
    }
    let header = ContainerHeader {
        kind: ContainerKind::Bundle,
        n_antennas: n_ant,
        n_subcarriers: n_sc,
        n_users: roles.len(),
        grid: None,
        roles: Some(roles),
        time_indices: bundle.time_indices(),
        split: Some(bundle.split),
        rng_seed: match &bundle.source {
            BundleSource::Synthetic(cfg) => Some(cfg.rng_seed),
            BundleSource::External { .. } => None,
        },
        source: Some(bundle.source.clone()),
    };
    let mut payload = Vec::with_capacity(header.payload_bytes() / 16);
    for (i, p) in bundle.pairs.iter().enumerate() {
        payload.extend_from_slice(p.jack.values());
        payload.extend_from_slice(p.alice.values());
        if with_eve {
            payload.extend_from_slice(bundle.eve_samples[i].values());
        }
    }
    write_container(path, &header, &payload)
}

/// Persist a DeepMIMO-style grid export.
pub fn save_grid_dataset(data: &GridDataset, path: &Path, rng_seed: Option<u64>) -> Result<()> {
    let header = ContainerHeader {
        kind: ContainerKind::Grid,
        n_antennas: data.n_antennas,
        n_subcarriers: data.n_subcarriers,
        n_users: data.grid_rows * data.grid_cols,
        grid: Some((data.grid_rows, data.grid_cols)),
        roles: None,
        time_indices: data.time_indices.clone(),
        split: None,
        source: None,
        rng_seed,
    };
    if data.channels.len() * 16 != header.payload_bytes() {
        return Err(PlaError::shape(
            format!("{} channel values", header.payload_bytes() / 16),
            data.channels.len().to_string(),
        ));
    }
    write_container(path, &header, &data.channels)
}

fn resolve_user(header: &ContainerHeader, role: &str, r: UserRef) -> Result<usize> {
    let idx = match r {
        UserRef::Index(i) => i,
        UserRef::Grid { row, col } => {
            let (rows, cols) = header.grid.ok_or_else(|| PlaError::Format {
                path: Default::default(),
                reason: format!("{role} given as grid position but container has no grid"),
            })?;
            if row >= rows {
                return Err(PlaError::IndexOutOfRange {
                    role: format!("{role} row"),
                    index: row,
                    available: rows,
                });
            }
            if col >= cols {
                return Err(PlaError::IndexOutOfRange {
                    role: format!("{role} col"),
                    index: col,
                    available: cols,
                });
            }
            row * cols + col
        }
    };
    if idx >= header.n_users {
        return Err(PlaError::IndexOutOfRange {
            role: role.to_string(),
            index: idx,
            available: header.n_users,
        });
    }
    Ok(idx)
}

fn extract(
    header: &ContainerHeader,
    values: &[Complex64],
    time_slot: usize,
    user: usize,
    identity: Identity,
) -> Result<ComplexCsi> {
    let m = header.matrix_len();
    let start = (time_slot * header.n_users + user) * m;
    let mut x = ComplexCsi::new(
        header.n_antennas,
        header.n_subcarriers,
        values[start..start + m].to_vec(),
        identity,
        header.time_indices[time_slot],
    )?;
    x.provenance = Provenance::Truth;
    Ok(x)
}

/// Load a container and assign roles according to `mapping`.
pub fn load_external_dataset(path: &Path, mapping: &ExternalMapping) -> Result<DatasetBundle> {
    let (header, values) = read_container(path)?;
    let alice = resolve_user(&header, "alice", mapping.alice)?;
    let jack = resolve_user(&header, "jack", mapping.jack)?;
    let eve = mapping
        .eve
        .map(|e| resolve_user(&header, "eve", e))
        .transpose()?;
    let mut pairs = Vec::with_capacity(header.time_indices.len());
    let mut eve_samples = Vec::new();
    for slot in 0..header.time_indices.len() {
        pairs.push(Pair {
            jack: extract(&header, &values, slot, jack, Identity::Jack)?,
            alice: extract(&header, &values, slot, alice, Identity::Alice)?,
        });
        if let Some(e) = eve {
            eve_samples.push(extract(&header, &values, slot, e, Identity::Eve)?);
        }
    }
    let bundle = DatasetBundle {
        pairs,
        eve_samples,
        split: mapping.split.or(header.split).unwrap_or(Split::Train),
        source: BundleSource::External {
            path: path.display().to_string(),
            mapping: mapping.clone(),
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Load a file written by [`save_bundle`], restoring its recorded source.
pub fn load_bundle(path: &Path) -> Result<DatasetBundle> {
    let (header, _) = read_container(path)?;
    let roles = header.roles.clone().ok_or_else(|| PlaError::Format {
        path: path.to_path_buf(),
        reason: "container has no role table; use load_external_dataset with a mapping".into(),
    })?;
    let find = |id: Identity| roles.iter().position(|r| *r == id).map(UserRef::Index);
    let mapping = ExternalMapping {
        jack: find(Identity::Jack).ok_or_else(|| PlaError::Data("no jack role".into()))?,
        alice: find(Identity::Alice).ok_or_else(|| PlaError::Data("no alice role".into()))?,
        eve: find(Identity::Eve),
        split: header.split,
    };
    let mut bundle = load_external_dataset(path, &mapping)?;
    if let Some(src) = header.source {
        bundle.source = src;
    }
    Ok(bundle)
}
