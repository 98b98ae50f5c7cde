use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::Device;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::auth::{
    authenticate, calibrate_from_distances, fingerprint_distance_with, lenient_f64, AuthThreshold,
    AuthVerdict, MetricsReport,
};
use crate::checkpoint::{PredictorCheckpoint, PredictorKind};
use crate::csi::ComplexCsi;
use crate::diffusion::{train_gdm, DdimConfig, GdmPredictor, GdmSpec};
use crate::error::{PlaError, Result};
use crate::predictor::{
    load_predictor, train_recurrent, train_vae, DirectPredictor, Predictor, RecurrentSpec, VaeSpec,
};
use crate::scenario::{
    add_estimation_noise, derived_rng, generate_pair_sequence, load_bundle, load_external_dataset,
    split_dataset, DatasetBundle, SplitOptions,
};
use crate::train::TrainConfig;

use super::cost::{estimate_complexity, estimate_energy, measure_latency, ComplexityParams, LatencyStats};
use super::plan::{bytes_hash, json_hash, DataSource, ExperimentPlan, BUNDLE_FILES};
use super::report::emit_report;

const NOISE_TAG: u64 = 0x4f42_5356;
const ROLE_JACK: u64 = 1;
const ROLE_ALICE: u64 = 2;
const ROLE_EVE: u64 = 3;

/// Hashes tying a result back to the data, weights and settings behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario_hash: String,
    pub checkpoint_hash: String,
    pub config_hash: String,
}

/// Everything persisted for one (scheme, snr, seed) cell. Reports are a pure
/// function of this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub scheme: PredictorKind,
    #[serde(with = "lenient_f64")]
    pub snr_db: f64,
    pub seed: u64,
    pub threshold: AuthThreshold,
    pub roc_points: usize,
    pub verdicts: Vec<AuthVerdict>,
    pub latency: Option<LatencyStats>,
    pub power_watts: Option<f64>,
    pub complexity_ops: Option<String>,
    pub provenance: Provenance,
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: PredictorKind,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub complexity_ops: Option<String>,
    pub provenance: Provenance,
}

impl CellRecord {
    pub fn report(&self) -> Result<ReportRow> {
        let mut metrics = MetricsReport::from_verdicts(&self.verdicts, self.snr_db, self.threshold.tau, self.roc_points)?;
        metrics.latency_ms = self.latency.map(|l| l.median_ms);
        metrics.energy_j = match (self.power_watts, self.latency) {
            (Some(p), Some(l)) => Some(estimate_energy(p, l.median_ms / 1e3)?),
            _ => None,
        };
        Ok(ReportRow {
            scheme: self.scheme,
            seed: self.seed,
            metrics,
            complexity_ops: self.complexity_ops.clone(),
            provenance: self.provenance.clone(),
        })
    }

    fn sort_key(&self) -> (usize, f64, u64) {
        (scheme_rank(self.scheme), self.snr_db, self.seed)
    }

    pub fn file_name(&self) -> String {
        format!("{}-snr{}-seed{}.json", self.scheme, snr_label(self.snr_db), self.seed)
    }
}

fn scheme_rank(k: PredictorKind) -> usize {
    PredictorKind::ALL.iter().position(|&x| x == k).unwrap_or(usize::MAX)
}

fn snr_label(snr: f64) -> String {
    if snr.is_finite() {
        format!("{snr}")
    } else {
        "inf".into()
    }
}

/// Canonical order: scheme, then SNR, then seed.
pub fn sort_cells(cells: &mut [CellRecord]) {
    cells.sort_by(|a, b| {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
    });
}

/// Train/val/test data for one sweep seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: DatasetBundle,
    pub val: DatasetBundle,
    pub test: DatasetBundle,
    pub scenario_hash: String,
}

pub fn prepare_data(source: &DataSource, seed: u64) -> Result<PreparedData> {
    match source {
        DataSource::Synthetic(cfg) => {
            let mut cfg = cfg.clone();
            cfg.rng_seed = cfg.rng_seed.wrapping_add(seed);
            let s = generate_pair_sequence(&cfg)?;
            Ok(PreparedData {
                train: s.train,
                val: s.val,
                test: s.test,
                scenario_hash: json_hash(&cfg)?,
            })
        }
        DataSource::External { path, mapping, fractions } => {
            let bundle = load_external_dataset(path, mapping)?;
            if bundle.eve_samples.is_empty() {
                return Err(PlaError::config("data.mapping.eve", "an attacker role is required for evaluation"));
            }
            let (train, val, test) =
                split_dataset(&bundle, (fractions[0], fractions[1], fractions[2]), SplitOptions::default())?;
            let file = std::fs::read(path)?;
            let scenario_hash = json_hash(&(bytes_hash(&file), mapping, fractions))?;
            Ok(PreparedData {
                train,
                val,
                test,
                scenario_hash,
            })
        }
        DataSource::Bundles { dir } => {
            let mut parts = Vec::with_capacity(3);
            let mut hashes = Vec::with_capacity(3);
            for name in BUNDLE_FILES {
                let path = dir.join(name);
                parts.push(load_bundle(&path)?);
                hashes.push(bytes_hash(&std::fs::read(&path)?));
            }
            let test = parts.pop().unwrap();
            let val = parts.pop().unwrap();
            let train = parts.pop().unwrap();
            Ok(PreparedData {
                train,
                val,
                test,
                scenario_hash: json_hash(&hashes)?,
            })
        }
    }
}

/// Settings that determine a scheme's checkpoint, with shapes taken from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: PredictorKind,
    pub scenario_hash: String,
    pub spec: serde_json::Value,
    pub train: Option<TrainConfig>,
    pub schedule: Option<crate::diffusion::ScheduleConfig>,
    pub norm_mode: crate::fingerprint::NormMode,
}

pub fn scheme_config(plan: &ExperimentPlan, kind: PredictorKind, data: &PreparedData, seed: u64) -> Result<SchemeConfig> {
    let (a, k) = data
        .train
        .shape()
        .ok_or_else(|| PlaError::Data("training split is empty".into()))?;
    let train_for = |base: &TrainConfig| {
        let mut cfg = base.clone();
        cfg.seed = cfg.seed.wrapping_add(seed);
        if plan.train.condition_noise && cfg.condition_snr_db.is_empty() {
            cfg.condition_snr_db = plan.canonical_snrs().into_iter().filter(|s| s.is_finite()).collect();
        }
        cfg
    };
    let (spec, train, schedule) = match kind {
        PredictorKind::Gdm => {
            let mut spec: GdmSpec = plan.gdm.clone();
            spec.denoiser.n_antennas = a;
            spec.denoiser.n_subcarriers = k;
            (serde_json::to_value(spec)?, Some(train_for(&plan.train.gdm)), Some(plan.schedule))
        }
        PredictorKind::Vae => {
            let spec = VaeSpec {
                n_antennas: a,
                n_subcarriers: k,
                ..plan.vae.clone()
            };
            (serde_json::to_value(spec)?, Some(train_for(&plan.train.vae)), None)
        }
        PredictorKind::Lstm | PredictorKind::Gru => {
            let spec = RecurrentSpec {
                n_antennas: a,
                n_subcarriers: k,
                ..plan.recurrent.clone()
            };
            (serde_json::to_value(spec)?, Some(train_for(&plan.train.recurrent)), None)
        }
        PredictorKind::Direct => (serde_json::json!({}), None, None),
    };
    Ok(SchemeConfig {
        scheme: kind,
        scenario_hash: data.scenario_hash.clone(),
        spec,
        train,
        schedule,
        norm_mode: plan.norm_mode,
    })
}

/// Train (or, for the direct scheme, build) the checkpoint a config describes.
pub fn train_scheme(cfg: &SchemeConfig, train: &DatasetBundle, device: &Device) -> Result<PredictorCheckpoint> {
    let tc = || {
        cfg.train
            .clone()
            .ok_or_else(|| PlaError::config("train", format!("no training settings for {}", cfg.scheme)))
    };
    match cfg.scheme {
        PredictorKind::Gdm => {
            let spec: GdmSpec = serde_json::from_value(cfg.spec.clone())?;
            let schedule = cfg.schedule.unwrap_or_default();
            train_gdm(train, &spec, &schedule, cfg.norm_mode, &tc()?, device)
        }
        PredictorKind::Vae => {
            let spec: VaeSpec = serde_json::from_value(cfg.spec.clone())?;
            train_vae(train, &spec, cfg.norm_mode, &tc()?, device)
        }
        PredictorKind::Lstm | PredictorKind::Gru => {
            let spec: RecurrentSpec = serde_json::from_value(cfg.spec.clone())?;
            train_recurrent(train, cfg.scheme, &spec, cfg.norm_mode, &tc()?, device)
        }
        PredictorKind::Direct => DirectPredictor.checkpoint(),
    }
}

/// Predictor from a checkpoint, with the diffusion sampler set to `ddim_steps`.
pub fn build_predictor(ckpt: &PredictorCheckpoint, ddim_steps: usize, device: &Device) -> Result<Box<dyn Predictor>> {
    if ckpt.kind == PredictorKind::Gdm {
        let p = GdmPredictor::from_checkpoint(ckpt, device)?;
        let sampler = DdimConfig {
            steps: ddim_steps,
            ..*p.sampler()
        };
        return Ok(Box::new(p.with_sampler(sampler)));
    }
    load_predictor(ckpt, device)
}

fn checkpoint_paths(dir: &Path, kind: PredictorKind, seed: u64) -> (PathBuf, PathBuf) {
    let base = dir.join("checkpoints");
    (
        base.join(format!("{kind}-seed{seed}.json")),
        base.join(format!("{kind}-seed{seed}.config.json")),
    )
}

fn train_time_path(dir: &Path, kind: PredictorKind, seed: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("{kind}-seed{seed}.train_seconds"))
}

/// Wall-clock seconds spent training the persisted checkpoint, if recorded.
/// Kept beside the checkpoint so that the checkpoint itself stays reproducible.
pub fn training_seconds(output_dir: &Path, kind: PredictorKind, seed: u64) -> Option<f64> {
    std::fs::read_to_string(train_time_path(output_dir, kind, seed))
        .ok()?
        .trim()
        .parse()
        .ok()
}

/// Reuse a persisted checkpoint trained with the same settings, otherwise
/// train and persist one.
pub fn obtain_checkpoint(
    plan: &ExperimentPlan,
    cfg: &SchemeConfig,
    data: &PreparedData,
    seed: u64,
    device: &Device,
) -> Result<PredictorCheckpoint> {
    let (ckpt_path, cfg_path) = checkpoint_paths(&plan.output_dir, cfg.scheme, seed);
    let cfg_json = serde_json::to_string_pretty(cfg)?;
    if ckpt_path.exists() {
        let stored = std::fs::read_to_string(&cfg_path).ok();
        if stored.as_deref() == Some(cfg_json.as_str()) {
            log::info!("reusing {}", ckpt_path.display());
            return PredictorCheckpoint::load(&ckpt_path);
        }
        if !plan.train.enabled {
            return Err(PlaError::config(
                "train.enabled",
                format!("{} was trained with different settings and retraining is disabled", ckpt_path.display()),
            ));
        }
        log::warn!("settings changed for {}; retraining", ckpt_path.display());
    } else if !plan.train.enabled && cfg.scheme.is_learned() {
        return Err(PlaError::MissingCheckpoint(cfg.scheme.to_string()));
    }
    if cfg.scheme.is_learned() {
        log::info!("training {} (seed {seed}) on {} pairs", cfg.scheme, data.train.len());
    }
    let started = Instant::now();
    let ckpt = train_scheme(cfg, &data.train, device)?;
    let seconds = started.elapsed().as_secs_f64();
    ckpt.save(&ckpt_path)?;
    std::fs::write(&cfg_path, cfg_json)?;
    std::fs::write(train_time_path(&plan.output_dir, cfg.scheme, seed), format!("{seconds:.3}\n"))?;
    Ok(ckpt)
}

/// Noise stream seed for one role at one SNR.
fn noise_seed(seed: u64, snr_db: f64, role: u64) -> u64 {
    derived_rng(seed ^ role.rotate_left(32), NOISE_TAG, snr_db.to_bits()).random()
}

fn observe(items: &[ComplexCsi], snr_db: f64, seed: u64) -> Result<Vec<ComplexCsi>> {
    items.iter().map(|x| add_estimation_noise(x, snr_db, seed)).collect()
}

/// Noisy observations for one SNR: Jack over the tail of train plus val and
/// test (so every evaluated item has a full history), and Alice/Eve over val
/// and test.
pub struct ObservedCell {
    /// `prefix` Jack observations from the end of train, then val, then test.
    pub jack: Vec<ComplexCsi>,
    pub prefix: usize,
    pub alice_val: Vec<ComplexCsi>,
    pub alice_test: Vec<ComplexCsi>,
    pub eve_test: Vec<ComplexCsi>,
    pub n_val: usize,
}

impl ObservedCell {
    pub fn new(data: &PreparedData, context: usize, snr_db: f64, seed: u64, max_trials: Option<usize>) -> Result<Self> {
        let train = data.train.clone().sorted();
        let val = data.val.clone().sorted();
        let test = data.test.clone().sorted();
        let prefix = context.saturating_sub(1);
        if train.len() < prefix {
            return Err(PlaError::Data(format!(
                "training split has {} pairs, history needs {prefix}",
                train.len()
            )));
        }
        let n_test = max_trials.map_or(test.len(), |m| m.min(test.len()));
        let eve_by_time: HashMap<u64, &ComplexCsi> = test.eve_samples.iter().map(|e| (e.time_index, e)).collect();
        let eve_clean = test.pairs[..n_test]
            .iter()
            .map(|p| {
                eve_by_time
                    .get(&p.jack.time_index)
                    .map(|e| (*e).clone())
                    .ok_or_else(|| PlaError::Data(format!("no attacker sample at time {}", p.jack.time_index)))
            })
            .collect::<Result<Vec<_>>>()?;
        let jack_clean: Vec<ComplexCsi> = train.pairs[train.len() - prefix..]
            .iter()
            .chain(&val.pairs)
            .chain(&test.pairs[..n_test])
            .map(|p| p.jack.clone())
            .collect();
        let alice = |b: &[crate::scenario::Pair]| b.iter().map(|p| p.alice.clone()).collect::<Vec<_>>();
        Ok(Self {
            jack: observe(&jack_clean, snr_db, noise_seed(seed, snr_db, ROLE_JACK))?,
            prefix,
            alice_val: observe(&alice(&val.pairs), snr_db, noise_seed(seed, snr_db, ROLE_ALICE))?,
            alice_test: observe(&alice(&test.pairs[..n_test]), snr_db, noise_seed(seed, snr_db, ROLE_ALICE))?,
            eve_test: observe(&eve_clean, snr_db, noise_seed(seed, snr_db, ROLE_EVE))?,
            n_val: val.len(),
        })
    }

    /// History windows ending at each val item (`val = true`) or test item.
    pub fn histories(&self, context: usize, val: bool) -> Vec<&[ComplexCsi]> {
        let (start, n) = if val {
            (self.prefix, self.n_val)
        } else {
            (self.prefix + self.n_val, self.alice_test.len())
        };
        (start..start + n).map(|i| &self.jack[i + 1 - context..=i]).collect()
    }
}

/// Calibrate on validation Alice observations, then judge every test
/// Alice and Eve observation against the prediction at its time index.
pub fn evaluate_cell(
    plan: &ExperimentPlan,
    predictor: &dyn Predictor,
    cell: &ObservedCell,
) -> Result<(AuthThreshold, Vec<AuthVerdict>, Vec<ComplexCsi>)> {
    let w = predictor.context_len();
    let val_pred = predictor.predict_batch(&cell.histories(w, true))?;
    let val_d = val_pred
        .iter()
        .zip(&cell.alice_val)
        .map(|(p, a)| fingerprint_distance_with(a, p, plan.metric, plan.compare_mode))
        .collect::<Result<Vec<_>>>()?;
    let threshold = calibrate_from_distances(&val_d, plan.metric, plan.target_fa)?.with_mode(plan.compare_mode);
    let test_pred = predictor.predict_batch(&cell.histories(w, false))?;
    let mut verdicts = Vec::with_capacity(2 * test_pred.len());
    for (p, a) in test_pred.iter().zip(&cell.alice_test) {
        verdicts.push(authenticate(p, a, &threshold)?);
    }
    for (p, e) in test_pred.iter().zip(&cell.eve_test) {
        verdicts.push(authenticate(p, e, &threshold)?);
    }
    Ok((threshold, verdicts, test_pred))
}

pub fn raw_dir(output_dir: &Path) -> PathBuf {
    output_dir.join("raw")
}

/// Run every (scheme, snr, seed) cell of `plan`, persist checkpoints, the
/// resolved plan and raw verdicts under `output_dir`, and emit the report.
pub fn run_sweep(plan: &ExperimentPlan, device: &Device) -> Result<Vec<ReportRow>> {
    plan.validate()?;
    let out = &plan.output_dir;
    std::fs::create_dir_all(raw_dir(out))?;
    std::fs::write(out.join("plan.toml"), plan.to_toml()?)?;
    let mut cells = Vec::new();
    for seed in plan.canonical_seeds() {
        let data = prepare_data(&plan.data, seed)?;
        for kind in plan.canonical_schemes() {
            let cfg = scheme_config(plan, kind, &data, seed)?;
            let ckpt = obtain_checkpoint(plan, &cfg, &data, seed, device)?;
            let provenance = Provenance {
                scenario_hash: data.scenario_hash.clone(),
                checkpoint_hash: ckpt.content_hash()?,
                config_hash: json_hash(&(&cfg, plan.ddim_steps, plan.metric, plan.compare_mode, plan.target_fa))?,
            };
            let predictor = build_predictor(&ckpt, plan.ddim_steps, device)?;
            let complexity_ops = if kind == PredictorKind::Gdm {
                let spec: GdmSpec = ckpt.spec_as()?;
                let p = ComplexityParams::for_denoiser(&spec.denoiser, plan.ddim_steps, 1)?;
                Some(estimate_complexity(&p)?.to_string())
            } else {
                None
            };
            let mut latency: Option<LatencyStats> = None;
            for snr in plan.canonical_snrs() {
                let cell = ObservedCell::new(&data, predictor.context_len(), snr, seed, plan.max_trials)?;
                let (threshold, verdicts, _) = evaluate_cell(plan, predictor.as_ref(), &cell)?;
                if plan.latency.enabled && latency.is_none() {
                    let w = predictor.context_len();
                    latency = Some(measure_latency(
                        predictor.as_ref(),
                        cell.histories(w, false)[0],
                        &cell.alice_test[0],
                        &threshold,
                        plan.latency.n_warmup,
                        plan.latency.n_trials,
                    )?);
                }
                let record = CellRecord {
                    scheme: kind,
                    snr_db: snr,
                    seed,
                    threshold,
                    roc_points: plan.roc_points,
                    verdicts,
                    latency,
                    power_watts: plan.power_watts,
                    complexity_ops: complexity_ops.clone(),
                    provenance: provenance.clone(),
                };
                let row = record.report()?;
                log::info!(
                    "{kind} snr {snr} seed {seed}: p_tl {:.4} p_ta {:.4} f1 {:.4} r_e {:.4}",
                    row.metrics.p_tl,
                    row.metrics.p_ta,
                    row.metrics.f1,
                    row.metrics.r_e
                );
                std::fs::write(raw_dir(out).join(record.file_name()), serde_json::to_string(&record)?)?;
                cells.push(record);
            }
        }
    }
    sort_cells(&mut cells);
    let rows = cells.iter().map(CellRecord::report).collect::<Result<Vec<_>>>()?;
    emit_report(&rows, plan)?;
    Ok(rows)
}

/// Every raw cell record under `output_dir`, in canonical order.
pub fn load_cells(output_dir: &Path) -> Result<Vec<CellRecord>> {
    let dir = raw_dir(output_dir);
    if !dir.is_dir() {
        return Err(PlaError::MissingFile(dir));
    }
    let mut cells = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path)?;
            let cell: CellRecord = serde_json::from_str(&text).map_err(|e| PlaError::Format {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            cells.push(cell);
        }
    }
    if cells.is_empty() {
        return Err(PlaError::Data(format!("no raw cell records in {}", dir.display())));
    }
    sort_cells(&mut cells);
    Ok(cells)
}

/// Rebuild the report of a finished sweep from its raw verdicts alone.
pub fn regenerate_report(output_dir: &Path) -> Result<Vec<ReportRow>> {
    let plan_path = output_dir.join("plan.toml");
    let mut plan = ExperimentPlan::from_toml_file(&plan_path)?;
    plan.output_dir = output_dir.to_path_buf();
    let rows = load_cells(output_dir)?
        .iter()
        .map(CellRecord::report)
        .collect::<Result<Vec<_>>>()?;
    emit_report(&rows, &plan)?;
    Ok(rows)
}
