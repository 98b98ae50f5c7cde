//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pla_core::auth::{authenticate, calibrate_from_distances, fingerprint_distance, DistanceKind};
use pla_core::csi::{ComplexCsi, Identity};
use pla_core::diffusion::{
    build_schedule, ddim_sample, forward_diffuse, loss_with, seeded_normal, DdimConfig, Denoiser,
    DenoiserSpec, DiffusionSchedule, NoisePredictor, ScheduleKind,
};
use pla_core::fingerprint::{denormalize, normalize};
use pla_core::harness::{DataSource, ExperimentPlan};
use pla_core::params::ParamStore;
use pla_core::scenario::{add_estimation_noise, generate_pair_at, ScenarioConfig};
use pla_core::Result;

pub fn max_abs(t: &Tensor) -> f64 {
    t.abs().unwrap().max_all().unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

/// Worst relative round-trip error and largest normalised entry over `n`
/// random matrices whose magnitudes span `1e-3..1e3`.
pub fn normalization_round_trip(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_rel, mut worst_entry) = (0.0f64, 0.0f64);
    for t in 0..n {
        let a = rng.random_range(1..=8);
        let k = rng.random_range(1..=32);
        let values: Vec<Complex64> = (0..a * k)
            .map(|_| {
                let mag = 10f64.powf(rng.random_range(-3.0..=3.0));
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                Complex64::from_polar(mag, phase)
            })
            .collect();
        let x = ComplexCsi::new(a, k, values, Identity::Alice, t as u64).unwrap();
        let img = normalize(&x).unwrap();
        worst_entry = worst_entry.max(img.max_abs());
        let back = denormalize(&img).unwrap();
        for (u, v) in x.values().iter().zip(back.values()) {
            worst_rel = worst_rel.max((u - v).norm() / u.norm());
        }
    }
    (worst_rel, worst_entry)
}

/// Per probed step, the relative deviation of the Monte-Carlo variance of
/// `x_t` from `alpha_bar * var(x0) + 1 - alpha_bar`.
pub fn forward_marginal_deviation(n: usize, x0_std: f64) -> Vec<(usize, f64)> {
    let dev = Device::Cpu;
    let sched = build_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let t_max = sched.t_train();
    let x0 = (seeded_normal(&[1, n], 21, 0, &dev, DType::F64).unwrap() * x0_std).unwrap();
    let v0 = variance(&x0);
    [1, t_max / 4, t_max / 2, 3 * t_max / 4, t_max]
        .into_iter()
        .map(|t| {
            let eps = seeded_normal(&[1, n], 22, t as u64, &dev, DType::F64).unwrap();
            let xt = forward_diffuse(&x0, &[t], &eps, &sched).unwrap();
            let ab = sched.alpha_bar_at(t);
            let expected = ab * v0 + 1.0 - ab;
            (t, (variance(&xt) - expected).abs() / expected)
        })
        .collect()
}

fn variance(x: &Tensor) -> f64 {
    let v = x.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

pub struct GradCheck {
    pub probes: usize,
    pub max_rel: f64,
    pub failures: usize,
}

/// Backpropagated gradients of the noise-prediction loss against central
/// finite differences on a tiny double-precision denoiser.
pub fn denoiser_gradient_check(n_probes: usize, rel_tol: f64) -> GradCheck {
    let dev = Device::Cpu;
    let spec = DenoiserSpec {
        n_layers: 2,
        blocks_per_layer: 1,
        max_channels: 8,
        max_spatial: 16,
        time_dim: 8,
        patch_size: 2,
        n_antennas: 4,
        n_subcarriers: 8,
        ..Default::default()
    };
    let store = ParamStore::new(3);
    let model = Denoiser::new(&spec, store.clone(), DType::F64, &dev).unwrap();
    let sched = build_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let x0 = seeded_normal(&[2, 2, 4, 8], 1, 0, &dev, DType::F64).unwrap();
    let cond = seeded_normal(&[2, 2, 4, 8], 2, 0, &dev, DType::F64).unwrap();
    let eps = seeded_normal(&[2, 2, 4, 8], 3, 0, &dev, DType::F64).unwrap();
    let t = [40, 700];
    let loss = |m: &Denoiser| loss_with(m, &x0, &cond, &t, &eps, &sched).unwrap();
    let grads = loss(&model).backward().unwrap();

    let vars = store.named_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let (mut max_rel, mut failures) = (0.0f64, 0);
    for probe in 0..n_probes {
        let (_, var) = &vars[probe % vars.len()];
        let shape = var.dims().to_vec();
        let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let i = rng.random_range(0..base.len());
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().unwrap().to_vec1::<f64>().unwrap()[i])
            .unwrap_or(0.0);
        let eval_at = |delta: f64| {
            let mut v = base.clone();
            v[i] += delta;
            var.set(&Tensor::from_vec(v, shape.as_slice(), &dev).unwrap()).unwrap();
            loss(&model).to_scalar::<f64>().unwrap()
        };
        let numeric = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        var.set(&Tensor::from_vec(base, shape.as_slice(), &dev).unwrap()).unwrap();
        // the floor keeps exactly-zero gradients from dividing by zero
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
        if rel > rel_tol {
            failures += 1;
        }
    }
    GradCheck {
        probes: n_probes,
        max_rel,
        failures,
    }
}

/// Noise predictor that knows the clean sample.
pub struct Teacher {
    pub x0: Tensor,
    pub sched: DiffusionSchedule,
}

impl NoisePredictor for Teacher {
    type Cond = ();

    fn predict_noise(&self, x_t: &Tensor, t: usize, _: &()) -> Result<Tensor> {
        let ab = self.sched.alpha_bar_at(t);
        Ok(((x_t - (&self.x0 * ab.sqrt())?)? / (1.0 - ab).sqrt())?)
    }
}

/// Closed-form noise predictor for scalar data drawn from `N(mu, var)`.
pub struct GaussianScore {
    pub mu: f64,
    pub var: f64,
    pub sched: DiffusionSchedule,
}

impl NoisePredictor for GaussianScore {
    type Cond = ();

    fn predict_noise(&self, x_t: &Tensor, t: usize, _: &()) -> Result<Tensor> {
        let ab = self.sched.alpha_bar_at(t);
        let total = ab * self.var + 1.0 - ab;
        Ok(((x_t - ab.sqrt() * self.mu)? * ((1.0 - ab).sqrt() / total))?)
    }
}

/// Worst teacher-forced reconstruction error for each step count.
pub fn teacher_forced_errors(steps: &[usize]) -> Vec<(usize, f64)> {
    let dev = Device::Cpu;
    let sched = build_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let x0 = seeded_normal(&[4, 2, 8, 32], 7, 0, &dev, DType::F64).unwrap();
    let teacher = Teacher {
        x0: x0.clone(),
        sched: sched.clone(),
    };
    steps
        .iter()
        .map(|&s| {
            let init = seeded_normal(&[4, 2, 8, 32], 8, s as u64, &dev, DType::F64).unwrap();
            let cfg = DdimConfig {
                steps: s,
                ..Default::default()
            };
            let out = ddim_sample(&teacher, &(), init, &sched, &cfg, 0).unwrap();
            (s, max_abs(&(out - &x0).unwrap()))
        })
        .collect()
}

/// Relative errors of the sample mean and variance of full ancestral
/// sampling against the data distribution `N(mu, var)`.
pub fn ancestral_gaussian_errors(n: usize, mu: f64, var: f64) -> (f64, f64) {
    let dev = Device::Cpu;
    let sched = build_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
    let model = GaussianScore {
        mu,
        var,
        sched: sched.clone(),
    };
    let init = seeded_normal(&[n], 31, 0, &dev, DType::F64).unwrap();
    let cfg = DdimConfig {
        steps: sched.t_train(),
        eta: 1.0,
        clip_x0: None,
    };
    let v = ddim_sample(&model, &(), init, &sched, &cfg, 32).unwrap().to_vec1::<f64>().unwrap();
    let m = v.iter().sum::<f64>() / n as f64;
    let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    ((m - mu).abs() / mu.abs(), (s2 - var).abs() / var)
}

/// Empirical false-alarm rate on fresh legitimate trials for a threshold
/// calibrated at `target_fa` on an independent validation set.
pub fn calibration_false_alarm(target_fa: f64, n_val: usize, n_fresh: usize) -> f64 {
    let cfg = ScenarioConfig {
        n_antennas: 4,
        n_subcarriers: 8,
        n_paths: 4,
        rho_aj: 0.9,
        ..Default::default()
    };
    let trial = |t: u64| {
        let p = generate_pair_at(&cfg, t);
        let jack = add_estimation_noise(&p.jack, 10.0, 1_000 + t).unwrap();
        let alice = add_estimation_noise(&p.alice, 10.0, 2_000_000 + t).unwrap();
        (jack.relabel(Identity::Alice), alice)
    };
    let val: Vec<f64> = (0..n_val as u64)
        .map(|t| {
            let (pred, obs) = trial(t);
            fingerprint_distance(&obs, &pred, DistanceKind::Nmse).unwrap()
        })
        .collect();
    let th = calibrate_from_distances(&val, DistanceKind::Nmse, target_fa).unwrap();
    let offset = 10 * n_val as u64;
    let rejected = (0..n_fresh as u64)
        .filter(|&t| {
            let (pred, obs) = trial(offset + t);
            !authenticate(&pred, &obs, &th).unwrap().accept
        })
        .count();
    rejected as f64 / n_fresh as f64
}

/// Two-sided Wilson score interval at 95% for `p` over `n` trials.
pub fn binomial_interval_95(p: f64, n: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054;
    let n = n as f64;
    let centre = (p + z * z / (2.0 * n)) / (1.0 + z * z / n);
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / (1.0 + z * z / n);
    (centre - half, centre + half)
}

/// A small synthetic sweep that trains every scheme in a few seconds.
pub fn tiny_plan(output_dir: &Path) -> ExperimentPlan {
    let mut plan = ExperimentPlan::default();
    plan.data = DataSource::Synthetic(ScenarioConfig {
        n_antennas: 4,
        n_subcarriers: 8,
        n_paths: 4,
        rho_aj: 0.95,
        n_samples_train: 64,
        n_samples_val: 100,
        n_samples_test: 60,
        ..Default::default()
    });
    plan.snr_db_list = vec![10.0, 20.0];
    plan.output_dir = output_dir.to_path_buf();
    plan.target_fa = 0.05;
    plan.gdm.denoiser.max_channels = 8;
    plan.gdm.denoiser.time_dim = 8;
    plan.vae.latent_dim = 8;
    plan.recurrent.window = 3;
    plan.recurrent.hidden = 8;
    for t in [&mut plan.train.gdm, &mut plan.train.vae, &mut plan.train.recurrent] {
        t.epochs = 2;
        t.batch_size = 16;
    }
    plan
}
