use serde::{Deserialize, Serialize};

use crate::error::{PlaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

/// Parameters that rebuild a [`DiffusionSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            t_train: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        build_schedule(self.kind, self.t_train, self.beta_start, self.beta_end)
    }
}

/// Noise coefficients indexed by diffusion step `t` in `1..=t_train`
/// (array slot `t - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub config: ScheduleConfig,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn t_train(&self) -> usize {
        self.beta.len()
    }

    /// `alpha_bar` at step `t`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_train() {
            return Err(PlaError::argument(
                "t",
                format!("step {t} outside [1, {}]", self.t_train()),
            ));
        }
        Ok(())
    }
}

pub fn build_schedule(
    kind: ScheduleKind,
    t_train: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<DiffusionSchedule> {
    if t_train == 0 {
        return Err(PlaError::argument("t_train", "must be positive"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(PlaError::argument(
            "beta",
            format!("need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"),
        ));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if t_train == 1 {
                vec![beta_start]
            } else {
                let step = (beta_end - beta_start) / (t_train - 1) as f64;
                (0..t_train).map(|i| beta_start + step * i as f64).collect()
            }
        }
        ScheduleKind::Cosine => {
            // Nichol & Dhariwal offset s = 0.008; betas clipped into [beta_start, 0.999].
            let s = 0.008;
            let f = |t: f64| {
                let x = (t / t_train as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            (0..t_train)
                .map(|i| {
                    let b = 1.0 - f((i + 1) as f64) / f(i as f64);
                    b.clamp(beta_start, 0.999)
                })
                .collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(DiffusionSchedule {
        config: ScheduleConfig {
            kind,
            t_train,
            beta_start,
            beta_end,
        },
        beta,
        alpha,
        alpha_bar,
    })
}
