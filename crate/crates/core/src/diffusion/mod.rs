//! Conditional denoising diffusion for fingerprint prediction.

pub mod denoiser;
pub mod gdm;
pub mod sampler;
pub mod schedule;

pub use denoiser::{CondFeatures, Conditioning, Denoiser, DenoiserSpec};
pub use gdm::{loss_step, loss_with, predict_fingerprint, train_gdm, GdmPredictor, GdmSpec};
pub use sampler::{
    ddim_sample, ddim_timesteps, forward_diffuse, forward_marginal, seeded_normal, DdimConfig,
    NoisePredictor,
};
pub use schedule::{build_schedule, DiffusionSchedule, ScheduleConfig, ScheduleKind};
