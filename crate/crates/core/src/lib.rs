//! Physical-layer authentication by channel extrapolation.
//!
//! A legitimate transmitter's channel fingerprint is predicted from a
//! trusted reference node's channel, and incoming transmissions are accepted
//! when their observed fingerprint is close to the prediction.

pub mod auth;
pub mod checkpoint;
pub mod csi;
pub mod diffusion;
pub mod error;
pub mod fingerprint;
pub mod harness;
pub mod nn;
pub mod params;
pub mod predictor;
pub mod scenario;
pub mod train;

pub use error::{PlaError, Result};
