//! Rigid-motion simulation and epipolar-consistency motion compensation for
//! cone-beam CT.

pub mod config;
pub mod ecc;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod motion_model;
pub mod optimizer;
pub mod pipeline;
pub mod radon;
pub mod reconstruction;
pub mod simulation;

pub use error::{Error, Result};
pub use geometry::{ProjectionMatrix, RigidParams};
pub use motion_model::{MotionSpline, ScenarioMask};
pub use radon::{ProjectionImage, RadonDerivativeTable};
