//! Active mmWave OFDM sensing: beam-scan measurement synthesis, per-beam
//! delay estimation, hardware-delay calibration, radio point clouds and
//! scan-matching SLAM with pose graph optimization.

pub mod channel;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod pointcloud;
pub mod ranging;
pub mod rng;
pub mod scene;
pub mod sensing;
pub mod slam;
pub mod waveform;

pub use error::{Error, Result};
pub use geometry::{wrap_angle, Pose2};
pub use num_complex::Complex64;

/// Propagation speed used throughout the simulator, m/s.
///
/// Rounded to `3e8` so that one `N_c = 1024`, `Δf = 120 kHz` delay bin maps
/// to exactly `1.220703125` m of range.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;
