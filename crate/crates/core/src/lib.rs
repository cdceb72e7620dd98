//! Simultaneous segmentation and classification of notes in audio with a
//! hierarchical linear dynamical system (HLDS).
//!
//! The pipeline is:
//!
//! 1. [`frames`] — slice a mono clip into overlapping windows and reduce each
//!    window to a DCT magnitude spectrum.
//! 2. [`hlds`] — assemble the layered dynamical system in joint canonical form
//!    and run a Kalman filter ([`statespace`]) over the frame features; the
//!    top-layer trajectory is a slowly varying summary of the input.
//! 3. [`classify`] — fit per-class Gaussians to top-layer trajectories from
//!    labeled clips and score unseen frames by Mahalanobis distance.
//! 4. [`segments`] — turn per-frame scores into labeled segments with an
//!    outlier class, enforce a minimum duration, and evaluate predictions
//!    against reference labels.
//!
//! [`synth`] renders synthetic harmonic-note clips (and the benchmark protocol
//! built from them) so the whole chain can be exercised without external
//! recordings.

pub mod classify;
pub mod error;
pub mod frames;
pub mod hlds;
pub mod segments;
pub mod statespace;
pub mod synth;

pub use error::{Error, Result};
