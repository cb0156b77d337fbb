//! Maximum-entropy measurement design for low-rank matrix recovery.
//!
//! The crate is organised around the singular matrix-variate Gaussian (SMG)
//! model of a rank-`R` matrix:
//!
//! - [`smg`]: the generative model, noisy linear measurements, and the
//!   closed-form covariance / conditioning / entropy algebra built on it.
//! - [`frames`] and [`kerdock`]: low block-coherence frame sets (random,
//!   sign-flipped, Kerdock mutually unbiased bases).
//! - [`initial`]: initial mask constructions from packed frames and the
//!   exp-entropy lower bound they are designed against.
//! - [`sequential`]: the closed-form greedy sequential mask and the PCA
//!   oracle baseline.
//! - [`recovery`]: elastic-net / nuclear-norm recovery by proximal gradient
//!   and subspace estimation from the recovered matrix.
//! - [`harness`]: the adaptive design loop, random baselines and replicated
//!   experiments, with [`config`], [`io`] and [`image`] as front-ends.

pub mod config;
pub mod error;
pub mod frames;
pub mod harness;
pub mod image;
pub mod initial;
pub mod io;
pub mod kerdock;
pub mod linalg;
pub mod recovery;
pub mod sequential;
pub mod smg;

pub use error::{Error, Result};
pub use frames::FrameSet;
pub use smg::{Mask, MeasurementRecord, SmgModel, Tolerances};
pub use harness::{ExperimentConfig, InitMethod, RecoveryTrace};
pub use recovery::RecoveryOptions;
pub use sequential::SubspaceEstimate;
