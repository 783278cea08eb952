//! Frequency-domain video prediction for scenes of hierarchically related
//! moving objects.
//!
//! Each object channel is tracked by phase correlation in the Fourier
//! domain. Relative transformations between objects drive an online estimate
//! of the parent-of graph, and a small gated recurrent motion model extrapolates
//! each object's motion relative to its parent as a blend of linear and
//! circular primitives. Predicted frames are synthesized by applying phase
//! ramps to the last observed spectra, so they never blur.
//!
//! Module map:
//!
//! - [`spectral`]: 2D DFTs, phase correlation, phase ramps.
//! - [`kinematics`]: transformation algebra and vector extraction.
//! - [`relations`]: parent-of graph inference.
//! - [`motion`]: recurrent motion model, training and checkpoints.
//! - [`scenegen`]: the synthetic "solar system" dataset.
//! - [`harness`]: prediction pipeline, evaluation and export.

pub mod error;
pub mod harness;
pub mod kinematics;
pub mod motion;
pub mod pgm;
pub mod relations;
pub mod scenegen;
pub mod spectral;

pub use error::{Error, Result};
pub use kinematics::TransformVec;
pub use relations::{ObjectGraph, Parent};
pub use spectral::{Frame, PhaseTransform, Spectrum};
