//! Active stereo with a learned diffractive illumination pattern.
//!
//! A laser passes through a diffractive optical element (DOE); its far-field
//! pattern is projected into the scene and seen by two cameras plus the
//! illuminator itself, treated as a third, virtual view. The whole chain from
//! DOE heights to disparity loss is differentiable, so the DOE and the
//! matcher can be trained together.
//!
//! - [`wavefield`]: complex fields, DOE phase, far-field propagation, camera resampling
//! - [`scenesim`]: camera rig, toy and dataset scenes, warping, noisy capture
//! - [`diffengine`]: reverse-mode tape with adjoint primitives and gradient checks
//! - [`matcher`]: trinocular cost volumes, fusion and soft-argmin regression
//! - [`optimize`]: joint training, target-pattern design, presets, checkpoints
//! - [`harness`]: configuration, evaluation, figures and the `activestereo` CLI
//!
//! Everything numeric is generic over [`Real`]; the aliases below fix it to
//! `f64`, which is what the CLI and the reference runs use.

pub mod diffengine;
pub mod error;
pub mod harness;
pub mod io;
pub mod matcher;
pub mod optimize;
pub mod rng;
pub mod scalar;
pub mod scenesim;
pub mod wavefield;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Field = wavefield::ComplexField<f64>;
pub type Doe = wavefield::DOEProfile<f64>;
pub type Pattern = wavefield::IlluminationPattern<f64>;
pub type Rig = scenesim::CameraRig<f64>;
pub type Capture = scenesim::StereoCapture<f64>;
pub type Scene = scenesim::SceneSample<f64>;
pub type Matcher = matcher::MatcherParams<f64>;
pub type Pipeline = optimize::Optics<f64>;
pub type Tape = diffengine::AdjointTape<f64>;
