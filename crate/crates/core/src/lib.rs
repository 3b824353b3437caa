//! Dense convolutional encoder-decoder (DenseED) networks for mapping
//! diffraction-limited fluorescence frames to super-resolved targets.
//!
//! - [`arch`]: network graphs for DenseED, U-Net and DnCNN, with exact
//!   parameter, conv-layer and feature-map audits.
//! - [`exec`]: forward and reverse passes on CPU, generic over [`scalar::Scalar`].
//! - [`dataset`]: FOV loading, quadrant patches, normalization, splits.
//! - [`synth`]: Gaussian-PSF phantoms and the synthetic benchmark.
//! - [`train`]: Adam training loop, loss log and checkpoints.
//! - [`eval`]: held-out MSE, line profiles, dip metric and exported images.
//!
//! ```
//! use denseed::arch::{build_denseed, count_parameters, DenseEdSpec};
//!
//! let graph = build_denseed(&DenseEdSpec::new([1, 1, 1])).unwrap();
//! assert_eq!(count_parameters(&graph), 36572);
//! ```

pub mod arch;
pub mod dataset;
pub mod eval;
pub mod exec;
pub mod kv;
pub mod scalar;
pub mod synth;
pub mod train;

pub type ParameterSet32 = exec::ParameterSet<f32>;
pub type ParameterSet64 = exec::ParameterSet<f64>;
pub type Trainer32 = train::Trainer<f32>;
pub type Trainer64 = train::Trainer<f64>;
pub type Checkpoint32 = train::Checkpoint<f32>;
pub type Checkpoint64 = train::Checkpoint<f64>;
