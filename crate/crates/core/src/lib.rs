// SPDX-License-Identifier: Apache-2.0

//! Frequency-compensated network for daily sea-ice-concentration forecasting.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors and a reverse-mode tape.
//! * [`spectral`]: differentiable 2D DFT pair.
//! * [`freq_branch`], [`conv_branch`], [`model`]: the dual-branch network.
//! * [`losses`], [`trainer`]: objective and optimisation loop.
//! * [`metrics`], [`forecast`]: evaluation and (recursive) inference.
//! * [`config`]: JSON run configuration.
//! * [`data`]: synthetic archives and the SICG grid file format.

pub mod config;
pub mod conv_branch;
pub mod data;
pub mod error;
pub mod forecast;
pub mod freq_branch;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use config::RunConfig;
pub use data::{DatasetSplit, Mask, SicSequence, Subset, WindowPair};
pub use error::{Error, ErrorClass, Result};
pub use model::{Ablation, FcnetConfig, FreqTarget, ModelParams};
pub use spectral::{SpectralField, SpectralVar};
pub use tensor::{ConvSpec, Real, Tape, Tensor, Var};
