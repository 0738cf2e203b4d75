//! Reference-view recovery and scoring for multi-image super-resolution
//! scene series.
//!
//! A scene is a stack of low-resolution views with status maps plus, for
//! training-like data, one 3× high-resolution target. The crate finds which
//! view matches the target ([`reference`]), builds classical
//! reference-anchored super-resolution baselines ([`baseline_sr`]), scores
//! them with the bias- and shift-tolerant cPSNR ([`metrics`]), and produces
//! synthetic scenes with known ground truth ([`synthetic`]).

pub mod baseline_sr;
pub mod dataset_io;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod reference;
pub mod registration;
pub mod synthetic;

pub use error::{Error, Result};
pub use imaging::{ImageGrid, Interpolation, StatusMap, Translation};
pub use reference::{Band, Frame, ReferenceDecision, ReferenceMethod, Scene};
