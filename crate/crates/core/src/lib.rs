//! Estimation of the antero-posterior position of a single coronal brain
//! slice inside a reference atlas volume.
//!
//! Every template slice is registered onto the experimental slice with a
//! multi-resolution block-matching engine (rigid, then affine initialized
//! from rigid), scored with normalized mutual information, and the best
//! candidate is the argmax of the rigid, affine or mean score vector.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the thread
//! pool and the command-line tool live in the `slicefinder` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod math;

pub mod blockmatch;
pub mod cartography;
pub mod imgvol;
pub mod matcher;
pub mod metrics;
pub mod xform;

pub use blockmatch::{register, BlockMatchParams, RegistrationResult};
pub use cartography::{ExpertPairs, NmiCartography};
pub use error::{Error, Result};
pub use imgvol::{Image2D, LabelMap2D, LabelVolume3D, TiltSpec, Volume3D};
pub use matcher::{Executor, MatchResult, MatcherParams, Sequential, StrategyKind};
pub use xform::{Correspondence, LinearTransform2D, Point2, TransformKind};
