//! Image and volume rasters, resampling, field-of-view adjustment, tilt
//! simulation and the synthetic phantom.
//!
//! Axis convention, used everywhere in the crate: `x` is left-right, `y` is
//! infero-superior and `z` is antero-posterior. Volumes are stored
//! x-fastest, then y, then z, so the coronal slice at index `z` is the
//! contiguous `(x, y)` plane.

mod image;
mod labels;
mod phantom;
mod tilt;
mod volume;

pub use image::{adjust_fov, resample_isotropic, Image2D};
pub use labels::{LabelMap2D, LabelVolume3D};
pub use phantom::{
    make_phantom, make_phantom_labels, perturb_labels, perturb_volume, PerturbSpec, PhantomModel,
    PHANTOM_MIN_DIM, PHANTOM_SPACING_UM,
};
pub use tilt::{simulate_tilt, simulate_tilt_labels, TiltSpec, MAX_TILT_DEG};
pub use volume::{extract_coronal_slice, Volume3D};
