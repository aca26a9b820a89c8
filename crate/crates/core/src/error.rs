use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("slice spacing is anisotropic ({sx} x {sy} um)")]
    AnisotropicSlice { sx: f64, sy: f64 },
    #[error("volume spacing is anisotropic ({0:?} um)")]
    AnisotropicVolume([f64; 3]),
    #[error("resampling would produce an empty image")]
    EmptyOutput,
    #[error("invalid tilt: {0}")]
    InvalidTilt(String),
    #[error("phantom dimensions must be at least {min} voxels on every axis")]
    DimsTooSmall { min: usize },
    #[error("transform is singular")]
    SingularTransform,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("block has zero variance over its co-valid pixels")]
    ZeroVariance,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("images have no co-valid pixels")]
    NoOverlap,
    #[error("joint entropy is zero (both images constant on their overlap)")]
    InsufficientContrast,
    #[error("label {0} is absent from both maps")]
    LabelAbsentEverywhere(u16),
    #[error("regression abscissae are all equal")]
    DegenerateX,
    #[error("pyramid with {levels} levels would shrink below {min_side} px")]
    TooManyLevels { levels: usize, min_side: usize },
    #[error("no valid blocks: no block has usable texture")]
    NoValidBlocks,
    #[error("affine determinant {determinant} exceeds the deformation guard")]
    ExcessiveDeformation { determinant: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("every template slice failed to register")]
    AllPairsFailed,
    #[error("score vector has no defined entry")]
    AllUndefined,
    #[error("volumes are not preprocessed to a common grid: {0}")]
    PreprocessMismatch(String),
    #[error("cartography has no defined row")]
    EmptyCartography,
    #[error("invalid expert pairs: {0}")]
    InvalidExpertPairs(String),
}
