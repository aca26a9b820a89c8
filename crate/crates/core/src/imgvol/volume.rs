use alloc::format;
use alloc::vec::Vec;

use super::Image2D;
use crate::{Error, Result};

/// A 3D scalar raster stored x-fastest, then y, then z.
///
/// `x` is left-right, `y` infero-superior, `z` antero-posterior; the
/// coronal slice at index `z` is the `(x, y)` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing_um: [f64; 3],
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing_um: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("empty dimensions {dims:?}")));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::InvalidVolume(format!("dimensions {dims:?} overflow")))?;
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "expected {n} voxels, got {}",
                data.len()
            )));
        }
        if spacing_um.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!(
                "spacing {spacing_um:?} must be positive"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "non-finite value at voxel {i}"
            )));
        }
        Ok(Self {
            dims,
            spacing_um,
            data,
        })
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing_um: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing_um, data)
    }

    /// Stacks equally sized coronal slices along z.
    pub fn from_slices(slices: &[Image2D], spacing_z_um: f64) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidVolume("no slices".into()))?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(w * h * slices.len());
        for s in slices {
            if (s.width(), s.height()) != (w, h) {
                return Err(Error::DimMismatch(format!(
                    "slice {}x{} differs from {w}x{h}",
                    s.width(),
                    s.height()
                )));
            }
            data.extend_from_slice(s.data());
        }
        Self::new(
            [w, h, slices.len()],
            [first.spacing_um(), first.spacing_um(), spacing_z_um],
            data,
        )
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn spacing_um(&self) -> [f64; 3] {
        self.spacing_um
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn voxel(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn is_isotropic(&self) -> bool {
        let [sx, sy, sz] = self.spacing_um;
        sx == sy && sy == sz
    }

    /// See [`extract_coronal_slice`].
    pub fn coronal_slice(&self, z: usize) -> Result<Image2D> {
        extract_coronal_slice(self, z)
    }
}

/// Returns the `(x, y)` plane at antero-posterior index `z`, fully valid.
pub fn extract_coronal_slice(vol: &Volume3D, z: usize) -> Result<Image2D> {
    let [nx, ny, nz] = vol.dims;
    if z >= nz {
        return Err(Error::IndexOutOfRange { index: z, len: nz });
    }
    let [sx, sy, _] = vol.spacing_um;
    if sx != sy {
        return Err(Error::AnisotropicSlice { sx, sy });
    }
    let plane = nx * ny;
    Image2D::new(nx, ny, sx, vol.data[z * plane..(z + 1) * plane].to_vec())
}
