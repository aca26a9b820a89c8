use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A 2D map of region identifiers (0 is background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap2D {
    width: usize,
    height: usize,
    labels: Vec<u16>,
    region_names: BTreeMap<u16, String>,
}

impl LabelMap2D {
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width.saturating_mul(height) {
            return Err(Error::InvalidImage(format!(
                "label map {width}x{height} needs {} entries, got {}",
                width.saturating_mul(height),
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            region_names: BTreeMap::new(),
        })
    }

    pub fn with_names(mut self, names: BTreeMap<u16, String>) -> Self {
        self.region_names = names;
        self
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    pub fn region_names(&self) -> &BTreeMap<u16, String> {
        &self.region_names
    }

    /// Non-background identifiers occurring in the map.
    pub fn present_labels(&self) -> BTreeSet<u16> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    pub fn count(&self, label: u16) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// A 3D label raster on the same grid convention as [`super::Volume3D`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume3D {
    dims: [usize; 3],
    labels: Vec<u16>,
    region_names: BTreeMap<u16, String>,
}

impl LabelVolume3D {
    pub fn new(dims: [usize; 3], labels: Vec<u16>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.contains(&0) || labels.len() != n {
            return Err(Error::InvalidVolume(format!(
                "label volume {dims:?} needs {n} entries, got {}",
                labels.len()
            )));
        }
        Ok(Self {
            dims,
            labels,
            region_names: BTreeMap::new(),
        })
    }

    pub fn with_names(mut self, names: BTreeMap<u16, String>) -> Self {
        self.region_names = names;
        self
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[x + self.dims[0] * (y + self.dims[1] * z)]
    }

    pub fn region_names(&self) -> &BTreeMap<u16, String> {
        &self.region_names
    }

    pub fn coronal_slice(&self, z: usize) -> Result<LabelMap2D> {
        let [nx, ny, nz] = self.dims;
        if z >= nz {
            return Err(Error::IndexOutOfRange { index: z, len: nz });
        }
        let plane = nx * ny;
        Ok(
            LabelMap2D::new(nx, ny, self.labels[z * plane..(z + 1) * plane].to_vec())?
                .with_names(self.region_names.clone()),
        )
    }
}
