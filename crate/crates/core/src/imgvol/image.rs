use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Tolerance used to snap sample coordinates that land a rounding error
/// outside the raster.
const EDGE_EPS: f64 = 1e-9;

/// A 2D scalar raster with isotropic pixel spacing and a validity mask.
///
/// Pixels are stored row-major. Invalid pixels (padding, samples that fell
/// outside a warped image) are excluded from every metric; by convention
/// they carry the value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    spacing_um: f64,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl Image2D {
    /// Builds a fully valid image.
    pub fn new(width: usize, height: usize, spacing_um: f64, data: Vec<f64>) -> Result<Self> {
        let mask = vec![true; data.len()];
        Self::with_mask(width, height, spacing_um, data, mask)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        spacing_um: f64,
        data: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "empty dimensions {width}x{height}"
            )));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidImage(format!("dimensions {width}x{height} overflow")))?;
        if data.len() != n || mask.len() != n {
            return Err(Error::InvalidImage(format!(
                "expected {n} pixels, got {} values and {} mask entries",
                data.len(),
                mask.len()
            )));
        }
        if !(spacing_um > 0.0 && spacing_um.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "spacing {spacing_um} must be positive"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "non-finite value at pixel {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            spacing_um,
            data,
            mask,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        spacing_um: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width.saturating_mul(height));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, spacing_um, data)
    }

    pub fn filled(width: usize, height: usize, spacing_um: f64, value: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            spacing_um,
            vec![value; width.saturating_mul(height)],
        )
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
    pub fn spacing_um(&self) -> f64 {
        self.spacing_um
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Minimum and maximum over valid pixels.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.data
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold(None, |acc, (&v, _)| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// True when every valid pixel has the same value (or none is valid).
    pub fn is_constant(&self) -> bool {
        match self.valid_range() {
            None => true,
            Some((lo, hi)) => lo == hi,
        }
    }

    /// Applies `f` to every value; the mask is kept.
    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::with_mask(
            self.width,
            self.height,
            self.spacing_um,
            data,
            self.mask.clone(),
        )
    }

    pub fn with_spacing(mut self, spacing_um: f64) -> Result<Self> {
        if !(spacing_um > 0.0 && spacing_um.is_finite()) {
            return Err(Error::InvalidImage(format!(
                "spacing {spacing_um} must be positive"
            )));
        }
        self.spacing_um = spacing_um;
        Ok(self)
    }

    pub fn into_parts(self) -> (usize, usize, f64, Vec<f64>, Vec<bool>) {
        (
            self.width,
            self.height,
            self.spacing_um,
            self.data,
            self.mask,
        )
    }

    /// Bilinear sample at continuous pixel coordinates.
    ///
    /// Returns `None` outside `[0, w-1] x [0, h-1]` or when a pixel with a
    /// non-zero interpolation weight is invalid.
    pub(crate) fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        if !(x >= -EDGE_EPS && x <= xmax + EDGE_EPS && y >= -EDGE_EPS && y <= ymax + EDGE_EPS) {
            return None;
        }
        self.sample_bilinear_clamped(x.clamp(0.0, xmax), y.clamp(0.0, ymax))
    }

    /// Bilinear sample with coordinates clamped to the raster (edge replication).
    pub(crate) fn sample_bilinear_clamped(&self, x: f64, y: f64) -> Option<f64> {
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, xmax) };
        let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, ymax) };
        let x0 = math::floor(x) as usize;
        let y0 = math::floor(y) as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        let w = self.width;
        let (i00, i10, i01, i11) = (y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1);
        if !(self.mask[i00] && self.mask[i10] && self.mask[i01] && self.mask[i11]) {
            return None;
        }
        let top = self.data[i00] + fx * (self.data[i10] - self.data[i00]);
        let bottom = self.data[i01] + fx * (self.data[i11] - self.data[i01]);
        Some(top + fy * (bottom - top))
    }
}

/// Resamples an image to `target_spacing_um` with bilinear interpolation.
///
/// Output dimensions are `round(dim * spacing / target)`. Output pixel
/// centers map to source coordinates `(i + 0.5) * target / spacing - 0.5`,
/// clamped to the source raster. A resampled pixel is valid iff every
/// source pixel with non-zero weight is valid.
pub fn resample_isotropic(img: &Image2D, target_spacing_um: f64) -> Result<Image2D> {
    if !(target_spacing_um > 0.0 && target_spacing_um.is_finite()) {
        return Err(Error::InvalidImage(format!(
            "target spacing {target_spacing_um} must be positive"
        )));
    }
    if target_spacing_um == img.spacing_um {
        return Ok(img.clone());
    }
    let ratio = img.spacing_um / target_spacing_um;
    let out_w = math::round(img.width as f64 * ratio) as usize;
    let out_h = math::round(img.height as f64 * ratio) as usize;
    if out_w == 0 || out_h == 0 {
        return Err(Error::EmptyOutput);
    }
    let step = target_spacing_um / img.spacing_um;
    let mut data = Vec::with_capacity(out_w * out_h);
    let mut mask = Vec::with_capacity(out_w * out_h);
    for j in 0..out_h {
        let sy = (j as f64 + 0.5) * step - 0.5;
        for i in 0..out_w {
            let sx = (i as f64 + 0.5) * step - 0.5;
            match img.sample_bilinear_clamped(sx, sy) {
                Some(v) => {
                    data.push(v);
                    mask.push(true);
                }
                None => {
                    data.push(0.0);
                    mask.push(false);
                }
            }
        }
    }
    Image2D::with_mask(out_w, out_h, target_spacing_um, data, mask)
}

/// Offset of the source window inside the target canvas (positive: pad,
/// negative: crop). The extra pixel of an odd margin goes to the high side.
fn fov_offset(src: usize, dst: usize) -> isize {
    if dst >= src {
        ((dst - src) / 2) as isize
    } else {
        -(((src - dst) / 2) as isize)
    }
}

/// Centers the image content in a `target_w x target_h` canvas.
///
/// Padding carries value 0 and is marked invalid; cropping removes
/// symmetric margins. Fails only on an empty target.
pub fn adjust_fov(img: &Image2D, target_w: usize, target_h: usize) -> Result<Image2D> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidImage(format!(
            "target field of view {target_w}x{target_h} is empty"
        )));
    }
    let ox = fov_offset(img.width, target_w);
    let oy = fov_offset(img.height, target_h);
    let mut data = vec![0.0; target_w * target_h];
    let mut mask = vec![false; target_w * target_h];
    for ty in 0..target_h {
        let sy = ty as isize - oy;
        if sy < 0 || sy >= img.height as isize {
            continue;
        }
        for tx in 0..target_w {
            let sx = tx as isize - ox;
            if sx < 0 || sx >= img.width as isize {
                continue;
            }
            let si = sy as usize * img.width + sx as usize;
            data[ty * target_w + tx] = img.data[si];
            mask[ty * target_w + tx] = img.mask[si];
        }
    }
    Image2D::with_mask(target_w, target_h, img.spacing_um, data, mask)
}
