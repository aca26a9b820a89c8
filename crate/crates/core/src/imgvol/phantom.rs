//! Deterministic synthetic brain phantom.
//!
//! With voxel center `c = ((nx-1)/2, (ny-1)/2, (nz-1)/2)`, semi-axes
//! `a = (0.40 nx, 0.36 ny, 0.62 nz)`, ellipsoidal radius
//! `d = |(p - c) / a|` and `t = z / (nz - 1)`, the value at voxel `p` is
//!
//! ```text
//! ramp(z) + shell(d) + window(d) * (blob + lobes + texture)
//! ramp(z)   = 200 t
//! bump(s)   = cos^2(pi s / 2) for |s| < 1, else 0
//! shell(d)  = 60 bump((d - 0.86) / 0.10)
//! window(d) = 1 for d <= 0.70, bump((d - 0.70) / 0.25) for d > 0.70
//! blob      = 50 bump(r / rb), r = in-plane distance to
//!             (cx + 0.15 nx (2t - 1), cy - 0.10 ny (2t - 1)), rb = 0.10 min(nx, ny)
//! lobes     = sum_k A_k exp(-|(p - c) / a - m_k|^2 / (2 s_k^2)),
//!             10 lobes, m_k in [-0.6, 0.6]^3, s_k in [0.12, 0.22], |A_k| in [25, 45]
//! texture   = sum_j 8 cos(2 pi (k_j . p) / L_j + psi_j),
//!             6 plane waves, unit direction k_j, wavelength L_j in [7, 20] voxels
//! ```
//!
//! Lobe and wave parameters are drawn from a ChaCha8 stream seeded with
//! `seed`. Every term except the ramp vanishes for `d >= 0.96`, so voxels
//! outside the ellipsoid hold `ramp(z)` only.
//!
//! Region labels: 1 shell core (`|d - 0.86| < 0.06`), 2 blob core
//! (`r < 0.7 rb`), 3..=6 cores of the first four lobes (normalized distance
//! below `s_k`); blob and lobe cores only count where `d < 0.9`, and later
//! identifiers override earlier ones.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Image2D, LabelMap2D, LabelVolume3D, Volume3D};
use crate::math;
use crate::xform::{warp_image_clamped, warp_labels, LinearTransform2D};
use crate::{Error, Result};

/// Smallest accepted phantom dimension.
pub const PHANTOM_MIN_DIM: usize = 32;
/// Isotropic spacing assigned to phantom volumes.
pub const PHANTOM_SPACING_UM: f64 = 25.0;

const RAMP: f64 = 200.0;
const SHELL_AMP: f64 = 60.0;
const SHELL_RADIUS: f64 = 0.86;
const SHELL_HALF_WIDTH: f64 = 0.10;
const WINDOW_START: f64 = 0.70;
const WINDOW_WIDTH: f64 = 0.25;
const BLOB_AMP: f64 = 50.0;
const LOBE_COUNT: usize = 10;
const WAVE_COUNT: usize = 6;
const WAVE_AMP: f64 = 8.0;
const LABEL_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy)]
struct Lobe {
    center: [f64; 3],
    sigma: f64,
    amplitude: f64,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    /// Direction divided by wavelength, in cycles per voxel.
    k: [f64; 3],
    phase: f64,
}

fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        let c = math::cos(PI * s / 2.0);
        c * c
    } else {
        0.0
    }
}

fn window(d: f64) -> f64 {
    if d <= WINDOW_START {
        1.0
    } else {
        bump((d - WINDOW_START) / WINDOW_WIDTH)
    }
}

/// Closed-form phantom; evaluates single voxels, slices or whole volumes.
#[derive(Debug, Clone)]
pub struct PhantomModel {
    dims: [usize; 3],
    lobes: Vec<Lobe>,
    waves: Vec<Wave>,
}

impl PhantomModel {
    pub fn new(nx: usize, ny: usize, nz: usize, seed: u64) -> Result<Self> {
        if nx.min(ny).min(nz) < PHANTOM_MIN_DIM {
            return Err(Error::DimsTooSmall {
                min: PHANTOM_MIN_DIM,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lobes = (0..LOBE_COUNT)
            .map(|_| {
                let center = [
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                ];
                let sigma = rng.random_range(0.12..0.22);
                let magnitude: f64 = rng.random_range(25.0..45.0);
                let amplitude = if rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                };
                Lobe {
                    center,
                    sigma,
                    amplitude,
                }
            })
            .collect();
        let waves = (0..WAVE_COUNT)
            .map(|_| {
                // Uniform direction on the sphere.
                let cos_polar: f64 = rng.random_range(-1.0..1.0);
                let azimuth: f64 = rng.random_range(0.0..2.0 * PI);
                let sin_polar = math::sqrt(1.0 - cos_polar * cos_polar);
                let wavelength: f64 = rng.random_range(7.0..20.0);
                let dir = [
                    sin_polar * math::cos(azimuth),
                    sin_polar * math::sin(azimuth),
                    cos_polar,
                ];
                Wave {
                    k: dir.map(|c| c / wavelength),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        Ok(Self {
            dims: [nx, ny, nz],
            lobes,
            waves,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn center(&self) -> [f64; 3] {
        self.dims.map(|n| (n as f64 - 1.0) / 2.0)
    }

    fn semi_axes(&self) -> [f64; 3] {
        let [nx, ny, nz] = self.dims.map(|n| n as f64);
        [0.40 * nx, 0.36 * ny, 0.62 * nz]
    }

    fn normalized(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let c = self.center();
        let a = self.semi_axes();
        [(x - c[0]) / a[0], (y - c[1]) / a[1], (z - c[2]) / a[2]]
    }

    fn blob_distance(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        let [nx, ny, nz] = self.dims.map(|n| n as f64);
        let c = self.center();
        let t = z / (nz - 1.0);
        let bx = c[0] + 0.15 * nx * (2.0 * t - 1.0);
        let by = c[1] - 0.10 * ny * (2.0 * t - 1.0);
        (math::hypot(x - bx, y - by), 0.10 * nx.min(ny))
    }

    /// Intensity ramp along z; the whole value outside the ellipsoid.
    pub fn ramp(&self, z: f64) -> f64 {
        RAMP * z / (self.dims[2] as f64 - 1.0)
    }

    /// Ellipsoidal radius of a voxel position (1 on the ellipsoid surface).
    pub fn ellipsoid_radius(&self, x: f64, y: f64, z: f64) -> f64 {
        let [u, v, w] = self.normalized(x, y, z);
        math::sqrt(u * u + v * v + w * w)
    }

    pub fn value(&self, x: f64, y: f64, z: f64) -> f64 {
        let n = self.normalized(x, y, z);
        let d = math::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
        let mut v = self.ramp(z) + SHELL_AMP * bump((d - SHELL_RADIUS) / SHELL_HALF_WIDTH);
        let win = window(d);
        if win == 0.0 {
            return v;
        }
        let (r, rb) = self.blob_distance(x, y, z);
        let mut inner = BLOB_AMP * bump(r / rb);
        for lobe in &self.lobes {
            let e2: f64 = (0..3)
                .map(|k| {
                    let e = n[k] - lobe.center[k];
                    e * e
                })
                .sum();
            inner += lobe.amplitude * math::exp(-e2 / (2.0 * lobe.sigma * lobe.sigma));
        }
        for wave in &self.waves {
            let arg = wave.k[0] * x + wave.k[1] * y + wave.k[2] * z;
            inner += WAVE_AMP * math::cos(2.0 * PI * arg + wave.phase);
        }
        v += win * inner;
        v
    }

    pub fn label(&self, x: f64, y: f64, z: f64) -> u16 {
        let n = self.normalized(x, y, z);
        let d = math::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
        let mut label = 0;
        if (d - SHELL_RADIUS).abs() < 0.06 {
            label = 1;
        }
        if d < LABEL_LIMIT {
            let (r, rb) = self.blob_distance(x, y, z);
            if r < 0.7 * rb {
                label = 2;
            }
            for (i, lobe) in self.lobes.iter().take(4).enumerate() {
                let e2: f64 = (0..3)
                    .map(|k| {
                        let e = n[k] - lobe.center[k];
                        e * e
                    })
                    .sum();
                if e2 < lobe.sigma * lobe.sigma {
                    label = 3 + i as u16;
                }
            }
        }
        label
    }

    pub fn region_names() -> BTreeMap<u16, String> {
        ["shell", "blob", "lobe-1", "lobe-2", "lobe-3", "lobe-4"]
            .iter()
            .enumerate()
            .map(|(i, name)| (i as u16 + 1, String::from(*name)))
            .collect()
    }

    /// Coronal slice `z` evaluated directly from the closed form.
    pub fn slice(&self, z: usize) -> Result<Image2D> {
        let [nx, ny, nz] = self.dims;
        if z >= nz {
            return Err(Error::IndexOutOfRange { index: z, len: nz });
        }
        Image2D::from_fn(nx, ny, PHANTOM_SPACING_UM, |x, y| {
            self.value(x as f64, y as f64, z as f64)
        })
    }

    pub fn label_slice(&self, z: usize) -> Result<LabelMap2D> {
        let [nx, ny, nz] = self.dims;
        if z >= nz {
            return Err(Error::IndexOutOfRange { index: z, len: nz });
        }
        let mut labels = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                labels.push(self.label(x as f64, y as f64, z as f64));
            }
        }
        Ok(LabelMap2D::new(nx, ny, labels)?.with_names(Self::region_names()))
    }

    pub fn volume(&self) -> Result<Volume3D> {
        Volume3D::from_fn(self.dims, [PHANTOM_SPACING_UM; 3], |x, y, z| {
            self.value(x as f64, y as f64, z as f64)
        })
    }

    pub fn label_volume(&self) -> Result<LabelVolume3D> {
        let [nx, ny, nz] = self.dims;
        let mut labels = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    labels.push(self.label(x as f64, y as f64, z as f64));
                }
            }
        }
        Ok(LabelVolume3D::new(self.dims, labels)?.with_names(Self::region_names()))
    }
}

/// Phantom volume with isotropic 25 um spacing; deterministic in `seed`.
pub fn make_phantom(nx: usize, ny: usize, nz: usize, seed: u64) -> Result<Volume3D> {
    PhantomModel::new(nx, ny, nz, seed)?.volume()
}

/// Region labels matching [`make_phantom`] for the same arguments.
pub fn make_phantom_labels(nx: usize, ny: usize, nz: usize, seed: u64) -> Result<LabelVolume3D> {
    PhantomModel::new(nx, ny, nz, seed)?.label_volume()
}

/// Per-slice rigid perturbation plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    /// Rotation about the slice center drawn from `[-max, max]` degrees.
    pub max_angle_deg: f64,
    /// Translation components drawn from `[-max, max]` pixels.
    pub max_shift_px: f64,
    /// Noise standard deviation as a fraction of each slice's dynamic range.
    pub noise_fraction: f64,
}

/// Applies an independent random rigid motion and additive Gaussian noise to
/// every coronal slice. Warping replicates edge pixels, so the output has no
/// holes. Returns the perturbed volume and the per-slice transforms (each
/// maps original slice coordinates to perturbed ones).
pub fn perturb_volume(
    vol: &Volume3D,
    spec: &PerturbSpec,
    seed: u64,
) -> Result<(Volume3D, Vec<LinearTransform2D>)> {
    if !(spec.max_angle_deg >= 0.0 && spec.max_shift_px >= 0.0 && spec.noise_fraction >= 0.0) {
        return Err(Error::InvalidParams(alloc::format!(
            "perturbation {spec:?} must be non-negative"
        )));
    }
    let [nx, ny, nz] = vol.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = [(nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0];
    let mut slices = Vec::with_capacity(nz);
    let mut transforms = Vec::with_capacity(nz);
    for z in 0..nz {
        let angle = uniform(&mut rng, spec.max_angle_deg);
        let shift = [
            uniform(&mut rng, spec.max_shift_px),
            uniform(&mut rng, spec.max_shift_px),
        ];
        let t = LinearTransform2D::rigid_about(center, math::deg_to_rad(angle), shift);
        let slice = vol.coronal_slice(z)?;
        let warped = warp_image_clamped(&slice, &t)?;
        let sigma = match warped.valid_range() {
            Some((lo, hi)) => spec.noise_fraction * (hi - lo),
            None => 0.0,
        };
        let noisy = warped.map_values(|v| v + sigma * standard_normal(&mut rng))?;
        slices.push(noisy);
        transforms.push(t);
    }
    let out = Volume3D::from_slices(&slices, vol.spacing_um()[2])?;
    Ok((out, transforms))
}

/// Moves every coronal label slice by the matching transform returned from
/// [`perturb_volume`], so labels stay registered with the perturbed volume.
pub fn perturb_labels(
    labels: &LabelVolume3D,
    transforms: &[LinearTransform2D],
) -> Result<LabelVolume3D> {
    let [nx, ny, nz] = labels.dims();
    if transforms.len() != nz {
        return Err(Error::DimMismatch(alloc::format!(
            "{} transforms for {nz} slices",
            transforms.len()
        )));
    }
    let mut data = Vec::with_capacity(nx * ny * nz);
    for (z, t) in transforms.iter().enumerate() {
        data.extend_from_slice(warp_labels(&labels.coronal_slice(z)?, t)?.labels());
    }
    Ok(LabelVolume3D::new(labels.dims(), data)?.with_names(labels.region_names().clone()))
}

fn uniform(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max == 0.0 {
        0.0
    } else {
        rng.random_range(-max..=max)
    }
}

/// Box-Muller draw from N(0, 1).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * PI * u2)
}
