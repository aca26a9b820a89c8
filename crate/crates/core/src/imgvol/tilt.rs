use alloc::format;
use alloc::vec::Vec;

use super::{LabelVolume3D, Volume3D};
use crate::math;
use crate::{Error, Result};

/// Largest accepted tilt magnitude, in degrees.
pub const MAX_TILT_DEG: f64 = 45.0;

const EDGE_EPS: f64 = 1e-9;

/// Cutting-plane tilt: `theta_deg` about the left-right axis (x),
/// `phi_deg` about the infero-superior axis (y).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TiltSpec {
    pub theta_deg: f64,
    pub phi_deg: f64,
}

impl TiltSpec {
    pub fn new(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        let t = Self { theta_deg, phi_deg };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("theta", self.theta_deg), ("phi", self.phi_deg)] {
            if !a.is_finite() || a.abs() > MAX_TILT_DEG {
                return Err(Error::InvalidTilt(format!(
                    "{name} = {a} must be finite with magnitude <= {MAX_TILT_DEG}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.theta_deg == 0.0 && self.phi_deg == 0.0
    }

    /// `R = Ry(phi) * Rx(theta)`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (st, ct) = (
            math::sin(math::deg_to_rad(self.theta_deg)),
            math::cos(math::deg_to_rad(self.theta_deg)),
        );
        let (sp, cp) = (
            math::sin(math::deg_to_rad(self.phi_deg)),
            math::cos(math::deg_to_rad(self.phi_deg)),
        );
        let rx = [[1.0, 0.0, 0.0], [0.0, ct, -st], [0.0, st, ct]];
        let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| ry[i][k] * rx[k][j]).sum();
            }
        }
        r
    }
}

/// For every output voxel `p`, the source position `R^T (p - c) + c`.
fn source_positions(dims: [usize; 3], tilt: &TiltSpec) -> impl Iterator<Item = [f64; 3]> {
    let r = tilt.rotation();
    let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
    let [nx, ny, nz] = dims;
    (0..nz).flat_map(move |z| {
        (0..ny).flat_map(move |y| {
            (0..nx).map(move |x| {
                let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
                let mut q = [0.0; 3];
                for (j, qj) in q.iter_mut().enumerate() {
                    *qj = r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2] + c[j];
                }
                q
            })
        })
    })
}

fn inside(q: f64, n: usize) -> bool {
    q >= -EDGE_EPS && q <= (n - 1) as f64 + EDGE_EPS
}

fn trilinear(vol: &Volume3D, q: [f64; 3]) -> Option<f64> {
    let dims = vol.dims();
    if !(0..3).all(|k| inside(q[k], dims[k])) {
        return None;
    }
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    let mut next = [0usize; 3];
    for k in 0..3 {
        let v = q[k].clamp(0.0, (dims[k] - 1) as f64);
        base[k] = math::floor(v) as usize;
        frac[k] = v - base[k] as f64;
        next[k] = if frac[k] > 0.0 { base[k] + 1 } else { base[k] };
    }
    let at = |x: usize, y: usize, z: usize| vol.voxel(x, y, z);
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let plane = |z: usize| {
        let top = lerp(at(base[0], base[1], z), at(next[0], base[1], z), frac[0]);
        let bottom = lerp(at(base[0], next[1], z), at(next[0], next[1], z), frac[0]);
        lerp(top, bottom, frac[1])
    };
    Some(lerp(plane(base[2]), plane(next[2]), frac[2]))
}

/// Re-slices an isotropic volume under a rotation about its center.
///
/// Output voxel `p` takes the trilinear interpolation of the input at
/// `R^-1 (p - c) + c` with `R = Ry(phi) Rx(theta)`; samples outside the
/// input become 0. Dimensions and spacing are preserved.
pub fn simulate_tilt(vol: &Volume3D, tilt: &TiltSpec) -> Result<Volume3D> {
    tilt.validate()?;
    if !vol.is_isotropic() {
        return Err(Error::AnisotropicVolume(vol.spacing_um()));
    }
    if tilt.is_zero() {
        return Ok(vol.clone());
    }
    let data: Vec<f64> = source_positions(vol.dims(), tilt)
        .map(|q| trilinear(vol, q).unwrap_or(0.0))
        .collect();
    Volume3D::new(vol.dims(), vol.spacing_um(), data)
}

/// Nearest-neighbour counterpart of [`simulate_tilt`] for label volumes;
/// samples outside the input become background.
pub fn simulate_tilt_labels(labels: &LabelVolume3D, tilt: &TiltSpec) -> Result<LabelVolume3D> {
    tilt.validate()?;
    if tilt.is_zero() {
        return Ok(labels.clone());
    }
    let dims = labels.dims();
    let data: Vec<u16> = source_positions(dims, tilt)
        .map(|q| {
            if !(0..3).all(|k| inside(q[k], dims[k])) {
                return 0;
            }
            let idx = q.map(|v| math::round(v.max(0.0)) as usize);
            labels.label(
                idx[0].min(dims[0] - 1),
                idx[1].min(dims[1] - 1),
                idx[2].min(dims[2] - 1),
            )
        })
        .collect();
    Ok(LabelVolume3D::new(dims, data)?.with_names(labels.region_names().clone()))
}
