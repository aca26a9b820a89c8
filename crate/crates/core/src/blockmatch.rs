//! Multi-resolution block-matching registration.
//!
//! At every pyramid level, coarse to fine, the floating image is resampled
//! through the current transform, the most textured reference blocks are
//! matched by exhaustive integer search maximizing the correlation
//! coefficient, and a least-trimmed-squares fit of the displacement field
//! updates the transform.
//!
//! Transforms returned here map reference pixel coordinates to floating
//! pixel coordinates: `flt(T p)` is aligned with `ref(p)`. Use
//! [`RegistrationResult::resample`] (or `warp_image(flt, invert(T))`) to
//! bring the floating image onto the reference grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::imgvol::Image2D;
use crate::math;
use crate::metrics::CorrelationAccumulator;
use crate::xform::{
    compose, fit_correspondences, invert, warp_image, Correspondence, LinearTransform2D, Point2,
    TransformKind,
};
use crate::{Error, Result};

/// Smallest side allowed for a downsampled pyramid level.
pub const MIN_PYRAMID_SIDE: usize = 16;

/// Maximum number of trimming rounds in the LTS estimator.
pub const LTS_MAX_ROUNDS: usize = 10;

/// An update whose largest corner motion is below this (pixels) stops the
/// iterations of a level.
const CONVERGENCE_PX: f64 = 0.05;

/// Residuals this close to the trimming threshold are kept with it.
const LTS_TIE_TOLERANCE: f64 = 1e-9;

/// Block-matching parameters. The defaults suit 25 um coronal mouse slices
/// of a few hundred pixels per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatchParams {
    pub pyramid_levels: usize,
    pub block_size: usize,
    pub block_stride: usize,
    /// Exhaustive search half-width in pixels, at every level.
    pub search_radius: usize,
    /// Fraction of the highest-variance blocks that are matched.
    pub variance_keep_fraction: f64,
    /// Fraction of correspondences kept by the trimmed fit.
    pub lts_keep_fraction: f64,
    pub iterations_per_level: usize,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            block_size: 8,
            block_stride: 8,
            search_radius: 4,
            variance_keep_fraction: 0.5,
            lts_keep_fraction: 0.5,
            iterations_per_level: 4,
        }
    }
}

impl BlockMatchParams {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        let problem = if self.pyramid_levels < 1 {
            "pyramid_levels must be >= 1"
        } else if self.block_size < 4 {
            "block_size must be >= 4"
        } else if self.block_stride < 1 {
            "block_stride must be >= 1"
        } else if self.search_radius < 1 {
            "search_radius must be >= 1"
        } else if !frac_ok(self.variance_keep_fraction) {
            "variance_keep_fraction must lie in (0, 1]"
        } else if !frac_ok(self.lts_keep_fraction) {
            "lts_keep_fraction must lie in (0, 1]"
        } else if self.iterations_per_level < 1 {
            "iterations_per_level must be >= 1"
        } else {
            return Ok(());
        };
        Err(Error::InvalidParams(problem.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps reference pixel coordinates to floating pixel coordinates.
    pub transform: LinearTransform2D,
    /// Correspondences matched in the last iteration of each level, finest first.
    pub correspondences_used: Vec<usize>,
    /// True when the last finest-level update moved no corner by more than 0.05 px.
    pub converged: bool,
    /// RMS residual (pixels) of the kept correspondences of the reported fit.
    pub residual_rms: f64,
}

impl RegistrationResult {
    /// Floating image resampled onto the reference grid.
    pub fn resample(&self, flt: &Image2D) -> Result<Image2D> {
        warp_image(flt, &invert(&self.transform)?)
    }
}

/// Mean pyramid: level 0 is the input; each further level halves both
/// dimensions (odd trailing rows/columns dropped) by averaging the valid
/// pixels of each 2x2 cell. A coarse pixel is valid iff at least one
/// contributor is.
pub fn build_pyramid(img: &Image2D, levels: usize) -> Result<Vec<Image2D>> {
    if levels < 1 {
        return Err(Error::InvalidParams(
            "pyramid needs at least one level".into(),
        ));
    }
    let shrink = 1usize << (levels - 1).min(usize::BITS as usize - 1);
    if levels > 1
        && (img.width() / shrink < MIN_PYRAMID_SIDE || img.height() / shrink < MIN_PYRAMID_SIDE)
    {
        return Err(Error::TooManyLevels {
            levels,
            min_side: MIN_PYRAMID_SIDE,
        });
    }
    let mut pyramid = Vec::with_capacity(levels);
    pyramid.push(img.clone());
    for _ in 1..levels {
        let prev = pyramid.last().expect("pyramid has a level");
        pyramid.push(downsample(prev)?);
    }
    Ok(pyramid)
}

fn downsample(img: &Image2D) -> Result<Image2D> {
    let (w, h) = (img.width() / 2, img.height() / 2);
    let mut data = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut n) = (0.0, 0u32);
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (sx, sy) = (2 * x + dx, 2 * y + dy);
                if img.is_valid(sx, sy) {
                    sum += img.value(sx, sy);
                    n += 1;
                }
            }
            if n > 0 {
                data.push(sum / n as f64);
                mask.push(true);
            } else {
                data.push(0.0);
                mask.push(false);
            }
        }
    }
    Image2D::with_mask(w, h, img.spacing_um() * 2.0, data, mask)
}

struct BlockCandidate {
    x0: usize,
    y0: usize,
    variance: f64,
}

fn block_variance(img: &Image2D, x0: usize, y0: usize, size: usize) -> Option<f64> {
    let (mut n, mut s, mut ss) = (0usize, 0.0, 0.0);
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            if img.is_valid(x, y) {
                let v = img.value(x, y);
                n += 1;
                s += v;
                ss += v * v;
            }
        }
    }
    // Skip blocks that are more than half invalid.
    if 2 * n < size * size {
        return None;
    }
    let mean = s / n as f64;
    let var = ss / n as f64 - mean * mean;
    (var > 1e-12 * (mean * mean).max(f64::MIN_POSITIVE)).then_some(var)
}

/// Block matching of `flt` against `reference` (equal dimensions).
///
/// The reference is tiled by `block_size`/`block_stride`; the
/// `variance_keep_fraction` most textured blocks are kept and, for each,
/// every integer displacement within `search_radius` is scored by the
/// correlation coefficient over co-valid pixels. Ties prefer the smallest
/// displacement, then the lexicographically smallest `(dy, dx)`. The
/// winning displacement is refined per axis by a parabola through the
/// neighbouring scores. Correspondences come out in block order.
pub fn match_blocks(
    reference: &Image2D,
    flt: &Image2D,
    params: &BlockMatchParams,
) -> Result<Vec<Correspondence>> {
    params.validate()?;
    if (reference.width(), reference.height()) != (flt.width(), flt.height()) {
        return Err(Error::DimMismatch(format!(
            "reference {}x{} vs floating {}x{}",
            reference.width(),
            reference.height(),
            flt.width(),
            flt.height()
        )));
    }
    let (w, h) = (reference.width(), reference.height());
    let b = params.block_size;
    if w < b || h < b {
        return Err(Error::NoValidBlocks);
    }
    let mut candidates = Vec::new();
    for y0 in (0..=h - b).step_by(params.block_stride) {
        for x0 in (0..=w - b).step_by(params.block_stride) {
            if let Some(variance) = block_variance(reference, x0, y0, b) {
                candidates.push(BlockCandidate { x0, y0, variance });
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoValidBlocks);
    }
    let keep = (math::ceil(params.variance_keep_fraction * candidates.len() as f64) as usize)
        .clamp(1, candidates.len());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        candidates[j]
            .variance
            .total_cmp(&candidates[i].variance)
            .then(i.cmp(&j))
    });
    order.truncate(keep);
    order.sort_unstable();

    let r = params.search_radius as isize;
    let side = 2 * params.search_radius + 1;
    let half = (b as f64 - 1.0) / 2.0;
    let sums = WindowSums::new(flt);
    let mut out = Vec::with_capacity(order.len());
    let mut scores: Vec<Option<f64>> = vec![None; side * side];
    let mut centered = vec![0.0; b * b];
    for &ci in &order {
        let c = &candidates[ci];
        let fully_valid = (0..b).all(|j| (0..b).all(|i| reference.is_valid(c.x0 + i, c.y0 + j)));
        let mut saa = 0.0;
        if fully_valid {
            let mut mean = 0.0;
            for j in 0..b {
                for i in 0..b {
                    let v = reference.value(c.x0 + i, c.y0 + j);
                    centered[j * b + i] = v;
                    mean += v;
                }
            }
            mean /= (b * b) as f64;
            for v in centered.iter_mut() {
                *v -= mean;
                saa += *v * *v;
            }
        }
        let mut best: Option<(f64, isize, isize, isize)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let fx = c.x0 as isize + dx;
                let fy = c.y0 as isize + dy;
                let cc = if fully_valid && sums.all_valid(fx, fy, b) {
                    let (fx, fy) = (fx as usize, fy as usize);
                    centered_correlation(&centered, saa, flt, fx, fy, b, sums.window(fx, fy, b))
                } else {
                    block_correlation(reference, flt, c.x0, c.y0, b, dx, dy)
                };
                scores[((dy + r) as usize) * side + (dx + r) as usize] = cc;
                let Some(cc) = cc else { continue };
                let d2 = dx * dx + dy * dy;
                let better = match best {
                    None => true,
                    Some((bc, bd2, _, _)) => cc > bc || (cc == bc && d2 < bd2),
                };
                if better {
                    best = Some((cc, d2, dx, dy));
                }
            }
        }
        if let Some((cc, _, dx, dy)) = best {
            let at = |ddx: isize, ddy: isize| -> Option<f64> {
                let (x, y) = (dx + ddx + r, dy + ddy + r);
                if x < 0 || y < 0 || x >= side as isize || y >= side as isize {
                    return None;
                }
                scores[y as usize * side + x as usize]
            };
            // An exact integer match needs no refinement.
            let (sx, sy) = if cc >= 1.0 - 1e-12 {
                (0.0, 0.0)
            } else {
                (
                    parabolic_offset(at(-1, 0), cc, at(1, 0)),
                    parabolic_offset(at(0, -1), cc, at(0, 1)),
                )
            };
            let center = Point2::new(c.x0 as f64 + half, c.y0 as f64 + half);
            let moved = Point2::new(center.x + dx as f64 + sx, center.y + dy as f64 + sy);
            out.push(Correspondence {
                ref_point: center,
                flt_point: moved,
                weight: cc.max(0.0),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NoValidBlocks);
    }
    Ok(out)
}

/// Summed-area tables of values, squared values and valid counts.
struct WindowSums {
    stride: usize,
    width: usize,
    height: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
    valid: Vec<u32>,
}

impl WindowSums {
    fn new(img: &Image2D) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut s1 = vec![0.0; stride * (h + 1)];
        let mut s2 = vec![0.0; stride * (h + 1)];
        let mut valid = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let (mut r1, mut r2, mut rv) = (0.0, 0.0, 0u32);
            for x in 0..w {
                if img.is_valid(x, y) {
                    let v = img.value(x, y);
                    r1 += v;
                    r2 += v * v;
                    rv += 1;
                }
                let k = (y + 1) * stride + x + 1;
                s1[k] = s1[k - stride] + r1;
                s2[k] = s2[k - stride] + r2;
                valid[k] = valid[k - stride] + rv;
            }
        }
        Self {
            stride,
            width: w,
            height: h,
            s1,
            s2,
            valid,
        }
    }

    fn rect<T: Copy + core::ops::Add<Output = T> + core::ops::Sub<Output = T>>(
        &self,
        t: &[T],
        x: usize,
        y: usize,
        b: usize,
    ) -> T {
        let s = self.stride;
        t[(y + b) * s + x + b] + t[y * s + x] - t[y * s + x + b] - t[(y + b) * s + x]
    }

    fn all_valid(&self, x: isize, y: isize, b: usize) -> bool {
        if x < 0 || y < 0 || x as usize + b > self.width || y as usize + b > self.height {
            return false;
        }
        self.rect(&self.valid, x as usize, y as usize, b) as usize == b * b
    }

    /// Sum and sum of squares over the `b x b` window at `(x, y)`.
    fn window(&self, x: usize, y: usize, b: usize) -> (f64, f64) {
        (self.rect(&self.s1, x, y, b), self.rect(&self.s2, x, y, b))
    }
}

/// Correlation of a mean-centered, fully valid reference block with a
/// fully valid floating window whose sum and sum of squares are known.
fn centered_correlation(
    centered: &[f64],
    saa: f64,
    flt: &Image2D,
    fx: usize,
    fy: usize,
    b: usize,
    (sb, sbb): (f64, f64),
) -> Option<f64> {
    let w = flt.width();
    let data = flt.data();
    let mut sab = 0.0;
    for j in 0..b {
        let row = &data[(fy + j) * w + fx..(fy + j) * w + fx + b];
        let a = &centered[j * b..(j + 1) * b];
        sab += a.iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
    }
    let vb = sbb - sb * sb / (b * b) as f64;
    if !(vb > 1e-12 * sbb.abs().max(f64::MIN_POSITIVE)) || !(saa > 0.0) {
        return None;
    }
    Some((sab / math::sqrt(saa * vb)).clamp(-1.0, 1.0))
}

/// Correlation of a reference block with the floating block displaced by
/// `(dx, dy)`, over co-valid pixels; `None` if fewer than half the block
/// pixels overlap or either side is flat.
fn block_correlation(
    reference: &Image2D,
    flt: &Image2D,
    x0: usize,
    y0: usize,
    b: usize,
    dx: isize,
    dy: isize,
) -> Option<f64> {
    let (w, h) = (flt.width() as isize, flt.height() as isize);
    let mut acc = CorrelationAccumulator::default();
    for j in 0..b {
        let ry = y0 + j;
        let fy = ry as isize + dy;
        if fy < 0 || fy >= h {
            continue;
        }
        for i in 0..b {
            let rx = x0 + i;
            let fx = rx as isize + dx;
            if fx < 0 || fx >= w {
                continue;
            }
            let (fx, fy) = (fx as usize, fy as usize);
            if reference.is_valid(rx, ry) && flt.is_valid(fx, fy) {
                acc.push(reference.value(rx, ry), flt.value(fx, fy));
            }
        }
    }
    if 2 * acc.count() < b * b {
        return None;
    }
    acc.finish().ok()
}

/// Vertex of the parabola through three equally spaced scores around a
/// maximum, as an offset in `[-0.5, 0.5]`; 0 when a neighbour is missing.
fn parabolic_offset(left: Option<f64>, center: f64, right: Option<f64>) -> f64 {
    let (Some(l), Some(r)) = (left, right) else {
        return 0.0;
    };
    let curvature = l - 2.0 * center + r;
    if !(curvature < 0.0) {
        return 0.0;
    }
    (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
}

/// Outcome of a trimmed fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LtsFit {
    pub transform: LinearTransform2D,
    /// Indices of the correspondences used by the final fit.
    pub kept: Vec<usize>,
    pub residual_rms: f64,
}

/// Least-trimmed-squares fit: fit on everything, keep the `ceil(keep * n)`
/// smallest residuals (plus exact ties), refit, and repeat until the kept
/// set stops changing or [`LTS_MAX_ROUNDS`] rounds have run.
pub fn lts_fit(corrs: &[Correspondence], kind: TransformKind, keep: f64) -> Result<LtsFit> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "keep fraction {keep} outside (0, 1]"
        )));
    }
    let n = corrs.len();
    if n < kind.min_points() {
        return Err(Error::DegenerateConfiguration(format!(
            "{} fit needs {} correspondences, got {n}",
            kind.name(),
            kind.min_points()
        )));
    }
    let target = (math::ceil(keep * n as f64) as usize).clamp(kind.min_points(), n);
    let mut kept: Vec<usize> = (0..n).collect();
    let mut transform = fit_correspondences(corrs, kind)?;
    for _ in 0..LTS_MAX_ROUNDS {
        let residuals: Vec<f64> = corrs.iter().map(|c| c.residual(&transform)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| residuals[i].total_cmp(&residuals[j]).then(i.cmp(&j)));
        let threshold = residuals[order[target - 1]] + LTS_TIE_TOLERANCE;
        let mut next: Vec<usize> = (0..n).filter(|&i| residuals[i] <= threshold).collect();
        next.sort_unstable();
        if next == kept {
            break;
        }
        let subset: Vec<Correspondence> = next.iter().map(|&i| corrs[i]).collect();
        transform = fit_correspondences(&subset, kind)?;
        kept = next;
    }
    let sq: f64 = kept
        .iter()
        .map(|&i| {
            let r = corrs[i].residual(&transform);
            r * r
        })
        .sum();
    let residual_rms = math::sqrt(sq / kept.len() as f64);
    Ok(LtsFit {
        transform,
        kept,
        residual_rms,
    })
}

/// See [`lts_fit`].
pub fn estimate_transform_lts(
    corrs: &[Correspondence],
    kind: TransformKind,
    keep: f64,
) -> Result<LinearTransform2D> {
    lts_fit(corrs, kind, keep).map(|f| f.transform)
}

fn restore_kind(t: LinearTransform2D, kind: TransformKind) -> LinearTransform2D {
    match kind {
        // Rebuild from the angle so accumulated products stay orthonormal.
        TransformKind::Rigid => LinearTransform2D::rigid(t.angle(), t.translation()),
        TransformKind::Affine => t.as_affine(),
    }
}

/// Registers `flt` onto `reference`.
///
/// Affine registration without `init` starts from the rigid result. A
/// coarse level whose matching fails is skipped; a failure on the first
/// iteration of the finest level is returned. Affine updates that leave
/// the deformation guard (`det > 0`, `|ln det| <= ln 4`) fail with
/// [`Error::ExcessiveDeformation`]. Among the finest-level iterations, the
/// one with the smallest trimmed residual is reported.
pub fn register(
    reference: &Image2D,
    flt: &Image2D,
    kind: TransformKind,
    params: &BlockMatchParams,
    init: Option<&LinearTransform2D>,
) -> Result<RegistrationResult> {
    params.validate()?;
    if (reference.width(), reference.height()) != (flt.width(), flt.height()) {
        return Err(Error::DimMismatch(format!(
            "reference {}x{} vs floating {}x{}",
            reference.width(),
            reference.height(),
            flt.width(),
            flt.height()
        )));
    }
    let start = match (kind, init) {
        (TransformKind::Rigid, None) => LinearTransform2D::identity(TransformKind::Rigid),
        (TransformKind::Rigid, Some(t)) if t.kind() == TransformKind::Rigid => *t,
        (TransformKind::Rigid, Some(_)) => {
            return Err(Error::InvalidParams(
                "rigid registration needs a rigid init".into(),
            ))
        }
        (TransformKind::Affine, Some(t)) => t.as_affine(),
        (TransformKind::Affine, None) => {
            register(reference, flt, TransformKind::Rigid, params, None)?
                .transform
                .as_affine()
        }
    };
    let levels = params.pyramid_levels;
    let ref_pyr = build_pyramid(reference, levels)?;
    let flt_pyr = build_pyramid(flt, levels)?;

    let mut t = start;
    for _ in 1..levels {
        t = t.to_coarser();
    }
    let mut used = vec![0usize; levels];
    let mut best: Option<(LinearTransform2D, f64)> = None;
    let mut converged = false;
    for level in (0..levels).rev() {
        let (r, f) = (&ref_pyr[level], &flt_pyr[level]);
        let finest = level == 0;
        for _ in 0..params.iterations_per_level {
            let step = warp_image(f, &invert(&t)?)
                .and_then(|warped| match_blocks(r, &warped, params))
                .and_then(|corrs| {
                    used[level] = corrs.len();
                    lts_fit(&corrs, kind, params.lts_keep_fraction)
                });
            let fit = match step {
                Ok(fit) => fit,
                Err(e) if finest && best.is_none() => return Err(e),
                Err(_) => break,
            };
            let next = restore_kind(compose(&t, &fit.transform), kind);
            if kind == TransformKind::Affine && !next.within_deformation_guard() {
                return Err(Error::ExcessiveDeformation {
                    determinant: next.determinant(),
                });
            }
            let motion = fit.transform.max_corner_error(
                &LinearTransform2D::identity(kind),
                r.width(),
                r.height(),
            );
            t = next;
            if finest {
                if best.as_ref().is_none_or(|b| fit.residual_rms < b.1) {
                    best = Some((t, fit.residual_rms));
                }
                converged = motion < CONVERGENCE_PX;
            }
            if motion < CONVERGENCE_PX {
                break;
            }
        }
        if level > 0 {
            t = t.to_finer();
        }
    }
    let (transform, residual_rms) = best.ok_or(Error::NoValidBlocks)?;
    Ok(RegistrationResult {
        transform,
        correspondences_used: used,
        converged,
        residual_rms,
    })
}
