//! Linear 2D transforms on pixel coordinates: rigid and affine maps, their
//! weighted least-squares estimation from point correspondences, and
//! backward image warping.

use alloc::format;
use alloc::vec::Vec;

use crate::imgvol::{Image2D, LabelMap2D};
use crate::math;
use crate::{Error, Result};

/// Tolerance on the rigid constraint (`M^T M = I`, `det M = 1`).
pub const RIGID_TOLERANCE: f64 = 1e-9;

/// Largest accepted `|ln det|` of a registration affine map (a factor 4 in area).
pub const MAX_LOG_DET: f64 = core::f64::consts::LN_2 * 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        math::hypot(self.x - other.x, self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformKind {
    Rigid,
    Affine,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Rigid => "rigid",
            TransformKind::Affine => "affine",
        }
    }

    /// Minimum number of correspondences needed to fit the model.
    pub fn min_points(self) -> usize {
        match self {
            TransformKind::Rigid => 2,
            TransformKind::Affine => 3,
        }
    }
}

impl core::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" => Ok(TransformKind::Rigid),
            "affine" => Ok(TransformKind::Affine),
            other => Err(Error::InvalidParams(format!(
                "unknown transform kind '{other}'"
            ))),
        }
    }
}

/// `p -> matrix * p + translation` on pixel coordinates.
///
/// Rigid transforms keep `matrix` a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTransform2D {
    kind: TransformKind,
    matrix: [[f64; 2]; 2],
    translation: [f64; 2],
}

impl LinearTransform2D {
    pub const fn identity(kind: TransformKind) -> Self {
        Self {
            kind,
            matrix: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    /// Rotation by `angle_rad` about the origin followed by `translation`.
    pub fn rigid(angle_rad: f64, translation: [f64; 2]) -> Self {
        let (s, c) = (math::sin(angle_rad), math::cos(angle_rad));
        Self {
            kind: TransformKind::Rigid,
            matrix: [[c, -s], [s, c]],
            translation,
        }
    }

    /// Rotation by `angle_rad` about `center`, then a shift.
    pub fn rigid_about(center: [f64; 2], angle_rad: f64, shift: [f64; 2]) -> Self {
        let r = Self::rigid(angle_rad, [0.0, 0.0]);
        let rc = r.apply(Point2::new(center[0], center[1]));
        Self::rigid(
            angle_rad,
            [center[0] - rc.x + shift[0], center[1] - rc.y + shift[1]],
        )
    }

    pub const fn affine(matrix: [[f64; 2]; 2], translation: [f64; 2]) -> Self {
        Self {
            kind: TransformKind::Affine,
            matrix,
            translation,
        }
    }

    /// Builds a transform of the given kind, checking the rigid constraint.
    pub fn from_parts(
        kind: TransformKind,
        matrix: [[f64; 2]; 2],
        translation: [f64; 2],
    ) -> Result<Self> {
        let t = Self {
            kind,
            matrix,
            translation,
        };
        if matrix
            .iter()
            .flatten()
            .chain(&translation)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParams(
                "transform has non-finite entries".into(),
            ));
        }
        if kind == TransformKind::Rigid && !t.is_proper_rotation(RIGID_TOLERANCE) {
            return Err(Error::InvalidParams(format!(
                "matrix {matrix:?} is not a proper rotation"
            )));
        }
        Ok(t)
    }

    #[inline]
    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    #[inline]
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.matrix
    }

    #[inline]
    pub fn translation(&self) -> [f64; 2] {
        self.translation
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Rotation angle of the linear part (exact for rigid maps).
    pub fn angle(&self) -> f64 {
        math::atan2(self.matrix[1][0], self.matrix[0][0])
    }

    /// Same map tagged as affine.
    pub fn as_affine(&self) -> Self {
        Self {
            kind: TransformKind::Affine,
            ..*self
        }
    }

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        let m = &self.matrix;
        Point2 {
            x: m[0][0] * p.x + m[0][1] * p.y + self.translation[0],
            y: m[1][0] * p.x + m[1][1] * p.y + self.translation[1],
        }
    }

    pub fn is_proper_rotation(&self, tol: f64) -> bool {
        let m = &self.matrix;
        let c0 = m[0][0] * m[0][0] + m[1][0] * m[1][0];
        let c1 = m[0][1] * m[0][1] + m[1][1] * m[1][1];
        let cross = m[0][0] * m[0][1] + m[1][0] * m[1][1];
        (c0 - 1.0).abs() <= tol
            && (c1 - 1.0).abs() <= tol
            && cross.abs() <= tol
            && (self.determinant() - 1.0).abs() <= tol
    }

    /// True when the determinant is positive and `|ln det| <= ln 4`.
    pub fn within_deformation_guard(&self) -> bool {
        let det = self.determinant();
        det > 0.0 && math::ln(det).abs() <= MAX_LOG_DET
    }

    /// Corners of a `width x height` raster, in pixel-center coordinates.
    pub fn corners(width: usize, height: usize) -> [Point2; 4] {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        [
            Point2::new(0.0, 0.0),
            Point2::new(w, 0.0),
            Point2::new(0.0, h),
            Point2::new(w, h),
        ]
    }

    /// Mean distance between the images of the four raster corners.
    pub fn mean_corner_error(&self, other: &Self, width: usize, height: usize) -> f64 {
        Self::corners(width, height)
            .iter()
            .map(|&c| self.apply(c).distance(other.apply(c)))
            .sum::<f64>()
            / 4.0
    }

    /// Largest corner displacement relative to `other`.
    pub fn max_corner_error(&self, other: &Self, width: usize, height: usize) -> f64 {
        Self::corners(width, height)
            .iter()
            .map(|&c| self.apply(c).distance(other.apply(c)))
            .fold(0.0, f64::max)
    }

    /// Expresses a transform of a pyramid level in the next coarser level,
    /// where fine coordinates relate to coarse ones by `f = 2 c + 0.5`.
    pub(crate) fn to_coarser(&self) -> Self {
        let m = &self.matrix;
        let h = 0.5;
        let t = [
            (self.translation[0] + (m[0][0] - 1.0) * h + m[0][1] * h) / 2.0,
            (self.translation[1] + m[1][0] * h + (m[1][1] - 1.0) * h) / 2.0,
        ];
        Self {
            translation: t,
            ..*self
        }
    }

    /// Inverse of [`Self::to_coarser`].
    pub(crate) fn to_finer(&self) -> Self {
        let m = &self.matrix;
        let h = 0.5;
        let t = [
            2.0 * self.translation[0] + (1.0 - m[0][0]) * h - m[0][1] * h,
            2.0 * self.translation[1] - m[1][0] * h + (1.0 - m[1][1]) * h,
        ];
        Self {
            translation: t,
            ..*self
        }
    }
}

/// `compose(a, b)` applies `b` first, then `a`. Rigid iff both are rigid.
pub fn compose(a: &LinearTransform2D, b: &LinearTransform2D) -> LinearTransform2D {
    let (ma, mb) = (&a.matrix, &b.matrix);
    let mut m = [[0.0; 2]; 2];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = ma[i][0] * mb[0][j] + ma[i][1] * mb[1][j];
        }
    }
    let tb = a.apply(Point2::new(b.translation[0], b.translation[1]));
    let kind = if a.kind == TransformKind::Rigid && b.kind == TransformKind::Rigid {
        TransformKind::Rigid
    } else {
        TransformKind::Affine
    };
    LinearTransform2D {
        kind,
        matrix: m,
        translation: [tb.x, tb.y],
    }
}

pub fn invert(t: &LinearTransform2D) -> Result<LinearTransform2D> {
    let m = &t.matrix;
    let det = t.determinant();
    let scale = m.iter().flatten().map(|v| v * v).sum::<f64>();
    if det == 0.0 || !det.is_finite() || det.abs() <= 1e-12 * scale {
        return Err(Error::SingularTransform);
    }
    let inv = if t.kind == TransformKind::Rigid {
        [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
    } else {
        [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ]
    };
    let tr = &t.translation;
    let translation = [
        -(inv[0][0] * tr[0] + inv[0][1] * tr[1]),
        -(inv[1][0] * tr[0] + inv[1][1] * tr[1]),
    ];
    Ok(LinearTransform2D {
        kind: t.kind,
        matrix: inv,
        translation,
    })
}

/// A block-matching pairing: the block at `ref_point` in the reference
/// image was found at `flt_point` in the floating image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub ref_point: Point2,
    pub flt_point: Point2,
    /// Match confidence in `[0, 1]`.
    pub weight: f64,
}

impl Correspondence {
    pub fn new(ref_point: Point2, flt_point: Point2, weight: f64) -> Result<Self> {
        let finite = [ref_point.x, ref_point.y, flt_point.x, flt_point.y]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidParams(format!(
                "correspondence {ref_point:?} -> {flt_point:?} (w = {weight}) is invalid"
            )));
        }
        Ok(Self {
            ref_point,
            flt_point,
            weight,
        })
    }

    /// `|T(ref) - flt|`.
    pub fn residual(&self, t: &LinearTransform2D) -> f64 {
        t.apply(self.ref_point).distance(self.flt_point)
    }
}

struct WeightedMoments {
    ref_mean: Point2,
    flt_mean: Point2,
    /// `sum w r r^T` over centered reference points.
    rr: [[f64; 2]; 2],
    /// `sum w f r^T` over centered points.
    fr: [[f64; 2]; 2],
    active: usize,
}

fn moments(pairs: &[Correspondence]) -> Result<WeightedMoments> {
    let total: f64 = pairs.iter().map(|c| c.weight).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateConfiguration(
            "total correspondence weight is zero".into(),
        ));
    }
    let mut ref_mean = Point2::default();
    let mut flt_mean = Point2::default();
    for c in pairs {
        ref_mean.x += c.weight * c.ref_point.x;
        ref_mean.y += c.weight * c.ref_point.y;
        flt_mean.x += c.weight * c.flt_point.x;
        flt_mean.y += c.weight * c.flt_point.y;
    }
    ref_mean.x /= total;
    ref_mean.y /= total;
    flt_mean.x /= total;
    flt_mean.y /= total;
    let mut rr = [[0.0; 2]; 2];
    let mut fr = [[0.0; 2]; 2];
    for c in pairs {
        let r = [c.ref_point.x - ref_mean.x, c.ref_point.y - ref_mean.y];
        let f = [c.flt_point.x - flt_mean.x, c.flt_point.y - flt_mean.y];
        for i in 0..2 {
            for j in 0..2 {
                rr[i][j] += c.weight * r[i] * r[j];
                fr[i][j] += c.weight * f[i] * r[j];
            }
        }
    }
    let active = pairs.iter().filter(|c| c.weight > 0.0).count();
    Ok(WeightedMoments {
        ref_mean,
        flt_mean,
        rr,
        fr,
        active,
    })
}

/// Weighted least-squares rigid fit minimizing `sum w |T(ref) - flt|^2`.
///
/// Closed form: the angle is the `atan2` of the weighted cross-covariance
/// of the centered point sets; the translation aligns weighted centroids.
/// Never returns a reflection.
pub fn rigid_from_correspondences(pairs: &[Correspondence]) -> Result<LinearTransform2D> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateConfiguration(format!(
            "rigid fit needs 2 correspondences, got {}",
            pairs.len()
        )));
    }
    let mo = moments(pairs)?;
    let spread = mo.rr[0][0] + mo.rr[1][1];
    let total_weight: f64 = pairs.iter().map(|c| c.weight).sum();
    let magnitude = mo.ref_mean.x * mo.ref_mean.x + mo.ref_mean.y * mo.ref_mean.y + 1.0;
    if mo.active < 2 || !(spread > 1e-12 * total_weight * magnitude) {
        return Err(Error::DegenerateConfiguration(
            "rigid fit needs two distinct reference points".into(),
        ));
    }
    let dot = mo.fr[0][0] + mo.fr[1][1];
    let cross = mo.fr[1][0] - mo.fr[0][1];
    let angle = math::atan2(cross, dot);
    let rot = LinearTransform2D::rigid(angle, [0.0, 0.0]);
    let rc = rot.apply(mo.ref_mean);
    Ok(LinearTransform2D::rigid(
        angle,
        [mo.flt_mean.x - rc.x, mo.flt_mean.y - rc.y],
    ))
}

/// Weighted least-squares affine fit (normal equations on centered points).
pub fn affine_from_correspondences(pairs: &[Correspondence]) -> Result<LinearTransform2D> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "affine fit needs 3 correspondences, got {}",
            pairs.len()
        )));
    }
    let mo = moments(pairs)?;
    let c = &mo.rr;
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let trace = c[0][0] + c[1][1];
    if mo.active < 3 || !(det > 1e-12 * trace * trace) {
        return Err(Error::DegenerateConfiguration(
            "affine fit needs three non-collinear reference points".into(),
        ));
    }
    let inv = [
        [c[1][1] / det, -c[0][1] / det],
        [-c[1][0] / det, c[0][0] / det],
    ];
    let mut m = [[0.0; 2]; 2];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = mo.fr[i][0] * inv[0][j] + mo.fr[i][1] * inv[1][j];
        }
    }
    let lin = LinearTransform2D::affine(m, [0.0, 0.0]);
    let rc = lin.apply(mo.ref_mean);
    Ok(LinearTransform2D::affine(
        m,
        [mo.flt_mean.x - rc.x, mo.flt_mean.y - rc.y],
    ))
}

/// Fits the model of the requested kind.
pub fn fit_correspondences(
    pairs: &[Correspondence],
    kind: TransformKind,
) -> Result<LinearTransform2D> {
    match kind {
        TransformKind::Rigid => rigid_from_correspondences(pairs),
        TransformKind::Affine => affine_from_correspondences(pairs),
    }
}

fn warp_with(
    img: &Image2D,
    t: &LinearTransform2D,
    sample: impl Fn(&Image2D, f64, f64) -> Option<f64>,
) -> Result<Image2D> {
    let inv = invert(t)?;
    let (w, h) = (img.width(), img.height());
    let mut data = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let q = inv.apply(Point2::new(x as f64, y as f64));
            match sample(img, q.x, q.y) {
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
    Image2D::with_mask(w, h, img.spacing_um(), data, mask)
}

/// Backward warp: output pixel `p` is the bilinear sample of `img` at
/// `T^-1 p`. Samples outside the input or touching invalid pixels become
/// 0 and invalid.
pub fn warp_image(img: &Image2D, t: &LinearTransform2D) -> Result<Image2D> {
    warp_with(img, t, |im, x, y| im.sample_bilinear(x, y))
}

/// Like [`warp_image`] but replicates edge pixels instead of invalidating
/// samples that fall outside the raster.
pub fn warp_image_clamped(img: &Image2D, t: &LinearTransform2D) -> Result<Image2D> {
    warp_with(img, t, |im, x, y| im.sample_bilinear_clamped(x, y))
}

/// Nearest-neighbour backward warp of a label map; outside samples become 0.
pub fn warp_labels(labels: &LabelMap2D, t: &LinearTransform2D) -> Result<LabelMap2D> {
    let inv = invert(t)?;
    let (w, h) = (labels.width(), labels.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let q = inv.apply(Point2::new(x as f64, y as f64));
            let (qx, qy) = (math::round(q.x), math::round(q.y));
            let inside = qx >= 0.0 && qy >= 0.0 && qx < w as f64 && qy < h as f64;
            out.push(if inside {
                labels.label(qx as usize, qy as usize)
            } else {
                0
            });
        }
    }
    Ok(LabelMap2D::new(w, h, out)?.with_names(labels.region_names().clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: Point2, b: Point2, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol
    }

    fn synth(t: &LinearTransform2D, n: usize, seed: u64) -> Vec<Correspondence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = Point2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
                Correspondence {
                    ref_point: p,
                    flt_point: t.apply(p),
                    weight: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn apply_examples() {
        let id = LinearTransform2D::identity(TransformKind::Affine);
        assert_eq!(id.apply(Point2::new(3.5, -2.0)), Point2::new(3.5, -2.0));
        let r = LinearTransform2D::rigid(core::f64::consts::FRAC_PI_2, [0.0, 0.0]);
        assert!(close(
            r.apply(Point2::new(1.0, 0.0)),
            Point2::new(0.0, 1.0),
            1e-15
        ));
        let a = LinearTransform2D::affine([[2.0, 0.0], [0.0, 1.0]], [1.0, 1.0]);
        assert_eq!(a.apply(Point2::new(1.0, 1.0)), Point2::new(3.0, 2.0));
    }

    #[test]
    fn compose_examples() {
        let t = LinearTransform2D::affine([[1.1, 0.2], [-0.3, 0.9]], [4.0, -1.0]);
        let id = LinearTransform2D::identity(TransformKind::Rigid);
        assert_eq!(compose(&t, &id), t);
        let deg = |d: f64| d * core::f64::consts::PI / 180.0;
        let c = compose(
            &LinearTransform2D::rigid(deg(30.0), [0.0, 0.0]),
            &LinearTransform2D::rigid(deg(60.0), [0.0, 0.0]),
        );
        assert_eq!(c.kind(), TransformKind::Rigid);
        assert!((c.angle() - deg(90.0)).abs() < 1e-15);
        assert_eq!(compose(&c, &t).kind(), TransformKind::Affine);
    }

    #[test]
    fn invert_examples() {
        let id = LinearTransform2D::identity(TransformKind::Rigid);
        assert_eq!(invert(&id).unwrap(), id);
        let t = LinearTransform2D::rigid(0.3, [2.0, -5.0]);
        let inv = invert(&t).unwrap();
        let expected = LinearTransform2D::rigid(-0.3, [0.0, 0.0]);
        let rt = expected.apply(Point2::new(2.0, -5.0));
        assert!((inv.angle() + 0.3).abs() < 1e-15);
        assert!(close(
            Point2::new(inv.translation()[0], inv.translation()[1]),
            Point2::new(-rt.x, -rt.y),
            1e-12
        ));
        let singular = LinearTransform2D::affine([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.0]);
        assert_eq!(invert(&singular), Err(Error::SingularTransform));
    }

    #[test]
    fn rigid_recovery() {
        let truth = LinearTransform2D::rigid(7f64.to_radians(), [3.0, -2.0]);
        let fit = rigid_from_correspondences(&synth(&truth, 20, 1)).unwrap();
        assert!((fit.angle() - truth.angle()).abs() < 1e-9);
        for k in 0..2 {
            assert!((fit.translation()[k] - truth.translation()[k]).abs() < 1e-9);
        }
        assert_eq!(fit.kind(), TransformKind::Rigid);
    }

    #[test]
    fn rigid_identity_when_points_agree() {
        let pairs = synth(&LinearTransform2D::identity(TransformKind::Rigid), 10, 2);
        let fit = rigid_from_correspondences(&pairs).unwrap();
        assert_eq!(fit, LinearTransform2D::identity(TransformKind::Rigid));
    }

    #[test]
    fn rigid_needs_two_points() {
        let p = Point2::new(1.0, 1.0);
        let one = [Correspondence {
            ref_point: p,
            flt_point: p,
            weight: 1.0,
        }];
        assert!(matches!(
            rigid_from_correspondences(&one),
            Err(Error::DegenerateConfiguration(_))
        ));
        let collocated = [one[0], one[0]];
        assert!(rigid_from_correspondences(&collocated).is_err());
    }

    #[test]
    fn affine_recovery() {
        let truth = LinearTransform2D::affine([[1.2, 0.1], [-0.05, 0.9]], [4.0, 1.0]);
        let fit = affine_from_correspondences(&synth(&truth, 20, 3)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((fit.matrix()[i][j] - truth.matrix()[i][j]).abs() < 1e-9);
            }
            assert!((fit.translation()[i] - truth.translation()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_reproduces_rigid_data() {
        let truth = LinearTransform2D::rigid(-0.2, [10.0, 3.0]);
        let fit = affine_from_correspondences(&synth(&truth, 15, 4)).unwrap();
        for c in LinearTransform2D::corners(300, 200) {
            assert!(fit.apply(c).distance(truth.apply(c)) < 1e-9);
        }
    }

    #[test]
    fn affine_rejects_collinear() {
        let pairs: Vec<_> = (0..3)
            .map(|i| {
                let p = Point2::new(i as f64, 2.0 * i as f64);
                Correspondence {
                    ref_point: p,
                    flt_point: p,
                    weight: 1.0,
                }
            })
            .collect();
        assert!(matches!(
            affine_from_correspondences(&pairs),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    fn smooth(w: usize, h: usize) -> Image2D {
        Image2D::from_fn(w, h, 25.0, |x, y| {
            let (x, y) = (x as f64, y as f64);
            100.0 + 40.0 * (x / 9.0).sin() * (y / 11.0).cos() + 0.3 * x
        })
        .unwrap()
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = smooth(40, 30);
        let out = warp_image(&img, &LinearTransform2D::identity(TransformKind::Affine)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn integer_translation_moves_pixel() {
        let mut data = vec![0.0; 100];
        data[5 * 10 + 5] = 255.0;
        let img = Image2D::new(10, 10, 1.0, data).unwrap();
        let out = warp_image(&img, &LinearTransform2D::rigid(0.0, [2.0, 0.0])).unwrap();
        assert_eq!(out.value(7, 5), 255.0);
        assert_eq!(out.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert!(!out.is_valid(0, 5) && !out.is_valid(1, 5) && out.is_valid(2, 5));
    }

    #[test]
    fn warp_round_trip_interior() {
        let img = smooth(80, 80);
        let t = LinearTransform2D::rigid_about([39.5, 39.5], 0.1, [3.0, -2.0]);
        let back = warp_image(&warp_image(&img, &t).unwrap(), &invert(&t).unwrap()).unwrap();
        let (lo, hi) = img.valid_range().unwrap();
        let (mut err, mut n) = (0.0, 0);
        for y in 8..72 {
            for x in 8..72 {
                assert!(back.is_valid(x, y));
                err += (back.value(x, y) - img.value(x, y)).abs();
                n += 1;
            }
        }
        assert!(err / (n as f64) < 0.02 * (hi - lo));
    }

    #[test]
    fn label_warp_is_nearest() {
        let labels = LabelMap2D::new(3, 1, vec![1, 2, 3]).unwrap();
        let out = warp_labels(&labels, &LinearTransform2D::rigid(0.0, [0.6, 0.0])).unwrap();
        // Output x samples input x - 0.6, rounding to x - 1.
        assert_eq!(out.labels(), &[0, 1, 2]);
    }

    #[test]
    fn pyramid_scaling_round_trips() {
        let t = LinearTransform2D::affine([[1.1, 0.05], [-0.02, 0.95]], [3.0, -7.0]);
        let back = t.to_coarser().to_finer();
        assert!(back.max_corner_error(&t, 100, 100) < 1e-12);
        // Coarse pixel c sits at fine coordinate 2c + 0.5.
        let c = t.to_coarser();
        let p = Point2::new(10.0, 4.0);
        let fine = t.apply(Point2::new(2.0 * p.x + 0.5, 2.0 * p.y + 0.5));
        let coarse = c.apply(p);
        assert!(close(
            fine,
            Point2::new(2.0 * coarse.x + 0.5, 2.0 * coarse.y + 0.5),
            1e-12
        ));
    }

    fn arb_affine() -> impl Strategy<Value = LinearTransform2D> {
        (
            0.5f64..2.0,
            -0.5f64..0.5,
            -0.5f64..0.5,
            0.5f64..2.0,
            -50f64..50.0,
            -50f64..50.0,
        )
            .prop_map(|(a, b, c, d, tx, ty)| LinearTransform2D::affine([[a, b], [c, d]], [tx, ty]))
    }

    fn arb_rigid() -> impl Strategy<Value = LinearTransform2D> {
        (-3.1f64..3.1, -50f64..50.0, -50f64..50.0)
            .prop_map(|(a, tx, ty)| LinearTransform2D::rigid(a, [tx, ty]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn compose_matches_sequential(a in arb_affine(), b in arb_affine(), x in -100f64..100.0, y in -100f64..100.0) {
            let p = Point2::new(x, y);
            let lhs = compose(&a, &b).apply(p);
            let rhs = a.apply(b.apply(p));
            prop_assert!(close(lhs, rhs, 1e-9));
        }

        #[test]
        fn inverse_composes_to_identity(t in arb_affine(), x in -100f64..100.0, y in -100f64..100.0) {
            let p = Point2::new(x, y);
            let inv = invert(&t).unwrap();
            prop_assert!(close(compose(&inv, &t).apply(p), p, 1e-9));
            prop_assert!(close(compose(&t, &inv).apply(p), p, 1e-9));
        }

        #[test]
        fn rigid_estimator_recovers_models(t in arb_rigid(), seed in 0u64..1000) {
            let fit = rigid_from_correspondences(&synth(&t, 12, seed)).unwrap();
            prop_assert!(fit.is_proper_rotation(RIGID_TOLERANCE));
            prop_assert!((fit.angle() - t.angle()).abs() < 1e-9);
            prop_assert!((fit.translation()[0] - t.translation()[0]).abs() < 1e-9);
            prop_assert!((fit.translation()[1] - t.translation()[1]).abs() < 1e-9);
        }

        #[test]
        fn affine_estimator_recovers_models(t in arb_affine(), seed in 0u64..1000) {
            let fit = affine_from_correspondences(&synth(&t, 12, seed)).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((fit.matrix()[i][j] - t.matrix()[i][j]).abs() < 1e-9);
                }
                prop_assert!((fit.translation()[i] - t.translation()[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn rigid_estimator_never_reflects(seed in 0u64..1000) {
            // Reflected target data: the best proper rotation is still returned.
            let mut pairs = synth(&LinearTransform2D::identity(TransformKind::Rigid), 10, seed);
            for c in &mut pairs {
                c.flt_point.x = -c.flt_point.x;
            }
            let fit = rigid_from_correspondences(&pairs).unwrap();
            prop_assert!((fit.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn rigid_warp_keeps_interior_valid_under_identity(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Image2D::from_fn(16, 12, 1.0, |_, _| rng.random_range(0.0..10.0)).unwrap();
            let out = warp_image(&img, &LinearTransform2D::identity(TransformKind::Rigid)).unwrap();
            prop_assert_eq!(out.valid_count(), img.valid_count());
        }
    }
}
