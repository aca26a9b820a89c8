//! Similarity and evaluation metrics: Pearson correlation for block
//! matching, joint histograms and normalized mutual information for slice
//! scoring, Dice overlap, and ordinary least-squares regression.
//!
//! NMI uses the `(H(A) + H(B)) / H(A, B)` normalization with natural-log
//! entropies. The log base cancels in the ratio; the normalization does
//! not, so absolute values are only comparable with other tools using the
//! same form. Range is `[1, 2]`: 2 for identical discretized images, 1 for
//! independent ones.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::imgvol::{Image2D, LabelMap2D};
use crate::math;
use crate::{Error, Result};

/// Default histogram bins per axis.
pub const DEFAULT_BINS: usize = 64;

/// Pearson correlation of paired samples.
///
/// The caller supplies only co-valid pixel pairs. Fails with
/// [`Error::ZeroVariance`] when fewer than two pairs are given or either
/// side is constant.
pub fn correlation_coefficient<I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut acc = CorrelationAccumulator::default();
    for (a, b) in pairs {
        acc.push(a, b);
    }
    acc.finish()
}

/// Running sums for [`correlation_coefficient`].
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CorrelationAccumulator {
    n: usize,
    sa: f64,
    sb: f64,
    saa: f64,
    sbb: f64,
    sab: f64,
}

impl CorrelationAccumulator {
    #[inline]
    pub(crate) fn push(&mut self, a: f64, b: f64) {
        self.n += 1;
        self.sa += a;
        self.sb += b;
        self.saa += a * a;
        self.sbb += b * b;
        self.sab += a * b;
    }

    #[inline]
    pub(crate) fn count(&self) -> usize {
        self.n
    }

    pub(crate) fn finish(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::ZeroVariance);
        }
        let n = self.n as f64;
        let va = self.saa - self.sa * self.sa / n;
        let vb = self.sbb - self.sb * self.sb / n;
        // Relative floor against cancellation on near-constant blocks.
        let floor_a = 1e-12 * self.saa.abs().max(f64::MIN_POSITIVE);
        let floor_b = 1e-12 * self.sbb.abs().max(f64::MIN_POSITIVE);
        if !(va > floor_a) || !(vb > floor_b) {
            return Err(Error::ZeroVariance);
        }
        let cov = self.sab - self.sa * self.sb / n;
        Ok((cov / math::sqrt(va * vb)).clamp(-1.0, 1.0))
    }
}

/// Joint intensity histogram of two images over their co-valid pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointHistogram {
    bins: usize,
    /// Row-major `bins x bins`; row index is the bin of the first image.
    counts: Vec<u64>,
    totals_a: Vec<u64>,
    totals_b: Vec<u64>,
    n: u64,
}

impl JointHistogram {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, bin_a: usize, bin_b: usize) -> u64 {
        self.counts[bin_a * self.bins + bin_b]
    }

    pub fn totals_a(&self) -> &[u64] {
        &self.totals_a
    }

    pub fn totals_b(&self) -> &[u64] {
        &self.totals_b
    }

    pub fn samples(&self) -> u64 {
        self.n
    }

    /// Marginal entropies and joint entropy, natural log.
    pub fn entropies(&self) -> (f64, f64, f64) {
        let n = self.n as f64;
        let h = |counts: &[u64]| {
            counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * math::ln(p)
                })
                .sum::<f64>()
        };
        // Summing in sorted order makes the joint entropy, and hence NMI,
        // exactly symmetric under swapping the images.
        let mut joint: Vec<u64> = self.counts.iter().copied().filter(|&c| c > 0).collect();
        joint.sort_unstable();
        (h(&self.totals_a), h(&self.totals_b), h(&joint))
    }
}

/// Maps a value into `[0, bins)` by min-max scaling; the maximum lands in
/// the top bin and a constant image in bin 0.
#[inline]
fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = ((v - lo) / (hi - lo) * bins as f64) as usize;
    b.min(bins - 1)
}

fn co_valid_range(a: &Image2D, b: &Image2D) -> Option<((f64, f64), (f64, f64))> {
    let mut range: Option<((f64, f64), (f64, f64))> = None;
    for i in 0..a.data().len() {
        if !(a.mask()[i] && b.mask()[i]) {
            continue;
        }
        let (va, vb) = (a.data()[i], b.data()[i]);
        range = Some(match range {
            None => ((va, va), (vb, vb)),
            Some(((la, ha), (lb, hb))) => ((la.min(va), ha.max(va)), (lb.min(vb), hb.max(vb))),
        });
    }
    range
}

/// Joint histogram over co-valid pixels, each image binned by its own
/// min-max over the overlap.
pub fn joint_histogram(a: &Image2D, b: &Image2D, bins: usize) -> Result<JointHistogram> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if bins < 2 {
        return Err(Error::InvalidParams(format!(
            "bins = {bins}, need at least 2"
        )));
    }
    let ((la, ha), (lb, hb)) = co_valid_range(a, b).ok_or(Error::NoOverlap)?;
    let mut counts = vec![0u64; bins * bins];
    let mut totals_a = vec![0u64; bins];
    let mut totals_b = vec![0u64; bins];
    let mut n = 0u64;
    for i in 0..a.data().len() {
        if !(a.mask()[i] && b.mask()[i]) {
            continue;
        }
        let ia = bin_of(a.data()[i], la, ha, bins);
        let ib = bin_of(b.data()[i], lb, hb, bins);
        counts[ia * bins + ib] += 1;
        totals_a[ia] += 1;
        totals_b[ib] += 1;
        n += 1;
    }
    Ok(JointHistogram {
        bins,
        counts,
        totals_a,
        totals_b,
        n,
    })
}

/// `(H(A) + H(B)) / H(A, B)` over co-valid pixels.
pub fn nmi(a: &Image2D, b: &Image2D, bins: usize) -> Result<f64> {
    nmi_from_histogram(&joint_histogram(a, b, bins)?)
}

pub fn nmi_from_histogram(hist: &JointHistogram) -> Result<f64> {
    let (ha, hb, hab) = hist.entropies();
    if !(hab > 0.0) {
        return Err(Error::InsufficientContrast);
    }
    Ok((ha + hb) / hab)
}

/// `2 |A_l & B_l| / (|A_l| + |B_l|)`.
pub fn dice(a: &LabelMap2D, b: &LabelMap2D, label: u16) -> Result<f64> {
    check_label_dims(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (la == label, lb == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Err(Error::LabelAbsentEverywhere(label));
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

fn check_label_dims(a: &LabelMap2D, b: &LabelMap2D) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimMismatch(format!(
            "label maps {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Unweighted mean Dice over a label list.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDice {
    /// Dice per label that occurs in at least one map, in input order.
    pub per_label: Vec<(u16, f64)>,
    /// Labels absent from both maps; not part of the mean.
    pub excluded: Vec<u16>,
    /// `None` when every label was excluded.
    pub mean: Option<f64>,
}

pub fn mean_dice(a: &LabelMap2D, b: &LabelMap2D, labels: &[u16]) -> Result<MeanDice> {
    check_label_dims(a, b)?;
    let mut per_label = Vec::new();
    let mut excluded = Vec::new();
    for &l in labels {
        match dice(a, b, l) {
            Ok(d) => per_label.push((l, d)),
            Err(Error::LabelAbsentEverywhere(_)) => excluded.push(l),
            Err(e) => return Err(e),
        }
    }
    let mean = if per_label.is_empty() {
        None
    } else {
        Some(per_label.iter().map(|(_, d)| d).sum::<f64>() / per_label.len() as f64)
    };
    Ok(MeanDice {
        per_label,
        excluded,
        mean,
    })
}

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination, in `[0, 1]`.
    pub r2: f64,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// `1 - SS_res / SS_tot` of an arbitrary line on the given points; 1
    /// when both sums vanish.
    pub fn r2_of_line(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
        let n = points.len() as f64;
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
        let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
        let ss_res: f64 = points
            .iter()
            .map(|&(x, y)| {
                let r = y - (slope * x + intercept);
                r * r
            })
            .sum();
        if ss_tot == 0.0 {
            if ss_res == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - ss_res / ss_tot
        }
    }
}

/// Ordinary least squares; needs at least two distinct abscissae.
pub fn linear_regression(points: &[(f64, f64)]) -> Result<RegressionFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateX);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r2 = RegressionFit::r2_of_line(points, slope, intercept).clamp(0.0, 1.0);
    Ok(RegressionFit {
        slope,
        intercept,
        r2,
    })
}
