//! Whole-volume NMI cartographies and their evaluation against expert
//! pairings.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::imgvol::{LabelVolume3D, Volume3D};
use crate::matcher::{
    argmax_with_ties, score_slice_with, BestPerStrategy, Executor, MatchResult, MatcherParams,
    PairFailure, StrategyKind,
};
use crate::math;
use crate::metrics::{linear_regression, mean_dice, MeanDice, RegressionFit};
use crate::xform::{invert, warp_labels};
use crate::{Error, LabelMap2D, Result};

/// Dense row-major matrix of optional scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<Option<f64>>,
}

impl ScoreMatrix {
    pub fn undefined(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![None; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::InvalidParams(
                "score matrix needs at least one entry".into(),
            ));
        }
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimMismatch(
                "score matrix rows differ in length".into(),
            ));
        }
        if rows.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(
                "score matrix entries must be finite".into(),
            ));
        }
        let n = rows.len();
        Ok(Self {
            rows: n,
            cols,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    fn row_mut(&mut self, i: usize) -> &mut [Option<f64>] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Smallest and largest defined entries.
    pub fn defined_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .flatten()
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((v.min(lo), v.max(hi))),
            })
    }

    pub fn row_is_undefined(&self, i: usize) -> bool {
        self.row(i).iter().all(Option::is_none)
    }
}

/// Elementwise mean where both entries are defined.
pub fn mean_matrix(rigid: &ScoreMatrix, affine: &ScoreMatrix) -> Result<ScoreMatrix> {
    if (rigid.rows, rigid.cols) != (affine.rows, affine.cols) {
        return Err(Error::DimMismatch(
            "rigid and affine matrices differ in shape".into(),
        ));
    }
    let values = rigid
        .values
        .iter()
        .zip(&affine.values)
        .map(|(r, a)| match (r, a) {
            (Some(r), Some(a)) => Some((r + a) / 2.0),
            _ => None,
        })
        .collect();
    Ok(ScoreMatrix {
        rows: rigid.rows,
        cols: rigid.cols,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartographyFailure {
    pub s_e_index: usize,
    pub failure: PairFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmiCartography {
    pub rigid: ScoreMatrix,
    pub affine: ScoreMatrix,
    pub mean: ScoreMatrix,
    /// Best template slice and transform per strategy, one entry per row.
    pub best: Vec<BestPerStrategy>,
    pub failures: Vec<CartographyFailure>,
    pub params: MatcherParams,
    pub strategy: StrategyKind,
}

impl NmiCartography {
    /// Assembles a cartography from full-range match results, one per
    /// experimental slice, ordered by `s_e_index` starting at 0.
    pub fn from_rows(
        rows: Vec<MatchResult>,
        n_t: usize,
        params: MatcherParams,
        strategy: StrategyKind,
    ) -> Result<Self> {
        if rows.is_empty() || n_t == 0 {
            return Err(Error::InvalidParams(
                "cartography needs n_e, n_t > 0".into(),
            ));
        }
        let n_e = rows.len();
        let mut rigid = ScoreMatrix::undefined(n_e, n_t);
        let mut affine = ScoreMatrix::undefined(n_e, n_t);
        let mut best = Vec::with_capacity(n_e);
        let mut failures = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            if row.s_e_index != i || row.z_start != 0 || row.len() != n_t {
                return Err(Error::InvalidParams(format!(
                    "row {i} does not cover template slices 0..{n_t}"
                )));
            }
            rigid.row_mut(i).copy_from_slice(&row.nmi_rigid);
            affine.row_mut(i).copy_from_slice(&row.nmi_affine);
            best.push(row.best);
            failures.extend(row.failures.into_iter().map(|failure| CartographyFailure {
                s_e_index: i,
                failure,
            }));
        }
        let mean = mean_matrix(&rigid, &affine)?;
        Ok(Self {
            rigid,
            affine,
            mean,
            best,
            failures,
            params,
            strategy,
        })
    }

    pub fn n_e(&self) -> usize {
        self.rigid.rows()
    }

    pub fn n_t(&self) -> usize {
        self.rigid.cols()
    }

    pub fn matrix(&self, strategy: StrategyKind) -> &ScoreMatrix {
        match strategy {
            StrategyKind::Rigid => &self.rigid,
            StrategyKind::Affine => &self.affine,
            StrategyKind::Mean => &self.mean,
        }
    }

    /// Row argmax per strategy; `None` for all-undefined rows.
    pub fn estimates(&self, strategy: StrategyKind) -> Vec<Option<usize>> {
        let m = self.matrix(strategy);
        (0..m.rows())
            .map(|i| argmax_with_ties(m.row(i)).ok())
            .collect()
    }
}

/// Checks that two volumes share the slice grid.
pub fn check_preprocessed(exp: &Volume3D, template: &Volume3D) -> Result<()> {
    let (de, dt) = (exp.dims(), template.dims());
    let (se, st) = (exp.spacing_um(), template.spacing_um());
    if de[0] != dt[0] || de[1] != dt[1] {
        return Err(Error::PreprocessMismatch(format!(
            "slice grids differ: {}x{} vs {}x{}",
            de[0], de[1], dt[0], dt[1]
        )));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
    if !close(se[0], st[0]) || !close(se[1], st[1]) {
        return Err(Error::PreprocessMismatch(format!(
            "in-plane spacing differs: {:?} vs {:?}",
            [se[0], se[1]],
            [st[0], st[1]]
        )));
    }
    Ok(())
}

/// Matches experimental slice `s_e` against the whole template. Rows whose
/// pairs all fail come back with no estimate rather than an error.
pub fn cartography_row(
    exp: &Volume3D,
    s_e: usize,
    template: &Volume3D,
    params: &MatcherParams,
    strategy: StrategyKind,
) -> Result<MatchResult> {
    let slice = exp.coronal_slice(s_e)?;
    let mut row = score_slice_with(
        &slice,
        template,
        params,
        strategy,
        None,
        &crate::matcher::Sequential,
    )?;
    row.s_e_index = s_e;
    Ok(row)
}

/// Builds the full cartography, one job per experimental slice. The result
/// is identical for every executor.
pub fn build_cartography<E: Executor>(
    exp: &Volume3D,
    template: &Volume3D,
    params: &MatcherParams,
    strategy: StrategyKind,
    executor: &E,
) -> Result<NmiCartography> {
    params.validate()?;
    check_preprocessed(exp, template)?;
    let n_e = exp.dims()[2];
    let rows: Vec<Result<MatchResult>> =
        executor.map(n_e, |i| cartography_row(exp, i, template, params, strategy));
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    NmiCartography::from_rows(rows, template.dims()[2], *params, strategy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPairs {
    /// `(s_e, expert s_t)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub provenance: String,
}

impl ExpertPairs {
    pub fn new(pairs: Vec<(usize, usize)>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(s_e, _) in &pairs {
            if !seen.insert(s_e) {
                return Err(Error::InvalidExpertPairs(format!("duplicate s_e {s_e}")));
            }
        }
        Ok(Self {
            pairs,
            provenance: provenance.into(),
        })
    }

    pub fn check_bounds(&self, n_e: usize, n_t: usize) -> Result<()> {
        match self.pairs.iter().find(|&&(e, t)| e >= n_e || t >= n_t) {
            Some(&(e, t)) => Err(Error::InvalidExpertPairs(format!(
                "pair ({e}, {t}) outside {n_e} x {n_t}"
            ))),
            None => Ok(()),
        }
    }
}

/// Least-squares line from experimental index to expert template index.
pub fn expert_ground_truth(pairs: &ExpertPairs) -> Result<RegressionFit> {
    let pts: Vec<(f64, f64)> = pairs
        .pairs
        .iter()
        .map(|&(e, t)| (e as f64, t as f64))
        .collect();
    linear_regression(&pts)
}

/// `|estimated - round(expert_predicted)|`, rounding half away from zero.
pub fn delta_sn(estimated: usize, expert_predicted: f64) -> u64 {
    let target = math::round(expert_predicted) as i64;
    (estimated as i64 - target).unsigned_abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceEvaluation {
    pub s_e: usize,
    pub estimated: usize,
    pub expert_predicted: f64,
    pub delta_sn: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyEvaluation {
    pub strategy: StrategyKind,
    /// Fit over all `(s_e, estimate)` pairs; `None` with fewer than two rows.
    pub regression: Option<RegressionFit>,
    pub delta_sn_mean: Option<f64>,
    /// Population standard deviation.
    pub delta_sn_std: Option<f64>,
    pub slices: Vec<SliceEvaluation>,
    /// Rows without any defined score.
    pub excluded_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceRow {
    pub s_e: usize,
    pub s_t: usize,
    pub dice: MeanDice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub expert_fit: RegressionFit,
    /// Rigid, affine, mean.
    pub strategies: Vec<StrategyEvaluation>,
    /// Dice rows per strategy when labels were supplied.
    pub dice: Vec<(StrategyKind, Vec<DiceRow>)>,
}

impl EvaluationReport {
    pub fn strategy(&self, s: StrategyKind) -> &StrategyEvaluation {
        self.strategies
            .iter()
            .find(|e| e.strategy == s)
            .expect("all strategies evaluated")
    }
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, math::sqrt(var)))
}

/// Per-strategy regression and slice-difference statistics against the
/// expert line.
pub fn evaluate(carto: &NmiCartography, pairs: &ExpertPairs) -> Result<EvaluationReport> {
    pairs.check_bounds(carto.n_e(), carto.n_t())?;
    let expert_fit = expert_ground_truth(pairs)?;
    let mut strategies = Vec::with_capacity(3);
    for strategy in StrategyKind::ALL {
        let mut slices = Vec::new();
        let mut excluded_rows = Vec::new();
        for (s_e, est) in carto.estimates(strategy).into_iter().enumerate() {
            match est {
                Some(estimated) => {
                    let expert_predicted = expert_fit.predict(s_e as f64);
                    slices.push(SliceEvaluation {
                        s_e,
                        estimated,
                        expert_predicted,
                        delta_sn: delta_sn(estimated, expert_predicted),
                    });
                }
                None => excluded_rows.push(s_e),
            }
        }
        let points: Vec<(f64, f64)> = slices
            .iter()
            .map(|s| (s.s_e as f64, s.estimated as f64))
            .collect();
        let deltas: Vec<f64> = slices.iter().map(|s| s.delta_sn as f64).collect();
        let stats = mean_std(&deltas);
        strategies.push(StrategyEvaluation {
            strategy,
            regression: linear_regression(&points).ok(),
            delta_sn_mean: stats.map(|s| s.0),
            delta_sn_std: stats.map(|s| s.1),
            slices,
            excluded_rows,
        });
    }
    if strategies.iter().all(|s| s.slices.is_empty()) {
        return Err(Error::EmptyCartography);
    }
    Ok(EvaluationReport {
        expert_fit,
        strategies,
        dice: Vec::new(),
    })
}

/// Unweighted mean Dice of two label maps on the same grid.
pub fn dice_report(
    exp_labels: &LabelMap2D,
    warped: &LabelMap2D,
    regions: &[u16],
) -> Result<MeanDice> {
    mean_dice(exp_labels, warped, regions)
}

/// Dice between experimental labels and template labels brought onto the
/// experimental grid with each row's best transform, for `slices` (rows
/// without an estimate are skipped).
pub fn dice_rows(
    carto: &NmiCartography,
    strategy: StrategyKind,
    exp_labels: &LabelVolume3D,
    template_labels: &LabelVolume3D,
    regions: &[u16],
    slices: &[usize],
) -> Result<Vec<DiceRow>> {
    let mut out = Vec::with_capacity(slices.len());
    for &s_e in slices {
        let best = carto.best.get(s_e).ok_or(Error::IndexOutOfRange {
            index: s_e,
            len: carto.n_e(),
        })?;
        let Some(b) = best.get(strategy) else {
            continue;
        };
        let exp = exp_labels.coronal_slice(s_e)?;
        let tpl = template_labels.coronal_slice(b.index)?;
        let warped = warp_labels(&tpl, &invert(&b.transform)?)?;
        out.push(DiceRow {
            s_e,
            s_t: b.index,
            dice: dice_report(&exp, &warped, regions)?,
        });
    }
    Ok(out)
}

/// 16-bit rendering of a matrix: defined scores min-max scaled to
/// `0..=65535`, undefined entries 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u16>,
    pub min: f64,
    pub max: f64,
}

pub fn heatmap(m: &ScoreMatrix) -> Result<Heatmap> {
    let (min, max) = m.defined_range().ok_or(Error::EmptyCartography)?;
    let span = max - min;
    let pixels = m
        .values()
        .iter()
        .map(|v| match v {
            Some(v) if span > 0.0 => math::round((v - min) / span * 65535.0) as u16,
            _ => 0,
        })
        .collect();
    Ok(Heatmap {
        width: m.cols(),
        height: m.rows(),
        pixels,
        min,
        max,
    })
}
