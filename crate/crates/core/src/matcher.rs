//! Slice position estimation: register an experimental slice against every
//! template slice and take the NMI argmax under three strategies.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::blockmatch::{register, BlockMatchParams};
use crate::imgvol::{Image2D, Volume3D};
use crate::metrics::{nmi, DEFAULT_BINS};
use crate::xform::{LinearTransform2D, TransformKind};
use crate::{Error, Result};

/// Runs independent indexed jobs. Implementations may run them in any order
/// or concurrently but must return results ordered by index.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrategyKind {
    Rigid,
    Affine,
    /// Elementwise mean of the rigid and affine NMI vectors.
    Mean,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::Rigid,
        StrategyKind::Affine,
        StrategyKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Rigid => "rigid",
            StrategyKind::Affine => "affine",
            StrategyKind::Mean => "mean",
        }
    }

    /// Whether the affine model has to be evaluated.
    pub fn needs_affine(self) -> bool {
        self != StrategyKind::Rigid
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rigid" => Ok(StrategyKind::Rigid),
            "affine" => Ok(StrategyKind::Affine),
            "mean" => Ok(StrategyKind::Mean),
            other => Err(Error::InvalidParams(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherParams {
    pub registration: BlockMatchParams,
    /// Histogram bins per image for NMI.
    pub bins: usize,
}

impl Default for MatcherParams {
    fn default() -> Self {
        Self {
            registration: BlockMatchParams::default(),
            bins: DEFAULT_BINS,
        }
    }
}

impl MatcherParams {
    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        if self.bins < 2 {
            return Err(Error::InvalidParams("bins must be >= 2".into()));
        }
        Ok(())
    }
}

/// NMI and transform of one model for one slice pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub nmi: f64,
    /// Maps experimental pixel coordinates to template pixel coordinates.
    pub transform: LinearTransform2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub rigid: Result<ModelScore>,
    /// `None` when the affine model was not requested.
    pub affine: Option<Result<ModelScore>>,
}

fn check_pair(s_e: &Image2D, s_t: &Image2D) -> Result<()> {
    if (s_e.width(), s_e.height()) != (s_t.width(), s_t.height()) {
        return Err(Error::DimMismatch(format!(
            "experimental {}x{} vs template {}x{}",
            s_e.width(),
            s_e.height(),
            s_t.width(),
            s_t.height()
        )));
    }
    Ok(())
}

fn score_models(
    s_e: &Image2D,
    s_t: &Image2D,
    params: &MatcherParams,
    with_affine: bool,
) -> Result<PairScore> {
    params.validate()?;
    check_pair(s_e, s_t)?;
    if s_e.is_constant() || s_t.is_constant() {
        let err = Err(Error::InsufficientContrast);
        return Ok(PairScore {
            rigid: err.clone(),
            affine: with_affine.then_some(err),
        });
    }
    let score = |transform: LinearTransform2D| -> Result<ModelScore> {
        let warped = crate::xform::warp_image(s_t, &crate::xform::invert(&transform)?)?;
        Ok(ModelScore {
            nmi: nmi(s_e, &warped, params.bins)?,
            transform,
        })
    };
    let rigid_reg = register(s_e, s_t, TransformKind::Rigid, &params.registration, None);
    let rigid = rigid_reg
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|r| score(r.transform));
    let affine = with_affine.then(|| {
        let init = rigid_reg.as_ref().map_err(Clone::clone)?.transform;
        let reg = register(
            s_e,
            s_t,
            TransformKind::Affine,
            &params.registration,
            Some(&init),
        )?;
        score(reg.transform)
    });
    Ok(PairScore { rigid, affine })
}

/// Registers the template slice `s_t` (floating) onto the experimental
/// slice `s_e` (reference) with the rigid model, then with the affine model
/// initialized from the rigid result, and scores each aligned pair by NMI
/// over co-valid pixels.
///
/// Model failures are reported per model; a rigid failure is inherited by
/// the affine model. The outer error covers unusable inputs only.
pub fn score_pair(s_e: &Image2D, s_t: &Image2D, params: &MatcherParams) -> Result<PairScore> {
    score_models(s_e, s_t, params, true)
}

/// Lowest index of the maximum over defined entries.
pub fn argmax_with_ties(v: &[Option<f64>]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.iter().enumerate() {
        if let Some(x) = *x {
            if best.is_none_or(|(_, b)| x > b) {
                best = Some((i, x));
            }
        }
    }
    best.map(|(i, _)| i).ok_or(Error::AllUndefined)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyBest {
    /// Template slice index.
    pub index: usize,
    pub nmi: f64,
    /// Transform of the winning pair. The mean strategy reports the affine one.
    pub transform: LinearTransform2D,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BestPerStrategy {
    pub rigid: Option<StrategyBest>,
    pub affine: Option<StrategyBest>,
    pub mean: Option<StrategyBest>,
}

impl BestPerStrategy {
    pub fn get(&self, strategy: StrategyKind) -> Option<&StrategyBest> {
        match strategy {
            StrategyKind::Rigid => self.rigid.as_ref(),
            StrategyKind::Affine => self.affine.as_ref(),
            StrategyKind::Mean => self.mean.as_ref(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rigid.is_none() && self.affine.is_none() && self.mean.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFailure {
    pub s_t_index: usize,
    pub model: TransformKind,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub s_e_index: usize,
    /// Template index of the first vector entry.
    pub z_start: usize,
    pub nmi_rigid: Vec<Option<f64>>,
    /// All `None` when only the rigid strategy was requested.
    pub nmi_affine: Vec<Option<f64>>,
    pub nmi_mean: Vec<Option<f64>>,
    pub best: BestPerStrategy,
    pub failures: Vec<PairFailure>,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.nmi_rigid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nmi_rigid.is_empty()
    }

    pub fn scores(&self, strategy: StrategyKind) -> &[Option<f64>] {
        match strategy {
            StrategyKind::Rigid => &self.nmi_rigid,
            StrategyKind::Affine => &self.nmi_affine,
            StrategyKind::Mean => &self.nmi_mean,
        }
    }

    pub fn best_index(&self, strategy: StrategyKind) -> Option<usize> {
        self.best.get(strategy).map(|b| b.index)
    }

    /// Status text of entry `k` for tabular output.
    pub fn status(&self, k: usize) -> String {
        let s_t = self.z_start + k;
        let msgs: Vec<String> = self
            .failures
            .iter()
            .filter(|f| f.s_t_index == s_t)
            .map(|f| format!("{} failed: {}", f.model.name(), f.error))
            .collect();
        if msgs.is_empty() {
            "ok".into()
        } else {
            msgs.join("; ")
        }
    }
}

fn resolve_range(n_t: usize, z_range: Option<(usize, usize)>) -> Result<(usize, usize)> {
    if n_t == 0 {
        return Err(Error::InvalidVolume("template has no slices".into()));
    }
    match z_range {
        None => Ok((0, n_t - 1)),
        Some((lo, hi)) if lo <= hi && hi < n_t => Ok((lo, hi)),
        Some((lo, hi)) => Err(Error::InvalidParams(format!(
            "z range [{lo}, {hi}] outside 0..{n_t}"
        ))),
    }
}

/// Like [`match_slice_with`] but returns the (possibly empty-handed) result
/// even when every pair failed. Cartography rows are built with this.
pub fn score_slice_with<E: Executor>(
    s_e: &Image2D,
    template: &Volume3D,
    params: &MatcherParams,
    strategy: StrategyKind,
    z_range: Option<(usize, usize)>,
    executor: &E,
) -> Result<MatchResult> {
    params.validate()?;
    let [nx, ny, nz] = template.dims();
    let (lo, hi) = resolve_range(nz, z_range)?;
    if (s_e.width(), s_e.height()) != (nx, ny) {
        return Err(Error::DimMismatch(format!(
            "slice {}x{} vs template slices {nx}x{ny}",
            s_e.width(),
            s_e.height()
        )));
    }
    let with_affine = strategy.needs_affine();
    let pairs: Vec<Result<PairScore>> = executor.map(hi - lo + 1, |k| {
        let s_t = template.coronal_slice(lo + k)?;
        score_models(s_e, &s_t, params, with_affine)
    });

    let n = pairs.len();
    let mut nmi_rigid = Vec::with_capacity(n);
    let mut nmi_affine = Vec::with_capacity(n);
    let mut nmi_mean = Vec::with_capacity(n);
    let mut rigid_t = Vec::with_capacity(n);
    let mut affine_t = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (k, pair) in pairs.into_iter().enumerate() {
        let s_t_index = lo + k;
        let pair = pair?;
        let mut take = |r: Result<ModelScore>, model| match r {
            Ok(m) => (Some(m.nmi), Some(m.transform)),
            Err(error) => {
                failures.push(PairFailure {
                    s_t_index,
                    model,
                    error,
                });
                (None, None)
            }
        };
        let (r, rt) = take(pair.rigid, TransformKind::Rigid);
        let (a, at) = match pair.affine {
            Some(res) => take(res, TransformKind::Affine),
            None => (None, None),
        };
        nmi_rigid.push(r);
        nmi_affine.push(a);
        nmi_mean.push(match (r, a) {
            (Some(r), Some(a)) => Some((r + a) / 2.0),
            _ => None,
        });
        rigid_t.push(rt);
        affine_t.push(at);
    }
    let pick = |scores: &[Option<f64>], transforms: &[Option<LinearTransform2D>]| {
        let k = argmax_with_ties(scores).ok()?;
        Some(StrategyBest {
            index: lo + k,
            nmi: scores[k]?,
            transform: transforms[k]?,
        })
    };
    let best = BestPerStrategy {
        rigid: pick(&nmi_rigid, &rigid_t),
        affine: pick(&nmi_affine, &affine_t),
        mean: pick(&nmi_mean, &affine_t),
    };
    Ok(MatchResult {
        s_e_index: 0,
        z_start: lo,
        nmi_rigid,
        nmi_affine,
        nmi_mean,
        best,
        failures,
    })
}

/// Scores `s_e` against template slices `z_range` (inclusive, default all)
/// and picks the best template slice per strategy. Only the rigid model is
/// evaluated for [`StrategyKind::Rigid`]; both models otherwise. The result
/// does not depend on the executor.
pub fn match_slice_with<E: Executor>(
    s_e: &Image2D,
    template: &Volume3D,
    params: &MatcherParams,
    strategy: StrategyKind,
    z_range: Option<(usize, usize)>,
    executor: &E,
) -> Result<MatchResult> {
    let result = score_slice_with(s_e, template, params, strategy, z_range, executor)?;
    if result.best.is_empty() {
        return Err(Error::AllPairsFailed);
    }
    Ok(result)
}

/// [`match_slice_with`] on the calling thread.
pub fn match_slice(
    s_e: &Image2D,
    template: &Volume3D,
    params: &MatcherParams,
    strategy: StrategyKind,
    z_range: Option<(usize, usize)>,
) -> Result<MatchResult> {
    match_slice_with(s_e, template, params, strategy, z_range, &Sequential)
}
