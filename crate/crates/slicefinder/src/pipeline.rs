//! Batch steps shared by the command-line tool and tests.

use std::path::Path;
use std::time::{Duration, Instant};

use slicefinder_core::cartography::{cartography_row, check_preprocessed, NmiCartography};
use slicefinder_core::imgvol::{adjust_fov, resample_isotropic};
use slicefinder_core::{Executor, Image2D, MatchResult, MatcherParams, StrategyKind, Volume3D};

use crate::io::{format_cartography_csv, write_file};
use crate::provenance::{Provenance, RunStatus};
use crate::Result;

/// Brings a slice onto a template's slice grid: resampled to the template's
/// in-plane spacing, then centered in its field of view.
pub fn fit_to_template(img: &Image2D, template: &Volume3D) -> Result<Image2D> {
    let [nx, ny, _] = template.dims();
    let target = template.spacing_um()[0];
    let resampled = if (img.spacing_um() - target).abs() > 1e-9 * target {
        resample_isotropic(img, target)?
    } else {
        img.clone()
    };
    Ok(adjust_fov(&resampled, nx, ny)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timings {
    pub wall: Duration,
    /// Seconds spent on each experimental slice.
    pub row_seconds: Vec<f64>,
    pub registrations: usize,
}

impl Timings {
    pub fn to_text(&self) -> String {
        let rows = self.row_seconds.len().max(1) as f64;
        format!(
            "wall_seconds: {:.3}\nrows: {}\nregistrations: {}\nmean_row_seconds: {:.4}\n",
            self.wall.as_secs_f64(),
            self.row_seconds.len(),
            self.registrations,
            self.row_seconds.iter().sum::<f64>() / rows
        )
    }
}

/// Where partial results go while a cartography is being built.
pub struct Checkpoint<'a> {
    pub path: &'a Path,
    pub provenance: &'a Provenance,
    /// Rows computed between two flushes.
    pub rows_per_flush: usize,
}

/// Builds a cartography row by row on `executor`. With a checkpoint, the
/// rows finished so far are written after every chunk under an
/// `incomplete` provenance status. Scores equal those of
/// [`slicefinder_core::cartography::build_cartography`].
pub fn run_cartography<E: Executor>(
    exp: &Volume3D,
    template: &Volume3D,
    params: &MatcherParams,
    strategy: StrategyKind,
    executor: &E,
    checkpoint: Option<Checkpoint<'_>>,
) -> Result<(NmiCartography, Timings)> {
    params.validate()?;
    check_preprocessed(exp, template)?;
    let start = Instant::now();
    let n_e = exp.dims()[2];
    let n_t = template.dims()[2];
    let chunk = checkpoint.as_ref().map_or(n_e, |c| c.rows_per_flush.max(1));
    let mut rows: Vec<MatchResult> = Vec::with_capacity(n_e);
    let mut row_seconds = Vec::with_capacity(n_e);
    while rows.len() < n_e {
        let base = rows.len();
        let len = chunk.min(n_e - base);
        let done = executor.map(len, |k| {
            let t = Instant::now();
            let row = cartography_row(exp, base + k, template, params, strategy);
            (row, t.elapsed().as_secs_f64())
        });
        for (row, secs) in done {
            rows.push(row?);
            row_seconds.push(secs);
        }
        log::info!("cartography: {}/{n_e} rows", rows.len());
        if let Some(cp) = &checkpoint {
            if rows.len() < n_e {
                let partial = NmiCartography::from_rows(rows.clone(), n_t, *params, strategy)?;
                let status = RunStatus::Incomplete {
                    done: rows.len(),
                    total: n_e,
                };
                write_file(
                    cp.path,
                    format_cartography_csv(&partial, &cp.provenance.with_status(status), None),
                )?;
            }
        }
    }
    let carto = NmiCartography::from_rows(rows, n_t, *params, strategy)?;
    let per_pair = if strategy.needs_affine() { 2 } else { 1 };
    let timings = Timings {
        wall: start.elapsed(),
        row_seconds,
        registrations: n_e * n_t * per_pair,
    };
    log::info!(
        "cartography: {} registrations in {:.1} s",
        timings.registrations,
        timings.wall.as_secs_f64()
    );
    Ok((carto, timings))
}
