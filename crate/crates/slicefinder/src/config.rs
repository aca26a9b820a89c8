//! Flat `key = value` configuration with command-line precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use slicefinder_core::{BlockMatchParams, MatcherParams, StrategyKind};

use crate::io::read_text;
use crate::{Error, Result};

/// Keys accepted in a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "workers",
    "bins",
    "levels",
    "block_size",
    "block_stride",
    "search_radius",
    "variance_keep",
    "lts_keep",
    "iterations",
    "strategy",
    "z_range",
    "seed",
    "exp",
    "template",
    "slice",
    "pairs",
    "exp_labels",
    "template_labels",
    "out",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key '{k}'", i + 1)));
            }
            if entries
                .insert(k.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{k}'",
                    i + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))
            })
            .transpose()
    }

    /// Command-line value, else config value, else an error naming both.
    pub fn path(&self, cli: &Option<PathBuf>, key: &str, flag: &str) -> Result<PathBuf> {
        if let Some(p) = cli {
            return Ok(p.clone());
        }
        self.get::<PathBuf>(key)?
            .ok_or_else(|| Error::Config(format!("missing {flag} (or '{key}' in the config file)")))
    }

    pub fn optional_path(&self, cli: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        match cli {
            Some(p) => Ok(Some(p.clone())),
            None => self.get::<PathBuf>(key),
        }
    }
}

/// Inclusive template slice range written `lo:hi`.
pub fn parse_z_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got '{s}'"))?;
    let lo = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad lower bound in '{s}'"))?;
    let hi = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad upper bound in '{s}'"))?;
    Ok((lo, hi))
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "SLICEFINDER_WORKERS")]
    pub workers: Option<usize>,
    /// NMI histogram bins.
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Pyramid levels.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    #[arg(long, global = true)]
    pub block_size: Option<usize>,
    #[arg(long, global = true)]
    pub block_stride: Option<usize>,
    #[arg(long, global = true)]
    pub search_radius: Option<usize>,
    /// Fraction of highest-variance blocks matched.
    #[arg(long, global = true)]
    pub variance_keep: Option<f64>,
    /// Fraction of correspondences kept by the trimmed fit.
    #[arg(long, global = true)]
    pub lts_keep: Option<f64>,
    /// Registration iterations per pyramid level.
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// rigid, affine or mean.
    #[arg(long, global = true)]
    pub strategy: Option<StrategyKind>,
    /// Inclusive template slice range, `lo:hi`.
    #[arg(long, global = true, value_parser = parse_z_range)]
    pub z_range: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub params: MatcherParams,
    pub strategy: StrategyKind,
    pub workers: usize,
    pub z_range: Option<(usize, usize)>,
    pub config: ConfigFile,
}

impl Settings {
    /// Merges flags over the config file over defaults and validates the
    /// result.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let config = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let d = BlockMatchParams::default();
        let registration = BlockMatchParams {
            pyramid_levels: pick(args.levels, &config, "levels", d.pyramid_levels)?,
            block_size: pick(args.block_size, &config, "block_size", d.block_size)?,
            block_stride: pick(args.block_stride, &config, "block_stride", d.block_stride)?,
            search_radius: pick(
                args.search_radius,
                &config,
                "search_radius",
                d.search_radius,
            )?,
            variance_keep_fraction: pick(
                args.variance_keep,
                &config,
                "variance_keep",
                d.variance_keep_fraction,
            )?,
            lts_keep_fraction: pick(args.lts_keep, &config, "lts_keep", d.lts_keep_fraction)?,
            iterations_per_level: pick(
                args.iterations,
                &config,
                "iterations",
                d.iterations_per_level,
            )?,
        };
        let params = MatcherParams {
            registration,
            bins: pick(args.bins, &config, "bins", MatcherParams::default().bins)?,
        };
        params.validate()?;
        let default_workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        let workers = pick(args.workers, &config, "workers", default_workers)?;
        if workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        let strategy = pick(args.strategy, &config, "strategy", StrategyKind::Mean)?;
        let z_range = match args.z_range {
            Some(r) => Some(r),
            None => config
                .entries
                .get("z_range")
                .map(|v| parse_z_range(v).map_err(Error::Config))
                .transpose()?,
        };
        if let Some((lo, hi)) = z_range {
            if lo > hi {
                return Err(Error::Config(format!("z_range {lo}:{hi} is empty")));
            }
        }
        Ok(Self {
            params,
            strategy,
            workers,
            z_range,
            config,
        })
    }
}

fn pick<T: std::str::FromStr>(
    cli: Option<T>,
    config: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T> {
    match cli {
        Some(v) => Ok(v),
        None => Ok(config.get(key)?.unwrap_or(default)),
    }
}
