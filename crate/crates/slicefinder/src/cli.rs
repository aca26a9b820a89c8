//! `slicefinder` subcommands.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use slicefinder_core::cartography::{dice_rows, evaluate};
use slicefinder_core::imgvol::{
    perturb_labels, perturb_volume, simulate_tilt, simulate_tilt_labels, PerturbSpec, PhantomModel,
};
use slicefinder_core::matcher::match_slice_with;
use slicefinder_core::metrics::nmi;
use slicefinder_core::xform::invert;
use slicefinder_core::{register, ExpertPairs, StrategyKind, TiltSpec, TransformKind};

use crate::config::{CommonArgs, Settings};
use crate::io::{self, write_file};
use crate::pipeline::{fit_to_template, run_cartography, Checkpoint};
use crate::provenance::{image_checksum, volume_checksum, Provenance};
use crate::{Error, PoolExecutor, Result};

#[derive(Debug, Parser)]
#[command(
    name = "slicefinder",
    version,
    about = "Locate coronal slices in a reference volume"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register one image onto another.
    Register(RegisterArgs),
    /// Find the template slice matching one experimental slice.
    Match(MatchArgs),
    /// Score every experimental slice against every template slice.
    Cartography(CartographyArgs),
    /// Compare a cartography with expert pairings.
    Evaluate(EvaluateArgs),
    /// Re-slice a volume along tilted planes.
    Tilt(TiltArgs),
    /// Generate a synthetic phantom (and optionally a perturbed copy).
    Phantom(PhantomArgs),
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Reference image (PGM).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Floating image (PGM).
    #[arg(long)]
    pub flt: PathBuf,
    #[arg(long, default_value = "rigid")]
    pub model: TransformKind,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Experimental slice (PGM).
    #[arg(long)]
    pub slice: Option<PathBuf>,
    /// Template volume header.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CartographyArgs {
    /// Experimental volume header.
    #[arg(long)]
    pub exp: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rows computed between two checkpoint flushes (default: 4 per worker).
    #[arg(long)]
    pub flush_rows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Cartography CSV; `transforms.csv` next to it is used for Dice.
    #[arg(long)]
    pub cartography: PathBuf,
    /// Expert pairs CSV with header `s_e,s_t_expert`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub exp_labels: Option<PathBuf>,
    #[arg(long)]
    pub template_labels: Option<PathBuf>,
    /// Slices scored with Dice, comma separated (default: the expert slices).
    #[arg(long, value_delimiter = ',')]
    pub dice_slices: Option<Vec<usize>>,
    /// Regions scored with Dice, comma separated (default: all non-zero labels).
    #[arg(long, value_delimiter = ',')]
    pub regions: Option<Vec<u16>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TiltArgs {
    /// Input volume header.
    #[arg(long)]
    pub input: PathBuf,
    /// Rotation about the left-right (x) axis, degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta: f64,
    /// Rotation about the infero-superior (y) axis, degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub phi: f64,
    /// Output volume header.
    #[arg(long)]
    pub out: PathBuf,
    /// Label volume to tilt alongside.
    #[arg(long, requires = "labels_out")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"], default_values_t = [64, 64, 96])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `experimental.vol` and `experimental_labels.vol`: every slice rotated by up to this many degrees.
    #[arg(long)]
    pub perturb_angle: Option<f64>,
    /// Per-slice shift bound in pixels for `experimental.vol`.
    #[arg(long)]
    pub perturb_shift: Option<f64>,
    /// Noise sigma as a fraction of each slice's range for `experimental.vol`.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Expert pairs written to `pairs.csv`.
    #[arg(long, default_value_t = 30)]
    pub pairs: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::resolve(&cli.common)?;
    match cli.command {
        Command::Register(a) => cmd_register(&a, &settings),
        Command::Match(a) => cmd_match(&a, &settings),
        Command::Cartography(a) => cmd_cartography(&a, &settings),
        Command::Evaluate(a) => cmd_evaluate(&a, &settings),
        Command::Tilt(a) => cmd_tilt(&a),
        Command::Phantom(a) => cmd_phantom(&a),
    }
}

pub fn cmd_register(args: &RegisterArgs, settings: &Settings) -> Result<()> {
    let reference = io::load_image(&args.reference)?;
    let flt = io::load_image(&args.flt)?;
    let flt = slicefinder_core::imgvol::adjust_fov(&flt, reference.width(), reference.height())?;
    let result = register(
        &reference,
        &flt,
        args.model,
        &settings.params.registration,
        None,
    )?;
    let warped = slicefinder_core::xform::warp_image(&flt, &invert(&result.transform)?)?;
    let score = nmi(&reference, &warped, settings.params.bins)?;
    io::write_transform(&args.out.join("transform.csv"), &result.transform)?;
    io::save_image(&warped, &args.out.join("warped.pgm"))?;
    write_file(
        &args.out.join("nmi.txt"),
        format!(
            "nmi: {score:?}\nresidual_rms: {:?}\nconverged: {}\n",
            result.residual_rms, result.converged
        ),
    )?;
    println!("nmi={score}");
    Ok(())
}

pub fn cmd_match(args: &MatchArgs, settings: &Settings) -> Result<()> {
    let cfg = &settings.config;
    let slice_path = cfg.path(&args.slice, "slice", "--slice")?;
    let template_path = cfg.path(&args.template, "template", "--template")?;
    let out = cfg.path(&args.out, "out", "--out")?;
    let template = io::load_volume(&template_path)?;
    let slice = fit_to_template(&io::load_image(&slice_path)?, &template)?;
    let pool = PoolExecutor::new(settings.workers)?;
    let result = match_slice_with(
        &slice,
        &template,
        &settings.params,
        settings.strategy,
        settings.z_range,
        &pool,
    )?;
    let provenance = Provenance::new(
        &settings.params,
        settings.strategy,
        image_checksum(&slice),
        volume_checksum(&template),
    );
    io::save_match_csv(&result, &provenance, &out.join("match.csv"))?;
    let mut summary = String::new();
    for s in StrategyKind::ALL {
        if let Some(b) = result.best.get(s) {
            io::write_transform(&out.join(format!("transform_{s}.csv")), &b.transform)?;
            let _ = writeln!(summary, "best_index({s})={} nmi={}", b.index, b.nmi);
        }
    }
    print!("{summary}");
    Ok(())
}

pub fn cmd_cartography(args: &CartographyArgs, settings: &Settings) -> Result<()> {
    let cfg = &settings.config;
    let exp_path = cfg.path(&args.exp, "exp", "--exp")?;
    let template_path = cfg.path(&args.template, "template", "--template")?;
    let out = cfg.path(&args.out, "out", "--out")?;
    let exp = io::load_volume(&exp_path)?;
    let template = io::load_volume(&template_path)?;
    let provenance = Provenance::new(
        &settings.params,
        settings.strategy,
        volume_checksum(&exp),
        volume_checksum(&template),
    );
    let pool = PoolExecutor::new(settings.workers)?;
    let csv = out.join("cartography.csv");
    let checkpoint = Checkpoint {
        path: &csv,
        provenance: &provenance,
        rows_per_flush: args.flush_rows.unwrap_or(4 * settings.workers),
    };
    let (carto, timings) = run_cartography(
        &exp,
        &template,
        &settings.params,
        settings.strategy,
        &pool,
        Some(checkpoint),
    )?;
    io::save_cartography_csv(&carto, &provenance, &csv)?;
    io::save_best_transforms(&carto, &provenance, &out.join("transforms.csv"))?;
    let mut failures = String::from("s_e,s_t,model,error\n");
    for f in &carto.failures {
        let _ = writeln!(
            failures,
            "{},{},{},{}",
            f.s_e_index,
            f.failure.s_t_index,
            f.failure.model.name(),
            f.failure.error.to_string().replace(',', ";")
        );
    }
    write_file(&out.join("failures.csv"), failures)?;
    for s in StrategyKind::ALL {
        match io::save_heatmap(&carto, s, &out.join(format!("heatmap_{s}.pgm"))) {
            Ok(()) => {}
            Err(Error::Export(msg)) => log::warn!("{msg}"),
            Err(e) => return Err(e),
        }
    }
    write_file(&out.join("timings.txt"), timings.to_text())?;
    println!(
        "cartography {}x{}: {} failed pairs, {:.1} s",
        carto.n_e(),
        carto.n_t(),
        carto.failures.len(),
        timings.wall.as_secs_f64()
    );
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs, settings: &Settings) -> Result<()> {
    let cfg = &settings.config;
    let pairs_path = cfg.path(&args.pairs, "pairs", "--pairs")?;
    let out = cfg.path(&args.out, "out", "--out")?;
    let transforms = args.cartography.with_file_name("transforms.csv");
    let transforms = transforms.exists().then_some(transforms);
    let carto = io::load_cartography(&args.cartography, transforms.as_deref())?;
    let provenance =
        io::parse_cartography_csv(&io::read_text(&args.cartography)?, &args.cartography)?
            .provenance
            .unwrap_or_else(|| {
                Provenance::new(&settings.params, settings.strategy, "-".into(), "-".into())
            });
    let pairs: ExpertPairs = io::load_expert_pairs(&pairs_path)?;
    let mut report = evaluate(&carto, &pairs)?;

    let exp_labels = cfg.optional_path(&args.exp_labels, "exp_labels")?;
    let template_labels = cfg.optional_path(&args.template_labels, "template_labels")?;
    if let (Some(el), Some(tl)) = (exp_labels, template_labels) {
        if transforms.is_none() {
            return Err(Error::Config(
                "Dice scoring needs transforms.csv next to the cartography".into(),
            ));
        }
        let el = io::load_label_volume(&el)?;
        let tl = io::load_label_volume(&tl)?;
        let regions: Vec<u16> = match &args.regions {
            Some(r) => r.clone(),
            None => el
                .labels()
                .iter()
                .copied()
                .filter(|&l| l != 0)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let slices = args
            .dice_slices
            .clone()
            .unwrap_or_else(|| pairs.pairs.iter().map(|p| p.0).collect());
        for s in StrategyKind::ALL {
            report
                .dice
                .push((s, dice_rows(&carto, s, &el, &tl, &regions, &slices)?));
        }
    }
    io::save_report_csv(&report, &provenance, &out.join("report.csv"))?;
    for s in &report.strategies {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        let mut line = format!(
            "{}: r2={} delta_sn_mean={} delta_sn_std={} excluded={}",
            s.strategy,
            fmt(s.regression.map(|r| r.r2)),
            fmt(s.delta_sn_mean),
            fmt(s.delta_sn_std),
            s.excluded_rows.len()
        );
        if let Some((_, rows)) = report.dice.iter().find(|(k, _)| *k == s.strategy) {
            let means: Vec<f64> = rows.iter().filter_map(|r| r.dice.mean).collect();
            let m = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);
            let _ = write!(line, " mean_dice={}", fmt(m));
        }
        println!("{line}");
    }
    Ok(())
}

pub fn cmd_tilt(args: &TiltArgs) -> Result<()> {
    let tilt = TiltSpec::new(args.theta, args.phi)?;
    let vol = io::load_volume(&args.input)?;
    let out_dtype = io::parse_volume_header(&io::read_text(&args.input)?, &args.input)?.dtype;
    let tilted = simulate_tilt(&vol, &tilt)?;
    let dtype = if tilt.is_zero() {
        Some(out_dtype)
    } else {
        None
    };
    io::save_volume(&tilted, &args.out, dtype)?;
    if let (Some(lin), Some(lout)) = (&args.labels, &args.labels_out) {
        let labels = io::load_label_volume(lin)?;
        io::save_label_volume(
            &simulate_tilt_labels(&labels, &tilt)?,
            vol.spacing_um(),
            lout,
        )?;
    }
    println!("{}", volume_checksum(&tilted));
    Ok(())
}

pub fn cmd_phantom(args: &PhantomArgs) -> Result<()> {
    let [nx, ny, nz] = <[usize; 3]>::try_from(args.dims.as_slice())
        .map_err(|_| Error::Config("--dims takes three values".into()))?;
    let model = PhantomModel::new(nx, ny, nz, args.seed)?;
    let vol = model.volume()?;
    let vol_path = args.out.join("phantom.vol");
    io::save_volume(&vol, &vol_path, None)?;
    io::save_label_volume(
        &model.label_volume()?,
        vol.spacing_um(),
        &args.out.join("labels.vol"),
    )?;
    let count = args.pairs.min(nz);
    if count >= 2 {
        let pairs: Vec<(usize, usize)> = (0..count)
            .map(|k| k * (nz - 1) / (count - 1))
            .map(|z| (z, z))
            .collect();
        io::save_expert_pairs(
            &ExpertPairs::new(pairs, "phantom identity")?,
            &args.out.join("pairs.csv"),
        )?;
    }
    if args.perturb_angle.is_some() || args.perturb_shift.is_some() || args.noise.is_some() {
        let spec = PerturbSpec {
            max_angle_deg: args.perturb_angle.unwrap_or(0.0),
            max_shift_px: args.perturb_shift.unwrap_or(0.0),
            noise_fraction: args.noise.unwrap_or(0.0),
        };
        let (exp, transforms) = perturb_volume(&vol, &spec, args.seed)?;
        io::save_volume(&exp, &args.out.join("experimental.vol"), None)?;
        let labels = perturb_labels(&model.label_volume()?, &transforms)?;
        io::save_label_volume(
            &labels,
            vol.spacing_um(),
            &args.out.join("experimental_labels.vol"),
        )?;
        let mut table = String::from("s_e,kind,m00,m01,m10,m11,tx,ty\n");
        for (z, t) in transforms.iter().enumerate() {
            let _ = writeln!(table, "{z},{}", io::format_transform(t));
        }
        write_file(&args.out.join("perturbations.csv"), table)?;
    }
    println!("{}", volume_checksum(&io::load_volume(&vol_path)?));
    Ok(())
}

/// Parses arguments, runs, and maps the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("slicefinder: error: {e}");
            e.exit_code()
        }
    }
}
