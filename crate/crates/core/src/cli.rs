//! Command-line front end: `generate`, `train`, `eval`, `predict`,
//! `ablate` and `plot`.
//!
//! Failures print a single line `error: kind=<kind> message="<text>"` on
//! stderr and exit with status 1 (2 for unparseable arguments).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataio::{discretize_raster, normalize_tile, read_raster, read_tile, write_raster, Dataset, NormStats};
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::geometry::SamplingMode;
use crate::model::{predict_tile, Head, ModelConfig, ModelKind};
use crate::plot::{render, Palette};
use crate::synthgen::generate_scene;
use crate::tensor::checkpoint;
use crate::trainer::{evaluate, train, write_outcome, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "strata", version, about = "Height-aware lidar to raster projection for thaw mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Generate(GenerateArgs),
    /// Train one model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Predict a raster for one tile.
    Predict(PredictArgs),
    /// Train and evaluate every ablation variant.
    Ablate(AblateArgs),
    /// Render rasters as a PPM image.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key = value file applied on top of the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base settings: `full` or `desk`.
    #[arg(long, default_value = "full")]
    pub preset: String,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub dump_config: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::preset(&self.preset)?;
        if let Some(p) = &self.config {
            c.apply_text(&fs::read_to_string(p)?)?;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the dataset in a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from `last.spck` in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Overwrite a previous run in the output directory.
    #[arg(long)]
    pub force: bool,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A `.spck` file inside a training output directory, or the directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `eval`, `train` or `all`.
    #[arg(long, default_value = "eval")]
    pub split: String,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PCT1 tile with tile-local x and y.
    #[arg(long)]
    pub tile: PathBuf,
    /// Output RAS1 raster (class predictions store class indices 0..6).
    #[arg(long)]
    pub out: PathBuf,
    /// Tile origin x,y in projected metres.
    #[arg(long, default_value = "0,0")]
    pub origin: String,
    /// Tile extent in metres; defaults to the configured tile size.
    #[arg(long)]
    pub extent: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, conflicts_with = "pair", required_unless_present = "pair")]
    pub raster: Option<PathBuf>,
    /// Truth and prediction, drawn side by side.
    #[arg(long, num_args = 2, value_names = ["TRUTH", "PRED"])]
    pub pair: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub out: PathBuf,
    /// Values are class indices 0..6.
    #[arg(long)]
    pub classes: bool,
    /// Convert centimetres to classes before drawing.
    #[arg(long, conflicts_with = "classes")]
    pub discretize: bool,
    #[arg(long, default_value_t = 8)]
    pub cell_px: usize,
}

/// The ablation variants: the full model, five decoder ablations and the two
/// baselines. Each differs from `base` only in the named component.
pub fn ablation_variants(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    let with = |f: &dyn Fn(&mut DecoderConfig)| {
        let mut m = base.clone();
        f(&mut m.decoder);
        m
    };
    let kind = |k: ModelKind| ModelConfig { kind: k, ..base.clone() };
    vec![
        ("full", base.clone()),
        ("mean_pool_profile", with(&|d| d.mean_pool_profile = true)),
        ("closest_k", with(&|d| d.sampling = SamplingMode::ClosestK)),
        ("M=4", with(&|d| d.m_multiplier = 4)),
        ("no_z_embedding", with(&|d| d.use_z_embedding = false)),
        ("s4_only", with(&|d| d.stages = vec![4])),
        ("baseline_mean_pool", kind(ModelKind::MeanPool)),
        ("baseline_histogram", kind(ModelKind::Histogram)),
    ]
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn is_nonempty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    if a.cfg.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let out = required(&a.out, "out")?;
    if is_nonempty_dir(out) {
        if !a.force {
            return Err(Error::Config(format!("{} is not empty; pass --force to replace it", out.display())));
        }
        for sub in ["tiles", "rasters"] {
            if out.join(sub).is_dir() {
                fs::remove_dir_all(out.join(sub))?;
            }
        }
    }
    let scene = generate_scene(&cfg.scene_config())?;
    let data = Dataset::new(scene.tiles, scene.rasters, scene.stats, scene.split)?;
    data.save(out)?;
    fs::write(out.join("config.txt"), cfg.dump())?;
    println!("wrote {} tiles to {} (train={} eval={})", data.len(), out.display(), data.split.train.len(), data.split.eval.len());
    Ok(())
}

fn check_grid(data: &Dataset, model: &ModelConfig) -> Result<()> {
    if let Some(r) = data.rasters.iter().find(|r| r.h != model.grid.h || r.w != model.grid.w) {
        return Err(Error::Dimension(format!("dataset rasters are {}x{} but the model grid is {}x{}", r.h, r.w, model.grid.h, model.grid.w)));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    if a.cfg.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let out = required(&a.out, "out")?;
    if !a.resume && !a.force && out.join("history.csv").exists() {
        return Err(Error::Config(format!("{} holds a previous run; pass --resume or --force", out.display())));
    }
    let data = Dataset::load(required(&a.data, "data")?)?;
    check_grid(&data, &cfg.model)?;
    let opts = TrainOptions { out_dir: Some(out.to_path_buf()), resume: a.resume, verbose: !a.quiet, stop_after: None };
    let outcome = train(&data, &cfg.model, &cfg.train_config(), &opts)?;
    write_outcome(&outcome, out)?;
    fs::write(out.join("config.txt"), cfg.dump())?;
    let best = &outcome.history[outcome.best_epoch];
    println!("best epoch {} val_loss {} ({} epochs)", best.epoch, best.val_loss, outcome.history.len());
    Ok(())
}

/// Run directory, configuration and statistics of a checkpoint path.
fn open_run(checkpoint: &Path) -> Result<(PathBuf, RunConfig, NormStats)> {
    let (dir, file) = if checkpoint.is_dir() {
        (checkpoint.to_path_buf(), checkpoint.join("best.spck"))
    } else {
        (checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(), checkpoint.to_path_buf())
    };
    let cfg = RunConfig::load(&dir.join("config.txt"))?;
    let stats = NormStats::read(&dir.join("stats.txt"))?;
    Ok((file, cfg, stats))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (file, cfg, stats) = open_run(&a.checkpoint)?;
    let store = checkpoint::load(&file)?;
    let data = Dataset::load(&a.data)?;
    check_grid(&data, &cfg.model)?;
    let indices: Vec<usize> = match a.split.as_str() {
        "eval" => data.split.eval.clone(),
        "train" => data.split.train.clone(),
        "all" => (0..data.len()).collect(),
        s => return Err(Error::Config(format!("unknown split `{s}` (expected eval, train or all)"))),
    };
    let ev = evaluate(&data, &indices, &cfg.model, &store, &stats, cfg.train.max_points)?;
    let mut report = ev.report;
    report.notes.insert(0, format!("split={} checkpoint={}", a.split, file.display()));
    let text = report.to_text();
    print!("{text}");
    if let Some(o) = &a.out {
        fs::write(o, text)?;
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (file, cfg, stats) = open_run(&a.checkpoint)?;
    let store = checkpoint::load(&file)?;
    let mut tile = read_tile(&a.tile)?;
    let o: Vec<f64> = a.origin.split(',').map(|s| s.trim().parse()).collect::<std::result::Result<_, _>>().map_err(|_| Error::Config(format!("bad --origin `{}`", a.origin)))?;
    if o.len() != 2 {
        return Err(Error::Config(format!("--origin needs x,y, got `{}`", a.origin)));
    }
    let e = a.extent.unwrap_or(cfg.scene.tile_size);
    tile.origin = [o[0], o[1]];
    tile.extent = [e, e];
    let capped = crate::dataio::cap_points(&tile, cfg.train.max_points)?;
    let pred = predict_tile(&normalize_tile(&capped, &stats)?, &cfg.model, &store, &stats)?;
    let mut r = pred.to_raster();
    r.origin = tile.origin;
    r.cell_size = e / cfg.model.grid.w as f64;
    write_raster(&r, &a.out)?;
    println!("wrote {}x{} {} raster to {}", r.h, r.w, cfg.model.head.name(), a.out.display());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    if a.cfg.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let data = Dataset::load(required(&a.data, "data")?)?;
    check_grid(&data, &cfg.model)?;
    let tcfg = cfg.train_config();
    let mut csv = match cfg.model.head {
        Head::Regression => "variant,rmse,r2\n".to_string(),
        Head::Classification => "variant,miou,qwk\n".to_string(),
    };
    for (name, model) in ablation_variants(&cfg.model) {
        if !a.quiet {
            eprintln!("== {name}");
        }
        let out = train(&data, &model, &tcfg, &TrainOptions { verbose: !a.quiet, ..TrainOptions::default() })?;
        let ev = evaluate(&data, &data.split.eval, &model, &out.best, &out.stats, tcfg.max_points)?;
        let get = |k: &str| ev.report.get(k).unwrap_or(f64::NAN);
        let _ = match cfg.model.head {
            Head::Regression => writeln!(csv, "{name},{},{}", get("rmse"), get("r2")),
            Head::Classification => writeln!(csv, "{name},{},{}", get("miou"), get("qwk")),
        };
    }
    match &a.out {
        Some(p) => fs::write(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let paths: Vec<&PathBuf> = match (&a.raster, &a.pair) {
        (Some(r), None) => vec![r],
        (None, Some(p)) => p.iter().collect(),
        _ => return Err(Error::Config("pass exactly one of --raster or --pair".into())),
    };
    let mut rasters = paths.iter().map(|p| read_raster(p)).collect::<Result<Vec<_>>>()?;
    let palette = if a.classes || a.discretize { Palette::Classes } else { Palette::Diverging };
    if a.discretize {
        for r in rasters.iter_mut() {
            let classes = discretize_raster(&r.values)?;
            r.values = classes.iter().map(|c| c.map_or(f64::NAN, |c| c as f64)).collect();
        }
    }
    let refs: Vec<_> = rasters.iter().collect();
    let img = render(&refs, palette, a.cell_px)?;
    img.write(&a.out)?;
    println!("wrote {}x{} image to {}", img.width, img.height, a.out.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// The one-line error report.
pub fn error_line(kind: &str, message: &str) -> String {
    let escaped = message.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error: kind={kind} message=\"{escaped}\"")
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("STRATA_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("STRATA_THREADS=`{v}` is not a thread count")))?;
        if n == 0 {
            return Err(Error::Config("STRATA_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

/// Parse `args`, run, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg.lines().take_while(|l| !l.starts_with("Usage:")).map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("{}", error_line("usage", text.join(" ").trim_start_matches("error: ")));
            return 2;
        }
    };
    match configure_threads().and_then(|_| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e.kind().to_string(), &e.to_string()));
            1
        }
    }
}
