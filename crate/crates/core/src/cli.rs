//! Command-line front end: `synth`, `train`, `infer`, `eval`, `match`, `stats` and `aor-plot`.
//!
//! Exit codes: 0 on success, 2 for invalid input (bad flags, missing or malformed files),
//! 1 for runtime failures.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{build_ground_truth, AnnotateConfig, InstanceMap, OcclusionMatrix, SegmentsFile, DEFAULT_RHO};
use crate::eval::{evaluate, AorCurve, PrTable, ThresholdCounts, DEFAULT_MAX_DIST_FRAC};
use crate::infer::{infer_with, multiscale_average, overlay_png, InferConfig, NmsConfig, ScoredBoundaryMap, DEFAULT_NMS_MARGIN, DEFAULT_TANGENT_WINDOW};
use crate::loss::{LossConfigFile, Variant};
use crate::net::{train, ModelParams, TrainConfig};
use crate::raster::Raster;
use crate::repr::{fragments_to_json, OrientedBoundaryMap, DEFAULT_FRAGMENT_LEN};
use crate::synth::{random_scene, render, scene_seed, DEFAULT_DIFFICULTY, DEFAULT_SIZE};

pub const THREADS_ENV: &str = "OCCLUSIA_THREADS";
pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "occlusia", version, about = "Occlusion boundary and border-ownership toolkit")]
struct Cli {
    /// TOML or JSON file giving defaults for any flag; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Train the network on a dataset directory.
    Train(TrainArgs),
    /// Predict scored occlusion boundaries for images.
    Infer(InferArgs),
    /// Score predictions against ground truth (AOR and PR curves).
    Eval(EvalArgs),
    /// Turn an instance map and annotated segments into ground truth.
    Match(MatchArgs),
    /// Count occluder/occluded class pairs.
    Stats(StatsArgs),
    /// Plot AOR curves as SVG.
    AorPlot(AorPlotArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SynthArgs {
    /// Number of scenes.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// 0 gives two high-contrast shapes, 1 gives six low-contrast ones.
    #[arg(long, default_value_t = DEFAULT_DIFFICULTY)]
    difficulty: f64,
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    width: usize,
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    height: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    /// Dataset directory with a manifest.
    #[arg(long)]
    data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV; defaults to the model path with a `.loss.csv` extension.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `as-written` or `symmetric`.
    #[arg(long)]
    loss_variant: Option<String>,
    /// TOML or JSON loss parameters (alpha, delta, variant, beta_mode, beta, reduction).
    #[arg(long)]
    loss_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Image files (PNG or fmap).
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Dataset directory; every scene image in its manifest is processed.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated image scales whose outputs are averaged.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5")]
    scales: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_NMS_MARGIN)]
    nms_margin: f64,
    #[arg(long, default_value_t = DEFAULT_TANGENT_WINDOW)]
    tangent_window: usize,
    /// Skip the overlay PNG.
    #[arg(long)]
    no_overlay: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvalArgs {
    /// Prediction directory or file prefix.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth directory or file prefix.
    #[arg(long)]
    gt: PathBuf,
    /// AOR CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Boundary precision/recall CSV to write.
    #[arg(long)]
    pr: Option<PathBuf>,
    /// Matching distance as a fraction of the image diagonal.
    #[arg(long, default_value_t = DEFAULT_MAX_DIST_FRAC)]
    max_dist_frac: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct MatchArgs {
    /// 16-bit instance id PNG.
    #[arg(long)]
    instances: PathBuf,
    /// Class table JSON.
    #[arg(long)]
    classes: PathBuf,
    /// Segments JSON from the annotation tool.
    #[arg(long)]
    segments: PathBuf,
    /// Output prefix.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RHO)]
    rho: f64,
    #[arg(long, default_value_t = DEFAULT_FRAGMENT_LEN)]
    fragment_len: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct StatsArgs {
    /// Dataset directory; every scene's instances, classes and segments are counted.
    #[arg(long, conflicts_with_all = ["instances", "classes", "segments"])]
    data: Option<PathBuf>,
    #[arg(long, requires_all = ["classes", "segments"])]
    instances: Option<PathBuf>,
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Matrix CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RHO)]
    rho: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct AorPlotArgs {
    /// `name=path.csv` or `path.csv` (named after the file stem); repeatable.
    #[arg(long = "curve", required = true)]
    curves: Vec<String>,
    /// SVG to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        classify(e, None)
    }
}

fn classify(e: crate::Error, path: Option<&Path>) -> CliError {
    let msg = match path {
        Some(p) => format!("{}: {e}", p.display()),
        None => e.to_string(),
    };
    let validation = e.is_validation()
        || matches!(&e, crate::Error::Image(_))
        || matches!(&e, crate::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData));
    if validation {
        CliError::Validation(msg)
    } else {
        CliError::Runtime(msg)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Attaches the path to an error.
fn at<T>(path: &Path, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| classify(e, Some(path)))
}

fn read_text(path: &Path) -> CliResult<String> {
    at(path, fs::read_to_string(path).map_err(Into::into))
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let runtime = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    let name = path.file_name().ok_or_else(|| invalid(format!("{}: not a file path", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(runtime)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        runtime(e)
    })
}

fn write_all(files: &[(PathBuf, Vec<u8>)]) -> CliResult<()> {
    files.iter().try_for_each(|(p, b)| write_atomic(p, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    difficulty: f64,
    width: usize,
    height: usize,
    scenes: Vec<String>,
}

fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    let text = read_text(&path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if m.scenes.is_empty() {
        return Err(invalid(format!("{}: scenes: empty", path.display())));
    }
    Ok(m)
}

fn prefix(dir: &Path, stem: &str) -> PathBuf {
    dir.join(stem)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let result = match thread_cap() {
        Ok(Some(n)) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::Runtime(format!("thread pool: {e}"))),
        },
        Ok(None) => dispatch(cli.command),
        Err(e) => Err(e),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(invalid(format!("{THREADS_ENV}: expected a positive integer, got {v:?}"))),
        },
    }
}

/// Splices flags from `--config` into the argument list just after the subcommand name,
/// so that flags given explicitly (which come later) take precedence.
///
/// Top-level scalar keys apply to whichever command runs; a table named after a command
/// applies only to it.
fn apply_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut config = None;
    let mut sub_pos = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if sub_pos.is_none() && !a.starts_with('-') {
            sub_pos = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(pos)) = (config, sub_pos) else {
        return Ok(argv);
    };
    let text = read_text(&path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let table: serde_json::Map<String, serde_json::Value> = if is_json {
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
    } else {
        let v: toml::Table = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v)
            .ok()
            .and_then(|v| v.as_object().cloned())
            .ok_or_else(|| invalid(format!("{}: not a table", path.display())))?
    };
    let sub = argv[pos].to_string_lossy().into_owned();
    let mut injected = Vec::new();
    for (k, v) in &table {
        if v.is_object() {
            if *k == sub {
                for (k2, v2) in v.as_object().unwrap() {
                    push_flag(&mut injected, k2, v2, &path)?;
                }
            }
        } else {
            push_flag(&mut injected, k, v, &path)?;
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}

fn push_flag(out: &mut Vec<OsString>, key: &str, v: &serde_json::Value, path: &Path) -> CliResult<()> {
    use serde_json::Value;
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(invalid(format!("{}: {key}: unsupported value {v}", path.display()))),
    };
    match v {
        Value::Bool(true) => out.push(flag.into()),
        Value::Bool(false) | Value::Null => {}
        Value::Array(items) => {
            for it in items {
                out.push(flag.clone().into());
                out.push(scalar(it)?.into());
            }
        }
        other => {
            out.push(flag.into());
            out.push(scalar(other)?.into());
        }
    }
    Ok(())
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Match(a) => cmd_match(a),
        Command::Stats(a) => cmd_stats(a),
        Command::AorPlot(a) => cmd_aor_plot(a),
    }
}

fn scene_name(i: usize) -> String {
    format!("scene_{i:04}")
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    if a.n == 0 {
        return Err(invalid("n: must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.difficulty) {
        return Err(invalid(format!("difficulty: must be in [0, 1], got {}", a.difficulty)));
    }
    if a.width < 8 || a.height < 8 || a.width > 1 << 14 || a.height > 1 << 14 {
        return Err(invalid(format!("size {}x{}: each side must be in [8, 16384]", a.width, a.height)));
    }
    let scenes: Vec<Vec<(PathBuf, Vec<u8>)>> = (0..a.n)
        .into_par_iter()
        .map(|i| -> CliResult<_> {
            let spec = random_scene(a.width, a.height, a.difficulty, scene_seed(a.seed, i));
            let r = render(&spec)?;
            for w in &r.warnings {
                log::debug!("{}: {w}", scene_name(i));
            }
            let name = scene_name(i);
            let p = prefix(&a.out, &name);
            let segs = SegmentsFile {
                image: format!("{name}.png"),
                segments: r.segments.clone(),
            };
            let (edge, orient) = OrientedBoundaryMap::fmap_files(&p);
            Ok(vec![
                (with_suffix(&p, ".png"), r.image.to_png_bytes()?),
                (edge, r.gt.edge.to_fmap_bytes()),
                (orient, r.gt.orient.to_fmap_bytes()),
                (with_suffix(&p, ".fragments.json"), fragments_to_json(&r.fragments)?.into_bytes()),
                (with_suffix(&p, ".segments.json"), segs.to_json()?.into_bytes()),
                (with_suffix(&p, ".instances.png"), r.instances.to_png_bytes()?),
                (with_suffix(&p, ".classes.json"), r.instances.classes_json()?.into_bytes()),
                (with_suffix(&p, ".scene.json"), spec.to_json()?.into_bytes()),
            ])
        })
        .collect::<CliResult<_>>()?;
    for files in &scenes {
        write_all(files)?;
    }
    let manifest = Manifest {
        seed: a.seed,
        difficulty: a.difficulty,
        width: a.width,
        height: a.height,
        scenes: (0..a.n).map(scene_name).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&a.out.join(MANIFEST), text.as_bytes())?;
    println!("wrote {} scenes to {}", a.n, a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut file = match &a.loss_config {
        Some(p) => {
            let json = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
            at(p, LossConfigFile::parse(&read_text(p)?, json))?
        }
        None => LossConfigFile::default(),
    };
    if let Some(v) = &a.loss_variant {
        file.variant = Some(v.parse::<Variant>().map_err(|e| invalid(format!("loss-variant: {e}")))?);
    }
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        lr: a.lr.unwrap_or(d.lr),
        momentum: a.momentum.unwrap_or(d.momentum),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch: a.batch.unwrap_or(d.batch),
        seed: a.seed.unwrap_or(d.seed),
        loss: file.build()?,
    };
    cfg.check()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let cfg = train_config(&a)?;
    let manifest = read_manifest(&a.data)?;
    let data = manifest
        .scenes
        .par_iter()
        .map(|s| {
            let p = prefix(&a.data, s);
            let png = with_suffix(&p, ".png");
            let img = at(&png, Raster::load_png(&png))?;
            let gt = at(&p, OrientedBoundaryMap::load(&p))?;
            if !img.same_size(&gt.edge) {
                return Err(invalid(format!("{s}: image and ground truth differ in size")));
            }
            Ok((img, gt))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let rep = train(&cfg, &data)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in rep.history.iter().enumerate() {
        csv.push_str(&format!("{},{l:?}\n", i + 1));
    }
    let loss_csv = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_atomic(&a.out, &rep.params.to_bytes())?;
    write_atomic(&loss_csv, csv.as_bytes())?;
    println!(
        "trained {} epochs on {} images; final loss {:.4}",
        cfg.epochs,
        data.len(),
        rep.history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_image(path: &Path) -> CliResult<Raster> {
    let is_fmap = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("fmap"));
    at(path, if is_fmap { Raster::load_fmap(path) } else { Raster::load_png(path) })
}

fn image_stem(path: &Path) -> CliResult<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| invalid(format!("{}: no file name", path.display())))
}

fn cmd_infer(a: InferArgs) -> CliResult<()> {
    if !(a.nms_margin >= 1.0 && a.nms_margin.is_finite()) {
        return Err(invalid(format!("nms-margin: must be >= 1, got {}", a.nms_margin)));
    }
    if a.tangent_window < 1 {
        return Err(invalid("tangent-window: must be at least 1"));
    }
    let mut jobs: Vec<(String, PathBuf)> = Vec::new();
    if let Some(dir) = &a.data {
        for s in read_manifest(dir)?.scenes {
            let png = with_suffix(&prefix(dir, &s), ".png");
            jobs.push((s, png));
        }
    }
    for p in &a.input {
        jobs.push((image_stem(p)?, p.clone()));
    }
    if jobs.is_empty() {
        return Err(invalid("input: give --input files or --data"));
    }
    let params = at(&a.model, ModelParams::load(&a.model))?;
    let images = jobs
        .iter()
        .map(|(_, p)| load_image(p))
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = InferConfig {
        nms: NmsConfig {
            margin: a.nms_margin,
            ..NmsConfig::default()
        },
        tangent_window: a.tangent_window,
    };
    let outputs = jobs
        .par_iter()
        .zip(&images)
        .map(|((stem, path), img)| -> CliResult<Vec<(PathBuf, Vec<u8>)>> {
            let ms = at(path, multiscale_average(&params, img, &a.scales))?;
            let scored = at(path, infer_with(&ms.edge_prob, &ms.orient, &cfg))?;
            let p = prefix(&a.out, stem);
            let mut files = scored.to_fmap_files(&p);
            if !a.no_overlay {
                files.push((with_suffix(&p, ".overlay.png"), overlay_png(img, &scored)?));
            }
            Ok(files)
        })
        .collect::<CliResult<Vec<_>>>()?;
    for files in &outputs {
        write_all(files)?;
    }
    println!("wrote predictions for {} images to {}", jobs.len(), a.out.display());
    Ok(())
}

/// `(stem, prefix)` pairs: every `*.edge.fmap` in a directory, or the path itself as a prefix.
fn prefixes(path: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let rd = fs::read_dir(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut out: Vec<(String, PathBuf)> = rd
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".edge.fmap").map(|s| (s.to_string(), path.join(s)))
            })
            .collect();
        out.sort();
        if out.is_empty() {
            return Err(invalid(format!("{}: no .edge.fmap files", path.display())));
        }
        Ok(out)
    } else {
        let stem = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(vec![(stem, path.to_path_buf())])
    }
}

/// A scored prediction, or a hard oriented map scored with full orientation confidence.
fn load_prediction(p: &Path) -> CliResult<ScoredBoundaryMap> {
    if with_suffix(p, ".total.fmap").exists() {
        at(p, ScoredBoundaryMap::load(p))
    } else {
        Ok(ScoredBoundaryMap::from_oriented(&at(p, OrientedBoundaryMap::load(p))?))
    }
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    if !(a.max_dist_frac > 0.0 && a.max_dist_frac.is_finite()) {
        return Err(invalid(format!("max-dist-frac: must be positive, got {}", a.max_dist_frac)));
    }
    let gts = prefixes(&a.gt)?;
    let pred_is_dir = a.pred.is_dir();
    let pairs = gts
        .iter()
        .map(|(stem, gp)| {
            let pp = if pred_is_dir { a.pred.join(stem) } else { a.pred.clone() };
            Ok((at(gp, OrientedBoundaryMap::load(gp))?, load_prediction(&pp)?, pp))
        })
        .collect::<CliResult<Vec<_>>>()?;
    if !pred_is_dir && pairs.len() != 1 {
        return Err(invalid("pred: a single prefix needs a single ground-truth prefix"));
    }
    let counts = pairs
        .par_iter()
        .map(|(gt, pred, pp)| at(pp, evaluate(pred, gt, a.max_dist_frac)))
        .collect::<CliResult<Vec<_>>>()?;
    let curve = AorCurve::pooled(&counts);
    let mut total = vec![ThresholdCounts::default(); curve.thresholds.len()];
    for per in &counts {
        for (acc, c) in total.iter_mut().zip(per) {
            acc.add(c);
        }
    }
    let pr = PrTable::from_counts(&curve.thresholds, &total);
    write_atomic(&a.out, curve.to_csv().as_bytes())?;
    if let Some(p) = &a.pr {
        write_atomic(p, pr.to_csv().as_bytes())?;
    }
    match curve.accuracy_at_recall(0.7) {
        Some((t, r, Some(acc))) => println!("{} images; at t = {t}: recall {r:.4}, accuracy {acc:.4}", pairs.len()),
        _ => println!("{} images; recall never reaches 0.7", pairs.len()),
    }
    Ok(())
}

fn load_annotation(instances: &Path, classes: &Path, segments: &Path) -> CliResult<(InstanceMap, SegmentsFile)> {
    let m = at(instances, InstanceMap::load(instances, classes))?;
    let s = at(segments, SegmentsFile::parse(&read_text(segments)?))?;
    Ok((m, s))
}

fn annotate_config(rho: f64, fragment_len: usize) -> CliResult<AnnotateConfig> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid(format!("rho: must be positive, got {rho}")));
    }
    if fragment_len < 2 {
        return Err(invalid("fragment-len: must be at least 2"));
    }
    Ok(AnnotateConfig { rho, fragment_len })
}

fn cmd_match(a: MatchArgs) -> CliResult<()> {
    let cfg = annotate_config(a.rho, a.fragment_len)?;
    let (m, s) = load_annotation(&a.instances, &a.classes, &a.segments)?;
    let gt = build_ground_truth(&m, &s.segments, &cfg)?;
    for w in &gt.warnings {
        log::warn!("{w}");
    }
    let (edge, orient) = OrientedBoundaryMap::fmap_files(&a.out);
    write_all(&[
        (edge, gt.map.edge.to_fmap_bytes()),
        (orient, gt.map.orient.to_fmap_bytes()),
        (with_suffix(&a.out, ".fragments.json"), fragments_to_json(&gt.fragments)?.into_bytes()),
        (with_suffix(&a.out, ".report.json"), gt.report_json(Some(&s.image))?.into_bytes()),
    ])?;
    println!(
        "{} fragments, {} unlabeled, {} warnings",
        gt.fragments.len(),
        gt.unlabeled.len(),
        gt.warnings.len()
    );
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> CliResult<()> {
    let cfg = annotate_config(a.rho, DEFAULT_FRAGMENT_LEN)?;
    let triples: Vec<(PathBuf, PathBuf, PathBuf)> = match (&a.data, &a.instances) {
        (Some(dir), _) => read_manifest(dir)?
            .scenes
            .iter()
            .map(|s| {
                let p = prefix(dir, s);
                (
                    with_suffix(&p, ".instances.png"),
                    with_suffix(&p, ".classes.json"),
                    with_suffix(&p, ".segments.json"),
                )
            })
            .collect(),
        (None, Some(inst)) => vec![(inst.clone(), a.classes.clone().unwrap(), a.segments.clone().unwrap())],
        (None, None) => return Err(invalid("give --data or --instances/--classes/--segments")),
    };
    let matrices = triples
        .par_iter()
        .map(|(i, c, s)| {
            let (m, segs) = load_annotation(i, c, s)?;
            Ok(build_ground_truth(&m, &segs.segments, &cfg)?.matrix)
        })
        .collect::<CliResult<Vec<OcclusionMatrix>>>()?;
    let mut total = matrices[0].clone();
    for m in &matrices[1..] {
        total.merge(m);
    }
    write_atomic(&a.out, total.to_csv().as_bytes())?;
    println!("counted {} scenes", matrices.len());
    Ok(())
}

fn cmd_aor_plot(a: AorPlotArgs) -> CliResult<()> {
    let curves = a
        .curves
        .iter()
        .map(|spec| {
            let (name, path) = match spec.split_once('=') {
                Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                None => {
                    let p = PathBuf::from(spec);
                    (image_stem(&p)?, p)
                }
            };
            let curve = at(&path, AorCurve::from_csv(&read_text(&path)?))?;
            Ok((name, curve))
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_atomic(&a.out, crate::eval::aor_svg(&curves).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_flags_precede_command_line_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "seed = 3\n[train]\nlr = 0.001\nepochs = 2\n[synth]\nn = 9\n").unwrap();
        let argv = os(&["occlusia", "--config", cfg.to_str().unwrap(), "train", "--data", "d", "--out", "m", "--lr", "0.5"]);
        let out = apply_config(argv).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        let pos = s.iter().position(|a| a == "train").unwrap();
        assert_eq!(&s[pos + 1..pos + 7], ["--seed", "3", "--epochs", "2", "--lr", "0.001"]);
        let cli = Cli::try_parse_from(out).unwrap();
        match cli.command {
            Command::Train(t) => {
                assert_eq!(t.lr, Some(0.5));
                assert_eq!(t.epochs, Some(2));
                assert_eq!(t.seed, Some(3));
            }
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn json_config_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"eval": {"max_dist_frac": 0.01}}"#).unwrap();
        let out = apply_config(os(&["occlusia", "eval", "--config", cfg.to_str().unwrap()])).unwrap();
        assert!(out.iter().any(|a| a == "--max-dist-frac"));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.csv");
        write_atomic(&p, b"a,b\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"a,b\n");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(os(&["occlusia", "--help"])), 0);
        assert_eq!(run(os(&["occlusia", "train", "--bogus"])), 2);
        assert_eq!(run(os(&["occlusia", "synth", "--n", "0", "--out", "/nonexistent/x"])), 2);
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nothing");
        assert_eq!(
            run(os(&["occlusia", "train", "--data", missing.to_str().unwrap(), "--out", "m.docm"])),
            2
        );
    }
}
