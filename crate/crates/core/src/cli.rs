//! Command-line front end.
//!
//! Settings come from built-in defaults, then an optional flat
//! `key = value` file (`--config`), then `--set key=value` overrides, then
//! dedicated flags. Exit codes: 0 success, 2 configuration error, 3 matching
//! failure, 4 I/O or format error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::descriptor::{build_sfoc, save_volume, FeatureVolume};
use crate::error::{Error, Result};
use crate::geometry::rpc::{load_rpc, rfm_inverse};
use crate::geometry::{rfm_forward, AffineTransform, GeometricModel};
use crate::harness::{bench_ncc, synth_pair, texture, SynthSpec, Tone};
use crate::pipeline::{
    checkerboard, compute_metrics, cps_to_csv, detect_cps, harmonize_resolution, metrics_json, parse_truth_csv,
    register, truth_from_pairs, ControlPoint, MatchConfig, ModelChoice, Registration, SceneGeometry, Similarity,
};
use crate::raster::{
    load_raster, load_world_file, save_raster, save_world_file, GeoRef, Raster, RasterFormat,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MATCHING: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Config(_) | Error::InvalidParameter(_) => EXIT_CONFIG,
        Error::Matching(_)
        | Error::NoConsensus(_)
        | Error::Degenerate(_)
        | Error::NonConvergence(_)
        | Error::OutOfBounds(_) => EXIT_MATCHING,
    }
}

#[derive(Debug, Parser)]
#[command(name = "sfoc", version, about = "Multimodal image matching and registration")]
pub struct Cli {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set template_size=80`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads for matching (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the descriptor volume of an image.
    Describe(DescribeArgs),
    /// Match control points between two images.
    Match(MatchArgs),
    /// Match, fit a model and rectify the sensed image onto the reference.
    Register(RegisterArgs),
    /// Generate a synthetic sensed/reference pair with known truth.
    Synth(SynthArgs),
    /// Time fast against direct NCC.
    Bench(BenchArgs),
    /// Project ground to image through an RPC, or back.
    RpcProject(RpcProjectArgs),
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// First-order channels only.
    #[arg(long)]
    pub f_sfoc: bool,
    /// Also write every channel side by side as an 8-bit PGM.
    #[arg(long)]
    pub montage: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct InputArgs {
    #[arg(long)]
    pub sensed: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub sensed_world: Option<PathBuf>,
    #[arg(long)]
    pub reference_world: Option<PathBuf>,
    /// RPC text file of the sensed image.
    #[arg(long)]
    pub rpc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    /// Control-point CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory receiving correlation surfaces of sampled points.
    #[arg(long)]
    pub heatmap_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Manually picked `sensed_x,sensed_y,ref_x,ref_y` pairs used as truth.
    #[arg(long)]
    pub truth_cps: Option<PathBuf>,
    /// Sensed-to-reference model JSON used as truth (as written by `synth`).
    #[arg(long)]
    pub truth_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Base image; a procedural texture is generated when absent.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Texture size as `WIDTHxHEIGHT`.
    #[arg(long, default_value = "512x512")]
    pub size: String,
    #[arg(long, default_value_t = 1)]
    pub texture_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// `none`, `gamma:G`, `inversion` or `piecewise:x0:y0,x1:y1,...`.
    #[arg(long, default_value = "none")]
    pub tone: String,
    /// Planted reference-to-sensed translation as `DX,DY`.
    #[arg(long, default_value = "0,0")]
    pub shift: String,
    /// Planted reference-to-sensed affine `a0,a1,a2,b0,b1,b2`; overrides `--shift`.
    #[arg(long)]
    pub affine: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub gaussian: f64,
    #[arg(long, default_value_t = 0.0)]
    pub speckle: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Raster encoding of the written images: `float` or `pgm`.
    #[arg(long, default_value = "float")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long = "big-m", default_value_t = 200)]
    pub big_m: usize,
    #[arg(long = "big-n", default_value_t = 200)]
    pub big_n: usize,
    #[arg(long, default_value_t = 12)]
    pub z: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RpcProjectArgs {
    #[arg(long)]
    pub rpc: PathBuf,
    /// Image to ground: take `--line` and `--sample`, print `lat lon`.
    #[arg(long)]
    pub inverse: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub lat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lon: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub line: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub sample: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub height: f64,
}

/// Matching settings plus file locations, all settable as `key = value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub matching: MatchConfig,
    pub sensed: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub sensed_world: Option<PathBuf>,
    pub reference_world: Option<PathBuf>,
    pub rpc: Option<PathBuf>,
    pub truth_cps: Option<PathBuf>,
    pub truth_model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub heatmap_dir: Option<PathBuf>,
}

/// Every accepted key.
pub const CONFIG_KEYS: &[&str] = &[
    "template_size",
    "search_size",
    "ip_count",
    "min_score",
    "correct_threshold",
    "fast_threshold",
    "fast_arc",
    "similarity",
    "model",
    "h0",
    "subpixel",
    "workers",
    "heatmap_samples",
    "orientations",
    "sigmas_first",
    "sigmas_second",
    "dilation_rates",
    "smooth_sigma_first",
    "smooth_sigma_second",
    "epsilon",
    "second_order",
    "inlier_threshold",
    "max_iterations",
    "confidence",
    "seed",
    "min_inliers",
    "sensed",
    "reference",
    "sensed_world",
    "reference_world",
    "rpc",
    "truth_cps",
    "truth_model",
    "out",
    "out_dir",
    "heatmap_dir",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean '{value}' for {key}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.matching;
        let path = || Some(PathBuf::from(value));
        match key {
            "template_size" => m.template_size = parse_value(key, value)?,
            "search_size" => m.search_size = parse_value(key, value)?,
            "ip_count" => m.ip_count = parse_value(key, value)?,
            "min_score" => m.min_score = parse_value(key, value)?,
            "correct_threshold" => m.correct_threshold = parse_value(key, value)?,
            "fast_threshold" => m.fast_threshold = parse_value(key, value)?,
            "fast_arc" => m.fast_arc = parse_value(key, value)?,
            "similarity" => m.similarity = Similarity::parse(value)?,
            "model" => m.model = ModelChoice::parse(value)?,
            "h0" => m.h0 = parse_value(key, value)?,
            "subpixel" => m.subpixel = parse_bool(key, value)?,
            "workers" => m.workers = parse_value(key, value)?,
            "heatmap_samples" => m.heatmap_samples = parse_value(key, value)?,
            "orientations" => m.sfoc.orientations = parse_value(key, value)?,
            "sigmas_first" => m.sfoc.sigmas_first = parse_list(key, value)?,
            "sigmas_second" => m.sfoc.sigmas_second = parse_list(key, value)?,
            "dilation_rates" => m.sfoc.dilation_rates = parse_list(key, value)?,
            "smooth_sigma_first" => m.sfoc.smooth_sigma_first = parse_value(key, value)?,
            "smooth_sigma_second" => m.sfoc.smooth_sigma_second = parse_value(key, value)?,
            "epsilon" => m.sfoc.epsilon = parse_value(key, value)?,
            "second_order" => m.sfoc.second_order = parse_bool(key, value)?,
            "inlier_threshold" => m.ransac.inlier_threshold = parse_value(key, value)?,
            "max_iterations" => m.ransac.max_iterations = parse_value(key, value)?,
            "confidence" => m.ransac.confidence = parse_value(key, value)?,
            "seed" => m.ransac.seed = parse_value(key, value)?,
            "min_inliers" => m.ransac.min_inliers = Some(parse_value(key, value)?),
            "sensed" => self.sensed = path(),
            "reference" => self.reference = path(),
            "sensed_world" => self.sensed_world = path(),
            "reference_world" => self.reference_world = path(),
            "rpc" => self.rpc = path(),
            "truth_cps" => self.truth_cps = path(),
            "truth_model" => self.truth_model = path(),
            "out" => self.out = path(),
            "out_dir" => self.out_dir = path(),
            "heatmap_dir" => self.heatmap_dir = path(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` command-line override.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    fn apply_inputs(&mut self, inputs: &InputArgs) {
        let pick = |slot: &mut Option<PathBuf>, flag: &Option<PathBuf>| {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        };
        pick(&mut self.sensed, &inputs.sensed);
        pick(&mut self.reference, &inputs.reference);
        pick(&mut self.sensed_world, &inputs.sensed_world);
        pick(&mut self.reference_world, &inputs.reference_world);
        pick(&mut self.rpc, &inputs.rpc);
    }

    fn require<'a>(slot: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        slot.as_deref()
            .ok_or_else(|| Error::Config(format!("missing {what} (flag or config key)")))
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for item in &cli.overrides {
        cfg.apply_override(item)?;
    }
    if let Some(w) = cli.workers {
        cfg.matching.workers = w;
    }
    Ok(cfg)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = base_config(cli)?;
    match &cli.command {
        Command::Describe(a) => cmd_describe(&cfg, a),
        Command::Match(a) => {
            cfg.apply_inputs(&a.inputs);
            if a.out.is_some() {
                cfg.out.clone_from(&a.out);
            }
            if a.heatmap_dir.is_some() {
                cfg.heatmap_dir.clone_from(&a.heatmap_dir);
            }
            cmd_match(&cfg)
        }
        Command::Register(a) => {
            cfg.apply_inputs(&a.inputs);
            if a.out_dir.is_some() {
                cfg.out_dir.clone_from(&a.out_dir);
            }
            if a.truth_cps.is_some() {
                cfg.truth_cps.clone_from(&a.truth_cps);
            }
            if a.truth_model.is_some() {
                cfg.truth_model.clone_from(&a.truth_model);
            }
            cmd_register(&cfg)
        }
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::RpcProject(a) => cmd_rpc_project(a),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Channels laid side by side, one tile per channel, each scaled by its own
/// maximum.
pub fn montage(volume: &FeatureVolume) -> Raster {
    let (w, h, z) = (volume.width(), volume.height(), volume.z());
    let peaks: Vec<f32> = (0..z)
        .map(|c| volume.plane(c).iter().copied().fold(0.0f32, f32::max))
        .collect();
    Raster::from_fn(w * z, h, |x, y| {
        let c = x / w;
        if peaks[c] > 0.0 {
            (volume.get(x % w, y, c) / peaks[c]) as f64
        } else {
            0.0
        }
    })
}

fn cmd_describe(cfg: &RunConfig, a: &DescribeArgs) -> Result<()> {
    let image = a.image.as_deref().or(cfg.sensed.as_deref());
    let image = RunConfig::require(&image.map(Path::to_path_buf), "--image")?.to_path_buf();
    let out = a.out.clone().or_else(|| cfg.out.clone());
    let out = RunConfig::require(&out, "--out")?;
    let mut params = cfg.matching.sfoc.clone();
    if a.f_sfoc {
        params.second_order = false;
    }
    params.validate().map_err(|e| Error::Config(e.to_string()))?;
    let raster = load_raster(&image)?;
    let volume = cfg.matching.with_pool(|| build_sfoc(&raster, &params))??;
    save_volume(&volume, out)?;
    if let Some(path) = &a.montage {
        save_raster(&montage(&volume), path, RasterFormat::Pgm8)?;
    }
    println!("{} x {} x {}", volume.width(), volume.height(), volume.z());
    Ok(())
}

struct Scene {
    sensed: Raster,
    reference: Raster,
    geometry: SceneGeometry,
    reference_geo: Option<GeoRef>,
}

/// Loads both images and their geo-referencing, checking that the inputs
/// fit the configured model before any heavy work starts.
fn load_scene(cfg: &RunConfig) -> Result<Scene> {
    let m = &cfg.matching;
    m.validate()?;
    let sensed_path = RunConfig::require(&cfg.sensed, "sensed image")?;
    let reference_path = RunConfig::require(&cfg.reference, "reference image")?;
    match m.model {
        ModelChoice::RfmAffine => {
            let rpc_path = RunConfig::require(&cfg.rpc, "RPC file for model rfm_affine")?;
            let world = RunConfig::require(&cfg.reference_world, "reference world file for model rfm_affine")?;
            let rpc = load_rpc(rpc_path)?;
            let reference_geo = load_world_file(world)?;
            Ok(Scene {
                sensed: load_raster(sensed_path)?,
                reference: load_raster(reference_path)?,
                geometry: SceneGeometry::Rfm {
                    rpc,
                    reference: reference_geo,
                },
                reference_geo: Some(reference_geo),
            })
        }
        ModelChoice::Projective | ModelChoice::Poly2 => {
            if cfg.rpc.is_some() {
                return Err(Error::Config(format!(
                    "an RPC was given but model is {}; use model = rfm_affine",
                    m.model.name()
                )));
            }
            let sensed_geo = cfg.sensed_world.as_deref().map(load_world_file).transpose()?;
            let reference_geo = cfg.reference_world.as_deref().map(load_world_file).transpose()?;
            if sensed_geo.is_some() != reference_geo.is_some() {
                return Err(Error::Config("world files must be given for both images or neither".into()));
            }
            let sensed = load_raster(sensed_path)?;
            let reference = load_raster(reference_path)?;
            let ((sensed, s_geo), (reference, r_geo)) = match (sensed_geo, reference_geo) {
                (Some(s), Some(r)) => harmonize_resolution((sensed, s), (reference, r))?,
                _ => ((sensed, GeoRef::identity()), (reference, GeoRef::identity())),
            };
            Ok(Scene {
                sensed,
                reference,
                geometry: SceneGeometry::Georeferenced {
                    sensed: s_geo,
                    reference: r_geo,
                },
                reference_geo: cfg.reference_world.as_ref().map(|_| r_geo),
            })
        }
    }
}

fn cmd_match(cfg: &RunConfig) -> Result<()> {
    let out = RunConfig::require(&cfg.out, "--out")?.to_path_buf();
    let mut cfg = cfg.clone();
    if cfg.heatmap_dir.is_some() && cfg.matching.heatmap_samples == 0 {
        cfg.matching.heatmap_samples = 8;
    }
    let scene = load_scene(&cfg)?;
    let report = detect_cps(&scene.sensed, &scene.reference, &scene.geometry, &cfg.matching)?;
    write_file(&out, cps_to_csv(&report.cps))?;
    if let Some(dir) = &cfg.heatmap_dir {
        create_dir(dir)?;
        for (ip, surface) in &report.surfaces {
            write_file(&dir.join(format!("heatmap_{ip:04}.flt")), surface.encode_heatmap())?;
        }
    }
    println!(
        "{} control points from {} interest points",
        report.cps.len(),
        report.interest_points.len()
    );
    Ok(())
}

fn truth_model(cfg: &RunConfig) -> Result<Option<GeometricModel>> {
    if let Some(path) = &cfg.truth_model {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model = serde_json::from_str(&text).map_err(|e| Error::format("model JSON", e.to_string()))?;
        return Ok(Some(model));
    }
    if let Some(path) = &cfg.truth_cps {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return truth_from_pairs(&parse_truth_csv(&text)?).map(Some);
    }
    Ok(None)
}

/// Truth for metrics when none was supplied: the fitted planar model, or a
/// projective fit to the surviving points of an RPC run.
fn estimated_truth(registration: &Registration, cps: &[ControlPoint]) -> Result<GeometricModel> {
    match registration {
        Registration::Planar { model } => Ok(*model),
        Registration::RfmBias { .. } => {
            let pairs: Vec<_> = cps.iter().filter(|c| c.valid).map(ControlPoint::pair).collect();
            truth_from_pairs(&pairs)
        }
    }
}

fn cmd_register(cfg: &RunConfig) -> Result<()> {
    let out_dir = RunConfig::require(&cfg.out_dir, "--out-dir")?.to_path_buf();
    let truth = truth_model(cfg)?;
    let scene = load_scene(cfg)?;
    let run = register(&scene.sensed, &scene.reference, &scene.geometry, &cfg.matching)?;
    create_dir(&out_dir)?;
    let (truth, source) = match truth {
        Some(t) => (t, "supplied"),
        None => (estimated_truth(&run.registration, &run.cps)?, "estimated"),
    };
    let metrics = compute_metrics(
        &run.report.cps,
        &truth,
        cfg.matching.correct_threshold,
        run.report.elapsed,
    )?;
    save_raster(&run.rectified, out_dir.join("rectified.flt"), RasterFormat::Float)?;
    if let Some(geo) = &scene.reference_geo {
        save_world_file(geo, out_dir.join("rectified.wld"))?;
    }
    write_file(&out_dir.join("cps.csv"), cps_to_csv(&run.cps))?;
    write_file(
        &out_dir.join("metrics.json"),
        metrics_json(&metrics, run.inlier_count(), source, &run.registration),
    )?;
    let overlay = checkerboard(&run.rectified, &scene.reference, 32)?;
    save_raster(&overlay, out_dir.join("overlay.pgm"), RasterFormat::Pgm8)?;
    println!(
        "{} control points, {} inliers, CMR {:.4}, RMSE {:.4} px",
        run.cps.len(),
        run.inlier_count(),
        metrics.cmr,
        metrics.rmse_px
    );
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("size '{s}' is not WIDTHxHEIGHT")))?;
    Ok((parse_value("size", w)?, parse_value("size", h)?))
}

pub fn parse_tone(s: &str) -> Result<Tone> {
    let tone = match s.split_once(':') {
        None if s == "none" => Tone::None,
        None if s == "inversion" => Tone::Inversion,
        Some(("gamma", g)) => Tone::Gamma(parse_value("tone", g)?),
        Some(("piecewise", pts)) => Tone::Piecewise(
            pts.split(',')
                .map(|p| {
                    let (x, y) = p
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("breakpoint '{p}' is not x:y")))?;
                    Ok((parse_value("tone", x)?, parse_value("tone", y)?))
                })
                .collect::<Result<_>>()?,
        ),
        _ => return Err(Error::Config(format!("unknown tone '{s}'"))),
    };
    tone.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(tone)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let base = match &a.base {
        Some(p) => load_raster(p)?,
        None => {
            let (w, h) = parse_size(&a.size)?;
            texture(w, h, a.texture_seed)
        }
    };
    let transform = match &a.affine {
        Some(s) => {
            let v: Vec<f64> = parse_list("affine", s)?;
            if v.len() != 6 {
                return Err(Error::Config("affine needs six coefficients".into()));
            }
            AffineTransform {
                a: [v[0], v[1], v[2]],
                b: [v[3], v[4], v[5]],
            }
        }
        None => {
            let v: Vec<f64> = parse_list("shift", &a.shift)?;
            if v.len() != 2 {
                return Err(Error::Config("shift needs DX,DY".into()));
            }
            AffineTransform::translation(v[0], v[1])
        }
    };
    let (format, ext) = match a.format.as_str() {
        "float" => (RasterFormat::Float, "flt"),
        "pgm" => (RasterFormat::Pgm8, "pgm"),
        other => return Err(Error::Config(format!("unknown format '{other}'"))),
    };
    let spec = SynthSpec {
        base,
        transform: GeometricModel::Affine(transform),
        tone: parse_tone(&a.tone)?,
        gaussian_var: a.gaussian,
        speckle_var: a.speckle,
        seed: a.seed,
    };
    let pair = synth_pair(&spec).map_err(|e| match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    })?;
    create_dir(&a.out_dir)?;
    save_raster(&pair.sensed, a.out_dir.join(format!("sensed.{ext}")), format)?;
    save_raster(&pair.reference, a.out_dir.join(format!("reference.{ext}")), format)?;
    save_world_file(&GeoRef::identity(), a.out_dir.join("sensed.wld"))?;
    save_world_file(&GeoRef::identity(), a.out_dir.join("reference.wld"))?;
    let truth = serde_json::to_string_pretty(&pair.truth).expect("model serializes") + "\n";
    write_file(&a.out_dir.join("truth.json"), truth)?;
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let r = bench_ncc(a.m, a.n, a.big_m, a.big_n, a.z, a.repeats, a.seed)?;
    println!(
        "m={} n={} M={} N={} z={} repeats={}",
        r.m, r.n, r.big_m, r.big_n, r.z, r.repeats
    );
    println!("fast_seconds={:.6} naive_seconds={:.6}", r.fast_seconds, r.naive_seconds);
    println!(
        "measured_ratio={:.6} measured_speedup={:.2}",
        1.0 / r.measured_speedup,
        r.measured_speedup
    );
    println!(
        "predicted_ratio={:.6} predicted_speedup={:.2}",
        r.predicted_ratio,
        1.0 / r.predicted_ratio
    );
    Ok(())
}

fn cmd_rpc_project(a: &RpcProjectArgs) -> Result<()> {
    let rpc = load_rpc(&a.rpc)?;
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("--{name} is required")));
    if a.inverse {
        let g = rfm_inverse(&rpc, need(a.line, "line")?, need(a.sample, "sample")?, a.height)?;
        println!("{} {}", g.lat, g.lon);
    } else {
        let (line, sample) = rfm_forward(&rpc, need(a.lat, "lat")?, need(a.lon, "lon")?, a.height)?;
        println!("{line} {sample}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_accepted() {
        let mut cfg = RunConfig::default();
        for key in CONFIG_KEYS {
            let value = match *key {
                "similarity" => "intensity",
                "model" => "poly2",
                "subpixel" | "second_order" => "true",
                "sigmas_first" | "sigmas_second" => "1.0,2.0",
                "dilation_rates" => "1,2",
                "min_score" | "confidence" => "0.5",
                _ => "3",
            };
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        assert!(cfg.set("no_such_key", "1").is_err());
    }

    #[test]
    fn file_then_override() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# defaults\ntemplate_size = 64\nsearch_size=128 # trailing\n\nmodel = poly2\n")
            .unwrap();
        cfg.apply_override("template_size=48").unwrap();
        assert_eq!(cfg.matching.template_size, 48);
        assert_eq!(cfg.matching.search_size, 128);
        assert_eq!(cfg.matching.model, ModelChoice::Poly2);
        assert!(cfg.apply_text("template_size 64\n").is_err());
        assert!(cfg.apply_text("bogus = 1\n").is_err());
        assert!(cfg.apply_text("ip_count = many\n").is_err());
    }

    #[test]
    fn defaults_match_match_config() {
        assert_eq!(RunConfig::default().matching, MatchConfig::default());
    }

    #[test]
    fn tones_parse() {
        assert_eq!(parse_tone("gamma:2.2").unwrap(), Tone::Gamma(2.2));
        assert_eq!(parse_tone("inversion").unwrap(), Tone::Inversion);
        assert_eq!(
            parse_tone("piecewise:0:0,0.5:1,1:0").unwrap(),
            Tone::Piecewise(vec![(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)])
        );
        assert!(parse_tone("gamma:-1").is_err());
        assert!(parse_tone("sepia").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::NoConsensus("x".into())), EXIT_MATCHING);
        assert_eq!(exit_code(&Error::format("PGM", "x")), EXIT_IO);
        assert_eq!(run(["sfoc", "frobnicate"]), EXIT_CONFIG);
    }
}
