//! Synthetic multimodal pairs, noise models, noise sweeps and the NCC
//! timing benchmark.
//!
//! A synthetic pair keeps the base image as the reference and builds the
//! sensed image by warping the base, remapping its tones and adding noise,
//! so the sensed-to-reference truth is known exactly.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::descriptor::FeatureVolume;
use crate::error::{Error, Result};
use crate::filters::{convolve2d_fast, default_radius, gaussian_kernel, Plane};
use crate::geometry::{warp_model, AffineTransform, GeometricModel};
use crate::pipeline::{compute_metrics, detect_cps, MatchConfig, SceneGeometry, Similarity};
use crate::raster::Raster;
use crate::similarity::{complexity_estimate, fast_ncc, ncc_naive};

/// Intensity remapping applied to the sensed image.
#[derive(Clone, Debug, PartialEq)]
pub enum Tone {
    None,
    /// `v -> v^gamma`.
    Gamma(f64),
    /// `v -> 1 - v`.
    Inversion,
    /// Linear interpolation through `(input, output)` breakpoints sorted by
    /// input; constant beyond the ends.
    Piecewise(Vec<(f64, f64)>),
}

impl Tone {
    pub fn validate(&self) -> Result<()> {
        match self {
            Tone::Gamma(g) if !(*g > 0.0 && g.is_finite()) => {
                Err(Error::InvalidParameter(format!("gamma must be positive, got {g}")))
            }
            Tone::Piecewise(points) => {
                if points.len() < 2 {
                    return Err(Error::InvalidParameter("piecewise tone needs two breakpoints".into()));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::InvalidParameter(
                        "piecewise breakpoints must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Tone::None => v,
            Tone::Gamma(g) => v.max(0.0).powf(*g),
            Tone::Inversion => 1.0 - v,
            Tone::Piecewise(points) => {
                let first = points[0];
                let last = points[points.len() - 1];
                if v <= first.0 {
                    return first.1;
                }
                if v >= last.0 {
                    return last.1;
                }
                let k = points.partition_point(|p| p.0 <= v);
                let (a, b) = (points[k - 1], points[k]);
                a.1 + (v - a.0) / (b.0 - a.0) * (b.1 - a.1)
            }
        }
    }
}

pub fn apply_tone(image: &Raster, tone: &Tone) -> Result<Raster> {
    tone.validate()?;
    Ok(image.map(|v| tone.apply(v as f64)))
}

fn check_variance(variance: f64, max: f64, what: &str) -> Result<()> {
    if !(0.0..=max).contains(&variance) {
        return Err(Error::InvalidParameter(format!(
            "{what} variance {variance} outside [0, {max}]"
        )));
    }
    Ok(())
}

/// Additive zero-mean Gaussian noise of the given variance, clamped to
/// `[0, 1]`.
pub fn add_gaussian_noise(image: &Raster, variance: f64, seed: u64) -> Result<Raster> {
    check_variance(variance, f64::INFINITY, "Gaussian")?;
    if variance == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite deviation");
    Ok(image.map(|v| v as f64 + normal.sample(&mut rng)))
}

/// Multiplicative unit-mean noise `v * (1 + u)`, `u` zero-mean Gaussian of
/// the given variance, clamped to `[0, 1]`.
pub fn add_speckle(image: &Raster, variance: f64, seed: u64) -> Result<Raster> {
    check_variance(variance, f64::INFINITY, "speckle")?;
    if variance == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite deviation");
    Ok(image.map(|v| v as f64 * (1.0 + normal.sample(&mut rng))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub base: Raster,
    /// Planted map from reference pixels to sensed pixels.
    pub transform: GeometricModel,
    pub tone: Tone,
    /// Additive noise variance, `[0, 0.01]`.
    pub gaussian_var: f64,
    /// Speckle variance, `[0, 0.1]`.
    pub speckle_var: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(base: Raster) -> Self {
        SynthSpec {
            base,
            transform: GeometricModel::identity(),
            tone: Tone::None,
            gaussian_var: 0.0,
            speckle_var: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair {
    pub sensed: Raster,
    pub reference: Raster,
    /// Sensed image after warping and tone mapping, before noise.
    pub clean_sensed: Raster,
    /// Map from sensed pixels to reference pixels.
    pub truth: GeometricModel,
}

pub fn synth_pair(spec: &SynthSpec) -> Result<SynthPair> {
    spec.tone.validate()?;
    check_variance(spec.gaussian_var, 0.01, "Gaussian")?;
    check_variance(spec.speckle_var, 0.1, "speckle")?;
    let truth = spec
        .transform
        .inverse()
        .ok_or_else(|| Error::Degenerate("planted transform must have a closed-form inverse".into()))?;
    let (w, h) = (spec.base.width(), spec.base.height());
    let warped = warp_model(&spec.base, &spec.transform, w, h)?;
    let clean_sensed = apply_tone(&warped, &spec.tone)?;
    let noisy = add_gaussian_noise(&clean_sensed, spec.gaussian_var, spec.seed)?;
    let sensed = add_speckle(&noisy, spec.speckle_var, spec.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok(SynthPair {
        sensed,
        reference: spec.base.clone(),
        clean_sensed,
        truth,
    })
}

/// Procedural test scene: a smooth background under overlapping
/// rectangles, rotated rectangles and ellipses of random intensity, lightly
/// blurred. Rich in corners and edges at every scale the matcher uses.
pub fn texture(width: usize, height: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.005..0.03),
                rng.gen_range(0.005..0.03),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.03..0.08),
            )
        })
        .collect();
    let mut img: Vec<f64> = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            0.5 + waves
                .iter()
                .map(|(fx, fy, ph, amp)| amp * (fx * x + fy * y + ph).sin())
                .sum::<f64>()
        })
        .collect();
    let shapes = (width * height / 1500).max(8);
    for _ in 0..shapes {
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let a: f64 = rng.gen_range(4.0..28.0);
        let b = rng.gen_range(4.0..28.0);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let value = rng.gen_range(0.05..0.95);
        let kind = rng.gen_range(0..3);
        let (c, s) = (angle.cos(), angle.sin());
        let reach = a.max(b).ceil() as isize + 1;
        for y in (cy as isize - reach).max(0)..(cy as isize + reach).min(height as isize) {
            for x in (cx as isize - reach).max(0)..(cx as isize + reach).min(width as isize) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = match kind {
                    0 => dx.abs() <= a && dy.abs() <= b,
                    1 => {
                        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                        u.abs() <= a && v.abs() <= b
                    }
                    _ => {
                        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                        (u / a).powi(2) + (v / b).powi(2) <= 1.0
                    }
                };
                if inside {
                    img[y as usize * width + x as usize] = value;
                }
            }
        }
    }
    let plane = Plane::new(width, height, img).expect("sized");
    let blurred = match gaussian_kernel(0.7, default_radius(0.7)) {
        Ok(k) if width > 2 * k.radius() && height > 2 * k.radius() => {
            convolve2d_fast(&plane, &k).expect("kernel fits")
        }
        _ => plane,
    };
    Raster::from_fn(width, height, |x, y| blurred.get(x, y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Speckle,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Speckle => "speckle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub methods: Vec<Similarity>,
    pub kind: NoiseKind,
    /// Strictly increasing noise variances.
    pub levels: Vec<f64>,
    pub tone: Tone,
    /// Planted reference-to-sensed translation, pixels.
    pub offset: (f64, f64),
    pub seed: u64,
    pub matching: MatchConfig,
}

/// One `(method, level)` cell, averaged over the base images.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub noise_kind: String,
    pub variance: f64,
    pub cmr: f64,
    pub rmse_px: f64,
    pub mt_seconds: f64,
}

pub fn method_label(similarity: Similarity) -> &'static str {
    match similarity {
        Similarity::Sfoc => "sfoc_fastncc",
        Similarity::Intensity => "raw_ncc",
    }
}

/// Runs the matcher on tone-mapped, noisy copies of every base image at
/// each noise level and records mean CMR and RMSE against the planted truth.
/// A run that yields no control points counts as CMR 0.
pub fn noise_sweep(bases: &[Raster], config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if bases.is_empty() {
        return Err(Error::InvalidParameter("noise sweep needs at least one base image".into()));
    }
    if config.levels.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("noise levels must be strictly increasing".into()));
    }
    let transform = GeometricModel::Affine(AffineTransform::translation(config.offset.0, config.offset.1));
    let mut rows = Vec::new();
    for &method in &config.methods {
        let matching = MatchConfig {
            similarity: method,
            ..config.matching.clone()
        };
        for &level in &config.levels {
            let (mut cmr, mut rmse, mut mt) = (0.0, 0.0, 0.0);
            for (b, base) in bases.iter().enumerate() {
                let (gaussian_var, speckle_var) = match config.kind {
                    NoiseKind::Gaussian => (level, 0.0),
                    NoiseKind::Speckle => (0.0, level),
                };
                let pair = synth_pair(&SynthSpec {
                    base: base.clone(),
                    transform,
                    tone: config.tone.clone(),
                    gaussian_var,
                    speckle_var,
                    seed: config.seed.wrapping_add(b as u64),
                })?;
                match detect_cps(&pair.sensed, &pair.reference, &SceneGeometry::aligned(), &matching) {
                    Ok(report) => {
                        let m = compute_metrics(&report.cps, &pair.truth, matching.correct_threshold, report.elapsed)?;
                        cmr += m.cmr;
                        rmse += m.rmse_px;
                        mt += m.mt_seconds;
                    }
                    Err(Error::Matching(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            let n = bases.len() as f64;
            rows.push(SweepRow {
                method: method_label(method).into(),
                noise_kind: config.kind.name().into(),
                variance: level,
                cmr: cmr / n,
                rmse_px: rmse / n,
                mt_seconds: mt,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("method,noise_kind,variance,cmr,rmse_px,mt_seconds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method, r.noise_kind, r.variance, r.cmr, r.rmse_px, r.mt_seconds
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub m: usize,
    pub n: usize,
    pub big_m: usize,
    pub big_n: usize,
    pub z: usize,
    pub repeats: usize,
    /// Median wall time of the fast path, seconds.
    pub fast_seconds: f64,
    /// Median wall time of direct summation, seconds.
    pub naive_seconds: f64,
    /// `naive_seconds / fast_seconds`.
    pub measured_speedup: f64,
    /// Cost-model ratio of fast to direct work.
    pub predicted_ratio: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Times both NCC evaluations on uniform random volumes.
pub fn bench_ncc(m: usize, n: usize, big_m: usize, big_n: usize, z: usize, repeats: usize, seed: u64) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be >= 1".into()));
    }
    let predicted = complexity_estimate(m, n, big_m, big_n, z)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut volume = |w: usize, h: usize| {
        let data = (0..w * h * z).map(|_| rng.gen::<f32>()).collect();
        FeatureVolume::new(w, h, z, data)
    };
    let template = volume(m, n)?;
    let search = volume(big_m, big_n)?;
    let time = |f: &dyn Fn() -> Result<()>| -> Result<f64> {
        let start = Instant::now();
        f()?;
        Ok(start.elapsed().as_secs_f64())
    };
    let mut fast = Vec::with_capacity(repeats);
    let mut naive = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        fast.push(time(&|| fast_ncc(&template, &search).map(drop))?);
        naive.push(time(&|| ncc_naive(&template, &search).map(drop))?);
    }
    let (fast_seconds, naive_seconds) = (median(fast), median(naive));
    Ok(BenchReport {
        m,
        n,
        big_m,
        big_n,
        z,
        repeats,
        fast_seconds,
        naive_seconds,
        measured_speedup: naive_seconds / fast_seconds,
        predicted_ratio: predicted.ratio,
    })
}
