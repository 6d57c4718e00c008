//! Coarse-to-fine registration: interest points on the sensed image,
//! predicted search windows in the reference, descriptor template matching,
//! robust model fitting and rectification onto the reference grid.
//!
//! Two input situations are supported and must be chosen explicitly:
//!
//! * both images geo-referenced ([`SceneGeometry::Georeferenced`]); search
//!   windows come from the world files and the final model is planar;
//! * the sensed image carries an RPC ([`SceneGeometry::Rfm`]); each template
//!   is first resampled into reference geometry through a local affine
//!   derived from the RPC, and the final model is an affine bias on the RPC.
//!
//! Control points keep the order of the interest points they came from, and
//! rejected points stay in the report flagged invalid.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::descriptor::{build_sfoc, FeatureVolume, SfocParams};
use crate::detect::{block_fast, BlockFastConfig, InterestPoint};
use crate::error::{Error, Result};
use crate::filters::{convolve2d_fast, default_radius, gaussian_kernel, Plane};
use crate::geometry::{
    affine_bias_fit, estimate_projective, local_affine_from_rfm, ransac, rfm_forward, warp_resample,
    AffineBias, GeometricModel, GroundControlPoint, ModelKind, PointPair, RansacConfig, RpcModel,
};
use crate::raster::{bilinear_sample, GeoRef, Raster};
use crate::similarity::{fast_ncc, peak_locate, template_stats, CorrelationSurface, DEGENERATE_VARIANCE};

/// Model fitted to the control points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Projective,
    Poly2,
    /// Affine bias compensation of the sensed image's RPC.
    RfmAffine,
}

impl ModelChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "projective" => Ok(ModelChoice::Projective),
            "poly2" => Ok(ModelChoice::Poly2),
            "rfm_affine" => Ok(ModelChoice::RfmAffine),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected projective, poly2 or rfm_affine)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelChoice::Projective => "projective",
            ModelChoice::Poly2 => "poly2",
            ModelChoice::RfmAffine => "rfm_affine",
        }
    }
}

/// Features compared by the template matcher.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Steerable-filter descriptor volumes.
    Sfoc,
    /// Raw intensities (a single channel), the classic NCC baseline.
    Intensity,
}

impl Similarity {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sfoc" => Ok(Similarity::Sfoc),
            "intensity" | "raw" => Ok(Similarity::Intensity),
            other => Err(Error::Config(format!(
                "unknown similarity '{other}' (expected sfoc or intensity)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Similarity::Sfoc => "sfoc",
            Similarity::Intensity => "intensity",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchConfig {
    /// Side of the square template, pixels.
    pub template_size: usize,
    /// Side of the square search window, pixels.
    pub search_size: usize,
    /// Number of interest points requested from block FAST.
    pub ip_count: usize,
    /// Matches scoring below this NCC value are discarded.
    pub min_score: f64,
    /// Reprojection error (pixels) under which a match counts as correct.
    pub correct_threshold: f64,
    pub fast_threshold: f64,
    pub fast_arc: usize,
    pub sfoc: SfocParams,
    pub similarity: Similarity,
    pub ransac: RansacConfig,
    pub model: ModelChoice,
    /// Constant terrain height used with an RPC.
    pub h0: f64,
    /// Quadratic sub-pixel refinement of correlation peaks.
    pub subpixel: bool,
    /// Worker threads for per-point matching; 0 lets the runtime decide.
    pub workers: usize,
    /// Number of evenly spaced interest points whose correlation surfaces
    /// are kept for inspection.
    pub heatmap_samples: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            template_size: 100,
            search_size: 200,
            ip_count: 400,
            min_score: 0.2,
            correct_threshold: 1.5,
            fast_threshold: 0.08,
            fast_arc: 9,
            sfoc: SfocParams::default(),
            similarity: Similarity::Sfoc,
            ransac: RansacConfig::default(),
            model: ModelChoice::Projective,
            h0: 0.0,
            subpixel: false,
            workers: 0,
            heatmap_samples: 0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.template_size < 8 {
            return Err(Error::Config(format!(
                "template_size {} is below the minimum of 8",
                self.template_size
            )));
        }
        if self.template_size >= self.search_size {
            return Err(Error::Config(format!(
                "template_size {} must be smaller than search_size {}",
                self.template_size, self.search_size
            )));
        }
        if self.ip_count == 0 {
            return Err(Error::Config("ip_count must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.min_score) {
            return Err(Error::Config(format!("min_score {} outside [-1, 1]", self.min_score)));
        }
        if !(self.correct_threshold > 0.0) {
            return Err(Error::Config("correct_threshold must be positive".into()));
        }
        if !(self.fast_threshold > 0.0) || self.fast_arc == 0 || self.fast_arc > 16 {
            return Err(Error::Config("FAST threshold must be positive and arc in 1..=16".into()));
        }
        if !self.h0.is_finite() {
            return Err(Error::Config("h0 must be finite".into()));
        }
        self.sfoc.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.ransac.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn half(&self) -> usize {
        self.template_size / 2
    }

    /// Runs `f` on a pool bounded by `workers`.
    pub fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        if self.workers == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", self.workers)))?;
        Ok(pool.install(f))
    }
}

/// How the two images relate geographically.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneGeometry {
    /// Both images carry a pixel-to-world affine.
    Georeferenced { sensed: GeoRef, reference: GeoRef },
    /// The sensed image carries an RPC, the reference a pixel-to-world
    /// affine with `X = lon`, `Y = lat`.
    Rfm { rpc: RpcModel, reference: GeoRef },
}

impl SceneGeometry {
    /// Both images on the same pixel grid.
    pub fn aligned() -> Self {
        SceneGeometry::Georeferenced {
            sensed: GeoRef::identity(),
            reference: GeoRef::identity(),
        }
    }

    fn check_model(&self, model: ModelChoice) -> Result<()> {
        match (self, model) {
            (SceneGeometry::Rfm { .. }, ModelChoice::RfmAffine) => Ok(()),
            (SceneGeometry::Georeferenced { .. }, ModelChoice::Projective | ModelChoice::Poly2) => Ok(()),
            (SceneGeometry::Rfm { .. }, m) => Err(Error::Config(format!(
                "model {} needs geo-referenced images, but an RPC was given",
                m.name()
            ))),
            (SceneGeometry::Georeferenced { .. }, _) => {
                Err(Error::Config("model rfm_affine needs an RPC for the sensed image".into()))
            }
        }
    }
}

/// A matched sensed/reference coordinate pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControlPoint {
    /// Index of the originating interest point.
    pub ip_index: usize,
    pub sensed_x: f64,
    pub sensed_y: f64,
    pub ref_x: f64,
    pub ref_y: f64,
    pub score: f64,
    /// Cleared when the point is rejected as an outlier.
    pub valid: bool,
}

impl ControlPoint {
    pub fn pair(&self) -> PointPair {
        PointPair::new(self.sensed_x, self.sensed_y, self.ref_x, self.ref_y)
    }
}

/// Axis-aligned window in reference pixels, `[x0, x0 + width) x [y0, y0 + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchWindow {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// `search_size`-square window centered on `center`, clipped to the image.
///
/// `None` when the center falls outside the image or the clipped window can
/// no longer hold a template.
pub fn window_around(
    center: (f64, f64),
    image_size: (usize, usize),
    search_size: usize,
    template_size: usize,
) -> Option<SearchWindow> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let (cx, cy) = (center.0.round(), center.1.round());
    if !(cx >= 0.0 && cy >= 0.0 && cx < w && cy < h) {
        return None;
    }
    let half = (search_size / 2) as f64;
    let clip = |c: f64, limit: f64| {
        let lo = (c - half).max(0.0);
        let hi = (c - half + search_size as f64).min(limit);
        (lo as usize, (hi - lo) as usize)
    };
    let (x0, width) = clip(cx, w);
    let (y0, height) = clip(cy, h);
    (width >= template_size && height >= template_size).then_some(SearchWindow {
        x0,
        y0,
        width,
        height,
    })
}

/// Search window for a sensed pixel, predicted through both world files.
pub fn predict_search_window(
    sensed: &GeoRef,
    reference: &GeoRef,
    ip: (f64, f64),
    reference_size: (usize, usize),
    config: &MatchConfig,
) -> Option<SearchWindow> {
    let (wx, wy) = sensed.pixel_to_geo(ip.0, ip.1);
    window_around(
        reference.geo_to_pixel(wx, wy),
        reference_size,
        config.search_size,
        config.template_size,
    )
}

/// Reference position found for a template.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchHit {
    /// Template center in reference pixels.
    pub ref_x: f64,
    pub ref_y: f64,
    pub score: f64,
    pub surface: CorrelationSurface,
}

/// Correlates a template with its search window and keeps the peak if it
/// scores at least `min_score`.
///
/// The template's center is its pixel `(size / 2, size / 2)`; the returned
/// position is the window origin plus the peak offset plus that half extent.
/// A flat template yields `None`.
pub fn match_ip(
    template: &FeatureVolume,
    search: &FeatureVolume,
    window: &SearchWindow,
    config: &MatchConfig,
) -> Result<Option<MatchHit>> {
    let stats = template_stats(template);
    if stats.denom_t <= DEGENERATE_VARIANCE * stats.count {
        return Ok(None);
    }
    let surface = fast_ncc(template, search)?;
    let peak = match peak_locate(&surface, config.subpixel) {
        Ok(p) => p,
        Err(Error::Matching(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if peak.score < config.min_score {
        return Ok(None);
    }
    let (px, py) = peak.subpixel.unwrap_or((peak.x as f64, peak.y as f64));
    let (hx, hy) = ((template.width() / 2) as f64, (template.height() / 2) as f64);
    Ok(Some(MatchHit {
        ref_x: window.x0 as f64 + px + hx,
        ref_y: window.y0 as f64 + py + hy,
        score: peak.score,
        surface,
    }))
}

fn features(image: &Raster, config: &MatchConfig) -> Result<FeatureVolume> {
    match config.similarity {
        Similarity::Sfoc => build_sfoc(image, &config.sfoc),
        Similarity::Intensity => Ok(FeatureVolume::from_raster(image)),
    }
}

/// Output of the matching stage.
#[derive(Clone, Debug, PartialEq)]
pub struct CpReport {
    pub interest_points: Vec<InterestPoint>,
    pub cps: Vec<ControlPoint>,
    /// Correlation surfaces of the sampled interest points, by IP index.
    pub surfaces: Vec<(usize, CorrelationSurface)>,
    /// Wall time of detection, description and matching, seconds.
    pub elapsed: f64,
}

struct IpOutcome {
    cp: Option<ControlPoint>,
    surface: Option<CorrelationSurface>,
}

/// Detects interest points on the sensed image and matches each against the
/// reference. Fails when no point matches.
pub fn detect_cps(
    sensed: &Raster,
    reference: &Raster,
    geometry: &SceneGeometry,
    config: &MatchConfig,
) -> Result<CpReport> {
    config.validate()?;
    geometry.check_model(config.model)?;
    config.with_pool(|| detect_cps_inner(sensed, reference, geometry, config))?
}

fn detect_cps_inner(
    sensed: &Raster,
    reference: &Raster,
    geometry: &SceneGeometry,
    config: &MatchConfig,
) -> Result<CpReport> {
    let start = Instant::now();
    let half = config.half();
    let ips = block_fast(
        sensed,
        &BlockFastConfig {
            target_count: config.ip_count,
            threshold: config.fast_threshold,
            arc_len: config.fast_arc,
            margin: half + 1,
        },
    )?;
    let ref_volume = features(reference, config)?;
    let ref_size = (reference.width(), reference.height());
    let stride = if config.heatmap_samples == 0 {
        usize::MAX
    } else {
        (ips.len() / config.heatmap_samples).max(1)
    };
    let keep_surface = |i: usize| i % stride == 0 && i / stride < config.heatmap_samples;

    let outcomes: Vec<IpOutcome> = match geometry {
        SceneGeometry::Georeferenced {
            sensed: s_geo,
            reference: r_geo,
        } => {
            let sensed_volume = features(sensed, config)?;
            ips.par_iter()
                .enumerate()
                .map(|(i, ip)| {
                    let Some(window) =
                        predict_search_window(s_geo, r_geo, (ip.x as f64, ip.y as f64), ref_size, config)
                    else {
                        return Ok(IpOutcome { cp: None, surface: None });
                    };
                    let template = match sensed_volume.crop(
                        ip.x - half,
                        ip.y - half,
                        config.template_size,
                        config.template_size,
                    ) {
                        Ok(t) => t,
                        Err(Error::OutOfBounds(_)) => return Ok(IpOutcome { cp: None, surface: None }),
                        Err(e) => return Err(e),
                    };
                    let search = ref_volume.crop(window.x0, window.y0, window.width, window.height)?;
                    let hit = match_ip(&template, &search, &window, config)?;
                    Ok(outcome(i, (ip.x as f64, ip.y as f64), hit, keep_surface(i)))
                })
                .collect::<Result<_>>()?
        }
        SceneGeometry::Rfm { rpc, reference: r_geo } => ips
            .par_iter()
            .enumerate()
            .map(|(i, ip)| {
                Ok(match match_rfm_ip(sensed, &ref_volume, rpc, r_geo, ref_size, ip, config)? {
                    Some((xy, hit)) => outcome(i, xy, hit, keep_surface(i)),
                    None => IpOutcome { cp: None, surface: None },
                })
            })
            .collect::<Result<_>>()?,
    };

    let mut cps = Vec::new();
    let mut surfaces = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        cps.extend(o.cp);
        if let Some(s) = o.surface {
            surfaces.push((i, s));
        }
    }
    if cps.is_empty() {
        return Err(Error::Matching(format!(
            "none of {} interest points produced a control point",
            ips.len()
        )));
    }
    Ok(CpReport {
        interest_points: ips,
        cps,
        surfaces,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

fn outcome(i: usize, sensed_xy: (f64, f64), hit: Option<MatchHit>, keep_surface: bool) -> IpOutcome {
    match hit {
        Some(h) => IpOutcome {
            cp: Some(ControlPoint {
                ip_index: i,
                sensed_x: sensed_xy.0,
                sensed_y: sensed_xy.1,
                ref_x: h.ref_x,
                ref_y: h.ref_y,
                score: h.score,
                valid: true,
            }),
            surface: keep_surface.then_some(h.surface),
        },
        None => IpOutcome { cp: None, surface: None },
    }
}

/// Resamples the sensed neighbourhood of `ip` into reference geometry through
/// the RPC-derived local affine and matches it. Returns the sensed position
/// of the template center with the match, or `None` when the local model or
/// window cannot be formed.
fn match_rfm_ip(
    sensed: &Raster,
    ref_volume: &FeatureVolume,
    rpc: &RpcModel,
    r_geo: &GeoRef,
    ref_size: (usize, usize),
    ip: &InterestPoint,
    config: &MatchConfig,
) -> Result<Option<((f64, f64), Option<MatchHit>)>> {
    let skip = Ok(None);
    let t = config.template_size;
    let half = config.half();
    let Ok(local) = local_affine_from_rfm(rpc, r_geo, ip.x as f64, ip.y as f64, half as f64, config.h0) else {
        return skip;
    };
    let Some(inverse) = local.affine.inverse() else { return skip };
    let (px, py) = local.affine.apply(ip.x as f64, ip.y as f64);
    let Some(window) = window_around((px, py), ref_size, config.search_size, t) else {
        return skip;
    };
    let (cx, cy) = (px.round(), py.round());
    let pad = match config.similarity {
        Similarity::Sfoc => config.sfoc.support_radius(),
        Similarity::Intensity => 0,
    };
    let side = t + 2 * pad;
    let (ox, oy) = (cx - (half + pad) as f64, cy - (half + pad) as f64);
    let mut outside = false;
    let patch = Raster::from_fn(side, side, |x, y| {
        let (sx, sy) = inverse.apply(ox + x as f64, oy + y as f64);
        let s = bilinear_sample(sensed, sx, sy);
        outside |= !s.in_bounds;
        s.value
    });
    if outside {
        return skip;
    }
    let template = features(&patch, config)?.crop(pad, pad, t, t)?;
    let search = ref_volume.crop(window.x0, window.y0, window.width, window.height)?;
    let hit = match_ip(&template, &search, &window, config)?;
    Ok(Some((inverse.apply(cx, cy), hit)))
}

/// Model fitted to the surviving control points.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Registration {
    /// Sensed-to-reference planar transform.
    Planar { model: GeometricModel },
    /// Image-space bias of the sensed RPC.
    RfmBias { bias: AffineBias },
}

/// Fits the configured model robustly and flags rejected points.
///
/// Geo-referenced scenes use RANSAC with the planar model; RPC scenes fit
/// the affine bias with iterative rejection, using the reference match's
/// world position as ground truth at height `h0`.
pub fn refine_and_reject(
    cps: &[ControlPoint],
    geometry: &SceneGeometry,
    config: &MatchConfig,
) -> Result<(Registration, Vec<ControlPoint>)> {
    geometry.check_model(config.model)?;
    let mut flagged = cps.to_vec();
    let (registration, mask) = match geometry {
        SceneGeometry::Georeferenced { .. } => {
            let kind = match config.model {
                ModelChoice::Poly2 => ModelKind::Poly2,
                _ => ModelKind::Projective,
            };
            let pairs: Vec<PointPair> = cps.iter().map(ControlPoint::pair).collect();
            let fit = ransac(&pairs, kind, &config.ransac)?;
            (Registration::Planar { model: fit.model }, fit.inliers)
        }
        SceneGeometry::Rfm { rpc, reference } => {
            let gcps: Vec<GroundControlPoint> = cps
                .iter()
                .map(|cp| {
                    let (lon, lat) = reference.pixel_to_geo(cp.ref_x, cp.ref_y);
                    GroundControlPoint {
                        line: cp.sensed_y,
                        sample: cp.sensed_x,
                        lat,
                        lon,
                        height: config.h0,
                    }
                })
                .collect();
            let bias = affine_bias_fit(&gcps, rpc, config.ransac.inlier_threshold)?;
            let mask = bias.inliers.clone();
            (Registration::RfmBias { bias }, mask)
        }
    };
    for (cp, keep) in flagged.iter_mut().zip(mask) {
        cp.valid = keep;
    }
    Ok((registration, flagged))
}

/// Resamples the sensed image onto the `width x height` reference grid.
pub fn rectify(
    sensed: &Raster,
    registration: &Registration,
    geometry: &SceneGeometry,
    h0: f64,
    width: usize,
    height: usize,
) -> Result<Raster> {
    match (registration, geometry) {
        (Registration::Planar { model }, _) => crate::geometry::warp_model(sensed, model, width, height),
        (Registration::RfmBias { bias }, SceneGeometry::Rfm { rpc, reference }) => {
            let map = |x: f64, y: f64| {
                let (lon, lat) = reference.pixel_to_geo(x, y);
                let (line, sample) = rfm_forward(rpc, lat, lon, h0).ok()?;
                let (r, c) = bias.uncorrect(line, sample)?;
                Some((c, r))
            };
            warp_resample(sensed, &map, width, height)
        }
        (Registration::RfmBias { .. }, _) => Err(Error::Config(
            "an RPC bias can only be applied with the RPC scene geometry".into(),
        )),
    }
}

/// Matching quality against a known sensed-to-reference model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegistrationMetrics {
    /// Matches whose reprojection error is within the threshold.
    pub ncm: usize,
    /// Matches evaluated.
    pub total: usize,
    /// `ncm / total`.
    pub cmr: f64,
    /// RMS reprojection error over the correct matches, pixels.
    pub rmse_px: f64,
    pub mt_seconds: f64,
}

/// Scores every given control point against `truth`, which maps sensed
/// pixels to reference pixels.
pub fn compute_metrics(
    cps: &[ControlPoint],
    truth: &GeometricModel,
    threshold: f64,
    elapsed: f64,
) -> Result<RegistrationMetrics> {
    if cps.is_empty() {
        return Err(Error::Matching("no matches to evaluate".into()));
    }
    let mut ncm = 0;
    let mut sse = 0.0;
    for cp in cps {
        let e = truth.residual(&cp.pair());
        if e <= threshold {
            ncm += 1;
            sse += e * e;
        }
    }
    Ok(RegistrationMetrics {
        ncm,
        total: cps.len(),
        cmr: ncm as f64 / cps.len() as f64,
        rmse_px: if ncm == 0 { 0.0 } else { (sse / ncm as f64).sqrt() },
        mt_seconds: elapsed,
    })
}

/// Projective truth model fitted to manually selected pairs.
pub fn truth_from_pairs(pairs: &[PointPair]) -> Result<GeometricModel> {
    estimate_projective(pairs).map(GeometricModel::Projective)
}

/// Parses `sensed_x,sensed_y,ref_x,ref_y` rows; a header row is skipped.
pub fn parse_truth_csv(text: &str) -> Result<Vec<PointPair>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("sensed_x")) {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("truth CSV", format!("line {}: {e}", n + 1)))?;
        if v.len() != 4 {
            return Err(Error::format("truth CSV", format!("line {}: expected 4 fields", n + 1)));
        }
        pairs.push(PointPair::new(v[0], v[1], v[2], v[3]));
    }
    Ok(pairs)
}

pub fn cps_to_csv(cps: &[ControlPoint]) -> String {
    let mut out = String::from("sensed_x,sensed_y,ref_x,ref_y,score,valid\n");
    for cp in cps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            cp.sensed_x, cp.sensed_y, cp.ref_x, cp.ref_y, cp.score, cp.valid as u8
        );
    }
    out
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    ncm: usize,
    total: usize,
    cmr: f64,
    rmse_px: f64,
    mt_seconds: f64,
    inliers: usize,
    /// Whether the truth model was supplied or estimated from the run.
    truth: &'a str,
    model: &'a Registration,
}

/// Metrics and fitted model as pretty-printed JSON.
pub fn metrics_json(
    metrics: &RegistrationMetrics,
    inliers: usize,
    truth: &str,
    registration: &Registration,
) -> String {
    let report = MetricsReport {
        ncm: metrics.ncm,
        total: metrics.total,
        cmr: metrics.cmr,
        rmse_px: metrics.rmse_px,
        mt_seconds: metrics.mt_seconds,
        inliers,
        truth,
        model: registration,
    };
    serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
}

/// Alternates `cell`-pixel squares of the two images for visual checks.
pub fn checkerboard(a: &Raster, b: &Raster, cell: usize) -> Result<Raster> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::InvalidParameter("checkerboard images differ in size".into()));
    }
    if cell == 0 {
        return Err(Error::InvalidParameter("checkerboard cell must be positive".into()));
    }
    Ok(Raster::from_fn(a.width(), a.height(), |x, y| {
        if (x / cell + y / cell) % 2 == 0 {
            a.get(x, y) as f64
        } else {
            b.get(x, y) as f64
        }
    }))
}

/// Resamples to pixels `factor` times coarser, with a Gaussian prefilter
/// against aliasing. Pixel `(i, j)` of the result samples source position
/// `(i * factor, j * factor)`, matching [`GeoRef::rescaled`].
pub fn downsample(image: &Raster, geo: &GeoRef, factor: f64) -> Result<(Raster, GeoRef)> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(Error::InvalidParameter(format!("downsampling factor {factor}")));
    }
    let w = (image.width() as f64 / factor).floor() as usize;
    let h = (image.height() as f64 / factor).floor() as usize;
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter("downsampled image would be empty".into()));
    }
    let sigma = 0.5 * (factor * factor - 1.0).sqrt();
    let smooth = if sigma > 0.05 {
        let radius = default_radius(sigma).min(image.width().min(image.height()).saturating_sub(1) / 2);
        let plane = convolve2d_fast(&Plane::from_raster(image), &gaussian_kernel(sigma, radius.max(1))?)?;
        Raster::from_fn(image.width(), image.height(), |x, y| plane.get(x, y))
    } else {
        image.clone()
    };
    let out = Raster::from_fn(w, h, |x, y| {
        bilinear_sample(&smooth, x as f64 * factor, y as f64 * factor).value
    })
    .with_bit_depth_origin(image.bit_depth_origin());
    Ok((out, geo.rescaled(factor)?))
}

/// Brings two geo-referenced images to a common ground resolution by
/// downsampling whichever has the finer pixels. Ratios within 1% are left
/// alone.
pub fn harmonize_resolution(
    sensed: (Raster, GeoRef),
    reference: (Raster, GeoRef),
) -> Result<((Raster, GeoRef), (Raster, GeoRef))> {
    let ratio = reference.1.pixel_size() / sensed.1.pixel_size();
    if (ratio - 1.0).abs() <= 0.01 {
        return Ok((sensed, reference));
    }
    if ratio > 1.0 {
        Ok((downsample(&sensed.0, &sensed.1, ratio)?, reference))
    } else {
        Ok((sensed, downsample(&reference.0, &reference.1, 1.0 / ratio)?))
    }
}

/// Everything produced by a full registration run.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationRun {
    pub report: CpReport,
    /// Control points with outlier flags applied.
    pub cps: Vec<ControlPoint>,
    pub registration: Registration,
    pub rectified: Raster,
}

impl RegistrationRun {
    pub fn inlier_count(&self) -> usize {
        self.cps.iter().filter(|c| c.valid).count()
    }
}

/// Matching, robust fitting and rectification onto the reference grid.
pub fn register(
    sensed: &Raster,
    reference: &Raster,
    geometry: &SceneGeometry,
    config: &MatchConfig,
) -> Result<RegistrationRun> {
    let report = detect_cps(sensed, reference, geometry, config)?;
    let (registration, cps) = refine_and_reject(&report.cps, geometry, config)?;
    let rectified = config.with_pool(|| {
        rectify(sensed, &registration, geometry, config.h0, reference.width(), reference.height())
    })??;
    Ok(RegistrationRun {
        report,
        cps,
        registration,
        rectified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AffineTransform, ProjectiveTransform};
    use crate::harness::texture;

    fn small_config() -> MatchConfig {
        MatchConfig {
            template_size: 32,
            search_size: 64,
            ip_count: 16,
            ..MatchConfig::default()
        }
    }

    fn cp(i: usize, sx: f64, sy: f64, rx: f64, ry: f64) -> ControlPoint {
        ControlPoint {
            ip_index: i,
            sensed_x: sx,
            sensed_y: sy,
            ref_x: rx,
            ref_y: ry,
            score: 0.9,
            valid: true,
        }
    }

    #[test]
    fn windows_follow_geo_references() {
        let cfg = MatchConfig::default();
        let same = GeoRef::north_up(500.0, 900.0, 2.0).unwrap();
        let w = predict_search_window(&same, &same, (300.0, 250.0), (1000, 1000), &cfg).unwrap();
        assert_eq!((w.x0, w.y0, w.width, w.height), (200, 150, 200, 200));
        // reference origin 30 pixels further east: the same ground sits 30 px further left
        let shifted = GeoRef::north_up(560.0, 900.0, 2.0).unwrap();
        let w = predict_search_window(&same, &shifted, (300.0, 250.0), (1000, 1000), &cfg).unwrap();
        assert_eq!((w.x0, w.y0), (170, 150));
    }

    #[test]
    fn windows_clip_or_skip_at_borders() {
        let w = window_around((20.0, 500.0), (1000, 1000), 200, 100).unwrap();
        assert_eq!((w.x0, w.width, w.y0, w.height), (0, 120, 400, 200));
        assert!(window_around((20.0, 30.0), (1000, 1000), 200, 150).is_none());
        assert!(window_around((-5.0, 30.0), (1000, 1000), 200, 100).is_none());
        assert!(window_around((999.6, 30.0), (1000, 1000), 200, 100).is_none());
    }

    #[test]
    fn match_ip_recovers_planted_shift() {
        let cfg = small_config();
        let img = texture(128, 128, 3);
        let vol = build_sfoc(&img, &cfg.sfoc).unwrap();
        // template centered at (60, 58); the reference content sits at (67, 55)
        let template = vol.crop(60 - 16 - 7, 58 - 16 + 3, 32, 32).unwrap();
        let window = SearchWindow {
            x0: 28,
            y0: 26,
            width: 64,
            height: 64,
        };
        let search = vol.crop(window.x0, window.y0, 64, 64).unwrap();
        let hit = match_ip(&template, &search, &window, &cfg).unwrap().unwrap();
        assert_eq!((hit.ref_x, hit.ref_y), (53.0, 61.0));
        assert!(hit.score > 0.999);

        let flat = FeatureVolume::new(32, 32, vol.z(), vec![0.25; 32 * 32 * vol.z()]).unwrap();
        assert!(match_ip(&flat, &search, &window, &cfg).unwrap().is_none());
    }

    #[test]
    fn self_registration_is_exact() {
        let img = texture(160, 160, 4);
        let cfg = small_config();
        let report = detect_cps(&img, &img, &SceneGeometry::aligned(), &cfg).unwrap();
        assert!(report.cps.len() as f64 >= 0.95 * report.interest_points.len() as f64);
        for c in &report.cps {
            assert_eq!((c.sensed_x, c.sensed_y), (c.ref_x, c.ref_y));
        }
        assert!(report.cps.windows(2).all(|w| w[0].ip_index < w[1].ip_index));
    }

    #[test]
    fn disjoint_reference_fails() {
        let img = texture(160, 160, 5);
        let geometry = SceneGeometry::Georeferenced {
            sensed: GeoRef::identity(),
            reference: GeoRef::north_up(1e6, 1e6, 1.0).unwrap(),
        };
        let err = detect_cps(&img, &img, &geometry, &small_config()).unwrap_err();
        assert!(matches!(err, Error::Matching(_)));
    }

    #[test]
    fn model_and_geometry_must_agree() {
        let img = texture(64, 64, 6);
        let cfg = MatchConfig {
            model: ModelChoice::RfmAffine,
            ..small_config()
        };
        assert!(matches!(
            detect_cps(&img, &img, &SceneGeometry::aligned(), &cfg),
            Err(Error::Config(_))
        ));
        let bad = MatchConfig {
            template_size: 64,
            search_size: 64,
            ..MatchConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn refine_flags_outliers() {
        let h = ProjectiveTransform::from_matrix([[1.01, 0.02, 5.0], [-0.01, 0.99, -3.0], [1e-5, 0.0, 1.0]]).unwrap();
        let mut cps = Vec::new();
        for i in 0..30 {
            let (x, y) = ((i % 6) as f64 * 80.0 + 10.0, (i / 6) as f64 * 90.0 + 15.0);
            let (u, v) = h.apply(x, y);
            let bump = if i % 5 == 2 { 25.0 } else { 0.0 };
            cps.push(cp(i, x, y, u + bump, v - bump));
        }
        let cfg = MatchConfig::default();
        let (reg, flagged) = refine_and_reject(&cps, &SceneGeometry::aligned(), &cfg).unwrap();
        assert_eq!(flagged.len(), cps.len());
        for c in &flagged {
            assert_eq!(c.valid, c.ip_index % 5 != 2);
        }
        let Registration::Planar { model } = reg else { panic!() };
        assert!(model.residual(&cps[0].pair()) < 1e-8);
        assert!(refine_and_reject(&cps[..3], &SceneGeometry::aligned(), &cfg).is_err());
    }

    #[test]
    fn rectify_identity_keeps_image() {
        let img = texture(50, 40, 7);
        let reg = Registration::Planar {
            model: GeometricModel::identity(),
        };
        let out = rectify(&img, &reg, &SceneGeometry::aligned(), 0.0, 50, 40).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn metrics_by_hand() {
        let truth = GeometricModel::Affine(AffineTransform::translation(2.0, -1.0));
        let exact: Vec<_> = (0..4).map(|i| cp(i, i as f64, 1.0, i as f64 + 2.0, 0.0)).collect();
        let m = compute_metrics(&exact, &truth, 1.5, 0.25).unwrap();
        assert_eq!((m.ncm, m.total, m.cmr, m.rmse_px, m.mt_seconds), (4, 4, 1.0, 0.0, 0.25));

        let off = [cp(0, 0.0, 0.0, 5.0, -1.0)];
        let m = compute_metrics(&off, &truth, 1.5, 0.0).unwrap();
        assert_eq!((m.ncm, m.cmr), (0, 0.0));

        // errors 0.6, 0.8 (correct), 1.0 (correct), 4.0 (wrong)
        let mixed = [
            cp(0, 0.0, 0.0, 2.6, -1.0),
            cp(1, 0.0, 0.0, 2.0, -0.2),
            cp(2, 0.0, 0.0, 2.6, -0.2),
            cp(3, 0.0, 0.0, 6.0, -1.0),
        ];
        let m = compute_metrics(&mixed, &truth, 1.5, 0.0).unwrap();
        assert_eq!((m.ncm, m.total), (3, 4));
        assert!((m.cmr - 0.75).abs() < 1e-15);
        let want = ((0.36 + 0.64 + 1.0) / 3.0f64).sqrt();
        assert!((m.rmse_px - want).abs() < 1e-12);
        assert!(compute_metrics(&[], &truth, 1.5, 0.0).is_err());
    }

    #[test]
    fn reports_round_trip() {
        let cps = [cp(0, 1.5, 2.0, 3.0, 4.25)];
        let csv = cps_to_csv(&cps);
        assert_eq!(csv, "sensed_x,sensed_y,ref_x,ref_y,score,valid\n1.5,2,3,4.25,0.9,1\n");
        let pairs = parse_truth_csv("sensed_x,sensed_y,ref_x,ref_y\n1,2,3,4\n\n5,6,7,8\n").unwrap();
        assert_eq!(pairs, vec![PointPair::new(1.0, 2.0, 3.0, 4.0), PointPair::new(5.0, 6.0, 7.0, 8.0)]);
        assert!(parse_truth_csv("1,2,3\n").is_err());
        let m = compute_metrics(&cps, &GeometricModel::identity(), 1.5, 0.0).unwrap();
        let json = metrics_json(&m, 1, "supplied", &Registration::Planar { model: GeometricModel::identity() });
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["ncm", "cmr", "rmse_px", "mt_seconds", "model"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn checkerboard_alternates() {
        let a = Raster::filled(8, 8, 0.0);
        let b = Raster::filled(8, 8, 1.0);
        let c = checkerboard(&a, &b, 4).unwrap();
        assert_eq!((c.get(0, 0), c.get(4, 0), c.get(4, 4), c.get(0, 7)), (0.0, 1.0, 0.0, 1.0));
        assert!(checkerboard(&a, &Raster::filled(4, 8, 0.0), 4).is_err());
    }

    #[test]
    fn harmonization_downsamples_finer_image() {
        let fine = texture(120, 80, 8);
        let coarse = texture(60, 40, 9);
        let fine_geo = GeoRef::north_up(100.0, 200.0, 1.0).unwrap();
        let coarse_geo = GeoRef::north_up(100.0, 200.0, 2.0).unwrap();
        let ((s, s_geo), (r, r_geo)) =
            harmonize_resolution((fine.clone(), fine_geo), (coarse.clone(), coarse_geo)).unwrap();
        assert_eq!((s.width(), s.height()), (60, 40));
        assert_eq!(s_geo.pixel_size(), 2.0);
        assert_eq!((r, r_geo), (coarse.clone(), coarse_geo));
        assert_eq!(s_geo.pixel_to_geo(10.0, 5.0), fine_geo.pixel_to_geo(20.0, 10.0));
        let ((s2, _), _) = harmonize_resolution((fine.clone(), fine_geo), (fine.clone(), fine_geo)).unwrap();
        assert_eq!(s2, fine);
    }
}
