//! Rational function camera model, its inversion at fixed height, RFM-driven
//! local affine prediction and affine bias compensation.
//!
//! Coefficient `i` (1-based in files) multiplies the `i`-th monomial of
//!
//! ```text
//! 1, L, P, H, LP, LH, PH, L^2, P^2, H^2,
//! PLH, L^3, LP^2, LH^2, L^2P, P^3, PH^2, L^2H, P^2H, H^3
//! ```
//!
//! where `P`, `L`, `H` are the normalized latitude, longitude and height.
//! Image coordinates are `line` (row, y) and `sample` (column, x).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::models::{estimate_affine, AffineTransform, GeometricModel, PointPair};
use crate::error::{Error, Result};
use crate::raster::GeoRef;

/// Cubic monomials in the fixed coefficient order.
pub fn rpc_terms(p: f64, l: f64, h: f64) -> [f64; 20] {
    [
        1.0,
        l,
        p,
        h,
        l * p,
        l * h,
        p * h,
        l * l,
        p * p,
        h * h,
        p * l * h,
        l * l * l,
        l * p * p,
        l * h * h,
        l * l * p,
        p * p * p,
        p * h * h,
        l * l * h,
        p * p * h,
        h * h * h,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RpcModel {
    pub line_off: f64,
    pub samp_off: f64,
    pub lat_off: f64,
    pub lon_off: f64,
    pub height_off: f64,
    pub line_scale: f64,
    pub samp_scale: f64,
    pub lat_scale: f64,
    pub lon_scale: f64,
    pub height_scale: f64,
    pub num_l: [f64; 20],
    pub den_l: [f64; 20],
    pub num_s: [f64; 20],
    pub den_s: [f64; 20],
}

/// Denominators smaller than this in magnitude are rejected.
pub const MIN_DENOMINATOR: f64 = 1e-10;

impl RpcModel {
    /// Model with unit scales, zero offsets and `line = P`, `sample = L`.
    pub fn identity() -> Self {
        let mut num_l = [0.0; 20];
        let mut num_s = [0.0; 20];
        let mut den = [0.0; 20];
        num_l[2] = 1.0;
        num_s[1] = 1.0;
        den[0] = 1.0;
        RpcModel {
            line_off: 0.0,
            samp_off: 0.0,
            lat_off: 0.0,
            lon_off: 0.0,
            height_off: 0.0,
            line_scale: 1.0,
            samp_scale: 1.0,
            lat_scale: 1.0,
            lon_scale: 1.0,
            height_scale: 1.0,
            num_l,
            den_l: den,
            num_s,
            den_s: den,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            self.line_scale,
            self.samp_scale,
            self.lat_scale,
            self.lon_scale,
            self.height_scale,
        ];
        if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("RPC scales must be positive".into()));
        }
        let all = [&self.num_l, &self.den_l, &self.num_s, &self.den_s];
        if all.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("non-finite RPC coefficient".into()));
        }
        Ok(())
    }

    /// Normalized `(P, L, H)` for geodetic input.
    pub fn normalize_ground(&self, lat: f64, lon: f64, h: f64) -> (f64, f64, f64) {
        (
            (lat - self.lat_off) / self.lat_scale,
            (lon - self.lon_off) / self.lon_scale,
            (h - self.height_off) / self.height_scale,
        )
    }

    /// Normalized `(line, sample)` of image coordinates.
    pub fn normalize_image(&self, line: f64, sample: f64) -> (f64, f64) {
        (
            (line - self.line_off) / self.line_scale,
            (sample - self.samp_off) / self.samp_scale,
        )
    }

    /// Evaluates the two rational cubics in normalized space.
    pub fn eval_normalized(&self, p: f64, l: f64, h: f64) -> Result<(f64, f64)> {
        let t = rpc_terms(p, l, h);
        let dot = |c: &[f64; 20]| t.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let (dl, ds) = (dot(&self.den_l), dot(&self.den_s));
        if dl.abs() < MIN_DENOMINATOR || ds.abs() < MIN_DENOMINATOR {
            return Err(Error::Degenerate("RPC denominator vanishes".into()));
        }
        Ok((dot(&self.num_l) / dl, dot(&self.num_s) / ds))
    }
}

/// Ground-to-image projection, returning `(line, sample)` in pixels.
pub fn rfm_forward(rpc: &RpcModel, lat: f64, lon: f64, h: f64) -> Result<(f64, f64)> {
    let (p, l, hn) = rpc.normalize_ground(lat, lon, h);
    let (rn, cn) = rpc.eval_normalized(p, l, hn)?;
    Ok((
        rn * rpc.line_scale + rpc.line_off,
        cn * rpc.samp_scale + rpc.samp_off,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundPoint {
    pub lat: f64,
    pub lon: f64,
    /// Number of residual evaluations until convergence (1 when the seed was
    /// already a solution).
    pub iterations: usize,
    /// Final image-space residual in normalized units.
    pub residual: f64,
}

/// Convergence tolerance of [`rfm_inverse`] in normalized image units.
pub const INVERSE_TOLERANCE: f64 = 1e-6;
const MAX_INVERSE_ITERATIONS: usize = 50;

/// Image-to-ground at fixed height by damped Newton iteration on the
/// normalized 2x2 system, seeded at the ground offsets.
pub fn rfm_inverse(rpc: &RpcModel, line: f64, sample: f64, h: f64) -> Result<GroundPoint> {
    let (rt, ct) = rpc.normalize_image(line, sample);
    let hn = (h - rpc.height_off) / rpc.height_scale;
    let residual = |p: f64, l: f64| -> Result<(f64, f64)> {
        let (r, c) = rpc.eval_normalized(p, l, hn)?;
        Ok((r - rt, c - ct))
    };
    let norm = |(a, b): (f64, f64)| a.abs().max(b.abs());
    let (mut p, mut l) = (0.0, 0.0);
    let mut f = residual(p, l)?;
    // iterate beyond the tolerance while Newton still makes progress
    const POLISH: f64 = 1e-13;
    let mut converged_at = None;
    for it in 1..=MAX_INVERSE_ITERATIONS {
        let fnorm = norm(f);
        if fnorm < INVERSE_TOLERANCE && converged_at.is_none() {
            converged_at = Some(it);
        }
        if fnorm < POLISH {
            break;
        }
        let step = 1e-6;
        let (fp1, fp0) = (residual(p + step, l)?, residual(p - step, l)?);
        let (fl1, fl0) = (residual(p, l + step)?, residual(p, l - step)?);
        let j = [
            [(fp1.0 - fp0.0) / (2.0 * step), (fl1.0 - fl0.0) / (2.0 * step)],
            [(fp1.1 - fp0.1) / (2.0 * step), (fl1.1 - fl0.1) / (2.0 * step)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !det.is_finite() || det.abs() < 1e-14 {
            break;
        }
        let dp = (j[1][1] * f.0 - j[0][1] * f.1) / det;
        let dl = (j[0][0] * f.1 - j[1][0] * f.0) / det;
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let (np, nl) = (p - alpha * dp, l - alpha * dl);
            if let Ok(nf) = residual(np, nl) {
                if norm(nf) < fnorm {
                    p = np;
                    l = nl;
                    f = nf;
                    improved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let final_norm = norm(f);
    if final_norm < INVERSE_TOLERANCE && converged_at.is_none() {
        converged_at = Some(MAX_INVERSE_ITERATIONS);
    }
    match converged_at {
        Some(iterations) if final_norm < INVERSE_TOLERANCE => Ok(GroundPoint {
            lat: p * rpc.lat_scale + rpc.lat_off,
            lon: l * rpc.lon_scale + rpc.lon_off,
            iterations,
            residual: final_norm,
        }),
        _ => Err(Error::NonConvergence(format!(
            "RPC inversion at line {line}, sample {sample}: residual {final_norm:e}"
        ))),
    }
}

/// Sensed-to-reference affine predicted from the RPC for one template.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalAffine {
    pub affine: AffineTransform,
    /// RMS fit residual over the five projected points, in reference pixels.
    pub residual_rms: f64,
}

/// Projects the four corners and the center of the template window around
/// `(center_x, center_y)` to the ground at height `h0`, then into the
/// reference image through its geo-reference, and fits the affine
/// sensed-pixel to reference-pixel map over those five points.
///
/// Ground coordinates map onto world coordinates as `X = lon`, `Y = lat`.
pub fn local_affine_from_rfm(
    rpc: &RpcModel,
    reference: &GeoRef,
    center_x: f64,
    center_y: f64,
    half_size: f64,
    h0: f64,
) -> Result<LocalAffine> {
    let offsets = [
        (-half_size, -half_size),
        (half_size, -half_size),
        (half_size, half_size),
        (-half_size, half_size),
        (0.0, 0.0),
    ];
    let mut pairs = Vec::with_capacity(5);
    for (dx, dy) in offsets {
        let (x, y) = (center_x + dx, center_y + dy);
        let g = rfm_inverse(rpc, y, x, h0)?;
        let (rx, ry) = reference.geo_to_pixel(g.lon, g.lat);
        pairs.push(PointPair::new(x, y, rx, ry));
    }
    let affine = estimate_affine(&pairs)?;
    let residual_rms = super::models::rms_residual(&GeometricModel::Affine(affine), &pairs);
    Ok(LocalAffine {
        affine,
        residual_rms,
    })
}

/// A matched point with its measured sensed-image position and the ground
/// coordinates of its reference-image match.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundControlPoint {
    pub line: f64,
    pub sample: f64,
    pub lat: f64,
    pub lon: f64,
    pub height: f64,
}

/// Image-space affine correction `RFM(ground) = (r, c) + (dr, dc)` with
/// `dr = a0 + a1 r + a2 c`, `dc = b0 + b1 r + b2 c`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffineBias {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub residual_rms: f64,
    /// Which input points survived the iterative rejection.
    pub inliers: Vec<bool>,
}

impl AffineBias {
    pub fn zero() -> Self {
        AffineBias {
            a: [0.0; 3],
            b: [0.0; 3],
            residual_rms: 0.0,
            inliers: Vec::new(),
        }
    }

    pub fn correction(&self, line: f64, sample: f64) -> (f64, f64) {
        (
            self.a[0] + self.a[1] * line + self.a[2] * sample,
            self.b[0] + self.b[1] * line + self.b[2] * sample,
        )
    }

    /// Sensed `(line, sample)` whose corrected position equals `(rl, rs)`,
    /// i.e. the solution of `(r, c) + correction(r, c) = (rl, rs)`.
    pub fn uncorrect(&self, rl: f64, rs: f64) -> Option<(f64, f64)> {
        let m = [
            [1.0 + self.a[1], self.a[2]],
            [self.b[1], 1.0 + self.b[2]],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-14 {
            return None;
        }
        let (u, v) = (rl - self.a[0], rs - self.b[0]);
        Some(((m[1][1] * u - m[0][1] * v) / det, (m[0][0] * v - m[1][0] * u) / det))
    }
}

fn fit_bias(deltas: &[(f64, f64, f64, f64)]) -> Result<([f64; 3], [f64; 3])> {
    // (r, c, dr, dc); fit dr and dc as affine functions of (r, c) through the
    // generic affine estimator, which centers and scales the inputs
    let pairs: Vec<PointPair> = deltas
        .iter()
        .map(|&(r, c, dr, dc)| PointPair::new(r, c, dr, dc))
        .collect();
    let t = estimate_affine(&pairs)?;
    Ok((t.a, t.b))
}

/// Least-squares fit of the affine bias with iterative rejection.
///
/// Each round drops every point whose residual exceeds
/// `max(threshold, 3 * rms)`; when that removes nothing, the single worst
/// point above the bare `threshold` is dropped. Rounds continue until every
/// remaining residual is within `threshold`.
pub fn affine_bias_fit(cps: &[GroundControlPoint], rpc: &RpcModel, threshold: f64) -> Result<AffineBias> {
    if cps.len() < 4 {
        return Err(Error::Degenerate(format!(
            "bias fit needs at least 4 control points, got {}",
            cps.len()
        )));
    }
    rpc.validate()?;
    let mut deltas = Vec::with_capacity(cps.len());
    for cp in cps {
        let (pl, ps) = rfm_forward(rpc, cp.lat, cp.lon, cp.height)?;
        deltas.push((cp.line, cp.sample, pl - cp.line, ps - cp.sample));
    }
    let mut keep = vec![true; cps.len()];
    for _ in 0..=cps.len() {
        let active: Vec<_> = deltas
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(d, _)| *d)
            .collect();
        if active.len() < 4 {
            return Err(Error::NoConsensus(format!(
                "only {} control points survive rejection",
                active.len()
            )));
        }
        let (a, b) = fit_bias(&active)?;
        let residuals: Vec<f64> = deltas
            .iter()
            .map(|&(r, c, dr, dc)| {
                let er = dr - (a[0] + a[1] * r + a[2] * c);
                let ec = dc - (b[0] + b[1] * r + b[2] * c);
                (er * er + ec * ec).sqrt()
            })
            .collect();
        let rms = (residuals
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(r, _)| r * r)
            .sum::<f64>()
            / active.len() as f64)
            .sqrt();
        let limit = threshold.max(3.0 * rms);
        let mut drop: Vec<usize> = (0..keep.len())
            .filter(|&i| keep[i] && residuals[i] > limit)
            .collect();
        if drop.is_empty() {
            // peel off the single worst point while any exceed the threshold
            let worst = (0..keep.len())
                .filter(|&i| keep[i] && residuals[i] > threshold)
                .max_by(|&i, &j| residuals[i].total_cmp(&residuals[j]).then(j.cmp(&i)));
            drop.extend(worst);
        }
        if drop.is_empty() {
            return Ok(AffineBias {
                a,
                b,
                residual_rms: rms,
                inliers: keep,
            });
        }
        for i in drop {
            keep[i] = false;
        }
    }
    Err(Error::NonConvergence("bias rejection did not settle".into()))
}

const RPC_SCALARS: [&str; 10] = [
    "LINE_OFF",
    "SAMP_OFF",
    "LAT_OFF",
    "LONG_OFF",
    "HEIGHT_OFF",
    "LINE_SCALE",
    "SAMP_SCALE",
    "LAT_SCALE",
    "LONG_SCALE",
    "HEIGHT_SCALE",
];

const RPC_ARRAYS: [&str; 4] = [
    "LINE_NUM_COEFF",
    "LINE_DEN_COEFF",
    "SAMP_NUM_COEFF",
    "SAMP_DEN_COEFF",
];

/// Parses `KEY: value` lines. Trailing unit words after the value are ignored.
pub fn parse_rpc(text: &str) -> Result<RpcModel> {
    const FMT: &str = "RPC";
    let mut values: HashMap<String, f64> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::format(FMT, format!("line {}: expected KEY: value", n + 1)))?;
        let tok = rest
            .split_whitespace()
            .next()
            .ok_or_else(|| Error::format(FMT, format!("line {}: missing value", n + 1)))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::format(FMT, format!("line {}: bad number {tok:?}", n + 1)))?;
        values.insert(key.trim().to_ascii_uppercase(), v);
    }
    let get = |k: &str| {
        values
            .get(k)
            .copied()
            .ok_or_else(|| Error::format(FMT, format!("missing key {k}")))
    };
    let coeffs = |prefix: &str| -> Result<[f64; 20]> {
        let mut c = [0.0; 20];
        for (i, v) in c.iter_mut().enumerate() {
            *v = get(&format!("{prefix}_{}", i + 1))?;
        }
        Ok(c)
    };
    let rpc = RpcModel {
        line_off: get("LINE_OFF")?,
        samp_off: get("SAMP_OFF")?,
        lat_off: get("LAT_OFF")?,
        lon_off: get("LONG_OFF")?,
        height_off: get("HEIGHT_OFF")?,
        line_scale: get("LINE_SCALE")?,
        samp_scale: get("SAMP_SCALE")?,
        lat_scale: get("LAT_SCALE")?,
        lon_scale: get("LONG_SCALE")?,
        height_scale: get("HEIGHT_SCALE")?,
        num_l: coeffs(RPC_ARRAYS[0])?,
        den_l: coeffs(RPC_ARRAYS[1])?,
        num_s: coeffs(RPC_ARRAYS[2])?,
        den_s: coeffs(RPC_ARRAYS[3])?,
    };
    rpc.validate()?;
    Ok(rpc)
}

pub fn format_rpc(rpc: &RpcModel) -> String {
    let scalars = [
        rpc.line_off,
        rpc.samp_off,
        rpc.lat_off,
        rpc.lon_off,
        rpc.height_off,
        rpc.line_scale,
        rpc.samp_scale,
        rpc.lat_scale,
        rpc.lon_scale,
        rpc.height_scale,
    ];
    let mut out = String::new();
    for (k, v) in RPC_SCALARS.iter().zip(scalars) {
        let _ = writeln!(out, "{k}: {v:.17e}");
    }
    for (prefix, c) in RPC_ARRAYS.iter().zip([&rpc.num_l, &rpc.den_l, &rpc.num_s, &rpc.den_s]) {
        for (i, v) in c.iter().enumerate() {
            let _ = writeln!(out, "{prefix}_{}: {v:.17e}", i + 1);
        }
    }
    out
}

pub fn load_rpc(path: impl AsRef<Path>) -> Result<RpcModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rpc(&text)
}

pub fn save_rpc(rpc: &RpcModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_rpc(rpc)).map_err(|e| Error::io(path, e))
}
