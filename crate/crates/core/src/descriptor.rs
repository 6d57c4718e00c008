//! Dense structural descriptor built from steerable first- and second-order
//! Gaussian derivative channels.
//!
//! Pipeline per order group: steer the basis responses to each orientation,
//! rectify by absolute value, smooth with a bank of dilated Gaussians, then
//! L2-normalize the orientation vector at every pixel. The two groups are
//! stacked in a fixed order: first-order channels `0..n`, second-order
//! channels `n..2n`, each group ordered by increasing angle `k * pi / n`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{
    default_radius, dilated_gaussian, filter_unchecked, g1_basis, g2_basis, unit_direction, Plane,
};
use crate::raster::{read_f32_le, Raster};

#[derive(Clone, Debug, PartialEq)]
pub struct SfocParams {
    /// Orientations per order group, spaced `pi / orientations` apart.
    pub orientations: usize,
    /// Derivative scales of the first-order group; responses are summed over them.
    pub sigmas_first: Vec<f64>,
    /// Derivative scales of the second-order group.
    pub sigmas_second: Vec<f64>,
    pub dilation_rates: Vec<usize>,
    pub smooth_sigma_first: f64,
    pub smooth_sigma_second: f64,
    /// Norm floor below which a pixel's group vector is set to zero.
    pub epsilon: f64,
    /// `false` drops the second-order group (first-order-only ablation).
    pub second_order: bool,
}

impl Default for SfocParams {
    fn default() -> Self {
        SfocParams {
            orientations: 6,
            sigmas_first: vec![0.6, 0.8, 1.0],
            sigmas_second: vec![1.5],
            dilation_rates: vec![1, 2, 3],
            smooth_sigma_first: 1.0,
            smooth_sigma_second: 1.5,
            epsilon: 1e-6,
            second_order: true,
        }
    }
}

impl SfocParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.orientations < 2 {
            return bad(format!("need at least 2 orientations, got {}", self.orientations));
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if self.sigmas_first.is_empty() || !self.sigmas_first.iter().all(positive) {
            return bad("first-order STDs must be a non-empty list of positive values".into());
        }
        if self.second_order
            && (self.sigmas_second.is_empty() || !self.sigmas_second.iter().all(positive))
        {
            return bad("second-order STDs must be a non-empty list of positive values".into());
        }
        if !positive(&self.smooth_sigma_first) || !positive(&self.smooth_sigma_second) {
            return bad("smoothing STDs must be positive".into());
        }
        if self.dilation_rates.is_empty() || self.dilation_rates.contains(&0) {
            return bad("dilation rates must be a non-empty list of positive integers".into());
        }
        let mut sorted = self.dilation_rates.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.dilation_rates.len() {
            return bad("dilation rates must be distinct".into());
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative".into());
        }
        Ok(())
    }

    /// Total channel count of the stacked volume.
    pub fn channel_count(&self) -> usize {
        if self.second_order {
            2 * self.orientations
        } else {
            self.orientations
        }
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.orientations)
            .map(|k| k as f64 * std::f64::consts::PI / self.orientations as f64)
            .collect()
    }

    /// Largest distance from a pixel at which input changes can affect its
    /// descriptor value.
    pub fn support_radius(&self) -> usize {
        let max_rate = self.dilation_rates.iter().copied().max().unwrap_or(1);
        let max_sigma = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
        let first = default_radius(max_sigma(&self.sigmas_first))
            + default_radius(self.smooth_sigma_first) * max_rate;
        if self.second_order {
            let second = default_radius(max_sigma(&self.sigmas_second))
                + default_radius(self.smooth_sigma_second) * max_rate;
            first.max(second)
        } else {
            first
        }
    }
}

/// One response plane per orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Plane>,
}

impl ChannelStack {
    fn from_planes(channels: Vec<Plane>) -> Self {
        ChannelStack {
            width: channels[0].width(),
            height: channels[0].height(),
            channels,
        }
    }
}

/// Sum over scales of the rectified first-order steered responses.
pub fn first_order_channels(image: &Plane, params: &SfocParams) -> Result<ChannelStack> {
    params.validate()?;
    let bases = params
        .sigmas_first
        .iter()
        .map(|&s| g1_basis(s))
        .collect::<Result<Vec<_>>>()?;
    let responses: Vec<(Plane, Plane)> = bases
        .par_iter()
        .map(|b| (filter_unchecked(image, &b.kx), filter_unchecked(image, &b.ky)))
        .collect();
    let planes = params
        .angles()
        .par_iter()
        .map(|&theta| {
            let (c, s) = unit_direction(theta);
            let mut acc = Plane::zeros(image.width(), image.height());
            for (rx, ry) in &responses {
                for ((a, x), y) in acc.data_mut().iter_mut().zip(rx.data()).zip(ry.data()) {
                    *a += (c * x + s * y).abs();
                }
            }
            acc
        })
        .collect();
    Ok(ChannelStack::from_planes(planes))
}

/// Rectified second directional derivative responses.
pub fn second_order_channels(image: &Plane, params: &SfocParams) -> Result<ChannelStack> {
    params.validate()?;
    let bases = params
        .sigmas_second
        .iter()
        .map(|&s| g2_basis(s))
        .collect::<Result<Vec<_>>>()?;
    let responses: Vec<[Plane; 3]> = bases
        .par_iter()
        .map(|b| {
            [
                filter_unchecked(image, &b.kxx),
                filter_unchecked(image, &b.kyy),
                filter_unchecked(image, &b.kxy),
            ]
        })
        .collect();
    let planes = params
        .angles()
        .par_iter()
        .map(|&theta| {
            let (c, s) = unit_direction(theta);
            let (wxx, wyy, wxy) = (c * c, s * s, 2.0 * s * c);
            let mut acc = Plane::zeros(image.width(), image.height());
            for [rxx, ryy, rxy] in &responses {
                for (i, a) in acc.data_mut().iter_mut().enumerate() {
                    *a += (wxx * rxx.data()[i] + wyy * ryy.data()[i] + wxy * rxy.data()[i]).abs();
                }
            }
            acc
        })
        .collect();
    Ok(ChannelStack::from_planes(planes))
}

/// Averages each plane over a bank of dilated Gaussian smoothings.
pub fn dilated_smooth(stack: &ChannelStack, smooth_sigma: f64, rates: &[usize]) -> Result<ChannelStack> {
    if rates.is_empty() {
        return Err(Error::InvalidParameter("empty dilation rate set".into()));
    }
    let radius = default_radius(smooth_sigma);
    let kernels = rates
        .iter()
        .map(|&r| dilated_gaussian(smooth_sigma, radius, r))
        .collect::<Result<Vec<_>>>()?;
    let inv = 1.0 / rates.len() as f64;
    let planes = stack
        .channels
        .par_iter()
        .map(|plane| {
            let mut acc = Plane::zeros(plane.width(), plane.height());
            for k in &kernels {
                let smoothed = filter_unchecked(plane, k);
                for (a, v) in acc.data_mut().iter_mut().zip(smoothed.data()) {
                    *a += v;
                }
            }
            if kernels.len() > 1 {
                acc.data_mut().iter_mut().for_each(|a| *a *= inv);
            }
            acc
        })
        .collect();
    Ok(ChannelStack::from_planes(planes))
}

/// Per-pixel L2 normalization of the orientation vector.
pub fn normalize_group(stack: &ChannelStack, epsilon: f64) -> ChannelStack {
    let n = stack.width * stack.height;
    let mut out = stack.clone();
    for i in 0..n {
        let norm = stack
            .channels
            .iter()
            .map(|p| p.data()[i] * p.data()[i])
            .sum::<f64>()
            .sqrt();
        for p in out.channels.iter_mut() {
            let v = &mut p.data_mut()[i];
            *v = if norm > epsilon { *v / norm } else { 0.0 };
        }
    }
    out
}

/// `z` stacked feature planes stored plane-major as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    width: usize,
    height: usize,
    z: usize,
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(width: usize, height: usize, z: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || z == 0 {
            return Err(Error::InvalidParameter("empty feature volume".into()));
        }
        if data.len() != width * height * z {
            return Err(Error::InvalidParameter(format!(
                "volume {width}x{height}x{z} needs {} values, got {}",
                width * height * z,
                data.len()
            )));
        }
        Ok(FeatureVolume {
            width,
            height,
            z,
            data,
        })
    }

    /// Single-channel volume holding raw intensities.
    pub fn from_raster(raster: &Raster) -> Self {
        FeatureVolume {
            width: raster.width(),
            height: raster.height(),
            z: 1,
            data: raster.data().to_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    /// Per-pixel feature vector.
    pub fn vector(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.z).map(|c| self.get(x, y, c)).collect()
    }

    /// Sub-volume `w x h` with top-left corner `(x0, y0)`, all channels.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<FeatureVolume> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::OutOfBounds(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.z);
        for c in 0..self.z {
            let plane = self.plane(c);
            for y in y0..y0 + h {
                data.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        Ok(FeatureVolume {
            width: w,
            height: h,
            z: self.z,
            data,
        })
    }

    /// Volume restricted to the channels in `range`.
    pub fn channels(&self, range: std::ops::Range<usize>) -> Result<FeatureVolume> {
        if range.start >= range.end || range.end > self.z {
            return Err(Error::OutOfBounds(format!(
                "channel range {range:?} of {}",
                self.z
            )));
        }
        let n = self.width * self.height;
        Ok(FeatureVolume {
            width: self.width,
            height: self.height,
            z: range.len(),
            data: self.data[range.start * n..range.end * n].to_vec(),
        })
    }

    fn from_stacks(groups: &[ChannelStack]) -> Self {
        let (width, height) = (groups[0].width, groups[0].height);
        let z = groups.iter().map(|g| g.channels.len()).sum();
        let mut data = Vec::with_capacity(width * height * z);
        for g in groups {
            for p in &g.channels {
                data.extend(p.data().iter().map(|&v| v.clamp(0.0, 1.0) as f32));
            }
        }
        FeatureVolume {
            width,
            height,
            z,
            data,
        }
    }
}

/// Builds the stacked descriptor volume of an image.
pub fn build_sfoc(image: &Raster, params: &SfocParams) -> Result<FeatureVolume> {
    build_sfoc_plane(&Plane::from_raster(image), params)
}

pub fn build_sfoc_plane(image: &Plane, params: &SfocParams) -> Result<FeatureVolume> {
    params.validate()?;
    let first = first_order_channels(image, params)?;
    let first = dilated_smooth(&first, params.smooth_sigma_first, &params.dilation_rates)?;
    let mut groups = vec![normalize_group(&first, params.epsilon)];
    if params.second_order {
        let second = second_order_channels(image, params)?;
        let second = dilated_smooth(&second, params.smooth_sigma_second, &params.dilation_rates)?;
        groups.push(normalize_group(&second, params.epsilon));
    }
    Ok(FeatureVolume::from_stacks(&groups))
}

const VOLUME_MAGIC: &str = "SFOC 1";

/// Dump format: `SFOC 1\n`, `width height z\n`, then the planes as
/// little-endian `f32`, plane-major.
pub fn encode_volume(volume: &FeatureVolume) -> Vec<u8> {
    let mut out = format!(
        "{VOLUME_MAGIC}\n{} {} {}\n",
        volume.width, volume.height, volume.z
    )
    .into_bytes();
    out.reserve(volume.data.len() * 4);
    for v in &volume.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<FeatureVolume> {
    const FMT: &str = "feature volume";
    if !bytes.starts_with(VOLUME_MAGIC.as_bytes()) {
        return Err(Error::format(FMT, "missing SFOC magic"));
    }
    let text_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(1)
        .map(|(i, _)| i)
        .ok_or_else(|| Error::format(FMT, "truncated header"))?;
    let header = std::str::from_utf8(&bytes[VOLUME_MAGIC.len()..text_end])
        .map_err(|_| Error::format(FMT, "non-ASCII header"))?;
    let dims = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::format(FMT, format!("bad dimension {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let [width, height, z] = dims[..] else {
        return Err(Error::format(FMT, "expected width height z"));
    };
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(z))
        .ok_or_else(|| Error::format(FMT, "dimension overflow"))?;
    let data = read_f32_le(bytes, text_end + 1, count, FMT)?;
    FeatureVolume::new(width, height, z, data)
}

pub fn save_volume(volume: &FeatureVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(volume)).map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<FeatureVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}
