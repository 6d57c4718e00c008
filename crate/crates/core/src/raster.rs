//! Grayscale rasters, world-file geo-referencing and the on-disk image formats.
//!
//! Intensities are held normalized to `[0, 1]` regardless of the source bit
//! depth. Supported files:
//!
//! * PGM `P2` (ASCII) and `P5` (binary), maxval up to 65535. 16-bit samples
//!   are big-endian as the netpbm format prescribes.
//! * Float raster: an ASCII line `FRAS 1`, a line `width height`, then
//!   `width * height` little-endian `f32` values in row-major order.
//! * World file: six lines holding `a, d, b, e, c, f` of the pixel-to-world
//!   affine `X = a*x + b*y + c`, `Y = d*x + e*y + f`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Sample representation of the file a raster was read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    Sixteen,
    #[default]
    Float,
}

/// On-disk encoding used by [`save_raster`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterFormat {
    Pgm8,
    Pgm16,
    Float,
}

impl RasterFormat {
    /// Picks a format from a file extension: `.pgm` is 8-bit, `.fras`/`.raw`
    /// is float.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(RasterFormat::Pgm8),
            "fras" | "raw" | "flt" => Some(RasterFormat::Float),
            _ => None,
        }
    }
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
    bit_depth_origin: BitDepth,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "raster must be non-empty, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidParameter("raster dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "raster {width}x{height} needs {expected} samples, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
            bit_depth_origin: BitDepth::Float,
        })
    }

    /// Builds a raster from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "raster must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 });
            }
        }
        Raster {
            width,
            height,
            data,
            bit_depth_origin: BitDepth::Float,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::from_fn(width, height, |_, _| value as f64)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bit_depth_origin(&self) -> BitDepth {
        self.bit_depth_origin
    }

    pub fn with_bit_depth_origin(mut self, depth: BitDepth) -> Self {
        self.bit_depth_origin = depth;
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Applies `f` to every pixel, clamping the result back into `[0, 1]`.
    pub fn map(&self, mut f: impl FnMut(f32) -> f64) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| f(self.get(x, y)))
            .with_bit_depth_origin(self.bit_depth_origin)
    }

    /// Copies the `w x h` block whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::OutOfBounds(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Raster {
            width: w,
            height: h,
            data,
            bit_depth_origin: self.bit_depth_origin,
        })
    }

    /// Intensity as `f64` at every pixel, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Result of a bilinear lookup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub in_bounds: bool,
}

/// Fill value returned for coordinates outside the image.
pub const FILL_VALUE: f64 = 0.0;

/// Bilinear interpolation of the four pixels surrounding `(x, y)`.
///
/// Coordinates outside `[0, w-1] x [0, h-1]` yield [`FILL_VALUE`] with
/// `in_bounds == false`.
pub fn bilinear_sample(raster: &Raster, x: f64, y: f64) -> Sample {
    let max_x = (raster.width - 1) as f64;
    let max_y = (raster.height - 1) as f64;
    if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
        return Sample {
            value: FILL_VALUE,
            in_bounds: false,
        };
    }
    let x0 = (x.floor() as usize).min(raster.width - 1);
    let y0 = (y.floor() as usize).min(raster.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(raster.width - 1);
    let y1 = (y0 + 1).min(raster.height - 1);
    let p00 = raster.get(x0, y0) as f64;
    let value = if fx == 0.0 && fy == 0.0 {
        p00
    } else {
        let p10 = raster.get(x1, y0) as f64;
        let p01 = raster.get(x0, y1) as f64;
        let p11 = raster.get(x1, y1) as f64;
        let top = p00 + fx * (p10 - p00);
        let bottom = p01 + fx * (p11 - p01);
        top + fy * (bottom - top)
    };
    Sample {
        value,
        in_bounds: true,
    }
}

/// A sub-image together with its position in the parent image.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub raster: Raster,
    pub origin_x: usize,
    pub origin_y: usize,
}

/// Extracts the `(2*half_w+1) x (2*half_h+1)` patch centered on
/// `(center_x, center_y)`. Fails if any part would fall outside the image.
pub fn extract_patch(
    raster: &Raster,
    center_x: usize,
    center_y: usize,
    half_w: usize,
    half_h: usize,
) -> Result<Patch> {
    if center_x < half_w
        || center_y < half_h
        || center_x + half_w >= raster.width
        || center_y + half_h >= raster.height
    {
        return Err(Error::OutOfBounds(format!(
            "patch of half size {half_w}x{half_h} at ({center_x},{center_y}) exceeds {}x{}",
            raster.width, raster.height
        )));
    }
    let origin_x = center_x - half_w;
    let origin_y = center_y - half_h;
    Ok(Patch {
        raster: raster.crop(origin_x, origin_y, 2 * half_w + 1, 2 * half_h + 1)?,
        origin_x,
        origin_y,
    })
}

/// Six-parameter pixel-to-world affine carried by a world file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoRef {
    a: f64,
    d: f64,
    b: f64,
    e: f64,
    c: f64,
    f: f64,
}

impl GeoRef {
    /// Arguments follow the world-file line order.
    pub fn new(a: f64, d: f64, b: f64, e: f64, c: f64, f: f64) -> Result<Self> {
        let params = [a, d, b, e, c, f];
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite geo-reference".into()));
        }
        let det = a * e - b * d;
        let scale = (a.abs() + b.abs()).max(d.abs() + e.abs());
        if det == 0.0 || det.abs() <= 1e-14 * scale * scale {
            return Err(Error::InvalidParameter(
                "geo-reference linear part is singular".into(),
            ));
        }
        Ok(GeoRef { a, d, b, e, c, f })
    }

    pub fn identity() -> Self {
        GeoRef {
            a: 1.0,
            d: 0.0,
            b: 0.0,
            e: 1.0,
            c: 0.0,
            f: 0.0,
        }
    }

    /// North-up geo-reference with square pixels of `pixel_size` world units.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        GeoRef::new(pixel_size, 0.0, 0.0, -pixel_size, origin_x, origin_y)
    }

    /// Parameters in world-file order `a, d, b, e, c, f`.
    pub fn params(&self) -> [f64; 6] {
        [self.a, self.d, self.b, self.e, self.c, self.f]
    }

    /// Mean ground size of a pixel edge.
    pub fn pixel_size(&self) -> f64 {
        (self.a * self.e - self.b * self.d).abs().sqrt()
    }

    pub fn pixel_to_geo(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.c,
            self.d * x + self.e * y + self.f,
        )
    }

    pub fn geo_to_pixel(&self, wx: f64, wy: f64) -> (f64, f64) {
        let det = self.a * self.e - self.b * self.d;
        let dx = wx - self.c;
        let dy = wy - self.f;
        ((self.e * dx - self.b * dy) / det, (self.a * dy - self.d * dx) / det)
    }

    /// Geo-reference of the same ground grid resampled by `factor`
    /// (`factor > 1` means coarser pixels).
    pub fn rescaled(&self, factor: f64) -> Result<GeoRef> {
        GeoRef::new(
            self.a * factor,
            self.d * factor,
            self.b * factor,
            self.e * factor,
            self.c,
            self.f,
        )
    }
}

pub fn load_world_file(path: impl AsRef<Path>) -> Result<GeoRef> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_world_file(&text)
}

pub fn parse_world_file(text: &str) -> Result<GeoRef> {
    let values = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format("world file", format!("not a number: {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != 6 {
        return Err(Error::format(
            "world file",
            format!("expected 6 numbers, found {}", values.len()),
        ));
    }
    GeoRef::new(values[0], values[1], values[2], values[3], values[4], values[5])
}

pub fn save_world_file(geo: &GeoRef, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = geo.params().iter().map(|v| format!("{v:.17e}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const FLOAT_MAGIC: &str = "FRAS 1";

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes)
}

/// Decodes PGM or float-raster bytes, dispatching on the magic number.
pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(FLOAT_MAGIC.as_bytes()) {
        decode_float(bytes)
    } else {
        Err(Error::format("raster", "unrecognized magic number"))
    }
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>, format: RasterFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_raster(raster, format);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_raster(raster: &Raster, format: RasterFormat) -> Vec<u8> {
    match format {
        RasterFormat::Pgm8 | RasterFormat::Pgm16 => {
            let maxval: u32 = if format == RasterFormat::Pgm8 { 255 } else { 65535 };
            let mut out =
                format!("P5\n{} {}\n{}\n", raster.width, raster.height, maxval).into_bytes();
            for &v in &raster.data {
                let q = (v as f64 * maxval as f64).round() as u32;
                if maxval == 255 {
                    out.push(q as u8);
                } else {
                    out.extend_from_slice(&(q as u16).to_be_bytes());
                }
            }
            out
        }
        RasterFormat::Float => encode_float_grid(raster.width, raster.height, &raster.data),
    }
}

/// Float-raster encoding of an arbitrary grid; values are not clamped.
pub fn encode_float_grid(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    let mut out = format!("{FLOAT_MAGIC}\n{width} {height}\n").into_bytes();
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        HeaderReader { bytes, pos }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Option<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            std::str::from_utf8(&self.bytes[start..self.pos]).ok()
        }
    }

    fn number(&mut self, format: &'static str, what: &str) -> Result<usize> {
        let tok = self
            .token()
            .ok_or_else(|| Error::format(format, format!("missing {what}")))?;
        tok.parse::<usize>()
            .map_err(|_| Error::format(format, format!("bad {what}: {tok:?}")))
    }
}

fn checked_area(format: &'static str, width: usize, height: usize) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(Error::format(format, "zero dimension"));
    }
    width
        .checked_mul(height)
        .filter(|n| *n <= (1usize << 34))
        .ok_or_else(|| Error::format(format, "dimension overflow"))
}

fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    const FMT: &str = "PGM";
    let binary = bytes[1] == b'5';
    let mut reader = HeaderReader::new(bytes, 2);
    let width = reader.number(FMT, "width")?;
    let height = reader.number(FMT, "height")?;
    let maxval = reader.number(FMT, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(FMT, format!("maxval {maxval} out of range")));
    }
    let count = checked_area(FMT, width, height)?;
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the samples
        let start = reader.pos + 1;
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let body = bytes
            .get(start..)
            .filter(|b| b.len() >= count * bytes_per)
            .ok_or_else(|| Error::format(FMT, "truncated sample data"))?;
        for i in 0..count {
            let raw = if bytes_per == 1 {
                body[i] as usize
            } else {
                u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as usize
            };
            if raw > maxval {
                return Err(Error::format(FMT, format!("sample {raw} exceeds maxval")));
            }
            data.push((raw as f64 / scale) as f32);
        }
    } else {
        for _ in 0..count {
            let raw = reader.number(FMT, "sample")?;
            if raw > maxval {
                return Err(Error::format(FMT, format!("sample {raw} exceeds maxval")));
            }
            data.push((raw as f64 / scale) as f32);
        }
    }
    let depth = if maxval < 256 {
        BitDepth::Eight
    } else {
        BitDepth::Sixteen
    };
    Ok(Raster::new(width, height, data)?.with_bit_depth_origin(depth))
}

/// Parses the `FRAS 1` header and returns `(width, height, body offset)`.
pub(crate) fn parse_float_header(bytes: &[u8], magic: &'static str) -> Result<(usize, usize, usize)> {
    let mut reader = HeaderReader::new(bytes, magic.len());
    let width = reader.number("float raster", "width")?;
    let height = reader.number("float raster", "height")?;
    Ok((width, height, reader.pos + 1))
}

/// Reads `count` little-endian `f32`s starting at `offset`.
pub(crate) fn read_f32_le(bytes: &[u8], offset: usize, count: usize, format: &'static str) -> Result<Vec<f32>> {
    let body = bytes
        .get(offset..)
        .filter(|b| b.len() >= count * 4)
        .ok_or_else(|| Error::format(format, "truncated sample data"))?;
    Ok(body[..count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn decode_float(bytes: &[u8]) -> Result<Raster> {
    const FMT: &str = "float raster";
    let (width, height, offset) = parse_float_header(bytes, FLOAT_MAGIC)?;
    let count = checked_area(FMT, width, height)?;
    let values = read_f32_le(bytes, offset, count, FMT)?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::format(FMT, "NaN sample"));
    }
    let data = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(Raster::new(width, height, data)?.with_bit_depth_origin(BitDepth::Float))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn p5_extremes_normalize() {
        let mut bytes = b"P5\n4 3\n255\n".to_vec();
        bytes.extend(std::iter::repeat(255u8).take(12));
        let r = decode_raster(&bytes).unwrap();
        assert!(r.data().iter().all(|&v| v == 1.0));
        assert_eq!(r.bit_depth_origin(), BitDepth::Eight);

        let mut bytes = b"P5\n4 3\n255\n".to_vec();
        bytes.extend(std::iter::repeat(0u8).take(12));
        let r = decode_raster(&bytes).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn p2_hand_normalized() {
        let r = decode_raster(b"P2\n# comment\n3 2\n5\n0 1 2\n3 4 5\n").unwrap();
        let expected = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for (got, want) in r.data().iter().zip(expected) {
            assert!((*got as f64 - want).abs() < 1e-7);
        }
    }

    #[test]
    fn p5_sixteen_bit_is_big_endian() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x80, 0x00]);
        let r = decode_raster(&bytes).unwrap();
        assert_eq!(r.get(0, 0), 1.0);
        assert!((r.get(1, 0) as f64 - 32768.0 / 65535.0).abs() < 1e-7);
        assert_eq!(r.bit_depth_origin(), BitDepth::Sixteen);
    }

    #[test]
    fn malformed_headers_are_rejected() {
        assert!(decode_raster(b"P5\n4\n").is_err());
        assert!(decode_raster(b"P5\n4 3\n255\n\x00\x00").is_err());
        assert!(decode_raster(b"P2\n2 1\n0\n0 0\n").is_err());
        assert!(decode_raster(b"P2\n99999999999 99999999999\n255\n").is_err());
        assert!(decode_raster(b"GIF89a").is_err());
        assert!(decode_raster(b"FRAS 1\n2 2\n\x00\x00").is_err());
    }

    #[test]
    fn float_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = Raster::from_fn(9, 5, |_, _| rng.gen::<f64>());
        let back = decode_raster(&encode_raster(&r, RasterFormat::Float)).unwrap();
        assert_eq!(back.data(), r.data());
        let one = Raster::filled(1, 1, 0.25);
        let back = decode_raster(&encode_raster(&one, RasterFormat::Float)).unwrap();
        assert_eq!(back.data(), one.data());
    }

    #[test]
    fn pgm_round_trip_within_one_step() {
        let half = Raster::filled(6, 4, 0.5);
        let back = decode_raster(&encode_raster(&half, RasterFormat::Pgm8)).unwrap();
        for &v in back.data() {
            assert!((v as f64 - 128.0 / 255.0).abs() <= 1.0 / 255.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Raster::from_fn(7, 7, |_, _| rng.gen::<f64>());
        let back = decode_raster(&encode_raster(&r, RasterFormat::Pgm16)).unwrap();
        for (a, b) in r.data().iter().zip(back.data()) {
            assert!((a - b).abs() as f64 <= 1.0 / 65535.0);
        }
    }

    #[test]
    fn bilinear_lattice_and_midpoint() {
        let r = Raster::from_fn(8, 8, |x, y| (x * 8 + y) as f64 / 64.0);
        let s = bilinear_sample(&r, 3.0, 5.0);
        assert!(s.in_bounds);
        assert_eq!(s.value, r.get(3, 5) as f64);

        let quad = Raster::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(bilinear_sample(&quad, 0.5, 0.5).value, 0.5);
    }

    #[test]
    fn bilinear_is_exact_on_ramps() {
        let w = 11;
        let r = Raster::from_fn(w, 4, |x, _| x as f64 / (w - 1) as f64);
        let s = bilinear_sample(&r, 2.5, 1.0);
        assert!((s.value - 2.5 / (w - 1) as f64).abs() < 1e-7);
    }

    #[test]
    fn bilinear_out_of_bounds_flags() {
        let r = Raster::filled(4, 4, 0.7);
        for (x, y) in [(-0.1, 1.0), (3.01, 1.0), (1.0, -2.0), (1.0, 3.5), (f64::NAN, 0.0)] {
            let s = bilinear_sample(&r, x, y);
            assert!(!s.in_bounds);
            assert_eq!(s.value, FILL_VALUE);
        }
        let edge = bilinear_sample(&r, 3.0, 3.0);
        assert!(edge.in_bounds);
        assert!((edge.value - 0.7).abs() < 1e-7);
    }

    #[test]
    fn patch_extraction() {
        let r = Raster::from_fn(9, 7, |x, y| (x + 10 * y) as f64 / 100.0);
        let p = extract_patch(&r, 4, 3, 1, 1).unwrap();
        assert_eq!((p.origin_x, p.origin_y), (3, 2));
        assert_eq!((p.raster.width(), p.raster.height()), (3, 3));
        assert!(extract_patch(&r, 0, 0, 1, 0).is_err());
        assert!(extract_patch(&r, 8, 3, 1, 1).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let hw = rng.gen_range(0..4);
            let hh = rng.gen_range(0..3);
            let cx = rng.gen_range(hw..9 - hw);
            let cy = rng.gen_range(hh..7 - hh);
            let p = extract_patch(&r, cx, cy, hw, hh).unwrap();
            for j in 0..p.raster.height() {
                for i in 0..p.raster.width() {
                    assert_eq!(p.raster.get(i, j), r.get(p.origin_x + i, p.origin_y + j));
                }
            }
        }
    }

    #[test]
    fn georef_conversions() {
        let id = GeoRef::identity();
        assert_eq!(id.pixel_to_geo(10.0, 20.0), (10.0, 20.0));
        let off = GeoRef::new(1.0, 0.0, 0.0, 1.0, 100.0, 200.0).unwrap();
        assert_eq!(off.geo_to_pixel(100.0, 200.0), (0.0, 0.0));
        assert!(GeoRef::new(1.0, 2.0, 2.0, 4.0, 0.0, 0.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let g = GeoRef::new(
                rng.gen_range(0.5..30.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                -rng.gen_range(0.5..30.0),
                rng.gen_range(-1e5..1e5),
                rng.gen_range(-1e5..1e5),
            )
            .unwrap();
            let (x, y) = (rng.gen_range(-100.0..5000.0), rng.gen_range(-100.0..5000.0));
            let (wx, wy) = g.pixel_to_geo(x, y);
            let (px, py) = g.geo_to_pixel(wx, wy);
            let (bx, by) = g.pixel_to_geo(px, py);
            assert!((bx - wx).abs() < 1e-9 && (by - wy).abs() < 1e-9);
        }
    }

    #[test]
    fn world_file_round_trip() {
        let g = GeoRef::new(0.5, 0.01, -0.02, -0.5, 4.5e5, 3.2e6).unwrap();
        let text: String = g.params().iter().map(|v| format!("{v:.17e}\n")).collect();
        assert_eq!(parse_world_file(&text).unwrap(), g);
        assert!(parse_world_file("1\n0\n0\n1\n0\n").is_err());
    }
}
