//! Gaussian, steerable derivative and dilated smoothing kernels, plus 2-D
//! filtering with edge replication.
//!
//! Filtering is written in correlation form: the response at `(x, y)` is
//! `sum k(i, j) * I(x + i, y + j)` over tap offsets `(i, j)` relative to the
//! kernel center. With this convention the first-order basis applied to the
//! ramp `I(x, y) = x` yields `-1`, the sign carried by the negative prefactor
//! of the Gaussian derivative.
//!
//! Derivative kernels are normalized so that they are exact on low-order
//! polynomials: `kx` maps `I = x` to `-1`, `kxx` maps `I = x^2 / 2` to `1`
//! and `kxy` maps `I = x*y` to `1`.

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Dense `f64` image used for all intermediate filter responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "plane {width}x{height} with {} samples",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn from_raster(raster: &Raster) -> Self {
        Plane {
            width: raster.width(),
            height: raster.height(),
            data: raster.to_f64(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }
}

/// Square filter kernel with an odd side and its anchor at the center.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    radius: usize,
    taps: Vec<f64>,
    /// Optional `(x, y)` factors with `taps(i, j) = fx(i) * fy(j)`.
    factors: Option<(Vec<f64>, Vec<f64>)>,
    zero_sum: bool,
}

impl Kernel {
    /// Builds a kernel from a `(2*radius+1)^2` row-major tap grid.
    pub fn from_taps(radius: usize, taps: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if taps.len() != side * side {
            return Err(Error::InvalidParameter(format!(
                "kernel of radius {radius} needs {} taps, got {}",
                side * side,
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("non-finite kernel tap".into()));
        }
        Ok(Kernel {
            radius,
            taps,
            factors: None,
            zero_sum: false,
        })
    }

    fn separable(fx: Vec<f64>, fy: Vec<f64>, zero_sum: bool) -> Self {
        debug_assert_eq!(fx.len(), fy.len());
        let side = fx.len();
        let mut taps = Vec::with_capacity(side * side);
        for wy in &fy {
            for wx in &fx {
                taps.push(wx * wy);
            }
        }
        Kernel {
            radius: side / 2,
            taps,
            factors: Some((fx, fy)),
            zero_sum,
        }
    }

    /// Identity filter.
    pub fn impulse() -> Self {
        Kernel::separable(vec![1.0], vec![1.0], false)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at offset `(dx, dy)` from the anchor.
    pub fn tap(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        assert!(dx.abs() <= r && dy.abs() <= r, "tap offset outside kernel");
        self.taps[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    pub fn tap_sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// True for derivative kernels; their responses are evaluated on
    /// differences from the center pixel.
    pub fn is_zero_sum(&self) -> bool {
        self.zero_sum
    }

    pub fn is_separable(&self) -> bool {
        self.factors.is_some()
    }
}

/// Default truncation radius `ceil(3 sigma)`.
pub fn default_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "Gaussian STD must be positive, got {sigma}"
        )))
    }
}

/// Unit-sum sampled 1-D Gaussian on `[-radius, radius]`.
fn gaussian_1d(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|u| (-((u * u) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// First-derivative factor scaled so that `sum a(u) * u = -1`.
fn first_derivative_1d(sigma: f64, radius: usize) -> Vec<f64> {
    let g = gaussian_1d(sigma, radius);
    let r = radius as isize;
    let second_moment: f64 = (-r..=r).zip(&g).map(|(u, w)| (u * u) as f64 * w).sum();
    (-r..=r)
        .zip(&g)
        .map(|(u, w)| -(u as f64) * w / second_moment)
        .collect()
}

/// Second-derivative factor, re-centered to zero sum and scaled so that
/// `sum b(u) * u^2 / 2 = 1`.
fn second_derivative_1d(sigma: f64, radius: usize) -> Vec<f64> {
    let g = gaussian_1d(sigma, radius);
    let r = radius as isize;
    let s2 = sigma * sigma;
    let mut b: Vec<f64> = (-r..=r)
        .zip(&g)
        .map(|(u, w)| ((u * u) as f64 / s2 - 1.0) * w)
        .collect();
    let sum: f64 = b.iter().sum();
    for (v, w) in b.iter_mut().zip(&g) {
        *v -= sum * w;
    }
    let half_moment: f64 = (-r..=r).zip(&b).map(|(u, v)| (u * u) as f64 * v / 2.0).sum();
    b.into_iter().map(|v| v / half_moment).collect()
}

/// Sampled, renormalized isotropic Gaussian.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Kernel> {
    check_sigma(sigma)?;
    if radius < default_radius(sigma) {
        return Err(Error::InvalidParameter(format!(
            "radius {radius} below ceil(3*sigma) for sigma {sigma}"
        )));
    }
    let g = gaussian_1d(sigma, radius);
    Ok(Kernel::separable(g.clone(), g, false))
}

/// First-order steerable basis (x and y Gaussian derivatives).
#[derive(Clone, Debug, PartialEq)]
pub struct SteerableBasisG1 {
    pub sigma: f64,
    pub kx: Kernel,
    pub ky: Kernel,
}

pub fn g1_basis(sigma: f64) -> Result<SteerableBasisG1> {
    check_sigma(sigma)?;
    let radius = default_radius(sigma);
    let g = gaussian_1d(sigma, radius);
    let a = first_derivative_1d(sigma, radius);
    Ok(SteerableBasisG1 {
        sigma,
        kx: Kernel::separable(a.clone(), g.clone(), true),
        ky: Kernel::separable(g, a, true),
    })
}

/// Second-order steerable basis `{Gxx, Gyy, Gxy}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SteerableBasisG2 {
    pub sigma: f64,
    pub kxx: Kernel,
    pub kyy: Kernel,
    pub kxy: Kernel,
}

pub fn g2_basis(sigma: f64) -> Result<SteerableBasisG2> {
    check_sigma(sigma)?;
    let radius = default_radius(sigma);
    let g = gaussian_1d(sigma, radius);
    let b = second_derivative_1d(sigma, radius);
    // kxy = d/dx d/dy; the first-derivative factor has sum a(u) u = -1, so its
    // square gives sum kxy(u, v) u v = 1.
    let a = first_derivative_1d(sigma, radius);
    Ok(SteerableBasisG2 {
        sigma,
        kxx: Kernel::separable(b.clone(), g.clone(), true),
        kyy: Kernel::separable(g, b, true),
        kxy: Kernel::separable(a.clone(), a, true),
    })
}

/// `(cos theta, sin theta)` with exact values at multiples of a right angle.
pub fn unit_direction(theta: f64) -> (f64, f64) {
    let snap = |v: f64| {
        if v.abs() < 1e-15 {
            0.0
        } else if (v.abs() - 1.0).abs() < 1e-15 {
            v.signum()
        } else {
            v
        }
    };
    (snap(theta.cos()), snap(theta.sin()))
}

fn combine(parts: &[(f64, &Kernel)]) -> Kernel {
    let radius = parts[0].1.radius;
    let mut taps = vec![0.0; parts[0].1.taps.len()];
    for (w, k) in parts {
        debug_assert_eq!(k.radius, radius);
        if *w == 0.0 {
            continue;
        }
        for (t, v) in taps.iter_mut().zip(&k.taps) {
            *t += w * v;
        }
    }
    Kernel {
        radius,
        taps,
        factors: None,
        zero_sum: parts.iter().all(|(_, k)| k.zero_sum),
    }
}

/// First-order kernel steered to `theta`: `cos * kx + sin * ky`.
pub fn steer_g1(basis: &SteerableBasisG1, theta: f64) -> Kernel {
    let (c, s) = unit_direction(theta);
    if s == 0.0 && c == 1.0 {
        return basis.kx.clone();
    }
    if c == 0.0 && s == 1.0 {
        return basis.ky.clone();
    }
    combine(&[(c, &basis.kx), (s, &basis.ky)])
}

/// Second directional derivative kernel at `theta`:
/// `cos^2 * kxx + sin^2 * kyy + 2 sin cos * kxy`.
pub fn steer_g2(basis: &SteerableBasisG2, theta: f64) -> Kernel {
    let (c, s) = unit_direction(theta);
    if s == 0.0 {
        return basis.kxx.clone();
    }
    if c == 0.0 {
        return basis.kyy.clone();
    }
    combine(&[(c * c, &basis.kxx), (s * s, &basis.kyy), (2.0 * s * c, &basis.kxy)])
}

/// Gaussian whose taps are spread onto a lattice of spacing `rate`, with
/// zeros in the holes.
pub fn dilated_gaussian(sigma: f64, radius: usize, rate: usize) -> Result<Kernel> {
    check_sigma(sigma)?;
    if rate == 0 {
        return Err(Error::InvalidParameter("dilation rate must be >= 1".into()));
    }
    let g = gaussian_1d(sigma, radius);
    let mut spread = vec![0.0; 2 * radius * rate + 1];
    for (i, w) in g.into_iter().enumerate() {
        spread[i * rate] = w;
    }
    Ok(Kernel::separable(spread.clone(), spread, false))
}

/// Direct 2-D filtering with edge replication; the reference implementation.
pub fn convolve2d(image: &Plane, kernel: &Kernel) -> Result<Plane> {
    check_fits(image, kernel)?;
    Ok(direct(image, kernel))
}

/// Same result as [`convolve2d`] but uses the separable factorization when
/// the kernel has one.
pub fn convolve2d_fast(image: &Plane, kernel: &Kernel) -> Result<Plane> {
    check_fits(image, kernel)?;
    Ok(filter_unchecked(image, kernel))
}

fn check_fits(image: &Plane, kernel: &Kernel) -> Result<()> {
    if kernel.side() > image.width || kernel.side() > image.height {
        return Err(Error::InvalidParameter(format!(
            "kernel side {} exceeds image {}x{}",
            kernel.side(),
            image.width,
            image.height
        )));
    }
    Ok(())
}

/// Filtering without the size check; replication makes any size well defined.
pub(crate) fn filter_unchecked(image: &Plane, kernel: &Kernel) -> Plane {
    match &kernel.factors {
        Some((fx, fy)) => {
            let zx = kernel.zero_sum && is_zero_sum(fx);
            let zy = kernel.zero_sum && is_zero_sum(fy);
            // a zero-sum factor goes first so that its difference form sees the raw image
            if zy && !zx {
                let tmp = pass_vertical(image, fy, true);
                pass_horizontal(&tmp, fx, false)
            } else {
                let tmp = pass_horizontal(image, fx, zx);
                pass_vertical(&tmp, fy, false)
            }
        }
        None => direct(image, kernel),
    }
}

fn is_zero_sum(factor: &[f64]) -> bool {
    let scale: f64 = factor.iter().map(|v| v.abs()).sum();
    factor.iter().sum::<f64>().abs() <= 1e-12 * scale
}

fn direct(image: &Plane, kernel: &Kernel) -> Plane {
    let r = kernel.radius as isize;
    let side = kernel.side();
    let nonzero: Vec<(isize, isize, f64)> = kernel
        .taps
        .iter()
        .enumerate()
        .filter(|(_, t)| **t != 0.0)
        .map(|(i, t)| ((i % side) as isize - r, (i / side) as isize - r, *t))
        .collect();
    let mut out = Plane::zeros(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            let center = if kernel.zero_sum { image.get(x, y) } else { 0.0 };
            let mut acc = 0.0;
            for &(dx, dy, t) in &nonzero {
                acc += t * (image.get_clamped(x as isize + dx, y as isize + dy) - center);
            }
            out.data[y * image.width + x] = acc;
        }
    }
    out
}

fn taps_with_offsets(factor: &[f64]) -> Vec<(isize, f64)> {
    let r = (factor.len() / 2) as isize;
    factor
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| (i as isize - r, *w))
        .collect()
}

fn pass_horizontal(image: &Plane, factor: &[f64], difference: bool) -> Plane {
    let taps = taps_with_offsets(factor);
    let (w, h) = (image.width, image.height);
    let last = w as isize - 1;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &image.data[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, d) in dst.iter_mut().enumerate() {
            let center = if difference { row[x] } else { 0.0 };
            let mut acc = 0.0;
            for &(off, t) in &taps {
                let xi = (x as isize + off).clamp(0, last) as usize;
                acc += t * (row[xi] - center);
            }
            *d = acc;
        }
    }
    Plane {
        width: w,
        height: h,
        data: out,
    }
}

fn pass_vertical(image: &Plane, factor: &[f64], difference: bool) -> Plane {
    let taps = taps_with_offsets(factor);
    let (w, h) = (image.width, image.height);
    let last = h as isize - 1;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for &(off, t) in &taps {
            let yi = (y as isize + off).clamp(0, last) as usize;
            let src = &image.data[yi * w..(yi + 1) * w];
            if difference {
                let center = &image.data[y * w..(y + 1) * w];
                for ((d, s), c) in dst.iter_mut().zip(src).zip(center) {
                    *d += t * (s - c);
                }
            } else {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += t * s;
                }
            }
        }
    }
    Plane {
        width: w,
        height: h,
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Nested-loop filtering in plain form, independent of the difference
    /// trick and the separable path.
    fn brute(image: &Plane, kernel: &Kernel) -> Plane {
        let r = kernel.radius() as isize;
        Plane::from_fn(image.width(), image.height(), |x, y| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let xi = (x as isize + dx).clamp(0, image.width() as isize - 1) as usize;
                    let yi = (y as isize + dy).clamp(0, image.height() as isize - 1) as usize;
                    acc += kernel.tap(dx, dy) * image.get(xi, yi);
                }
            }
            acc
        })
    }

    fn assert_close(a: &Plane, b: &Plane, rel: f64) {
        let scale = b.data().iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= rel * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn gaussian_contract() {
        for &sigma in &[0.6, 1.0, 1.5, 2.3] {
            let r = default_radius(sigma);
            let k = gaussian_kernel(sigma, r).unwrap();
            assert!((k.tap_sum() - 1.0).abs() < 1e-9);
            let ri = r as isize;
            let center = k.tap(0, 0);
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let v = k.tap(dx, dy);
                    if (dx, dy) != (0, 0) {
                        assert!(v < center);
                    }
                    assert_eq!(v, k.tap(-dx, dy));
                    assert_eq!(v, k.tap(dx, -dy));
                    assert!((v - k.tap(dy, dx)).abs() <= 1e-18);
                }
            }
        }
        assert!(gaussian_kernel(0.0, 3).is_err());
        assert!(gaussian_kernel(-1.0, 3).is_err());
        assert!(gaussian_kernel(2.0, 3).is_err());
    }

    #[test]
    fn g1_symmetries() {
        let b = g1_basis(1.0).unwrap();
        let r = b.kx.radius() as isize;
        assert_eq!(b.kx.tap(0, 0), 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                assert_eq!(b.kx.tap(dx, dy) + b.kx.tap(-dx, dy), 0.0);
                assert_eq!(b.kx.tap(dx, dy), b.kx.tap(dx, -dy));
                assert_eq!(b.ky.tap(dx, dy), b.kx.tap(dy, dx));
            }
        }
        assert!(b.kx.tap_sum().abs() < 1e-10);
        assert!(b.ky.tap_sum().abs() < 1e-10);
        assert!(g1_basis(0.0).is_err());
    }

    #[test]
    fn g1_ramp_response_is_minus_one() {
        let b = g1_basis(0.8).unwrap();
        let ramp = Plane::from_fn(24, 24, |x, _| x as f64);
        let out = convolve2d(&ramp, &b.kx).unwrap();
        let r = b.kx.radius();
        for y in r..24 - r {
            for x in r..24 - r {
                assert!((out.get(x, y) + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn g2_symmetries() {
        let b = g2_basis(1.5).unwrap();
        let r = b.kxx.radius() as isize;
        assert_eq!(b.kxy.tap(0, 0), 0.0);
        assert!(b.kxx.tap_sum().abs() < 1e-9);
        assert!(b.kyy.tap_sum().abs() < 1e-9);
        assert!(b.kxy.tap_sum().abs() < 1e-9);
        for dy in -r..=r {
            for dx in -r..=r {
                assert_eq!(b.kyy.tap(dx, dy), b.kxx.tap(dy, dx));
                assert_eq!(b.kxx.tap(dx, dy), b.kxx.tap(-dx, dy));
                assert_eq!(b.kxx.tap(dx, dy), b.kxx.tap(dx, -dy));
                assert_eq!(b.kxy.tap(dx, dy), -b.kxy.tap(-dx, dy));
                assert_eq!(b.kxy.tap(dx, dy), -b.kxy.tap(dx, -dy));
            }
        }
    }

    #[test]
    fn steering_at_basis_angles_is_exact() {
        let b1 = g1_basis(1.0).unwrap();
        assert_eq!(steer_g1(&b1, 0.0).taps(), b1.kx.taps());
        assert_eq!(steer_g1(&b1, PI / 2.0).taps(), b1.ky.taps());
        let b2 = g2_basis(1.5).unwrap();
        assert_eq!(steer_g2(&b2, 0.0).taps(), b2.kxx.taps());
        assert_eq!(steer_g2(&b2, PI / 2.0).taps(), b2.kyy.taps());
    }

    #[test]
    fn steered_g1_on_rotated_ramp() {
        let b = g1_basis(1.0).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let diag = Plane::from_fn(20, 20, |x, y| (x as f64 + y as f64) * s);
        let ramp = Plane::from_fn(20, 20, |x, _| x as f64);
        let steered = convolve2d(&diag, &steer_g1(&b, PI / 4.0)).unwrap();
        let base = convolve2d(&ramp, &b.kx).unwrap();
        for y in 4..16 {
            for x in 4..16 {
                assert!((steered.get(x, y) - base.get(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn steered_g2_on_rotated_parabola() {
        let b = g2_basis(1.5).unwrap();
        let theta = PI / 6.0;
        let (c, s) = (theta.cos(), theta.sin());
        let n = 40;
        let rotated = Plane::from_fn(n, n, |x, y| {
            let u = (x as f64 - 20.0) * c + (y as f64 - 20.0) * s;
            u * u / 2.0
        });
        let parabola = Plane::from_fn(n, n, |x, _| (x as f64 - 20.0).powi(2) / 2.0);
        let got = convolve2d(&rotated, &steer_g2(&b, theta)).unwrap();
        let want = convolve2d(&parabola, &b.kxx).unwrap();
        for y in 8..32 {
            for x in 8..32 {
                let rel = (got.get(x, y) - want.get(x, y)).abs() / want.get(x, y).abs();
                assert!(rel <= 0.02, "rel error {rel}");
            }
        }
    }

    #[test]
    fn dilated_gaussian_layout() {
        let plain = gaussian_kernel(1.0, 3).unwrap();
        let d1 = dilated_gaussian(1.0, 3, 1).unwrap();
        assert_eq!(plain.taps(), d1.taps());
        for rate in 1..=3usize {
            let k = dilated_gaussian(1.0, 3, rate).unwrap();
            assert!((k.tap_sum() - 1.0).abs() < 1e-12);
            let r = k.radius() as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let on_lattice = dx % rate as isize == 0 && dy % rate as isize == 0;
                    if !on_lattice {
                        assert_eq!(k.tap(dx, dy), 0.0);
                    } else {
                        assert!(k.tap(dx, dy) > 0.0);
                    }
                }
            }
        }
        assert!(dilated_gaussian(1.0, 3, 0).is_err());
    }

    #[test]
    fn convolution_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Plane::from_fn(9, 7, |_, _| rng.gen::<f64>());
        assert_eq!(convolve2d(&img, &Kernel::impulse()).unwrap(), img);
        let flat = Plane::from_fn(12, 12, |_, _| 0.37);
        let b = g2_basis(1.0).unwrap();
        for k in [&b.kxx, &b.kyy, &b.kxy, &steer_g2(&b, 0.4)] {
            let out = convolve2d(&flat, k).unwrap();
            assert!(out.data().iter().all(|v| *v == 0.0));
        }
        let big = gaussian_kernel(3.0, 9).unwrap();
        assert!(convolve2d(&img, &big).is_err());
    }

    #[test]
    fn convolution_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let img = Plane::from_fn(8, 8, |_, _| rng.gen::<f64>());
            let taps: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k = Kernel::from_taps(1, taps).unwrap();
            assert_close(&convolve2d(&img, &k).unwrap(), &brute(&img, &k), 1e-12);
        }
        for n in [12usize, 23, 32] {
            let img = Plane::from_fn(n, n, |_, _| rng.gen::<f64>());
            let b1 = g1_basis(1.0).unwrap();
            let b2 = g2_basis(1.5).unwrap();
            let mut kernels = vec![
                b1.kx.clone(),
                b1.ky.clone(),
                b2.kxx.clone(),
                b2.kyy.clone(),
                b2.kxy.clone(),
                steer_g1(&b1, 0.7),
                steer_g2(&b2, 1.1),
                gaussian_kernel(1.0, 3).unwrap(),
            ];
            if n >= 19 {
                kernels.push(dilated_gaussian(1.0, 3, 3).unwrap());
            }
            for k in &kernels {
                let want = brute(&img, k);
                assert_close(&convolve2d(&img, k).unwrap(), &want, 1e-12);
                assert_close(&convolve2d_fast(&img, k).unwrap(), &want, 1e-12);
            }
        }
    }
}
