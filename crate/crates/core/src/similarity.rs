//! Normalized cross-correlation between feature volumes.
//!
//! [`ncc_naive`] evaluates the mean-centered correlation by direct summation
//! at every offset and serves as the reference. [`fast_ncc`] evaluates the
//! same quantity in factored form,
//!
//! ```text
//!              R_ST - R_S R_T / K
//! ncc = ---------------------------------------      K = m n z
//!       sqrt((R_SS - R_S^2 / K) (R_TT - R_T^2 / K))
//! ```
//!
//! with the cross term `R_ST` from FFTs and the window sums `R_S`, `R_SS`
//! from summed-area tables over the channel-summed search volume.
//!
//! Offsets `(x, y)` index the top-left corner of the template inside the
//! search volume: `x in 0..=M-m`, `y in 0..=N-n` where the template is
//! `m x n` (width x height) and the search volume `M x N`.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::descriptor::FeatureVolume;
use crate::error::{Error, Result};
use crate::raster::{encode_float_grid, Raster};

/// A window is degenerate when its mean squared deviation from its own mean
/// is at or below this value; such offsets are flagged invalid.
pub const DEGENERATE_VARIANCE: f64 = 1e-10;

/// Template-only terms of the factored form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemplateStats {
    pub r_t: f64,
    pub r_tt: f64,
    pub count: f64,
    /// `r_tt - r_t^2 / count`, clamped at zero.
    pub denom_t: f64,
}

pub fn template_stats(template: &FeatureVolume) -> TemplateStats {
    let mut r_t = 0.0;
    let mut r_tt = 0.0;
    for &v in template.data() {
        let v = v as f64;
        r_t += v;
        r_tt += v * v;
    }
    let count = template.data().len() as f64;
    TemplateStats {
        r_t,
        r_tt,
        count,
        denom_t: (r_tt - r_t * r_t / count).max(0.0),
    }
}

/// Exclusive-prefix summed-area table: entry `(x, y)` holds the sum of all
/// source cells with column `< x` and row `< y`, so row 0 and column 0 are
/// zero and the table is `(width + 1) x (height + 1)`.
///
/// Entries are kept as unevaluated `hi + lo` pairs so that small rectangles
/// far from the origin do not lose their digits to cancellation.
#[derive(Clone, Debug, PartialEq)]
pub struct SumTable {
    width: usize,
    height: usize,
    hi: Vec<f64>,
    lo: Vec<f64>,
}

/// Error-free sum: `a + b = s + e` exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn dd_add(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (s, e) = two_sum(a.0, b.0);
    let (s, e2) = two_sum(s, e + a.1 + b.1);
    (s, e2)
}

impl SumTable {
    /// Builds the table from a row-major `width x height` grid using the
    /// running column sum `s(x, y) = s(x, y-1) + g(x, y)` and
    /// `G(x, y) = G(x-1, y) + s(x, y)`.
    pub fn from_grid(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "grid {width}x{height} with {} values",
                values.len()
            )));
        }
        let stride = width + 1;
        let mut hi = vec![0.0; stride * (height + 1)];
        let mut lo = vec![0.0; stride * (height + 1)];
        let mut column = vec![(0.0, 0.0); width];
        for y in 0..height {
            let mut acc = (0.0, 0.0);
            for x in 0..width {
                column[x] = dd_add(column[x], (values[y * width + x], 0.0));
                acc = dd_add(acc, column[x]);
                hi[(y + 1) * stride + x + 1] = acc.0;
                lo[(y + 1) * stride + x + 1] = acc.1;
            }
        }
        Ok(SumTable { width, height, hi, lo })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Table entry at `(x, y)`, `x <= width`, `y <= height`.
    pub fn at(&self, x: usize, y: usize) -> f64 {
        let i = y * (self.width + 1) + x;
        self.hi[i] + self.lo[i]
    }

    #[inline]
    fn region_unchecked(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let stride = self.width + 1;
        let (a, b) = ((y + h) * stride + x + w, y * stride + x + w);
        let (c, d) = ((y + h) * stride + x, y * stride + x);
        let (h, l) = (&self.hi, &self.lo);
        let (s, e) = two_sum(h[a], -h[b]);
        let (s, e2) = two_sum(s, -h[c]);
        let (s, e3) = two_sum(s, h[d]);
        s + (e + e2 + e3 + (l[a] - l[b] - l[c] + l[d]))
    }
}

/// Sum of the `w x h` rectangle with top-left cell `(x, y)`.
pub fn region_sum(table: &SumTable, x: usize, y: usize, w: usize, h: usize) -> Result<f64> {
    if x + w > table.width || y + h > table.height {
        return Err(Error::OutOfBounds(format!(
            "rectangle {w}x{h} at ({x},{y}) exceeds {}x{}",
            table.width, table.height
        )));
    }
    Ok(table.region_unchecked(x, y, w, h))
}

/// Tables over `sum_z S` and `sum_z S^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SumTables {
    pub sum: SumTable,
    pub sum_sq: SumTable,
}

pub fn build_sum_tables(search: &FeatureVolume) -> SumTables {
    let n = search.width() * search.height();
    let mut s = vec![0.0; n];
    let mut ss = vec![0.0; n];
    for c in 0..search.z() {
        for ((a, b), &v) in s.iter_mut().zip(ss.iter_mut()).zip(search.plane(c)) {
            let v = v as f64;
            *a += v;
            *b += v * v;
        }
    }
    SumTables {
        sum: SumTable::from_grid(search.width(), search.height(), &s).expect("sized grid"),
        sum_sq: SumTable::from_grid(search.width(), search.height(), &ss).expect("sized grid"),
    }
}

/// NCC scores over all template placements.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSurface {
    width: usize,
    height: usize,
    template_size: (usize, usize),
    search_size: (usize, usize),
    scores: Vec<f64>,
    valid: Vec<bool>,
}

impl CorrelationSurface {
    /// Surface from explicit scores; `None` marks an invalid offset.
    pub fn from_scores(width: usize, height: usize, scores: Vec<Option<f64>>) -> Result<Self> {
        if width == 0 || height == 0 || scores.len() != width * height {
            return Err(Error::InvalidParameter("surface size mismatch".into()));
        }
        Ok(CorrelationSurface {
            width,
            height,
            template_size: (0, 0),
            search_size: (0, 0),
            valid: scores.iter().map(Option::is_some).collect(),
            scores: scores.into_iter().map(|s| s.unwrap_or(f64::NAN)).collect(),
        })
    }

    /// Number of offsets along x, `M - m + 1`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of offsets along y, `N - n + 1`.
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn template_size(&self) -> (usize, usize) {
        self.template_size
    }

    pub fn search_size(&self) -> (usize, usize) {
        self.search_size
    }

    /// Score at an offset, `None` where the window is degenerate.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.scores[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Heatmap for inspection: scores mapped to `[0, 1]` by `(s + 1) / 2`,
    /// invalid cells written as the `-1` sentinel before the shift.
    pub fn heatmap(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| {
            (self.get(x, y).unwrap_or(-1.0) + 1.0) / 2.0
        })
    }

    pub fn encode_heatmap(&self) -> Vec<u8> {
        let h = self.heatmap();
        encode_float_grid(h.width(), h.height(), h.data())
    }
}

fn check_sizes(template: &FeatureVolume, search: &FeatureVolume) -> Result<()> {
    if template.z() != search.z() {
        return Err(Error::InvalidParameter(format!(
            "channel count mismatch: template {} vs search {}",
            template.z(),
            search.z()
        )));
    }
    if template.width() > search.width() || template.height() > search.height() {
        return Err(Error::InvalidParameter(format!(
            "template {}x{} larger than search {}x{}",
            template.width(),
            template.height(),
            search.width(),
            search.height()
        )));
    }
    Ok(())
}

fn is_degenerate(denom: f64, count: f64) -> bool {
    denom <= DEGENERATE_VARIANCE * count
}

fn check_template(stats: &TemplateStats) -> Result<()> {
    if is_degenerate(stats.denom_t, stats.count) {
        Err(Error::Degenerate("template has zero variance".into()))
    } else {
        Ok(())
    }
}

/// Direct summation of the mean-centered NCC at every offset.
pub fn ncc_naive(template: &FeatureVolume, search: &FeatureVolume) -> Result<CorrelationSurface> {
    check_sizes(template, search)?;
    let (m, n, z) = (template.width(), template.height(), template.z());
    let (sw, sh) = (search.width(), search.height());
    let count = (m * n * z) as f64;
    let t_mean = template.data().iter().map(|&v| v as f64).sum::<f64>() / count;
    let centered: Vec<f64> = template.data().iter().map(|&v| v as f64 - t_mean).collect();
    let t_var: f64 = centered.iter().map(|v| v * v).sum();
    if is_degenerate(t_var, count) {
        return Err(Error::Degenerate("template has zero variance".into()));
    }
    let (ow, oh) = (sw - m + 1, sh - n + 1);
    let mut scores = vec![f64::NAN; ow * oh];
    let mut valid = vec![false; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut s_sum = 0.0;
            for c in 0..z {
                let plane = search.plane(c);
                for j in 0..n {
                    let row = &plane[(oy + j) * sw + ox..(oy + j) * sw + ox + m];
                    s_sum += row.iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            let s_mean = s_sum / count;
            let mut cross = 0.0;
            let mut s_var = 0.0;
            for c in 0..z {
                let plane = search.plane(c);
                for j in 0..n {
                    let row = &plane[(oy + j) * sw + ox..(oy + j) * sw + ox + m];
                    let trow = &centered[(c * n + j) * m..(c * n + j + 1) * m];
                    for (&s, &t) in row.iter().zip(trow) {
                        let d = s as f64 - s_mean;
                        cross += d * t;
                        s_var += d * d;
                    }
                }
            }
            if !is_degenerate(s_var, count) {
                let i = oy * ow + ox;
                scores[i] = (cross / (s_var * t_var).sqrt()).clamp(-1.0, 1.0);
                valid[i] = true;
            }
        }
    }
    Ok(CorrelationSurface {
        width: ow,
        height: oh,
        template_size: (m, n),
        search_size: (sw, sh),
        scores,
        valid,
    })
}

/// Smallest `k >= n` whose prime factors are all in `{2, 3, 5}`.
pub fn next_smooth_size(n: usize) -> usize {
    let mut k = n.max(1);
    loop {
        let mut r = k;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(width: usize, height: usize) -> Self {
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            Fft2 {
                width,
                height,
                row_fwd: p.plan_fft_forward(width),
                col_fwd: p.plan_fft_forward(height),
                row_inv: p.plan_fft_inverse(width),
                col_inv: p.plan_fft_inverse(height),
            }
        })
    }

    fn run(&self, buf: &mut [Complex<f64>], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        row.process(buf);
        let mut column = vec![Complex::new(0.0, 0.0); self.height];
        for x in 0..self.width {
            for (y, c) in column.iter_mut().enumerate() {
                *c = buf[y * self.width + x];
            }
            col.process(&mut column);
            for (y, c) in column.iter().enumerate() {
                buf[y * self.width + x] = *c;
            }
        }
    }

    fn forward(&self, buf: &mut [Complex<f64>]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    fn inverse(&self, buf: &mut [Complex<f64>]) {
        self.run(buf, &self.row_inv, &self.col_inv);
    }
}

/// Cross term `R_ST(x, y) = sum_z sum_{i,j} S(x+i, y+j, z) T(i, j, z)` at all
/// offsets, computed in the frequency domain.
///
/// Both volumes are zero-padded per axis to the next 5-smooth length at least
/// `M + m - 1`. Each channel's search and template planes share one complex
/// transform (search in the real part, template in the imaginary part), the
/// products `F_S conj(F_T)` are accumulated over channels in channel order
/// and a single inverse transform yields the correlation.
pub fn cross_corr_fft(search: &FeatureVolume, template: &FeatureVolume) -> Result<Vec<f64>> {
    check_sizes(template, search)?;
    let (m, n) = (template.width(), template.height());
    let (sw, sh) = (search.width(), search.height());
    let pw = next_smooth_size(sw + m - 1);
    let ph = next_smooth_size(sh + n - 1);
    let fft = Fft2::new(pw, ph);
    let zero = Complex::new(0.0, 0.0);
    let mut acc = vec![zero; pw * ph];
    let mut buf = vec![zero; pw * ph];
    for c in 0..search.z() {
        buf.iter_mut().for_each(|v| *v = zero);
        let sp = search.plane(c);
        for y in 0..sh {
            for x in 0..sw {
                buf[y * pw + x].re = sp[y * sw + x] as f64;
            }
        }
        let tp = template.plane(c);
        for y in 0..n {
            for x in 0..m {
                buf[y * pw + x].im = tp[y * m + x] as f64;
            }
        }
        fft.forward(&mut buf);
        for ky in 0..ph {
            let nky = (ph - ky) % ph;
            for kx in 0..pw {
                let nkx = (pw - kx) % pw;
                let a = buf[ky * pw + kx];
                let b = buf[nky * pw + nkx].conj();
                // F_S = (a + b) / 2, F_T = (a - b) / 2i, so
                // F_S conj(F_T) = (a + b) conj(a - b) * i / 4
                let prod = (a + b) * (a - b).conj();
                acc[ky * pw + kx] += Complex::new(-prod.im, prod.re) * 0.25;
            }
        }
    }
    fft.inverse(&mut acc);
    let scale = 1.0 / (pw * ph) as f64;
    let (ow, oh) = (sw - m + 1, sh - n + 1);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            out.push(acc[y * pw + x].re * scale);
        }
    }
    Ok(out)
}

/// Factored NCC with FFT cross term and summed-area window sums.
pub fn fast_ncc(template: &FeatureVolume, search: &FeatureVolume) -> Result<CorrelationSurface> {
    check_sizes(template, search)?;
    let stats = template_stats(template);
    check_template(&stats)?;
    let r_st = cross_corr_fft(search, template)?;
    let tables = build_sum_tables(search);
    Ok(assemble(template, search, &stats, &r_st, &tables))
}

fn assemble(
    template: &FeatureVolume,
    search: &FeatureVolume,
    stats: &TemplateStats,
    r_st: &[f64],
    tables: &SumTables,
) -> CorrelationSurface {
    let (m, n) = (template.width(), template.height());
    let (ow, oh) = (search.width() - m + 1, search.height() - n + 1);
    let count = stats.count;
    let mut scores = vec![f64::NAN; ow * oh];
    let mut valid = vec![false; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let i = y * ow + x;
            let r_s = tables.sum.region_unchecked(x, y, m, n);
            let r_ss = tables.sum_sq.region_unchecked(x, y, m, n);
            let denom_s = r_ss - r_s * r_s / count;
            if is_degenerate(denom_s, count) {
                continue;
            }
            let num = r_st[i] - r_s * stats.r_t / count;
            scores[i] = (num / (denom_s * stats.denom_t).sqrt()).clamp(-1.0, 1.0);
            valid[i] = true;
        }
    }
    CorrelationSurface {
        width: ow,
        height: oh,
        template_size: (m, n),
        search_size: (search.width(), search.height()),
        scores,
        valid,
    }
}

/// Best-scoring offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub x: usize,
    pub y: usize,
    pub score: f64,
    /// Quadratic sub-pixel estimate, when refinement was requested.
    pub subpixel: Option<(f64, f64)>,
}

/// Arg-max over valid offsets. Ties go to the smallest `y`, then the
/// smallest `x`.
pub fn peak_locate(surface: &CorrelationSurface, refine: bool) -> Result<Peak> {
    let mut best: Option<(usize, usize, f64)> = None;
    for y in 0..surface.height {
        for x in 0..surface.width {
            if let Some(s) = surface.get(x, y) {
                if best.map_or(true, |(_, _, b)| s > b) {
                    best = Some((x, y, s));
                }
            }
        }
    }
    let (x, y, score) = best.ok_or_else(|| Error::Matching("no valid correlation score".into()))?;
    let subpixel = refine.then(|| {
        let offset = |prev: Option<f64>, next: Option<f64>| match (prev, next) {
            (Some(a), Some(b)) => {
                let curv = a - 2.0 * score + b;
                if curv < 0.0 {
                    (0.5 * (a - b) / curv).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        let left = (x > 0).then(|| surface.get(x - 1, y)).flatten();
        let right = (x + 1 < surface.width).then(|| surface.get(x + 1, y)).flatten();
        let up = (y > 0).then(|| surface.get(x, y - 1)).flatten();
        let down = (y + 1 < surface.height).then(|| surface.get(x, y + 1)).flatten();
        (x as f64 + offset(left, right), y as f64 + offset(up, down))
    });
    Ok(Peak {
        x,
        y,
        score,
        subpixel,
    })
}

/// Multiplication-count model of the fast and direct evaluations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexityReport {
    pub t1: f64,
    pub t2: f64,
    pub ratio: f64,
}

/// `t1 = 4 M N z log2(M N z)`, `t2 = 3 m n z (M-m+1)(N-n+1)`, `ratio = t1/t2`.
///
/// This is the cost model as stated, counting the FFT work as one transform
/// of `M N z` points; per-channel 2-D transforms differ by constant factors.
pub fn complexity_estimate(
    m: usize,
    n: usize,
    big_m: usize,
    big_n: usize,
    z: usize,
) -> Result<ComplexityReport> {
    if m == 0 || n == 0 || z == 0 || m > big_m || n > big_n {
        return Err(Error::InvalidParameter(format!(
            "need 0 < m <= M, 0 < n <= N, z > 0; got m={m} n={n} M={big_m} N={big_n} z={z}"
        )));
    }
    let mnz = (big_m * big_n * z) as f64;
    let t1 = 4.0 * mnz * mnz.log2();
    let t2 = 3.0 * (m * n * z) as f64 * ((big_m - m + 1) * (big_n - n + 1)) as f64;
    Ok(ComplexityReport {
        t1,
        t2,
        ratio: t1 / t2,
    })
}
