//! FAST segment-test corners and the block-partitioned selection that
//! spreads interest points evenly over the image.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Bresenham circle of radius 3, clockwise from twelve o'clock.
pub const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Minimum distance of a testable pixel from the image border.
pub const CIRCLE_RADIUS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterestPoint {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Segment-test score at `(x, y)`, or `None` if the pixel is not a corner.
///
/// The pixel is a corner when at least `arc_len` contiguous circle pixels are
/// all brighter than `center + threshold` or all darker than
/// `center - threshold`. The score sums `|p - center| - threshold` over the
/// longest such arc, taking the stronger polarity when both qualify.
pub fn segment_score(image: &Raster, x: usize, y: usize, threshold: f64, arc_len: usize) -> Option<f64> {
    let center = image.get(x, y) as f64;
    let mut diffs = [0.0f64; 16];
    for (d, (dx, dy)) in diffs.iter_mut().zip(CIRCLE) {
        let p = image.get((x as isize + dx) as usize, (y as isize + dy) as usize) as f64;
        *d = p - center;
    }
    let mut best: Option<f64> = None;
    for sign in [1.0, -1.0] {
        let passes = |i: usize| sign * diffs[i % 16] > threshold;
        if (0..16).all(passes) {
            let s: f64 = diffs.iter().map(|d| sign * d - threshold).sum();
            best = Some(best.map_or(s, |b: f64| b.max(s)));
            continue;
        }
        // start scanning just after a failing pixel so every run is seen whole
        let start = (0..16).find(|&i| !passes(i)).unwrap();
        let mut run = 0usize;
        let mut run_sum = 0.0;
        let mut longest = (0usize, 0.0f64);
        for k in 1..=16 {
            let i = (start + k) % 16;
            if passes(i) {
                run += 1;
                run_sum += sign * diffs[i] - threshold;
                if run > longest.0 || (run == longest.0 && run_sum > longest.1) {
                    longest = (run, run_sum);
                }
            } else {
                run = 0;
                run_sum = 0.0;
            }
        }
        if longest.0 >= arc_len {
            best = Some(best.map_or(longest.1, |b: f64| b.max(longest.1)));
        }
    }
    best
}

fn score_map(image: &Raster, threshold: f64, arc_len: usize) -> Vec<Option<f64>> {
    let (w, h) = (image.width(), image.height());
    let r = CIRCLE_RADIUS;
    (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                if x < r || y < r || x + r >= w || y + r >= h {
                    None
                } else {
                    segment_score(image, x, y, threshold, arc_len)
                }
            })
        })
        .collect()
}

/// FAST corners after 3x3 non-maximum suppression, ordered by `(y, x)`.
///
/// A corner survives if no neighbouring corner has a higher score; equal
/// scores go to the neighbour earlier in raster order.
pub fn fast_corners(image: &Raster, threshold: f64, arc_len: usize) -> Result<Vec<InterestPoint>> {
    let (w, h) = (image.width(), image.height());
    if w < 7 || h < 7 {
        return Err(Error::InvalidParameter(format!(
            "FAST needs at least 7x7 pixels, got {w}x{h}"
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "FAST threshold must be positive, got {threshold}"
        )));
    }
    if arc_len == 0 || arc_len > 16 {
        return Err(Error::InvalidParameter(format!("arc length {arc_len} not in 1..=16")));
    }
    let scores = score_map(image, threshold, arc_len);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let Some(s) = scores[y * w + x] else { continue };
            let mut keep = true;
            'nbr: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    if let Some(ns) = scores[ny as usize * w + nx as usize] {
                        let earlier = (dy, dx) < (0, 0);
                        if ns > s || (ns == s && earlier) {
                            keep = false;
                            break 'nbr;
                        }
                    }
                }
            }
            if keep {
                out.push(InterestPoint { x, y, score: s });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockFastConfig {
    pub target_count: usize,
    /// Base segment-test threshold in normalized intensity.
    pub threshold: f64,
    pub arc_len: usize,
    /// Points closer than this to the border are never selected.
    pub margin: usize,
}

impl Default for BlockFastConfig {
    fn default() -> Self {
        BlockFastConfig {
            target_count: 400,
            threshold: 0.08,
            arc_len: 9,
            margin: 0,
        }
    }
}

/// Square block grid over a rectangular region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
    pub target_count: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl BlockGrid {
    /// `ceil(sqrt(K))` blocks per side over the region `[x0, x0+w) x [y0, y0+h)`.
    pub fn new(target_count: usize, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let side = (target_count as f64).sqrt().ceil().max(1.0) as usize;
        BlockGrid {
            rows: side,
            cols: side,
            target_count,
            x0,
            y0,
            w,
            h,
        }
    }

    /// Block `(row, col)` containing the pixel, if it lies in the region.
    pub fn block_of(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.w || y >= self.y0 + self.h {
            return None;
        }
        let col = (x - self.x0) * self.cols / self.w;
        let row = (y - self.y0) * self.rows / self.h;
        Some((row, col))
    }
}

fn stronger(a: &InterestPoint, b: &InterestPoint) -> bool {
    a.score > b.score || (a.score == b.score && (a.y, a.x) < (b.y, b.x))
}

/// Strongest corner per grid block, ordered by `(block row, block col)`.
///
/// Blocks without a corner at the base threshold are retried once at half
/// the threshold. If the grid holds more blocks than `target_count`, only the
/// `target_count` strongest picks are kept.
pub fn block_fast(image: &Raster, config: &BlockFastConfig) -> Result<Vec<InterestPoint>> {
    if config.target_count == 0 {
        return Err(Error::InvalidParameter("target count must be >= 1".into()));
    }
    let (w, h) = (image.width(), image.height());
    let m = config.margin.max(CIRCLE_RADIUS);
    if 2 * m >= w || 2 * m >= h {
        return Ok(Vec::new());
    }
    let grid = BlockGrid::new(config.target_count, m, m, w - 2 * m, h - 2 * m);
    let mut picks: Vec<Option<InterestPoint>> = vec![None; grid.rows * grid.cols];
    let fill = |corners: &[InterestPoint], picks: &mut [Option<InterestPoint>], only_empty: &[bool]| {
        for c in corners {
            if let Some((r, col)) = grid.block_of(c.x, c.y) {
                let i = r * grid.cols + col;
                if !only_empty[i] {
                    continue;
                }
                if picks[i].map_or(true, |p| stronger(c, &p)) {
                    picks[i] = Some(*c);
                }
            }
        }
    };
    let all = vec![true; picks.len()];
    let base = fast_corners(image, config.threshold, config.arc_len)?;
    fill(&base, &mut picks, &all);
    let empty: Vec<bool> = picks.iter().map(Option::is_none).collect();
    if empty.iter().any(|e| *e) {
        let relaxed = fast_corners(image, config.threshold / 2.0, config.arc_len)?;
        fill(&relaxed, &mut picks, &empty);
    }
    let mut chosen: Vec<(usize, InterestPoint)> = picks
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (i, p)))
        .collect();
    if chosen.len() > config.target_count {
        chosen.sort_by(|a, b| {
            if stronger(&a.1, &b.1) {
                std::cmp::Ordering::Less
            } else if stronger(&b.1, &a.1) {
                std::cmp::Ordering::Greater
            } else {
                a.0.cmp(&b.0)
            }
        });
        chosen.truncate(config.target_count);
        chosen.sort_by_key(|(i, _)| *i);
    }
    Ok(chosen.into_iter().map(|(_, p)| p).collect())
}

/// `x,y,score` rows with a header line.
pub fn points_to_csv(points: &[InterestPoint]) -> String {
    let mut out = String::from("x,y,score\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.x, p.y, p.score));
    }
    out
}
