//! Planar transforms and their least-squares estimators.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A correspondence `src -> dst`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointPair {
    pub src: (f64, f64),
    pub dst: (f64, f64),
}

impl PointPair {
    pub fn new(sx: f64, sy: f64, dx: f64, dy: f64) -> Self {
        PointPair {
            src: (sx, sy),
            dst: (dx, dy),
        }
    }

    pub fn reversed(&self) -> Self {
        PointPair {
            src: self.dst,
            dst: self.src,
        }
    }
}

/// `x' = a0 + a1 x + a2 y`, `y' = b0 + b1 x + b2 y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: [f64; 3],
    pub b: [f64; 3],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            a: [0.0, 1.0, 0.0],
            b: [0.0, 0.0, 1.0],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        AffineTransform {
            a: [dx, 1.0, 0.0],
            b: [dy, 0.0, 1.0],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a[0] + self.a[1] * x + self.a[2] * y,
            self.b[0] + self.b[1] * x + self.b[2] * y,
        )
    }

    pub fn determinant(&self) -> f64 {
        self.a[1] * self.b[2] - self.a[2] * self.b[1]
    }

    pub fn inverse(&self) -> Option<AffineTransform> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < 1e-14 {
            return None;
        }
        let (p, q, r, s) = (self.b[2] / det, -self.a[2] / det, -self.b[1] / det, self.a[1] / det);
        Some(AffineTransform {
            a: [-(p * self.a[0] + q * self.b[0]), p, q],
            b: [-(r * self.a[0] + s * self.b[0]), r, s],
        })
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &AffineTransform) -> AffineTransform {
        let [a0, a1, a2] = self.a;
        let [b0, b1, b2] = self.b;
        let [c0, c1, c2] = first.a;
        let [d0, d1, d2] = first.b;
        AffineTransform {
            a: [a0 + a1 * c0 + a2 * d0, a1 * c1 + a2 * d1, a1 * c2 + a2 * d2],
            b: [b0 + b1 * c0 + b2 * d0, b1 * c1 + b2 * d1, b1 * c2 + b2 * d2],
        }
    }
}

/// Homography with the bottom-right entry fixed to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveTransform {
    pub h: [[f64; 3]; 3],
}

impl ProjectiveTransform {
    pub fn identity() -> Self {
        ProjectiveTransform {
            h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Normalizes `m` so that `m[2][2] == 1`; fails if it cannot be.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let s = m[2][2];
        if !s.is_finite() || s.abs() < 1e-15 {
            return Err(Error::Degenerate("homography with vanishing h33".into()));
        }
        let mut h = m;
        for row in h.iter_mut() {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Ok(ProjectiveTransform { h })
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let h = &self.h;
        let w = h[2][0] * x + h[2][1] * y + h[2][2];
        if w.abs() < 1e-12 {
            return (f64::NAN, f64::NAN);
        }
        (
            (h[0][0] * x + h[0][1] * y + h[0][2]) / w,
            (h[1][0] * x + h[1][1] * y + h[1][2]) / w,
        )
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.h[r][c])
    }

    pub fn inverse(&self) -> Option<ProjectiveTransform> {
        let inv = self.matrix().try_inverse()?;
        ProjectiveTransform::from_matrix(std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)]))).ok()
    }
}

/// Full second-order bivariate polynomial per output coordinate, terms
/// ordered `1, x, y, x^2, x y, y^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly2Transform {
    pub cx: [f64; 6],
    pub cy: [f64; 6],
}

fn poly2_terms(x: f64, y: f64) -> [f64; 6] {
    [1.0, x, y, x * x, x * y, y * y]
}

impl Poly2Transform {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let t = poly2_terms(x, y);
        (
            t.iter().zip(&self.cx).map(|(a, b)| a * b).sum(),
            t.iter().zip(&self.cy).map(|(a, b)| a * b).sum(),
        )
    }

    fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let d = |c: &[f64; 6]| [c[1] + 2.0 * c[3] * x + c[4] * y, c[2] + c[4] * x + 2.0 * c[5] * y];
        [d(&self.cx), d(&self.cy)]
    }

    /// Solves `apply(x, y) = (u, v)` by Newton iteration from the linear-part
    /// estimate.
    pub fn invert_point(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let lin = AffineTransform {
            a: [self.cx[0], self.cx[1], self.cx[2]],
            b: [self.cy[0], self.cy[1], self.cy[2]],
        };
        let (mut x, mut y) = lin.inverse()?.apply(u, v);
        for _ in 0..30 {
            let (fx, fy) = self.apply(x, y);
            let (rx, ry) = (fx - u, fy - v);
            if rx.abs() < 1e-10 && ry.abs() < 1e-10 {
                return Some((x, y));
            }
            let j = self.jacobian(x, y);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-14 {
                return None;
            }
            x -= (j[1][1] * rx - j[0][1] * ry) / det;
            y -= (j[0][0] * ry - j[1][0] * rx) / det;
        }
        let (fx, fy) = self.apply(x, y);
        ((fx - u).abs() < 1e-6 && (fy - v).abs() < 1e-6).then_some((x, y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Affine,
    Projective,
    Poly2,
}

impl ModelKind {
    pub fn min_sample(&self) -> usize {
        match self {
            ModelKind::Affine => 3,
            ModelKind::Projective => 4,
            ModelKind::Poly2 => 6,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Affine => "affine",
            ModelKind::Projective => "projective",
            ModelKind::Poly2 => "poly2",
        }
    }
}

/// Any of the planar transforms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeometricModel {
    Affine(AffineTransform),
    Projective(ProjectiveTransform),
    Poly2(Poly2Transform),
}

impl GeometricModel {
    pub fn identity() -> Self {
        GeometricModel::Affine(AffineTransform::identity())
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            GeometricModel::Affine(_) => ModelKind::Affine,
            GeometricModel::Projective(_) => ModelKind::Projective,
            GeometricModel::Poly2(_) => ModelKind::Poly2,
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        match self {
            GeometricModel::Affine(t) => t.apply(x, y),
            GeometricModel::Projective(t) => t.apply(x, y),
            GeometricModel::Poly2(t) => t.apply(x, y),
        }
    }

    /// Preimage of `(u, v)`.
    pub fn invert_point(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        match self {
            GeometricModel::Affine(t) => t.inverse().map(|i| i.apply(u, v)),
            GeometricModel::Projective(t) => t.inverse().map(|i| i.apply(u, v)),
            GeometricModel::Poly2(t) => t.invert_point(u, v),
        }
        .filter(|(x, y)| x.is_finite() && y.is_finite())
    }

    /// Closed-form inverse, available for affine and projective models.
    pub fn inverse(&self) -> Option<GeometricModel> {
        match self {
            GeometricModel::Affine(t) => t.inverse().map(GeometricModel::Affine),
            GeometricModel::Projective(t) => t.inverse().map(GeometricModel::Projective),
            GeometricModel::Poly2(_) => None,
        }
    }

    /// Euclidean distance between the mapped source and the destination.
    pub fn residual(&self, pair: &PointPair) -> f64 {
        let (x, y) = self.apply(pair.src.0, pair.src.1);
        let r = ((x - pair.dst.0).powi(2) + (y - pair.dst.1).powi(2)).sqrt();
        if r.is_nan() {
            f64::INFINITY
        } else {
            r
        }
    }

    /// Flat coefficient list for reports.
    pub fn coefficients(&self) -> Vec<f64> {
        match self {
            GeometricModel::Affine(t) => t.a.iter().chain(&t.b).copied().collect(),
            GeometricModel::Projective(t) => t.h.iter().flatten().copied().collect(),
            GeometricModel::Poly2(t) => t.cx.iter().chain(&t.cy).copied().collect(),
        }
    }
}

/// Similarity normalization: centroid to the origin, mean distance `sqrt(2)`.
#[derive(Clone, Copy, Debug)]
struct Normalizer {
    cx: f64,
    cy: f64,
    s: f64,
}

impl Normalizer {
    fn fit(points: impl Iterator<Item = (f64, f64)> + Clone) -> Result<Self> {
        let n = points.clone().count() as f64;
        let (sx, sy) = points.clone().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (cx, cy) = (sx / n, sy / n);
        let mean_dist = points
            .map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
            .sum::<f64>()
            / n;
        if !(mean_dist > 0.0) || !mean_dist.is_finite() {
            return Err(Error::Degenerate("coincident points".into()));
        }
        Ok(Normalizer {
            cx,
            cy,
            s: std::f64::consts::SQRT_2 / mean_dist,
        })
    }

    fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        ((p.0 - self.cx) * self.s, (p.1 - self.cy) * self.s)
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.s,
            0.0,
            -self.s * self.cx,
            0.0,
            self.s,
            -self.s * self.cy,
            0.0,
            0.0,
            1.0,
        )
    }
}

const RANK_TOL: f64 = 1e-10;

/// Least-squares solution of `design * coeffs = rhs` for each rhs column,
/// rejecting rank-deficient designs.
fn solve_ls(design: &DMatrix<f64>, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.max();
    if !(max > 0.0) || sv.min() <= RANK_TOL * max {
        return Err(Error::Degenerate("rank-deficient point configuration".into()));
    }
    rhs.iter()
        .map(|b| {
            svd.solve(b, 0.0)
                .map_err(|e| Error::Degenerate(format!("least squares failed: {e}")))
        })
        .collect()
}

fn need(pairs: &[PointPair], kind: ModelKind) -> Result<()> {
    if pairs.len() < kind.min_sample() {
        return Err(Error::Degenerate(format!(
            "{} model needs {} pairs, got {}",
            kind.name(),
            kind.min_sample(),
            pairs.len()
        )));
    }
    if pairs
        .iter()
        .any(|p| !(p.src.0.is_finite() && p.src.1.is_finite() && p.dst.0.is_finite() && p.dst.1.is_finite()))
    {
        return Err(Error::InvalidParameter("non-finite point coordinate".into()));
    }
    Ok(())
}

pub fn estimate_affine(pairs: &[PointPair]) -> Result<AffineTransform> {
    need(pairs, ModelKind::Affine)?;
    let norm = Normalizer::fit(pairs.iter().map(|p| p.src))?;
    let n = pairs.len();
    let design = DMatrix::from_fn(n, 3, |r, c| {
        let (x, y) = norm.apply(pairs[r].src);
        [1.0, x, y][c]
    });
    let bx = DVector::from_iterator(n, pairs.iter().map(|p| p.dst.0));
    let by = DVector::from_iterator(n, pairs.iter().map(|p| p.dst.1));
    let sol = solve_ls(&design, &[bx, by])?;
    // x~ = s (x - cx): fold the normalization back into the coefficients
    let unfold = |c: &DVector<f64>| {
        let (c0, c1, c2) = (c[0], c[1] * norm.s, c[2] * norm.s);
        [c0 - c1 * norm.cx - c2 * norm.cy, c1, c2]
    };
    Ok(AffineTransform {
        a: unfold(&sol[0]),
        b: unfold(&sol[1]),
    })
}

pub fn estimate_poly2(pairs: &[PointPair]) -> Result<Poly2Transform> {
    need(pairs, ModelKind::Poly2)?;
    let norm = Normalizer::fit(pairs.iter().map(|p| p.src))?;
    let n = pairs.len();
    let design = DMatrix::from_fn(n, 6, |r, c| {
        let (x, y) = norm.apply(pairs[r].src);
        poly2_terms(x, y)[c]
    });
    let bx = DVector::from_iterator(n, pairs.iter().map(|p| p.dst.0));
    let by = DVector::from_iterator(n, pairs.iter().map(|p| p.dst.1));
    let sol = solve_ls(&design, &[bx, by])?;
    let (s, cx, cy) = (norm.s, norm.cx, norm.cy);
    let unfold = |c: &DVector<f64>| {
        // with u = s (x - cx), v = s (y - cy):
        // c0 + c1 u + c2 v + c3 u^2 + c4 u v + c5 v^2 expanded in x, y
        let (c0, c1, c2, c3, c4, c5) = (c[0], c[1], c[2], c[3], c[4], c[5]);
        let s2 = s * s;
        [
            c0 - c1 * s * cx - c2 * s * cy + c3 * s2 * cx * cx + c4 * s2 * cx * cy + c5 * s2 * cy * cy,
            c1 * s - 2.0 * c3 * s2 * cx - c4 * s2 * cy,
            c2 * s - c4 * s2 * cx - 2.0 * c5 * s2 * cy,
            c3 * s2,
            c4 * s2,
            c5 * s2,
        ]
    };
    Ok(Poly2Transform {
        cx: unfold(&sol[0]),
        cy: unfold(&sol[1]),
    })
}

/// Normalized direct linear transform.
pub fn estimate_projective(pairs: &[PointPair]) -> Result<ProjectiveTransform> {
    need(pairs, ModelKind::Projective)?;
    let ns = Normalizer::fit(pairs.iter().map(|p| p.src))?;
    let nd = Normalizer::fit(pairs.iter().map(|p| p.dst))?;
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, p) in pairs.iter().enumerate() {
        let (x, y) = ns.apply(p.src);
        let (u, v) = nd.apply(p.dst);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let max = svd.singular_values[order[order.len() - 1]];
    if svd.singular_values[order[1]] <= RANK_TOL * max {
        return Err(Error::Degenerate("collinear or repeated points".into()));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = nd
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular normalization".into()))?;
    let full = t_dst_inv * hn * ns.matrix();
    // the homography must not send any input point to infinity
    for p in pairs {
        let w = (full * Vector3::new(p.src.0, p.src.1, 1.0))[2];
        if w.abs() < 1e-12 * full.norm() {
            return Err(Error::Degenerate("point mapped to infinity".into()));
        }
    }
    ProjectiveTransform::from_matrix(std::array::from_fn(|r| std::array::from_fn(|c| full[(r, c)])))
}

/// Least-squares model of the requested kind.
pub fn estimate(kind: ModelKind, pairs: &[PointPair]) -> Result<GeometricModel> {
    Ok(match kind {
        ModelKind::Affine => GeometricModel::Affine(estimate_affine(pairs)?),
        ModelKind::Projective => GeometricModel::Projective(estimate_projective(pairs)?),
        ModelKind::Poly2 => GeometricModel::Poly2(estimate_poly2(pairs)?),
    })
}

/// Root-mean-square residual of `model` over `pairs`.
pub fn rms_residual(model: &GeometricModel, pairs: &[PointPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    (pairs.iter().map(|p| model.residual(p).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn planted_h() -> ProjectiveTransform {
        ProjectiveTransform::from_matrix([
            [1.02, 0.03, 12.5],
            [-0.02, 0.98, -7.25],
            [2e-5, -1e-5, 1.0],
        ])
        .unwrap()
    }

    #[test]
    fn identity_pairs_give_identity() {
        let pairs: Vec<_> = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0), (3.0, 6.0), (8.0, 1.0)]
            .iter()
            .map(|&(x, y)| PointPair::new(x, y, x, y))
            .collect();
        for kind in [ModelKind::Affine, ModelKind::Projective, ModelKind::Poly2] {
            let m = estimate(kind, &pairs).unwrap();
            for p in &pairs {
                assert!(m.residual(p) < 1e-10);
            }
            let (x, y) = m.apply(123.0, -45.0);
            assert!((x - 123.0).abs() < 1e-8 && (y + 45.0).abs() < 1e-8);
        }
    }

    #[test]
    fn minimal_samples_are_exact() {
        let h = planted_h();
        let corners = [(0.0, 0.0), (500.0, 0.0), (500.0, 400.0), (0.0, 400.0)];
        let pairs: Vec<_> = corners
            .iter()
            .map(|&(x, y)| {
                let (u, v) = h.apply(x, y);
                PointPair::new(x, y, u, v)
            })
            .collect();
        let est = estimate_projective(&pairs).unwrap();
        for p in &pairs {
            assert!(GeometricModel::Projective(est).residual(p) <= 1e-9);
        }

        let aff = AffineTransform {
            a: [3.0, 1.01, -0.02],
            b: [-4.0, 0.03, 0.99],
        };
        let tri: Vec<_> = [(10.0, 10.0), (300.0, 40.0), (80.0, 250.0)]
            .iter()
            .map(|&(x, y)| {
                let (u, v) = aff.apply(x, y);
                PointPair::new(x, y, u, v)
            })
            .collect();
        let est = estimate_affine(&tri).unwrap();
        for (e, w) in est.a.iter().chain(&est.b).zip(aff.a.iter().chain(&aff.b)) {
            assert!((e - w).abs() < 1e-9);
        }

        let poly = Poly2Transform {
            cx: [1.0, 1.0, 0.01, 1e-5, -2e-5, 3e-6],
            cy: [-2.0, 0.02, 0.97, -1e-5, 1e-5, 2e-5],
        };
        let six: Vec<_> = [(0.0, 0.0), (400.0, 0.0), (0.0, 400.0), (400.0, 400.0), (200.0, 90.0), (120.0, 310.0)]
            .iter()
            .map(|&(x, y)| {
                let (u, v) = poly.apply(x, y);
                PointPair::new(x, y, u, v)
            })
            .collect();
        let est = GeometricModel::Poly2(estimate_poly2(&six).unwrap());
        for p in &six {
            assert!(est.residual(p) <= 1e-9);
        }
    }

    #[test]
    fn degenerate_configurations() {
        let line: Vec<_> = (0..5)
            .map(|i| PointPair::new(i as f64, 2.0 * i as f64, i as f64, i as f64))
            .collect();
        assert!(estimate_affine(&line).is_err());
        assert!(estimate_projective(&line[..4]).is_err());
        let mut three_collinear = line[..3].to_vec();
        three_collinear.push(PointPair::new(10.0, 0.0, 10.0, 0.0));
        assert!(estimate_projective(&three_collinear).is_err());
        assert!(estimate_affine(&line[..2]).is_err());
        assert!(estimate_poly2(&line).is_err());
    }

    #[test]
    fn noisy_affine_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let aff = AffineTransform {
            a: [5.0, 0.99, 0.05],
            b: [-3.0, -0.04, 1.01],
        };
        let mut rms_sum = 0.0;
        let trials = 50;
        for _ in 0..trials {
            let pairs: Vec<_> = (0..20)
                .map(|_| {
                    let (x, y) = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
                    let (u, v) = aff.apply(x, y);
                    PointPair::new(x, y, u + noise.sample(&mut rng), v + noise.sample(&mut rng))
                })
                .collect();
            let est = GeometricModel::Affine(estimate_affine(&pairs).unwrap());
            let rms = rms_residual(&est, &pairs);
            assert!(rms <= 0.2, "rms {rms}");
            rms_sum += rms;
        }
        assert!(rms_sum / (trials as f64) < 0.15);
    }

    #[test]
    fn inverses() {
        let h = planted_h();
        let inv = h.inverse().unwrap();
        let (u, v) = h.apply(123.0, 456.0);
        let (x, y) = inv.apply(u, v);
        assert!((x - 123.0).abs() < 1e-9 && (y - 456.0).abs() < 1e-9);

        let aff = AffineTransform {
            a: [5.0, 0.99, 0.05],
            b: [-3.0, -0.04, 1.01],
        };
        let (u, v) = aff.apply(7.0, 9.0);
        let (x, y) = aff.inverse().unwrap().apply(u, v);
        assert!((x - 7.0).abs() < 1e-12 && (y - 9.0).abs() < 1e-12);
        let c = aff.compose(&aff.inverse().unwrap());
        assert!((c.a[1] - 1.0).abs() < 1e-12 && c.a[2].abs() < 1e-12);

        let poly = Poly2Transform {
            cx: [1.0, 1.0, 0.01, 1e-5, -2e-5, 3e-6],
            cy: [-2.0, 0.02, 0.97, -1e-5, 1e-5, 2e-5],
        };
        let (u, v) = poly.apply(250.0, 310.0);
        let (x, y) = poly.invert_point(u, v).unwrap();
        assert!((x - 250.0).abs() < 1e-8 && (y - 310.0).abs() < 1e-8);
        assert!(AffineTransform { a: [0.0, 1.0, 2.0], b: [0.0, 2.0, 4.0] }.inverse().is_none());
    }
}
