use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::models::{estimate, GeometricModel, ModelKind, PointPair};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RansacConfig {
    /// Reprojection distance (pixels) below which a pair is an inlier.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
    /// Smallest consensus accepted; `None` means twice the minimal sample.
    pub min_inliers: Option<usize>,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            inlier_threshold: 1.5,
            max_iterations: 2000,
            confidence: 0.995,
            seed: 0x5f0c,
            min_inliers: None,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidParameter("inlier threshold must be positive".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter("confidence must lie in (0, 1)".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn required_consensus(&self, kind: ModelKind) -> usize {
        self.min_inliers
            .unwrap_or(2 * kind.min_sample())
            .max(kind.min_sample())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult {
    pub model: GeometricModel,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

fn consensus(model: &GeometricModel, pairs: &[PointPair], threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = Vec::with_capacity(pairs.len());
    let mut count = 0;
    let mut sse = 0.0;
    for p in pairs {
        let r = model.residual(p);
        let inlier = r <= threshold;
        if inlier {
            count += 1;
            sse += r * r;
        }
        mask.push(inlier);
    }
    (mask, count, sse)
}

fn adaptive_iterations(inliers: usize, total: usize, k: usize, confidence: f64, cap: usize) -> usize {
    let w = inliers as f64 / total as f64;
    let p_good = w.powi(k as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return cap;
    }
    let n = ((1.0 - confidence).ln() / (1.0 - p_good).ln()).ceil();
    if n.is_finite() {
        (n as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Hypothesize-and-verify robust fit followed by a least-squares refit on
/// the consensus set. Deterministic for a fixed `config.seed`.
pub fn ransac(pairs: &[PointPair], kind: ModelKind, config: &RansacConfig) -> Result<RansacResult> {
    config.validate()?;
    let k = kind.min_sample();
    if pairs.len() < k {
        return Err(Error::Degenerate(format!(
            "{} model needs {k} pairs, got {}",
            kind.name(),
            pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, f64, GeometricModel)> = None;
    let mut budget = config.max_iterations;
    let mut iterations = 0;
    let mut subset = Vec::with_capacity(k);
    while iterations < budget {
        iterations += 1;
        subset.clear();
        subset.extend(sample(&mut rng, pairs.len(), k).into_iter().map(|i| pairs[i]));
        let Ok(model) = estimate(kind, &subset) else { continue };
        let (_, count, sse) = consensus(&model, pairs, config.inlier_threshold);
        let better = best
            .as_ref()
            .map_or(true, |(c, s, _)| count > *c || (count == *c && sse < *s));
        if better {
            best = Some((count, sse, model));
            budget = adaptive_iterations(count, pairs.len(), k, config.confidence, config.max_iterations)
                .max(iterations);
        }
    }
    let required = config.required_consensus(kind);
    let (count, _, mut model) = best.ok_or_else(|| Error::NoConsensus("every sample was degenerate".into()))?;
    if count < required {
        return Err(Error::NoConsensus(format!(
            "best consensus {count} below required {required}"
        )));
    }
    let (mut mask, mut count, _) = consensus(&model, pairs, config.inlier_threshold);
    for _ in 0..10 {
        let set: Vec<PointPair> = pairs
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(p, _)| *p)
            .collect();
        let Ok(refit) = estimate(kind, &set) else { break };
        let (new_mask, new_count, _) = consensus(&refit, pairs, config.inlier_threshold);
        if new_count < count {
            break;
        }
        let stable = new_mask == mask;
        model = refit;
        mask = new_mask;
        count = new_count;
        if stable {
            break;
        }
    }
    Ok(RansacResult {
        model,
        inliers: mask,
        iterations,
    })
}
