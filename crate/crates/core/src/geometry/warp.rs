use rayon::prelude::*;

use super::models::GeometricModel;
use crate::error::{Error, Result};
use crate::raster::{bilinear_sample, Raster, FILL_VALUE};

/// Maps an output pixel back to the source image.
pub trait InverseMap: Sync {
    fn to_source(&self, x: f64, y: f64) -> Option<(f64, f64)>;
}

/// The model maps source to output; resampling walks it backwards.
impl InverseMap for GeometricModel {
    fn to_source(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.invert_point(x, y)
    }
}

impl<F> InverseMap for F
where
    F: Fn(f64, f64) -> Option<(f64, f64)> + Sync,
{
    fn to_source(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self(x, y)
    }
}

/// Resamples `image` onto an `out_w x out_h` grid by bilinear lookup at the
/// preimage of every output pixel. Pixels without a preimage inside the
/// source get the fill value.
pub fn warp_resample(image: &Raster, map: &dyn InverseMap, out_w: usize, out_h: usize) -> Result<Raster> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidParameter(format!("output size {out_w}x{out_h}")));
    }
    let rows: Vec<Vec<f32>> = (0..out_h)
        .into_par_iter()
        .map(|y| {
            (0..out_w)
                .map(|x| match map.to_source(x as f64, y as f64) {
                    Some((sx, sy)) => bilinear_sample(image, sx, sy).value as f32,
                    None => FILL_VALUE as f32,
                })
                .collect()
        })
        .collect();
    Raster::new(out_w, out_h, rows.concat()).map(|r| r.with_bit_depth_origin(image.bit_depth_origin()))
}

/// Resamples through a model, refusing transforms without a usable inverse.
pub fn warp_model(image: &Raster, model: &GeometricModel, out_w: usize, out_h: usize) -> Result<Raster> {
    if let GeometricModel::Affine(_) | GeometricModel::Projective(_) = model {
        if model.inverse().is_none() {
            return Err(Error::Degenerate("transform is not invertible".into()));
        }
    }
    warp_resample(image, model, out_w, out_h)
}
