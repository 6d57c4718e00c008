//! Planar transforms, robust estimation, rational function models and
//! resampling.

pub mod models;
pub mod ransac;
pub mod rpc;
pub mod warp;

pub use models::{
    estimate, estimate_affine, estimate_poly2, estimate_projective, rms_residual, AffineTransform,
    GeometricModel, ModelKind, PointPair, Poly2Transform, ProjectiveTransform,
};
pub use ransac::{ransac, RansacConfig, RansacResult};
pub use rpc::{
    affine_bias_fit, local_affine_from_rfm, rfm_forward, rfm_inverse, AffineBias, GroundControlPoint,
    GroundPoint, LocalAffine, RpcModel,
};
pub use warp::{warp_model, warp_resample, InverseMap};
