//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sfoc_core::descriptor::FeatureVolume;
use sfoc_core::geometry::RpcModel;
use sfoc_core::pipeline::{window_around, ControlPoint, MatchConfig};

pub fn random_volume(rng: &mut ChaCha8Rng, w: usize, h: usize, z: usize) -> FeatureVolume {
    let data = (0..w * h * z).map(|_| rng.gen::<f32>()).collect();
    FeatureVolume::new(w, h, z, data).unwrap()
}

/// Smooth, mildly non-linear RPC around a random scene centre.
pub fn random_rpc(rng: &mut ChaCha8Rng) -> RpcModel {
    let mut m = RpcModel {
        line_off: rng.gen_range(2000.0..6000.0),
        samp_off: rng.gen_range(2000.0..6000.0),
        lat_off: rng.gen_range(-60.0..60.0),
        lon_off: rng.gen_range(-170.0..170.0),
        height_off: rng.gen_range(0.0..500.0),
        line_scale: rng.gen_range(1000.0..5000.0),
        samp_scale: rng.gen_range(1000.0..5000.0),
        lat_scale: rng.gen_range(0.01..0.2),
        lon_scale: rng.gen_range(0.01..0.2),
        height_scale: rng.gen_range(100.0..1000.0),
        ..RpcModel::identity()
    };
    for c in [&mut m.num_l, &mut m.num_s] {
        for v in c.iter_mut().skip(4) {
            *v = rng.gen_range(-0.01..0.01);
        }
    }
    for c in [&mut m.den_l, &mut m.den_s] {
        for v in c.iter_mut().skip(1) {
            *v = rng.gen_range(-0.005..0.005);
        }
    }
    m.num_l[0] = rng.gen_range(-0.05..0.05);
    m.num_l[1] = rng.gen_range(-0.1..0.1);
    m.num_l[2] = -rng.gen_range(0.9..1.1);
    m.num_l[3] = rng.gen_range(-0.05..0.05);
    m.num_s[0] = rng.gen_range(-0.05..0.05);
    m.num_s[1] = rng.gen_range(0.9..1.1);
    m.num_s[2] = rng.gen_range(-0.1..0.1);
    m.num_s[3] = rng.gen_range(-0.05..0.05);
    m
}

/// Linear RPC: line grows southwards with latitude, sample eastwards with
/// longitude, 1e-4 degrees per pixel.
pub fn linear_rpc() -> RpcModel {
    let mut rpc = RpcModel::identity();
    rpc.line_off = 500.0;
    rpc.samp_off = 500.0;
    rpc.lat_off = 30.0;
    rpc.lon_off = 110.0;
    rpc.line_scale = 1000.0;
    rpc.samp_scale = 1000.0;
    rpc.lat_scale = 0.1;
    rpc.lon_scale = 0.1;
    rpc.num_l[2] = -1.0;
    rpc
}

/// Whether a control point on a pair related by an integer shift
/// (`sensed = reference` moved by `shift`) has its whole template inside
/// valid sensed data and its true match inside both the reference image and
/// the search window.
pub fn is_interior(cp: &ControlPoint, shift: (i64, i64), size: (usize, usize), cfg: &MatchConfig) -> bool {
    let half = (cfg.template_size / 2) as i64;
    let t = cfg.template_size as i64;
    let (w, h) = (size.0 as i64, size.1 as i64);
    let (sx, sy) = (cp.sensed_x.round() as i64, cp.sensed_y.round() as i64);
    let fits = |o: i64, lo: i64, hi: i64| o >= lo && o + t <= hi;
    let valid_lo = (shift.0.max(0), shift.1.max(0));
    let valid_hi = (w + shift.0.min(0), h + shift.1.min(0));
    if !(fits(sx - half, valid_lo.0, valid_hi.0) && fits(sy - half, valid_lo.1, valid_hi.1)) {
        return false;
    }
    let (rx, ry) = (sx - shift.0 - half, sy - shift.1 - half);
    match window_around((sx as f64, sy as f64), size, cfg.search_size, cfg.template_size) {
        Some(win) => {
            let (x0, y0) = (win.x0 as i64, win.y0 as i64);
            fits(rx, x0, x0 + win.width as i64) && fits(ry, y0, y0 + win.height as i64)
        }
        None => false,
    }
}
