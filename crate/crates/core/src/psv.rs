//! Plane-sweep volumes: a second view reprojected onto every depth plane of
//! the reference camera.

use rayon::prelude::*;

use crate::geometry::{inverse_homography, Camera, DepthPlanes};
use crate::raster::Image;
use crate::render::warp_plane;
use crate::{Error, Real, Result};

/// Cost assigned to samples that fall outside the second view. It exceeds any
/// achievable mean absolute color difference between `[0, 1]` images.
pub const INVALID_COST: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct PlaneSweepVolume<T = f32> {
    pub slices: Vec<Image<T>>,
    pub valid: Vec<Vec<bool>>,
    pub depth_planes: DepthPlanes,
    pub ref_camera: Camera,
}

impl<T: Real> PlaneSweepVolume<T> {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

/// Reproject `image` (seen by `camera`) into `ref_camera` at every depth plane.
pub fn build_psv<T: Real>(
    image: &Image<T>,
    camera: &Camera,
    ref_camera: &Camera,
    depth_planes: &DepthPlanes,
) -> Result<PlaneSweepVolume<T>> {
    if image.width() != camera.width() || image.height() != camera.height() {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs camera {}x{}",
            image.width(),
            image.height(),
            camera.width(),
            camera.height()
        )));
    }
    let opaque = Image::filled(image.width(), image.height(), 1, T::one());
    let (w, h) = (ref_camera.width(), ref_camera.height());
    let slices = depth_planes
        .depths()
        .par_iter()
        .map(|&depth| {
            // Reference pixels → pixels of the second view for the plane that is
            // fronto-parallel to the reference camera.
            let h_mat = if camera == ref_camera {
                nalgebra::Matrix3::identity()
            } else {
                inverse_homography(ref_camera, camera, depth)?
                    .try_inverse()
                    .ok_or(Error::DegeneratePlane { depth })?
            };
            warp_plane(image, &opaque, &h_mat, w, h)
        })
        .collect::<Result<Vec<_>>>()?;
    let (slices, valid) = slices.into_iter().map(|p| (p.color, p.valid)).unzip();
    Ok(PlaneSweepVolume {
        slices,
        valid,
        depth_planes: depth_planes.clone(),
        ref_camera: *ref_camera,
    })
}

/// Per-plane, per-pixel mean absolute color difference between `reference`
/// and each slice, laid out `D × H × W`. Invalid samples get [`INVALID_COST`].
pub fn psv_agreement_map<T: Real>(reference: &Image<T>, psv: &PlaneSweepVolume<T>) -> Result<Image<T>> {
    let (w, h) = (reference.width(), reference.height());
    let n = w * h;
    let ch = reference.channels();
    let mut cost = Image::new(w, h, psv.len());
    for (d, slice) in psv.slices.iter().enumerate() {
        reference.expect_shape(slice, "psv slice")?;
        let valid = &psv.valid[d];
        let out = cost.channel_mut(d);
        for (p, o) in out.iter_mut().enumerate().take(n) {
            *o = if valid[p] {
                let mut s = T::zero();
                for c in 0..ch {
                    s += (reference.channel(c)[p] - slice.channel(c)[p]).abs();
                }
                s / T::lit(ch as f64)
            } else {
                T::lit(INVALID_COST)
            };
        }
    }
    Ok(cost)
}

/// Index of the lowest-cost plane at every pixel (ties go to the farther plane).
pub fn best_plane<T: Real>(cost: &Image<T>) -> Vec<usize> {
    (0..cost.pixel_count())
        .map(|p| {
            let mut best = 0;
            for d in 1..cost.channels() {
                if cost.channel(d)[p] < cost.channel(best)[p] {
                    best = d;
                }
            }
            best
        })
        .collect()
}

/// Pixels whose cost varies by less than `threshold` (variance across planes)
/// have no usable depth signal.
pub fn ambiguity_mask<T: Real>(cost: &Image<T>, threshold: f64) -> Vec<bool> {
    let planes = cost.channels() as f64;
    (0..cost.pixel_count())
        .map(|p| {
            let vals: Vec<f64> = (0..cost.channels())
                .map(|d| cost.channel(d)[p].to_f64().unwrap_or(0.0))
                .collect();
            let mean = vals.iter().sum::<f64>() / planes;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / planes;
            var < threshold
        })
        .collect()
}

/// Alpha logits that place each pixel's visibility on its photo-consistent
/// planes.
///
/// The per-pixel softmax over `−cost / temperature` gives target visibility
/// weights `p_d`. Walking front to back, `α_d = p_d / (1 − Σ_{e nearer} p_e)`
/// reproduces exactly those weights under over compositing; the logits are
/// clamped to `±clamp`.
pub fn alpha_logits_from_cost<T: Real>(cost: &Image<T>, temperature: f64, clamp: f64) -> Vec<T> {
    let (n, planes) = (cost.pixel_count(), cost.channels());
    let mut out = vec![T::zero(); n * planes];
    let mut weights = vec![0.0f64; planes];
    for p in 0..n {
        let min = (0..planes)
            .map(|d| cost.channel(d)[p].to_f64().unwrap_or(INVALID_COST))
            .fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (d, w) in weights.iter_mut().enumerate() {
            let c = cost.channel(d)[p].to_f64().unwrap_or(INVALID_COST);
            *w = (-(c - min) / temperature).exp();
            total += *w;
        }
        let mut remaining = 1.0f64;
        for d in (0..planes).rev() {
            let pd = weights[d] / total;
            let alpha = if remaining > 1e-12 { (pd / remaining).min(1.0) } else { 1.0 };
            remaining -= pd;
            let a = alpha.clamp(1e-9, 1.0 - 1e-9);
            let l = (a / (1.0 - a)).ln().clamp(-clamp, clamp);
            out[d * n + p] = T::lit(l);
        }
    }
    out
}
