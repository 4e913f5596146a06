//! Cameras, rigid poses, disparity-spaced depth planes and plane homographies.
//!
//! Pixel coordinates are `(u, v) = (column, row)` with the origin at the center
//! of the top-left pixel, so integer coordinates address pixel centers. All
//! geometry is `f64`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be at least 1x1".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Intrinsics for the same camera resampled to `width × height`.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            (self.cx + 0.5) * sx - 0.5,
            (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        )
    }
}

/// A rigid transform `x ↦ R x + t`.
///
/// Which frames it maps between is stated at each use; [`Camera`] stores the
/// world-from-camera transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-9;
// Rotations read from text files carry ~9 significant digits; anything this
// close to SO(3) is re-projected onto it.
const REPROJECT_TOL: f64 = 1e-5;

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates the rotation, snapping near-orthonormal matrices onto SO(3).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("pose has non-finite entries".into()));
        }
        let err = orthonormality_error(&rotation);
        let rotation = if err <= ORTHONORMAL_TOL {
            rotation
        } else if err <= REPROJECT_TOL {
            nearest_rotation(&rotation)
        } else {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (error {err:.3e})"
            )));
        };
        if rotation.determinant() < 0.0 {
            return Err(Error::InvalidCamera("rotation has determinant -1".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Largest elementwise deviation from the identity transform.
    pub fn distance_from_identity(&self) -> f64 {
        let r = (self.rotation - Matrix3::identity()).abs().max();
        let t = self.translation.abs().max();
        r.max(t)
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    u * fix * vt
}

/// Intrinsics plus world-from-camera pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, pose })
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// World point into camera coordinates.
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation.transpose() * (world - self.pose.translation)
    }

    /// Pixel coordinates and depth of a world point; `None` behind the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let p = self.to_camera(world);
        if p.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
    }

    /// World-space ray `(origin, direction)` through pixel `(u, v)`; the
    /// direction has unit camera-space depth.
    pub fn ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let k = &self.intrinsics;
        let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        (self.pose.translation, self.pose.rotation * d_cam)
    }

    /// Transform taking this camera's coordinates into `other`'s coordinates.
    pub fn relative_to(&self, other: &Camera) -> Pose {
        other.pose.inverse().compose(&self.pose)
    }

    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Camera {
        Camera {
            intrinsics,
            pose: self.pose,
        }
    }

    pub fn with_center(&self, center: Vector3<f64>) -> Camera {
        Camera {
            intrinsics: self.intrinsics,
            pose: Pose {
                rotation: self.pose.rotation,
                translation: center,
            },
        }
    }
}

/// Fronto-parallel plane depths, stored far to near and spaced uniformly in
/// disparity.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthPlanes {
    depths: Vec<f64>,
    near: f64,
    far: f64,
}

impl DepthPlanes {
    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn depth(&self, k: usize) -> f64 {
        self.depths[k]
    }

    pub fn count(&self) -> usize {
        self.depths.len()
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn disparities(&self) -> Vec<f64> {
        self.depths.iter().map(|d| 1.0 / d).collect()
    }

    /// Index of the plane whose disparity is closest to `1 / depth`.
    pub fn nearest_index(&self, depth: f64) -> usize {
        let target = 1.0 / depth;
        let mut best = 0;
        for (k, d) in self.depths.iter().enumerate() {
            if (1.0 / d - target).abs() < (1.0 / self.depths[best] - target).abs() {
                best = k;
            }
        }
        best
    }
}

/// `count` planes between `far` and `near`, equally spaced in inverse depth.
pub fn make_depth_planes(near: f64, far: f64, count: usize) -> Result<DepthPlanes> {
    if !(near > 0.0 && far > near && far.is_finite()) {
        return Err(Error::InvalidRange { near, far });
    }
    if count < 2 {
        return Err(Error::InvalidCount(count));
    }
    let (disp_far, disp_near) = (1.0 / far, 1.0 / near);
    let last = (count - 1) as f64;
    let depths = (0..count)
        .map(|k| match k {
            0 => far,
            k if k == count - 1 => near,
            k => 1.0 / (disp_far + (k as f64 / last) * (disp_near - disp_far)),
        })
        .collect();
    Ok(DepthPlanes { depths, near, far })
}

/// Homography taking target-view pixels to source-view pixels for the plane
/// `z = depth` in the source camera frame.
///
/// With `(R, t)` the source-to-target rigid motion, plane normal `n = [0,0,1]`
/// (a row vector) and offset `a = -depth`:
///
/// `H = K_s (Rᵀ + Rᵀ t n Rᵀ / (a − n Rᵀ t)) K_t⁻¹`, scaled so `H[2][2] = 1`.
pub fn inverse_homography(src: &Camera, tgt: &Camera, depth: f64) -> Result<Matrix3<f64>> {
    let rel = src.relative_to(tgt);
    let rt = rel.rotation.transpose();
    let rt_t = rt * rel.translation;
    let a = -depth;
    let denom = a - rt_t.z;
    if denom.abs() < 1e-12 {
        return Err(Error::DegeneratePlane { depth });
    }
    // n Rᵀ selects the third row of Rᵀ.
    let n_rt = rt.row(2);
    let middle = rt + (rt_t * n_rt) / denom;
    let mut h = src.intrinsics.matrix() * middle * tgt.intrinsics.inverse_matrix();
    let h22 = h[(2, 2)];
    if h22.is_finite() && h22.abs() > 1e-300 {
        h /= h22;
    }
    Ok(h)
}

#[inline]
pub fn apply_homography(h: &Matrix3<f64>, u: f64, v: f64) -> (f64, f64) {
    let x = h[(0, 0)] * u + h[(0, 1)] * v + h[(0, 2)];
    let y = h[(1, 0)] * u + h[(1, 1)] * v + h[(1, 2)];
    let w = h[(2, 0)] * u + h[(2, 1)] * v + h[(2, 2)];
    (x / w, y / w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(pose: Pose) -> Camera {
        Camera::new(Intrinsics::new(100.0, 110.0, 31.5, 23.5, 64, 48).unwrap(), pose).unwrap()
    }

    #[test]
    fn depth_planes_two_endpoints() {
        let p = make_depth_planes(1.0, 100.0, 2).unwrap();
        assert_eq!(p.depths(), &[100.0, 1.0]);
    }

    #[test]
    fn depth_planes_three() {
        let p = make_depth_planes(1.0, 100.0, 3).unwrap();
        assert_eq!(p.depth(0), 100.0);
        assert!((p.depth(1) - 1.0 / 0.505).abs() < 1e-12);
        assert!((p.depth(1) - 1.980198).abs() < 1e-6);
        assert_eq!(p.depth(2), 1.0);
    }

    #[test]
    fn depth_planes_default_stack() {
        let p = make_depth_planes(1.0, 100.0, 32).unwrap();
        assert_eq!(p.count(), 32);
        assert_eq!(p.depth(0), 100.0);
        assert_eq!(p.depth(31), 1.0);
        let disp = p.disparities();
        for w in disp.windows(2) {
            assert!((w[1] - w[0] - 0.99 / 31.0).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_plane_errors() {
        assert!(matches!(make_depth_planes(2.0, 1.0, 4), Err(Error::InvalidRange { .. })));
        assert!(matches!(make_depth_planes(1.0, 1.0, 4), Err(Error::InvalidRange { .. })));
        assert!(matches!(make_depth_planes(0.0, 1.0, 4), Err(Error::InvalidRange { .. })));
        assert!(matches!(make_depth_planes(1.0, 10.0, 1), Err(Error::InvalidCount(1))));
    }

    #[test]
    fn nearest_plane_in_disparity() {
        let p = make_depth_planes(1.0, 100.0, 3).unwrap();
        assert_eq!(p.nearest_index(1.1), 2);
        assert_eq!(p.nearest_index(2.0), 1);
        assert_eq!(p.nearest_index(1000.0), 0);
    }

    #[test]
    fn same_camera_gives_identity() {
        let c = cam(Pose::from_axis_angle(Vector3::new(0.3, 1.0, 0.2), 0.4, Vector3::new(1.0, 2.0, 3.0)));
        for d in [1.0, 7.5, 100.0] {
            let h = inverse_homography(&c, &c, d).unwrap();
            assert!((h - Matrix3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn x_translation_is_horizontal_shift() {
        let (b, d) = (0.25, 5.0);
        let src = cam(Pose::identity());
        let tgt = cam(Pose::from_translation(Vector3::new(b, 0.0, 0.0)));
        let h = inverse_homography(&src, &tgt, d).unwrap();
        let mut expected = Matrix3::identity();
        expected[(0, 2)] = 100.0 * b / d;
        assert!((h - expected).abs().max() < 1e-12, "{h}");
    }

    #[test]
    fn z_rotation_is_image_rotation() {
        let theta = 0.3;
        let src = cam(Pose::identity());
        let tgt = cam(Pose::from_axis_angle(Vector3::z(), theta, Vector3::zeros()));
        let h = inverse_homography(&src, &tgt, 4.0).unwrap();
        // Point projection oracle: a target pixel back-projected onto the plane
        // and reprojected into the source.
        for (u, v) in [(0.0, 0.0), (50.0, 10.0), (31.5, 23.5), (60.0, 47.0)] {
            let (o, dir) = tgt.ray(u, v);
            let s = (4.0 - o.z) / dir.z;
            let (us, vs, _) = src.project(&(o + dir * s)).unwrap();
            let (hu, hv) = apply_homography(&h, u, v);
            assert!((hu - us).abs() < 1e-9 && (hv - vs).abs() < 1e-9);
        }
        // Principal point is a fixed point of a rotation about the optical axis
        // when fx = fy; here fx != fy so just check the depth independence.
        let h2 = inverse_homography(&src, &tgt, 60.0).unwrap();
        assert!((h - h2).abs().max() < 1e-10);
    }

    #[test]
    fn camera_on_plane_is_degenerate() {
        let src = cam(Pose::identity());
        let tgt = cam(Pose::from_translation(Vector3::new(0.0, 0.0, 2.0)));
        assert!(matches!(
            inverse_homography(&src, &tgt, 2.0),
            Err(Error::DegeneratePlane { .. })
        ));
    }

    #[test]
    fn pose_round_trip() {
        let p = Pose::from_axis_angle(Vector3::new(1.0, -2.0, 0.5), 1.1, Vector3::new(0.3, -4.0, 2.0));
        assert!(p.compose(&p.inverse()).distance_from_identity() < 1e-9);
        assert!(p.inverse().compose(&p).distance_from_identity() < 1e-9);
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        let flip = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(flip, Vector3::zeros()).is_err());
    }

    #[test]
    fn pose_snaps_rounded_rotation() {
        let r = Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        let rounded = r.map(|v: f64| (v * 1e8).round() / 1e8);
        let p = Pose::new(rounded, Vector3::zeros()).unwrap();
        assert!(orthonormality_error(&p.rotation) < 1e-12);
        assert!((p.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 5.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 1.0, 1.0, 0, 4).is_err());
        let k = Intrinsics::centered(50.0, 64, 32).unwrap();
        assert_eq!((k.cx, k.cy), (31.5, 15.5));
        let half = k.resized(32, 16).unwrap();
        assert_eq!((half.fx, half.cx, half.cy), (25.0, 15.5, 7.5));
        assert!((k.matrix() * k.inverse_matrix() - Matrix3::identity()).abs().max() < 1e-15);
    }
}
