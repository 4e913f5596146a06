//! Multiplane image (MPI) scene representation for stereo view extrapolation.
//!
//! An MPI is a stack of fronto-parallel RGBA planes placed at fixed depths in
//! a reference camera frame. Novel views are produced by warping every plane
//! into the target camera with a plane-induced homography and compositing the
//! warped planes back-to-front with the over operator. Because both steps are
//! differentiable with respect to plane colors and alphas, an MPI can be fitted
//! directly to a handful of posed images by gradient descent.
//!
//! Module map:
//!
//! * [`geometry`]: intrinsics, poses, disparity-spaced depth planes, plane homographies.
//! * [`mpi`]: the MPI data model and the color parameterizations that produce it.
//! * [`render`]: warping, compositing and the matching analytic backward pass.
//! * [`psv`]: plane-sweep volumes and photo-consistency costs.
//! * [`fit`]: per-scene fitting with an L1 photometric objective and Adam.
//! * [`dataset`]: posed-sequence normalization, filtering and triplet sampling.
//! * [`metrics`]: PSNR and SSIM.
//! * [`oracle`]: synthetic layered scenes with a brute-force ray-cast renderer.
//! * [`check`]: finite-difference and cross-renderer validation used by `selfcheck`.
//! * [`io`]: PNG/PPM images, MPI directories, atomic file writes.
//!
//! The `stereomag` binary wraps these modules in a command-line interface.

pub mod check;
pub mod dataset;
mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod mpi;
pub mod oracle;
pub mod psv;
pub mod raster;
pub mod render;

pub use error::{Error, Result};
pub use geometry::{Camera, DepthPlanes, Intrinsics, Pose};
pub use mpi::{ColorVariant, MpiParams, MultiplaneImage};
pub use raster::Image;

use std::fmt::Debug;

/// Scalar type for image buffers and the differentiable pipeline.
///
/// Everything that touches pixels is generic so the same code runs in `f32`
/// for fitting and in `f64` for finite-difference gradient checks.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    fn lit(x: f64) -> Self;
}

impl Real for f32 {
    #[inline(always)]
    fn lit(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    #[inline(always)]
    fn lit(x: f64) -> Self {
        x
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub(crate) fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}
