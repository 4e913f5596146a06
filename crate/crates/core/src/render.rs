//! Differentiable MPI rendering.
//!
//! Each plane is inverse-warped into the target view with its plane-induced
//! homography and bilinear resampling, then the warped planes are composited
//! back to front with the straight-alpha over operator
//! `C ← c_d·α_d + C·(1 − α_d)`.
//!
//! Target pixels whose source location falls outside the plane are transparent
//! black. Pixels where every plane is transparent render black; the
//! accumulated alpha is returned so callers can matte them.
//!
//! The forward pass keeps the bilinear taps, the warped planes, the composite
//! below each plane and the transmittance above each plane. The backward pass
//! uses them to produce exact adjoints with respect to source plane colors and
//! alphas. Cameras and depths are treated as constants.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::geometry::{apply_homography, inverse_homography, Camera, DepthPlanes};
use crate::mpi::MultiplaneImage;
use crate::raster::Image;
use crate::{Error, Real, Result};

/// A plane resampled into the target view.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedPlane<T = f32> {
    pub color: Image<T>,
    pub alpha: Image<T>,
    pub valid: Vec<bool>,
}

/// Gradients of a scalar loss with respect to each source plane, back to front.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients<T = f32> {
    pub d_color: Vec<Image<T>>,
    pub d_alpha: Vec<Image<T>>,
}

impl<T: Real> RenderGradients<T> {
    pub fn zeros_like(mpi: &MultiplaneImage<T>) -> Self {
        let (w, h) = (mpi.width(), mpi.height());
        Self {
            d_color: (0..mpi.count()).map(|_| Image::new(w, h, 3)).collect(),
            d_alpha: (0..mpi.count()).map(|_| Image::new(w, h, 1)).collect(),
        }
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &RenderGradients<T>) {
        for (a, b) in self.d_color.iter_mut().zip(&other.d_color) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += *y);
        }
        for (a, b) in self.d_alpha.iter_mut().zip(&other.d_alpha) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_color.iter().chain(&self.d_alpha).all(|i| i.is_finite())
    }
}

/// Bilinear footprint of one target pixel in the source plane.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    i00: u32,
    i10: u32,
    i01: u32,
    i11: u32,
    wx: T,
    wy: T,
}

const INVALID: u32 = u32::MAX;

impl<T: Real> Tap<T> {
    fn invalid() -> Self {
        Self {
            i00: INVALID,
            i10: INVALID,
            i01: INVALID,
            i11: INVALID,
            wx: T::zero(),
            wy: T::zero(),
        }
    }

    #[inline]
    fn is_valid(&self) -> bool {
        self.i00 != INVALID
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let (wx, wy) = (self.wx, self.wy);
        let one = T::one();
        [(one - wx) * (one - wy), wx * (one - wy), (one - wx) * wy, wx * wy]
    }

    #[inline]
    fn sample(&self, src: &[T]) -> T {
        let w = self.weights();
        w[0] * src[self.i00 as usize]
            + w[1] * src[self.i10 as usize]
            + w[2] * src[self.i01 as usize]
            + w[3] * src[self.i11 as usize]
    }

    #[inline]
    fn scatter(&self, dst: &mut [T], g: T) {
        let w = self.weights();
        dst[self.i00 as usize] += w[0] * g;
        dst[self.i10 as usize] += w[1] * g;
        dst[self.i01 as usize] += w[2] * g;
        dst[self.i11 as usize] += w[3] * g;
    }
}

// Sample positions this close to an integer are snapped, so warps that are
// the identity up to rounding reproduce pixels exactly.
const SNAP: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

/// Split a coordinate into a base index and fractional weight. A sample is in
/// bounds when every corner with non-zero weight lies inside the plane.
fn axis_tap(x: f64, len: usize) -> Option<(usize, usize, f64)> {
    if !(x >= 0.0 && x <= (len - 1) as f64) {
        return None;
    }
    if len == 1 {
        return Some((0, 0, 0.0));
    }
    let base = (x.floor() as usize).min(len - 2);
    Some((base, base + 1, x - base as f64))
}

fn compute_taps<T: Real>(
    h: &Matrix3<f64>,
    src_w: usize,
    src_h: usize,
    tgt_w: usize,
    tgt_h: usize,
) -> Vec<Tap<T>> {
    let mut taps = Vec::with_capacity(tgt_w * tgt_h);
    for v in 0..tgt_h {
        for u in 0..tgt_w {
            let (uf, vf) = (u as f64, v as f64);
            let w = h[(2, 0)] * uf + h[(2, 1)] * vf + h[(2, 2)];
            let (xs, ys) = apply_homography(h, uf, vf);
            let tap = if w > 0.0 && xs.is_finite() && ys.is_finite() {
                match (axis_tap(snap(xs), src_w), axis_tap(snap(ys), src_h)) {
                    (Some((x0, x1, wx)), Some((y0, y1, wy))) => Tap {
                        i00: (y0 * src_w + x0) as u32,
                        i10: (y0 * src_w + x1) as u32,
                        i01: (y1 * src_w + x0) as u32,
                        i11: (y1 * src_w + x1) as u32,
                        wx: T::lit(wx),
                        wy: T::lit(wy),
                    },
                    _ => Tap::invalid(),
                }
            } else {
                Tap::invalid()
            };
            taps.push(tap);
        }
    }
    taps
}

fn apply_taps<T: Real>(
    taps: &[Tap<T>],
    color: &Image<T>,
    alpha: &Image<T>,
    tgt_w: usize,
    tgt_h: usize,
) -> WarpedPlane<T> {
    let channels = color.channels();
    let mut out_color = Image::new(tgt_w, tgt_h, channels);
    let mut out_alpha = Image::new(tgt_w, tgt_h, 1);
    let valid: Vec<bool> = taps.iter().map(Tap::is_valid).collect();
    for c in 0..channels {
        let src = color.channel(c);
        let dst = out_color.channel_mut(c);
        for (p, tap) in taps.iter().enumerate() {
            if tap.is_valid() {
                dst[p] = tap.sample(src);
            }
        }
    }
    let src = alpha.channel(0);
    let dst = out_alpha.channel_mut(0);
    for (p, tap) in taps.iter().enumerate() {
        if tap.is_valid() {
            dst[p] = tap.sample(src);
        }
    }
    WarpedPlane {
        color: out_color,
        alpha: out_alpha,
        valid,
    }
}

/// Resample a plane into a `tgt_w × tgt_h` view. `h` maps target pixels to
/// source pixels.
pub fn warp_plane<T: Real>(
    color: &Image<T>,
    alpha: &Image<T>,
    h: &Matrix3<f64>,
    tgt_w: usize,
    tgt_h: usize,
) -> Result<WarpedPlane<T>> {
    if alpha.channels() != 1 || color.width() != alpha.width() || color.height() != alpha.height() {
        return Err(Error::ShapeMismatch("plane color and alpha sizes differ".into()));
    }
    if tgt_w == 0 || tgt_h == 0 {
        return Err(Error::ShapeMismatch("target size must be at least 1x1".into()));
    }
    let taps = compute_taps::<T>(h, color.width(), color.height(), tgt_w, tgt_h);
    Ok(apply_taps(&taps, color, alpha, tgt_w, tgt_h))
}

/// Composite warped planes given back to front.
pub fn composite<T: Real>(planes: &[WarpedPlane<T>]) -> Result<Image<T>> {
    Ok(composite_inner(planes, false)?.0)
}

/// Returns the composite, the accumulated alpha, and optionally the composite
/// just below each plane.
fn composite_inner<T: Real>(
    planes: &[WarpedPlane<T>],
    keep_partials: bool,
) -> Result<(Image<T>, Image<T>, Vec<Image<T>>)> {
    let first = planes.first().ok_or(Error::EmptyPlaneList)?;
    let (w, h, ch) = (first.color.width(), first.color.height(), first.color.channels());
    let mut out = Image::new(w, h, ch);
    let mut acc = Image::new(w, h, 1);
    let mut partials = Vec::new();
    for p in planes {
        if p.color.width() != w || p.color.height() != h || p.color.channels() != ch || p.alpha.width() != w || p.alpha.height() != h {
            return Err(Error::ShapeMismatch("warped planes differ in size".into()));
        }
        if keep_partials {
            partials.push(out.clone());
        }
        let a = p.alpha.channel(0);
        for c in 0..ch {
            let src = p.color.channel(c);
            for (i, dst) in out.channel_mut(c).iter_mut().enumerate() {
                *dst = src[i] * a[i] + *dst * (T::one() - a[i]);
            }
        }
        for (i, dst) in acc.channel_mut(0).iter_mut().enumerate() {
            *dst = a[i] + *dst * (T::one() - a[i]);
        }
    }
    Ok((out, acc, partials))
}

/// Everything the backward pass needs from a forward render.
#[derive(Clone, Debug)]
pub struct RenderCache<T = f32> {
    target: Camera,
    ref_camera: Camera,
    plane_count: usize,
    taps: Vec<Vec<Tap<T>>>,
    warped: Vec<WarpedPlane<T>>,
    /// Composite below plane `d`.
    below: Vec<Image<T>>,
    /// Product of `1 − α` over the planes in front of plane `d`.
    transmittance: Vec<Image<T>>,
}

impl<T: Real> RenderCache<T> {
    pub fn target(&self) -> &Camera {
        &self.target
    }

    pub fn warped(&self) -> &[WarpedPlane<T>] {
        &self.warped
    }
}

#[derive(Clone, Debug)]
pub struct Rendered<T = f32> {
    pub image: Image<T>,
    pub accumulated_alpha: Image<T>,
    pub cache: RenderCache<T>,
}

/// Homography for plane `d` of `mpi` seen from `target`.
pub fn plane_homography<T: Real>(mpi: &MultiplaneImage<T>, target: &Camera, d: usize) -> Result<Matrix3<f64>> {
    if target == mpi.ref_camera() {
        return Ok(Matrix3::identity());
    }
    inverse_homography(mpi.ref_camera(), target, mpi.depth_planes().depth(d))
}

/// Render `mpi` from `target`.
pub fn render_view<T: Real>(mpi: &MultiplaneImage<T>, target: &Camera) -> Result<Rendered<T>> {
    target.intrinsics.validate()?;
    let (tw, th) = (target.width(), target.height());
    let (sw, sh) = (mpi.width(), mpi.height());
    let homographies = (0..mpi.count())
        .map(|d| plane_homography(mpi, target, d))
        .collect::<Result<Vec<_>>>()?;

    let (taps, warped): (Vec<_>, Vec<_>) = homographies
        .par_iter()
        .zip(mpi.planes().par_iter())
        .map(|(h, plane)| {
            let taps = compute_taps::<T>(h, sw, sh, tw, th);
            let warped = apply_taps(&taps, &plane.color, &plane.alpha, tw, th);
            (taps, warped)
        })
        .unzip();

    let (image, accumulated_alpha, below) = composite_inner(&warped, true)?;

    let mut transmittance = vec![Image::new(tw, th, 1); warped.len()];
    let mut running = Image::filled(tw, th, 1, T::one());
    for d in (0..warped.len()).rev() {
        transmittance[d] = running.clone();
        let a = warped[d].alpha.channel(0);
        for (i, t) in running.channel_mut(0).iter_mut().enumerate() {
            *t *= T::one() - a[i];
        }
    }

    Ok(Rendered {
        image,
        accumulated_alpha,
        cache: RenderCache {
            target: *target,
            ref_camera: *mpi.ref_camera(),
            plane_count: mpi.count(),
            taps,
            warped,
            below,
            transmittance,
        },
    })
}

/// Adjoint of [`render_view`]: pulls `d_output` (gradient with respect to the
/// rendered image) back to source plane colors and alphas.
pub fn render_backward<T: Real>(
    mpi: &MultiplaneImage<T>,
    cache: &RenderCache<T>,
    d_output: &Image<T>,
) -> Result<RenderGradients<T>> {
    if cache.plane_count != mpi.count() || &cache.ref_camera != mpi.ref_camera() {
        return Err(Error::CacheMismatch(format!(
            "cache built for {} planes of a different reference view",
            cache.plane_count
        )));
    }
    let (tw, th) = (cache.target.width(), cache.target.height());
    if d_output.width() != tw || d_output.height() != th || d_output.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {}x{}x{} vs render 3x{th}x{tw}",
            d_output.channels(),
            d_output.height(),
            d_output.width()
        )));
    }
    let (sw, sh) = (mpi.width(), mpi.height());

    let (d_color, d_alpha): (Vec<_>, Vec<_>) = (0..cache.plane_count)
        .into_par_iter()
        .map(|d| {
            let warped = &cache.warped[d];
            let below = &cache.below[d];
            let trans = cache.transmittance[d].channel(0);
            let a = warped.alpha.channel(0);
            let taps = &cache.taps[d];

            let mut g_color = Image::<T>::new(sw, sh, 3);
            let mut g_alpha = Image::<T>::new(sw, sh, 1);

            let mut g_a_warped = vec![T::zero(); tw * th];
            for c in 0..3 {
                let g = d_output.channel(c);
                let col = warped.color.channel(c);
                let prev = below.channel(c);
                let dst = g_color.channel_mut(c);
                for (p, tap) in taps.iter().enumerate() {
                    if !tap.is_valid() {
                        continue;
                    }
                    let gt = g[p] * trans[p];
                    tap.scatter(dst, gt * a[p]);
                    g_a_warped[p] += gt * (col[p] - prev[p]);
                }
            }
            let dst = g_alpha.channel_mut(0);
            for (p, tap) in taps.iter().enumerate() {
                if tap.is_valid() {
                    tap.scatter(dst, g_a_warped[p]);
                }
            }
            (g_color, g_alpha)
        })
        .unzip();

    Ok(RenderGradients { d_color, d_alpha })
}

/// Bilinear taps of every plane of an MPI for one target camera. Taps depend
/// only on the cameras and plane depths, so a table can be reused while plane
/// contents change, e.g. across optimization steps.
#[derive(Clone, Debug)]
pub struct WarpTable<T = f32> {
    target: Camera,
    ref_camera: Camera,
    source_size: (usize, usize),
    taps: Vec<Vec<Tap<T>>>,
}

impl<T: Real> WarpTable<T> {
    pub fn new(ref_camera: &Camera, depth_planes: &DepthPlanes, target: &Camera) -> Result<Self> {
        target.intrinsics.validate()?;
        let (sw, sh) = (ref_camera.width(), ref_camera.height());
        let (tw, th) = (target.width(), target.height());
        let taps = depth_planes
            .depths()
            .par_iter()
            .map(|&depth| {
                let h = if target == ref_camera {
                    Matrix3::identity()
                } else {
                    inverse_homography(ref_camera, target, depth)?
                };
                Ok(compute_taps::<T>(&h, sw, sh, tw, th))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            target: *target,
            ref_camera: *ref_camera,
            source_size: (sw, sh),
            taps,
        })
    }

    pub fn target(&self) -> &Camera {
        &self.target
    }
}

/// Render through `table` and immediately back-propagate a per-pixel
/// objective.
///
/// `upstream(p, rgb)` receives each rendered pixel (flat index `p`) and
/// returns the gradient of the objective with respect to that pixel. This
/// only suits objectives that decompose over pixels, such as L1; it avoids
/// materializing warped planes and partial composites.
pub fn render_with_adjoint<T: Real>(
    mpi: &MultiplaneImage<T>,
    table: &WarpTable<T>,
    upstream: impl FnMut(usize, [T; 3]) -> [T; 3],
) -> Result<RenderGradients<T>> {
    let mut grads = RenderGradients::zeros_like(mpi);
    render_with_adjoint_into(mpi, table, &mut grads, upstream)?;
    Ok(grads)
}

/// [`render_with_adjoint`] adding into existing gradient buffers.
pub fn render_with_adjoint_into<T: Real>(
    mpi: &MultiplaneImage<T>,
    table: &WarpTable<T>,
    grads: &mut RenderGradients<T>,
    mut upstream: impl FnMut(usize, [T; 3]) -> [T; 3],
) -> Result<()> {
    if table.taps.len() != mpi.count()
        || &table.ref_camera != mpi.ref_camera()
        || table.source_size != (mpi.width(), mpi.height())
    {
        return Err(Error::CacheMismatch("warp table built for a different MPI".into()));
    }
    let n_planes = mpi.count();
    if grads.d_color.len() != n_planes
        || grads.d_alpha.len() != n_planes
        || grads.d_alpha.iter().any(|g| g.width() != mpi.width() || g.height() != mpi.height())
    {
        return Err(Error::ShapeMismatch("gradient buffers do not match the MPI".into()));
    }
    let (one, zero) = (T::one(), T::zero());
    let (tw, th) = (table.target.width(), table.target.height());
    // Work one target row at a time, plane-major inside the row, so each
    // inner loop streams through a single source plane.
    let mut alpha = vec![zero; n_planes * tw];
    let mut color = vec![[zero; 3]; n_planes * tw];
    let mut below = vec![[zero; 3]; n_planes * tw];
    let mut out = vec![[zero; 3]; tw];
    let mut g = vec![[zero; 3]; tw];
    for y in 0..th {
        let row = y * tw;
        out.iter_mut().for_each(|o| *o = [zero; 3]);
        for (d, plane) in mpi.planes().iter().enumerate() {
            let src = [plane.color.channel(0), plane.color.channel(1), plane.color.channel(2)];
            let src_a = plane.alpha.channel(0);
            let taps = &table.taps[d][row..row + tw];
            let base = d * tw;
            for (x, tap) in taps.iter().enumerate() {
                let o = &mut out[x];
                below[base + x] = *o;
                if tap.is_valid() {
                    let a = tap.sample(src_a);
                    let c = [tap.sample(src[0]), tap.sample(src[1]), tap.sample(src[2])];
                    for k in 0..3 {
                        o[k] = c[k] * a + o[k] * (one - a);
                    }
                    alpha[base + x] = a;
                    color[base + x] = c;
                } else {
                    alpha[base + x] = zero;
                }
            }
        }
        for x in 0..tw {
            g[x] = upstream(row + x, out[x]);
        }
        // g now holds the gradient times the transmittance in front of plane d
        for d in (0..n_planes).rev() {
            let taps = &table.taps[d][row..row + tw];
            let base = d * tw;
            let (dc, da) = (&mut grads.d_color[d], &mut grads.d_alpha[d]);
            for (x, tap) in taps.iter().enumerate() {
                if !tap.is_valid() {
                    continue;
                }
                let gt = g[x];
                let a = alpha[base + x];
                let (c, b) = (color[base + x], below[base + x]);
                let g_a = gt[0] * (c[0] - b[0]) + gt[1] * (c[1] - b[1]) + gt[2] * (c[2] - b[2]);
                for (k, gk) in gt.iter().enumerate() {
                    tap.scatter(dc.channel_mut(k), *gk * a);
                }
                tap.scatter(da.channel_mut(0), g_a);
                g[x] = gt.map(|v| v * (one - a));
            }
        }
    }
    Ok(())
}
