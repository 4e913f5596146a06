//! The multiplane image and the parameterizations that produce one.
//!
//! Alphas always come from per-plane logits. Plane colors come from one of
//! five [`ColorVariant`]s, ranging from "reuse the reference image everywhere"
//! to "a free color image per plane". The blended variants compute
//!
//! `C_d = w_d ⊙ F + (1 − w_d) ⊙ B`
//!
//! where `F` is the reference image (or a fitted foreground), `B` a fitted
//! background image and `w_d` a per-plane blending weight.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::geometry::{Camera, DepthPlanes};
use crate::raster::Image;
use crate::render::RenderGradients;
use crate::{logit, sigmoid, Error, Real, Result};

/// One RGBA layer: a 3-channel color image and a 1-channel alpha image.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbaPlane<T = f32> {
    pub color: Image<T>,
    pub alpha: Image<T>,
}

/// `D` RGBA planes at fixed depths in a reference camera, stored back to front.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplaneImage<T = f32> {
    planes: Vec<RgbaPlane<T>>,
    depth_planes: DepthPlanes,
    ref_camera: Camera,
}

impl<T: Real> MultiplaneImage<T> {
    pub fn new(planes: Vec<RgbaPlane<T>>, depth_planes: DepthPlanes, ref_camera: Camera) -> Result<Self> {
        if planes.len() != depth_planes.count() {
            return Err(Error::ShapeMismatch(format!(
                "{} planes for {} depths",
                planes.len(),
                depth_planes.count()
            )));
        }
        let (w, h) = (ref_camera.width(), ref_camera.height());
        for (d, p) in planes.iter().enumerate() {
            let ok = p.color.width() == w
                && p.color.height() == h
                && p.color.channels() == 3
                && p.alpha.width() == w
                && p.alpha.height() == h
                && p.alpha.channels() == 1;
            if !ok {
                return Err(Error::ShapeMismatch(format!(
                    "plane {d} is not a {w}x{h} RGB + alpha pair"
                )));
            }
            if !p.color.in_unit_range() || !p.alpha.in_unit_range() {
                return Err(Error::ShapeMismatch(format!("plane {d} has values outside [0, 1]")));
            }
        }
        Ok(Self {
            planes,
            depth_planes,
            ref_camera,
        })
    }

    /// An MPI with every plane black and fully transparent.
    pub fn transparent(depth_planes: DepthPlanes, ref_camera: Camera) -> Self {
        let (w, h) = (ref_camera.width(), ref_camera.height());
        let planes = (0..depth_planes.count())
            .map(|_| RgbaPlane {
                color: Image::new(w, h, 3),
                alpha: Image::new(w, h, 1),
            })
            .collect();
        Self {
            planes,
            depth_planes,
            ref_camera,
        }
    }

    pub fn planes(&self) -> &[RgbaPlane<T>] {
        &self.planes
    }

    pub fn plane(&self, d: usize) -> &RgbaPlane<T> {
        &self.planes[d]
    }

    /// Mutable plane access for callers that preserve the `[0, 1]` invariant.
    pub fn plane_mut(&mut self, d: usize) -> &mut RgbaPlane<T> {
        &mut self.planes[d]
    }

    pub fn depth_planes(&self) -> &DepthPlanes {
        &self.depth_planes
    }

    pub fn ref_camera(&self) -> &Camera {
        &self.ref_camera
    }

    pub fn count(&self) -> usize {
        self.planes.len()
    }

    pub fn width(&self) -> usize {
        self.ref_camera.width()
    }

    pub fn height(&self) -> usize {
        self.ref_camera.height()
    }

    pub fn cast<U: Real>(&self) -> MultiplaneImage<U> {
        MultiplaneImage {
            planes: self
                .planes
                .iter()
                .map(|p| RgbaPlane {
                    color: p.color.cast(),
                    alpha: p.alpha.cast(),
                })
                .collect(),
            depth_planes: self.depth_planes.clone(),
            ref_camera: self.ref_camera,
        }
    }
}

/// How plane colors are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorVariant {
    /// The reference image is every plane's color; only alphas are fitted.
    None,
    /// One fitted color image shared by all planes.
    SingleImage,
    /// Reference image blended with a fitted background by per-plane weights.
    BgBlend,
    /// Like `BgBlend` with a fitted foreground replacing the reference image.
    FgBgBlend,
    /// A free color image per plane.
    AllImages,
}

impl ColorVariant {
    pub const ALL: [ColorVariant; 5] = [
        ColorVariant::None,
        ColorVariant::SingleImage,
        ColorVariant::BgBlend,
        ColorVariant::FgBgBlend,
        ColorVariant::AllImages,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ColorVariant::None => "none",
            ColorVariant::SingleImage => "single-image",
            ColorVariant::BgBlend => "bg-blend",
            ColorVariant::FgBgBlend => "fg-bg-blend",
            ColorVariant::AllImages => "all-images",
        }
    }
}

impl fmt::Display for ColorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ColorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "none" => ColorVariant::None,
            "single-image" | "single" => ColorVariant::SingleImage,
            "bg-blend" | "bgblend" => ColorVariant::BgBlend,
            "fg-bg-blend" | "fgbgblend" => ColorVariant::FgBgBlend,
            "all-images" | "allimages" => ColorVariant::AllImages,
            other => return Err(Error::InvalidConfig(format!("unknown color variant `{other}`"))),
        };
        Ok(v)
    }
}

/// Number of free values a variant needs for a `D × H × W` MPI.
pub fn parameter_count(variant: ColorVariant, depth_count: usize, height: usize, width: usize) -> usize {
    let (d, hw) = (depth_count, height * width);
    match variant {
        ColorVariant::None => hw * d,
        ColorVariant::SingleImage => hw * (d + 3),
        ColorVariant::BgBlend => hw * (2 * d + 3),
        ColorVariant::FgBgBlend => hw * (2 * d + 6),
        ColorVariant::AllImages => hw * 4 * d,
    }
}

/// Unconstrained optimization variables for one MPI.
///
/// Tensors a variant does not use are empty. Every tensor is flat and
/// row-major within a plane: `alpha` and `blend` are `D×H×W`; `background`
/// and `foreground` (and `colors` for `SingleImage`) are `3×H×W`; `colors`
/// for `AllImages` is `D×3×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct MpiParams<T = f32> {
    pub variant: ColorVariant,
    pub depth_count: usize,
    pub width: usize,
    pub height: usize,
    pub alpha: Vec<T>,
    pub blend: Vec<T>,
    pub background: Vec<T>,
    pub foreground: Vec<T>,
    pub colors: Vec<T>,
}

pub const INIT_ALPHA_LOGIT: f64 = -2.0;
pub const INIT_BLEND_LOGIT: f64 = 2.0;

impl<T: Real> MpiParams<T> {
    /// All-zero parameters of the right shapes; also the gradient container.
    pub fn zeros(variant: ColorVariant, depth_count: usize, width: usize, height: usize) -> Self {
        let hw = width * height;
        let d = depth_count;
        let z = |n: usize| vec![T::zero(); n];
        let (blend, background, foreground, colors) = match variant {
            ColorVariant::None => (0, 0, 0, 0),
            ColorVariant::SingleImage => (0, 0, 0, 3 * hw),
            ColorVariant::BgBlend => (d * hw, 3 * hw, 0, 0),
            ColorVariant::FgBgBlend => (d * hw, 3 * hw, 3 * hw, 0),
            ColorVariant::AllImages => (0, 0, 0, 3 * d * hw),
        };
        Self {
            variant,
            depth_count,
            width,
            height,
            alpha: z(d * hw),
            blend: z(blend),
            background: z(background),
            foreground: z(foreground),
            colors: z(colors),
        }
    }

    /// Fitting initialization: mostly transparent planes, blend weights near
    /// the reference image, color logits matching the reference image.
    pub fn initialize(variant: ColorVariant, reference: &Image<T>, depth_count: usize) -> Self {
        let (w, h) = (reference.width(), reference.height());
        let mut p = Self::zeros(variant, depth_count, w, h);
        p.alpha.fill(T::lit(INIT_ALPHA_LOGIT));
        p.blend.fill(T::lit(INIT_BLEND_LOGIT));
        let lo = T::lit(0.05);
        let hi = T::lit(0.95);
        let ref_logits: Vec<T> = reference.data().iter().map(|&v| logit(v.max(lo).min(hi))).collect();
        for tensor in [&mut p.background, &mut p.foreground, &mut p.colors] {
            for (i, v) in tensor.iter_mut().enumerate() {
                *v = ref_logits[i % ref_logits.len()];
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tensors in a fixed order shared by parameters and gradients.
    pub fn tensors(&self) -> [&Vec<T>; 5] {
        [&self.alpha, &self.blend, &self.background, &self.foreground, &self.colors]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 5] {
        [
            &mut self.alpha,
            &mut self.blend,
            &mut self.background,
            &mut self.foreground,
            &mut self.colors,
        ]
    }

    pub fn same_shape(&self, other: &MpiParams<T>) -> bool {
        self.variant == other.variant
            && self
                .tensors()
                .iter()
                .zip(other.tensors().iter())
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_reference(&self, reference: &Image<T>) -> Result<()> {
        if reference.width() != self.width || reference.height() != self.height || reference.channels() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "reference image {}x{}x{} vs parameters 3x{}x{}",
                reference.channels(),
                reference.height(),
                reference.width(),
                self.height,
                self.width
            )));
        }
        let expected = Self::zeros(self.variant, self.depth_count, self.width, self.height);
        if !self.same_shape(&expected) {
            return Err(Error::ShapeMismatch(format!(
                "parameter tensors do not match variant {}",
                self.variant
            )));
        }
        Ok(())
    }
}

/// Turns parameters into an MPI.
pub fn realize<T: Real>(
    params: &MpiParams<T>,
    reference: &Image<T>,
    depth_planes: &DepthPlanes,
    ref_camera: &Camera,
) -> Result<MultiplaneImage<T>> {
    params.check_reference(reference)?;
    if params.depth_count != depth_planes.count() {
        return Err(Error::ShapeMismatch(format!(
            "{} alpha planes for {} depths",
            params.depth_count,
            depth_planes.count()
        )));
    }
    if ref_camera.width() != params.width || ref_camera.height() != params.height {
        return Err(Error::ShapeMismatch("reference camera resolution differs from parameters".into()));
    }
    let (w, h, d_count) = (params.width, params.height, params.depth_count);
    let hw = w * h;
    let squash = |v: &[T]| -> Vec<T> { v.iter().map(|&x| sigmoid(x)).collect() };

    let background = squash(&params.background);
    let foreground = squash(&params.foreground);
    let shared = squash(&params.colors);

    let mut planes = Vec::with_capacity(d_count);
    for d in 0..d_count {
        let alpha = Image::from_vec(w, h, 1, squash(&params.alpha[d * hw..(d + 1) * hw]))?;
        let color = match params.variant {
            ColorVariant::None => reference.clone(),
            ColorVariant::SingleImage => Image::from_vec(w, h, 3, shared.clone())?,
            ColorVariant::AllImages => Image::from_vec(w, h, 3, shared[d * 3 * hw..(d + 1) * 3 * hw].to_vec())?,
            ColorVariant::BgBlend | ColorVariant::FgBgBlend => {
                let fg: &[T] = if params.variant == ColorVariant::BgBlend {
                    reference.data()
                } else {
                    &foreground
                };
                let wgts = squash(&params.blend[d * hw..(d + 1) * hw]);
                let mut data = Vec::with_capacity(3 * hw);
                for c in 0..3 {
                    for (i, &wgt) in wgts.iter().enumerate() {
                        let v = wgt * fg[c * hw + i] + (T::one() - wgt) * background[c * hw + i];
                        data.push(v.max(T::zero()).min(T::one()));
                    }
                }
                Image::from_vec(w, h, 3, data)?
            }
        };
        planes.push(RgbaPlane { color, alpha });
    }
    Ok(MultiplaneImage {
        planes,
        depth_planes: depth_planes.clone(),
        ref_camera: *ref_camera,
    })
}

/// Pulls gradients on plane colors/alphas back to the parameter logits.
pub fn realize_backward<T: Real>(
    params: &MpiParams<T>,
    reference: &Image<T>,
    grads: &RenderGradients<T>,
) -> Result<MpiParams<T>> {
    params.check_reference(reference)?;
    let (w, h, d_count) = (params.width, params.height, params.depth_count);
    let hw = w * h;
    if grads.d_color.len() != d_count || grads.d_alpha.len() != d_count {
        return Err(Error::ShapeMismatch("gradient plane count differs from parameters".into()));
    }
    let mut out = MpiParams::zeros(params.variant, d_count, w, h);
    let dsig = |x: T| {
        let s = sigmoid(x);
        s * (T::one() - s)
    };

    for d in 0..d_count {
        let ga = grads.d_alpha[d].data();
        for i in 0..hw {
            let x = params.alpha[d * hw + i];
            out.alpha[d * hw + i] = ga[i] * dsig(x);
        }
    }

    match params.variant {
        ColorVariant::None => {}
        ColorVariant::SingleImage => {
            for (j, g) in out.colors.iter_mut().enumerate() {
                let total: T = grads.d_color.iter().map(|dc| dc.data()[j]).sum();
                *g = total * dsig(params.colors[j]);
            }
        }
        ColorVariant::AllImages => {
            for d in 0..d_count {
                let gc = grads.d_color[d].data();
                for j in 0..3 * hw {
                    let k = d * 3 * hw + j;
                    out.colors[k] = gc[j] * dsig(params.colors[k]);
                }
            }
        }
        ColorVariant::BgBlend | ColorVariant::FgBgBlend => {
            let with_fg = params.variant == ColorVariant::FgBgBlend;
            let bg: Vec<T> = params.background.iter().map(|&x| sigmoid(x)).collect();
            let fg: Vec<T> = if with_fg {
                params.foreground.iter().map(|&x| sigmoid(x)).collect()
            } else {
                reference.data().to_vec()
            };
            let mut d_bg = vec![T::zero(); 3 * hw];
            let mut d_fg = vec![T::zero(); 3 * hw];
            for d in 0..d_count {
                let gc = grads.d_color[d].data();
                for i in 0..hw {
                    let wl = params.blend[d * hw + i];
                    let wgt = sigmoid(wl);
                    let mut d_w = T::zero();
                    for c in 0..3 {
                        let j = c * hw + i;
                        let g = gc[j];
                        d_w += g * (fg[j] - bg[j]);
                        d_bg[j] += g * (T::one() - wgt);
                        d_fg[j] += g * wgt;
                    }
                    out.blend[d * hw + i] = d_w * dsig(wl);
                }
            }
            for j in 0..3 * hw {
                out.background[j] = d_bg[j] * dsig(params.background[j]);
                if with_fg {
                    out.foreground[j] = d_fg[j] * dsig(params.foreground[j]);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_depth_planes, Intrinsics, Pose};

    fn setup(w: usize, h: usize, d: usize) -> (DepthPlanes, Camera) {
        (
            make_depth_planes(1.0, 100.0, d).unwrap(),
            Camera::new(Intrinsics::centered(10.0, w, h).unwrap(), Pose::identity()).unwrap(),
        )
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(ColorVariant::BgBlend, 32, 1, 1), 67);
        assert_eq!(parameter_count(ColorVariant::AllImages, 32, 1, 1), 128);
        assert_eq!(parameter_count(ColorVariant::None, 8, 2, 2), 32);
        for v in ColorVariant::ALL {
            assert_eq!(MpiParams::<f32>::zeros(v, 5, 3, 2).len(), parameter_count(v, 5, 2, 3));
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ColorVariant::ALL {
            assert_eq!(v.name().parse::<ColorVariant>().unwrap(), v);
        }
        assert!("rgb".parse::<ColorVariant>().is_err());
    }

    #[test]
    fn saturated_blend_weights() {
        let (planes, cam) = setup(4, 3, 3);
        let reference = Image::<f64>::from_fn(4, 3, 3, |c, x, y| 0.1 * c as f64 + 0.05 * x as f64 + 0.02 * y as f64);
        let mut p = MpiParams::initialize(ColorVariant::BgBlend, &reference, 3);
        p.background.fill(0.7);
        p.blend.fill(60.0);
        let mpi = realize(&p, &reference, &planes, &cam).unwrap();
        for plane in mpi.planes() {
            assert!(plane.color.max_abs_diff(&reference).unwrap() < 1e-12);
        }
        p.blend.fill(-60.0);
        let mpi = realize(&p, &reference, &planes, &cam).unwrap();
        let bg = sigmoid(0.7);
        for plane in mpi.planes() {
            assert!(plane.color.data().iter().all(|v| (v - bg).abs() < 1e-12));
        }
    }

    #[test]
    fn half_blend_of_constants() {
        let (planes, cam) = setup(2, 2, 2);
        let reference = Image::<f64>::filled(2, 2, 3, 0.8);
        let mut p = MpiParams::zeros(ColorVariant::BgBlend, 2, 2, 2);
        p.background.fill(logit(0.2));
        let mpi = realize(&p, &reference, &planes, &cam).unwrap();
        for plane in mpi.planes() {
            assert!(plane.color.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
            assert!(plane.alpha.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn none_variant_copies_reference() {
        let (planes, cam) = setup(3, 3, 4);
        let reference = Image::<f32>::from_fn(3, 3, 3, |c, x, y| ((c + x + y) % 4) as f32 / 4.0);
        let p = MpiParams::initialize(ColorVariant::None, &reference, 4);
        let mpi = realize(&p, &reference, &planes, &cam).unwrap();
        assert_eq!(mpi.count(), 4);
        for plane in mpi.planes() {
            assert_eq!(plane.color, reference);
            assert!(plane.alpha.data().iter().all(|&a| (a - sigmoid(-2.0f32)).abs() < 1e-7));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (planes, cam) = setup(3, 3, 4);
        let reference = Image::<f32>::new(4, 3, 3);
        let p = MpiParams::<f32>::zeros(ColorVariant::BgBlend, 4, 3, 3);
        assert!(matches!(realize(&p, &reference, &planes, &cam), Err(Error::ShapeMismatch(_))));
        let reference = Image::<f32>::new(3, 3, 3);
        let (other_planes, _) = setup(3, 3, 5);
        assert!(matches!(realize(&p, &reference, &other_planes, &cam), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mpi_constructor_enforces_unit_range() {
        let (planes, cam) = setup(2, 2, 2);
        let good = RgbaPlane {
            color: Image::<f32>::filled(2, 2, 3, 0.5),
            alpha: Image::filled(2, 2, 1, 1.0),
        };
        let mut bad = good.clone();
        bad.alpha.set(0, 1, 1, 1.5);
        assert!(MultiplaneImage::new(vec![good.clone(), good.clone()], planes.clone(), cam).is_ok());
        assert!(MultiplaneImage::new(vec![good.clone(), bad], planes.clone(), cam).is_err());
        assert!(MultiplaneImage::new(vec![good], planes, cam).is_err());
    }
}
