//! Per-scene MPI fitting.
//!
//! The MPI parameters are optimized directly: every step realizes the MPI,
//! renders it at each target camera, measures the mean L1 photometric error
//! and back-propagates through the renderer and the color parameterization.
//! Updates use bias-corrected Adam.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::geometry::{make_depth_planes, Camera, DepthPlanes};
use crate::metrics;
use crate::mpi::{realize, realize_backward, ColorVariant, MpiParams, MultiplaneImage};
use crate::psv::{alpha_logits_from_cost, build_psv, psv_agreement_map};
use crate::raster::Image;
use crate::render::{render_backward, render_view, render_with_adjoint_into, RenderGradients, WarpTable};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
}

/// How alpha logits start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaInit {
    /// Every alpha logit at [`crate::mpi::INIT_ALPHA_LOGIT`].
    Constant,
    /// Visibility seeded from plane-sweep photo-consistency of the second view.
    PlaneSweep,
}

impl FromStr for AlphaInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(AlphaInit::Constant),
            "plane-sweep" | "psv" => Ok(AlphaInit::PlaneSweep),
            other => Err(Error::InvalidConfig(format!("unknown alpha init `{other}`"))),
        }
    }
}

/// Softmax temperature for plane-sweep alpha seeding.
pub const PSV_TEMPERATURE: f64 = 0.1;
const PSV_LOGIT_CLAMP: f64 = 6.0;
const PSV_AGGREGATION_RADIUS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitConfig {
    pub variant: ColorVariant,
    pub planes: usize,
    pub near: f64,
    pub far: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: LossKind,
    /// Weight of an image-gradient-difference term added to L1. Zero disables it.
    pub gradient_weight: f64,
    pub alpha_init: AlphaInit,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            variant: ColorVariant::BgBlend,
            planes: 32,
            near: 1.0,
            far: 100.0,
            steps: 2000,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss: LossKind::L1,
            gradient_weight: 0.0,
            alpha_init: AlphaInit::PlaneSweep,
            seed: 0,
            log_every: 100,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if !(self.gradient_weight >= 0.0 && self.gradient_weight.is_finite()) {
            return bad("gradient_weight must be non-negative".into());
        }
        make_depth_planes(self.near, self.far, self.planes)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// Set one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
        }
        match key.trim() {
            "variant" => self.variant = value.parse()?,
            "planes" => self.planes = num(key, value)?,
            "near" => self.near = num(key, value)?,
            "far" => self.far = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "loss" => {
                if !value.trim().eq_ignore_ascii_case("l1") {
                    return Err(Error::InvalidConfig(format!("unsupported loss `{value}`")));
                }
                self.loss = LossKind::L1;
            }
            "gradient_weight" => self.gradient_weight = num(key, value)?,
            "alpha_init" => self.alpha_init = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parse flat `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected key=value"))?;
            cfg.set(k, v).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant);
        let _ = writeln!(s, "planes={}", self.planes);
        let _ = writeln!(s, "near={}", self.near);
        let _ = writeln!(s, "far={}", self.far);
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "epsilon={}", self.epsilon);
        let _ = writeln!(s, "loss=l1");
        let _ = writeln!(s, "gradient_weight={}", self.gradient_weight);
        let alpha_init = match self.alpha_init {
            AlphaInit::Constant => "constant",
            AlphaInit::PlaneSweep => "plane-sweep",
        };
        let _ = writeln!(s, "alpha_init={alpha_init}");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "log_every={}", self.log_every);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
///
/// Gradients are checked before anything is modified, so a non-finite
/// gradient leaves parameters and state untouched.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch("optimizer tensor count mismatch".into()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != p.len() {
            return Err(Error::ShapeMismatch(format!("optimizer tensor {i} length mismatch")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonfiniteGradient { tensor: i });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let corr1 = T::lit(1.0 - cfg.beta1.powi(t));
    let corr2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean absolute difference over unmasked pixels and its subgradient.
///
/// `mask[p] == true` keeps pixel `p` (all channels). The subgradient uses
/// `sign(0) = 0`.
pub fn l1_loss<T: Real>(pred: &Image<T>, truth: &Image<T>, mask: Option<&[bool]>) -> Result<(f64, Image<T>)> {
    pred.expect_shape(truth, "l1_loss")?;
    let n_pix = pred.pixel_count();
    if let Some(m) = mask {
        if m.len() != n_pix {
            return Err(Error::ShapeMismatch(format!("mask of {} for {n_pix} pixels", m.len())));
        }
    }
    let keep = |p: usize| mask.is_none_or(|m| m[p]);
    let kept = (0..n_pix).filter(|&p| keep(p)).count() * pred.channels();
    let mut grad = Image::new(pred.width(), pred.height(), pred.channels());
    if kept == 0 {
        return Ok((0.0, grad));
    }
    let inv = T::lit(1.0 / kept as f64);
    let mut sum = 0.0f64;
    for c in 0..pred.channels() {
        let (a, b) = (pred.channel(c), truth.channel(c));
        let g = grad.channel_mut(c);
        for p in 0..n_pix {
            if !keep(p) {
                continue;
            }
            let d = a[p] - b[p];
            sum += d.abs().to_f64().unwrap_or(f64::NAN);
            g[p] = if d > T::zero() {
                inv
            } else if d < T::zero() {
                -inv
            } else {
                T::zero()
            };
        }
    }
    Ok((sum / kept as f64, grad))
}

/// Mean absolute difference of horizontal and vertical forward differences.
/// A lightweight structural term; not part of the base objective.
pub fn gradient_difference_loss<T: Real>(pred: &Image<T>, truth: &Image<T>) -> Result<(f64, Image<T>)> {
    pred.expect_shape(truth, "gradient_difference_loss")?;
    let (w, h) = (pred.width(), pred.height());
    let mut grad = Image::new(w, h, pred.channels());
    let terms = pred.channels() * (h * w.saturating_sub(1) + w * h.saturating_sub(1));
    if terms == 0 {
        return Ok((0.0, grad));
    }
    let inv = T::lit(1.0 / terms as f64);
    let mut sum = 0.0;
    for c in 0..pred.channels() {
        let (a, b) = (pred.channel(c), truth.channel(c));
        let g = grad.channel_mut(c);
        let mut pair = |i: usize, j: usize| {
            let d = (a[j] - a[i]) - (b[j] - b[i]);
            sum += d.abs().to_f64().unwrap_or(f64::NAN);
            let s = if d > T::zero() {
                inv
            } else if d < T::zero() {
                -inv
            } else {
                T::zero()
            };
            g[j] += s;
            g[i] -= s;
        };
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    pair(i, i + 1);
                }
                if y + 1 < h {
                    pair(i, i + w);
                }
            }
        }
    }
    Ok((sum / terms as f64, grad))
}

/// L1 loss of one view; its gradient, scaled by `scale`, is added to `grads`
/// in a single fused render-and-adjoint pass.
fn fused_l1<T: Real>(
    mpi: &MultiplaneImage<T>,
    table: &WarpTable<T>,
    truth: &Image<T>,
    scale: f64,
    grads: &mut RenderGradients<T>,
) -> Result<f64> {
    let cam = table.target();
    if truth.channels() != 3 || truth.width() != cam.width() || truth.height() != cam.height() {
        return Err(Error::ShapeMismatch("target image does not match its camera".into()));
    }
    let n = truth.data().len();
    let step = T::lit(scale / n as f64);
    let planes = [truth.channel(0), truth.channel(1), truth.channel(2)];
    let mut sum = 0.0f64;
    render_with_adjoint_into(mpi, table, grads, |p, rgb| {
        [0, 1, 2].map(|c| {
            let d = rgb[c] - planes[c][p];
            sum += d.abs().to_f64().unwrap_or(f64::NAN);
            if d > T::zero() {
                step
            } else if d < T::zero() {
                -step
            } else {
                T::zero()
            }
        })
    })?;
    Ok(sum / n as f64)
}

/// Everything fixed during a fit: the reference view, the planes and the
/// target views.
#[derive(Clone, Debug)]
pub struct FitProblem<T = f32> {
    reference: Image<T>,
    ref_camera: Camera,
    depth_planes: DepthPlanes,
    targets: Vec<(Image<T>, Camera)>,
    tables: Vec<WarpTable<T>>,
    gradient_weight: f64,
}

impl<T: Real> FitProblem<T> {
    pub fn new(
        reference: Image<T>,
        ref_camera: Camera,
        depth_planes: DepthPlanes,
        targets: Vec<(Image<T>, Camera)>,
        gradient_weight: f64,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidConfig("at least one target view is required".into()));
        }
        let tables = targets
            .iter()
            .map(|(_, cam)| WarpTable::new(&ref_camera, &depth_planes, cam))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            reference,
            ref_camera,
            depth_planes,
            targets,
            tables,
            gradient_weight,
        })
    }

    pub fn depth_planes(&self) -> &DepthPlanes {
        &self.depth_planes
    }

    pub fn realize(&self, params: &MpiParams<T>) -> Result<MultiplaneImage<T>> {
        realize(params, &self.reference, &self.depth_planes, &self.ref_camera)
    }

    /// Mean loss over targets and its gradient with respect to `params`.
    pub fn loss_and_gradient(&self, params: &MpiParams<T>) -> Result<(f64, MpiParams<T>)> {
        let mpi = self.realize(params)?;
        let scale = 1.0 / self.targets.len() as f64;
        let mut grads = RenderGradients::zeros_like(&mpi);
        let mut total = 0.0;
        for ((image, camera), table) in self.targets.iter().zip(&self.tables) {
            if self.gradient_weight > 0.0 {
                let rendered = render_view(&mpi, camera)?;
                let (loss, mut d_out) = self.view_loss(&rendered.image, image)?;
                d_out.data_mut().iter_mut().for_each(|g| *g *= T::lit(scale));
                grads.accumulate(&render_backward(&mpi, &rendered.cache, &d_out)?);
                total += loss;
            } else {
                total += fused_l1(&mpi, table, image, scale, &mut grads)?;
            }
        }
        let param_grads = realize_backward(params, &self.reference, &grads)?;
        Ok((total * scale, param_grads))
    }

    /// Mean loss over targets without gradients.
    pub fn loss(&self, params: &MpiParams<T>) -> Result<f64> {
        let mpi = self.realize(params)?;
        let mut total = 0.0;
        for (image, camera) in &self.targets {
            let rendered = render_view(&mpi, camera)?;
            total += self.view_loss(&rendered.image, image)?.0;
        }
        Ok(total / self.targets.len() as f64)
    }

    fn view_loss(&self, pred: &Image<T>, truth: &Image<T>) -> Result<(f64, Image<T>)> {
        let (mut loss, mut grad) = l1_loss(pred, truth, None)?;
        if self.gradient_weight > 0.0 {
            let (gl, gg) = gradient_difference_loss(pred, truth)?;
            let wgt = T::lit(self.gradient_weight);
            loss += self.gradient_weight * gl;
            grad.data_mut().iter_mut().zip(gg.data()).for_each(|(a, b)| *a += wgt * *b);
        }
        Ok((loss, grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub view: usize,
    #[serde(serialize_with = "metrics::serialize_db")]
    pub psnr: f64,
    /// `None` when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub variant: ColorVariant,
    pub planes: usize,
    pub steps: usize,
    pub seed: u64,
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub views: Vec<ViewMetrics>,
    pub wall_time_secs: f64,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Line-oriented summary: the loss every `every` steps, then per-view metrics.
    pub fn to_text(&self, every: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant {} planes {} steps {} seed {}", self.variant, self.planes, self.steps, self.seed);
        let every = every.max(1);
        for (i, l) in self.loss_curve.iter().enumerate() {
            if i % every == 0 || i + 1 == self.loss_curve.len() {
                let _ = writeln!(s, "step {i} loss {l:.6}");
            }
        }
        let _ = writeln!(s, "final_loss {:.6}", self.final_loss);
        for v in &self.views {
            match v.ssim {
                Some(ssim) => {
                    let _ = writeln!(s, "view {} psnr {:.3} ssim {:.4}", v.view, v.psnr, ssim);
                }
                None => {
                    let _ = writeln!(s, "view {} psnr {:.3}", v.view, v.psnr);
                }
            }
        }
        let _ = writeln!(s, "wall_time_secs {:.2}", self.wall_time_secs);
        s
    }
}

fn check_view(image: &Image<f32>, camera: &Camera, what: &str) -> Result<()> {
    if image.channels() != 3 || image.width() != camera.width() || image.height() != camera.height() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: image {}x{}x{} does not match camera {}x{}",
            image.channels(),
            image.width(),
            image.height(),
            camera.width(),
            camera.height()
        )));
    }
    if !image.in_unit_range() {
        return Err(Error::ShapeMismatch(format!("{what}: values outside [0, 1]")));
    }
    Ok(())
}

/// Box-filter each cost slice with radius `r` (clamped at the borders).
fn aggregate_cost(cost: &Image<f32>, r: usize) -> Image<f32> {
    let (w, h) = (cost.width(), cost.height());
    let mut out = cost.clone();
    for d in 0..cost.channels() {
        let src = cost.channel(d);
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
                let s: f32 = src[y * w + lo..=y * w + hi].iter().sum();
                tmp[y * w + x] = s / (hi - lo + 1) as f32;
            }
        }
        let dst = out.channel_mut(d);
        for y in 0..h {
            let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
            for x in 0..w {
                let s: f32 = (lo..=hi).map(|yy| tmp[yy * w + x]).sum();
                dst[y * w + x] = s / (hi - lo + 1) as f32;
            }
        }
    }
    out
}

/// Initial parameters for a fit.
pub fn initial_params(
    reference: &Image<f32>,
    second: &Image<f32>,
    ref_camera: &Camera,
    second_camera: &Camera,
    depth_planes: &DepthPlanes,
    config: &FitConfig,
) -> Result<MpiParams<f32>> {
    let mut params = MpiParams::initialize(config.variant, reference, depth_planes.count());
    if config.alpha_init == AlphaInit::PlaneSweep {
        let psv = build_psv(second, second_camera, ref_camera, depth_planes)?;
        let cost = aggregate_cost(&psv_agreement_map(reference, &psv)?, PSV_AGGREGATION_RADIUS);
        params.alpha = alpha_logits_from_cost(&cost, PSV_TEMPERATURE, PSV_LOGIT_CLAMP);
    }
    Ok(params)
}

/// Fit an MPI in the frame of `c1` so that it reproduces every target view.
pub fn fit_mpi(
    i1: &Image<f32>,
    i2: &Image<f32>,
    c1: &Camera,
    c2: &Camera,
    targets: &[(Image<f32>, Camera)],
    config: &FitConfig,
) -> Result<(MultiplaneImage<f32>, FitReport)> {
    fit_mpi_with_progress(i1, i2, c1, c2, targets, config, |_, _| {})
}

/// [`fit_mpi`] with a callback receiving `(step, loss)` after every step.
pub fn fit_mpi_with_progress(
    i1: &Image<f32>,
    i2: &Image<f32>,
    c1: &Camera,
    c2: &Camera,
    targets: &[(Image<f32>, Camera)],
    config: &FitConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(MultiplaneImage<f32>, FitReport)> {
    let started = Instant::now();
    config.validate()?;
    if targets.is_empty() {
        return Err(Error::InvalidConfig("at least one target view is required".into()));
    }
    check_view(i1, c1, "first input")?;
    check_view(i2, c2, "second input")?;
    for (k, (img, cam)) in targets.iter().enumerate() {
        check_view(img, cam, &format!("target {k}"))?;
    }
    let depth_planes = make_depth_planes(config.near, config.far, config.planes)?;
    let mut params = initial_params(i1, i2, c1, c2, &depth_planes, config)?;
    let problem = FitProblem::new(
        i1.clone(),
        *c1,
        depth_planes.clone(),
        targets.to_vec(),
        config.gradient_weight,
    )?;

    let adam = config.adam();
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut state = AdamState::<f32>::new(&shapes);
    let mut loss_curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (loss, grads) = problem.loss_and_gradient(&params)?;
        if !loss.is_finite() {
            return Err(Error::NonfiniteLoss { step });
        }
        loss_curve.push(loss);
        progress(step, loss);
        let grad_refs = grads.tensors().map(|t| t.as_slice());
        let mut param_refs = params.tensors_mut().map(|t| t.as_mut_slice());
        adam_step(&mut param_refs, &grad_refs, &mut state, &adam)?;
    }

    let mpi = realize(&params, i1, &depth_planes, c1)?;
    let mut views = Vec::with_capacity(targets.len());
    let mut final_loss = 0.0;
    for (k, (img, cam)) in targets.iter().enumerate() {
        let rendered = render_view(&mpi, cam)?;
        final_loss += l1_loss(&rendered.image, img, None)?.0;
        views.push(ViewMetrics {
            view: k,
            psnr: metrics::psnr(&rendered.image, img)?,
            ssim: metrics::ssim(&rendered.image, img).ok(),
        });
    }
    let report = FitReport {
        variant: config.variant,
        planes: config.planes,
        steps: config.steps,
        seed: config.seed,
        loss_curve,
        final_loss: final_loss / targets.len() as f64,
        views,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((mpi, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adam_cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![0.3f64, -1.0];
        let g = vec![0.0f64, 0.0];
        let mut st = AdamState::new(&[2]);
        adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut st, &adam_cfg(0.1)).unwrap();
        assert_eq!(p, vec![0.3, -1.0]);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut p = vec![0.0f64];
        let mut st = AdamState::new(&[1]);
        adam_step(&mut [p.as_mut_slice()], &[&[1.0]], &mut st, &adam_cfg(0.1)).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction.
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_nonfinite_gradient() {
        let mut p = vec![0.0f32; 3];
        let mut st = AdamState::new(&[3]);
        let g = [0.0, f32::NAN, 1.0];
        let err = adam_step(&mut [p.as_mut_slice()], &[&g], &mut st, &adam_cfg(0.1)).unwrap_err();
        assert!(matches!(err, Error::NonfiniteGradient { tensor: 0 }));
        assert_eq!(st.step, 0);
        assert_eq!(p, vec![0.0; 3]);
    }

    #[test]
    fn l1_examples() {
        let a = Image::<f64>::filled(4, 2, 3, 0.3);
        let (l, g) = l1_loss(&a, &a, None).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let b = a.map(|v| v + 0.1);
        let (l, g) = l1_loss(&b, &a, None).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
        assert!(g.data().iter().all(|&v| (v - 1.0 / 24.0).abs() < 1e-15));

        let truth = Image::<f64>::new(4, 2, 3);
        let pred = Image::from_fn(4, 2, 3, |_, x, _| if x < 2 { 0.2 } else { 0.6 });
        let mask: Vec<bool> = (0..8).map(|p| p % 4 < 2).collect();
        let (l, g) = l1_loss(&pred, &truth, Some(&mask)).unwrap();
        assert!((l - 0.2).abs() < 1e-12);
        assert_eq!(g.get(0, 3, 0), 0.0);
        assert!((g.get(0, 0, 0) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_difference_ignores_constant_offset() {
        // dyadic values keep every difference exact
        let a = Image::<f64>::from_fn(5, 4, 3, |c, x, y| (c + x * y) as f64 * 0.0625);
        let b = a.map(|v| v + 0.25);
        let (l, g) = gradient_difference_loss(&a, &b).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_key_values_round_trip() {
        let mut cfg = FitConfig::default();
        cfg.variant = ColorVariant::FgBgBlend;
        cfg.steps = 17;
        cfg.learning_rate = 0.003;
        cfg.alpha_init = AlphaInit::Constant;
        let text = cfg.to_kv();
        let parsed = FitConfig::parse(&text, Path::new("cfg")).unwrap();
        assert_eq!(parsed, cfg);
        let err = FitConfig::parse("steps = ten\n", Path::new("cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = FitConfig::parse("nonsense\n", Path::new("cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let cfg = FitConfig::parse("# comment\nlr=0.5 # trailing\n", Path::new("cfg")).unwrap();
        assert_eq!(cfg.learning_rate, 0.5);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        cfg = FitConfig { beta2: 1.0, ..FitConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = FitConfig { learning_rate: -1.0, ..FitConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = FitConfig { near: 5.0, far: 2.0, ..FitConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
