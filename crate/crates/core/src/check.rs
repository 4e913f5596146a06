//! Self-checks: analytic gradients against central finite differences, and
//! the MPI renderer against the ray-casting oracle.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{make_depth_planes, Camera, Intrinsics, Pose};
use crate::mpi::{realize, realize_backward, ColorVariant, MpiParams};
use crate::oracle::{aligned_scene, default_planes, masked_diff, oracle_render, reference_camera, scene_to_mpi, silhouette_mask, SILHOUETTE_BAND};
use crate::raster::Image;
use crate::render::render_view;
use crate::Result;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-4;

/// One random differentiable-rendering problem: parameters, a reference
/// image, a target camera and a fixed output weighting `G`, so that the
/// loss `⟨render(realize(params)), G⟩` is smooth in every parameter.
pub struct GradientInstance {
    pub params: MpiParams<f64>,
    pub reference: Image<f64>,
    pub ref_camera: Camera,
    pub target: Camera,
    pub weights: Image<f64>,
}

impl GradientInstance {
    pub fn random(seed: u64, size: usize, planes: usize, variant: ColorVariant, max_baseline: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Intrinsics::centered(size as f64, size, size).expect("positive size");
        let ref_camera = Camera {
            intrinsics: k,
            pose: Pose::identity(),
        };
        // random direction, length up to the baseline cap
        let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = dir.normalize() * rng.random_range(0.2..1.0) * max_baseline;
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0);
        let target = Camera {
            intrinsics: k,
            pose: Pose::from_axis_angle(axis, rng.random_range(-0.03..0.03), t),
        };
        let reference = Image::from_fn(size, size, 3, |_, _, _| rng.random_range(0.05..0.95));
        let mut params = MpiParams::zeros(variant, planes, size, size);
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        }
        let weights = Image::from_fn(size, size, 3, |_, _, _| rng.random_range(-1.0..1.0));
        Self {
            params,
            reference,
            ref_camera,
            target,
            weights,
        }
    }

    fn planes(&self) -> crate::DepthPlanes {
        make_depth_planes(1.0, 100.0, self.params.depth_count).expect("valid planes")
    }

    pub fn loss(&self, params: &MpiParams<f64>) -> Result<f64> {
        let mpi = realize(params, &self.reference, &self.planes(), &self.ref_camera)?;
        let out = render_view(&mpi, &self.target)?.image;
        Ok(out.data().iter().zip(self.weights.data()).map(|(a, b)| a * b).sum())
    }

    pub fn gradient(&self) -> Result<MpiParams<f64>> {
        let mpi = realize(&self.params, &self.reference, &self.planes(), &self.ref_camera)?;
        let rendered = render_view(&mpi, &self.target)?;
        let g = crate::render::render_backward(&mpi, &rendered.cache, &self.weights)?;
        realize_backward(&self.params, &self.reference, &g)
    }

    /// Largest relative error over all parameters, with differences below
    /// [`FD_FLOOR`] measured absolutely.
    pub fn max_relative_error(&self) -> Result<f64> {
        let analytic = self.gradient()?;
        let mut worst = 0.0f64;
        let mut probe = self.params.clone();
        for ti in 0..5 {
            for i in 0..self.params.tensors()[ti].len() {
                let orig = self.params.tensors()[ti][i];
                probe.tensors_mut()[ti][i] = orig + FD_STEP;
                let up = self.loss(&probe)?;
                probe.tensors_mut()[ti][i] = orig - FD_STEP;
                let down = self.loss(&probe)?;
                probe.tensors_mut()[ti][i] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = analytic.tensors()[ti][i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
                worst = worst.max(err);
            }
        }
        Ok(worst)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            passed: value < threshold,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} (threshold {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold
        )
    }
}

/// Worst finite-difference disagreement over `instances` random problems
/// cycling through every color variant.
pub fn gradient_check(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let variant = ColorVariant::ALL[i % ColorVariant::ALL.len()];
        let inst = GradientInstance::random(seed.wrapping_add(i as u64), 8, 4, variant, 0.1);
        worst = worst.max(inst.max_relative_error()?);
    }
    Ok(CheckOutcome::below(format!("gradient check ({instances} instances)"), worst, 1e-4))
}

/// Target cameras around a reference camera: translations up to
/// `max_baseline` with small rotations.
pub fn nearby_cameras(reference: &Camera, count: usize, max_baseline: f64, seed: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ) * max_baseline;
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let pose = reference.pose.compose(&Pose::from_axis_angle(axis, rng.random_range(-0.01..0.01), t));
            Camera {
                intrinsics: reference.intrinsics,
                pose,
            }
        })
        .collect()
}

/// Mean and max masked difference between MPI renders and oracle renders
/// over `scenes` built-in scenes and `cameras` targets each.
pub fn oracle_agreement(scenes: usize, cameras: usize, width: usize, height: usize, planes: usize) -> Result<(f64, f64)> {
    let dp = default_planes(planes);
    let cam = reference_camera(width, height);
    let (mut worst_mean, mut worst_max) = (0.0f64, 0.0f64);
    for s in 0..scenes {
        let scene = aligned_scene(s, &dp);
        let mpi = scene_to_mpi(&scene, &dp, &cam)?;
        for target in nearby_cameras(&cam, cameras, 0.1, 1000 + s as u64) {
            let ours = render_view(&mpi, &target)?.image;
            let truth = oracle_render(&scene, &target);
            let mask = silhouette_mask(&scene, &cam, &target, SILHOUETTE_BAND);
            let (mean, max) = masked_diff(&ours, &truth, &mask)?;
            worst_mean = worst_mean.max(mean);
            worst_max = worst_max.max(max);
        }
    }
    Ok((worst_mean, worst_max))
}

/// The checks run by `selfcheck`, at reduced sizes.
pub fn run_selfcheck() -> Result<Vec<CheckOutcome>> {
    let grad = gradient_check(10, 7)?;
    let (mean, max) = oracle_agreement(5, 4, 256, 144, 16)?;
    Ok(vec![
        grad,
        CheckOutcome::below("oracle agreement, mean abs diff", mean, 2e-3),
        CheckOutcome::below("oracle agreement, max abs diff", max, 0.05),
    ])
}
