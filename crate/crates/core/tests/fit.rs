use nalgebra::Vector3;
use stereomag::fit::{fit_mpi, FitConfig, FitProblem};
use stereomag::geometry::make_depth_planes;
use stereomag::oracle::{aligned_scene, default_planes, frustum_mask, masked_psnr, oracle_render, reference_camera};
use stereomag::render::render_view;
use stereomag::{Camera, ColorVariant, Image, MpiParams};

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn pair(scene_index: usize, w: usize, h: usize, planes: usize, b: f64) -> (Image<f32>, Image<f32>, Camera, Camera) {
    let dp = default_planes(planes);
    let scene = aligned_scene(scene_index, &dp);
    let c1 = reference_camera(w, h);
    let c2 = c1.with_center(Vector3::new(b, 0.0, 0.0));
    (oracle_render(&scene, &c1), oracle_render(&scene, &c2), c1, c2)
}

#[test]
fn self_reconstruction_with_reference_colors() {
    let (i1, _, c1, _) = pair(1, 32, 24, 16, 0.05);
    let config = FitConfig {
        variant: ColorVariant::None,
        planes: 2,
        steps: 200,
        ..FitConfig::default()
    };
    let (_, report) = fit_mpi(&i1, &i1, &c1, &c1, &[(i1.clone(), c1)], &config).unwrap();
    assert_eq!(report.loss_curve.len(), 200);
    assert!(report.final_loss < 1e-3, "final loss {}", report.final_loss);
}

#[test]
fn fits_are_deterministic() {
    let (i1, i2, c1, c2) = pair(2, 24, 16, 16, 0.05);
    let config = FitConfig {
        planes: 6,
        steps: 25,
        seed: 9,
        ..FitConfig::default()
    };
    let targets = [(i1.clone(), c1), (i2.clone(), c2)];
    let (m1, r1) = fit_mpi(&i1, &i2, &c1, &c2, &targets, &config).unwrap();
    let (m2, r2) = fit_mpi(&i1, &i2, &c1, &c2, &targets, &config).unwrap();
    assert_eq!(r1.loss_curve, r2.loss_curve);
    assert_eq!(m1, m2);
}

#[test]
fn loss_descends_on_every_scene() {
    for s in 0..5 {
        let (i1, i2, c1, c2) = pair(s, 48, 27, 8, 0.05);
        let config = FitConfig {
            planes: 8,
            steps: 100,
            ..FitConfig::default()
        };
        let (_, r) = fit_mpi(&i1, &i2, &c1, &c2, &[(i1.clone(), c1), (i2.clone(), c2)], &config).unwrap();
        let k = r.loss_curve.len() / 10;
        let first = median(&r.loss_curve[..k]);
        let last = median(&r.loss_curve[r.loss_curve.len() - k..]);
        assert!(last < first, "scene {s}: {first} -> {last}");
    }
}

#[test]
fn every_variant_runs_to_completion() {
    let (i1, i2, c1, c2) = pair(3, 32, 18, 8, 0.05);
    for variant in ColorVariant::ALL {
        let config = FitConfig {
            variant,
            planes: 8,
            steps: 20,
            ..FitConfig::default()
        };
        let (mpi, r) = fit_mpi(&i1, &i2, &c1, &c2, &[(i2.clone(), c2)], &config).unwrap();
        assert_eq!(mpi.count(), 8);
        assert!(r.loss_curve.iter().all(|l| l.is_finite()), "{variant}");
        assert_eq!(r.variant, variant);
    }
}

#[test]
fn fused_and_generic_losses_agree() {
    let (i1, i2, c1, c2) = pair(4, 20, 12, 16, 0.05);
    let dp = make_depth_planes(1.0, 100.0, 5).unwrap();
    let targets = vec![(i1.cast::<f64>(), c1), (i2.cast::<f64>(), c2)];
    let fused = FitProblem::new(i1.cast::<f64>(), c1, dp.clone(), targets.clone(), 0.0).unwrap();
    // A vanishing gradient-difference weight routes through the generic path.
    let generic = FitProblem::new(i1.cast::<f64>(), c1, dp, targets, 1e-300).unwrap();
    let mut params = MpiParams::<f64>::initialize(ColorVariant::FgBgBlend, &i1.cast(), 5);
    params.alpha.iter_mut().enumerate().for_each(|(i, a)| *a = ((i * 37) % 11) as f64 / 3.0 - 1.5);
    let (la, ga) = fused.loss_and_gradient(&params).unwrap();
    let (lb, gb) = generic.loss_and_gradient(&params).unwrap();
    assert!((la - lb).abs() < 1e-12);
    for (a, b) in ga.tensors().iter().zip(gb.tensors()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

/// Three targets spread between the two inputs; the held-out view
/// extrapolates past the second input.
#[test]
fn interpolated_targets_recover_an_extrapolated_view() {
    let (w, h, b) = (128, 72, 0.05);
    let dp = default_planes(16);
    let scene = aligned_scene(0, &dp);
    let c1 = reference_camera(w, h);
    let at = |f: f64| c1.with_center(Vector3::new(f * b, 0.0, 0.0));
    let views: Vec<(Image<f32>, Camera)> = [0.0, 0.5, 1.0].iter().map(|&f| (oracle_render(&scene, &at(f)), at(f))).collect();
    let config = FitConfig {
        planes: 16,
        steps: 1000,
        ..FitConfig::default()
    };
    let (mpi, _) = fit_mpi(&views[0].0, &views[2].0, &c1, &at(1.0), &views, &config).unwrap();
    let held = at(1.5);
    let truth = oracle_render(&scene, &held);
    let out = render_view(&mpi, &held).unwrap().image;
    let p = masked_psnr(&out, &truth, &frustum_mask(&scene, &c1, &held)).unwrap();
    assert!(p > 28.0, "held-out PSNR {p:.2} dB");
}
