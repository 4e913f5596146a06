use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereomag::geometry::make_depth_planes;
use stereomag::mpi::{realize, realize_backward, RgbaPlane};
use stereomag::render::{
    composite, render_backward, render_view, render_with_adjoint, warp_plane, RenderGradients, WarpTable, WarpedPlane,
};
use stereomag::{Camera, ColorVariant, Image, Intrinsics, MpiParams, MultiplaneImage, Pose};

fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> WarpedPlane<f64> {
    WarpedPlane {
        color: Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.0..=1.0)),
        alpha: Image::from_fn(w, h, 1, |_, _, _| rng.random_range(0.0..=1.0)),
        valid: vec![true; w * h],
    }
}

fn random_mpi(seed: u64, w: usize, h: usize, d: usize) -> MultiplaneImage<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Intrinsics::centered(w as f64, w, h).unwrap();
    let cam = Camera::new(k, Pose::identity()).unwrap();
    let planes = (0..d)
        .map(|_| RgbaPlane {
            color: Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.0..=1.0)),
            alpha: Image::from_fn(w, h, 1, |_, _, _| rng.random_range(0.0..=1.0)),
        })
        .collect();
    MultiplaneImage::new(planes, make_depth_planes(1.0, 100.0, d).unwrap(), cam).unwrap()
}

fn nearby(cam: &Camera, seed: u64) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0);
    Camera::new(cam.intrinsics, Pose::from_axis_angle(axis, rng.random_range(-0.02..0.02), t)).unwrap()
}

/// `over` applied one plane at a time.
fn fold_over(planes: &[WarpedPlane<f64>]) -> Image<f64> {
    let (w, h) = (planes[0].color.width(), planes[0].color.height());
    let mut out = Image::new(w, h, 3);
    for p in planes {
        for c in 0..3 {
            for i in 0..w * h {
                let a = p.alpha.data()[i];
                out.channel_mut(c)[i] = p.color.channel(c)[i] * a + out.channel(c)[i] * (1.0 - a);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn composite_matches_sequential_over(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes: Vec<_> = (0..d).map(|_| random_plane(&mut rng, 5, 4)).collect();
        let out = composite(&planes).unwrap();
        prop_assert!(out.max_abs_diff(&fold_over(&planes)).unwrap() < 1e-6);
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn transparent_plane_is_the_same_as_no_plane(seed in any::<u64>(), d in 2usize..6, drop in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut planes: Vec<_> = (0..d).map(|_| random_plane(&mut rng, 4, 3)).collect();
        let k = drop % d;
        planes[k].alpha.data_mut().fill(0.0);
        let with = composite(&planes).unwrap();
        planes.remove(k);
        let without = if planes.is_empty() { Image::new(4, 3, 3) } else { composite(&planes).unwrap() };
        prop_assert!(with.max_abs_diff(&without).unwrap() < 1e-7);
    }

    #[test]
    fn reference_render_reproduces_planes(seed in any::<u64>(), d in 1usize..5) {
        let mpi = random_mpi(seed, 6, 5, d.max(2));
        let r = render_view(&mpi, mpi.ref_camera()).unwrap();
        for (warped, plane) in r.cache.warped().iter().zip(mpi.planes()) {
            prop_assert_eq!(&warped.color, &plane.color);
            prop_assert_eq!(&warped.alpha, &plane.alpha);
        }
    }

    #[test]
    fn warp_marks_out_of_bounds_transparent(dx in -12.0..12.0f64, dy in -12.0..12.0f64) {
        let color = Image::from_fn(8, 6, 3, |c, x, y| (c + x + y) as f64 / 20.0);
        let alpha = Image::filled(8, 6, 1, 1.0);
        let mut h = Matrix3::identity();
        h[(0, 2)] = dx;
        h[(1, 2)] = dy;
        let out = warp_plane(&color, &alpha, &h, 8, 6).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                let (u, v) = (x as f64 + dx, y as f64 + dy);
                let inside = (0.0..=7.0).contains(&u) && (0.0..=5.0).contains(&v);
                prop_assert_eq!(out.valid[y * 8 + x], inside);
                if !inside {
                    prop_assert_eq!(out.alpha.get(0, x, y), 0.0);
                    prop_assert_eq!(out.color.get(0, x, y), 0.0);
                }
            }
        }
    }
}

#[test]
fn single_plane_translation_shifts_by_disparity() {
    let (w, h) = (48, 20);
    let k = Intrinsics::centered(40.0, w, h).unwrap();
    let cam = Camera::new(k, Pose::identity()).unwrap();
    let dp = make_depth_planes(2.0, 50.0, 2).unwrap();
    let ramp = Image::from_fn(w, h, 3, |c, x, y| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
    let planes = vec![
        RgbaPlane {
            color: Image::new(w, h, 3),
            alpha: Image::new(w, h, 1),
        },
        RgbaPlane {
            color: ramp.clone(),
            alpha: Image::filled(w, h, 1, 1.0),
        },
    ];
    let mpi = MultiplaneImage::new(planes, dp, cam).unwrap();
    // fx·b/d = 40·0.1/2 = 2 px
    let out = render_view(&mpi, &cam.with_center(Vector3::new(0.1, 0.0, 0.0))).unwrap().image;
    for y in 0..h {
        for x in 0..w - 2 {
            for c in 0..3 {
                assert!((out.get(c, x, y) - ramp.get(c, x + 2, y)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn fused_adjoint_matches_render_backward() {
    for seed in 0..4 {
        let mpi = random_mpi(seed, 9, 7, 4);
        let target = nearby(mpi.ref_camera(), 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Image::from_fn(9, 7, 3, |_, _, _| rng.random_range(-1.0..1.0));
        let r = render_view(&mpi, &target).unwrap();
        let expect = render_backward(&mpi, &r.cache, &g).unwrap();

        let table = WarpTable::new(mpi.ref_camera(), mpi.depth_planes(), &target).unwrap();
        let mut seen = Image::new(9, 7, 3);
        let got = render_with_adjoint(&mpi, &table, |p, rgb| {
            for c in 0..3 {
                seen.channel_mut(c)[p] = rgb[c];
            }
            [0, 1, 2].map(|c| g.channel(c)[p])
        })
        .unwrap();
        assert!(seen.max_abs_diff(&r.image).unwrap() < 1e-12);
        for d in 0..4 {
            assert!(got.d_color[d].max_abs_diff(&expect.d_color[d]).unwrap() < 1e-12);
            assert!(got.d_alpha[d].max_abs_diff(&expect.d_alpha[d]).unwrap() < 1e-12);
        }
    }
}

#[test]
fn fused_adjoint_rejects_foreign_table() {
    let mpi = random_mpi(1, 6, 5, 3);
    let other = random_mpi(2, 6, 5, 4);
    let table = WarpTable::new(other.ref_camera(), other.depth_planes(), other.ref_camera()).unwrap();
    let mut grads = RenderGradients::zeros_like(&mpi);
    assert!(stereomag::render::render_with_adjoint_into(&mpi, &table, &mut grads, |_, _| [0.0; 3]).is_err());
}

/// Gradient of `mean |render − truth|` with respect to every raw logit,
/// checked against central differences.
#[test]
fn end_to_end_logit_gradients_match_finite_differences() {
    let (w, h, d) = (8, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let k = Intrinsics::centered(8.0, w, h).unwrap();
    let ref_cam = Camera::new(k, Pose::identity()).unwrap();
    let target = nearby(&ref_cam, 5);
    let dp = make_depth_planes(1.0, 100.0, d).unwrap();
    let reference = Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.1..0.9));
    let truth = Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0.0..1.0));
    for variant in ColorVariant::ALL {
        let mut params = MpiParams::<f64>::zeros(variant, d, w, h);
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
        }
        let loss = |p: &MpiParams<f64>| -> f64 {
            let mpi = realize(p, &reference, &dp, &ref_cam).unwrap();
            let out = render_view(&mpi, &target).unwrap().image;
            stereomag::fit::l1_loss(&out, &truth, None).unwrap().0
        };
        let mpi = realize(&params, &reference, &dp, &ref_cam).unwrap();
        let r = render_view(&mpi, &target).unwrap();
        let (_, g_img) = stereomag::fit::l1_loss(&r.image, &truth, None).unwrap();
        let g = render_backward(&mpi, &r.cache, &g_img).unwrap();
        let analytic = realize_backward(&params, &reference, &g).unwrap();

        let step = 1e-6;
        let mut probe = params.clone();
        for ti in 0..5 {
            for i in 0..params.tensors()[ti].len() {
                let orig = params.tensors()[ti][i];
                probe.tensors_mut()[ti][i] = orig + step;
                let up = loss(&probe);
                probe.tensors_mut()[ti][i] = orig - step;
                let down = loss(&probe);
                probe.tensors_mut()[ti][i] = orig;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic.tensors()[ti][i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
                assert!(rel < 1e-3, "{variant} tensor {ti} index {i}: {a} vs {numeric}");
            }
        }
    }
}
