mod common;

use std::path::Path;

use nalgebra::Vector3;
use proptest::prelude::*;
use stereomag::dataset::{
    normalization_factor, parse_points, parse_sequence, rescale, sample_triplet, scale_normalize, smooth_flags,
    smooth_prefix, trim_and_filter, write_points, write_sequence, MAX_STRIDE, WINDOW_FRAMES,
};

use common::{line_sequence, walking_sequence};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn normalization_is_idempotent(frames in 3usize..40, seed in any::<u64>()) {
        let once = scale_normalize(&walking_sequence(frames, seed)).unwrap();
        prop_assert!((normalization_factor(&once).unwrap() - 1.0).abs() < 1e-9);
        let twice = scale_normalize(&once).unwrap();
        for (a, b) in once.positions().iter().zip(twice.positions()) {
            prop_assert!((a - b).norm() <= 1e-9 * a.norm().max(1.0));
        }
    }

    #[test]
    fn smoothness_ignores_uniform_rescaling(frames in 3usize..60, seed in any::<u64>(), k in 1e-3..1e3f64) {
        let seq = walking_sequence(frames, seed);
        let flags = smooth_flags(&seq.positions()).unwrap();
        let scaled = rescale(&seq, k);
        prop_assert_eq!(smooth_flags(&scaled.positions()).unwrap(), flags);
        let a = smooth_prefix(&seq).map(|s| s.frames.iter().map(|f| f.id).collect::<Vec<_>>()).ok();
        let b = smooth_prefix(&scaled).map(|s| s.frames.iter().map(|f| f.id).collect::<Vec<_>>()).ok();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn triplets_are_valid(n in 10usize..200, seed in any::<u64>()) {
        let seq = line_sequence(n, 0.1);
        let t = sample_triplet(&seq, seed).unwrap();
        check_triplet(&t, n);
    }
}

fn check_triplet(t: &stereomag::dataset::Triplet, n: usize) {
    let [p1, p2, pt] = t.positions;
    assert!(p1 != p2 && p1 != pt && p2 != pt);
    assert!(t.positions.iter().all(|&p| p < WINDOW_FRAMES));
    assert!((1..=MAX_STRIDE).contains(&t.stride));
    assert!(t.start + (WINDOW_FRAMES - 1) * t.stride < n);
    for (frame, p) in [(&t.src1, p1), (&t.src2, p2), (&t.target, pt)] {
        assert_eq!(frame.index, t.start + p * t.stride);
        assert_eq!(frame.frame_id, frame.index as u64);
    }
    let (lo, hi) = (p1.min(p2), p1.max(p2));
    assert_eq!(t.extrapolation, pt < lo || pt > hi);
    assert!(t.offset_ratio() <= 9.0);
}

#[test]
fn every_feasible_stride_is_drawn() {
    let seq = line_sequence(100, 0.1);
    let mut seen = [0usize; MAX_STRIDE + 1];
    for seed in 0..2000 {
        seen[sample_triplet(&seq, seed).unwrap().stride] += 1;
    }
    // (100 − 1) / 9 = 11, capped at 10
    assert_eq!(seen[0], 0);
    for (s, count) in seen.iter().enumerate().skip(1) {
        assert!(*count > 120, "stride {s} drawn {count} times");
    }
}

#[test]
fn sequence_and_points_survive_a_file_round_trip() {
    let seq = walking_sequence(12, 3);
    let text = write_sequence(&seq).unwrap();
    let mut back = parse_sequence(&text, Path::new("seq.txt")).unwrap();
    back.points = parse_points(&write_points(&seq.points), Path::new("pts.txt")).unwrap();
    assert_eq!(back.len(), 12);
    for (a, b) in seq.frames.iter().zip(&back.frames) {
        assert_eq!(a.id, b.id);
        assert!((a.camera.center() - b.camera.center()).norm() < 1e-7);
        assert!((a.camera.intrinsics.fx - b.camera.intrinsics.fx).abs() < 1e-5);
    }
    let f1 = normalization_factor(&seq).unwrap();
    let f2 = normalization_factor(&back).unwrap();
    assert!((f1 - f2).abs() < 1e-6 * f1);
}

#[test]
fn trimming_rules() {
    assert_eq!(trim_and_filter(&line_sequence(50, 0.1), 10, 30).unwrap().len(), 30);
    assert!(trim_and_filter(&line_sequence(49, 0.1), 10, 30).is_none());
    assert!(trim_and_filter(&line_sequence(20, 0.1), 10, 30).is_none());
}

#[test]
fn a_kinked_trajectory_keeps_its_longest_straight_part() {
    let mut seq = line_sequence(40, 0.1);
    // push frame 12 off the line by 0.3 of its neighbours' gap
    let c = seq.frames[12].camera.center() + Vector3::new(0.0, 0.3 * 0.2, 0.0);
    seq.frames[12].camera = seq.frames[12].camera.with_center(c);
    let kept = smooth_prefix(&seq).unwrap();
    let ids: Vec<u64> = kept.frames.iter().map(|f| f.id).collect();
    assert_eq!(ids, (13..40).collect::<Vec<u64>>());
}
