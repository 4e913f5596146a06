//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereomag::dataset::{Frame, PosedSequence, ScenePoint};
use stereomag::{Camera, Intrinsics, Pose};

/// A forward-walking camera with small wobble, seeing a cloud of points
/// ahead of it at 2–40 units.
pub fn walking_sequence(frames: usize, seed: u64) -> PosedSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Intrinsics::centered(500.0, 640, 360).unwrap();
    let step = rng.random_range(0.02..0.2);
    let frames: Vec<Frame> = (0..frames)
        .map(|i| {
            let wobble = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0) * 0.01 * step;
            let center = Vector3::new(0.3 * step * i as f64, 0.0, step * i as f64) + wobble;
            let axis = Vector3::new(rng.random_range(-1.0..1.0), 1.0, 0.0);
            Frame {
                id: 100 + i as u64,
                camera: Camera::new(k, Pose::from_axis_angle(axis, rng.random_range(-0.05..0.05), center)).unwrap(),
            }
        })
        .collect();
    let last = frames.last().unwrap().camera.center().z;
    let points = (0..60)
        .map(|j| {
            let z = last + rng.random_range(2.0..40.0);
            let p = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), z);
            ScenePoint {
                id: j,
                position: p,
                visible_in: frames.iter().map(|f| f.id).collect(),
            }
        })
        .collect();
    let mut seq = PosedSequence::new(frames);
    seq.points = points;
    seq
}

/// `n` equally spaced cameras on a straight line.
pub fn line_sequence(n: usize, spacing: f64) -> PosedSequence {
    let k = Intrinsics::centered(100.0, 64, 48).unwrap();
    PosedSequence::new(
        (0..n)
            .map(|i| Frame {
                id: i as u64,
                camera: Camera::new(k, Pose::from_translation(Vector3::new(spacing * i as f64, 0.0, 0.0))).unwrap(),
            })
            .collect(),
    )
}
