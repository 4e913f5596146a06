//! Posed video sequences: file format, scale normalization, smoothness
//! filtering, clip trimming and training-triplet sampling.
//!
//! Sequence files are whitespace-separated text. The header is
//! `H W near_hint far_hint`; each following line is one frame,
//! `frame_id fx fy cx cy r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3`, with
//! intrinsics divided by the image width (`fx`, `cx`) or height (`fy`, `cy`)
//! and measured from the image corner, and `(R, t)` the world-from-camera
//! pose. Point files hold one point per line: `point_id x y z frame_id...`,
//! listing the frames that observe the point.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{Camera, Intrinsics, Pose};
use crate::{Error, Result};

/// Near-plane depth that normalized sequences are scaled to.
pub const TARGET_NEAR_DEPTH: f64 = 1.25;
/// Per-frame percentile of point depths defining that frame's near depth.
pub const FRAME_NEAR_PERCENTILE: f64 = 5.0;
/// Percentile over frames that is mapped to [`TARGET_NEAR_DEPTH`].
pub const SEQUENCE_NEAR_PERCENTILE: f64 = 10.0;
/// Relative deviation bound for a frame to count as smooth.
pub const SMOOTHNESS_RATIO: f64 = 0.2;
pub const TRIM_FRAMES: usize = 10;
pub const MIN_CLIP_FRAMES: usize = 30;
pub const WINDOW_FRAMES: usize = 10;
pub const MAX_STRIDE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenePoint {
    pub id: u64,
    pub position: Vector3<f64>,
    pub visible_in: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosedSequence {
    pub frames: Vec<Frame>,
    pub points: Vec<ScenePoint>,
    /// Product of every scale factor applied so far.
    pub scale: f64,
    pub near_hint: f64,
    pub far_hint: f64,
}

impl PosedSequence {
    pub fn new(frames: Vec<Frame>) -> Self {
        Self {
            frames,
            points: Vec::new(),
            scale: 1.0,
            near_hint: 1.0,
            far_hint: 100.0,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|f| f.camera.center()).collect()
    }

    /// Frames in `range`, with point visibility restricted to them.
    pub fn slice(&self, range: Range<usize>) -> PosedSequence {
        let frames = self.frames[range].to_vec();
        let kept: std::collections::HashSet<u64> = frames.iter().map(|f| f.id).collect();
        let points = self
            .points
            .iter()
            .map(|p| ScenePoint {
                id: p.id,
                position: p.position,
                visible_in: p.visible_in.iter().copied().filter(|id| kept.contains(id)).collect(),
            })
            .collect();
        PosedSequence {
            frames,
            points,
            scale: self.scale,
            near_hint: self.near_hint,
            far_hint: self.far_hint,
        }
    }
}

fn tokens_f64(toks: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    toks.iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("`{t}` is not a number")))
        })
        .collect()
}

/// Parse a sequence file (see the module docs).
pub fn parse_sequence(text: &str, path: &Path) -> Result<PosedSequence> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 4 {
        return Err(Error::parse(path, hl, "header must be `H W near_hint far_hint`"));
    }
    let height: usize = h[0].parse().map_err(|_| Error::parse(path, hl, "bad image height"))?;
    let width: usize = h[1].parse().map_err(|_| Error::parse(path, hl, "bad image width"))?;
    let hints = tokens_f64(&h[2..], path, hl)?;
    let mut frames = Vec::new();
    for (ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 17 {
            return Err(Error::parse(path, ln, format!("expected 17 fields, found {}", toks.len())));
        }
        let id: u64 = toks[0].parse().map_err(|_| Error::parse(path, ln, "bad frame id"))?;
        let v = tokens_f64(&toks[1..], path, ln)?;
        let (w, hh) = (width as f64, height as f64);
        let intr = Intrinsics::new(v[0] * w, v[1] * hh, v[2] * w - 0.5, v[3] * hh - 0.5, width, height)
            .map_err(|e| Error::parse(path, ln, e.to_string()))?;
        let r = Matrix3::new(v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11], v[12]);
        let pose = Pose::new(r, Vector3::new(v[13], v[14], v[15])).map_err(|e| Error::parse(path, ln, e.to_string()))?;
        frames.push(Frame {
            id,
            camera: Camera { intrinsics: intr, pose },
        });
    }
    if frames.is_empty() {
        return Err(Error::parse(path, hl, "sequence has no frames"));
    }
    Ok(PosedSequence {
        frames,
        points: Vec::new(),
        scale: 1.0,
        near_hint: hints[0],
        far_hint: hints[1],
    })
}

/// Parse a point file (see the module docs).
pub fn parse_points(text: &str, path: &Path) -> Result<Vec<ScenePoint>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(Error::parse(path, i + 1, "expected `point_id x y z frame_id...`"));
        }
        let id = toks[0].parse().map_err(|_| Error::parse(path, i + 1, "bad point id"))?;
        let xyz = tokens_f64(&toks[1..4], path, i + 1)?;
        let visible_in = toks[4..]
            .iter()
            .map(|t| t.parse().map_err(|_| Error::parse(path, i + 1, format!("bad frame id `{t}`"))))
            .collect::<Result<Vec<u64>>>()?;
        points.push(ScenePoint {
            id,
            position: Vector3::new(xyz[0], xyz[1], xyz[2]),
            visible_in,
        });
    }
    Ok(points)
}

/// Format with nine significant digits.
pub fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-5..=12).contains(&mag) {
        return format!("{v:.8e}");
    }
    let decimals = (8 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn write_sequence(seq: &PosedSequence) -> Result<String> {
    let first = seq.frames.first().ok_or_else(|| Error::TooShort("empty sequence".into()))?;
    let (w, h) = (first.camera.width(), first.camera.height());
    let mut s = String::new();
    let _ = writeln!(s, "{h} {w} {} {}", sig9(seq.near_hint), sig9(seq.far_hint));
    for f in &seq.frames {
        let k = &f.camera.intrinsics;
        let (wf, hf) = (k.width as f64, k.height as f64);
        let r = &f.camera.pose.rotation;
        let t = &f.camera.pose.translation;
        let mut fields = vec![k.fx / wf, k.fy / hf, (k.cx + 0.5) / wf, (k.cy + 0.5) / hf];
        for i in 0..3 {
            for j in 0..3 {
                fields.push(r[(i, j)]);
            }
        }
        fields.extend([t.x, t.y, t.z]);
        let body: Vec<String> = fields.into_iter().map(sig9).collect();
        let _ = writeln!(s, "{} {}", f.id, body.join(" "));
    }
    Ok(s)
}

pub fn write_points(points: &[ScenePoint]) -> String {
    let mut s = String::new();
    for p in points {
        let _ = write!(s, "{} {} {} {}", p.id, sig9(p.position.x), sig9(p.position.y), sig9(p.position.z));
        for id in &p.visible_in {
            let _ = write!(s, " {id}");
        }
        s.push('\n');
    }
    s
}

/// Percentile `p` (0–100) with linear interpolation between closest ranks,
/// rank `p/100·(n−1)` on the sorted values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(v[lo] + (rank - lo as f64) * (v[hi] - v[lo]))
}

/// Each frame's near depth: a low percentile of its visible point depths.
pub fn frame_near_depths(seq: &PosedSequence) -> Result<Vec<f64>> {
    let mut per_frame: HashMap<u64, Vec<f64>> = HashMap::new();
    let index: HashMap<u64, &Frame> = seq.frames.iter().map(|f| (f.id, f)).collect();
    for p in &seq.points {
        for id in &p.visible_in {
            if let Some(f) = index.get(id) {
                let z = f.camera.to_camera(&p.position).z;
                if z > 0.0 {
                    per_frame.entry(*id).or_default().push(z);
                }
            }
        }
    }
    seq.frames
        .iter()
        .map(|f| {
            per_frame
                .get(&f.id)
                .and_then(|d| percentile(d, FRAME_NEAR_PERCENTILE))
                .ok_or(Error::NoPoints { frame_id: f.id })
        })
        .collect()
}

/// Factor that maps the sequence's near depth to [`TARGET_NEAR_DEPTH`].
pub fn normalization_factor(seq: &PosedSequence) -> Result<f64> {
    let near = frame_near_depths(seq)?;
    let p = percentile(&near, SEQUENCE_NEAR_PERCENTILE).ok_or_else(|| Error::TooShort("empty sequence".into()))?;
    Ok(TARGET_NEAR_DEPTH / p)
}

/// Uniformly rescale camera translations and points.
pub fn rescale(seq: &PosedSequence, factor: f64) -> PosedSequence {
    let mut out = seq.clone();
    for f in &mut out.frames {
        f.camera.pose.translation *= factor;
    }
    for p in &mut out.points {
        p.position *= factor;
    }
    out.scale *= factor;
    out.near_hint *= factor;
    out.far_hint *= factor;
    out
}

/// Rescale so the sequence's near depth sits at [`TARGET_NEAR_DEPTH`].
pub fn scale_normalize(seq: &PosedSequence) -> Result<PosedSequence> {
    let factor = normalization_factor(seq)?;
    Ok(rescale(seq, factor))
}

/// Smoothness verdict per frame. Interior frame `i` is smooth when
/// `‖p_i − (p_{i+1} + p_{i−1})/2‖ < 0.2·‖p_{i+1} − p_{i−1}‖`; the two end
/// frames copy the verdict of their only interior neighbor.
pub fn smooth_flags(positions: &[Vector3<f64>]) -> Result<Vec<bool>> {
    let n = positions.len();
    if n < 3 {
        return Err(Error::TooShort(format!("smoothness needs 3 frames, got {n}")));
    }
    let mut flags = vec![false; n];
    for i in 1..n - 1 {
        let (prev, cur, next) = (positions[i - 1], positions[i], positions[i + 1]);
        let deviation = (cur - (next + prev) / 2.0).norm();
        flags[i] = deviation < SMOOTHNESS_RATIO * (next - prev).norm();
    }
    flags[0] = flags[1];
    flags[n - 1] = flags[n - 2];
    Ok(flags)
}

/// Longest run of consecutive `true` values (earliest on ties).
pub fn longest_run(flags: &[bool]) -> Option<Range<usize>> {
    let mut best: Option<Range<usize>> = None;
    let mut start = None;
    for i in 0..=flags.len() {
        let on = i < flags.len() && flags[i];
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.as_ref().is_none_or(|b| i - s > b.len()) {
                    best = Some(s..i);
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// The longest subsequence in which every frame is smooth.
pub fn smooth_prefix(seq: &PosedSequence) -> Result<PosedSequence> {
    let flags = smooth_flags(&seq.positions())?;
    let run = longest_run(&flags).ok_or_else(|| Error::TooShort("no smooth frames".into()))?;
    Ok(seq.slice(run))
}

/// Drop `head_tail` frames at both ends; `None` if fewer than `min_len` remain.
pub fn trim_and_filter(seq: &PosedSequence, head_tail: usize, min_len: usize) -> Option<PosedSequence> {
    let n = seq.len();
    if n <= 2 * head_tail {
        return None;
    }
    let kept = n - 2 * head_tail;
    if kept < min_len || kept == 0 {
        return None;
    }
    Some(seq.slice(head_tail..n - head_tail))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TripletFrame {
    pub index: usize,
    pub frame_id: u64,
    #[serde(skip)]
    pub camera: Camera,
}

/// Two source frames and one target frame drawn from a strided window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Triplet {
    pub src1: TripletFrame,
    pub src2: TripletFrame,
    pub target: TripletFrame,
    pub start: usize,
    pub stride: usize,
    /// Window positions (0–9) of `src1`, `src2`, `target`.
    pub positions: [usize; 3],
    /// The target lies outside the interval spanned by the two sources.
    pub extrapolation: bool,
}

impl Triplet {
    /// Target offset from the nearer source, in units of the source gap.
    pub fn offset_ratio(&self) -> f64 {
        let [a, b, t] = self.positions.map(|p| p as f64);
        let gap = (a - b).abs();
        (t - a).abs().min((t - b).abs()) / gap
    }
}

/// Triplet at explicit window positions.
pub fn triplet_from_window(
    seq: &PosedSequence,
    start: usize,
    stride: usize,
    positions: [usize; 3],
) -> Result<Triplet> {
    let [p1, p2, pt] = positions;
    if p1 == p2 || p1 == pt || p2 == pt || positions.iter().any(|&p| p >= WINDOW_FRAMES) {
        return Err(Error::InvalidConfig(format!("invalid window positions {positions:?}")));
    }
    if stride == 0 || start + (WINDOW_FRAMES - 1) * stride >= seq.len() {
        return Err(Error::TooShort(format!(
            "window start {start} stride {stride} does not fit {} frames",
            seq.len()
        )));
    }
    let frame = |pos: usize| {
        let index = start + pos * stride;
        TripletFrame {
            index,
            frame_id: seq.frames[index].id,
            camera: seq.frames[index].camera,
        }
    };
    let (lo, hi) = (p1.min(p2), p1.max(p2));
    Ok(Triplet {
        src1: frame(p1),
        src2: frame(p2),
        target: frame(pt),
        start,
        stride,
        positions,
        extrapolation: pt < lo || pt > hi,
    })
}

/// Draw a stride uniformly among those whose 10-frame window fits, a window
/// start, and three distinct window positions (two sources, one target).
pub fn sample_triplet(seq: &PosedSequence, seed: u64) -> Result<Triplet> {
    let n = seq.len();
    if n < WINDOW_FRAMES {
        return Err(Error::TooShort(format!("need {WINDOW_FRAMES} frames, got {n}")));
    }
    let max_stride = ((n - 1) / (WINDOW_FRAMES - 1)).min(MAX_STRIDE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = rng.random_range(1..=max_stride);
    let span = (WINDOW_FRAMES - 1) * stride;
    let start = rng.random_range(0..n - span);
    let p1 = rng.random_range(0..WINDOW_FRAMES);
    let mut p2 = rng.random_range(0..WINDOW_FRAMES - 1);
    if p2 >= p1 {
        p2 += 1;
    }
    let mut pt = rng.random_range(0..WINDOW_FRAMES - 2);
    for taken in [p1.min(p2), p1.max(p2)] {
        if pt >= taken {
            pt += 1;
        }
    }
    triplet_from_window(seq, start, stride, [p1, p2, pt])
}
