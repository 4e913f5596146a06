//! Procedural layered scenes and a brute-force ray-casting renderer used as
//! ground truth.
//!
//! A scene is a stack of textured, fronto-parallel rectangles at world depth
//! `z = depth`, optionally backed by an infinite opaque background at the far
//! depth. Textures are smooth functions of `(x/z, y/z)`, so their on-screen
//! frequency does not depend on the layer depth.
//!
//! Scene files hold one directive per line (`#` starts a comment):
//!
//! ```text
//! range 1 100
//! background noise 7
//! layer 2.0 -0.4 -0.25 0.4 0.25 checker 3 1.0   # depth x0 y0 x1 y1 kind seed alpha
//! ```

use std::f64::consts::TAU;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::{make_depth_planes, Camera, DepthPlanes, Intrinsics, Pose};
use crate::mpi::MultiplaneImage;
use crate::raster::Image;
use crate::{Error, Result};

/// Samples per pixel along each axis.
pub const SUPERSAMPLING: usize = 4;
/// Width of the band around silhouettes excluded from strict comparisons.
pub const SILHOUETTE_BAND: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TextureKind {
    Checker,
    Gradient,
    Noise,
    Solid,
}

impl TextureKind {
    pub fn name(self) -> &'static str {
        match self {
            TextureKind::Checker => "checker",
            TextureKind::Gradient => "gradient",
            TextureKind::Noise => "noise",
            TextureKind::Solid => "solid",
        }
    }
}

impl fmt::Display for TextureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checker" => Ok(TextureKind::Checker),
            "gradient" => Ok(TextureKind::Gradient),
            "noise" => Ok(TextureKind::Noise),
            "solid" => Ok(TextureKind::Solid),
            _ => Err(Error::InvalidConfig(format!("unknown texture kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Wave {
    freq: [f64; 2],
    phase: f64,
    amp: [f64; 3],
}

/// Deterministic procedural texture with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub kind: TextureKind,
    pub seed: u64,
    base: [f64; 3],
    other: [f64; 3],
    waves: Vec<Wave>,
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(0.1..0.9))
}

fn random_direction(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 2] {
    let theta = rng.random_range(0.0..TAU);
    let f = rng.random_range(lo..hi);
    [f * theta.cos(), f * theta.sin()]
}

impl Texture {
    pub fn new(kind: TextureKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_color(&mut rng);
        let mut other = random_color(&mut rng);
        // keep the two colors of two-tone textures clearly apart
        if (0..3).map(|c| (base[c] - other[c]).abs()).sum::<f64>() < 0.6 {
            other = base.map(|v| 1.0 - v);
        }
        let waves = match kind {
            TextureKind::Noise => (0..5)
                .map(|_| Wave {
                    freq: random_direction(&mut rng, 2.0, 7.0),
                    phase: rng.random_range(0.0..TAU),
                    amp: [0; 3].map(|_| rng.random_range(-0.12..0.12)),
                })
                .collect(),
            TextureKind::Checker => vec![Wave {
                freq: [rng.random_range(3.0..5.0), rng.random_range(3.0..5.0)],
                phase: rng.random_range(0.0..TAU),
                amp: [0.0; 3],
            }],
            TextureKind::Gradient => vec![Wave {
                freq: random_direction(&mut rng, 1.0, 2.0),
                phase: rng.random_range(0.0..TAU),
                amp: [0.0; 3],
            }],
            TextureKind::Solid => Vec::new(),
        };
        Self {
            kind,
            seed,
            base,
            other,
            waves,
        }
    }

    fn mix(&self, t: f64) -> [f64; 3] {
        [0, 1, 2].map(|c| self.base[c] + t * (self.other[c] - self.base[c]))
    }

    /// Color at normalized coordinates `(u, v)`.
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let rgb = match self.kind {
            TextureKind::Solid => self.base,
            TextureKind::Checker => {
                let w = &self.waves[0];
                let s = (TAU * w.freq[0] * u + w.phase).sin() * (TAU * w.freq[1] * v + w.phase).sin();
                // softened checkerboard: smooth transitions, flat-ish cells
                self.mix(0.5 + 0.5 * (3.0 * s).tanh() / 3f64.tanh())
            }
            TextureKind::Gradient => {
                let w = &self.waves[0];
                self.mix(0.5 + 0.5 * (TAU * (w.freq[0] * u + w.freq[1] * v) + w.phase).sin())
            }
            TextureKind::Noise => {
                let mut rgb = self.mix(0.5);
                for w in &self.waves {
                    let s = (TAU * (w.freq[0] * u + w.freq[1] * v) + w.phase).sin();
                    for (c, out) in rgb.iter_mut().enumerate() {
                        *out += w.amp[c] * s;
                    }
                }
                rgb
            }
        };
        rgb.map(|x| x.clamp(0.0, 1.0))
    }
}

/// A textured rectangle `[x0, x1] × [y0, y1]` on the plane `z = depth`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub depth: f64,
    pub extent: [f64; 4],
    pub texture: Texture,
    pub alpha: f64,
}

impl Layer {
    pub fn new(depth: f64, extent: [f64; 4], kind: TextureKind, seed: u64, alpha: f64) -> Self {
        Self {
            depth,
            extent,
            texture: Texture::new(kind, seed),
            alpha,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let [x0, y0, x1, y1] = self.extent;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub near: f64,
    pub far: f64,
    pub layers: Vec<Layer>,
    /// Opaque, unbounded plane at `far`.
    pub background: Option<Texture>,
}

impl SyntheticScene {
    pub fn new(near: f64, far: f64, background: Option<Texture>) -> Self {
        Self {
            near,
            far,
            layers: Vec::new(),
            background,
        }
    }

    pub fn with_layer(mut self, layer: Layer) -> Self {
        self.layers.push(layer);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.far > self.near && self.far.is_finite()) {
            return Err(Error::InvalidRange {
                near: self.near,
                far: self.far,
            });
        }
        for l in &self.layers {
            let [x0, y0, x1, y1] = l.extent;
            if !(l.depth > self.near && l.depth < self.far) {
                return Err(Error::InvalidConfig(format!(
                    "layer depth {} outside ({}, {})",
                    l.depth, self.near, self.far
                )));
            }
            if !(x0 < x1 && y0 < y1) || !(0.0..=1.0).contains(&l.alpha) {
                return Err(Error::InvalidConfig(format!("bad layer extent or alpha at depth {}", l.depth)));
            }
        }
        Ok(())
    }

    /// Layers sorted far to near.
    fn sorted_layers(&self) -> Vec<&Layer> {
        let mut v: Vec<&Layer> = self.layers.iter().collect();
        v.sort_by(|a, b| b.depth.total_cmp(&a.depth));
        v
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut scene = SyntheticScene::new(1.0, 100.0, None);
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |t: &str| -> Result<f64> {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(path, line_no, format!("`{t}` is not a number")))
            };
            let kind = |t: &str| t.parse::<TextureKind>().map_err(|e| Error::parse(path, line_no, e.to_string()));
            let seed = |t: &str| t.parse::<u64>().map_err(|_| Error::parse(path, line_no, format!("bad seed `{t}`")));
            match (toks[0], toks.len()) {
                ("range", 3) => {
                    scene.near = num(toks[1])?;
                    scene.far = num(toks[2])?;
                }
                ("background", 3) => scene.background = Some(Texture::new(kind(toks[1])?, seed(toks[2])?)),
                ("layer", 9) => scene.layers.push(Layer::new(
                    num(toks[1])?,
                    [num(toks[2])?, num(toks[3])?, num(toks[4])?, num(toks[5])?],
                    kind(toks[6])?,
                    seed(toks[7])?,
                    num(toks[8])?,
                )),
                _ => return Err(Error::parse(path, line_no, format!("unrecognized directive `{line}`"))),
            }
        }
        scene.validate().map_err(|e| Error::parse(path, 0, e.to_string()))?;
        Ok(scene)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "range {} {}", self.near, self.far);
        if let Some(bg) = &self.background {
            let _ = writeln!(s, "background {} {}", bg.kind, bg.seed);
        }
        for l in &self.layers {
            let [x0, y0, x1, y1] = l.extent;
            let _ = writeln!(
                s,
                "layer {} {x0} {y0} {x1} {y1} {} {} {}",
                l.depth, l.texture.kind, l.texture.seed, l.alpha
            );
        }
        s
    }
}

/// Point on the plane `z = depth` hit by the ray, if it lies ahead.
fn hit(origin: &Vector3<f64>, dir: &Vector3<f64>, depth: f64) -> Option<Vector3<f64>> {
    if dir.z.abs() < 1e-15 {
        return None;
    }
    let t = (depth - origin.z) / dir.z;
    (t > 0.0).then(|| origin + dir * t)
}

/// Color seen along one ray, compositing front to back.
fn trace(layers: &[&Layer], background: Option<&(Texture, f64)>, origin: &Vector3<f64>, dir: &Vector3<f64>) -> [f64; 3] {
    let mut hits: Vec<(f64, [f64; 3], f64)> = Vec::with_capacity(layers.len() + 1);
    for l in layers {
        if let Some(p) = hit(origin, dir, l.depth) {
            if l.contains(p.x, p.y) {
                let dist = (p - origin).norm();
                hits.push((dist, l.texture.sample(p.x / l.depth, p.y / l.depth), l.alpha));
            }
        }
    }
    if let Some((tex, depth)) = background {
        if let Some(p) = hit(origin, dir, *depth) {
            hits.push(((p - origin).norm(), tex.sample(p.x / depth, p.y / depth), 1.0));
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = [0.0; 3];
    let mut transmit = 1.0;
    for (_, rgb, a) in hits {
        for c in 0..3 {
            out[c] += transmit * a * rgb[c];
        }
        transmit *= 1.0 - a;
        if transmit <= 0.0 {
            break;
        }
    }
    out
}

fn subsample_offsets() -> [f64; SUPERSAMPLING] {
    std::array::from_fn(|i| (i as f64 + 0.5) / SUPERSAMPLING as f64 - 0.5)
}

/// Brute-force render: 4×4 ray samples per pixel, box-filtered.
pub fn oracle_render(scene: &SyntheticScene, cam: &Camera) -> Image<f32> {
    let (w, h) = (cam.width(), cam.height());
    let layers = scene.sorted_layers();
    let bg = scene.background.clone().map(|t| (t, scene.far));
    let offs = subsample_offsets();
    let norm = 1.0 / (SUPERSAMPLING * SUPERSAMPLING) as f64;
    let rows: Vec<Vec<[f64; 3]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut acc = [0.0; 3];
                    for oy in offs {
                        for ox in offs {
                            let (o, d) = cam.ray(x as f64 + ox, y as f64 + oy);
                            let rgb = trace(&layers, bg.as_ref(), &o, &d);
                            for c in 0..3 {
                                acc[c] += rgb[c] * norm;
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Image::from_fn(w, h, 3, |c, x, y| rows[y][x][c] as f32)
}

fn plane_index(dp: &DepthPlanes, depth: f64) -> Result<usize> {
    let k = dp.nearest_index(depth);
    if (dp.depth(k) - depth).abs() <= 1e-9 * depth {
        Ok(k)
    } else {
        Err(Error::DepthMismatch { depth })
    }
}

/// Rasterize a scene whose layers sit exactly on plane depths into an MPI in
/// the frame of `ref_cam`. The reference camera must look down +z from
/// `z = 0`, so that scene planes are fronto-parallel to it.
pub fn scene_to_mpi(scene: &SyntheticScene, dp: &DepthPlanes, ref_cam: &Camera) -> Result<MultiplaneImage<f32>> {
    if (ref_cam.pose.rotation - nalgebra::Matrix3::identity()).abs().max() > 1e-12 || ref_cam.center().z.abs() > 1e-12 {
        return Err(Error::InvalidCamera("reference camera must have identity rotation and z = 0".into()));
    }
    let mut mpi = MultiplaneImage::transparent(dp.clone(), *ref_cam);
    let (w, h) = (ref_cam.width(), ref_cam.height());
    let offs = subsample_offsets();
    let norm = 1.0 / (SUPERSAMPLING * SUPERSAMPLING) as f64;

    let mut jobs: Vec<(usize, Texture, Option<&Layer>)> = Vec::new();
    if let Some(bg) = &scene.background {
        jobs.push((plane_index(dp, scene.far)?, bg.clone(), None));
    }
    for l in &scene.layers {
        jobs.push((plane_index(dp, l.depth)?, l.texture.clone(), Some(l)));
    }
    for (k, tex, layer) in jobs {
        let depth = dp.depth(k);
        let alpha = layer.map_or(1.0, |l| l.alpha);
        let mut color = Image::<f32>::new(w, h, 3);
        let mut cover = Image::<f32>::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                let mut a = 0.0;
                for oy in offs {
                    for ox in offs {
                        let (o, d) = ref_cam.ray(x as f64 + ox, y as f64 + oy);
                        let Some(p) = hit(&o, &d, depth) else { continue };
                        if layer.is_some_and(|l| !l.contains(p.x, p.y)) {
                            continue;
                        }
                        let rgb = tex.sample(p.x / depth, p.y / depth);
                        for c in 0..3 {
                            acc[c] += rgb[c] * alpha * norm;
                        }
                        a += alpha * norm;
                    }
                }
                if a > 0.0 {
                    for c in 0..3 {
                        color.set(c, x, y, (acc[c] / a) as f32);
                    }
                }
                cover.set(0, x, y, a as f32);
            }
        }
        // Layers sharing a plane are combined with the over operator.
        let plane = mpi.plane_mut(k);
        for p in 0..w * h {
            let (a_new, a_old) = (cover.data()[p], plane.alpha.data()[p]);
            let a_out = a_new + a_old * (1.0 - a_new);
            for c in 0..3 {
                let premult = color.channel(c)[p] * a_new + plane.color.channel(c)[p] * a_old * (1.0 - a_new);
                plane.color.channel_mut(c)[p] = if a_out > 0.0 { premult / a_out } else { 0.0 };
            }
            plane.alpha.data_mut()[p] = a_out;
        }
    }
    Ok(mpi)
}

/// Pixels of `cam` near a depth discontinuity, a layer edge, the edge of
/// the reference frustum on any layer, or the image border. `true` marks an
/// excluded pixel.
pub fn silhouette_mask(scene: &SyntheticScene, ref_cam: &Camera, cam: &Camera, band: usize) -> Vec<bool> {
    let (w, h) = (cam.width(), cam.height());
    let (rw, rh) = (ref_cam.width() as f64, ref_cam.height() as f64);
    let mut planes: Vec<(f64, Option<&Layer>)> = scene.layers.iter().map(|l| (l.depth, Some(l))).collect();
    if scene.background.is_some() {
        planes.push((scene.far, None));
    }
    let labels: Vec<u64> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            let (o, d) = cam.ray(x, y);
            let mut bits = 0u64;
            for (i, (depth, layer)) in planes.iter().enumerate() {
                let Some(q) = hit(&o, &d, *depth) else { continue };
                if layer.is_some_and(|l| !l.contains(q.x, q.y)) {
                    continue;
                }
                let inside_ref = ref_cam
                    .project(&q)
                    .is_some_and(|(u, v, _)| u >= 0.0 && u <= rw - 1.0 && v >= 0.0 && v <= rh - 1.0);
                if inside_ref {
                    bits |= 1 << (2 * i);
                }
                bits |= 1 << (2 * i + 1);
            }
            bits
        })
        .collect();
    let mut edge = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w && labels[p] != labels[p + 1] {
                edge[p] = true;
                edge[p + 1] = true;
            }
            if y + 1 < h && labels[p] != labels[p + w] {
                edge[p] = true;
                edge[p + w] = true;
            }
        }
    }
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let border = x < band || y < band || x + band >= w || y + band >= h;
            let near_edge = || {
                let (x0, x1) = (x.saturating_sub(band), (x + band).min(w - 1));
                let (y0, y1) = (y.saturating_sub(band), (y + band).min(h - 1));
                (y0..=y1).any(|yy| (x0..=x1).any(|xx| edge[yy * w + xx]))
            };
            mask[y * w + x] = border || near_edge();
        }
    }
    mask
}

/// Mean and max absolute difference over pixels not excluded by `mask`.
pub fn masked_diff(a: &Image<f32>, b: &Image<f32>, mask: &[bool]) -> Result<(f64, f64)> {
    a.expect_shape(b, "masked diff")?;
    let n = a.pixel_count();
    if mask.len() != n {
        return Err(Error::ShapeMismatch(format!("mask has {} entries for {n} pixels", mask.len())));
    }
    let (mut sum, mut max, mut count) = (0.0f64, 0.0f64, 0usize);
    for c in 0..a.channels() {
        for (p, (x, y)) in a.channel(c).iter().zip(b.channel(c)).enumerate() {
            if !mask[p] {
                let d = (*x as f64 - *y as f64).abs();
                sum += d;
                max = max.max(d);
                count += 1;
            }
        }
    }
    Ok((sum / count.max(1) as f64, max))
}

/// Pixels of `cam` that an MPI in the frame of `ref_cam` cannot represent:
/// some surface along the central ray projects within one pixel of the
/// reference image border, or outside it. `true` marks an excluded pixel.
pub fn frustum_mask(scene: &SyntheticScene, ref_cam: &Camera, cam: &Camera) -> Vec<bool> {
    let (w, h) = (cam.width(), cam.height());
    let (rw, rh) = (ref_cam.width() as f64, ref_cam.height() as f64);
    let layers = scene.sorted_layers();
    (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (o, d) = cam.ray((p % w) as f64, (p / w) as f64);
            let mut depths: Vec<f64> = layers
                .iter()
                .filter(|l| hit(&o, &d, l.depth).is_some_and(|q| l.contains(q.x, q.y)))
                .map(|l| l.depth)
                .collect();
            if scene.background.is_some() {
                depths.push(scene.far);
            }
            depths.iter().any(|&z| {
                hit(&o, &d, z).is_none_or(|q| {
                    !ref_cam
                        .project(&q)
                        .is_some_and(|(u, v, _)| u >= 1.0 && u <= rw - 2.0 && v >= 1.0 && v <= rh - 2.0)
                })
            })
        })
        .collect()
}

/// PSNR in dB over pixels not excluded by `mask`.
pub fn masked_psnr(a: &Image<f32>, b: &Image<f32>, mask: &[bool]) -> Result<f64> {
    a.expect_shape(b, "masked psnr")?;
    if mask.len() != a.pixel_count() {
        return Err(Error::ShapeMismatch(format!("mask has {} entries for {} pixels", mask.len(), a.pixel_count())));
    }
    let (mut sse, mut count) = (0.0f64, 0usize);
    for c in 0..a.channels() {
        for (p, (x, y)) in a.channel(c).iter().zip(b.channel(c)).enumerate() {
            if !mask[p] {
                let d = *x as f64 - *y as f64;
                sse += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::ShapeMismatch("mask excludes every pixel".into()));
    }
    Ok(if sse == 0.0 { f64::INFINITY } else { 10.0 * (count as f64 / sse).log10() })
}

/// Camera at the origin looking down +z, with focal length `0.9·width`.
pub fn reference_camera(width: usize, height: usize) -> Camera {
    let k = Intrinsics::centered(0.9 * width as f64, width, height).expect("positive size");
    Camera {
        intrinsics: k,
        pose: Pose::identity(),
    }
}

/// One of five built-in test scenes, with every layer on a plane of `dp`
/// and the background on its far plane. `index` is taken modulo 5. Layer
/// rectangles stay inside the frustum of a [`reference_camera`].
pub fn aligned_scene(index: usize, dp: &DepthPlanes) -> SyntheticScene {
    let n = dp.count();
    // plane index by fraction of the disparity range (0 = far, 1 = near)
    let at = |f: f64| dp.depth(((f * (n - 1) as f64).round() as usize).clamp(1, n - 1));
    let rect = |depth: f64, cx: f64, cy: f64, hw: f64, hh: f64| -> [f64; 4] {
        // extents given in normalized image coordinates of the reference view
        [(cx - hw) * depth, (cy - hh) * depth, (cx + hw) * depth, (cy + hh) * depth]
    };
    let bg = |kind, seed| Some(Texture::new(kind, seed));
    let (near, far) = (dp.near(), dp.far());
    let s = index as u64 % 5;
    let scene = match s {
        0 => {
            let d = at(0.5);
            SyntheticScene::new(near, far, bg(TextureKind::Noise, 100))
                .with_layer(Layer::new(d, rect(d, -0.05, 0.0, 0.22, 0.15), TextureKind::Checker, 1, 1.0))
        }
        1 => {
            let (d1, d2) = (at(0.3), at(0.75));
            SyntheticScene::new(near, far, bg(TextureKind::Gradient, 101))
                .with_layer(Layer::new(d1, rect(d1, 0.1, 0.02, 0.25, 0.18), TextureKind::Noise, 2, 1.0))
                .with_layer(Layer::new(d2, rect(d2, -0.2, -0.03, 0.12, 0.12), TextureKind::Checker, 3, 1.0))
        }
        2 => {
            let (d1, d2) = (at(0.4), at(0.8));
            SyntheticScene::new(near, far, bg(TextureKind::Checker, 102))
                .with_layer(Layer::new(d1, rect(d1, 0.0, 0.0, 0.3, 0.2), TextureKind::Noise, 4, 1.0))
                .with_layer(Layer::new(d2, rect(d2, 0.1, 0.05, 0.12, 0.1), TextureKind::Noise, 5, 0.5))
        }
        3 => {
            let (d1, d2, d3) = (at(0.2), at(0.5), at(0.85));
            SyntheticScene::new(near, far, bg(TextureKind::Noise, 103))
                .with_layer(Layer::new(d1, rect(d1, -0.2, 0.0, 0.2, 0.2), TextureKind::Gradient, 6, 1.0))
                .with_layer(Layer::new(d2, rect(d2, 0.2, 0.05, 0.15, 0.12), TextureKind::Checker, 7, 1.0))
                .with_layer(Layer::new(d3, rect(d3, 0.0, -0.08, 0.08, 0.06), TextureKind::Noise, 8, 1.0))
        }
        _ => {
            let (d1, d2) = (at(0.6), at(0.9));
            SyntheticScene::new(near, far, bg(TextureKind::Noise, 104))
                .with_layer(Layer::new(d1, rect(d1, 0.0, 0.0, 0.35, 0.22), TextureKind::Noise, 9, 0.7))
                .with_layer(Layer::new(d2, rect(d2, -0.15, 0.02, 0.1, 0.1), TextureKind::Checker, 10, 1.0))
        }
    };
    debug_assert!(scene.validate().is_ok());
    scene
}

/// A scene whose background holds detail the reference view cannot see: a
/// solid strip hidden just behind the trailing (+x) edge of an opaque
/// foreground layer, revealed as the camera moves right. `fx` is the
/// reference focal length in pixels and sets the strip's width (~5.5 px).
/// The built-in scenes only hide smooth texture that is predictable from its
/// visible surroundings.
pub fn occluded_detail_scene(dp: &DepthPlanes, fx: f64, seed: u64) -> SyntheticScene {
    let n = dp.count();
    let at = |f: f64| dp.depth(((f * (n - 1) as f64).round() as usize).clamp(1, n - 1));
    let rect = |d: f64, x0: f64, y0: f64, x1: f64, y1: f64| [x0 * d, y0 * d, x1 * d, y1 * d];
    let (fg, mid) = (at(0.7), at(0.15));
    let edge = 0.2;
    // strip from 6 px to 0.5 px inside the edge
    let (s0, s1) = (edge - 6.0 / fx, edge - 0.5 / fx);
    let scene = SyntheticScene::new(dp.near(), dp.far(), Some(Texture::new(TextureKind::Noise, seed)))
        .with_layer(Layer::new(fg, rect(fg, -0.4, -0.25, edge, 0.25), TextureKind::Checker, seed + 1, 1.0))
        .with_layer(Layer::new(mid, rect(mid, s0, -0.2, s1, 0.2), TextureKind::Solid, seed + 2, 1.0));
    debug_assert!(scene.validate().is_ok());
    scene
}

/// Depth planes used by the built-in scenes at the given plane count.
pub fn default_planes(count: usize) -> DepthPlanes {
    make_depth_planes(1.0, 100.0, count).expect("valid defaults")
}
