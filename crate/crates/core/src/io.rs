//! File I/O: PNG (8/16-bit) and PPM images, MPI directories, atomic writes.
//!
//! Pixel values are treated as linear in `[0, 1]`; no color management.
//!
//! An MPI directory holds `meta.txt` and one 16-bit RGBA PNG per plane,
//! `plane_000.png` being the farthest. `meta.txt` reads
//!
//! ```text
//! planes D near far
//! camera H W fx fy cx cy r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3
//! ```
//!
//! with intrinsics in pixels (origin at the center of the top-left pixel)
//! and the world-from-camera pose of the reference view.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb, Rgba};
use nalgebra::{Matrix3, Vector3};

use crate::dataset::sig9;
use crate::geometry::{make_depth_planes, Camera, Intrinsics, Pose};
use crate::mpi::{MultiplaneImage, RgbaPlane};
use crate::raster::Image;
use crate::{Error, Result};

/// Largest input resolution processed without downscaling.
pub const MAX_RESOLUTION: (usize, usize) = (1024, 576);

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `bytes` to a temporary sibling of `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Read an RGB image (PNG or PPM; alpha is dropped) into `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let dynamic = image::load_from_memory(&bytes).map_err(image_err(path))?;
    let rgb = dynamic.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Image::from_fn(w, h, 3, |c, x, y| {
        rgb.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)
    }))
}

fn quantize<const MAX: u32>(v: f32) -> f64 {
    (v.clamp(0.0, 1.0) as f64 * MAX as f64).round()
}

fn encode(dynamic: DynamicImage, format: ImageFormat, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    dynamic.write_to(&mut buf, format).map_err(image_err(path))?;
    Ok(buf.into_inner())
}

fn format_for(path: &Path) -> ImageFormat {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("ppm") | Some("pnm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    }
}

/// Write a 3-channel image. PNGs are 8- or 16-bit per `bits16`; `.ppm` paths
/// are always 8-bit binary PPM.
pub fn write_image(path: &Path, img: &Image<f32>, bits16: bool) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::ShapeMismatch(format!("expected an RGB image, got {} channels", img.channels())));
    }
    let (w, h) = (img.width() as u32, img.height() as u32);
    let format = format_for(path);
    let dynamic = if bits16 && format == ImageFormat::Png {
        DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_fn(w, h, |x, y| {
            Rgb([0, 1, 2].map(|c| quantize::<65535>(img.get(c, x as usize, y as usize)) as u16))
        }))
    } else {
        DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_fn(w, h, |x, y| {
            Rgb([0, 1, 2].map(|c| quantize::<255>(img.get(c, x as usize, y as usize)) as u8))
        }))
    };
    write_atomic(path, &encode(dynamic, format, path)?)
}

fn plane_path(dir: &Path, d: usize) -> PathBuf {
    dir.join(format!("plane_{d:03}.png"))
}

pub fn camera_fields(cam: &Camera) -> String {
    let k = &cam.intrinsics;
    let r = &cam.pose.rotation;
    let t = &cam.pose.translation;
    let mut v = vec![k.fx, k.fy, k.cx, k.cy];
    v.extend(r.transpose().iter().copied()); // row-major
    v.extend(t.iter().copied());
    let body: Vec<String> = v.into_iter().map(sig9).collect();
    format!("{} {} {}", k.height, k.width, body.join(" "))
}

/// Parse `H W fx fy cx cy r11..r33 t1 t2 t3` (pixel intrinsics).
pub fn parse_camera_fields(toks: &[&str], path: &Path, line: usize) -> Result<Camera> {
    if toks.len() != 18 {
        return Err(Error::parse(path, line, format!("camera needs 18 fields, found {}", toks.len())));
    }
    let h: usize = toks[0].parse().map_err(|_| Error::parse(path, line, "bad height"))?;
    let w: usize = toks[1].parse().map_err(|_| Error::parse(path, line, "bad width"))?;
    let v = toks[2..]
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, line, format!("`{t}` is not a number"))))
        .collect::<Result<Vec<_>>>()?;
    let k = Intrinsics::new(v[0], v[1], v[2], v[3], w, h).map_err(|e| Error::parse(path, line, e.to_string()))?;
    let r = Matrix3::new(v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11], v[12]);
    let pose = Pose::new(r, Vector3::new(v[13], v[14], v[15])).map_err(|e| Error::parse(path, line, e.to_string()))?;
    Ok(Camera { intrinsics: k, pose })
}

/// Save an MPI directory (created if missing). Values are stored with 16 bits.
pub fn save_mpi(dir: &Path, mpi: &MultiplaneImage<f32>) -> Result<()> {
    create_dir(dir)?;
    let (w, h) = (mpi.width() as u32, mpi.height() as u32);
    for (d, plane) in mpi.planes().iter().enumerate() {
        let buf = ImageBuffer::<Rgba<u16>, _>::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let q = |v: f32| quantize::<65535>(v) as u16;
            Rgba([
                q(plane.color.get(0, x, y)),
                q(plane.color.get(1, x, y)),
                q(plane.color.get(2, x, y)),
                q(plane.alpha.get(0, x, y)),
            ])
        });
        let path = plane_path(dir, d);
        write_atomic(&path, &encode(DynamicImage::ImageRgba16(buf), ImageFormat::Png, &path)?)?;
    }
    let dp = mpi.depth_planes();
    let meta = format!(
        "planes {} {} {}\ncamera {}\n",
        dp.count(),
        sig9(dp.near()),
        sig9(dp.far()),
        camera_fields(mpi.ref_camera())
    );
    write_atomic(&dir.join("meta.txt"), meta.as_bytes())
}

pub fn load_mpi(dir: &Path) -> Result<MultiplaneImage<f32>> {
    let meta_path = dir.join("meta.txt");
    let text = read_text(&meta_path)?;
    let mut planes_line = None;
    let mut camera = None;
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first() {
            Some(&"planes") if toks.len() == 4 => {
                let count: usize = toks[1].parse().map_err(|_| Error::parse(&meta_path, i + 1, "bad plane count"))?;
                let num = |t: &str| t.parse::<f64>().map_err(|_| Error::parse(&meta_path, i + 1, "bad depth"));
                planes_line = Some((count, num(toks[2])?, num(toks[3])?));
            }
            Some(&"camera") => camera = Some(parse_camera_fields(&toks[1..], &meta_path, i + 1)?),
            None => {}
            _ => return Err(Error::parse(&meta_path, i + 1, "unrecognized line")),
        }
    }
    let (count, near, far) = planes_line.ok_or_else(|| Error::parse(&meta_path, 0, "missing `planes` line"))?;
    let camera = camera.ok_or_else(|| Error::parse(&meta_path, 0, "missing `camera` line"))?;
    let dp = make_depth_planes(near, far, count)?;
    let (w, h) = (camera.width(), camera.height());
    let mut planes = Vec::with_capacity(count);
    for d in 0..count {
        let path = plane_path(dir, d);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let rgba = image::load_from_memory(&bytes).map_err(image_err(&path))?.to_rgba32f();
        if rgba.width() as usize != w || rgba.height() as usize != h {
            return Err(Error::ShapeMismatch(format!("{} is not {w}x{h}", path.display())));
        }
        let px = |c: usize, x: usize, y: usize| rgba.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0);
        planes.push(RgbaPlane {
            color: Image::from_fn(w, h, 3, px),
            alpha: Image::from_fn(w, h, 1, |_, x, y| px(3, x, y)),
        });
    }
    MultiplaneImage::new(planes, dp, camera)
}

/// Downscale `img` (and its camera) to fit within `max` if needed. Returns
/// whether a resize happened.
pub fn fit_resolution(img: &Image<f32>, cam: &Camera, max: (usize, usize)) -> Result<(Image<f32>, Camera, bool)> {
    let (w, h) = (img.width(), img.height());
    if w <= max.0 && h <= max.1 {
        return Ok((img.clone(), *cam, false));
    }
    let s = (max.0 as f64 / w as f64).min(max.1 as f64 / h as f64);
    let (nw, nh) = (((w as f64 * s).round() as usize).max(1), ((h as f64 * s).round() as usize).max(1));
    let buf = ImageBuffer::<Rgb<f32>, _>::from_fn(w as u32, h as u32, |x, y| {
        Rgb([0, 1, 2].map(|c| img.get(c, x as usize, y as usize)))
    });
    let small = image::imageops::resize(&buf, nw as u32, nh as u32, image::imageops::FilterType::Triangle);
    let out = Image::from_fn(nw, nh, 3, |c, x, y| small.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0));
    let cam = cam.with_intrinsics(cam.intrinsics.resized(nw, nh)?);
    Ok((out, cam, true))
}
