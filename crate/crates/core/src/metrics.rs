//! PSNR and SSIM for images with values in `[0, 1]`.
//!
//! SSIM is computed on Rec.601 luma with an 11×11 Gaussian window (σ = 1.5),
//! `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, over valid window positions only.

use serde::{Serialize, Serializer};

use crate::raster::Image;
use crate::{Error, Real, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr<T: Real>(pred: &Image<T>, truth: &Image<T>) -> Result<f64> {
    pred.expect_shape(truth, "psnr")?;
    let n = pred.data().len();
    if n == 0 {
        return Err(Error::ShapeMismatch("psnr of empty images".into()));
    }
    let sse: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| {
            let d = a.to_f64().unwrap_or(f64::NAN) - b.to_f64().unwrap_or(f64::NAN);
            d * d
        })
        .sum();
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable valid-mode filtering of a `w × h` single-channel buffer.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean structural similarity over all valid window positions.
pub fn ssim<T: Real>(pred: &Image<T>, truth: &Image<T>) -> Result<f64> {
    pred.expect_shape(truth, "ssim")?;
    let (w, h) = (pred.width(), pred.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmallImage {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let to64 = |img: &Image<T>| -> Vec<f64> {
        img.luma().data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    };
    let a = to64(pred);
    let b = to64(truth);
    let k = gaussian_kernel();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&a, w, h, &k);
    let mu_b = filter_valid(&b, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / n as f64)
}

/// Serializes a PSNR so the identical-image sentinel survives JSON.
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

/// One evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub scene: String,
    pub view: String,
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    #[serde(serialize_with = "serialize_db")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    /// Means over rows. The mean PSNR is infinite only if every row is.
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        Self {
            rows,
            mean_psnr,
            mean_ssim,
        }
    }
}

pub fn evaluate<T: Real>(scene: &str, view: &str, pred: &Image<T>, truth: &Image<T>) -> Result<MetricRow> {
    Ok(MetricRow {
        scene: scene.to_string(),
        view: view.to_string(),
        psnr: psnr(pred, truth)?,
        ssim: ssim(pred, truth)?,
    })
}
