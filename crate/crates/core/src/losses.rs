//! Training losses and evaluation metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tape::{mse_cropped, Tape, Var};
use crate::tensor::Tensor4;
use crate::warp::warp_horizontal;

/// Pixels excluded on each side when averaging the disparity loss.
pub const DISP_BORDER: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_deblur: f64,
    pub l_disp: f64,
    pub l_reblur: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn new(l_deblur: f64, l_disp: f64, l_reblur: f64) -> Self {
        LossReport {
            l_deblur,
            l_disp,
            l_reblur,
            l_total: l_deblur + l_disp + l_reblur,
        }
    }
}

pub fn loss_deblur(tape: &mut Tape, deblurred: Var, sharp: Var) -> Result<Var> {
    tape.mse(deblurred, sharp, 0)
}

/// MSE between the right view warped onto the left and the left view, both
/// already at the disparity map's resolution.
pub fn loss_disp(tape: &mut Tape, left_down: Var, right_down: Var, d: Var) -> Result<Var> {
    let warped = tape.warp_horizontal(right_down, d)?;
    tape.mse(warped, left_down, DISP_BORDER)
}

pub fn loss_reblur(tape: &mut Tape, reblurred_down: Var, blurred_down: Var) -> Result<Var> {
    tape.mse(reblurred_down, blurred_down, 0)
}

pub fn mse(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    mse_cropped(a, b, 0)
}

pub fn loss_disp_value(left_down: &Tensor4, right_down: &Tensor4, d: &Tensor4) -> Result<f64> {
    let warped = warp_horizontal(right_down, d)?;
    mse_cropped(&warped, left_down, DISP_BORDER)
}

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor4, b: &Tensor4, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub fn mae(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    a.expect_same_shape(b, "mae")?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Channel-mean grayscale plane for one batch item.
pub fn grayscale(t: &Tensor4, n: usize) -> Vec<f64> {
    let s = t.shape();
    let mut g = vec![0.0; s.plane()];
    for c in 0..s.c {
        for (a, v) in g.iter_mut().zip(t.plane(n, c)) {
            *a += v;
        }
    }
    g.iter_mut().for_each(|v| *v /= s.c as f64);
    g
}

/// Valid-mode separable filtering of an (h, w) plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[y * w + x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over all valid 11x11 Gaussian windows of the
/// channel-mean grayscale images, averaged over the batch.
pub fn ssim(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    a.expect_same_shape(b, "ssim")?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            s.h, s.w
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for n in 0..s.n {
        let ga = grayscale(a, n);
        let gb = grayscale(b, n);
        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let mu_a = filter_valid(&ga, s.h, s.w, &taps);
        let mu_b = filter_valid(&gb, s.h, s.w, &taps);
        let aa = filter_valid(&prod(&ga, &ga), s.h, s.w, &taps);
        let bb = filter_valid(&prod(&gb, &gb), s.h, s.w, &taps);
        let ab = filter_valid(&prod(&ga, &gb), s.h, s.w, &taps);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / s.n as f64)
}
