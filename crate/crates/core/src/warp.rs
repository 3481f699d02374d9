//! Horizontal bilinear warping by a per-pixel disparity map.
//!
//! `out(y, x) = img(y, x + d(y, x))`, sampled bilinearly with the sampling
//! coordinate clamped to `[0, w-1]`. Positive disparity samples to the right.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Per-pixel horizontal disparity in pixels, shape (n, 1, h, w).
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap(Tensor4);

impl DisparityMap {
    pub fn new(t: Tensor4) -> Result<Self> {
        if t.shape().c != 1 {
            return Err(Error::Shape(format!(
                "disparity map must have one channel, got {}",
                t.shape()
            )));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("disparity map".into()));
        }
        Ok(DisparityMap(t))
    }

    /// Soft sanity bound: a message when some |d| exceeds the map width, so
    /// that warping would clamp every sample in that row.
    pub fn sanity_warning(&self) -> Option<String> {
        let w = self.0.shape().w as f64;
        let worst = self.0.data().iter().fold(0.0f64, |m, d| m.max(d.abs()));
        (worst > w).then(|| format!("disparity magnitude {worst:.3} exceeds map width {w}; samples will clamp"))
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }
}

fn check(img: &Tensor4, d: &Tensor4) -> Result<()> {
    let (is, ds) = (img.shape(), d.shape());
    if ds.c != 1 || (is.n, is.h, is.w) != (ds.n, ds.h, ds.w) {
        return Err(Error::Shape(format!(
            "warp_horizontal: image {is} and disparity {ds} do not match"
        )));
    }
    Ok(())
}

/// Sampling position for one pixel: (left index, right index, fraction, in-range).
#[inline]
fn sample_pos(x: usize, d: f64, w: usize) -> (usize, usize, f64, bool) {
    let raw = x as f64 + d;
    let max = (w - 1) as f64;
    let inside = (0.0..=max).contains(&raw);
    let sx = raw.clamp(0.0, max);
    let x0 = sx.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    (x0, x1, sx - x0 as f64, inside)
}

pub fn warp_horizontal(img: &Tensor4, d: &Tensor4) -> Result<Tensor4> {
    check(img, d)?;
    let s = img.shape();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        let dp = d.plane(n, 0);
        for c in 0..s.c {
            let src = img.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                let row = &src[y * s.w..][..s.w];
                for x in 0..s.w {
                    let (x0, x1, t, _) = sample_pos(x, dp[y * s.w + x], s.w);
                    dst[y * s.w + x] = (1.0 - t) * row[x0] + t * row[x1];
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`warp_horizontal`]: (grad_img, grad_disparity). The disparity
/// gradient is zero where the sample coordinate was clamped.
pub fn warp_horizontal_backward(img: &Tensor4, d: &Tensor4, gout: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    check(img, d)?;
    img.expect_same_shape(gout, "warp_horizontal_backward")?;
    let s = img.shape();
    let mut gi = Tensor4::zeros(s);
    let mut gd = Tensor4::zeros(d.shape());
    for n in 0..s.n {
        let dp = d.plane(n, 0).to_vec();
        for c in 0..s.c {
            let row_src = img.plane(n, c).to_vec();
            let g = gout.plane(n, c).to_vec();
            let gip = gi.plane_mut(n, c);
            let mut gdc = vec![0.0; s.plane()];
            for y in 0..s.h {
                for x in 0..s.w {
                    let p = y * s.w + x;
                    let (x0, x1, t, inside) = sample_pos(x, dp[p], s.w);
                    gip[y * s.w + x0] += (1.0 - t) * g[p];
                    gip[y * s.w + x1] += t * g[p];
                    if inside {
                        gdc[p] = g[p] * (row_src[y * s.w + x1] - row_src[y * s.w + x0]);
                    }
                }
            }
            for (a, v) in gd.plane_mut(n, 0).iter_mut().zip(gdc) {
                *a += v;
            }
        }
    }
    Ok((gi, gd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_disparity_is_identity() {
        let img = Tensor4::randn((2, 3, 5, 7), 0.0, 1.0, 1);
        let d = Tensor4::zeros((2, 1, 5, 7));
        assert_eq!(warp_horizontal(&img, &d).unwrap(), img);
    }

    #[test]
    fn integer_shift() {
        let img = Tensor4::randn((1, 2, 4, 6), 0.0, 1.0, 2);
        let d = Tensor4::full((1, 1, 4, 6), 1.0);
        let out = warp_horizontal(&img, &d).unwrap();
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..5 {
                    assert_eq!(out.at(0, c, y, x), img.at(0, c, y, x + 1));
                }
                // clamped at the right edge
                assert_eq!(out.at(0, c, y, 5), img.at(0, c, y, 5));
            }
        }
    }

    #[test]
    fn ramp_half_pixel() {
        let w = 8;
        let img = Tensor4::from_vec((1, 1, 1, w), (0..w).map(|x| x as f64).collect()).unwrap();
        let d = Tensor4::full((1, 1, 1, w), 0.5);
        let out = warp_horizontal(&img, &d).unwrap();
        for x in 0..w - 1 {
            assert!((out.at(0, 0, 0, x) - (x as f64 + 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn size_mismatch() {
        let img = Tensor4::zeros((1, 1, 4, 4));
        assert!(warp_horizontal(&img, &Tensor4::zeros((1, 1, 4, 5))).is_err());
        assert!(warp_horizontal(&img, &Tensor4::zeros((1, 2, 4, 4))).is_err());
    }

    #[test]
    fn disparity_map_needs_one_channel() {
        assert!(DisparityMap::new(Tensor4::zeros((1, 2, 2, 2))).is_err());
        assert!(DisparityMap::new(Tensor4::full((1, 1, 2, 2), f64::NAN)).is_err());
    }
}
