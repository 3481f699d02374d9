//! WebAssembly bindings for the demo page in `www/`.
//!
//! Images cross the boundary as flat RGBA bytes ready for `ImageData`;
//! everything else is plain numbers. The plain-Rust functions in [`demo`]
//! do the work so they can be tested natively.

use wasm_bindgen::prelude::*;

pub mod demo {
    use ifan::adaptive::{filter_map_channels, iac_forward, FilterMap};
    use ifan::bench::{macs_fac, macs_iac};
    use ifan::synth::{gen_sharp, render_defocus, render_dual_pixel};
    use ifan::{Error, Result, Tensor4};

    pub const MAX_RADIUS: f64 = 12.0;

    pub fn rgba(img: &Tensor4) -> Vec<u8> {
        let s = img.shape();
        let mut out = Vec::with_capacity(s.h * s.w * 4);
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..3 {
                    out.push(ifan::io::quantize(img.at(0, c.min(s.c - 1), y, x)));
                }
                out.push(255);
            }
        }
        out
    }

    /// Sharp, blurred, left and right views of a synthetic scene under a
    /// constant signed blur radius, stacked as four RGBA images.
    pub fn dual_pixel_views(seed: u64, size: usize, radius: f64) -> Result<Vec<u8>> {
        if !(-MAX_RADIUS..=MAX_RADIUS).contains(&radius) {
            return Err(Error::Contract(format!("radius must lie in [-{MAX_RADIUS}, {MAX_RADIUS}]")));
        }
        let sharp = gen_sharp(seed, size, size)?;
        let r = Tensor4::full((1, 1, size, size), radius);
        let blurred = render_defocus(&sharp, &r)?;
        let (left, right) = render_dual_pixel(&sharp, &r)?;
        Ok([&sharp, &blurred, &left, &right].into_iter().flat_map(rgba).collect())
    }

    pub fn impulse_grid(n: usize, k: usize) -> Result<usize> {
        if n == 0 || n > 48 || k % 2 == 0 || k > 9 {
            return Err(Error::Contract("need 1 <= N <= 48 and odd k <= 9".into()));
        }
        Ok(2 * n * (k / 2) + 7)
    }

    /// Response of `n` IAC iterations with box filters and zero bias to a
    /// centred unit impulse, scaled so the peak is 1.
    pub fn impulse_response(n: usize, k: usize) -> Result<Vec<f32>> {
        let size = impulse_grid(n, k)?;
        let mut e = Tensor4::zeros((1, 1, size, size));
        *e.at_mut(0, 0, size / 2, size / 2) = 1.0;
        let mut f = Tensor4::full((1, filter_map_channels(n, 1, k), size, size), 1.0 / k as f64);
        for set in 0..n {
            f.plane_mut(0, set * (2 * k + 1) + 2 * k).fill(0.0);
        }
        let out = iac_forward(&e, &FilterMap::new(f, n, k, 1)?, 1.0)?;
        let peak = out.data().iter().cloned().fold(0.0, f64::max);
        Ok(out.data().iter().map(|v| (v / peak) as f32).collect())
    }

    pub fn mac_ratio(n: usize, k_iac: usize, k_fac: usize) -> f64 {
        macs_iac(1, 1, 1, n, k_iac) as f64 / macs_fac(1, 1, 1, k_fac) as f64
    }
}

fn js(e: ifan::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn dual_pixel_views(seed: u32, size: usize, radius: f64) -> Result<Vec<u8>, JsError> {
    demo::dual_pixel_views(seed as u64, size, radius).map_err(js)
}

/// Horizontal shift between the two views for a blur radius, in pixels.
#[wasm_bindgen]
pub fn view_disparity(radius: f64) -> f64 {
    ifan::synth::DISPARITY_PER_RADIUS * radius
}

#[wasm_bindgen]
pub fn impulse_grid(n: usize, k: usize) -> Result<usize, JsError> {
    demo::impulse_grid(n, k).map_err(js)
}

#[wasm_bindgen]
pub fn impulse_response(n: usize, k: usize) -> Result<Vec<f32>, JsError> {
    demo::impulse_response(n, k).map_err(js)
}

#[wasm_bindgen]
pub fn iac_receptive_field(n: usize, k: usize) -> Result<usize, JsError> {
    ifan::adaptive::receptive_field(n, k).map_err(js)
}

#[wasm_bindgen]
pub fn mac_ratio(n: usize, k_iac: usize, k_fac: usize) -> f64 {
    demo::mac_ratio(n, k_iac, k_fac)
}
