//! Loop-level reference implementations used as oracles by the integration
//! tests. Deliberately naive: one scalar at a time, explicit bounds checks
//! for zero padding, no shared code with the library kernels.

#![allow(dead_code)]

use ifan::adaptive::{filter_map_channels, DenseFilterMap, FilterMap};
use ifan::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn get(t: &Tensor4, n: usize, c: usize, y: isize, x: isize) -> f64 {
    let s = t.shape();
    if y < 0 || x < 0 || y >= s.h as isize || x >= s.w as isize {
        0.0
    } else {
        t.at(n, c, y as usize, x as usize)
    }
}

/// Dense per-pixel k x k channel-wise correlation with zero padding.
pub fn fac_reference(e: &Tensor4, f: &Tensor4, k: usize) -> Tensor4 {
    let s = e.shape();
    let r = (k / 2) as isize;
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            let tap = f.at(n, (c * k + i) * k + j, y, x);
                            acc += tap * get(e, n, c, y as isize + i as isize - r, x as isize + j as isize - r);
                        }
                    }
                    *out.at_mut(n, c, y, x) = acc;
                }
            }
        }
    }
    out
}

/// N iterations of: vertical k-tap pass, horizontal k-tap pass, bias, LReLU.
pub fn iac_reference(e: &Tensor4, f: &Tensor4, sets: usize, k: usize, slope: f64) -> Tensor4 {
    let s = e.shape();
    let c_all = s.c;
    let stride = c_all * (2 * k + 1);
    let r = (k / 2) as isize;
    let mut cur = e.clone();
    for set in 0..sets {
        let base = set * stride;
        let mut vert = Tensor4::zeros(s);
        for n in 0..s.n {
            for c in 0..c_all {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let mut acc = 0.0;
                        for t in 0..k {
                            let tap = f.at(n, base + c * k + t, y, x);
                            acc += tap * get(&cur, n, c, y as isize + t as isize - r, x as isize);
                        }
                        *vert.at_mut(n, c, y, x) = acc;
                    }
                }
            }
        }
        let mut next = Tensor4::zeros(s);
        for n in 0..s.n {
            for c in 0..c_all {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let mut acc = f.at(n, base + 2 * c_all * k + c, y, x);
                        for t in 0..k {
                            let tap = f.at(n, base + c_all * k + c * k + t, y, x);
                            acc += tap * get(&vert, n, c, y as isize, x as isize + t as isize - r);
                        }
                        *next.at_mut(n, c, y, x) = if acc >= 0.0 { acc } else { slope * acc };
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// Random IAC problem: (features, filter map).
pub fn random_iac(seed: u64, n: usize, c: usize, h: usize, w: usize, sets: usize, k: usize) -> (Tensor4, FilterMap) {
    let e = Tensor4::rand_uniform((n, c, h, w), -1.0, 1.0, seed);
    let f = Tensor4::rand_uniform((n, filter_map_channels(sets, c, k), h, w), -0.7, 0.7, seed ^ 0x9e37);
    let fm = FilterMap::new(f, sets, k, c).unwrap();
    (e, fm)
}

pub fn random_fac(seed: u64, n: usize, c: usize, h: usize, w: usize, k: usize) -> (Tensor4, DenseFilterMap) {
    let e = Tensor4::rand_uniform((n, c, h, w), -1.0, 1.0, seed);
    let f = Tensor4::rand_uniform((n, c * k * k, h, w), -0.7, 0.7, seed ^ 0x51ed);
    let fm = DenseFilterMap::new(f, k, c).unwrap();
    (e, fm)
}

pub fn random_odd(rng: &mut ChaCha8Rng, max: usize) -> usize {
    2 * rng.random_range(0..=(max - 1) / 2) + 1
}

/// Separable kernel built so the sequential vertical-then-horizontal IAC
/// pass equals a dense outer-product filter: `f1` is the same at every
/// pixel of a row segment the horizontal pass reads from, i.e. constant
/// along x. Returns (iac map, dense map).
pub fn rank1_pair(seed: u64, c: usize, h: usize, w: usize, k: usize) -> (FilterMap, DenseFilterMap) {
    let mut g = rng(seed);
    let mut iac = Tensor4::zeros((1, filter_map_channels(1, c, k), h, w));
    let mut dense = Tensor4::zeros((1, c * k * k, h, w));
    let f1_rows: Vec<Vec<Vec<f64>>> = (0..c)
        .map(|_| (0..h).map(|_| (0..k).map(|_| g.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let f2: Vec<f64> = (0..k).map(|_| g.random_range(-1.0..1.0)).collect();
                for t in 0..k {
                    *iac.at_mut(0, ch * k + t, y, x) = f1_rows[ch][y][t];
                    *iac.at_mut(0, c * k + ch * k + t, y, x) = f2[t];
                }
                for i in 0..k {
                    for j in 0..k {
                        *dense.at_mut(0, (ch * k + i) * k + j, y, x) = f1_rows[ch][y][i] * f2[j];
                    }
                }
            }
        }
    }
    (FilterMap::new(iac, 1, k, c).unwrap(), DenseFilterMap::new(dense, k, c).unwrap())
}

/// Bilinear horizontal warp with clamped sample coordinates.
pub fn warp_reference(img: &Tensor4, d: &Tensor4) -> Tensor4 {
    let s = img.shape();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let sx = (x as f64 + d.at(n, 0, y, x)).clamp(0.0, (s.w - 1) as f64);
                    let x0 = sx.floor() as usize;
                    let x1 = (x0 + 1).min(s.w - 1);
                    let t = sx - x0 as f64;
                    *out.at_mut(n, c, y, x) = (1.0 - t) * img.at(n, c, y, x0) + t * img.at(n, c, y, x1);
                }
            }
        }
    }
    out
}

pub fn max_abs(a: &Tensor4, b: &Tensor4) -> f64 {
    a.max_abs_diff(b).unwrap()
}
