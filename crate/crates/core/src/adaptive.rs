//! Spatially-adaptive convolutions.
//!
//! Two kernels live here:
//!
//! * **FAC** (filter adaptive convolution): every pixel carries its own dense
//!   `k x k` filter per channel.
//! * **IAC** (iterative adaptive convolution): every pixel carries `N` sets of
//!   separable filters `(f1, f2, b)`. Each iteration runs a per-pixel vertical
//!   `k x 1` pass with `f1`, then a per-pixel horizontal `1 x k` pass with
//!   `f2`, adds the bias and applies a leaky ReLU.
//!
//! Both are channel-wise: output channel `c` only reads input channel `c`.
//! Borders are zero padded. The kernels materialise the padding and multiply
//! through it, so the number of tap multiplies is exactly `h*w*c*k*k` for FAC
//! and `h*w*c*N*2k` for IAC; [`count_macs_fac`] and [`count_macs_iac`] run the
//! same code path with a counter attached to verify that.

use crate::error::{Error, Result};
use crate::ops::map_indices;
use crate::tensor::{Shape4, Tensor4};

/// Receptive field side length of `iterations` stacked `k`-tap separable passes.
pub fn receptive_field(iterations: usize, k: usize) -> Result<usize> {
    if k % 2 == 0 {
        return Err(Error::Contract(format!("filter length must be odd, got {k}")));
    }
    if iterations == 0 {
        return Err(Error::Contract("iteration count must be >= 1".into()));
    }
    Ok(iterations * (k - 1) + 1)
}

/// Packed per-pixel separable filter sets.
///
/// Channel layout for set `s` (with `stride = c * (2k + 1)`): `f1` taps at
/// `s*stride + ch*k + t`, then `f2` taps at `s*stride + c*k + ch*k + t`, then
/// the bias at `s*stride + 2*c*k + ch`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterMap {
    tensor: Tensor4,
    sets: usize,
    k: usize,
    channels: usize,
}

/// Filters decoded at one location for one set.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSet {
    /// Vertical taps, channel-major (`ch * k + t`).
    pub f1: Vec<f64>,
    /// Horizontal taps, channel-major.
    pub f2: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn filter_map_channels(sets: usize, channels: usize, k: usize) -> usize {
    sets * channels * (2 * k + 1)
}

impl FilterMap {
    pub fn new(tensor: Tensor4, sets: usize, k: usize, channels: usize) -> Result<Self> {
        if k % 2 == 0 || sets == 0 || channels == 0 {
            return Err(Error::Contract(format!(
                "filter map needs odd k and N, c >= 1 (got N={sets}, k={k}, c={channels})"
            )));
        }
        let want = filter_map_channels(sets, channels, k);
        if tensor.shape().c != want {
            return Err(Error::Shape(format!(
                "filter map with N={sets}, c={channels}, k={k} needs {want} channels, got {}",
                tensor.shape().c
            )));
        }
        Ok(FilterMap {
            tensor,
            sets,
            k,
            channels,
        })
    }

    /// Filter map whose every set is a pair of delta taps with zero bias.
    pub fn identity(n: usize, channels: usize, h: usize, w: usize, sets: usize, k: usize) -> Result<Self> {
        let c_total = filter_map_channels(sets, channels, k);
        let mut t = Tensor4::create((n, c_total, h, w), crate::tensor::Init::Zeros)?;
        let centre = k / 2;
        for b in 0..n {
            for s in 0..sets {
                for ch in 0..channels {
                    let base = s * channels * (2 * k + 1);
                    t.plane_mut(b, base + ch * k + centre).fill(1.0);
                    t.plane_mut(b, base + channels * k + ch * k + centre).fill(1.0);
                }
            }
        }
        FilterMap::new(t, sets, k, channels)
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.tensor
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn set_base(&self, set: usize) -> usize {
        set * self.channels * (2 * self.k + 1)
    }

    fn f1_channel(&self, set: usize, ch: usize, tap: usize) -> usize {
        self.set_base(set) + ch * self.k + tap
    }

    fn f2_channel(&self, set: usize, ch: usize, tap: usize) -> usize {
        self.set_base(set) + self.channels * self.k + ch * self.k + tap
    }

    fn bias_channel(&self, set: usize, ch: usize) -> usize {
        self.set_base(set) + 2 * self.channels * self.k + ch
    }

    fn check_location(&self, n: usize, y: usize, x: usize, set: usize) -> Result<()> {
        let s = self.tensor.shape();
        if n >= s.n || y >= s.h || x >= s.w || set >= self.sets {
            return Err(Error::Bounds(format!(
                "location (n={n}, y={y}, x={x}, set={set}) outside {} with N={}",
                s, self.sets
            )));
        }
        Ok(())
    }

    /// Decode the filters of one set at one location.
    pub fn decompose(&self, n: usize, y: usize, x: usize, set: usize) -> Result<FilterSet> {
        self.check_location(n, y, x, set)?;
        let (c, k) = (self.channels, self.k);
        let base = self.set_base(set);
        let vec: Vec<f64> = (0..c * (2 * k + 1))
            .map(|i| self.tensor.at(n, base + i, y, x))
            .collect();
        Ok(FilterSet {
            f1: vec[..c * k].to_vec(),
            f2: vec[c * k..2 * c * k].to_vec(),
            bias: vec[2 * c * k..].to_vec(),
        })
    }

    /// Inverse of [`decompose`](Self::decompose).
    pub fn pack(&mut self, n: usize, y: usize, x: usize, set: usize, f: &FilterSet) -> Result<()> {
        self.check_location(n, y, x, set)?;
        let (c, k) = (self.channels, self.k);
        if f.f1.len() != c * k || f.f2.len() != c * k || f.bias.len() != c {
            return Err(Error::Shape(format!(
                "filter set sizes ({}, {}, {}) do not match c={c}, k={k}",
                f.f1.len(),
                f.f2.len(),
                f.bias.len()
            )));
        }
        let base = self.set_base(set);
        for (i, &v) in f.f1.iter().chain(&f.f2).chain(&f.bias).enumerate() {
            *self.tensor.at_mut(n, base + i, y, x) = v;
        }
        Ok(())
    }
}

/// Per-pixel dense `k x k` filters, channel-major then row-major taps.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseFilterMap {
    tensor: Tensor4,
    k: usize,
    channels: usize,
}

impl DenseFilterMap {
    pub fn new(tensor: Tensor4, k: usize, channels: usize) -> Result<Self> {
        if k % 2 == 0 || channels == 0 {
            return Err(Error::Contract(format!("dense filter map needs odd k, got {k}")));
        }
        if tensor.shape().c != channels * k * k {
            return Err(Error::Shape(format!(
                "dense filter map with c={channels}, k={k} needs {} channels, got {}",
                channels * k * k,
                tensor.shape().c
            )));
        }
        Ok(DenseFilterMap { tensor, k, channels })
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.tensor
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn tap_channel(&self, ch: usize, i: usize, j: usize) -> usize {
        (ch * self.k + i) * self.k + j
    }
}

/// Counts executed tap multiplies. The no-op impl compiles away.
pub trait MacCounter {
    fn add(&mut self, n: u64);
}

pub struct NoCount;

impl MacCounter for NoCount {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

#[derive(Default)]
pub struct Counter(pub u64);

impl MacCounter for Counter {
    #[inline(always)]
    fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

fn pad_rows(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; (h + 2 * r) * w];
    out[r * w..(r + h) * w].copy_from_slice(src);
    out
}

fn pad_cols(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let pw = w + 2 * r;
    let mut out = vec![0.0; h * pw];
    for y in 0..h {
        out[y * pw + r..y * pw + r + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
    out
}

fn pad_both(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let pw = w + 2 * r;
    let mut out = vec![0.0; (h + 2 * r) * pw];
    for y in 0..h {
        out[(y + r) * pw + r..(y + r) * pw + r + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
    out
}

fn check_spatial(e: &Tensor4, f: &Tensor4, what: &str) -> Result<()> {
    let (es, fs) = (e.shape(), f.shape());
    if (es.n, es.h, es.w) != (fs.n, fs.h, fs.w) {
        return Err(Error::Shape(format!(
            "{what}: features {es} and filter map {fs} differ in batch or spatial size"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// FAC

fn fac_plane<C: MacCounter>(
    e: &[f64],
    fm: &DenseFilterMap,
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
    counter: &mut C,
) -> Vec<f64> {
    let k = fm.k;
    let r = k / 2;
    let pw = w + 2 * r;
    let ep = pad_both(e, h, w, r);
    let mut out = vec![0.0; h * w];
    for i in 0..k {
        for j in 0..k {
            let f = fm.tensor.plane(n, fm.tap_channel(ch, i, j));
            for y in 0..h {
                let src = &ep[(y + i) * pw + j..][..w];
                let frow = &f[y * w..][..w];
                let dst = &mut out[y * w..][..w];
                for x in 0..w {
                    dst[x] += frow[x] * src[x];
                    counter.add(1);
                }
            }
        }
    }
    out
}

fn fac_check(e: &Tensor4, fm: &DenseFilterMap) -> Result<()> {
    check_spatial(e, &fm.tensor, "fac_forward")?;
    if e.shape().c != fm.channels {
        return Err(Error::Shape(format!(
            "fac_forward: features have {} channels, filter map acts on {}",
            e.shape().c,
            fm.channels
        )));
    }
    Ok(())
}

/// Dense filter adaptive convolution.
pub fn fac_forward(e: &Tensor4, fm: &DenseFilterMap) -> Result<Tensor4> {
    fac_check(e, fm)?;
    let s = e.shape();
    let planes = map_indices(s.n * s.c, |i| {
        let (n, ch) = (i / s.c, i % s.c);
        fac_plane(e.plane(n, ch), fm, n, ch, s.h, s.w, &mut NoCount)
    });
    Tensor4::from_vec(s, planes.concat())
}

/// Number of tap multiplies [`fac_forward`] executes on these inputs.
pub fn count_macs_fac(e: &Tensor4, fm: &DenseFilterMap) -> Result<u64> {
    fac_check(e, fm)?;
    let s = e.shape();
    let mut counter = Counter::default();
    for n in 0..s.n {
        for ch in 0..s.c {
            fac_plane(e.plane(n, ch), fm, n, ch, s.h, s.w, &mut counter);
        }
    }
    Ok(counter.0)
}

/// Adjoint of [`fac_forward`]: (grad_e, grad_filters).
pub fn fac_backward(e: &Tensor4, fm: &DenseFilterMap, gout: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    fac_check(e, fm)?;
    e.expect_same_shape(gout, "fac_backward")?;
    let s = e.shape();
    let k = fm.k;
    let r = k / 2;
    let pw = s.w + 2 * r;
    let (h, w) = (s.h, s.w);
    // Per (n, ch): grad of e plane and the k*k filter planes of that channel.
    let parts = map_indices(s.n * s.c, |i| {
        let (n, ch) = (i / s.c, i % s.c);
        let ep = pad_both(e.plane(n, ch), h, w, r);
        let g = gout.plane(n, ch);
        let mut gep = vec![0.0; (h + 2 * r) * pw];
        let mut gf = vec![0.0; k * k * h * w];
        for ii in 0..k {
            for jj in 0..k {
                let f = fm.tensor.plane(n, fm.tap_channel(ch, ii, jj));
                let gfp = &mut gf[(ii * k + jj) * h * w..][..h * w];
                for y in 0..h {
                    let src = &ep[(y + ii) * pw + jj..][..w];
                    let gsrc = &mut gep[(y + ii) * pw + jj..][..w];
                    for x in 0..w {
                        let gv = g[y * w + x];
                        gfp[y * w + x] = gv * src[x];
                        gsrc[x] += gv * f[y * w + x];
                    }
                }
            }
        }
        let mut ge = vec![0.0; h * w];
        for y in 0..h {
            ge[y * w..(y + 1) * w].copy_from_slice(&gep[(y + r) * pw + r..][..w]);
        }
        (ge, gf)
    });
    let mut grad_e = Tensor4::zeros(s);
    let mut grad_f = Tensor4::zeros(fm.tensor.shape());
    for (i, (ge, gf)) in parts.into_iter().enumerate() {
        let (n, ch) = (i / s.c, i % s.c);
        grad_e.plane_mut(n, ch).copy_from_slice(&ge);
        for t in 0..k * k {
            grad_f
                .plane_mut(n, ch * k * k + t)
                .copy_from_slice(&gf[t * h * w..][..h * w]);
        }
    }
    Ok((grad_e, grad_f))
}

// ---------------------------------------------------------------------------
// IAC

/// Intermediates of one IAC forward pass, kept for the adjoint.
#[derive(Clone, Debug)]
pub struct IacCache {
    /// Per iteration: input, vertical-pass output, pre-activation; each
    /// stored per (n, ch) plane in flattened order.
    planes: Vec<IacPlaneCache>,
}

#[derive(Clone, Debug)]
struct IacPlaneCache {
    inputs: Vec<Vec<f64>>,
    vert: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn iac_plane<C: MacCounter>(
    e: &[f64],
    fm: &FilterMap,
    n: usize,
    ch: usize,
    h: usize,
    w: usize,
    slope: f64,
    keep: bool,
    counter: &mut C,
) -> (Vec<f64>, Option<IacPlaneCache>) {
    let k = fm.k;
    let r = k / 2;
    let pw = w + 2 * r;
    let mut cache = keep.then(|| IacPlaneCache {
        inputs: Vec::with_capacity(fm.sets),
        vert: Vec::with_capacity(fm.sets),
        pre: Vec::with_capacity(fm.sets),
    });
    let mut a = e.to_vec();
    for set in 0..fm.sets {
        // vertical k x 1 pass with per-pixel f1
        let ap = pad_rows(&a, h, w, r);
        let mut v = vec![0.0; h * w];
        for t in 0..k {
            let f1 = fm.tensor.plane(n, fm.f1_channel(set, ch, t));
            let src = &ap[t * w..][..h * w];
            for ((d, &f), &s) in v.iter_mut().zip(f1).zip(src) {
                *d += f * s;
                counter.add(1);
            }
        }
        // horizontal 1 x k pass with per-pixel f2
        let vp = pad_cols(&v, h, w, r);
        let mut z = fm.tensor.plane(n, fm.bias_channel(set, ch)).to_vec();
        for t in 0..k {
            let f2 = fm.tensor.plane(n, fm.f2_channel(set, ch, t));
            for y in 0..h {
                let src = &vp[y * pw + t..][..w];
                let dst = &mut z[y * w..][..w];
                let frow = &f2[y * w..][..w];
                for x in 0..w {
                    dst[x] += frow[x] * src[x];
                    counter.add(1);
                }
            }
        }
        let next: Vec<f64> = z
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        if let Some(c) = cache.as_mut() {
            c.inputs.push(std::mem::replace(&mut a, next));
            c.vert.push(v);
            c.pre.push(z);
        } else {
            a = next;
        }
    }
    (a, cache)
}

fn iac_check(e: &Tensor4, fm: &FilterMap) -> Result<()> {
    check_spatial(e, &fm.tensor, "iac_forward")?;
    if e.shape().c != fm.channels {
        return Err(Error::Shape(format!(
            "iac_forward: features have {} channels, filter map acts on {}",
            e.shape().c,
            fm.channels
        )));
    }
    Ok(())
}

fn iac_run(e: &Tensor4, fm: &FilterMap, slope: f64, keep: bool) -> Result<(Tensor4, Option<IacCache>)> {
    iac_check(e, fm)?;
    let s = e.shape();
    let parts = map_indices(s.n * s.c, |i| {
        let (n, ch) = (i / s.c, i % s.c);
        iac_plane(e.plane(n, ch), fm, n, ch, s.h, s.w, slope, keep, &mut NoCount)
    });
    let mut out = Vec::with_capacity(s.len());
    let mut caches = Vec::with_capacity(if keep { parts.len() } else { 0 });
    for (plane, cache) in parts {
        out.extend_from_slice(&plane);
        if let Some(c) = cache {
            caches.push(c);
        }
    }
    Ok((Tensor4::from_vec(s, out)?, keep.then_some(IacCache { planes: caches })))
}

/// Iterative separable adaptive convolution; returns the final iterate.
pub fn iac_forward(e: &Tensor4, fm: &FilterMap, slope: f64) -> Result<Tensor4> {
    iac_run(e, fm, slope, false).map(|(t, _)| t)
}

/// As [`iac_forward`], also returning the intermediates needed by [`iac_backward`].
pub fn iac_forward_cached(e: &Tensor4, fm: &FilterMap, slope: f64) -> Result<(Tensor4, IacCache)> {
    iac_run(e, fm, slope, true).map(|(t, c)| (t, c.expect("cache requested")))
}

/// Number of tap multiplies [`iac_forward`] executes on these inputs.
pub fn count_macs_iac(e: &Tensor4, fm: &FilterMap, slope: f64) -> Result<u64> {
    iac_check(e, fm)?;
    let s = e.shape();
    let mut counter = Counter::default();
    for n in 0..s.n {
        for ch in 0..s.c {
            iac_plane(e.plane(n, ch), fm, n, ch, s.h, s.w, slope, false, &mut counter);
        }
    }
    Ok(counter.0)
}

/// Adjoint of [`iac_forward`]: (grad_e, grad_filter_map).
pub fn iac_backward(
    fm: &FilterMap,
    slope: f64,
    cache: &IacCache,
    gout: &Tensor4,
) -> Result<(Tensor4, Tensor4)> {
    let fs = fm.tensor.shape();
    let s = Shape4::new(fs.n, fm.channels, fs.h, fs.w);
    if gout.shape() != s {
        return Err(Error::Shape(format!(
            "iac_backward: upstream gradient {} does not match {}",
            gout.shape(),
            s
        )));
    }
    let (h, w, k) = (s.h, s.w, fm.k);
    let r = k / 2;
    let pw = w + 2 * r;
    let hw = h * w;
    let per_set = 2 * k + 1;
    let parts = map_indices(s.n * s.c, |i| {
        let (n, ch) = (i / s.c, i % s.c);
        let pc = &cache.planes[i];
        let mut g = gout.plane(n, ch).to_vec();
        // per set: f1 taps, f2 taps, bias
        let mut gf = vec![0.0; fm.sets * per_set * hw];
        for set in (0..fm.sets).rev() {
            let z = &pc.pre[set];
            let gz: Vec<f64> = g
                .iter()
                .zip(z)
                .map(|(&gv, &zv)| if zv >= 0.0 { gv } else { slope * gv })
                .collect();
            let base = set * per_set * hw;
            gf[base + 2 * k * hw..base + per_set * hw].copy_from_slice(&gz);
            // horizontal pass adjoint
            let vp = pad_cols(&pc.vert[set], h, w, r);
            let mut gvp = vec![0.0; h * pw];
            for t in 0..k {
                let f2 = fm.tensor.plane(n, fm.f2_channel(set, ch, t));
                let gf2 = &mut gf[base + (k + t) * hw..][..hw];
                for y in 0..h {
                    for x in 0..w {
                        let gzv = gz[y * w + x];
                        gf2[y * w + x] = gzv * vp[y * pw + x + t];
                        gvp[y * pw + x + t] += gzv * f2[y * w + x];
                    }
                }
            }
            let mut gv = vec![0.0; hw];
            for y in 0..h {
                gv[y * w..(y + 1) * w].copy_from_slice(&gvp[y * pw + r..][..w]);
            }
            // vertical pass adjoint
            let ap = pad_rows(&pc.inputs[set], h, w, r);
            let mut gap = vec![0.0; (h + 2 * r) * w];
            for t in 0..k {
                let f1 = fm.tensor.plane(n, fm.f1_channel(set, ch, t));
                let gf1 = &mut gf[base + t * hw..][..hw];
                let src = &ap[t * w..][..hw];
                let gsrc = &mut gap[t * w..][..hw];
                for p in 0..hw {
                    gf1[p] = gv[p] * src[p];
                    gsrc[p] += gv[p] * f1[p];
                }
            }
            g = gap[r * w..(r + h) * w].to_vec();
        }
        (g, gf)
    });
    let mut grad_e = Tensor4::zeros(s);
    let mut grad_f = Tensor4::zeros(fs);
    for (i, (ge, gf)) in parts.into_iter().enumerate() {
        let (n, ch) = (i / s.c, i % s.c);
        grad_e.plane_mut(n, ch).copy_from_slice(&ge);
        for set in 0..fm.sets {
            let base = set * per_set * hw;
            for t in 0..k {
                grad_f
                    .plane_mut(n, fm.f1_channel(set, ch, t))
                    .copy_from_slice(&gf[base + t * hw..][..hw]);
                grad_f
                    .plane_mut(n, fm.f2_channel(set, ch, t))
                    .copy_from_slice(&gf[base + (k + t) * hw..][..hw]);
            }
            grad_f
                .plane_mut(n, fm.bias_channel(set, ch))
                .copy_from_slice(&gf[base + 2 * k * hw..][..hw]);
        }
    }
    Ok((grad_e, grad_f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_field_values() {
        assert_eq!(receptive_field(17, 3).unwrap(), 35);
        assert_eq!(receptive_field(8, 3).unwrap(), 17);
        assert_eq!(receptive_field(1, 3).unwrap(), 3);
        assert!(receptive_field(2, 4).is_err());
    }

    #[test]
    fn decompose_single_channel_layout() {
        let t = Tensor4::from_vec((1, 7, 1, 1), (1..=7).map(f64::from).collect()).unwrap();
        let fm = FilterMap::new(t, 1, 3, 1).unwrap();
        let f = fm.decompose(0, 0, 0, 0).unwrap();
        assert_eq!(f.f1, vec![1.0, 2.0, 3.0]);
        assert_eq!(f.f2, vec![4.0, 5.0, 6.0]);
        assert_eq!(f.bias, vec![7.0]);
    }

    #[test]
    fn decompose_two_channel_layout() {
        let t = Tensor4::from_vec((1, 14, 1, 1), (0..14).map(f64::from).collect()).unwrap();
        let fm = FilterMap::new(t, 1, 3, 2).unwrap();
        let f = fm.decompose(0, 0, 0, 0).unwrap();
        assert_eq!(f.f1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(f.f2, vec![6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        assert_eq!(f.bias, vec![12.0, 13.0]);
    }

    #[test]
    fn decompose_out_of_range() {
        let fm = FilterMap::identity(1, 2, 3, 3, 2, 3).unwrap();
        assert!(matches!(fm.decompose(0, 0, 0, 2), Err(Error::Bounds(_))));
        assert!(matches!(fm.decompose(0, 3, 0, 0), Err(Error::Bounds(_))));
        assert!(matches!(fm.decompose(1, 0, 0, 0), Err(Error::Bounds(_))));
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let t = Tensor4::zeros((1, 13, 2, 2));
        assert!(matches!(FilterMap::new(t, 1, 3, 2), Err(Error::Shape(_))));
        let d = Tensor4::zeros((1, 8, 2, 2));
        assert!(DenseFilterMap::new(d, 3, 1).is_err());
    }

    #[test]
    fn fac_delta_is_identity() {
        let e = Tensor4::randn((1, 2, 5, 4), 0.0, 1.0, 3);
        let mut f = Tensor4::zeros((1, 18, 5, 4));
        for ch in 0..2 {
            f.plane_mut(0, ch * 9 + 4).fill(1.0);
        }
        let fm = DenseFilterMap::new(f, 3, 2).unwrap();
        assert_eq!(fac_forward(&e, &fm).unwrap(), e);
    }

    #[test]
    fn fac_uniform_kernel_preserves_interior_constant() {
        let e = Tensor4::full((1, 1, 6, 6), 0.4);
        let fm = DenseFilterMap::new(Tensor4::full((1, 9, 6, 6), 1.0 / 9.0), 3, 1).unwrap();
        let out = fac_forward(&e, &fm).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                assert!((out.at(0, 0, y, x) - 0.4).abs() < 1e-15);
            }
        }
        assert!(out.at(0, 0, 0, 0) < 0.4);
    }

    #[test]
    fn iac_delta_nonnegative_is_identity() {
        let e = Tensor4::rand_uniform((2, 3, 5, 6), 0.0, 1.0, 9);
        for sets in [1, 3, 5] {
            let fm = FilterMap::identity(2, 3, 5, 6, sets, 3).unwrap();
            assert_eq!(iac_forward(&e, &fm, 0.1).unwrap(), e);
        }
    }

    #[test]
    fn iac_metadata_mismatch() {
        let e = Tensor4::zeros((1, 2, 4, 4));
        let fm = FilterMap::identity(1, 3, 4, 4, 1, 3).unwrap();
        assert!(matches!(iac_forward(&e, &fm, 0.1), Err(Error::Shape(_))));
        let fm = FilterMap::identity(1, 2, 4, 5, 1, 3).unwrap();
        assert!(matches!(iac_forward(&e, &fm, 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn mac_counts_are_exact() {
        let e = Tensor4::randn((1, 4, 3, 5), 0.0, 1.0, 1);
        let fm = FilterMap::new(
            Tensor4::randn((1, filter_map_channels(2, 4, 3), 3, 5), 0.0, 1.0, 2),
            2,
            3,
            4,
        )
        .unwrap();
        assert_eq!(count_macs_iac(&e, &fm, 0.1).unwrap(), 3 * 5 * 4 * 2 * 6);
        let dm = DenseFilterMap::new(Tensor4::randn((1, 4 * 25, 3, 5), 0.0, 1.0, 3), 5, 4).unwrap();
        assert_eq!(count_macs_fac(&e, &dm).unwrap(), 3 * 5 * 4 * 25);
    }
}
