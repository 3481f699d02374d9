//! Elementary tensor kernels and their adjoints.
//!
//! Everything here is a pure function over [`Tensor4`] values. The tape in
//! [`crate::tape`] records calls to these and replays the adjoints.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f` over mutable chunks, in parallel when the `parallel` feature is on.
/// Each chunk is written by exactly one task so results do not depend on
/// scheduling.
pub(crate) fn for_each_chunk<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Map `0..n` to values, in parallel when enabled, preserving order.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::Shape(format!(
            "conv2d: kernel {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

fn conv_check(x: &Tensor4, w: &Tensor4, b: &Tensor4, g: ConvGeom) -> Result<(usize, usize, usize)> {
    let xs = x.shape();
    let ws = w.shape();
    if ws.h != ws.w || ws.h % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv2d: kernel must be square and odd, got {ws}"
        )));
    }
    if ws.c != xs.c {
        return Err(Error::Shape(format!(
            "conv2d: input has {} channels, weights expect {}",
            xs.c, ws.c
        )));
    }
    if b.len() != ws.n {
        return Err(Error::Shape(format!(
            "conv2d: bias has {} entries, expected {}",
            b.len(),
            ws.n
        )));
    }
    if g.stride == 0 {
        return Err(Error::Contract("conv2d: stride must be >= 1".into()));
    }
    let oh = conv_out_dim(xs.h, ws.h, g.stride, g.pad)?;
    let ow = conv_out_dim(xs.w, ws.w, g.stride, g.pad)?;
    Ok((ws.h, oh, ow))
}

/// Unfold one batch item into a (c_in*k*k, oh*ow) column matrix.
fn im2col(x: &Tensor4, n: usize, k: usize, g: ConvGeom, oh: usize, ow: usize) -> Vec<f64> {
    let xs = x.shape();
    let p = oh * ow;
    let mut cols = vec![0.0; xs.c * k * k * p];
    for ci in 0..xs.c {
        let plane = x.plane(n, ci);
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ci * k + ki) * k + kj) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= xs.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * xs.w..][..xs.w];
                    let dst = &mut row[oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < xs.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a column matrix back into an image gradient (adjoint of im2col).
fn col2im(cols: &[f64], gx: &mut [f64], xs: Shape4, k: usize, g: ConvGeom, oh: usize, ow: usize) {
    let p = oh * ow;
    for ci in 0..xs.c {
        let plane = &mut gx[ci * xs.plane()..][..xs.plane()];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ci * k + ki) * k + kj) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= xs.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * xs.w..][..xs.w];
                    for (ox, &v) in row[oy * ow..][..ow].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < xs.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// C (m x n) = alpha * op(A) * op(B) + beta * C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers whose extents match (m, k, n) and the
    // strides describe either row-major or transposed views of them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `w` is (c_out, c_in, k, k) and `b` holds c_out biases (any shape with that
/// many elements). Output is (n, c_out, oh, ow).
pub fn conv2d(x: &Tensor4, w: &Tensor4, b: &Tensor4, g: ConvGeom) -> Result<Tensor4> {
    let (k, oh, ow) = conv_check(x, w, b, g)?;
    let xs = x.shape();
    let cout = w.shape().n;
    let kk = xs.c * k * k;
    let p = oh * ow;
    let mut out = Tensor4::zeros((xs.n, cout, oh, ow));
    for_each_chunk(out.data_mut(), cout * p, |n, dst| {
        let cols = im2col(x, n, k, g, oh, ow);
        for (co, row) in dst.chunks_exact_mut(p).enumerate() {
            row.fill(b.data()[co]);
        }
        gemm(cout, kk, p, w.data(), (kk as isize, 1), &cols, (p as isize, 1), 1.0, dst);
    });
    Ok(out)
}

/// Adjoint of [`conv2d`]: returns (grad_x, grad_w, grad_b).
pub fn conv2d_backward(
    x: &Tensor4,
    w: &Tensor4,
    b: &Tensor4,
    g: ConvGeom,
    gout: &Tensor4,
) -> Result<(Tensor4, Tensor4, Tensor4)> {
    let (k, oh, ow) = conv_check(x, w, b, g)?;
    let xs = x.shape();
    let cout = w.shape().n;
    let kk = xs.c * k * k;
    let p = oh * ow;
    if gout.shape() != Shape4::new(xs.n, cout, oh, ow) {
        return Err(Error::Shape(format!(
            "conv2d_backward: upstream gradient {} does not match output",
            gout.shape()
        )));
    }
    // Per-item partial weight gradients, reduced afterwards in batch order.
    let per_item: Vec<(Vec<f64>, Vec<f64>)> = map_indices(xs.n, |n| {
        let cols = im2col(x, n, k, g, oh, ow);
        let go = &gout.data()[n * cout * p..][..cout * p];
        let mut gw = vec![0.0; cout * kk];
        // gw (cout x kk) = go (cout x p) * cols^T (p x kk)
        gemm(cout, p, kk, go, (p as isize, 1), &cols, (1, p as isize), 0.0, &mut gw);
        // gcols (kk x p) = w^T (kk x cout) * go (cout x p)
        let mut gcols = vec![0.0; kk * p];
        gemm(kk, cout, p, w.data(), (1, kk as isize), go, (p as isize, 1), 0.0, &mut gcols);
        let mut gx = vec![0.0; xs.c * xs.plane()];
        col2im(&gcols, &mut gx, xs, k, g, oh, ow);
        (gw, gx)
    });
    let mut grad_w = Tensor4::zeros(w.shape());
    let mut grad_x = Tensor4::zeros(xs);
    let item = xs.c * xs.plane();
    for (n, (gw, gx)) in per_item.into_iter().enumerate() {
        for (a, v) in grad_w.data_mut().iter_mut().zip(gw) {
            *a += v;
        }
        grad_x.data_mut()[n * item..][..item].copy_from_slice(&gx);
    }
    let mut grad_b = Tensor4::zeros(b.shape());
    for n in 0..xs.n {
        for co in 0..cout {
            grad_b.data_mut()[co] += gout.plane(n, co).iter().sum::<f64>();
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

/// Leaky ReLU; the derivative at exactly 0 is taken as 1.
pub fn lrelu(x: &Tensor4, slope: f64) -> Tensor4 {
    x.map(|v| if v >= 0.0 { v } else { slope * v })
}

pub fn lrelu_backward(x: &Tensor4, slope: f64, gout: &Tensor4) -> Tensor4 {
    x.zip_map(gout, |v, g| if v >= 0.0 { g } else { slope * g })
        .expect("lrelu_backward: shapes checked by caller")
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn area_downsample(x: &Tensor4, factor: usize) -> Result<Tensor4> {
    let s = x.shape();
    if factor == 0 || s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::Shape(format!(
            "area_downsample: {}x{} not divisible by {factor}",
            s.h, s.w
        )));
    }
    let (oh, ow) = (s.h / factor, s.w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Tensor4::zeros((s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                let row = &src[y * s.w..][..s.w];
                let drow = &mut dst[(y / factor) * ow..][..ow];
                for (x, v) in row.iter().enumerate() {
                    drow[x / factor] += v;
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
    }
    Ok(out)
}

pub fn area_downsample_backward(xs: Shape4, factor: usize, gout: &Tensor4) -> Tensor4 {
    let ow = xs.w / factor;
    let inv = 1.0 / (factor * factor) as f64;
    let mut gx = Tensor4::zeros(xs);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let g = gout.plane(n, c);
            let dst = gx.plane_mut(n, c);
            for y in 0..xs.h {
                for x in 0..xs.w {
                    dst[y * xs.w + x] = g[(y / factor) * ow + x / factor] * inv;
                }
            }
        }
    }
    gx
}

/// Nearest-neighbour upsampling: each element becomes a `factor x factor` block.
pub fn upsample_nearest(x: &Tensor4, factor: usize) -> Result<Tensor4> {
    if factor == 0 {
        return Err(Error::Contract("upsample_nearest: factor must be >= 1".into()));
    }
    let s = x.shape();
    let (oh, ow) = (s.h * factor, s.w * factor);
    let mut out = Tensor4::zeros((s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / factor) * s.w + x / factor];
                }
            }
        }
    }
    Ok(out)
}

pub fn upsample_nearest_backward(xs: Shape4, factor: usize, gout: &Tensor4) -> Tensor4 {
    let ow = xs.w * factor;
    let mut gx = Tensor4::zeros(xs);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let g = gout.plane(n, c);
            let dst = gx.plane_mut(n, c);
            for y in 0..xs.h * factor {
                for x in 0..ow {
                    dst[(y / factor) * xs.w + x / factor] += g[y * ow + x];
                }
            }
        }
    }
    gx
}

/// Concatenate along the channel axis.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::Shape(format!("concat_channels: {sa} vs {sb}")));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * la..][..la]);
        data.extend_from_slice(&b.data()[n * lb..][..lb]);
    }
    Tensor4::from_vec((sa.n, sa.c + sb.c, sa.h, sa.w), data)
}

pub fn split_channels(g: &Tensor4, ca: usize) -> (Tensor4, Tensor4) {
    let s = g.shape();
    let cb = s.c - ca;
    let (la, lb) = (ca * s.plane(), cb * s.plane());
    let mut a = Vec::with_capacity(s.n * la);
    let mut b = Vec::with_capacity(s.n * lb);
    for n in 0..s.n {
        let item = &g.data()[n * (la + lb)..][..la + lb];
        a.extend_from_slice(&item[..la]);
        b.extend_from_slice(&item[la..]);
    }
    (
        Tensor4::from_vec((s.n, ca, s.h, s.w), a).expect("split a"),
        Tensor4::from_vec((s.n, cb, s.h, s.w), b).expect("split b"),
    )
}
