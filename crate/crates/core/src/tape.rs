//! Reverse-mode differentiation over [`Tensor4`] values.
//!
//! A [`Tape`] records every operation applied to its values in order. Calling
//! [`Tape::backward`] walks the records in reverse, applying each adjoint rule,
//! and returns the gradient of a scalar with respect to every value on the
//! tape. Records whose output never reaches the scalar are skipped, so a sweep
//! only costs as much as the subgraph it touches.

use crate::adaptive::{self, DenseFilterMap, FilterMap, IacCache};
use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom};
use crate::tensor::{Shape4, Tensor4};
use crate::warp;

/// Handle to a value slot on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d(ConvGeom),
    LRelu(f64),
    AreaDown(usize),
    UpNearest(usize),
    Add,
    Concat(usize),
    Fac { k: usize },
    Iac { sets: usize, k: usize, slope: f64, cache: IacCache },
    Warp,
    Mse { border: usize },
    WeightedSum(Tensor4),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d(_) => "conv2d",
            Op::LRelu(_) => "lrelu",
            Op::AreaDown(_) => "area_downsample",
            Op::UpNearest(_) => "upsample_nearest",
            Op::Add => "add",
            Op::Concat(_) => "concat",
            Op::Fac { .. } => "fac",
            Op::Iac { .. } => "iac",
            Op::Warp => "warp_horizontal",
            Op::Mse { .. } => "mse",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<Var>,
    output: Var,
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor4>,
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor4>>,
    shapes: Vec<Shape4>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor4> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, materialising zeros for untouched slots.
    pub fn get_or_zeros(&self, v: Var) -> Tensor4 {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor4::zeros(self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        Some(acc) => acc.axpy(1.0, &g).expect("gradient shape fixed by forward pass"),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.values[v.0].shape()
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor4) -> Var {
        let out = Var(self.values.len());
        debug_assert!(
            matches!(op, Op::Leaf) || value.is_finite() || inputs.iter().any(|i| !self.values[i.0].is_finite()),
            "{} produced a non-finite value from finite inputs",
            op.name()
        );
        self.values.push(value);
        self.nodes.push(Node {
            op,
            inputs,
            output: out,
        });
        out
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor4) -> Var {
        self.push(Op::Leaf, Vec::new(), value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let g = ConvGeom { stride, pad };
        let y = ops::conv2d(self.value(x), self.value(w), self.value(b), g)?;
        Ok(self.push(Op::Conv2d(g), vec![x, w, b], y))
    }

    pub fn lrelu(&mut self, x: Var, slope: f64) -> Var {
        let y = ops::lrelu(self.value(x), slope);
        self.push(Op::LRelu(slope), vec![x], y)
    }

    pub fn area_downsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = ops::area_downsample(self.value(x), factor)?;
        Ok(self.push(Op::AreaDown(factor), vec![x], y))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = ops::upsample_nearest(self.value(x), factor)?;
        Ok(self.push(Op::UpNearest(factor), vec![x], y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add, vec![a, b], y))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        let ca = self.shape(a).c;
        Ok(self.push(Op::Concat(ca), vec![a, b], y))
    }

    /// Dense adaptive convolution; `f` holds `c*k*k` filter channels.
    pub fn fac(&mut self, e: Var, f: Var, k: usize) -> Result<Var> {
        let fm = DenseFilterMap::new(self.value(f).clone(), k, self.shape(e).c)?;
        let y = adaptive::fac_forward(self.value(e), &fm)?;
        Ok(self.push(Op::Fac { k }, vec![e, f], y))
    }

    /// Iterative separable adaptive convolution; `f` is a packed filter map
    /// with `sets` filter sets of length `k` for `e`'s channel count.
    pub fn iac(&mut self, e: Var, f: Var, sets: usize, k: usize, slope: f64) -> Result<Var> {
        let fm = FilterMap::new(self.value(f).clone(), sets, k, self.shape(e).c)?;
        let (y, cache) = adaptive::iac_forward_cached(self.value(e), &fm, slope)?;
        Ok(self.push(
            Op::Iac {
                sets,
                k,
                slope,
                cache,
            },
            vec![e, f],
            y,
        ))
    }

    pub fn warp_horizontal(&mut self, img: Var, d: Var) -> Result<Var> {
        let y = warp::warp_horizontal(self.value(img), self.value(d))?;
        Ok(self.push(Op::Warp, vec![img, d], y))
    }

    /// Mean squared difference, optionally ignoring a spatial border.
    pub fn mse(&mut self, a: Var, b: Var, border: usize) -> Result<Var> {
        let v = mse_cropped(self.value(a), self.value(b), border)?;
        Ok(self.push(Op::Mse { border }, vec![a, b], Tensor4::scalar(v)))
    }

    /// Scalar `sum(weights * x)`.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor4) -> Result<Var> {
        let v = self.value(x).dot(&weights)?;
        Ok(self.push(Op::WeightedSum(weights), vec![x], Tensor4::scalar(v)))
    }

    /// First value slot holding a NaN or infinity, described for diagnostics.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().find_map(|n| {
            let v = &self.values[n.output.0];
            (!v.is_finite()).then(|| {
                format!(
                    "slot {} ({} output, shape {})",
                    n.output.0,
                    n.op.name(),
                    v.shape()
                )
            })
        })
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != Shape4::new(1, 1, 1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, slot {} has shape {}",
                loss.0,
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor4>> = vec![None; self.values.len()];
        adj[loss.0] = Some(Tensor4::scalar(1.0));
        for node in self.nodes[..=loss.0].iter().rev() {
            let Some(g) = adj[node.output.0].take() else {
                continue;
            };
            let inputs = &node.inputs;
            let val = |i: usize| &self.values[inputs[i].0];
            let grads: Vec<Tensor4> = match &node.op {
                Op::Leaf => {
                    adj[node.output.0] = Some(g);
                    continue;
                }
                Op::Conv2d(geom) => {
                    let (gx, gw, gb) = ops::conv2d_backward(val(0), val(1), val(2), *geom, &g)?;
                    vec![gx, gw, gb]
                }
                Op::LRelu(slope) => vec![ops::lrelu_backward(val(0), *slope, &g)],
                Op::AreaDown(f) => vec![ops::area_downsample_backward(val(0).shape(), *f, &g)],
                Op::UpNearest(f) => vec![ops::upsample_nearest_backward(val(0).shape(), *f, &g)],
                Op::Add => vec![g.clone(), g],
                Op::Concat(ca) => {
                    let (a, b) = ops::split_channels(&g, *ca);
                    vec![a, b]
                }
                Op::Fac { k } => {
                    let fm = DenseFilterMap::new(val(1).clone(), *k, val(0).shape().c)?;
                    let (ge, gf) = adaptive::fac_backward(val(0), &fm, &g)?;
                    vec![ge, gf]
                }
                Op::Iac {
                    sets,
                    k,
                    slope,
                    cache,
                } => {
                    let fm = FilterMap::new(val(1).clone(), *sets, *k, val(0).shape().c)?;
                    let (ge, gf) = adaptive::iac_backward(&fm, *slope, cache, &g)?;
                    vec![ge, gf]
                }
                Op::Warp => {
                    let (gi, gd) = warp::warp_horizontal_backward(val(0), val(1), &g)?;
                    vec![gi, gd]
                }
                Op::Mse { border } => {
                    let (ga, gb) = mse_cropped_backward(val(0), val(1), *border, g.item()?)?;
                    vec![ga, gb]
                }
                Op::WeightedSum(w) => vec![w.scale(g.item()?)],
            };
            for (input, grad) in inputs.iter().zip(grads) {
                accumulate(&mut adj[input.0], grad);
            }
        }
        Ok(Gradients {
            grads: adj,
            shapes: self.values.iter().map(Tensor4::shape).collect(),
        })
    }
}

fn crop_range(len: usize, border: usize, what: Shape4) -> Result<std::ops::Range<usize>> {
    if 2 * border >= len {
        return Err(Error::Shape(format!(
            "border {border} leaves nothing of {what}"
        )));
    }
    Ok(border..len - border)
}

/// Mean of squared differences over the spatial interior `[border, size-border)`.
pub fn mse_cropped(a: &Tensor4, b: &Tensor4, border: usize) -> Result<f64> {
    a.expect_same_shape(b, "mse")?;
    let s = a.shape();
    let ys = crop_range(s.h, border, s)?;
    let xs = crop_range(s.w, border, s)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let (pa, pb) = (a.plane(n, c), b.plane(n, c));
            for y in ys.clone() {
                for x in xs.clone() {
                    let d = pa[y * s.w + x] - pb[y * s.w + x];
                    acc += d * d;
                }
            }
            count += ys.len() * xs.len();
        }
    }
    Ok(acc / count as f64)
}

fn mse_cropped_backward(a: &Tensor4, b: &Tensor4, border: usize, g: f64) -> Result<(Tensor4, Tensor4)> {
    let s = a.shape();
    let ys = crop_range(s.h, border, s)?;
    let xs = crop_range(s.w, border, s)?;
    let count = (s.n * s.c * ys.len() * xs.len()) as f64;
    let mut ga = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (pa, pb) = (a.plane(n, c), b.plane(n, c));
            let dst = ga.plane_mut(n, c);
            for y in ys.clone() {
                for x in xs.clone() {
                    let p = y * s.w + x;
                    dst[p] = 2.0 * g * (pa[p] - pb[p]) / count;
                }
            }
        }
    }
    let gb = ga.scale(-1.0);
    Ok((ga, gb))
}
