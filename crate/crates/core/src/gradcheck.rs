//! Central finite-difference checks of the tape's adjoints.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

use crate::adaptive::filter_map_channels;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape4, Tensor4};

pub const FD_STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpId {
    Conv2d,
    LRelu,
    AreaDownsample,
    UpsampleNearest,
    Fac,
    Iac,
    Warp,
    LossDeblur,
    LossDisp,
    LossReblur,
}

impl OpId {
    pub const ALL: [OpId; 10] = [
        OpId::Conv2d,
        OpId::LRelu,
        OpId::AreaDownsample,
        OpId::UpsampleNearest,
        OpId::Fac,
        OpId::Iac,
        OpId::Warp,
        OpId::LossDeblur,
        OpId::LossDisp,
        OpId::LossReblur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpId::Conv2d => "conv2d",
            OpId::LRelu => "lrelu",
            OpId::AreaDownsample => "area_downsample",
            OpId::UpsampleNearest => "upsample_nearest",
            OpId::Fac => "fac",
            OpId::Iac => "iac",
            OpId::Warp => "warp",
            OpId::LossDeblur => "loss_deblur",
            OpId::LossDisp => "loss_disp",
            OpId::LossReblur => "loss_reblur",
        }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpId::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown op id `{s}`")))
    }
}

/// One finite-difference experiment.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub op: OpId,
    pub shape: Shape4,
    /// Filter length for conv2d / fac / iac.
    pub k: usize,
    /// Iteration count for iac.
    pub sets: usize,
    pub stride: usize,
    pub slope: f64,
    /// Zero the conv2d / iac biases and keep them out of the check.
    pub zero_bias: bool,
    pub seed: u64,
}

impl GradCheck {
    pub fn new(op: OpId, shape: impl Into<Shape4>, seed: u64) -> Self {
        GradCheck {
            op,
            shape: shape.into(),
            k: 3,
            sets: 2,
            stride: 1,
            slope: crate::net::DEFAULT_LRELU_SLOPE,
            zero_bias: false,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOutcome {
    pub max_rel_error: f64,
    pub checked: usize,
}

type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type Reference = Box<dyn Fn(&[Tensor4]) -> Vec<TwoFloat>>;

struct Problem {
    inputs: Vec<Tensor4>,
    /// Which inputs are perturbed.
    check: Vec<bool>,
    build: Builder,
    /// Extended-precision forward used for the difference quotient instead
    /// of the tape, for ops whose small gradient entries sit below what an
    /// f64 difference at this step can resolve.
    reference: Option<Reference>,
}

fn lrelu_dd(v: TwoFloat, slope: f64) -> TwoFloat {
    if v >= 0.0 { v } else { v * slope }
}

fn to_dd(t: &Tensor4) -> Vec<TwoFloat> {
    t.data().iter().map(|&v| TwoFloat::from(v)).collect()
}

/// Double-double mean squared difference over the interior that remains
/// after dropping `border` pixels on every side.
fn mse_reference(a: &[TwoFloat], b: &[TwoFloat], s: Shape4, border: usize) -> TwoFloat {
    let mut acc = TwoFloat::from(0.0);
    let mut count = 0usize;
    for i in 0..s.len() {
        let (y, x) = ((i / s.w) % s.h, i % s.w);
        if y >= border && y + border < s.h && x >= border && x + border < s.w {
            let d = a[i] - b[i];
            acc += d * d;
            count += 1;
        }
    }
    acc / count as f64
}

/// Double-double bilinear horizontal warp with the sample coordinate
/// clamped to the row.
fn warp_reference(img: &Tensor4, d: &Tensor4) -> Vec<TwoFloat> {
    let s = img.shape();
    let max = TwoFloat::from((s.w - 1) as f64);
    let mut out = Vec::with_capacity(s.len());
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut sx = TwoFloat::from(x as f64) + d.at(n, 0, y, x);
                    if sx < 0.0 {
                        sx = TwoFloat::from(0.0);
                    }
                    if sx > max {
                        sx = max;
                    }
                    let x0 = sx.hi().floor().min((s.w - 1) as f64);
                    let t = sx - x0;
                    let x0 = x0 as usize;
                    let x1 = (x0 + 1).min(s.w - 1);
                    let (v0, v1) = (img.at(n, c, y, x0), img.at(n, c, y, x1));
                    out.push((TwoFloat::from(1.0) - t) * v0 + t * v1);
                }
            }
        }
    }
    out
}

/// Double-double iterated adaptive convolution with zero padding:
/// per set a vertical pass with f1, a horizontal pass with f2, the bias,
/// then the activation. Output in NCHW order.
fn iac_reference(e: &Tensor4, f: &Tensor4, sets: usize, k: usize, slope: f64) -> Vec<TwoFloat> {
    let s = e.shape();
    let (h, w, c) = (s.h as isize, s.w as isize, s.c);
    let r = (k / 2) as isize;
    let stride = c * (2 * k + 1);
    let mut out = Vec::with_capacity(s.len());
    for n in 0..s.n {
        for ch in 0..c {
            let mut a: Vec<TwoFloat> = e.plane(n, ch).iter().map(|&v| TwoFloat::from(v)).collect();
            for set in 0..sets {
                let tap = |which: usize, t: usize, y: isize, x: isize| {
                    let plane = set * stride + which * c * k + ch * k + t;
                    TwoFloat::from(f.at(n, plane, y as usize, x as usize))
                };
                let mut v = vec![TwoFloat::from(0.0); a.len()];
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = TwoFloat::from(0.0);
                        for t in 0..k {
                            let sy = y + t as isize - r;
                            if (0..h).contains(&sy) {
                                acc += tap(0, t, y, x) * a[(sy * w + x) as usize];
                            }
                        }
                        v[(y * w + x) as usize] = acc;
                    }
                }
                let mut next = vec![TwoFloat::from(0.0); a.len()];
                for y in 0..h {
                    for x in 0..w {
                        let bias = f.at(n, set * stride + 2 * c * k + ch, y as usize, x as usize);
                        let mut acc = TwoFloat::from(bias);
                        for t in 0..k {
                            let sx = x + t as isize - r;
                            if (0..w).contains(&sx) {
                                acc += tap(1, t, y, x) * v[(y * w + sx) as usize];
                            }
                        }
                        next[(y * w + x) as usize] = lrelu_dd(acc, slope);
                    }
                }
                a = next;
            }
            out.extend(a);
        }
    }
    out
}

fn uniform(shape: Shape4, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor4 {
    let data = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor4::from_vec(shape, data).expect("shape validated")
}

/// Values bounded away from zero, for kinked activations.
fn away_from_zero(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4 {
    let data = (0..shape.len())
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor4::from_vec(shape, data).expect("shape validated")
}

/// Disparities whose fractional part stays in [0.25, 0.75], away from the
/// kinks of bilinear interpolation and of the clamp.
fn fractional_disparity(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4 {
    let data = (0..shape.len())
        .map(|_| rng.random_range(-2i32..=2) as f64 + rng.random_range(0.25..0.75))
        .collect();
    Tensor4::from_vec(shape, data).expect("shape validated")
}

fn problem(c: &GradCheck) -> Result<Problem> {
    c.shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let s = c.shape;
    let k = c.k;
    let slope = c.slope;
    let p = match c.op {
        OpId::Conv2d => {
            let cout = 3;
            let b = if c.zero_bias {
                Tensor4::zeros((cout, 1, 1, 1))
            } else {
                uniform(Shape4::new(cout, 1, 1, 1), -1.0, 1.0, &mut rng)
            };
            let stride = c.stride;
            Problem {
                inputs: vec![
                    uniform(s, -1.0, 1.0, &mut rng),
                    uniform(Shape4::new(cout, s.c, k, k), -1.0, 1.0, &mut rng),
                    b,
                ],
                check: vec![true, true, !c.zero_bias],
                build: Box::new(move |t, v| t.conv2d(v[0], v[1], v[2], stride, k / 2)),
                reference: None,
            }
        }
        OpId::LRelu => Problem {
            inputs: vec![away_from_zero(s, &mut rng)],
            check: vec![true],
            build: Box::new(move |t, v| Ok(t.lrelu(v[0], slope))),
            reference: None,
        },
        OpId::AreaDownsample => Problem {
            inputs: vec![uniform(s, -1.0, 1.0, &mut rng)],
            check: vec![true],
            build: Box::new(|t, v| t.area_downsample(v[0], 2)),
            reference: None,
        },
        OpId::UpsampleNearest => Problem {
            inputs: vec![uniform(s, -1.0, 1.0, &mut rng)],
            check: vec![true],
            build: Box::new(|t, v| t.upsample_nearest(v[0], 2)),
            reference: None,
        },
        OpId::Fac => Problem {
            inputs: vec![
                uniform(s, -1.0, 1.0, &mut rng),
                uniform(Shape4::new(s.n, s.c * k * k, s.h, s.w), -1.0, 1.0, &mut rng),
            ],
            check: vec![true, true],
            build: Box::new(move |t, v| t.fac(v[0], v[1], k)),
            reference: None,
        },
        OpId::Iac => {
            let sets = c.sets;
            let mut f = uniform(
                Shape4::new(s.n, filter_map_channels(sets, s.c, k), s.h, s.w),
                -1.0,
                1.0,
                &mut rng,
            );
            if c.zero_bias {
                for n in 0..s.n {
                    for set in 0..sets {
                        for ch in 0..s.c {
                            f.plane_mut(n, set * s.c * (2 * k + 1) + 2 * s.c * k + ch)
                                .fill(0.0);
                        }
                    }
                }
            }
            // With zero bias the filter map is only checked for its taps;
            // perturbing the bias planes would move them off zero.
            let check_f = !c.zero_bias;
            Problem {
                inputs: vec![uniform(s, -1.0, 1.0, &mut rng), f],
                check: vec![true, check_f],
                build: Box::new(move |t, v| t.iac(v[0], v[1], sets, k, slope)),
                reference: Some(Box::new(move |v| iac_reference(&v[0], &v[1], sets, k, slope))),
            }
        }
        OpId::Warp => Problem {
            inputs: vec![
                uniform(s, -1.0, 1.0, &mut rng),
                fractional_disparity(Shape4::new(s.n, 1, s.h, s.w), &mut rng),
            ],
            check: vec![true, true],
            build: Box::new(|t, v| t.warp_horizontal(v[0], v[1])),
            reference: None,
        },
        OpId::LossDeblur | OpId::LossReblur => Problem {
            inputs: vec![uniform(s, 0.0, 1.0, &mut rng), uniform(s, 0.0, 1.0, &mut rng)],
            check: vec![true, true],
            build: Box::new(|t, v| t.mse(v[0], v[1], 0)),
            reference: Some(Box::new(move |v| vec![mse_reference(&to_dd(&v[0]), &to_dd(&v[1]), s, 0)])),
        },
        OpId::LossDisp => Problem {
            inputs: vec![
                uniform(s, 0.0, 1.0, &mut rng),
                uniform(s, 0.0, 1.0, &mut rng),
                fractional_disparity(Shape4::new(s.n, 1, s.h, s.w), &mut rng),
            ],
            check: vec![true, true, true],
            build: Box::new(|t, v| crate::losses::loss_disp(t, v[0], v[1], v[2])),
            reference: Some(Box::new(move |v| {
                let warped = warp_reference(&v[1], &v[2]);
                vec![mse_reference(&warped, &to_dd(&v[0]), s, crate::losses::DISP_BORDER)]
            })),
        },
    };
    Ok(p)
}

/// Build the graph once. Non-scalar outputs are reduced to a scalar with a
/// fixed random projection so every output element contributes.
fn objective(p: &Problem, inputs: &[Tensor4], proj: &Option<Tensor4>) -> Result<(Tape, Vec<Var>, Var, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (p.build)(&mut tape, &vars)?;
    let loss = match proj {
        Some(w) => tape.weighted_sum(out, w.clone())?,
        None => out,
    };
    Ok((tape, vars, out, loss))
}

/// Projected difference of two forward evaluations. Outputs are differenced
/// element-wise first, so elements the perturbation cannot reach cancel
/// exactly instead of adding rounding noise.
fn projected_difference(plus: &Tensor4, minus: &Tensor4, proj: &Option<Tensor4>) -> f64 {
    match proj {
        Some(w) => plus
            .data()
            .iter()
            .zip(minus.data())
            .zip(w.data())
            .map(|((a, b), w)| w * (a - b))
            .sum(),
        None => plus.data()[0] - minus.data()[0],
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Compare tape gradients with central differences of step [`FD_STEP`].
pub fn run_check(c: &GradCheck) -> Result<CheckOutcome> {
    let p = problem(c)?;
    let out_shape = {
        let (tape, _, out, _) = objective(&p, &p.inputs, &None)?;
        tape.shape(out)
    };
    let proj = (out_shape != Shape4::new(1, 1, 1, 1)).then(|| {
        Tensor4::rand_uniform(out_shape, -1.0, 1.0, c.seed ^ 0x9e37_79b9_7f4a_7c15)
    });
    let (tape, vars, out, loss) = objective(&p, &p.inputs, &proj)?;
    if let Some(reference) = &p.reference {
        let dev = reference(&p.inputs)
            .iter()
            .zip(tape.value(out).data())
            .map(|(r, v)| (f64::from(*r) - v).abs())
            .fold(0.0, f64::max);
        if dev > 1e-12 {
            return Err(Error::Contract(format!(
                "{}: reference forward deviates from the tape by {dev:e}",
                c.op
            )));
        }
    }
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut inputs = p.inputs.clone();
    for (i, var) in vars.iter().enumerate() {
        if !p.check[i] {
            continue;
        }
        let analytic = grads.get_or_zeros(*var);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            let numeric = match &p.reference {
                Some(reference) => {
                    inputs[i].data_mut()[j] = orig + FD_STEP;
                    let plus = reference(&inputs);
                    let hi = inputs[i].data()[j];
                    inputs[i].data_mut()[j] = orig - FD_STEP;
                    let minus = reference(&inputs);
                    let lo = inputs[i].data()[j];
                    inputs[i].data_mut()[j] = orig;
                    let w = proj.as_ref().map(|w| w.data().to_vec()).unwrap_or_else(|| vec![1.0]);
                    let mut acc = TwoFloat::from(0.0);
                    for ((a, b), wv) in plus.iter().zip(&minus).zip(&w) {
                        acc += (*a - *b) * *wv;
                    }
                    f64::from(acc / (TwoFloat::from(hi) - TwoFloat::from(lo)))
                }
                None => {
                    inputs[i].data_mut()[j] = orig + FD_STEP;
                    let (t1, _, o1, _) = objective(&p, &inputs, &None)?;
                    inputs[i].data_mut()[j] = orig - FD_STEP;
                    let (t2, _, o2, _) = objective(&p, &inputs, &None)?;
                    inputs[i].data_mut()[j] = orig;
                    projected_difference(t1.value(o1), t2.value(o2), &proj) / (2.0 * FD_STEP)
                }
            };
            worst = worst.max(relative_error(analytic.data()[j], numeric));
            checked += 1;
        }
    }
    Ok(CheckOutcome {
        max_rel_error: worst,
        checked,
    })
}

/// Convenience form: default parameters for `op` on `shape`.
pub fn finite_diff_check(op: &str, shape: impl Into<Shape4>, seed: u64) -> Result<f64> {
    let op: OpId = op.parse()?;
    run_check(&GradCheck::new(op, shape, seed)).map(|o| o.max_rel_error)
}

/// The standard suite run by `ifan gradcheck` and the acceptance tests.
pub fn standard_suite() -> Vec<GradCheck> {
    let mut v = Vec::new();
    for (i, op) in OpId::ALL.into_iter().enumerate() {
        let shape = match op {
            OpId::AreaDownsample | OpId::UpsampleNearest => Shape4::new(2, 2, 6, 6),
            OpId::LossDisp => Shape4::new(2, 3, 6, 7),
            OpId::Conv2d | OpId::Fac | OpId::Iac => Shape4::new(1, 2, 5, 5),
            _ => Shape4::new(2, 3, 5, 6),
        };
        v.push(GradCheck::new(op, shape, 100 + i as u64));
    }
    let mut strided = GradCheck::new(OpId::Conv2d, (2, 2, 6, 5), 200);
    strided.stride = 2;
    v.push(strided);
    let mut deep = GradCheck::new(OpId::Iac, (1, 2, 6, 6), 201);
    deep.sets = 4;
    v.push(deep);
    let mut wide = GradCheck::new(OpId::Fac, (1, 1, 6, 6), 202);
    wide.k = 5;
    v.push(wide);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_ids_parse() {
        for op in OpId::ALL {
            assert_eq!(op.name().parse::<OpId>().unwrap(), op);
        }
        assert!(matches!("nope".parse::<OpId>(), Err(Error::Contract(_))));
        assert!(finite_diff_check("nope", (1, 1, 2, 2), 0).is_err());
    }

    #[test]
    fn fac_and_iac_pass() {
        assert!(finite_diff_check("fac", (1, 2, 5, 5), 1).unwrap() < 1e-6);
        assert!(finite_diff_check("iac", (1, 2, 5, 5), 2).unwrap() < 1e-6);
    }

    #[test]
    fn linear_iac_is_nearly_exact() {
        let mut c = GradCheck::new(OpId::Iac, (1, 2, 5, 5), 3);
        c.slope = 1.0;
        c.zero_bias = true;
        assert!(run_check(&c).unwrap().max_rel_error < 1e-8);
        let mut c = GradCheck::new(OpId::Conv2d, (1, 2, 5, 5), 4);
        c.zero_bias = true;
        assert!(run_check(&c).unwrap().max_rel_error < 1e-8);
    }
}
