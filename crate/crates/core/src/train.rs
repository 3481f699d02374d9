//! Training: configuration presets, augmentation, loss/gradient evaluation
//! with per-loss routing, evaluation and the optimisation loop.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::losses::{self, LossReport};
use crate::net::{Bound, Forward, Group, Network, NetworkConfig, Params};
use crate::ops::area_downsample;
use crate::optim::{clip_grad_norm, lr_at, OptimState, RAdamHyper};
use crate::synth::{self, derive_gt_disparity, Sample, SynthConfig};
use crate::tape::Tape;
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetworkConfig,
    pub total_iters: usize,
    pub lr0: f64,
    pub decay_steps: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub crop_size: usize,
    pub noise_sigma_max: f64,
    pub grayscale_prob: f64,
    pub scale_range: (f64, f64),
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
    pub pool_size: usize,
    pub synth_size: usize,
    pub r_max: f64,
    pub eval_size: usize,
    pub eval_every: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Desk-scale preset: 64x64 crops of synthetic data, 2000 iterations,
    /// filtering at half resolution.
    pub fn toy() -> Self {
        TrainConfig {
            net: NetworkConfig {
                s: 2,
                ..NetworkConfig::default()
            },
            total_iters: 2000,
            lr0: 2e-3,
            decay_steps: vec![1500, 1800],
            decay_factor: 0.5,
            batch_size: 4,
            crop_size: 64,
            noise_sigma_max: 0.0,
            grayscale_prob: 0.1,
            scale_range: (0.85, 1.15),
            clip_norm: 0.5,
            weight_decay: 0.01,
            seed: 1,
            data_dir: None,
            eval_dir: None,
            pool_size: 192,
            synth_size: 80,
            r_max: 3.0,
            eval_size: 16,
            eval_every: 0,
            log_every: 50,
            checkpoint_every: 0,
        }
    }

    /// Published hyper-parameters (600k iterations, 256 crops, batch 8).
    pub fn paperish() -> Self {
        TrainConfig {
            net: NetworkConfig {
                c_e: 32,
                n_sets: 17,
                ..NetworkConfig::default()
            },
            total_iters: 600_000,
            lr0: 1e-4,
            decay_steps: vec![500_000, 550_000],
            batch_size: 8,
            crop_size: 256,
            pool_size: 1024,
            synth_size: 320,
            r_max: 10.0,
            log_every: 100,
            eval_every: 10_000,
            checkpoint_every: 10_000,
            ..TrainConfig::toy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paperish" => Ok(Self::paperish()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (toy | paperish)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.total_iters == 0 || self.batch_size == 0 {
            return bad("total_iters and batch_size must be positive".into());
        }
        if !self.decay_steps.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("decay_steps {:?} must be strictly increasing", self.decay_steps));
        }
        if self.decay_steps.last().is_some_and(|&d| d >= self.total_iters) {
            return bad(format!("decay_steps {:?} must be < total_iters", self.decay_steps));
        }
        if self.crop_size == 0 || self.crop_size % self.net.s != 0 {
            return bad(format!("crop_size {} must be a positive multiple of s", self.crop_size));
        }
        if self.net.use_dme && self.crop_size / self.net.s <= 2 * crate::losses::DISP_BORDER {
            return bad(format!(
                "crop_size {} leaves no disparity pixels inside the {}-pixel loss border",
                self.crop_size,
                crate::losses::DISP_BORDER
            ));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("scale range [{lo}, {hi}] is invalid"));
        }
        if self.data_dir.is_none() {
            if self.synth_size < 32 || ((self.synth_size as f64 * lo).round() as usize) < self.crop_size {
                return bad(format!(
                    "synth_size {} too small for crop {} at scale {lo}",
                    self.synth_size, self.crop_size
                ));
            }
            if self.pool_size == 0 {
                return bad("pool_size must be positive".into());
            }
        }
        if !(0.0..=1.0).contains(&self.grayscale_prob) || !(self.noise_sigma_max >= 0.0) {
            return bad("grayscale_prob must be in [0, 1] and noise_sigma_max >= 0".into());
        }
        if !(self.lr0 > 0.0 && self.clip_norm > 0.0 && self.r_max >= 0.0) {
            return bad("lr0 and clip_norm must be > 0, r_max >= 0".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        Ok(())
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            crop: self.crop_size,
            scale_range: self.scale_range,
            grayscale_prob: self.grayscale_prob,
            noise_sigma_max: self.noise_sigma_max,
            s: self.net.s,
        }
    }

    pub fn synth(&self, size: usize) -> SynthConfig {
        SynthConfig {
            h: size,
            w: size,
            r_max: self.r_max,
            s: self.net.s,
        }
    }

    /// First seed of the synthetic training pool and of the held-out set.
    pub fn data_seeds(&self) -> (u64, u64) {
        let base = self.seed << 20;
        (base, base + (1 << 19))
    }
}

// ---------------------------------------------------------------------------
// augmentation

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop: usize,
    pub scale_range: (f64, f64),
    pub grayscale_prob: f64,
    pub noise_sigma_max: f64,
    /// Grid factor for recomputing the disparity target after cropping.
    pub s: usize,
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(x: &Tensor4, oh: usize, ow: usize) -> Result<Tensor4> {
    let s = x.shape();
    let mut out = Tensor4::create((s.n, s.c, oh, ow), crate::tensor::Init::Zeros)?;
    let (sy, sx) = (s.h as f64 / oh as f64, s.w as f64 / ow as f64);
    let coord = |o: usize, scale: f64, len: usize| {
        let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        (i0, (i0 + 1).min(len - 1), p - i0 as f64)
    };
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                let (y0, y1, ty) = coord(y, sy, s.h);
                for xo in 0..ow {
                    let (x0, x1, tx) = coord(xo, sx, s.w);
                    let top = (1.0 - tx) * src[y0 * s.w + x0] + tx * src[y0 * s.w + x1];
                    let bot = (1.0 - tx) * src[y1 * s.w + x0] + tx * src[y1 * s.w + x1];
                    dst[y * ow + xo] = (1.0 - ty) * top + ty * bot;
                }
            }
        }
    }
    Ok(out)
}

fn to_grayscale(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let mut out = x.clone();
    for n in 0..s.n {
        let g = losses::grayscale(x, n);
        for c in 0..s.c {
            out.plane_mut(n, c).copy_from_slice(&g);
        }
    }
    out
}

/// Random rescale, shared crop, optional grayscale and per-view noise.
/// The sharp target stays noise-free; the noise realisation differs
/// between the merged and the two dual-pixel views.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = sample.blurred.shape();
    let (lo, hi) = cfg.scale_range;
    let factor = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let map = |t: &Option<Tensor4>, f: &dyn Fn(&Tensor4) -> Result<Tensor4>| t.as_ref().map(f).transpose();

    let (mut out, (h, w)) = if factor == 1.0 {
        (sample.clone(), (s.h, s.w))
    } else {
        let (h, w) = ((s.h as f64 * factor).round() as usize, (s.w as f64 * factor).round() as usize);
        let rs = |t: &Tensor4| resize_bilinear(t, h, w);
        let radius = map(&sample.radius, &|t| Ok(rs(t)?.scale(factor)))?;
        (
            Sample {
                name: sample.name.clone(),
                sharp: rs(&sample.sharp)?,
                blurred: rs(&sample.blurred)?,
                left: map(&sample.left, &rs)?,
                right: map(&sample.right, &rs)?,
                radius,
                disparity: None,
            },
            (h, w),
        )
    };
    if cfg.crop > h || cfg.crop > w {
        return Err(Error::Contract(format!(
            "crop {} larger than the {h}x{w} (rescaled) image",
            cfg.crop
        )));
    }
    let y0 = rng.random_range(0..=h - cfg.crop);
    let x0 = rng.random_range(0..=w - cfg.crop);
    let crop = |t: &Tensor4| t.crop(y0, x0, cfg.crop, cfg.crop);
    out.sharp = crop(&out.sharp)?;
    out.blurred = crop(&out.blurred)?;
    out.left = map(&out.left, &crop)?;
    out.right = map(&out.right, &crop)?;
    out.radius = map(&out.radius, &crop)?;
    out.disparity = match &out.radius {
        Some(r) if cfg.crop % cfg.s == 0 => Some(derive_gt_disparity(r, cfg.s)?),
        _ => None,
    };

    let gray = rng.random::<f64>() < cfg.grayscale_prob;
    if gray {
        out.sharp = to_grayscale(&out.sharp);
        out.blurred = to_grayscale(&out.blurred);
        out.left = out.left.as_ref().map(to_grayscale);
        out.right = out.right.as_ref().map(to_grayscale);
    }
    let sigma = if cfg.noise_sigma_max > 0.0 {
        rng.random_range(0.0..=cfg.noise_sigma_max)
    } else {
        0.0
    };
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        let mut noisy = |t: &Tensor4| {
            let mut out = t.clone();
            if gray {
                let sh = t.shape();
                for n in 0..sh.n {
                    let e: Vec<f64> = (0..sh.h * sh.w).map(|_| normal.sample(&mut rng)).collect();
                    for c in 0..sh.c {
                        out.plane_mut(n, c).iter_mut().zip(&e).for_each(|(v, d)| *v += d);
                    }
                }
            } else {
                out.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
            out
        };
        out.blurred = noisy(&out.blurred);
        out.left = out.left.as_ref().map(&mut noisy);
        out.right = out.right.as_ref().map(&mut noisy);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// losses and gradients

/// A stacked mini-batch. Dual-pixel views are required when the disparity
/// loss is enabled.
#[derive(Clone, Debug)]
pub struct Batch {
    pub sharp: Tensor4,
    pub blurred: Tensor4,
    pub left: Option<Tensor4>,
    pub right: Option<Tensor4>,
}

impl Batch {
    pub fn from_samples(samples: &[Sample]) -> Result<Batch> {
        let stack = |f: &dyn Fn(&Sample) -> Option<&Tensor4>| -> Result<Option<Tensor4>> {
            let items: Option<Vec<&Tensor4>> = samples.iter().map(f).collect();
            items.map(|v| Tensor4::stack(&v)).transpose()
        };
        Ok(Batch {
            sharp: stack(&|s| Some(&s.sharp))?.ok_or_else(|| Error::Contract("empty batch".into()))?,
            blurred: stack(&|s| Some(&s.blurred))?.expect("non-empty"),
            left: stack(&|s| s.left.as_ref())?,
            right: stack(&|s| s.right.as_ref())?,
        })
    }
}

/// Which loss terms contribute to the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveLosses {
    pub deblur: bool,
    pub disp: bool,
    pub reblur: bool,
}

impl ActiveLosses {
    pub const ALL: ActiveLosses = ActiveLosses {
        deblur: true,
        disp: true,
        reblur: true,
    };
    pub const DISP_ONLY: ActiveLosses = ActiveLosses {
        deblur: false,
        disp: true,
        reblur: false,
    };
    pub const REBLUR_ONLY: ActiveLosses = ActiveLosses {
        deblur: false,
        disp: false,
        reblur: true,
    };
}

/// Parameter groups each loss is allowed to update.
pub fn routed_groups(loss: &str) -> &'static [Group] {
    match loss {
        "deblur" => &[
            Group::Extractor,
            Group::FilterEncoder,
            Group::Dme,
            Group::FilterPredictor,
            Group::Reconstructor,
        ],
        "disp" => &[Group::FilterEncoder, Group::Dme, Group::DisparityHead],
        "reblur" => &[Group::FilterEncoder, Group::Dme, Group::FilterPredictor, Group::ReblurNet],
        _ => &[],
    }
}

/// Loss values plus per-loss gradients (unmasked), each as a full
/// parameter-shaped set.
pub struct StepGradients {
    pub report: LossReport,
    pub deblur: Option<Params>,
    pub disp: Option<Params>,
    pub reblur: Option<Params>,
}

fn grads_for(tape: &Tape, loss: crate::tape::Var, bound: &Bound, params: &Params) -> Result<Params> {
    let mut g = tape.backward(loss)?;
    Params::from_entries(bound.iter().zip(params.iter()).map(|((name, var), (_, p))| {
        let t = g.take(var).unwrap_or_else(|| Tensor4::zeros(p.shape()));
        (name.to_string(), t)
    }))
}

fn non_finite(tape: &Tape, what: &str) -> Error {
    let first = tape
        .first_non_finite()
        .unwrap_or_else(|| "no intermediate tensor".to_string());
    Error::NonFinite(format!("{what} is not finite; first non-finite tensor: {first}"))
}

/// Forward all enabled losses on one batch and differentiate each active one
/// with its own reverse sweep over the shared tape.
pub fn compute_gradients(net: &Network, batch: &Batch, active: ActiveLosses) -> Result<StepGradients> {
    let cfg = &net.cfg;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, &net.params);
    let fw = Forward { cfg, p: &bound };
    let x = tape.leaf(batch.blurred.clone());
    let sharp = tape.leaf(batch.sharp.clone());
    let out = fw.deblur(&mut tape, x)?;
    let l_deblur = losses::loss_deblur(&mut tape, out.deblurred, sharp)?;

    let l_disp = if cfg.use_dme {
        let (left, right) = match (&batch.left, &batch.right) {
            (Some(l), Some(r)) => (l, r),
            _ => return Err(Error::Contract("use_dme needs left and right views".into())),
        };
        let right_in = tape.leaf(right.clone());
        let d = fw.disparity(&mut tape, right_in)?;
        let ld = tape.leaf(area_downsample(left, cfg.s)?);
        let rd = tape.leaf(area_downsample(right, cfg.s)?);
        Some(losses::loss_disp(&mut tape, ld, rd, d)?)
    } else {
        None
    };

    let l_reblur = if cfg.use_reblur {
        let sd = tape.leaf(area_downsample(&batch.sharp, cfg.s)?);
        let bd = tape.leaf(area_downsample(&batch.blurred, cfg.s)?);
        let rb = fw.reblur(&mut tape, out.filters, sd)?;
        Some(losses::loss_reblur(&mut tape, rb, bd)?)
    } else {
        None
    };

    let val = |v: Option<crate::tape::Var>| v.map(|v| tape.value(v).data()[0]).unwrap_or(0.0);
    let report = LossReport::new(val(Some(l_deblur)), val(l_disp), val(l_reblur));
    for (name, v) in [("l_deblur", report.l_deblur), ("l_disp", report.l_disp), ("l_reblur", report.l_reblur)] {
        if !v.is_finite() {
            return Err(non_finite(&tape, name));
        }
    }
    let sweep = |on: bool, v: Option<crate::tape::Var>| -> Result<Option<Params>> {
        match (on, v) {
            (true, Some(v)) => grads_for(&tape, v, &bound, &net.params).map(Some),
            _ => Ok(None),
        }
    };
    Ok(StepGradients {
        report,
        deblur: sweep(active.deblur, Some(l_deblur))?,
        disp: sweep(active.disp, l_disp)?,
        reblur: sweep(active.reblur, l_reblur)?,
    })
}

/// Zero every gradient outside `groups`.
pub fn mask_groups(grads: &mut Params, groups: &[Group]) {
    for (name, g) in grads.iter_mut() {
        let keep = Group::of(name).is_some_and(|grp| groups.contains(&grp));
        if !keep {
            g.data_mut().fill(0.0);
        }
    }
}

/// Mask each loss's gradients to its routed groups and sum them.
pub fn route(step: StepGradients, params: &Params) -> Result<Params> {
    let mut total = Params::from_entries(params.iter().map(|(n, p)| (n.to_string(), Tensor4::zeros(p.shape()))))?;
    for (name, grads) in [("deblur", step.deblur), ("disp", step.disp), ("reblur", step.reblur)] {
        if let Some(mut g) = grads {
            mask_groups(&mut g, routed_groups(name));
            for ((_, acc), (_, v)) in total.iter_mut().zip(g.iter()) {
                acc.axpy(1.0, v)?;
            }
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// evaluation

/// Reflect-pad to a multiple of `s`, deblur, crop back. Returns the
/// deblurred image and the disparity map of the padded input.
pub fn deblur_any_size(net: &Network, img: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    let s = img.shape();
    let f = net.cfg.s;
    let (ph, pw) = (s.h.div_ceil(f) * f, s.w.div_ceil(f) * f);
    let padded = if (ph, pw) == (s.h, s.w) {
        img.clone()
    } else {
        reflect_pad(img, ph, pw)?
    };
    let out = net.deblur_forward(&padded)?;
    Ok((out.deblurred.crop(0, 0, s.h, s.w)?, out.disparity.into_tensor()))
}

/// Pad bottom and right by mirroring (edge pixel not repeated).
pub fn reflect_pad(x: &Tensor4, h: usize, w: usize) -> Result<Tensor4> {
    let s = x.shape();
    if h < s.h || w < s.w || h - s.h >= s.h.max(2) || w - s.w >= s.w.max(2) {
        return Err(Error::Contract(format!("cannot reflect-pad {s} to {h}x{w}")));
    }
    let reflect = |i: usize, len: usize| if i < len { i } else { (2 * (len - 1)).saturating_sub(i) };
    let mut out = Tensor4::zeros((s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = src[reflect(y, s.h) * s.w + reflect(xx, s.w)];
                }
            }
        }
    }
    Ok(out)
}

/// Per-image metrics averaged over an evaluation set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub iter: usize,
    pub samples: usize,
    /// PSNR of the defocused input against the target.
    pub psnr_input: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    /// Mean of the per-image deblurring MSE.
    pub l_deblur: f64,
}

pub fn evaluate(net: &Network, samples: &[Sample]) -> Result<EvalReport> {
    let per = crate::ops::map_indices(samples.len(), |i| -> Result<[f64; 5]> {
        let s = &samples[i];
        let (out, _) = deblur_any_size(net, &s.blurred)?;
        Ok([
            losses::psnr(&s.blurred, &s.sharp, 1.0)?,
            losses::psnr(&out, &s.sharp, 1.0)?,
            losses::ssim(&out, &s.sharp)?,
            losses::mae(&out, &s.sharp)?,
            losses::mse(&out, &s.sharp)?,
        ])
    });
    let mut acc = [0.0; 5];
    for r in per {
        for (a, v) in acc.iter_mut().zip(r?) {
            *a += v;
        }
    }
    let n = samples.len().max(1) as f64;
    Ok(EvalReport {
        iter: 0,
        samples: samples.len(),
        psnr_input: acc[0] / n,
        psnr: acc[1] / n,
        ssim: acc[2] / n,
        mae: acc[3] / n,
        l_deblur: acc[4] / n,
    })
}

/// Held-out set for `cfg`: the evaluation directory when given, otherwise
/// crop-sized centre windows of synthetic samples drawn like the training
/// pool but from disjoint seeds.
pub fn eval_samples(cfg: &TrainConfig) -> Result<Vec<Sample>> {
    match &cfg.eval_dir {
        Some(dir) => synth::load_paired_dir(dir)?.iter().take(cfg.eval_size).collect(),
        None => synth::make_samples(cfg.data_seeds().1, cfg.eval_size, &cfg.synth(cfg.synth_size))?
            .iter()
            .map(|s| s.center_crop(cfg.crop_size, cfg.crop_size, cfg.net.s))
            .collect(),
    }
}

fn training_pool(cfg: &TrainConfig) -> Result<Vec<Sample>> {
    match &cfg.data_dir {
        Some(dir) => {
            let pool: Vec<Sample> = synth::load_paired_dir(dir)?.iter().collect::<Result<_>>()?;
            if pool.is_empty() {
                return Err(Error::Config(format!("{} holds no training pairs", dir.display())));
            }
            Ok(pool)
        }
        None => synth::make_samples(cfg.data_seeds().0, cfg.pool_size, &cfg.synth(cfg.synth_size)),
    }
}

// ---------------------------------------------------------------------------
// training loop

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterLog {
    pub iter: usize,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(flatten)]
    pub losses: LossReport,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<IterLog>,
    pub evals: Vec<EvalReport>,
    pub network: Network,
    pub final_checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    total_iters: usize,
    seed: u64,
    final_losses: LossReport,
    evals: &'a [EvalReport],
    final_checkpoint: Option<String>,
}

impl TrainReport {
    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.evals.last()
    }

    /// One line per logged iteration:
    /// `iter lr l_deblur l_disp l_reblur l_total`.
    pub fn log_text(&self) -> String {
        let mut s = String::from("# iter lr l_deblur l_disp l_reblur l_total\n");
        for l in &self.log {
            let r = l.losses;
            let _ = writeln!(
                s,
                "{} {:e} {:.9e} {:.9e} {:.9e} {:.9e}",
                l.iter, l.lr, r.l_deblur, r.l_disp, r.l_reblur, r.l_total
            );
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let sum = Summary {
            total_iters: self.log.last().map_or(0, |l| l.iter + 1),
            seed: self.seed,
            final_losses: self.log.last().map(|l| l.losses).unwrap_or_default(),
            evals: &self.evals,
            final_checkpoint: self.final_checkpoint.as_ref().map(|p| p.display().to_string()),
        };
        serde_json::to_string_pretty(&sum).expect("plain data serialises")
    }
}

/// Observer for progress output; the CLI prints, tests stay quiet.
pub trait Progress {
    fn iteration(&mut self, _log: &IterLog) {}
    fn evaluation(&mut self, _eval: &EvalReport) {}
}

pub struct Quiet;
impl Progress for Quiet {}

/// Train from scratch. With `out_dir`, checkpoints, `train_log.txt`,
/// `summary.json` and `config.txt` are written there.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>, progress: &mut dyn Progress) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("config.txt");
        fs::write(&p, crate::config::render_train(cfg)).map_err(|e| Error::io(&p, e))?;
    }
    let pool = training_pool(cfg)?;
    let eval_set = eval_samples(cfg)?;
    let mut net = Network::new(cfg.net.clone(), cfg.seed)?;
    let hyper = RAdamHyper {
        weight_decay: cfg.weight_decay,
        ..RAdamHyper::default()
    };
    let mut opt = OptimState::new(&net.params, hyper);
    let aug = cfg.augment_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);

    let mut log = Vec::new();
    let mut evals = Vec::new();
    let ckpt_path = |it: usize| out_dir.map(|d| d.join(format!("ckpt_{it:07}.ifan")));
    for it in 0..cfg.total_iters {
        let lr = lr_at(cfg.lr0, &cfg.decay_steps, cfg.decay_factor, it);
        let picks: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (rng.random_range(0..pool.len()), rng.random()))
            .collect();
        let items: Vec<Sample> = crate::ops::map_indices(picks.len(), |i| augment(&pool[picks[i].0], &aug, picks[i].1))
            .into_iter()
            .collect::<Result<_>>()?;
        let batch = Batch::from_samples(&items)?;
        let step = compute_gradients(&net, &batch, ActiveLosses::ALL)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("iteration {it}: {m}")),
                other => other,
            })?;
        let report = step.report;
        let mut grads = route(step, &net.params)?;
        let grad_norm = clip_grad_norm(&mut grads, cfg.clip_norm)?;
        opt.step(&mut net.params, &grads, lr)?;
        if !net.params.all_finite() {
            return Err(Error::NonFinite(format!("iteration {it}: parameters diverged")));
        }
        let entry = IterLog {
            iter: it,
            lr,
            grad_norm,
            losses: report,
        };
        if it % cfg.log_every == 0 || it + 1 == cfg.total_iters {
            log.push(entry);
            progress.iteration(&entry);
        }
        let done = it + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done != cfg.total_iters {
            let e = EvalReport { iter: done, ..evaluate(&net, &eval_set)? };
            progress.evaluation(&e);
            evals.push(e);
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.total_iters {
            if let Some(p) = ckpt_path(done) {
                io::save_checkpoint(&p, &net.cfg, &net.params)?;
            }
        }
    }
    let e = EvalReport {
        iter: cfg.total_iters,
        ..evaluate(&net, &eval_set)?
    };
    progress.evaluation(&e);
    evals.push(e);
    let final_checkpoint = match out_dir {
        Some(dir) => {
            let p = dir.join("final.ifan");
            io::save_checkpoint(&p, &net.cfg, &net.params)?;
            Some(p)
        }
        None => None,
    };
    let report = TrainReport {
        log,
        evals,
        network: net,
        final_checkpoint,
        seed: cfg.seed,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        let files = [
            ("train_log.txt", report.log_text()),
            ("summary.json", report.summary_json() + "\n"),
        ];
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(report)
}

/// Shape check used by callers that build batches by hand.
pub fn expect_image_batch(t: &Tensor4, s: usize) -> Result<Shape4> {
    let sh = t.shape();
    if sh.c != 3 || sh.h % s != 0 || sh.w % s != 0 {
        return Err(Error::Shape(format!("expected (n, 3, h, w) with h, w divisible by {s}, got {sh}")));
    }
    Ok(sh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_sample(seed: u64) -> Sample {
        synth::make_sample(seed, &SynthConfig { h: 40, w: 40, r_max: 2.0, s: 8 }).unwrap()
    }

    #[test]
    fn presets_validate() {
        TrainConfig::toy().validate().unwrap();
        TrainConfig::paperish().validate().unwrap();
        let bad = TrainConfig {
            decay_steps: vec![2500],
            ..TrainConfig::toy()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identity_augmentation() {
        let s = small_sample(1);
        let cfg = AugmentConfig {
            crop: 40,
            scale_range: (1.0, 1.0),
            grayscale_prob: 0.0,
            noise_sigma_max: 0.0,
            s: 8,
        };
        let a = augment(&s, &cfg, 5).unwrap();
        assert_eq!(a.sharp, s.sharp);
        assert_eq!(a.blurred, s.blurred);
        assert_eq!(a.left, s.left);
        assert_eq!(a.disparity, s.disparity);
    }

    #[test]
    fn shared_crop_keeps_merge_invariant() {
        let s = small_sample(2);
        let cfg = AugmentConfig {
            crop: 24,
            scale_range: (1.0, 1.0),
            grayscale_prob: 0.0,
            noise_sigma_max: 0.0,
            s: 8,
        };
        for seed in 0..4 {
            let a = augment(&s, &cfg, seed).unwrap();
            let merged = a.left.as_ref().unwrap().add(a.right.as_ref().unwrap()).unwrap().scale(0.5);
            assert!(merged.max_abs_diff(&a.blurred).unwrap() < 1e-9);
            assert_eq!(a.disparity.unwrap().shape(), Shape4::new(1, 1, 3, 3));
        }
    }

    #[test]
    fn grayscale_and_noise() {
        let s = small_sample(3);
        let cfg = AugmentConfig {
            crop: 32,
            scale_range: (0.9, 1.1),
            grayscale_prob: 1.0,
            noise_sigma_max: 0.07,
            s: 8,
        };
        let a = augment(&s, &cfg, 9).unwrap();
        for t in [&a.sharp, &a.blurred, a.left.as_ref().unwrap()] {
            assert_eq!(t.plane(0, 0), t.plane(0, 1));
            assert_eq!(t.plane(0, 1), t.plane(0, 2));
        }
        // the sharp target is never noisy: its channels stay inside [0, 1]
        assert!(a.sharp.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let too_big = AugmentConfig { crop: 64, ..cfg };
        assert!(matches!(augment(&s, &too_big, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn bilinear_resize_preserves_constants() {
        let c = Tensor4::full((1, 2, 7, 9), 0.3);
        let r = resize_bilinear(&c, 11, 5).unwrap();
        assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        let x = Tensor4::randn((1, 1, 6, 6), 0.0, 1.0, 1);
        assert_eq!(resize_bilinear(&x, 6, 6).unwrap(), x);
    }

    #[test]
    fn reflect_padding() {
        let x = Tensor4::from_vec((1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let p = reflect_pad(&x, 2, 5).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 2.0, 1.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn masks_zero_outside_groups() {
        let cfg = NetworkConfig::default();
        let mut g = crate::net::init_params(&cfg, 1).unwrap();
        for (_, t) in g.iter_mut() {
            t.data_mut().fill(1.0);
        }
        mask_groups(&mut g, &[Group::DisparityHead]);
        for (name, t) in g.iter() {
            let zero = t.data().iter().all(|&v| v == 0.0);
            assert_eq!(zero, !name.starts_with("disparity_head"), "{name}");
        }
    }
}
