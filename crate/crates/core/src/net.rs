//! The deblurring network and its training-only reblurring branch.
//!
//! Data flow for one defocused image `I_B` (H x W, downsample factor `s`):
//!
//! ```text
//! I_B ─ extractor ──────────────── e_B ─┐
//!  │                                    IAC(e_B, F_deblur) = e_BS ─ reconstructor ─ I_BS
//!  └─ filter encoder ─ DME body ─┬─ filter predictor ─ F_deblur
//!                                └─ disparity head ─ d
//! ```
//!
//! The reblurring branch maps `F_deblur` to `F_reblur` (three channels) and
//! applies IAC to the downsampled sharp image.
//!
//! All sub-networks are built from 3x3 convolutions, leaky ReLUs and
//! residual blocks. The layer list is produced once by [`plan`] and drives
//! parameter initialisation, the forward pass and [`describe`] alike.

use std::fmt::{self, Write as _};

use indexmap::IndexMap;

use crate::adaptive::{filter_map_channels, FilterMap};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Init, Shape4, Tensor4};
use crate::warp::DisparityMap;

pub const DEFAULT_LRELU_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Feature channels at the filtering resolution.
    pub c_e: usize,
    /// Number of separable filter sets per pixel.
    pub n_sets: usize,
    /// Separable filter length.
    pub k: usize,
    /// Downsample factor between image and feature resolution.
    pub s: usize,
    pub blocks_per_stage: usize,
    pub lrelu_slope: f64,
    pub use_filter_prediction: bool,
    pub use_dme: bool,
    pub use_reblur: bool,
    /// Add extractor features into the reconstructor at matching scales.
    pub skip_connections: bool,
    /// Add the input image to the reconstructor output.
    pub global_residual: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            c_e: 16,
            n_sets: 4,
            k: 3,
            s: 8,
            blocks_per_stage: 2,
            lrelu_slope: DEFAULT_LRELU_SLOPE,
            use_filter_prediction: true,
            use_dme: true,
            use_reblur: true,
            skip_connections: true,
            global_residual: true,
        }
    }
}

impl NetworkConfig {
    /// All three ablation components disabled.
    pub fn baseline(mut self) -> Self {
        self.use_filter_prediction = false;
        self.use_dme = false;
        self.use_reblur = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.c_e == 0 || self.n_sets == 0 {
            return bad("c_e and n_sets must be >= 1".into());
        }
        if self.k % 2 == 0 {
            return bad(format!("k must be odd, got {}", self.k));
        }
        if self.s < 2 || !self.s.is_power_of_two() {
            return bad(format!("s must be a power of two >= 2, got {}", self.s));
        }
        if !(0.0..1.0).contains(&self.lrelu_slope) {
            return bad(format!("lrelu slope must be in [0, 1), got {}", self.lrelu_slope));
        }
        if self.use_reblur && !self.use_filter_prediction {
            return bad("use_reblur requires use_filter_prediction".into());
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.s.trailing_zeros() as usize
    }

    /// Channel width after extractor stage `i` (the last stage is `c_e`).
    pub fn stage_width(&self, i: usize) -> usize {
        (self.c_e >> (self.stages() - 1 - i)).max(1)
    }

    /// Channels of `F_deblur`: `N * c_e * (2k + 1)`.
    pub fn deblur_filter_channels(&self) -> usize {
        filter_map_channels(self.n_sets, self.c_e, self.k)
    }

    /// Channels of `F_reblur`: `N * 3 * (2k + 1)`.
    pub fn reblur_filter_channels(&self) -> usize {
        filter_map_channels(self.n_sets, 3, self.k)
    }

    /// Residual blocks that replace IAC when filter prediction is off, chosen
    /// so the parameter count stays close to the full model's.
    pub fn baseline_fusion_blocks(&self) -> usize {
        let c = self.c_e;
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let full_extra = conv(c, self.deblur_filter_channels(), 1) + conv(c, 1, 3);
        let fixed = conv(c, c, 1) + conv(2 * c, c, 3);
        let block = 2 * conv(c, c, 3);
        let m = (full_extra as f64 - fixed as f64) / block as f64;
        m.round().max(1.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Extractor,
    FilterEncoder,
    Dme,
    DisparityHead,
    FilterPredictor,
    Reconstructor,
    ReblurNet,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Extractor,
        Group::FilterEncoder,
        Group::Dme,
        Group::DisparityHead,
        Group::FilterPredictor,
        Group::Reconstructor,
        Group::ReblurNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Extractor => "extractor",
            Group::FilterEncoder => "filter_encoder",
            Group::Dme => "dme",
            Group::DisparityHead => "disparity_head",
            Group::FilterPredictor => "filter_predictor",
            Group::Reconstructor => "reconstructor",
            Group::ReblurNet => "reblur_net",
        }
    }

    pub fn of(name: &str) -> Option<Group> {
        let prefix = name.split('.').next()?;
        Group::ALL.into_iter().find(|g| g.as_str() == prefix)
    }

    /// Sub-networks that only exist for training.
    pub fn training_only(self) -> bool {
        matches!(self, Group::ReblurNet)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a layer's parameters are initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LayerInit {
    He,
    /// Zero weights, bias decoding to delta filters with zero bias.
    DeltaFilters { channels: usize },
    /// Zero weights and bias.
    Zero,
}

/// One convolution in the architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub group: Group,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    /// Output resolution divisor relative to the input image.
    pub out_div: usize,
    init: LayerInit,
}

impl ConvSpec {
    pub fn params(&self) -> usize {
        self.cout * self.cin * self.k * self.k + self.cout
    }

    pub fn macs(&self, h: usize, w: usize) -> usize {
        (h / self.out_div) * (w / self.out_div) * self.cout * self.cin * self.k * self.k
    }
}

struct Planner {
    layers: Vec<ConvSpec>,
}

impl Planner {
    fn conv(&mut self, name: String, group: Group, cin: usize, cout: usize, k: usize, stride: usize, out_div: usize) {
        self.layers.push(ConvSpec {
            name,
            group,
            cin,
            cout,
            k,
            stride,
            out_div,
            init: LayerInit::He,
        });
    }

    fn resblocks(&mut self, prefix: &str, group: Group, ch: usize, count: usize, out_div: usize) {
        for j in 0..count {
            for half in ["conv1", "conv2"] {
                self.conv(format!("{prefix}.rb{j}.{half}"), group, ch, ch, 3, 1, out_div);
            }
        }
    }

    fn encoder(&mut self, group: Group, cfg: &NetworkConfig) {
        let mut cin = 3;
        for i in 0..cfg.stages() {
            let w = cfg.stage_width(i);
            let div = 2 << i;
            let p = format!("{}.s{i}", group.as_str());
            self.conv(format!("{p}.down"), group, cin, w, 3, 2, div);
            self.resblocks(&p, group, w, cfg.blocks_per_stage, div);
            cin = w;
        }
    }
}

/// Ordered layer list for `cfg`.
pub fn plan(cfg: &NetworkConfig) -> Vec<ConvSpec> {
    let mut p = Planner { layers: Vec::new() };
    let (c, s) = (cfg.c_e, cfg.s);
    p.encoder(Group::Extractor, cfg);
    p.encoder(Group::FilterEncoder, cfg);
    p.resblocks("dme", Group::Dme, c, cfg.blocks_per_stage, s);
    if cfg.use_dme {
        p.conv("disparity_head.conv".into(), Group::DisparityHead, c, 1, 3, 1, s);
    }
    p.resblocks("filter_predictor", Group::FilterPredictor, c, cfg.blocks_per_stage, s);
    if cfg.use_filter_prediction {
        let fc = cfg.deblur_filter_channels();
        p.layers.push(ConvSpec {
            name: "filter_predictor.head".into(),
            group: Group::FilterPredictor,
            cin: c,
            cout: fc,
            k: 1,
            stride: 1,
            out_div: s,
            init: LayerInit::DeltaFilters { channels: c },
        });
    } else {
        p.conv("filter_predictor.head".into(), Group::FilterPredictor, c, c, 1, 1, s);
        p.conv("filter_predictor.fuse".into(), Group::FilterPredictor, 2 * c, c, 3, 1, s);
        p.resblocks("filter_predictor.fuse", Group::FilterPredictor, c, cfg.baseline_fusion_blocks(), s);
    }
    let stages = cfg.stages();
    for i in 0..stages {
        // stage i upsamples from 1/(s >> i) to 1/(s >> (i+1))
        let cin = cfg.stage_width(stages - 1 - i);
        let last = i + 1 == stages;
        let cout = if last { 3 } else { cfg.stage_width(stages - 2 - i) };
        p.conv(format!("reconstructor.up{i}"), Group::Reconstructor, cin, cout, 3, 1, s >> (i + 1));
    }
    if cfg.global_residual {
        // the untrained network returns its input unchanged
        p.layers.last_mut().expect("reconstructor layers").init = LayerInit::Zero;
    }
    if cfg.use_reblur {
        let (fc, rc) = (cfg.deblur_filter_channels(), cfg.reblur_filter_channels());
        p.conv("reblur_net.conv1".into(), Group::ReblurNet, fc, rc, 1, 1, s);
        p.layers.push(ConvSpec {
            name: "reblur_net.conv2".into(),
            group: Group::ReblurNet,
            cin: rc,
            cout: rc,
            k: 1,
            stride: 1,
            out_div: s,
            init: LayerInit::DeltaFilters { channels: 3 },
        });
    }
    p.layers
}

/// Named weight tensors in architecture order. Each convolution `x`
/// contributes `x.w` (c_out, c_in, k, k) and `x.b` (c_out, 1, 1, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    tensors: IndexMap<String, Tensor4>,
}

impl Params {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Tensor4)>) -> Result<Self> {
        let mut tensors = IndexMap::new();
        for (name, t) in entries {
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
            }
        }
        Ok(Params { tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor4> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor4)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor4::len).sum()
    }

    pub fn count_where(&self, f: impl Fn(Group) -> bool) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| Group::of(n).is_some_and(&f))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor4::is_finite)
    }
}

/// Bias vector decoding to delta `f1`, `f2` and zero bias for every set.
fn delta_filter_bias(sets: usize, channels: usize, k: usize) -> Vec<f64> {
    let mut b = vec![0.0; filter_map_channels(sets, channels, k)];
    for s in 0..sets {
        let base = s * channels * (2 * k + 1);
        for ch in 0..channels {
            b[base + ch * k + k / 2] = 1.0;
            b[base + channels * k + ch * k + k / 2] = 1.0;
        }
    }
    b
}

/// Deterministic initialisation: He-normal weights and zero biases, except
/// the layers that emit filter maps, which start as identity filters, and
/// the last reconstructor layer under a global residual, which starts at
/// zero.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<Params> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for (i, l) in plan(cfg).iter().enumerate() {
        let wshape = Shape4::new(l.cout, l.cin, l.k, l.k);
        let bshape = Shape4::new(l.cout, 1, 1, 1);
        let (w, b) = match l.init {
            LayerInit::He => {
                let fan_in = (l.cin * l.k * l.k) as f64;
                let std = (2.0 / fan_in).sqrt();
                let lseed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
                (
                    Tensor4::create(wshape, Init::Normal { mean: 0.0, std, seed: lseed })?,
                    Tensor4::zeros(bshape),
                )
            }
            LayerInit::Zero => (Tensor4::zeros(wshape), Tensor4::zeros(bshape)),
            LayerInit::DeltaFilters { channels } => (
                Tensor4::zeros(wshape),
                Tensor4::from_vec(bshape, delta_filter_bias(cfg.n_sets, channels, cfg.k))?,
            ),
        };
        entries.push((format!("{}.w", l.name), w));
        entries.push((format!("{}.b", l.name), b));
    }
    Params::from_entries(entries)
}

/// Parameters registered as leaves on a tape.
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, params: &Params) -> Self {
        let vars = params
            .iter()
            .map(|(n, t)| (n.to_string(), tape.leaf(t.clone())))
            .collect();
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Tape-level forward pass builder.
pub struct Forward<'a> {
    pub cfg: &'a NetworkConfig,
    pub p: &'a Bound,
}

/// Intermediate handles of one deblurring pass.
pub struct DeblurVars {
    pub deblurred: Var,
    pub e_b: Var,
    pub e_bs: Var,
    /// `F_deblur` (or predictor features when filter prediction is off).
    pub filters: Var,
    pub disparity: Option<Var>,
}

impl Forward<'_> {
    fn conv(&self, t: &mut Tape, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.p.var(&format!("{name}.w"))?;
        let b = self.p.var(&format!("{name}.b"))?;
        let k = t.shape(w).h;
        t.conv2d(x, w, b, stride, k / 2)
    }

    fn conv_act(&self, t: &mut Tape, name: &str, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv(t, name, x, stride)?;
        Ok(t.lrelu(y, self.cfg.lrelu_slope))
    }

    fn resblocks(&self, t: &mut Tape, prefix: &str, mut x: Var, count: usize) -> Result<Var> {
        for j in 0..count {
            let h = self.conv_act(t, &format!("{prefix}.rb{j}.conv1"), x, 1)?;
            let h = self.conv(t, &format!("{prefix}.rb{j}.conv2"), h, 1)?;
            x = t.add(x, h)?;
        }
        Ok(x)
    }

    fn check_input(&self, t: &Tape, x: Var) -> Result<()> {
        let s = t.shape(x);
        if s.c != 3 {
            return Err(Error::Shape(format!("expected an RGB image, got {s}")));
        }
        if s.h % self.cfg.s != 0 || s.w % self.cfg.s != 0 {
            return Err(Error::Shape(format!(
                "image {}x{} not divisible by s={}",
                s.h, s.w, self.cfg.s
            )));
        }
        Ok(())
    }

    /// Encoder stages; returns the output of every stage (last = deepest).
    fn encode(&self, t: &mut Tape, group: Group, x: Var) -> Result<Vec<Var>> {
        self.check_input(t, x)?;
        let mut feats = Vec::new();
        let mut h = x;
        for i in 0..self.cfg.stages() {
            let p = format!("{}.s{i}", group.as_str());
            h = self.conv_act(t, &format!("{p}.down"), h, 2)?;
            h = self.resblocks(t, &p, h, self.cfg.blocks_per_stage)?;
            feats.push(h);
        }
        Ok(feats)
    }

    pub fn feature_extract(&self, t: &mut Tape, x: Var) -> Result<Vec<Var>> {
        self.encode(t, Group::Extractor, x)
    }

    /// Filter encoder and DME body; returns (DME features, disparity).
    fn dme(&self, t: &mut Tape, x: Var) -> Result<(Var, Option<Var>)> {
        let e_f = *self.encode(t, Group::FilterEncoder, x)?.last().expect("stages >= 1");
        let f_d = self.resblocks(t, "dme", e_f, self.cfg.blocks_per_stage)?;
        let d = if self.cfg.use_dme {
            Some(self.conv(t, "disparity_head.conv", f_d, 1)?)
        } else {
            None
        };
        Ok((f_d, d))
    }

    /// Disparity estimate for `x` (used on the right view during training).
    pub fn disparity(&self, t: &mut Tape, x: Var) -> Result<Var> {
        if !self.cfg.use_dme {
            return Err(Error::Contract("disparity requested with use_dme = false".into()));
        }
        Ok(self.dme(t, x)?.1.expect("use_dme checked"))
    }

    /// Filter map prediction; returns (filters, disparity).
    pub fn ifan(&self, t: &mut Tape, x: Var) -> Result<(Var, Option<Var>)> {
        let (f_d, d) = self.dme(t, x)?;
        let h = self.resblocks(t, "filter_predictor", f_d, self.cfg.blocks_per_stage)?;
        let f = self.conv(t, "filter_predictor.head", h, 1)?;
        Ok((f, d))
    }

    pub fn deblur(&self, t: &mut Tape, x: Var) -> Result<DeblurVars> {
        let cfg = self.cfg;
        let feats = self.feature_extract(t, x)?;
        let e_b = *feats.last().expect("stages >= 1");
        let (filters, disparity) = self.ifan(t, x)?;
        let e_bs = if cfg.use_filter_prediction {
            t.iac(e_b, filters, cfg.n_sets, cfg.k, cfg.lrelu_slope)?
        } else {
            let cat = t.concat_channels(e_b, filters)?;
            let h = self.conv_act(t, "filter_predictor.fuse", cat, 1)?;
            self.resblocks(t, "filter_predictor.fuse", h, cfg.baseline_fusion_blocks())?
        };
        let stages = cfg.stages();
        let mut h = e_bs;
        for i in 0..stages {
            h = t.upsample_nearest(h, 2)?;
            let name = format!("reconstructor.up{i}");
            if i + 1 == stages {
                h = self.conv(t, &name, h, 1)?;
            } else {
                h = self.conv_act(t, &name, h, 1)?;
                if cfg.skip_connections {
                    h = t.add(h, feats[stages - 2 - i])?;
                }
            }
        }
        if cfg.global_residual {
            h = t.add(h, x)?;
        }
        Ok(DeblurVars {
            deblurred: h,
            e_b,
            e_bs,
            filters,
            disparity,
        })
    }

    /// Reblur a downsampled sharp image with filters derived from `F_deblur`.
    pub fn reblur(&self, t: &mut Tape, filters: Var, sharp_down: Var) -> Result<Var> {
        let cfg = self.cfg;
        if !cfg.use_reblur {
            return Err(Error::Contract("reblur requested with use_reblur = false".into()));
        }
        let h = self.conv_act(t, "reblur_net.conv1", filters, 1)?;
        let f_reblur = self.conv(t, "reblur_net.conv2", h, 1)?;
        t.iac(sharp_down, f_reblur, cfg.n_sets, cfg.k, cfg.lrelu_slope)
    }
}

/// Results of [`Network::deblur_forward`].
#[derive(Clone, Debug)]
pub struct DeblurOutput {
    pub deblurred: Tensor4,
    pub e_bs: Tensor4,
    /// `None` when filter prediction is disabled.
    pub filters: Option<FilterMap>,
    pub disparity: DisparityMap,
}

/// Configuration plus weights, with tape-free forward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub params: Params,
}

impl Network {
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        let params = init_params(&cfg, seed)?;
        Ok(Network { cfg, params })
    }

    fn with_tape<T>(&self, f: impl FnOnce(&mut Tape, &Forward) -> Result<T>) -> Result<T> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params);
        let fw = Forward {
            cfg: &self.cfg,
            p: &bound,
        };
        f(&mut tape, &fw)
    }

    fn zero_disparity(&self, image: &Tensor4) -> Result<DisparityMap> {
        let s = image.shape();
        DisparityMap::new(Tensor4::zeros((s.n, 1, s.h / self.cfg.s, s.w / self.cfg.s)))
    }

    pub fn feature_extract(&self, image: &Tensor4) -> Result<Tensor4> {
        self.with_tape(|t, fw| {
            let x = t.leaf(image.clone());
            let feats = fw.feature_extract(t, x)?;
            Ok(t.value(*feats.last().expect("stages >= 1")).clone())
        })
    }

    /// `F_deblur` and the disparity map (all zeros when the DME is disabled).
    pub fn ifan_forward(&self, image: &Tensor4) -> Result<(FilterMap, DisparityMap)> {
        if !self.cfg.use_filter_prediction {
            return Err(Error::Contract("ifan_forward needs use_filter_prediction".into()));
        }
        let (f, d) = self.with_tape(|t, fw| {
            let x = t.leaf(image.clone());
            let (f, d) = fw.ifan(t, x)?;
            Ok((t.value(f).clone(), d.map(|d| t.value(d).clone())))
        })?;
        let fm = FilterMap::new(f, self.cfg.n_sets, self.cfg.k, self.cfg.c_e)?;
        let d = match d {
            Some(d) => DisparityMap::new(d)?,
            None => self.zero_disparity(image)?,
        };
        Ok((fm, d))
    }

    pub fn deblur_forward(&self, image: &Tensor4) -> Result<DeblurOutput> {
        let (out, e_bs, f, d) = self.with_tape(|t, fw| {
            let x = t.leaf(image.clone());
            let v = fw.deblur(t, x)?;
            Ok((
                t.value(v.deblurred).clone(),
                t.value(v.e_bs).clone(),
                t.value(v.filters).clone(),
                v.disparity.map(|d| t.value(d).clone()),
            ))
        })?;
        let filters = if self.cfg.use_filter_prediction {
            Some(FilterMap::new(f, self.cfg.n_sets, self.cfg.k, self.cfg.c_e)?)
        } else {
            None
        };
        let disparity = match d {
            Some(d) => DisparityMap::new(d)?,
            None => self.zero_disparity(image)?,
        };
        Ok(DeblurOutput {
            deblurred: out,
            e_bs,
            filters,
            disparity,
        })
    }

    pub fn reblur_forward(&self, filters: &FilterMap, sharp_down: &Tensor4) -> Result<Tensor4> {
        self.with_tape(|t, fw| {
            let f = t.leaf(filters.tensor().clone());
            let x = t.leaf(sharp_down.clone());
            let y = fw.reblur(t, f, x)?;
            Ok(t.value(y).clone())
        })
    }
}

/// Text report of the architecture: one row per convolution with its output
/// shape for an `h x w` input, parameter count and multiply-accumulates.
pub fn describe(cfg: &NetworkConfig, h: usize, w: usize) -> Result<String> {
    cfg.validate()?;
    let layers = plan(cfg);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "network: c_e={} N={} k={} s={} blocks={} fp={} dme={} reblur={} skips={} residual={}",
        cfg.c_e,
        cfg.n_sets,
        cfg.k,
        cfg.s,
        cfg.blocks_per_stage,
        cfg.use_filter_prediction,
        cfg.use_dme,
        cfg.use_reblur,
        cfg.skip_connections,
        cfg.global_residual
    );
    let _ = writeln!(out, "input: 3x{h}x{w}");
    let _ = writeln!(
        out,
        "{:<36} {:<16} {:>16} {:>10} {:>14}",
        "layer", "group", "output", "params", "macs"
    );
    let (mut params, mut macs) = (0usize, 0usize);
    for l in &layers {
        let shape = format!("{}x{}x{}", l.cout, h / l.out_div, w / l.out_div);
        let _ = writeln!(
            out,
            "{:<36} {:<16} {:>16} {:>10} {:>14}",
            l.name,
            l.group.as_str(),
            shape,
            l.params(),
            l.macs(h, w)
        );
        params += l.params();
        macs += l.macs(h, w);
    }
    let deploy: usize = layers
        .iter()
        .filter(|l| !l.group.training_only())
        .map(ConvSpec::params)
        .sum();
    let _ = writeln!(out, "parameter tensors: {}", 2 * layers.len());
    let _ = writeln!(out, "total parameters: {params}");
    let _ = writeln!(out, "inference parameters: {deploy}");
    let _ = writeln!(out, "convolution macs: {macs}");
    if cfg.use_filter_prediction {
        let iac = (h / cfg.s) * (w / cfg.s) * cfg.c_e * cfg.n_sets * 2 * cfg.k;
        let _ = writeln!(out, "iac macs: {iac}");
    }
    let _ = writeln!(out, "(macs count multiplies of filter taps; bias and activation excluded)");
    Ok(out)
}

/// Parameter count of the layers that run at inference time.
pub fn inference_param_count(cfg: &NetworkConfig) -> usize {
    plan(cfg)
        .iter()
        .filter(|l| !l.group.training_only())
        .map(ConvSpec::params)
        .sum()
}
