//! Flat `key = value` configuration text.
//!
//! Blank lines and `#` comments are ignored. `preset = toy|paperish` may
//! appear first to pick the base configuration; every later key overrides
//! one field. Unknown keys, repeated keys and unparsable values are errors.

use std::collections::HashSet;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::net::NetworkConfig;
use crate::train::TrainConfig;

/// Every accepted key with a one-line description, in rendering order.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "base configuration: toy | paperish (must come first)"),
    ("c_e", "feature channels at the filtering resolution"),
    ("n_sets", "separable filter sets per pixel (IAC iterations)"),
    ("k", "separable filter length (odd)"),
    ("s", "downsample factor between image and feature grid (power of two)"),
    ("blocks_per_stage", "residual blocks per encoder stage"),
    ("lrelu_slope", "leaky ReLU negative slope"),
    ("use_filter_prediction", "predict per-pixel filters and apply IAC (bool)"),
    ("use_dme", "train the disparity map estimator (bool)"),
    ("use_reblur", "train the reblurring branch (bool)"),
    ("skip_connections", "add extractor features into the reconstructor (bool)"),
    ("global_residual", "add the input image to the output (bool)"),
    ("total_iters", "training iterations"),
    ("lr0", "initial learning rate"),
    ("decay_steps", "comma-separated iterations where the rate is scaled"),
    ("decay_factor", "learning-rate factor applied at each decay step"),
    ("batch_size", "samples per iteration"),
    ("crop_size", "training crop edge (multiple of s)"),
    ("noise_sigma_max", "upper bound of the per-sample noise sigma"),
    ("grayscale_prob", "probability of grayscale conversion"),
    ("scale_min", "lower bound of the random rescale factor"),
    ("scale_max", "upper bound of the random rescale factor"),
    ("clip_norm", "global gradient-norm clip"),
    ("weight_decay", "decoupled weight decay"),
    ("seed", "master seed"),
    ("data_dir", "paired training directory; synthetic data when unset"),
    ("eval_dir", "paired evaluation directory; synthetic data when unset"),
    ("pool_size", "synthetic training images generated up front"),
    ("synth_size", "edge length of synthetic training images"),
    ("r_max", "maximum synthetic blur radius in pixels"),
    ("eval_size", "held-out samples for periodic evaluation"),
    ("eval_every", "iterations between evaluations (0 = only at the end)"),
    ("log_every", "iterations between log lines"),
    ("checkpoint_every", "iterations between checkpoints (0 = only at the end)"),
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
}

fn boolean(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{raw}`"))),
    }
}

fn list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect()
}

/// Set one network field; `Ok(false)` when the key is not a network key.
fn set_network(cfg: &mut NetworkConfig, key: &str, raw: &str) -> Result<bool> {
    match key {
        "c_e" => cfg.c_e = value(key, raw)?,
        "n_sets" => cfg.n_sets = value(key, raw)?,
        "k" => cfg.k = value(key, raw)?,
        "s" => cfg.s = value(key, raw)?,
        "blocks_per_stage" => cfg.blocks_per_stage = value(key, raw)?,
        "lrelu_slope" => cfg.lrelu_slope = value(key, raw)?,
        "use_filter_prediction" => cfg.use_filter_prediction = boolean(key, raw)?,
        "use_dme" => cfg.use_dme = boolean(key, raw)?,
        "use_reblur" => cfg.use_reblur = boolean(key, raw)?,
        "skip_connections" => cfg.skip_connections = boolean(key, raw)?,
        "global_residual" => cfg.global_residual = boolean(key, raw)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_train(cfg: &mut TrainConfig, key: &str, raw: &str) -> Result<bool> {
    if set_network(&mut cfg.net, key, raw)? {
        return Ok(true);
    }
    let path = |raw: &str| (!raw.is_empty()).then(|| PathBuf::from(raw));
    match key {
        "total_iters" => cfg.total_iters = value(key, raw)?,
        "lr0" => cfg.lr0 = value(key, raw)?,
        "decay_steps" => cfg.decay_steps = list(key, raw)?,
        "decay_factor" => cfg.decay_factor = value(key, raw)?,
        "batch_size" => cfg.batch_size = value(key, raw)?,
        "crop_size" => cfg.crop_size = value(key, raw)?,
        "noise_sigma_max" => cfg.noise_sigma_max = value(key, raw)?,
        "grayscale_prob" => cfg.grayscale_prob = value(key, raw)?,
        "scale_min" => cfg.scale_range.0 = value(key, raw)?,
        "scale_max" => cfg.scale_range.1 = value(key, raw)?,
        "clip_norm" => cfg.clip_norm = value(key, raw)?,
        "weight_decay" => cfg.weight_decay = value(key, raw)?,
        "seed" => cfg.seed = value(key, raw)?,
        "data_dir" => cfg.data_dir = path(raw),
        "eval_dir" => cfg.eval_dir = path(raw),
        "pool_size" => cfg.pool_size = value(key, raw)?,
        "synth_size" => cfg.synth_size = value(key, raw)?,
        "r_max" => cfg.r_max = value(key, raw)?,
        "eval_size" => cfg.eval_size = value(key, raw)?,
        "eval_every" => cfg.eval_every = value(key, raw)?,
        "log_every" => cfg.log_every = value(key, raw)?,
        "checkpoint_every" => cfg.checkpoint_every = value(key, raw)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Non-comment lines as (line number, key, value).
fn entries(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if !seen.insert(k) {
            return Err(Error::Config(format!("line {}: `{k}` given twice", i + 1)));
        }
        out.push((i + 1, k, v.trim()));
    }
    Ok(out)
}

pub fn parse_network(text: &str) -> Result<NetworkConfig> {
    let mut cfg = NetworkConfig::default();
    for (line, k, v) in entries(text)? {
        if !set_network(&mut cfg, k, v)? {
            return Err(Error::Config(format!("line {line}: unknown network key `{k}`")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_train(text: &str) -> Result<TrainConfig> {
    let entries = entries(text)?;
    let mut cfg = TrainConfig::toy();
    for (idx, (line, k, v)) in entries.into_iter().enumerate() {
        if k == "preset" {
            if idx != 0 {
                return Err(Error::Config(format!("line {line}: `preset` must be the first key")));
            }
            cfg = TrainConfig::preset(v)?;
        } else if !set_train(&mut cfg, k, v)? {
            return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// (key, rendered value) for every network field, in [`KEYS`] order.
pub fn network_fields(cfg: &NetworkConfig) -> Vec<(&'static str, String)> {
    vec![
        ("c_e", cfg.c_e.to_string()),
        ("n_sets", cfg.n_sets.to_string()),
        ("k", cfg.k.to_string()),
        ("s", cfg.s.to_string()),
        ("blocks_per_stage", cfg.blocks_per_stage.to_string()),
        ("lrelu_slope", cfg.lrelu_slope.to_string()),
        ("use_filter_prediction", cfg.use_filter_prediction.to_string()),
        ("use_dme", cfg.use_dme.to_string()),
        ("use_reblur", cfg.use_reblur.to_string()),
        ("skip_connections", cfg.skip_connections.to_string()),
        ("global_residual", cfg.global_residual.to_string()),
    ]
}

fn render(fields: &[(&'static str, String)]) -> String {
    fields.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn render_network(cfg: &NetworkConfig) -> String {
    render(&network_fields(cfg))
}

/// Text that [`parse_train`] maps back to `cfg`.
pub fn render_train(cfg: &TrainConfig) -> String {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    let steps: Vec<String> = cfg.decay_steps.iter().map(|s| s.to_string()).collect();
    let mut fields = network_fields(&cfg.net);
    fields.extend([
        ("total_iters", cfg.total_iters.to_string()),
        ("lr0", cfg.lr0.to_string()),
        ("decay_steps", steps.join(",")),
        ("decay_factor", cfg.decay_factor.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("crop_size", cfg.crop_size.to_string()),
        ("noise_sigma_max", cfg.noise_sigma_max.to_string()),
        ("grayscale_prob", cfg.grayscale_prob.to_string()),
        ("scale_min", cfg.scale_range.0.to_string()),
        ("scale_max", cfg.scale_range.1.to_string()),
        ("clip_norm", cfg.clip_norm.to_string()),
        ("weight_decay", cfg.weight_decay.to_string()),
        ("seed", cfg.seed.to_string()),
        ("data_dir", path(&cfg.data_dir)),
        ("eval_dir", path(&cfg.eval_dir)),
        ("pool_size", cfg.pool_size.to_string()),
        ("synth_size", cfg.synth_size.to_string()),
        ("r_max", cfg.r_max.to_string()),
        ("eval_size", cfg.eval_size.to_string()),
        ("eval_every", cfg.eval_every.to_string()),
        ("log_every", cfg.log_every.to_string()),
        ("checkpoint_every", cfg.checkpoint_every.to_string()),
    ]);
    render(&fields)
}

/// First network field whose value differs: (key, value in `a`, value in `b`).
pub fn first_difference(a: &NetworkConfig, b: &NetworkConfig) -> Option<(&'static str, String, String)> {
    network_fields(a)
        .into_iter()
        .zip(network_fields(b))
        .find(|((_, x), (_, y))| x != y)
        .map(|((k, x), (_, y))| (k, x, y))
}

/// Key documentation for `--help` output.
pub fn key_help() -> String {
    KEYS.iter().map(|(k, d)| format!("  {k:<22} {d}\n")).collect()
}
