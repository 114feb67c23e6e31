//! Flat `key = value` training configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::blocks::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_start: Scalar,
    pub lr_end: Scalar,
    pub adam_beta1: Scalar,
    pub adam_beta2: Scalar,
    pub adam_eps: Scalar,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds initialization, shuffling and flips.
    pub seed: u64,
    /// Input size, widths and ablation flags live here.
    pub net: NetConfig,
    /// Square dilation radius applied to boundary targets.
    pub boundary_dilation_radius: usize,
    /// Random horizontal flips.
    pub hflip: bool,
    /// Scene difficulty when training on generated data.
    pub difficulty: Scalar,
    /// Dataset seed when training on generated data.
    pub data_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_start: 1e-4,
            lr_end: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 50,
            batch_size: 4,
            seed: 0,
            net: NetConfig::desk(),
            boundary_dilation_radius: 1,
            hflip: true,
            difficulty: 0.6,
            data_seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

/// `HxW`, or a single number for a square.
pub fn parse_size(value: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size {value:?} is not of the form HxW"));
    match value.split_once(['x', 'X']) {
        Some((h, w)) => Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?)),
        None => {
            let s = value.trim().parse().map_err(|_| bad())?;
            Ok((s, s))
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_end >= 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Config(format!("difficulty must lie in [0, 1], got {}", self.difficulty)));
        }
        Ok(())
    }

    /// Parses config text over the defaults. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let net = &mut self.net;
        match key {
            "lr_start" => self.lr_start = parse(key, value)?,
            "lr_end" => self.lr_end = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "boundary_dilation_radius" => self.boundary_dilation_radius = parse(key, value)?,
            "hflip" => self.hflip = parse_bool(key, value)?,
            "difficulty" => self.difficulty = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "input_size" => net.input_size = parse_size(value)?,
            "channels" => net.channels = parse(key, value)?,
            "patch_grid" => net.patch_grid = parse(key, value)?,
            "ref_grid" => net.ref_grid = parse(key, value)?,
            "offset_scale" => net.offset_scale = parse(key, value)?,
            "heads" => net.heads = parse(key, value)?,
            "offset_hidden" => net.offset_hidden = parse(key, value)?,
            "encoder_channels" => {
                let widths: Vec<usize> = value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?;
                net.encoder_channels = widths
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected four comma-separated widths")))?;
            }
            "normalized_global_pooling" => net.normalized_global_pooling = parse_bool(key, value)?,
            "mffm" => net.ablation.mffm = parse_bool(key, value)?,
            "dps" => net.ablation.dps = parse_bool(key, value)?,
            "boundary_decoder" => net.ablation.boundary_decoder = parse_bool(key, value)?,
            "bfm" => net.ablation.bfm = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Canonical text listing every key. `parse(to_text())` reproduces `self`
    /// exactly since floats print in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let n = &self.net;
        let e = n.encoder_channels;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").unwrap();
        kv("lr_start", &self.lr_start);
        kv("lr_end", &self.lr_end);
        kv("adam_beta1", &self.adam_beta1);
        kv("adam_beta2", &self.adam_beta2);
        kv("adam_eps", &self.adam_eps);
        kv("epochs", &self.epochs);
        kv("batch_size", &self.batch_size);
        kv("seed", &self.seed);
        kv("boundary_dilation_radius", &self.boundary_dilation_radius);
        kv("hflip", &self.hflip);
        kv("difficulty", &self.difficulty);
        kv("data_seed", &self.data_seed);
        kv("input_size", &format!("{}x{}", n.input_size.0, n.input_size.1));
        kv("channels", &n.channels);
        kv("patch_grid", &n.patch_grid);
        kv("ref_grid", &n.ref_grid);
        kv("offset_scale", &n.offset_scale);
        kv("heads", &n.heads);
        kv("offset_hidden", &n.offset_hidden);
        kv("encoder_channels", &format!("{},{},{},{}", e[0], e[1], e[2], e[3]));
        kv("normalized_global_pooling", &n.normalized_global_pooling);
        kv("mffm", &n.ablation.mffm);
        kv("dps", &n.ablation.dps);
        kv("boundary_decoder", &n.ablation.boundary_decoder);
        kv("bfm", &n.ablation.bfm);
        s
    }
}
