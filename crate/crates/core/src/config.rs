// Copyright 2026 The rgbd-distill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Training configuration and its `key = value` text format.

use crate::error::{Error, Result};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Encoder/decoder architecture preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    /// Four 3×3 conv stages, 64 output channels, output stride 8.
    Tiny,
    /// Dilated ResNet-50 (output stride 8) with a 1×1 2048→1024 projection
    /// and a DeepLabV3+ decoder.
    ResNet50Dilated,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::Tiny => "tiny",
            Backbone::ResNet50Dilated => "resnet50-dilated",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Backbone::Tiny),
            "resnet50-dilated" => Ok(Backbone::ResNet50Dilated),
            other => Err(Error::config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// How raw depth is mapped to `[0, 1]` at ingestion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthNorm {
    /// Divide by the dataset-wide divisor declared in the manifest header.
    Divisor,
    /// Min-max normalise each image independently.
    PerImage,
}

impl fmt::Display for DepthNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthNorm::Divisor => "divisor",
            DepthNorm::PerImage => "per_image",
        })
    }
}

impl FromStr for DepthNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divisor" => Ok(DepthNorm::Divisor),
            "per_image" => Ok(DepthNorm::PerImage),
            other => Err(Error::config(format!("unknown depth_norm `{other}`"))),
        }
    }
}

/// Augmentation magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct AugConfig {
    pub enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip: bool,
    /// Brightness/contrast/saturation factors are drawn from `1 ± jitter`.
    pub jitter: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scale_min: 0.75,
            scale_max: 1.25,
            flip: true,
            jitter: 0.2,
        }
    }
}

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_target: f64,
    pub warmup_epochs: usize,
    pub poly_power: f64,
    pub tau: f64,
    pub mixup_lambda: f64,
    pub use_orth: bool,
    pub use_con: bool,
    pub use_aux: bool,
    pub use_mixup: bool,
    pub use_decoupled_aug: bool,
    pub seed: u64,
    pub backbone: Backbone,
    pub ignore_index: u8,

    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Include the positive pair in the contrastive denominator (canonical
    /// InfoNCE). Off by default.
    pub con_include_positive: bool,
    pub kd_alpha: f64,

    pub aug: AugConfig,
    pub train_height: usize,
    pub train_width: usize,
    pub depth_norm: DepthNorm,
    /// Keep batch-norm statistics fixed during training.
    pub freeze_bn_stats: bool,

    pub checkpoint_every: usize,
    pub eval_every: usize,
    pub train_manifest: String,
    pub eval_manifest: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            epochs: 140,
            batch_size: 8,
            lr_start: 1e-8,
            lr_target: 1e-4,
            warmup_epochs: 10,
            poly_power: 0.9,
            tau: 0.07,
            mixup_lambda: 0.35,
            use_orth: true,
            use_con: true,
            use_aux: true,
            use_mixup: true,
            use_decoupled_aug: true,
            seed: 0,
            backbone: Backbone::Tiny,
            ignore_index: crate::types::IGNORE_LABEL,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            con_include_positive: false,
            kd_alpha: 0.5,
            aug: AugConfig::default(),
            train_height: 64,
            train_width: 64,
            depth_norm: DepthNorm::Divisor,
            freeze_bn_stats: false,
            checkpoint_every: 10,
            eval_every: 1,
            train_manifest: String::new(),
            eval_manifest: String::new(),
        }
    }
}

/// All addressable keys, in file order.
pub const KEYS: &[&str] = &[
    "num_classes",
    "epochs",
    "batch_size",
    "lr_start",
    "lr_target",
    "warmup_epochs",
    "poly_power",
    "tau",
    "mixup_lambda",
    "use_orth",
    "use_con",
    "use_aux",
    "use_mixup",
    "use_decoupled_aug",
    "seed",
    "backbone",
    "ignore_index",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "con_include_positive",
    "kd_alpha",
    "aug.enabled",
    "aug.scale_min",
    "aug.scale_max",
    "aug.flip",
    "aug.jitter",
    "train_height",
    "train_width",
    "depth_norm",
    "freeze_bn_stats",
    "checkpoint_every",
    "eval_every",
    "train_manifest",
    "eval_manifest",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    /// Sets one field from its textual form. `aug.decoupled` is accepted as an
    /// alias of `use_decoupled_aug`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "num_classes" => self.num_classes = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr_start" => self.lr_start = parse(key, v)?,
            "lr_target" => self.lr_target = parse(key, v)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, v)?,
            "poly_power" => self.poly_power = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "mixup_lambda" => self.mixup_lambda = parse(key, v)?,
            "use_orth" => self.use_orth = parse_bool(key, v)?,
            "use_con" => self.use_con = parse_bool(key, v)?,
            "use_aux" => self.use_aux = parse_bool(key, v)?,
            "use_mixup" => self.use_mixup = parse_bool(key, v)?,
            "use_decoupled_aug" | "aug.decoupled" => self.use_decoupled_aug = parse_bool(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "backbone" => self.backbone = v.parse()?,
            "ignore_index" => self.ignore_index = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "con_include_positive" => self.con_include_positive = parse_bool(key, v)?,
            "kd_alpha" => self.kd_alpha = parse(key, v)?,
            "aug.enabled" => self.aug.enabled = parse_bool(key, v)?,
            "aug.scale_min" => self.aug.scale_min = parse(key, v)?,
            "aug.scale_max" => self.aug.scale_max = parse(key, v)?,
            "aug.flip" => self.aug.flip = parse_bool(key, v)?,
            "aug.jitter" => self.aug.jitter = parse(key, v)?,
            "train_height" => self.train_height = parse(key, v)?,
            "train_width" => self.train_width = parse(key, v)?,
            "depth_norm" => self.depth_norm = v.parse()?,
            "freeze_bn_stats" => self.freeze_bn_stats = parse_bool(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "train_manifest" => self.train_manifest = v.to_string(),
            "eval_manifest" => self.eval_manifest = v.to_string(),
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Textual value of a key, in a form [`TrainConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "num_classes" => self.num_classes.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_start" => format!("{:e}", self.lr_start),
            "lr_target" => format!("{:e}", self.lr_target),
            "warmup_epochs" => self.warmup_epochs.to_string(),
            "poly_power" => self.poly_power.to_string(),
            "tau" => self.tau.to_string(),
            "mixup_lambda" => self.mixup_lambda.to_string(),
            "use_orth" => self.use_orth.to_string(),
            "use_con" => self.use_con.to_string(),
            "use_aux" => self.use_aux.to_string(),
            "use_mixup" => self.use_mixup.to_string(),
            "use_decoupled_aug" | "aug.decoupled" => self.use_decoupled_aug.to_string(),
            "seed" => self.seed.to_string(),
            "backbone" => self.backbone.to_string(),
            "ignore_index" => self.ignore_index.to_string(),
            "weight_decay" => format!("{:e}", self.weight_decay),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => format!("{:e}", self.adam_eps),
            "con_include_positive" => self.con_include_positive.to_string(),
            "kd_alpha" => self.kd_alpha.to_string(),
            "aug.enabled" => self.aug.enabled.to_string(),
            "aug.scale_min" => self.aug.scale_min.to_string(),
            "aug.scale_max" => self.aug.scale_max.to_string(),
            "aug.flip" => self.aug.flip.to_string(),
            "aug.jitter" => self.aug.jitter.to_string(),
            "train_height" => self.train_height.to_string(),
            "train_width" => self.train_width.to_string(),
            "depth_norm" => self.depth_norm.to_string(),
            "freeze_bn_stats" => self.freeze_bn_stats.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "train_manifest" => self.train_manifest.clone(),
            "eval_manifest" => self.eval_manifest.clone(),
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        })
    }

    /// Parses the `key = value` format. Blank lines and `#` comments are
    /// skipped; keys not mentioned keep their defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
        Self::parse_str(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.get(key).expect("listed key");
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// Returns the config unchanged if every bound holds, otherwise the first
    /// violated one.
    pub fn validate(self) -> Result<Self> {
        let fail = |msg: &str| Err(Error::config(msg.to_string()));
        if !(0.0..=1.0).contains(&self.mixup_lambda) {
            return fail("mixup_lambda out of range");
        }
        if !(self.tau > 0.0) {
            return fail("tau must be positive");
        }
        if self.warmup_epochs > self.epochs {
            return fail("warmup_epochs exceeds epochs");
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2");
        }
        if self.num_classes > self.ignore_index as usize {
            return fail("ignore_index collides with a class id");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.lr_start >= 0.0 && self.lr_target >= 0.0) {
            return fail("learning rates must be non-negative");
        }
        if !(self.poly_power > 0.0) {
            return fail("poly_power must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.kd_alpha) {
            return fail("kd_alpha out of range");
        }
        if !(self.aug.scale_min > 0.0 && self.aug.scale_min <= self.aug.scale_max) {
            return fail("aug scale range is empty or non-positive");
        }
        if !(0.0..1.0).contains(&self.aug.jitter) {
            return fail("aug.jitter must lie in [0, 1)");
        }
        if self.train_height == 0 || self.train_width == 0 {
            return fail("training resolution must be positive");
        }
        let stride = crate::model::Preset::for_backbone(self.backbone).stride;
        if self.train_height % stride != 0 || self.train_width % stride != 0 {
            return Err(Error::config(format!(
                "training resolution must be a multiple of the backbone stride {stride}"
            )));
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = TrainConfig::default().validate().unwrap();
        assert_eq!(cfg.tau, 0.07);
        assert_eq!(cfg.mixup_lambda, 0.35);
        assert_eq!(cfg.epochs, 140);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.lr_start, 1e-8);
        assert_eq!(cfg.lr_target, 1e-4);
        assert_eq!(cfg.warmup_epochs, 10);
        assert_eq!(cfg.poly_power, 0.9);
    }

    #[test]
    fn lambda_out_of_range() {
        let cfg = TrainConfig { mixup_lambda: 1.5, ..Default::default() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("mixup_lambda out of range"), "{err}");
    }

    #[test]
    fn zero_temperature() {
        let cfg = TrainConfig { tau: 0.0, ..Default::default() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("tau must be positive"), "{err}");
    }

    #[test]
    fn warmup_longer_than_training() {
        let cfg = TrainConfig { epochs: 5, warmup_epochs: 6, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn text_round_trip_covers_every_key() {
        let mut cfg = TrainConfig::default();
        cfg.use_con = false;
        cfg.backbone = Backbone::ResNet50Dilated;
        cfg.lr_target = 3e-4;
        cfg.aug.jitter = 0.1;
        cfg.train_manifest = "data/train.jsonl".into();
        let back = TrainConfig::parse_str(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        for key in KEYS {
            let mut probe = TrainConfig::default();
            probe.set(key, &cfg.get(key).unwrap()).unwrap();
        }
    }

    #[test]
    fn comments_blank_lines_and_alias() {
        let cfg = TrainConfig::parse_str(
            "# ablation\n\nuse_orth = false  # w/o orthogonality\naug.decoupled = off\n",
        )
        .unwrap();
        assert!(!cfg.use_orth);
        assert!(!cfg.use_decoupled_aug);
    }

    #[test]
    fn unknown_key_and_bad_line() {
        assert!(TrainConfig::parse_str("nonsense = 1").is_err());
        assert!(TrainConfig::parse_str("epochs 3").is_err());
        let mut cfg = TrainConfig::default();
        assert!(cfg.apply_overrides(&["use_con=maybe"]).is_err());
        cfg.apply_overrides(&["use_con=false", "epochs=3"]).unwrap();
        assert!(!cfg.use_con);
        assert_eq!(cfg.epochs, 3);
    }
}
