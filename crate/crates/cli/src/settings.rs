//! Resolved settings, one struct per subcommand. Field names match the
//! flags in [`crate::args`]; defaults match their help text.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use slotaug::augment::AugConfig;
use slotaug::model::ModelConfig;
use slotaug::sprites::SpriteConfig;
use slotaug::training::{TrainConfig, Variant};

use crate::error::{CliError, Result};

pub fn required<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("--{} is required", name.replace('_', "-"))))
}

/// Parse `x,y`.
pub fn parse_point(s: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("expected x,y but got {s:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let x = parts[0].parse().map_err(|_| bad())?;
    let y = parts[1].parse().map_err(|_| bad())?;
    Ok([x, y])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenData {
    pub out: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub template_size: usize,
    pub crop_size: usize,
}

impl Default for GenData {
    fn default() -> Self {
        let s = SpriteConfig::default();
        Self {
            out: None,
            count: 5000,
            seed: 0,
            min_objects: s.min_objects,
            max_objects: s.max_objects,
            template_size: s.template_size,
            crop_size: s.crop_size,
        }
    }
}

impl GenData {
    pub fn sprite_config(&self) -> SpriteConfig {
        let base = SpriteConfig::default();
        SpriteConfig {
            template_size: self.template_size,
            crop_size: self.crop_size,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            margin: (self.template_size.saturating_sub(self.crop_size)) / 2,
            ..base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Train {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub max_scenes: usize,
    pub holdout: usize,
    pub variant: Variant,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub decay_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub image_size: usize,
    pub num_slots: usize,
    pub slot_dim: usize,
    pub iters: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
}

impl Default for Train {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        Self {
            data: None,
            out: None,
            max_scenes: 0,
            holdout: 0,
            variant: Variant::V3,
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup_steps: t.warmup_steps,
            decay_steps: t.decay_steps,
            weight_decay: t.weight_decay,
            seed: t.seed,
            deterministic: t.deterministic,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
            image_size: m.image_size,
            num_slots: m.num_slots,
            slot_dim: m.slot_dim,
            iters: m.iters,
            hidden: m.enc_hidden,
            mlp_hidden: m.mlp_hidden,
        }
    }
}

impl Train {
    /// Training config for canvases of side `template_size` cropped to `crop_size`.
    pub fn train_config(&self, template_size: usize, crop_size: usize) -> TrainConfig {
        let model = ModelConfig {
            image_size: self.image_size,
            num_slots: self.num_slots,
            slot_dim: self.slot_dim,
            iters: self.iters,
            enc_hidden: self.hidden,
            dec_hidden: self.hidden,
            prop_hidden: self.hidden,
            mlp_hidden: self.mlp_hidden,
            ..ModelConfig::default()
        };
        let aug = AugConfig { template_size, crop_size, image_size: self.image_size, ..AugConfig::default() };
        TrainConfig {
            model,
            aug,
            steps: self.steps,
            warmup_steps: self.warmup_steps,
            decay_steps: self.decay_steps,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed: self.seed,
            deterministic: self.deterministic,
            log_every: self.log_every,
            checkpoint_every: self.checkpoint_every,
            ..TrainConfig::default()
        }
        .with_variant(self.variant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Eval {
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub offset: usize,
    pub count: usize,
    pub noise_seed: u64,
    pub assert: bool,
    pub min_fg_ari: f64,
}

impl Default for Eval {
    fn default() -> Self {
        Self { ckpt: None, data: None, offset: 0, count: 0, noise_seed: 0, assert: false, min_fg_ari: 0.7 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Manipulate {
    pub ckpt: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub target: Option<String>,
    pub inst: Option<String>,
    pub out: Option<PathBuf>,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Durability {
    pub ckpt: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub offset: usize,
    pub count: usize,
    pub mode: String,
    pub rounds: usize,
    pub noise_seed: u64,
    pub assert: bool,
}

impl Default for Durability {
    fn default() -> Self {
        Self {
            ckpt: None,
            baseline: None,
            data: None,
            offset: 0,
            count: 20,
            mode: "single".into(),
            rounds: 0,
            noise_seed: 0,
            assert: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Probe {
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub offset: usize,
    pub count: usize,
    pub property: String,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub train_frac: f64,
    pub seed: u64,
    pub noise_seed: u64,
    pub csv: Option<PathBuf>,
    pub assert: bool,
}

impl Default for Probe {
    fn default() -> Self {
        let p = slotaug::eval::ProbeConfig::default();
        Self {
            ckpt: None,
            data: None,
            offset: 0,
            count: 0,
            property: "all".into(),
            hidden: p.hidden,
            epochs: p.epochs,
            lr: p.lr,
            train_frac: p.train_frac,
            seed: p.seed,
            noise_seed: 0,
            csv: None,
            assert: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Retrieve {
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub offset: usize,
    pub count: usize,
    pub candidates: Vec<PathBuf>,
    pub query: Option<PathBuf>,
    pub query_index: Option<usize>,
    pub target: Option<String>,
    pub metric: String,
    pub top: usize,
    pub noise_seed: u64,
}

impl Default for Retrieve {
    fn default() -> Self {
        Self {
            ckpt: None,
            data: None,
            offset: 0,
            count: 0,
            candidates: Vec::new(),
            query: None,
            query_index: None,
            target: None,
            metric: "pixel-mse".into(),
            top: 10,
            noise_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Compose {
    pub ckpt: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Verify {
    pub fixture: Option<String>,
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub index: usize,
    pub mode: String,
    pub noise_seed: u64,
    pub assert: bool,
}

impl Default for Verify {
    fn default() -> Self {
        Self { fixture: None, ckpt: None, data: None, index: 0, mode: "hard".into(), noise_seed: 0, assert: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Export {
    pub data: Option<PathBuf>,
    pub index: usize,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub image_size: usize,
    pub noise_seed: u64,
}

impl Default for Export {
    fn default() -> Self {
        Self { data: None, index: 0, out: None, ckpt: None, image_size: 64, noise_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Serve {
    pub ckpt: Option<PathBuf>,
    pub addr: String,
    pub noise_seed: u64,
}

impl Default for Serve {
    fn default() -> Self {
        Self { ckpt: None, addr: "127.0.0.1:8080".into(), noise_seed: 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points() {
        assert_eq!(parse_point("0.6, 0.4").unwrap(), [0.6, 0.4]);
        assert!(parse_point("0.6").is_err());
        assert!(parse_point("a,b").is_err());
    }

    #[test]
    fn train_settings_build_a_valid_config() {
        let cfg = Train::default().train_config(80, 64);
        cfg.validate().unwrap();
        assert_eq!(cfg, TrainConfig::default());
        let v1 = Train { variant: Variant::V1, ..Train::default() }.train_config(80, 64);
        assert!(!v1.aim && v1.w_cycle == 0.0);
    }
}
