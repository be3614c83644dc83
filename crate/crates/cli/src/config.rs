//! Run configuration: presets plus flat `key = value` files.
//!
//! Lines are `key = value`; `#` starts a comment. Every key below is
//! accepted, anything else is an error.
//!
//! | key | meaning |
//! |---|---|
//! | `data_dir` | dataset root (`train/`, `val/`); empty means `<out-dir>/data` |
//! | `train_scenes`, `val_scenes` | split sizes |
//! | `data_seed` | seed base of the training split; validation uses `data_seed + 1_000_000` |
//! | `sdf_samples` | SDF samples per scene |
//! | `sdf_queries` | SDF samples drawn per training sample and step (0 means all) |
//! | `image_size`, `patch_size` | input resolution and patch size |
//! | `dim`, `enc_depth`, `enc_heads`, `dec_depth`, `dec_heads`, `mlp_ratio` | transformer sizes |
//! | `feat_channels`, `sdf_hidden`, `head_hidden`, `fourier_bands` | head sizes |
//! | `model_seed` | weight initialization seed |
//! | `steps`, `batch_size`, `lr`, `warmup_steps`, `weight_decay`, `beta1`, `beta2` | optimization |
//! | `seed` | sampling seed for batches and masks |
//! | `checkpoint_every` | also save `ckpt_<step>.bin` every this many steps (0 disables) |
//! | `mask_mode` | `regional` or `global` |
//! | `rate_hand`, `rate_object`, `rate_background` | regional mask ratios |
//! | `global_rate` | mask ratio of the global mode |
//! | `skeleton_proportion` | probability of skeleton-guided hand masking |
//! | `skeleton_ramp` | `true` ramps the proportion linearly from 0 to 1 over training |
//! | `dilation` | keypoint patch dilation radius |
//! | `lambda_2d`, `lambda_3d`, `lambda_h`, `lambda_o` | loss weights |
//! | `eval_masking` | `train` evaluates under the training mask rule, `none` keeps every patch |
//! | `ablation_steps` | training steps per ablation row |

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use maskhoi_core::masking::{MaskConfig, MaskMode};
use maskhoi_core::scene::SceneConfig;
use maskhoi_model::losses::Lambdas;
use maskhoi_model::network::ModelConfig;
use maskhoi_model::optim::AdamW;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => bail!("unknown preset `{s}` (expected desk or paper)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMasking {
    Train,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub data_seed: u64,
    pub sdf_samples: usize,
    pub sdf_queries: usize,
    pub model: ModelConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub optimizer: AdamW,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub mask: MaskConfig,
    pub skeleton_ramp: bool,
    pub lambdas: Lambdas,
    pub eval_masking: EvalMasking,
    pub ablation_steps: u64,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let desk = Self {
            data_dir: None,
            train_scenes: 256,
            val_scenes: 32,
            data_seed: 1000,
            sdf_samples: 256,
            sdf_queries: 128,
            model: ModelConfig::desk(),
            steps: 2000,
            batch_size: 16,
            lr: 5e-4,
            warmup_steps: 100,
            optimizer: AdamW::default(),
            seed: 0,
            checkpoint_every: 0,
            mask: MaskConfig::default(),
            skeleton_ramp: false,
            lambdas: Lambdas::default(),
            eval_masking: EvalMasking::Train,
            ablation_steps: 400,
        };
        match p {
            Preset::Desk => desk,
            Preset::Paper => Self {
                model: ModelConfig::paper(),
                steps: 50_000,
                batch_size: 22,
                lr: 5e-5,
                warmup_steps: 1000,
                ablation_steps: 5000,
                ..desk
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mask.validate()?;
        if self.train_scenes == 0 || self.val_scenes == 0 {
            bail!("train_scenes and val_scenes must be positive");
        }
        if self.sdf_samples == 0 || self.sdf_queries > self.sdf_samples {
            bail!("sdf_queries ({}) must not exceed sdf_samples ({})", self.sdf_queries, self.sdf_samples);
        }
        if self.steps == 0 || self.batch_size == 0 {
            bail!("steps and batch_size must be positive");
        }
        if !(self.lr >= 0.0) || !(self.optimizer.weight_decay >= 0.0) {
            bail!("lr and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.optimizer.beta1) || !(0.0..1.0).contains(&self.optimizer.beta2) {
            bail!("beta1 and beta2 must lie in [0, 1)");
        }
        for l in [self.lambdas.l2d, self.lambdas.l3d, self.lambdas.lh, self.lambdas.lo] {
            if !(l >= 0.0) {
                bail!("loss weights must be non-negative");
            }
        }
        Ok(())
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig { image_size: self.model.image_size, sdf_samples: self.sdf_samples, ..SceneConfig::default() }
    }

    pub fn val_seed_base(&self) -> u64 {
        self.data_seed + 1_000_000
    }

    pub fn data_root(&self, out_dir: &Path) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| out_dir.join("data"))
    }

    /// Skeleton proportion at `step`, ramped when requested.
    pub fn skeleton_proportion_at(&self, step: u64, total: u64) -> f64 {
        if self.skeleton_ramp {
            if total <= 1 {
                1.0
            } else {
                (step as f64 / (total - 1) as f64).min(1.0)
            }
        } else {
            self.mask.skeleton_proportion
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| anyhow!("invalid value `{v}` for `{key}`"))
        }
        let m = &mut self.model;
        match key {
            "data_dir" => self.data_dir = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "train_scenes" => self.train_scenes = num(key, value)?,
            "val_scenes" => self.val_scenes = num(key, value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "sdf_samples" => self.sdf_samples = num(key, value)?,
            "sdf_queries" => self.sdf_queries = num(key, value)?,
            "image_size" => m.image_size = num(key, value)?,
            "patch_size" => m.patch_size = num(key, value)?,
            "dim" => m.dim = num(key, value)?,
            "enc_depth" => m.enc_depth = num(key, value)?,
            "enc_heads" => m.enc_heads = num(key, value)?,
            "dec_depth" => m.dec_depth = num(key, value)?,
            "dec_heads" => m.dec_heads = num(key, value)?,
            "mlp_ratio" => m.mlp_ratio = num(key, value)?,
            "feat_channels" => m.feat_channels = num(key, value)?,
            "sdf_hidden" => m.sdf_hidden = num(key, value)?,
            "head_hidden" => m.head_hidden = num(key, value)?,
            "fourier_bands" => m.fourier_bands = num(key, value)?,
            "model_seed" => m.seed = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "weight_decay" => self.optimizer.weight_decay = num(key, value)?,
            "beta1" => self.optimizer.beta1 = num(key, value)?,
            "beta2" => self.optimizer.beta2 = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "mask_mode" => {
                self.mask.mode = match value {
                    "regional" => MaskMode::Regional,
                    "global" => MaskMode::GlobalRandom,
                    _ => bail!("invalid value `{value}` for `mask_mode` (expected regional or global)"),
                }
            }
            "rate_hand" => self.mask.rates.hand = num(key, value)?,
            "rate_object" => self.mask.rates.object = num(key, value)?,
            "rate_background" => self.mask.rates.background = num(key, value)?,
            "global_rate" => self.mask.global_rate = num(key, value)?,
            "skeleton_proportion" => self.mask.skeleton_proportion = num(key, value)?,
            "skeleton_ramp" => self.skeleton_ramp = num(key, value)?,
            "dilation" => self.mask.dilation = num(key, value)?,
            "lambda_2d" => self.lambdas.l2d = num(key, value)?,
            "lambda_3d" => self.lambdas.l3d = num(key, value)?,
            "lambda_h" => self.lambdas.lh = num(key, value)?,
            "lambda_o" => self.lambdas.lo = num(key, value)?,
            "eval_masking" => {
                self.eval_masking = match value {
                    "train" => EvalMasking::Train,
                    "none" => EvalMasking::None,
                    _ => bail!("invalid value `{value}` for `eval_masking` (expected train or none)"),
                }
            }
            "ablation_steps" => self.ablation_steps = num(key, value)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::preset(preset);
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            cfg.apply_text(&text).with_context(|| format!("config {}", p.display()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its current value, parseable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let r = &self.mask.rates;
        let mode = match self.mask.mode {
            MaskMode::Regional => "regional",
            MaskMode::GlobalRandom => "global",
        };
        let eval = match self.eval_masking {
            EvalMasking::Train => "train",
            EvalMasking::None => "none",
        };
        let data_dir = self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let rows: Vec<(&str, String)> = vec![
            ("data_dir", data_dir),
            ("train_scenes", self.train_scenes.to_string()),
            ("val_scenes", self.val_scenes.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("sdf_samples", self.sdf_samples.to_string()),
            ("sdf_queries", self.sdf_queries.to_string()),
            ("image_size", m.image_size.to_string()),
            ("patch_size", m.patch_size.to_string()),
            ("dim", m.dim.to_string()),
            ("enc_depth", m.enc_depth.to_string()),
            ("enc_heads", m.enc_heads.to_string()),
            ("dec_depth", m.dec_depth.to_string()),
            ("dec_heads", m.dec_heads.to_string()),
            ("mlp_ratio", m.mlp_ratio.to_string()),
            ("feat_channels", m.feat_channels.to_string()),
            ("sdf_hidden", m.sdf_hidden.to_string()),
            ("head_hidden", m.head_hidden.to_string()),
            ("fourier_bands", m.fourier_bands.to_string()),
            ("model_seed", m.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("weight_decay", self.optimizer.weight_decay.to_string()),
            ("beta1", self.optimizer.beta1.to_string()),
            ("beta2", self.optimizer.beta2.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("mask_mode", mode.to_string()),
            ("rate_hand", r.hand.to_string()),
            ("rate_object", r.object.to_string()),
            ("rate_background", r.background.to_string()),
            ("global_rate", self.mask.global_rate.to_string()),
            ("skeleton_proportion", self.mask.skeleton_proportion.to_string()),
            ("skeleton_ramp", self.skeleton_ramp.to_string()),
            ("dilation", self.mask.dilation.to_string()),
            ("lambda_2d", self.lambdas.l2d.to_string()),
            ("lambda_3d", self.lambdas.l3d.to_string()),
            ("lambda_h", self.lambdas.lh.to_string()),
            ("lambda_o", self.lambdas.lo.to_string()),
            ("eval_masking", eval.to_string()),
            ("ablation_steps", self.ablation_steps.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.apply_text("steps = 7\n# note\nmask_mode = global  # inline\nlambda_o=0.5\n").unwrap();
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.mask.mode, MaskMode::GlobalRandom);
        let mut back = RunConfig::preset(Preset::Paper);
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        let mut cfg = RunConfig::preset(Preset::Desk);
        let e = cfg.apply_text("stepz = 3").unwrap_err();
        assert!(format!("{e:#}").contains("unknown config key `stepz`"));
        assert!(cfg.apply_text("steps 3").is_err());
        assert!(cfg.apply_text("steps = many").is_err());
        assert!(cfg.apply_text("mask_mode = sometimes").is_err());
    }

    #[test]
    fn presets() {
        let p = RunConfig::preset(Preset::Paper);
        assert_eq!((p.model.image_size, p.model.patch_size, p.model.dim), (224, 16, 768));
        assert_eq!((p.batch_size, p.steps, p.warmup_steps), (22, 50_000, 1000));
        assert_eq!(p.lr, 5e-5);
        p.validate().unwrap();
        let d = RunConfig::preset(Preset::Desk);
        assert_eq!((d.steps, d.batch_size, d.lr, d.warmup_steps), (2000, 16, 5e-4, 100));
        d.validate().unwrap();
    }

    #[test]
    fn ramp_reaches_one() {
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.skeleton_ramp = true;
        assert_eq!(cfg.skeleton_proportion_at(0, 11), 0.0);
        assert_eq!(cfg.skeleton_proportion_at(5, 11), 0.5);
        assert_eq!(cfg.skeleton_proportion_at(10, 11), 1.0);
    }
}
