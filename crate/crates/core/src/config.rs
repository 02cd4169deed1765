//! Flat key=value run configuration. Every tunable named by the pipeline has
//! a key here; unknown keys are rejected and the resolved values are echoed
//! into each run log. The `preset` key switches between the CPU-friendly
//! desk scale and the published paper scale.

use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::GanLossConfig;
use crate::nn::networks::{NetworkKind, NetworkSpec};
use crate::optim::TturSchedule;
use crate::srpsa::DetectorTrainConfig;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,

    // synthetic data
    pub synth_image_size: usize,
    pub synth_pairs_per_family: usize,
    pub synth_particle_count: usize,

    // translator stage
    pub translator_epochs: usize,
    pub translator_lr_g: f64,
    pub translator_lr_d: f64,
    pub translator_switch_epoch: usize,
    pub translator_decay_factor: f64,
    pub translator_decay_every: usize,
    pub translator_beta1: f64,
    pub translator_beta2: f64,
    pub translator_lambda_rmse: f64,
    pub translator_label_smooth: f64,
    pub translator_base_width: usize,
    pub translator_depth: usize,
    pub translator_augment: bool,

    // super-resolution stage
    pub sr_epochs: usize,
    pub sr_lr_g: f64,
    pub sr_lr_d: f64,
    pub sr_switch_epoch: usize,
    pub sr_decay_factor: f64,
    pub sr_decay_every: usize,
    pub sr_beta1: f64,
    pub sr_beta2: f64,
    pub sr_lambda_rel: f64,
    pub sr_eta_l1: f64,
    pub sr_base_width: usize,
    pub sr_rrdb_blocks: usize,
    pub sr_growth: usize,
    pub sr_batch: usize,
    pub sr_feat_seed: u64,
    pub sr_feat_width: usize,
    /// Train the super-resolver on translator outputs instead of downscaled
    /// targets.
    pub sr_train_on_translator: bool,

    // detector
    pub detector_epochs: usize,
    pub detector_batch: usize,
    pub detector_lr: f64,
    pub detector_weight_decay: f64,
    pub detector_lambda_p: f64,
    pub detector_max_radius: f64,
    pub detector_p_thresh: f64,
    pub detector_base_width: usize,
    pub detector_literal_mask_p: bool,

    // evaluation
    pub metrics_k: usize,
    pub metrics_embed_dim: usize,
    pub metrics_embed_seed: u64,

    // patching
    pub patch_size: usize,
    pub patch_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: Preset::Desk,
            seed: 7,
            synth_image_size: 128,
            synth_pairs_per_family: 24,
            synth_particle_count: 10,
            translator_epochs: 12,
            translator_lr_g: 0.005,
            translator_lr_d: 0.001,
            translator_switch_epoch: 6,
            translator_decay_factor: 0.5,
            translator_decay_every: 10,
            translator_beta1: 0.5,
            translator_beta2: 0.999,
            translator_lambda_rmse: 5.0,
            translator_label_smooth: 0.9,
            translator_base_width: 16,
            translator_depth: 5,
            translator_augment: true,
            sr_epochs: 12,
            sr_lr_g: 0.003,
            sr_lr_d: 0.001,
            sr_switch_epoch: 6,
            sr_decay_factor: 0.5,
            sr_decay_every: 10,
            sr_beta1: 0.9,
            sr_beta2: 0.999,
            sr_lambda_rel: 0.05,
            sr_eta_l1: 1.0,
            sr_base_width: 16,
            sr_rrdb_blocks: 4,
            sr_growth: 8,
            sr_batch: 2,
            sr_feat_seed: 1234,
            sr_feat_width: 8,
            sr_train_on_translator: false,
            detector_epochs: 30,
            detector_batch: 4,
            detector_lr: 1e-3,
            detector_weight_decay: 1e-6,
            detector_lambda_p: 5.0,
            detector_max_radius: 5.0,
            detector_p_thresh: 0.5,
            detector_base_width: 16,
            detector_literal_mask_p: false,
            metrics_k: 5,
            metrics_embed_dim: 64,
            metrics_embed_seed: 99,
            patch_size: 64,
            patch_stride: 64,
        }
    }
}

impl RunConfig {
    /// The published training scale: full widths, 23 RRDBs, 512px patches,
    /// and the paper's stage-2/3 learning rates and weights.
    pub fn paper() -> Self {
        RunConfig {
            preset: Preset::Paper,
            synth_image_size: 1024,
            synth_pairs_per_family: 578,
            synth_particle_count: 60,
            translator_epochs: 200,
            translator_switch_epoch: 100,
            translator_base_width: 64,
            translator_depth: 7,
            sr_epochs: 200,
            sr_switch_epoch: 100,
            sr_eta_l1: 0.01,
            sr_base_width: 64,
            sr_rrdb_blocks: 23,
            sr_growth: 32,
            sr_feat_width: 16,
            detector_epochs: 100,
            detector_lr: 1e-4,
            detector_base_width: 32,
            patch_size: 512,
            patch_stride: 512,
            ..RunConfig::default()
        }
    }

    pub fn with_preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => RunConfig::default(),
            Preset::Paper => RunConfig::paper(),
        }
    }

    /// Parse a key=value file. The `preset` key (when present) must come
    /// first; every other key overrides the preset's default. Unknown keys
    /// are errors.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_cfg(&text)
    }

    pub fn from_str_cfg(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Format(format!("config line {}: expected key=value, got {raw:?}", ln + 1)));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) => match v.as_str() {
                "desk" => RunConfig::default(),
                "paper" => RunConfig::paper(),
                other => return Err(Error::Format(format!("unknown preset {other:?} (desk|paper)"))),
            },
            None => RunConfig::default(),
        };
        for (k, v) in &pairs {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value {v:?} for {key}")))
        }
        match key {
            "preset" => {} // handled during construction
            "seed" => self.seed = p(key, value)?,
            "synth.image_size" => self.synth_image_size = p(key, value)?,
            "synth.pairs_per_family" => self.synth_pairs_per_family = p(key, value)?,
            "synth.particle_count" => self.synth_particle_count = p(key, value)?,
            "translator.epochs" => self.translator_epochs = p(key, value)?,
            "translator.lr_g" => self.translator_lr_g = p(key, value)?,
            "translator.lr_d" => self.translator_lr_d = p(key, value)?,
            "translator.switch_epoch" => self.translator_switch_epoch = p(key, value)?,
            "translator.decay_factor" => self.translator_decay_factor = p(key, value)?,
            "translator.decay_every" => self.translator_decay_every = p(key, value)?,
            "translator.beta1" => self.translator_beta1 = p(key, value)?,
            "translator.beta2" => self.translator_beta2 = p(key, value)?,
            "translator.lambda_rmse" => self.translator_lambda_rmse = p(key, value)?,
            "translator.label_smooth" => self.translator_label_smooth = p(key, value)?,
            "translator.base_width" => self.translator_base_width = p(key, value)?,
            "translator.depth" => self.translator_depth = p(key, value)?,
            "translator.augment" => self.translator_augment = p(key, value)?,
            "sr.epochs" => self.sr_epochs = p(key, value)?,
            "sr.lr_g" => self.sr_lr_g = p(key, value)?,
            "sr.lr_d" => self.sr_lr_d = p(key, value)?,
            "sr.switch_epoch" => self.sr_switch_epoch = p(key, value)?,
            "sr.decay_factor" => self.sr_decay_factor = p(key, value)?,
            "sr.decay_every" => self.sr_decay_every = p(key, value)?,
            "sr.beta1" => self.sr_beta1 = p(key, value)?,
            "sr.beta2" => self.sr_beta2 = p(key, value)?,
            "sr.lambda_rel" => self.sr_lambda_rel = p(key, value)?,
            "sr.eta_l1" => self.sr_eta_l1 = p(key, value)?,
            "sr.base_width" => self.sr_base_width = p(key, value)?,
            "sr.rrdb_blocks" => self.sr_rrdb_blocks = p(key, value)?,
            "sr.growth" => self.sr_growth = p(key, value)?,
            "sr.batch" => self.sr_batch = p(key, value)?,
            "sr.feat_seed" => self.sr_feat_seed = p(key, value)?,
            "sr.feat_width" => self.sr_feat_width = p(key, value)?,
            "sr.train_on_translator" => self.sr_train_on_translator = p(key, value)?,
            "detector.epochs" => self.detector_epochs = p(key, value)?,
            "detector.batch" => self.detector_batch = p(key, value)?,
            "detector.lr" => self.detector_lr = p(key, value)?,
            "detector.weight_decay" => self.detector_weight_decay = p(key, value)?,
            "detector.lambda_p" => self.detector_lambda_p = p(key, value)?,
            "detector.max_radius" => self.detector_max_radius = p(key, value)?,
            "detector.p_thresh" => self.detector_p_thresh = p(key, value)?,
            "detector.base_width" => self.detector_base_width = p(key, value)?,
            "detector.literal_mask_p" => self.detector_literal_mask_p = p(key, value)?,
            "metrics.k" => self.metrics_k = p(key, value)?,
            "metrics.embed_dim" => self.metrics_embed_dim = p(key, value)?,
            "metrics.embed_seed" => self.metrics_embed_seed = p(key, value)?,
            "pipeline.patch_size" => self.patch_size = p(key, value)?,
            "pipeline.patch_stride" => self.patch_stride = p(key, value)?,
            other => return Err(Error::Format(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every resolved key, for run logs.
    pub fn to_lines(&self) -> String {
        let preset = match self.preset {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        };
        format!(
            "preset={preset}\nseed={}\nsynth.image_size={}\nsynth.pairs_per_family={}\nsynth.particle_count={}\n\
             translator.epochs={}\ntranslator.lr_g={}\ntranslator.lr_d={}\ntranslator.switch_epoch={}\n\
             translator.decay_factor={}\ntranslator.decay_every={}\ntranslator.beta1={}\ntranslator.beta2={}\n\
             translator.lambda_rmse={}\ntranslator.label_smooth={}\ntranslator.base_width={}\ntranslator.depth={}\n\
             translator.augment={}\nsr.epochs={}\nsr.lr_g={}\nsr.lr_d={}\nsr.switch_epoch={}\nsr.decay_factor={}\n\
             sr.decay_every={}\nsr.beta1={}\nsr.beta2={}\nsr.lambda_rel={}\nsr.eta_l1={}\nsr.base_width={}\n\
             sr.rrdb_blocks={}\nsr.growth={}\nsr.batch={}\nsr.feat_seed={}\nsr.feat_width={}\nsr.train_on_translator={}\n\
             detector.epochs={}\ndetector.batch={}\ndetector.lr={}\ndetector.weight_decay={}\ndetector.lambda_p={}\n\
             detector.max_radius={}\ndetector.p_thresh={}\ndetector.base_width={}\ndetector.literal_mask_p={}\n\
             metrics.k={}\nmetrics.embed_dim={}\nmetrics.embed_seed={}\npipeline.patch_size={}\npipeline.patch_stride={}\n",
            self.seed,
            self.synth_image_size,
            self.synth_pairs_per_family,
            self.synth_particle_count,
            self.translator_epochs,
            self.translator_lr_g,
            self.translator_lr_d,
            self.translator_switch_epoch,
            self.translator_decay_factor,
            self.translator_decay_every,
            self.translator_beta1,
            self.translator_beta2,
            self.translator_lambda_rmse,
            self.translator_label_smooth,
            self.translator_base_width,
            self.translator_depth,
            self.translator_augment,
            self.sr_epochs,
            self.sr_lr_g,
            self.sr_lr_d,
            self.sr_switch_epoch,
            self.sr_decay_factor,
            self.sr_decay_every,
            self.sr_beta1,
            self.sr_beta2,
            self.sr_lambda_rel,
            self.sr_eta_l1,
            self.sr_base_width,
            self.sr_rrdb_blocks,
            self.sr_growth,
            self.sr_batch,
            self.sr_feat_seed,
            self.sr_feat_width,
            self.sr_train_on_translator,
            self.detector_epochs,
            self.detector_batch,
            self.detector_lr,
            self.detector_weight_decay,
            self.detector_lambda_p,
            self.detector_max_radius,
            self.detector_p_thresh,
            self.detector_base_width,
            self.detector_literal_mask_p,
            self.metrics_k,
            self.metrics_embed_dim,
            self.metrics_embed_seed,
            self.patch_size,
            self.patch_stride,
        )
    }

    // network specs derived from the config

    pub fn translator_gen_spec(&self) -> NetworkSpec {
        let mut s = NetworkSpec::desk(NetworkKind::TranslatorGenerator);
        s.base_width = self.translator_base_width;
        s.depth = self.translator_depth;
        s
    }

    pub fn translator_disc_spec(&self) -> NetworkSpec {
        let mut s = NetworkSpec::desk(NetworkKind::PatchganDiscriminator);
        s.base_width = self.translator_base_width;
        s
    }

    pub fn sr_gen_spec(&self) -> NetworkSpec {
        let mut s = NetworkSpec::desk(NetworkKind::SrGenerator);
        s.base_width = self.sr_base_width;
        s.rrdb_blocks = self.sr_rrdb_blocks;
        s.growth = self.sr_growth;
        s
    }

    pub fn sr_disc_spec(&self) -> NetworkSpec {
        let mut s = NetworkSpec::desk(NetworkKind::SrDiscriminator);
        s.base_width = self.sr_base_width;
        s
    }

    pub fn detector_spec(&self) -> NetworkSpec {
        let mut s = NetworkSpec::desk(NetworkKind::SrpsaNet);
        s.base_width = self.detector_base_width;
        s
    }

    pub fn translator_ttur(&self) -> TturSchedule {
        TturSchedule {
            lr_g0: self.translator_lr_g,
            lr_d0: self.translator_lr_d,
            switch_epoch: self.translator_switch_epoch,
            decay_factor: self.translator_decay_factor,
            decay_every: self.translator_decay_every,
        }
    }

    pub fn sr_ttur(&self) -> TturSchedule {
        TturSchedule {
            lr_g0: self.sr_lr_g,
            lr_d0: self.sr_lr_d,
            switch_epoch: self.sr_switch_epoch,
            decay_factor: self.sr_decay_factor,
            decay_every: self.sr_decay_every,
        }
    }

    pub fn gan_loss(&self) -> GanLossConfig {
        let cfg = GanLossConfig {
            lambda_rmse: self.translator_lambda_rmse,
            lambda_rel: self.sr_lambda_rel,
            eta_l1: self.sr_eta_l1,
            label_smooth: self.translator_label_smooth,
        };
        cfg.validate();
        cfg
    }

    pub fn detector_train(&self) -> DetectorTrainConfig {
        DetectorTrainConfig {
            epochs: self.detector_epochs,
            batch_size: self.detector_batch,
            lr: self.detector_lr,
            weight_decay: self.detector_weight_decay,
            lambda_p: self.detector_lambda_p,
            max_radius: self.detector_max_radius,
            literal_mask_p: self.detector_literal_mask_p,
            seed: self.seed,
            val_fraction: 0.2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_str_cfg("# comment\npreset=desk\nseed=42\ndetector.lr=0.01\n").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.detector_lr, 0.01);
        assert_eq!(cfg.detector_lambda_p, 5.0);

        assert!(RunConfig::from_str_cfg("nonsense.key=1\n").is_err());
        assert!(RunConfig::from_str_cfg("detector.lr=abc\n").is_err());
        assert!(RunConfig::from_str_cfg("preset=galactic\n").is_err());
        assert!(RunConfig::from_str_cfg("just a line\n").is_err());
    }

    #[test]
    fn paper_preset_carries_published_values() {
        let cfg = RunConfig::from_str_cfg("preset=paper\n").unwrap();
        assert_eq!(cfg.sr_rrdb_blocks, 23);
        assert_eq!(cfg.translator_lr_g, 0.005);
        assert_eq!(cfg.translator_lr_d, 0.001);
        assert_eq!(cfg.sr_lr_g, 0.003);
        assert_eq!(cfg.sr_eta_l1, 0.01);
        assert_eq!(cfg.sr_lambda_rel, 0.05);
        assert_eq!(cfg.detector_lr, 1e-4);
        assert_eq!(cfg.detector_weight_decay, 1e-6);
        assert_eq!(cfg.detector_lambda_p, 5.0);
        assert_eq!(cfg.detector_max_radius, 5.0);
        assert_eq!(cfg.translator_beta1, 0.5);
        assert_eq!(cfg.sr_beta1, 0.9);
        assert_eq!(cfg.patch_size, 512);
    }

    #[test]
    fn echo_lines_parse_back_to_the_same_config() {
        let cfg = RunConfig::from_str_cfg("seed=5\nsr.batch=3\n").unwrap();
        let echoed = cfg.to_lines();
        let back = RunConfig::from_str_cfg(&echoed).unwrap();
        assert_eq!(back.seed, 5);
        assert_eq!(back.sr_batch, 3);
        assert_eq!(back.to_lines(), echoed);
    }
}
