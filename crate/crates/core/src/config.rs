//! Run configuration, read from TOML. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentPair, AugmentPolicy, ImageShape};
use crate::data::{self, LabelsPerClass, SslDataset, TinyImageSet};
use crate::error::{Error, Result};
use crate::model::{Activation, Architecture};
use crate::types::{BatchConfig, LabeledExample};
use crate::uscl::{ContrastiveConfig, DEFAULT_EPS_STRONG, DEFAULT_EPS_WEAK, DEFAULT_NEGATIVES, DEFAULT_TEMPERATURE};

/// Which pseudo-labeling and contrastive components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Constant threshold, no contrastive term.
    FixedThreshold,
    /// Constant threshold plus the contrastive term on rejected samples.
    UsclOnly,
    /// Adaptive thresholds, no contrastive term.
    SatplOnly,
    /// Adaptive thresholds plus the contrastive term.
    Full,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::FixedThreshold, Mode::UsclOnly, Mode::SatplOnly, Mode::Full];

    pub fn adaptive_thresholds(self) -> bool {
        matches!(self, Mode::SatplOnly | Mode::Full)
    }

    pub fn contrastive(self) -> bool {
        matches!(self, Mode::UsclOnly | Mode::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FixedThreshold => "fixed-threshold",
            Mode::UsclOnly => "uscl-only",
            Mode::SatplOnly => "satpl-only",
            Mode::Full => "full",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    TwoMoons,
    Blobs,
    TinyImages,
}

/// `labels_per_class = 4` or `labels_per_class = "all"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelsSetting {
    Count(usize),
    Keyword(String),
}

impl LabelsSetting {
    pub fn resolve(&self) -> Result<LabelsPerClass> {
        match self {
            LabelsSetting::Count(k) if *k > 0 => Ok(LabelsPerClass::Count(*k)),
            LabelsSetting::Count(_) => Err(Error::config("labels_per_class must be positive")),
            LabelsSetting::Keyword(k) if k == "all" => Ok(LabelsPerClass::All),
            LabelsSetting::Keyword(k) => Err(Error::config(format!("labels_per_class {k:?} is neither a count nor \"all\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSection {
    pub labeled: usize,
    pub mu: usize,
}

impl Default for BatchSection {
    fn default() -> Self {
        Self { labeled: 16, mu: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataKind,
    /// Seed for generation and splitting; the run seed when absent.
    pub seed: Option<u64>,
    /// Training points generated (labeled plus unlabeled).
    pub n: usize,
    /// Held-out evaluation points.
    pub test_n: usize,
    pub noise: f64,
    pub labels_per_class: LabelsSetting,
    /// Blob and glyph class count.
    pub classes: usize,
    /// Blob spreads, one shared or one per class.
    pub spreads: Vec<f64>,
    /// Tiny-image file; glyphs are generated when absent.
    pub path: Option<PathBuf>,
    pub distractor_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::TwoMoons,
            seed: None,
            n: 1000,
            test_n: 1000,
            noise: 0.1,
            labels_per_class: LabelsSetting::Count(4),
            classes: 3,
            spreads: vec![0.5],
            path: None,
            distractor_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: vec![64, 64, 16],
            activation: Activation::Silu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub weak_noise: f64,
    pub strong_noise: f64,
    pub strong_dropout: f64,
    pub flip_prob: f64,
    pub max_shift: usize,
    pub pixel_noise: f64,
    pub erase_size: usize,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            weak_noise: 0.05,
            strong_noise: 0.15,
            strong_dropout: 0.1,
            flip_prob: 0.0,
            max_shift: 1,
            pixel_noise: 0.1,
            erase_size: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SatplSection {
    pub ema_decay: f64,
    /// Threshold used by the fixed-threshold modes.
    pub fixed_threshold: f64,
    /// Batches in the class-status window; one pass over the unlabeled pool
    /// when absent.
    pub window: Option<usize>,
}

impl Default for SatplSection {
    fn default() -> Self {
        Self {
            ema_decay: crate::satpl::DEFAULT_EMA_DECAY,
            fixed_threshold: 0.95,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UsclSection {
    pub temperature: f64,
    pub eps_weak: f64,
    pub eps_strong: f64,
    pub negatives: usize,
    pub lambda_c0: f64,
}

impl Default for UsclSection {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            eps_weak: DEFAULT_EPS_WEAK,
            eps_strong: DEFAULT_EPS_STRONG,
            negatives: DEFAULT_NEGATIVES,
            lambda_c0: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda_u: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { lambda_u: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub lr: f64,
    pub momentum: f64,
    /// Scale the learning rate by `cos(7 pi t / (16 T))`.
    pub cosine_decay: bool,
    /// Decay of the parameter shadow used for evaluation.
    pub ema_decay: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            cosine_decay: false,
            ema_decay: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: u64,
    pub eval_interval: u64,
    pub mode: Mode,
    pub batch: BatchSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub augment: AugmentSection,
    pub satpl: SatplSection,
    pub uscl: UsclSection,
    pub loss: LossSection,
    pub optim: OptimSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 5000,
            eval_interval: 200,
            mode: Mode::Full,
            batch: BatchSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            augment: AugmentSection::default(),
            satpl: SatplSection::default(),
            uscl: UsclSection::default(),
            loss: LossSection::default(),
            optim: OptimSection::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::config(msg));
        if self.iterations == 0 {
            return fail("iterations must be at least 1");
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be at least 1");
        }
        if self.batch.labeled == 0 || self.batch.mu == 0 {
            return fail("batch sizes must be at least 1");
        }
        if !(self.loss.lambda_u >= 0.0 && self.loss.lambda_u.is_finite()) {
            return fail("lambda_u must be a finite non-negative number");
        }
        if !(self.uscl.lambda_c0 >= 0.0 && self.uscl.lambda_c0.is_finite()) {
            return fail("lambda_c0 must be a finite non-negative number");
        }
        if !(0.0..=1.0).contains(&self.satpl.fixed_threshold) {
            return fail("fixed_threshold must lie in [0, 1]");
        }
        if !(self.satpl.ema_decay > 0.0 && self.satpl.ema_decay < 1.0) {
            return fail("satpl.ema_decay must lie in (0, 1)");
        }
        if self.satpl.window == Some(0) {
            return fail("satpl.window must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.optim.ema_decay) {
            return fail("optim.ema_decay must lie in [0, 1]");
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.optim.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if self.data.test_n == 0 {
            return fail("test_n must be at least 1");
        }
        if !(self.data.noise >= 0.0) {
            return fail("data noise must be non-negative");
        }
        self.data.labels_per_class.resolve()?;
        self.contrastive().validate()?;
        Ok(())
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: self.uscl.temperature,
            eps_weak: self.uscl.eps_weak,
            eps_strong: self.uscl.eps_strong,
            negatives: self.uscl.negatives,
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn batch_config(&self, classes: usize, embed_dim: usize) -> Result<BatchConfig> {
        BatchConfig::new(self.batch.labeled, self.batch.mu, classes, embed_dim)
    }

    pub fn architecture(&self, input_dim: usize, classes: usize) -> Result<Architecture> {
        Architecture::new(input_dim, self.model.encoder.clone(), classes, self.model.activation)
    }

    pub fn augment_pair(&self, image: Option<ImageShape>) -> Result<AugmentPair> {
        let a = &self.augment;
        match image {
            None => AugmentPair::new(
                AugmentPolicy::weak_vector(a.weak_noise),
                AugmentPolicy::strong_vector(a.strong_noise, a.strong_dropout),
            ),
            Some(shape) => AugmentPair::new(
                AugmentPolicy::weak_image(shape, a.flip_prob, a.max_shift),
                AugmentPolicy::strong_image(shape, a.flip_prob, a.max_shift, a.pixel_noise, a.erase_size),
            ),
        }
    }

    /// Builds the training dataset (split into labeled and unlabeled pools)
    /// and the held-out evaluation set.
    pub fn build_data(&self) -> Result<(SslDataset, Vec<LabeledExample>)> {
        let d = &self.data;
        let seed = self.data_seed();
        let full = match d.kind {
            DataKind::TwoMoons => data::make_two_moons(d.n + d.test_n, d.noise, seed)?,
            DataKind::Blobs => data::make_blobs(d.classes, d.n + d.test_n, &d.spreads, seed)?,
            DataKind::TinyImages => match &d.path {
                Some(path) => TinyImageSet::read_from(std::io::BufReader::new(std::fs::File::open(path)?))?,
                None => data::make_tiny_glyphs(d.classes, d.n + d.test_n, d.noise, seed)?,
            }
            .to_dataset()?,
        };
        let (train, test) = data::hold_out(&full, d.test_n, seed.wrapping_add(1))?;
        let mut split = data::split_ssl(&train, d.labels_per_class.resolve()?, seed.wrapping_add(2))?;
        if d.distractor_fraction > 0.0 {
            split = data::with_distractors(&split, d.distractor_fraction, seed.wrapping_add(3))?;
        }
        Ok((split, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = TrainConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.batch.labeled * cfg.batch.mu, 112);
        assert_eq!(cfg.uscl.temperature, 0.1);
        assert_eq!(cfg.loss.lambda_u, 1.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = TrainConfig {
            mode: Mode::UsclOnly,
            ..TrainConfig::default()
        };
        cfg.data.labels_per_class = LabelsSetting::Keyword("all".into());
        cfg.satpl.window = Some(5);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(TrainConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_toml_str("[uscl]\nepsilon = 0.5"), Err(Error::Config(_))));
    }

    #[test]
    fn contradictions_are_rejected() {
        for text in [
            "iterations = 0",
            "[loss]\nlambda_u = -1.0",
            "[uscl]\nlambda_c0 = -0.5",
            "[uscl]\ntemperature = 0.0",
            "[data]\nlabels_per_class = \"some\"",
            "[optim]\nmomentum = 1.0",
            "mode = \"both\"",
        ] {
            assert!(matches!(TrainConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn modes_parse_and_print() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!(Mode::Full.adaptive_thresholds() && Mode::Full.contrastive());
        assert!(!Mode::FixedThreshold.adaptive_thresholds() && !Mode::FixedThreshold.contrastive());
    }

    #[test]
    fn builds_two_moons_split() {
        let cfg = TrainConfig::default();
        let (ds, test) = cfg.build_data().unwrap();
        assert_eq!(test.len(), 1000);
        assert_eq!(ds.labeled.len(), 8);
        assert_eq!(ds.unlabeled.len(), 992);
    }

    #[test]
    fn builds_glyph_images() {
        let mut cfg = TrainConfig::default();
        cfg.data.kind = DataKind::TinyImages;
        cfg.data.classes = 4;
        cfg.data.n = 200;
        cfg.data.test_n = 40;
        let (ds, test) = cfg.build_data().unwrap();
        assert_eq!(ds.input_dim, 64);
        assert_eq!(test.len(), 40);
        assert!(cfg.augment_pair(ds.image).is_ok());
    }
}
