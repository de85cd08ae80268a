//! Run configuration: a flat TOML table with a fixed schema.

use std::path::{Path, PathBuf};

use kgalign_core::align::FusionMode;
use kgalign_core::encoder::Ablation;
use kgalign_core::semantic::SemanticConfig;
use kgalign_core::train::{Metric, StructuralConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! tag_serde {
    ($module:ident, $ty:ty, $what:literal) => {
        mod $module {
            use super::*;
            use serde::{de, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(v: &$ty, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(v.tag())
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<$ty, D::Error> {
                let tag = String::deserialize(d)?;
                <$ty>::from_tag(&tag)
                    .ok_or_else(|| de::Error::custom(format!(concat!("unknown ", $what, " `{}`"), tag)))
            }
        }
    };
}

tag_serde!(metric_tag, Metric, "metric");
tag_serde!(ablation_tag, Ablation, "ablation");
tag_serde!(fusion_tag, FusionMode, "fusion mode");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory with the standard file names.
    pub data_dir: PathBuf,
    /// Receives `checkpoints/`, `reports/` and `logs/`.
    pub out_dir: PathBuf,
    pub rng_seed: u64,
    /// Fraction of the seed alignment used for training.
    pub train_ratio: f64,

    /// Topology width.
    pub d: usize,
    /// Channel width.
    pub h: usize,
    pub margin: f64,
    /// Corruptions per seed per side.
    pub k_neg: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(with = "metric_tag")]
    pub metric: Metric,
    #[serde(with = "ablation_tag")]
    pub ablation: Ablation,
    pub train_initial_features: bool,
    pub relation_columns: usize,
    pub attribute_columns: usize,

    pub sem_hidden: usize,
    /// Defaults to the hybrid embedding width, which sum fusion needs.
    pub sem_dim: Option<usize>,
    pub sem_margin: f64,
    pub sem_epochs: usize,
    pub sem_lr: f64,
    pub sem_negatives: usize,

    pub tau: f64,
    /// When non-empty, `eval` reports one row per value instead of `tau`.
    pub tau_sweep: Vec<f64>,
    #[serde(with = "fusion_tag")]
    pub fusion: FusionMode,
    /// Candidate pool size.
    pub pool_size: usize,
    pub ks: Vec<usize>,
    /// Single-threaded ranking.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = StructuralConfig::default();
        let m = SemanticConfig::default();
        Self {
            data_dir: PathBuf::from("."),
            out_dir: PathBuf::from("out"),
            rng_seed: 0,
            train_ratio: 0.3,
            d: s.d,
            h: s.h,
            margin: s.margin,
            k_neg: s.k_neg,
            epochs: s.epochs,
            lr: s.lr,
            metric: s.metric,
            ablation: s.ablation,
            train_initial_features: s.train_initial_features,
            relation_columns: kgalign_core::features::DEFAULT_RELATION_COLUMNS,
            attribute_columns: kgalign_core::features::DEFAULT_ATTRIBUTE_COLUMNS,
            sem_hidden: m.hidden,
            sem_dim: None,
            sem_margin: m.margin,
            sem_epochs: m.epochs,
            sem_lr: m.lr,
            sem_negatives: m.negatives_per_positive,
            tau: 0.5,
            tau_sweep: Vec::new(),
            fusion: FusionMode::Sum,
            pool_size: 50,
            ks: vec![1, 10],
            deterministic: false,
        }
    }
}

fn check(ok: bool, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(message()))
    }
}

fn is_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl RunConfig {
    /// Parses and validates; relative paths are resolved against the
    /// directory holding the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Toml { source, .. } => Error::Toml {
                path: path.to_path_buf(),
                source,
            },
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data_dir, &mut config.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|source| Error::Toml {
            path: PathBuf::from("<config>"),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        check(self.train_ratio > 0.0 && self.train_ratio < 1.0, || {
            format!("train_ratio must lie in (0, 1), got {}", self.train_ratio)
        })?;
        check(self.d >= 1 && self.h >= 1, || "d and h must be at least 1".into())?;
        check(self.margin > 0.0 && self.margin.is_finite(), || {
            format!("margin must be > 0, got {}", self.margin)
        })?;
        check(self.k_neg >= 1, || "k_neg must be at least 1".into())?;
        check(self.epochs >= 1 && self.sem_epochs >= 1, || {
            "epochs and sem_epochs must be at least 1".into()
        })?;
        for (name, lr) in [("lr", self.lr), ("sem_lr", self.sem_lr)] {
            check(lr >= 0.0 && lr.is_finite(), || format!("{name} must be >= 0, got {lr}"))?;
        }
        check(self.relation_columns >= 2, || "relation_columns must be at least 2".into())?;
        check(self.attribute_columns >= 1, || "attribute_columns must be at least 1".into())?;
        check(self.sem_hidden >= 1 && self.sem_dim != Some(0), || {
            "sem_hidden and sem_dim must be at least 1".into()
        })?;
        check(self.sem_margin >= 0.0 && self.sem_margin.is_finite(), || {
            format!("sem_margin must be >= 0, got {}", self.sem_margin)
        })?;
        check(self.sem_negatives >= 1, || "sem_negatives must be at least 1".into())?;
        for tau in std::iter::once(self.tau).chain(self.tau_sweep.iter().copied()) {
            check(is_unit(tau), || format!("tau must lie in [0, 1], got {tau}"))?;
        }
        check(self.pool_size >= 1, || "pool_size must be at least 1".into())?;
        check(!self.ks.is_empty() && self.ks.iter().all(|&k| k >= 1), || {
            format!("ks must be non-empty with every k >= 1, got {:?}", self.ks)
        })?;
        if self.fusion == FusionMode::Sum {
            let width = self.hybrid_width();
            check(self.semantic_width() == width, || {
                format!(
                    "sum fusion needs sem_dim = {width} (the hybrid width); use fusion = \"concat\" for other widths"
                )
            })?;
        }
        Ok(())
    }

    pub fn hybrid_width(&self) -> usize {
        self.ablation.output_width(self.d, self.h)
    }

    pub fn semantic_width(&self) -> usize {
        self.sem_dim.unwrap_or_else(|| self.hybrid_width())
    }

    /// The fusion weights `eval` reports on.
    pub fn taus(&self) -> Vec<f64> {
        if self.tau_sweep.is_empty() {
            vec![self.tau]
        } else {
            self.tau_sweep.clone()
        }
    }

    pub fn structural(&self) -> StructuralConfig {
        StructuralConfig {
            d: self.d,
            h: self.h,
            margin: self.margin,
            k_neg: self.k_neg,
            epochs: self.epochs,
            lr: self.lr,
            rng_seed: self.rng_seed,
            metric: self.metric,
            ablation: self.ablation,
            train_initial_features: self.train_initial_features,
        }
    }

    pub fn semantic(&self) -> SemanticConfig {
        SemanticConfig {
            hidden: self.sem_hidden,
            d_sem: self.semantic_width(),
            margin: self.sem_margin,
            epochs: self.sem_epochs,
            lr: self.sem_lr,
            negatives_per_positive: self.sem_negatives,
            rng_seed: self.rng_seed,
        }
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoints")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.out_dir.join("logs")
    }

    pub fn encoder_checkpoint(&self) -> PathBuf {
        self.checkpoints_dir().join("encoder.ckpt")
    }

    pub fn mlp_checkpoint(&self) -> PathBuf {
        self.checkpoints_dir().join("semantic.ckpt")
    }
}
