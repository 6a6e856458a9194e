use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GaBinning, MINUTES_PER_DAY};
use crate::error::{Error, Result};

/// Every hyperparameter of a run, one section per stage.
///
/// Serialized as TOML. Missing keys fall back to the defaults below, so a
/// config file only needs to list what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub cohort: CohortConfig,
    pub encoder: EncoderConfig,
    pub simulator: SimulatorConfig,
    pub identifier: IdentifierConfig,
    pub align: AlignConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataConfig::default(),
            cohort: CohortConfig::default(),
            encoder: EncoderConfig::default(),
            simulator: SimulatorConfig::default(),
            identifier: IdentifierConfig::default(),
            align: AlignConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub patch_days: usize,
    pub bin_min: u16,
    pub n_bins: u16,
    /// Fraction of patients held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            patch_days: 7,
            bin_min: 20,
            n_bins: 38,
            eval_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub patches_per_patient: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 50,
            patches_per_patient: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Surrogate,
    FromFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub d_embed: usize,
    pub surrogate_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Surrogate,
            d_embed: 256,
            surrogate_seed: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Anonymization threshold: the loop stops once the score falls to
    /// `s_base * (1 - delta)`.
    pub delta: f64,
    pub n_max: usize,
    /// Base noise std in counts. When absent, `sigma_scale * std(patch)`.
    pub sigma: Option<f64>,
    pub sigma_scale: f64,
    pub smoothing_window: usize,
    pub rescale_range: [f64; 2],
    pub mask_fraction: f64,
    pub mask_min_run: usize,
    pub mask_max_run: usize,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            n_max: 50,
            sigma: None,
            sigma_scale: 0.25,
            smoothing_window: 31,
            rescale_range: [0.6, 1.0],
            mask_fraction: 0.15,
            mask_min_run: 30,
            mask_max_run: 240,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-patient share of patches held out to measure accuracy.
    pub holdout_fraction: f64,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            epochs: 150,
            batch_size: 32,
            lr: 1e-3,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub d_align: usize,
    pub adapter_hidden: usize,
    pub discriminator_hidden: usize,
    pub classifier_hidden: usize,
    pub lambda: f64,
    /// Share of the total steps over which lambda ramps linearly from 0.
    pub lambda_warmup_fraction: f64,
    pub lr_adapter: f64,
    /// Defaults to twice `lr_adapter`.
    pub lr_discriminator: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Push both domains toward 0.5 instead of pushing target toward 1.
    pub symmetric_adversarial: bool,
    /// Decode weeks as the probability-weighted mean bin instead of argmax.
    pub expected_value_decoding: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            d_align: 128,
            adapter_hidden: 256,
            discriminator_hidden: 64,
            classifier_hidden: 64,
            lambda: 1.0,
            lambda_warmup_fraction: 0.3,
            lr_adapter: 1e-3,
            lr_discriminator: None,
            batch_size: 64,
            epochs: 1000,
            symmetric_adversarial: true,
            expected_value_decoding: false,
        }
    }
}

impl AlignConfig {
    pub fn lr_discriminator(&self) -> f64 {
        self.lr_discriminator.unwrap_or(2.0 * self.lr_adapter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub knn_k: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            knn_k: 20,
            kmeans_restarts: 10,
            kmeans_max_iter: 100,
        }
    }
}

impl RunConfig {
    pub fn patch_len(&self) -> usize {
        self.data.patch_days * MINUTES_PER_DAY
    }

    pub fn binning(&self) -> Result<GaBinning> {
        GaBinning::new(self.data.bin_min, self.data.n_bins)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::Config(msg()))
            }
        }
        fn positive(name: &str, v: f64) -> Result<()> {
            check(v > 0.0 && v.is_finite(), || format!("{name} must be > 0, got {v}"))
        }

        self.binning()?;
        check(self.data.patch_days > 0, || "patch_days must be > 0".into())?;
        check((0.0..=1.0).contains(&self.data.eval_fraction), || {
            format!("eval_fraction must lie in [0, 1], got {}", self.data.eval_fraction)
        })?;
        check(self.cohort.n_patients >= 2, || "cohort needs at least 2 patients".into())?;
        check(self.cohort.patches_per_patient >= 1, || {
            "patches_per_patient must be >= 1".into()
        })?;

        let s = &self.simulator;
        check((0.0..=1.0).contains(&s.delta), || {
            format!("delta must lie in [0, 1], got {}", s.delta)
        })?;
        check(s.n_max >= 1, || "n_max must be >= 1".into())?;
        if let Some(sigma) = s.sigma {
            positive("sigma", sigma)?;
        }
        positive("sigma_scale", s.sigma_scale)?;
        check(s.smoothing_window >= 1 && s.smoothing_window % 2 == 1, || {
            format!("smoothing_window must be odd and >= 1, got {}", s.smoothing_window)
        })?;
        check(s.smoothing_window <= self.patch_len(), || {
            "smoothing_window exceeds patch length".into()
        })?;
        let [lo, hi] = s.rescale_range;
        check(lo > 0.0 && lo <= hi, || format!("rescale_range must satisfy 0 < low <= high, got [{lo}, {hi}]"))?;
        check((0.0..1.0).contains(&s.mask_fraction), || {
            format!("mask_fraction must lie in [0, 1), got {}", s.mask_fraction)
        })?;
        check(
            s.mask_min_run >= 1 && s.mask_min_run <= s.mask_max_run && s.mask_max_run <= self.patch_len(),
            || "mask runs must satisfy 1 <= min_run <= max_run <= patch length".into(),
        )?;

        let e = &self.encoder;
        check(e.d_embed >= self.align.d_align, || {
            format!("d_embed ({}) must be >= d_align ({})", e.d_embed, self.align.d_align)
        })?;

        let id = &self.identifier;
        check(id.hidden > 0 && id.epochs > 0 && id.batch_size > 0, || {
            "identifier hidden/epochs/batch_size must be > 0".into()
        })?;
        positive("identifier.lr", id.lr)?;
        check(id.holdout_fraction > 0.0 && id.holdout_fraction < 1.0, || {
            "identifier holdout_fraction must lie in (0, 1)".into()
        })?;

        let a = &self.align;
        check(a.d_align > 0 && a.batch_size > 0 && a.epochs > 0, || {
            "align d_align/batch_size/epochs must be > 0".into()
        })?;
        check(a.lambda >= 0.0 && a.lambda.is_finite(), || "lambda must be >= 0".into())?;
        check((0.0..=1.0).contains(&a.lambda_warmup_fraction), || {
            "lambda_warmup_fraction must lie in [0, 1]".into()
        })?;
        positive("lr_adapter", a.lr_adapter)?;
        positive("lr_discriminator", a.lr_discriminator())?;

        check(self.metrics.knn_k >= 1, || "knn_k must be >= 1".into())?;
        check(self.metrics.kmeans_restarts >= 1, || "kmeans_restarts must be >= 1".into())?;
        Ok(())
    }
}
