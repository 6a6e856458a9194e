//! Core domain types shared by every stage: patches, embeddings, label
//! binning and patient-level splitting.

mod config;
pub mod io;

pub use config::{
    AlignConfig, CohortConfig, DataConfig, EncoderConfig, EncoderKind, IdentifierConfig,
    MetricsConfig, RunConfig, SimulatorConfig,
};

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Minutes per day; patches are sampled once per minute.
pub const MINUTES_PER_DAY: usize = 1440;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Config(format!("unknown domain `{other}`"))),
        }
    }
}

thread_local! {
    static TARGET_LABEL_READS: Cell<u64> = const { Cell::new(0) };
}

/// Number of times a target-domain label has been read on this thread.
///
/// Every read of `ga_weeks` on a target record goes through
/// [`RecordMeta::ga_weeks`], which bumps this counter. Training code never
/// calls it, which the acceptance suite verifies by resetting the counter
/// before training and checking it afterwards.
pub fn target_label_reads() -> u64 {
    TARGET_LABEL_READS.with(Cell::get)
}

pub fn reset_target_label_reads() {
    TARGET_LABEL_READS.with(|c| c.set(0));
}

/// Metadata carried by a patch and everything derived from it.
///
/// The label is private: target-domain labels exist for evaluation only and
/// every read of one is counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordMeta {
    pub patch_id: String,
    pub patient_id: String,
    pub domain: Domain,
    ga_weeks: Option<u16>,
    pub patch_start_day: u32,
}

impl RecordMeta {
    pub fn new(
        patch_id: impl Into<String>,
        patient_id: impl Into<String>,
        domain: Domain,
        ga_weeks: Option<u16>,
        patch_start_day: u32,
    ) -> Self {
        Self {
            patch_id: patch_id.into(),
            patient_id: patient_id.into(),
            domain,
            ga_weeks,
            patch_start_day,
        }
    }

    /// The label, for evaluation. Reads on target records are counted.
    pub fn ga_weeks(&self) -> Option<u16> {
        if self.domain == Domain::Target && self.ga_weeks.is_some() {
            TARGET_LABEL_READS.with(|c| c.set(c.get() + 1));
        }
        self.ga_weeks
    }

    /// The label for supervised training. Refuses target records outright.
    pub fn training_label(&self) -> Result<u16> {
        if self.domain == Domain::Target {
            return Err(Error::GuardViolation(format!(
                "target patch `{}` offered to a supervised training path",
                self.patch_id
            )));
        }
        self.ga_weeks
            .ok_or_else(|| Error::Config(format!("source patch `{}` has no label", self.patch_id)))
    }

    /// Uncounted access for serialization only.
    pub(crate) fn stored_label(&self) -> Option<u16> {
        self.ga_weeks
    }

    pub fn has_label(&self) -> bool {
        self.ga_weeks.is_some()
    }

    /// Same record, re-tagged as target. The label is carried over sealed.
    pub fn as_target(&self) -> Self {
        Self {
            patch_id: format!("{}-T", self.patch_id),
            domain: Domain::Target,
            ..self.clone()
        }
    }
}

/// Anything that belongs to a single patient.
pub trait HasPatient {
    fn patient_id(&self) -> &str;
}

/// Fixed-length 1-minute activity-count window.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPatch {
    pub values: Vec<f64>,
    pub meta: RecordMeta,
}

impl TimeSeriesPatch {
    pub fn new(values: Vec<f64>, meta: RecordMeta) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "patch `{}` has a non-finite value at minute {i}",
                meta.patch_id
            )));
        }
        Ok(Self { values, meta })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_length(&self, expected: usize) -> Result<()> {
        if self.values.len() != expected {
            return Err(Error::Shape(format!(
                "patch `{}` has {} samples, expected {expected}",
                self.meta.patch_id,
                self.values.len()
            )));
        }
        Ok(())
    }
}

impl HasPatient for TimeSeriesPatch {
    fn patient_id(&self) -> &str {
        &self.meta.patient_id
    }
}

/// Frozen-encoder output for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub vector: Vec<f32>,
    pub meta: RecordMeta,
}

impl HasPatient for EmbeddingRecord {
    fn patient_id(&self) -> &str {
        &self.meta.patient_id
    }
}

/// Adapter output in the aligned space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEmbedding {
    pub vector: Vec<f32>,
    pub meta: RecordMeta,
}

impl HasPatient for AlignedEmbedding {
    fn patient_id(&self) -> &str {
        &self.meta.patient_id
    }
}

/// Maps integer gestational-age weeks onto contiguous class bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaBinning {
    pub bin_min: u16,
    pub n_bins: u16,
}

impl Default for GaBinning {
    fn default() -> Self {
        Self {
            bin_min: 20,
            n_bins: 38,
        }
    }
}

impl GaBinning {
    pub fn new(bin_min: u16, n_bins: u16) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::Config(format!("n_bins must be at least 2, got {n_bins}")));
        }
        Ok(Self { bin_min, n_bins })
    }

    pub fn max_week(&self) -> u16 {
        self.bin_min + self.n_bins - 1
    }

    pub fn week_to_bin(&self, ga_weeks: u16) -> Result<usize> {
        if ga_weeks < self.bin_min || ga_weeks > self.max_week() {
            return Err(Error::Range(format!(
                "ga_weeks {ga_weeks} outside [{}, {}]",
                self.bin_min,
                self.max_week()
            )));
        }
        Ok(usize::from(ga_weeks - self.bin_min))
    }

    pub fn bin_to_week(&self, bin: usize) -> Result<u16> {
        if bin >= usize::from(self.n_bins) {
            return Err(Error::Range(format!(
                "bin {bin} outside [0, {})",
                self.n_bins
            )));
        }
        Ok(self.bin_min + bin as u16)
    }
}

/// Disjoint train/eval patient sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientSplit {
    pub train: BTreeSet<String>,
    pub eval: BTreeSet<String>,
}

impl PatientSplit {
    /// Split the distinct patient ids in `ids` so that
    /// `round(eval_fraction * n)` patients (at least one, at most `n - 1`)
    /// land in the eval set.
    pub fn new<'a>(
        ids: impl IntoIterator<Item = &'a str>,
        eval_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&eval_fraction) {
            return Err(Error::Config(format!(
                "eval_fraction must lie in [0, 1], got {eval_fraction}"
            )));
        }
        let unique: BTreeSet<&str> = ids.into_iter().collect();
        let n = unique.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "patient split needs at least 2 distinct patients, got {n}"
            )));
        }
        let n_eval = ((eval_fraction * n as f64).round() as usize).clamp(1, n - 1);

        let mut order: Vec<&str> = unique.into_iter().collect();
        order.shuffle(&mut rng::stage_rng(seed, "patient-split", &[]));

        let eval = order[..n_eval].iter().map(|s| s.to_string()).collect();
        let train = order[n_eval..].iter().map(|s| s.to_string()).collect();
        Ok(Self { train, eval })
    }

    pub fn is_eval(&self, patient_id: &str) -> bool {
        self.eval.contains(patient_id)
    }

    /// Partition `items` by this split, preserving input order.
    pub fn partition<T: HasPatient + Clone>(&self, items: &[T]) -> (Vec<T>, Vec<T>) {
        items
            .iter()
            .cloned()
            .partition(|item| !self.is_eval(item.patient_id()))
    }
}

/// Deterministic patient-level split of `items` into (train, eval).
pub fn split_by_patient<T: HasPatient + Clone>(
    items: &[T],
    eval_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let split = PatientSplit::new(items.iter().map(HasPatient::patient_id), eval_fraction, seed)?;
    Ok(split.partition(items))
}
