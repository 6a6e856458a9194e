//! Synthetic actigraphy cohort: labeled source patches with a circadian
//! rhythm, weekday pattern, slow trend and Gaussian count noise.
//!
//! The gestational-age label sets the log of the circadian amplitude, and
//! baseline, noise and trend are all proportional to that amplitude. A
//! global gain on a record therefore reads as a different label, which is
//! the failure a naive source-trained regressor shows on rescaled targets.
//! Phase, sharpness, weekday pattern and the proportionality constants are
//! drawn per patient to make identities separable.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::datamodel::{Domain, GaBinning, RecordMeta, RunConfig, TimeSeriesPatch, MINUTES_PER_DAY};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PatientProfile {
    pub patient_id: String,
    pub ga_weeks: u16,
    /// Offset of the rectified sinusoid's rising zero crossing, in hours.
    pub circadian_phase: f64,
    pub circadian_amplitude: f64,
    /// Exponent on the rectified sinusoid; larger values give a shorter,
    /// sharper active period.
    pub rhythm_sharpness: f64,
    pub activity_baseline: f64,
    pub weekly_pattern: [f64; 7],
    pub noise_std: f64,
    /// Counts per day.
    pub trend_slope: f64,
}

impl PatientProfile {
    fn validate(&self) -> Result<()> {
        let ok = self.circadian_amplitude >= 0.0
            && self.rhythm_sharpness > 0.0
            && self.activity_baseline >= 0.0
            && self.noise_std >= 0.0
            && self.weekly_pattern.iter().all(|&m| m > 0.0)
            && [self.circadian_phase, self.trend_slope].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid profile for `{}`", self.patient_id)))
        }
    }

    /// Noise-free activity at absolute minute `minute` of the record.
    pub fn expected_value(&self, minute: usize) -> f64 {
        let t_hours = minute as f64 / 60.0;
        let t_days = minute as f64 / MINUTES_PER_DAY as f64;
        let weekday = (minute / MINUTES_PER_DAY) % 7;
        let rhythm = (2.0 * PI * (t_hours - self.circadian_phase) / 24.0).sin().max(0.0).powf(self.rhythm_sharpness);
        self.activity_baseline
            + self.circadian_amplitude * rhythm * self.weekly_pattern[weekday]
            + self.trend_slope * t_days
    }
}

/// Draw one patient profile. `ga_weeks` position within the binning range
/// sets the log-amplitude; other traits are independent of it.
pub fn draw_profile<R: Rng + ?Sized>(
    patient_id: String,
    binning: &GaBinning,
    rng: &mut R,
) -> PatientProfile {
    let ga_weeks = rng.random_range(binning.bin_min..=binning.max_week());
    // -1 at the earliest bin, +1 at the latest
    let g = 2.0 * f64::from(ga_weeks - binning.bin_min) / f64::from(binning.n_bins - 1) - 1.0;

    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    // Everything below scales with the amplitude, so a constant gain on
    // the whole record is a shift of log-amplitude and nothing else.
    let circadian_amplitude = 150.0 * (2.0 * g + 0.2 * jitter.sample(rng)).exp();
    let circadian_phase = 7.0 + 0.8 * jitter.sample(rng);
    let rhythm_sharpness = (0.2 * jitter.sample(rng)).exp();
    let activity_baseline = circadian_amplitude * 0.1 * (0.2 * jitter.sample(rng)).exp();
    let noise_std = circadian_amplitude * rng.random_range(0.1..0.25);
    let trend_slope = circadian_amplitude * rng.random_range(0.001..0.01);
    let mut weekly_pattern = [1.0; 7];
    for m in &mut weekly_pattern {
        *m = rng.random_range(0.85..1.15);
    }

    PatientProfile {
        patient_id,
        ga_weeks,
        circadian_phase,
        circadian_amplitude,
        rhythm_sharpness,
        activity_baseline,
        weekly_pattern,
        noise_std,
        trend_slope,
    }
}

/// Render `len` minutes of `profile` starting at `start_day`.
///
/// Noise is seeded from `(seed, patient_id, start_day)`, so patches can be
/// produced in any order.
pub fn synthesize_patch(
    profile: &PatientProfile,
    start_day: u32,
    len: usize,
    seed: u64,
) -> Result<TimeSeriesPatch> {
    if len == 0 {
        return Err(Error::Config("patch length must be > 0".into()));
    }
    profile.validate()?;
    let mut rng = rng::stage_rng(
        seed,
        "cohort-patch",
        &[profile.patient_id.as_bytes(), &start_day.to_le_bytes()],
    );
    let offset = start_day as usize * MINUTES_PER_DAY;
    let values: Vec<f64> = if profile.noise_std > 0.0 {
        let noise = Normal::new(0.0, profile.noise_std).expect("finite std");
        (0..len)
            .map(|m| (profile.expected_value(offset + m) + noise.sample(&mut rng)).max(0.0))
            .collect()
    } else {
        (0..len)
            .map(|m| profile.expected_value(offset + m).max(0.0))
            .collect()
    };
    TimeSeriesPatch::new(
        values,
        RecordMeta::new(
            format!("{}-d{start_day:03}", profile.patient_id),
            profile.patient_id.clone(),
            Domain::Source,
            Some(profile.ga_weeks),
            start_day,
        ),
    )
}

/// Profiles for an `n_patients` cohort, drawn deterministically from `seed`.
pub fn draw_profiles(n_patients: usize, binning: &GaBinning, seed: u64) -> Vec<PatientProfile> {
    (0..n_patients)
        .map(|i| {
            let id = format!("P{:04}", i + 1);
            let mut rng = rng::stage_rng(seed, "cohort-profile", &[id.as_bytes()]);
            draw_profile(id, binning, &mut rng)
        })
        .collect()
}

/// Labeled source cohort: `patches_per_patient` consecutive non-overlapping
/// patches per patient, in patient-major order.
pub fn generate_cohort(
    n_patients: usize,
    patches_per_patient: usize,
    config: &RunConfig,
    seed: u64,
) -> Result<Vec<TimeSeriesPatch>> {
    if n_patients < 2 {
        return Err(Error::Config(format!(
            "cohort needs at least 2 patients, got {n_patients}"
        )));
    }
    let binning = config.binning()?;
    let len = config.patch_len();
    let days = config.data.patch_days as u32;
    let profiles = draw_profiles(n_patients, &binning, seed);
    let jobs: Vec<(&PatientProfile, u32)> = profiles
        .iter()
        .flat_map(|p| (0..patches_per_patient as u32).map(move |j| (p, j * days)))
        .collect();
    jobs.into_par_iter()
        .map(|(profile, start_day)| synthesize_patch(profile, start_day, len, seed))
        .collect()
}
