//! Target-domain simulation: score-driven iterative anonymization followed
//! by consumer-device degradation (smoothing, rescaling, masking).

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{SimulatorConfig, TimeSeriesPatch};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::identifier::PatientScorer;
use crate::rng;

/// Stage names in application order, as logged in every trace.
pub const PIPELINE_STEPS: [&str; 4] = ["anonymize", "smooth", "rescale", "mask"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationTrace {
    pub iterations_used: usize,
    pub s_base: f64,
    pub s_thresh: f64,
    pub final_score: f64,
    pub noise_scales: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnonymizeParams {
    pub delta: f64,
    pub n_max: usize,
    pub sigma: f64,
}

impl AnonymizeParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must be in [0, 1], got {}", self.delta)));
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be >= 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Base noise std for `values`: the fixed `sigma` if configured, otherwise
/// `sigma_scale * std(values)`. A flat patch falls back to `sigma_scale`
/// counts so the loop can still perturb it.
pub fn resolve_sigma(config: &SimulatorConfig, values: &[f64]) -> f64 {
    if let Some(s) = config.sigma {
        return s;
    }
    let sd = std_dev(values);
    if sd > 0.0 {
        config.sigma_scale * sd
    } else {
        config.sigma_scale
    }
}

/// Probability the scorer assigns to `true_id` for the embedded patch.
pub fn score(
    scorer: &dyn PatientScorer,
    encoder: &dyn Encoder,
    values: &[f64],
    true_id: &str,
) -> Result<f64> {
    if !scorer.knows(true_id) {
        return Err(Error::Identity(true_id.to_string()));
    }
    scorer.probability(&encoder.embed_values(values)?, true_id)
}

/// Iteratively add growing Gaussian noise until the scorer's confidence in
/// the true patient falls to `s_base * (1 - delta)` or `n_max` injections
/// have been made.
pub fn anonymize(
    patch: &TimeSeriesPatch,
    scorer: &dyn PatientScorer,
    encoder: &dyn Encoder,
    params: AnonymizeParams,
    seed: u64,
) -> Result<(TimeSeriesPatch, AnonymizationTrace)> {
    params.validate()?;
    let id = patch.meta.patient_id.as_str();
    let s_base = score(scorer, encoder, &patch.values, id)?;
    let s_thresh = s_base * (1.0 - params.delta);

    let mut rng = rng::stage_rng(seed, "anonymize", &[patch.meta.patch_id.as_bytes()]);
    let mut values = patch.values.clone();
    let mut current = s_base;
    let mut noise_scales = Vec::new();
    for i in 1..=params.n_max {
        if current <= s_thresh {
            break;
        }
        let scale = params.sigma * (1.0 + i as f64 / params.n_max as f64);
        let noise = Normal::new(0.0, scale).map_err(|e| Error::Numeric(e.to_string()))?;
        for v in &mut values {
            *v = (*v + noise.sample(&mut rng)).max(0.0);
        }
        noise_scales.push(scale);
        current = score(scorer, encoder, &values, id)?;
    }

    let trace = AnonymizationTrace {
        iterations_used: noise_scales.len(),
        s_base,
        s_thresh,
        final_score: current,
        noise_scales,
    };
    Ok((TimeSeriesPatch::new(values, patch.meta.clone())?, trace))
}

/// Centered moving average; windows are truncated at the edges.
pub fn smooth(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!("smoothing window must be odd and >= 1, got {window}")));
    }
    if window > values.len() {
        return Err(Error::Config(format!(
            "smoothing window {window} exceeds series length {}",
            values.len()
        )));
    }
    if window == 1 {
        return Ok(values.to_vec());
    }
    let half = window / 2;
    let n = values.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

/// Multiply by one factor drawn uniformly from `range`. Returns the scaled
/// values and the factor.
pub fn rescale<R: Rng + ?Sized>(values: &[f64], range: [f64; 2], rng: &mut R) -> Result<(Vec<f64>, f64)> {
    let [low, high] = range;
    if !(low > 0.0 && low <= high && high.is_finite()) {
        return Err(Error::Config(format!("invalid rescale range [{low}, {high}]")));
    }
    let factor = if low == high { low } else { rng.random_range(low..=high) };
    Ok((values.iter().map(|v| v * factor).collect(), factor))
}

/// Zero disjoint runs of `min_run..=max_run` samples until at least
/// `mask_fraction` of the series is covered. Returns the masked series and
/// the number of masked positions.
pub fn mask<R: Rng + ?Sized>(
    values: &[f64],
    mask_fraction: f64,
    min_run: usize,
    max_run: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    let n = values.len();
    if !(0.0..1.0).contains(&mask_fraction) {
        return Err(Error::Config(format!("mask_fraction must be in [0, 1), got {mask_fraction}")));
    }
    if min_run == 0 || min_run > max_run || max_run > n {
        return Err(Error::Config(format!(
            "mask runs need 1 <= min_run <= max_run <= length, got {min_run}..{max_run} for {n}"
        )));
    }
    let target = (mask_fraction * n as f64).ceil() as usize;
    let mut masked = vec![false; n];
    let mut count = 0;
    const ATTEMPTS: usize = 1000;
    while count < target {
        let run = rng.random_range(min_run..=max_run);
        let placed = (0..ATTEMPTS).find_map(|_| {
            let start = rng.random_range(0..=n - run);
            (!masked[start..start + run].iter().any(|&m| m)).then_some((start, run))
        });
        // A crowded series may have no gap of this length left; fall back
        // to the first free stretch, shortened to fit.
        let (start, run) = match placed {
            Some(p) => p,
            None => first_free_run(&masked, run).ok_or_else(|| {
                Error::Config("mask target unreachable without overlapping runs".into())
            })?,
        };
        masked[start..start + run].iter_mut().for_each(|m| *m = true);
        count += run;
    }
    let out = values
        .iter()
        .zip(&masked)
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect();
    Ok((out, count))
}

fn first_free_run(masked: &[bool], max_len: usize) -> Option<(usize, usize)> {
    let start = masked.iter().position(|&m| !m)?;
    let len = masked[start..].iter().take_while(|&&m| !m).count().min(max_len);
    Some((start, len))
}

/// One line of the per-patch simulation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub patch_id: String,
    pub steps: Vec<String>,
    pub sigma: f64,
    pub anonymization: AnonymizationTrace,
    pub rescale_factor: f64,
    pub masked_fraction: f64,
}

/// Anonymize, smooth, rescale and mask one source patch into a target
/// patch. Labels are carried over, sealed, for evaluation only.
pub fn simulate_target(
    patch: &TimeSeriesPatch,
    scorer: &dyn PatientScorer,
    encoder: &dyn Encoder,
    config: &SimulatorConfig,
    seed: u64,
) -> Result<(TimeSeriesPatch, SimulationTrace)> {
    let sigma = resolve_sigma(config, &patch.values);
    let params = AnonymizeParams {
        delta: config.delta,
        n_max: config.n_max,
        sigma,
    };
    let (anon, anonymization) = anonymize(patch, scorer, encoder, params, seed)?;
    let smoothed = smooth(&anon.values, config.smoothing_window)?;
    let pid = patch.meta.patch_id.as_bytes();
    let (scaled, rescale_factor) =
        rescale(&smoothed, config.rescale_range, &mut rng::stage_rng(seed, "rescale", &[pid]))?;
    let (values, masked) = mask(
        &scaled,
        config.mask_fraction,
        config.mask_min_run,
        config.mask_max_run,
        &mut rng::stage_rng(seed, "mask", &[pid]),
    )?;
    let target = TimeSeriesPatch::new(values, patch.meta.as_target())?;
    let trace = SimulationTrace {
        patch_id: target.meta.patch_id.clone(),
        steps: PIPELINE_STEPS.iter().map(|s| s.to_string()).collect(),
        sigma,
        anonymization,
        rescale_factor,
        masked_fraction: masked as f64 / patch.len() as f64,
    };
    Ok((target, trace))
}

/// [`simulate_target`] over many patches in parallel; output order follows
/// input order.
pub fn simulate_all(
    patches: &[TimeSeriesPatch],
    scorer: &dyn PatientScorer,
    encoder: &dyn Encoder,
    config: &SimulatorConfig,
    seed: u64,
) -> Result<(Vec<TimeSeriesPatch>, Vec<SimulationTrace>)> {
    let results: Vec<_> = patches
        .par_iter()
        .map(|p| simulate_target(p, scorer, encoder, config, seed))
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

/// One JSON object per line.
pub fn write_traces(path: &Path, traces: &[SimulationTrace]) -> Result<()> {
    let mut buf = Vec::new();
    for t in traces {
        serde_json::to_writer(&mut buf, t).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(buf).expect("in-memory write");
    }
    fsutil::atomic_write(path, &buf)
}
