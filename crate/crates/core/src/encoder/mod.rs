//! The frozen feature extractor.
//!
//! [`SurrogateEncoder`] is a fixed, deterministic stand-in for a pretrained
//! time-series foundation model: a hand-built feature bank followed by a
//! frozen random projection and `tanh`. [`PrecomputedEmbeddings`] serves
//! vectors produced elsewhere and exchanged through the TSEB format.

mod tseb;

pub use tseb::{
    decode_tseb, encode_tseb, load_embeddings, load_embeddings_with_metadata, manifest_path,
    save_embeddings, save_embeddings_with_metadata, EMBEDDING_MAGIC, EMBEDDING_VERSION,
};

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::datamodel::{EmbeddingRecord, EncoderConfig, EncoderKind, TimeSeriesPatch};
use crate::error::{Error, Result};
use crate::rng;

/// Samples per feature window (one hour of minutes).
pub const WINDOW: usize = 60;
/// Fourier magnitudes kept from the hourly series.
pub const FOURIER_TERMS: usize = 32;
pub const AUTOCORR_LAGS: [usize; 3] = [1, 60, 1440];
/// Level features (means, Fourier magnitudes) enter as `ln(1 + x) / LEVEL_SCALE`.
const LEVEL_SCALE: f64 = 6.0;
/// Spread features (hourly stds) enter as `ln(1 + x) / SPREAD_SCALE`.
const SPREAD_SCALE: f64 = 3.0;

/// Anything that maps a patch to a fixed-dimension embedding.
pub trait Encoder: Sync {
    fn dim(&self) -> usize;

    /// Embed raw values. Encoders backed by precomputed vectors cannot.
    fn embed_values(&self, values: &[f64]) -> Result<Vec<f32>>;

    fn embed_patch(&self, patch: &TimeSeriesPatch) -> Result<EmbeddingRecord> {
        Ok(EmbeddingRecord {
            vector: self.embed_values(&patch.values)?,
            meta: patch.meta.clone(),
        })
    }

    fn embed_all(&self, patches: &[TimeSeriesPatch]) -> Result<Vec<EmbeddingRecord>> {
        patches.par_iter().map(|p| self.embed_patch(p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub d_embed: usize,
    pub surrogate_seed: u64,
    pub feature_bank_size: usize,
}

impl EncoderSpec {
    pub fn from_config(cfg: &EncoderConfig, patch_len: usize) -> Self {
        Self {
            kind: cfg.kind,
            d_embed: cfg.d_embed,
            surrogate_seed: cfg.surrogate_seed,
            feature_bank_size: feature_count(patch_len),
        }
    }
}

fn window_count(len: usize) -> usize {
    len.div_ceil(WINDOW)
}

pub fn feature_count(patch_len: usize) -> usize {
    2 * window_count(patch_len) + FOURIER_TERMS + AUTOCORR_LAGS.len() + 2
}

fn compress(x: f64) -> f64 {
    x.max(0.0).ln_1p() / LEVEL_SCALE
}

fn compress_spread(x: f64) -> f64 {
    x.max(0.0).ln_1p() / SPREAD_SCALE
}

fn autocorrelation(values: &[f64], mean: f64, denom: f64, lag: usize) -> f64 {
    if denom <= 0.0 || lag >= values.len() {
        return 0.0;
    }
    let num: f64 = values
        .iter()
        .zip(&values[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    num / denom
}

/// Hand-built feature bank for one patch:
/// hourly means and stds, Fourier magnitudes of the hourly means,
/// autocorrelations at 1 minute, 1 hour and 1 day, overall mean and
/// zero fraction.
pub fn feature_bank(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut features = Vec::with_capacity(feature_count(n));

    let mut hourly = Vec::with_capacity(window_count(n));
    let mut hourly_std = Vec::with_capacity(window_count(n));
    for chunk in values.chunks(WINDOW) {
        let m = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let var = chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / chunk.len() as f64;
        hourly.push(m);
        hourly_std.push(var.sqrt());
    }
    features.extend(hourly.iter().map(|&m| compress(m)));
    features.extend(hourly_std.iter().map(|&s| compress_spread(s)));

    let w = hourly.len() as f64;
    for k in 0..FOURIER_TERMS {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &h) in hourly.iter().enumerate() {
            let angle = -2.0 * PI * (k * i) as f64 / w;
            re += h * angle.cos();
            im += h * angle.sin();
        }
        features.push(compress((re * re + im * im).sqrt() / w));
    }

    let mean = values.iter().sum::<f64>() / n as f64;
    let denom: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    for lag in AUTOCORR_LAGS {
        features.push(autocorrelation(values, mean, denom, lag));
    }

    features.push(compress(mean));
    features.push(values.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64);
    features
}

/// Frozen surrogate encoder: feature bank, random projection, `tanh`.
#[derive(Debug, Clone)]
pub struct SurrogateEncoder {
    spec: EncoderSpec,
    patch_len: usize,
    /// `feature_bank_size x d_embed`, entries drawn from N(0, 1/sqrt(f)) and
    /// rounded to single precision.
    projection: Array2<f64>,
}

impl SurrogateEncoder {
    pub fn new(d_embed: usize, patch_len: usize, surrogate_seed: u64) -> Result<Self> {
        if d_embed == 0 || patch_len == 0 {
            return Err(Error::Config("encoder dimensions must be > 0".into()));
        }
        let f = feature_count(patch_len);
        let normal = Normal::new(0.0, 1.0 / (f as f64).sqrt()).expect("finite std");
        let mut rng = rng::stage_rng(surrogate_seed, "surrogate-projection", &[]);
        let projection =
            Array2::from_shape_simple_fn((f, d_embed), || normal.sample(&mut rng) as f32 as f64);
        Ok(Self {
            spec: EncoderSpec {
                kind: EncoderKind::Surrogate,
                d_embed,
                surrogate_seed,
                feature_bank_size: f,
            },
            patch_len,
            projection,
        })
    }

    pub fn from_config(cfg: &EncoderConfig, patch_len: usize) -> Result<Self> {
        Self::new(cfg.d_embed, patch_len, cfg.surrogate_seed)
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    /// Little-endian f32 bytes of the projection matrix.
    pub fn projection_bytes(&self) -> Vec<u8> {
        self.projection
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }

    fn embed_raw(&self, values: &[f64]) -> Result<Vec<f32>> {
        if values.len() != self.patch_len {
            return Err(Error::Shape(format!(
                "encoder expects {} samples, got {}",
                self.patch_len,
                values.len()
            )));
        }
        let features = Array1::from(feature_bank(values));
        Ok(features
            .dot(&self.projection)
            .iter()
            .map(|&v| v.tanh() as f32)
            .collect())
    }
}

impl Encoder for SurrogateEncoder {
    fn dim(&self) -> usize {
        self.spec.d_embed
    }

    fn embed_values(&self, values: &[f64]) -> Result<Vec<f32>> {
        self.embed_raw(values)
    }
}

/// Embeddings computed elsewhere, looked up by patch id.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    by_patch: HashMap<String, Vec<f32>>,
}

impl PrecomputedEmbeddings {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.vector.len())
            .ok_or_else(|| Error::Config("no precomputed embeddings".into()))?;
        let mut by_patch = HashMap::with_capacity(records.len());
        for r in records {
            if r.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "embedding for `{}` has dimension {}, expected {dim}",
                    r.meta.patch_id,
                    r.vector.len()
                )));
            }
            by_patch.insert(r.meta.patch_id, r.vector);
        }
        Ok(Self { dim, by_patch })
    }
}

impl Encoder for PrecomputedEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_values(&self, _values: &[f64]) -> Result<Vec<f32>> {
        Err(Error::Config(
            "precomputed embeddings cannot embed new values; use the surrogate encoder".into(),
        ))
    }

    fn embed_patch(&self, patch: &TimeSeriesPatch) -> Result<EmbeddingRecord> {
        let vector = self.by_patch.get(&patch.meta.patch_id).ok_or_else(|| {
            Error::Config(format!("no precomputed embedding for patch `{}`", patch.meta.patch_id))
        })?;
        Ok(EmbeddingRecord {
            vector: vector.clone(),
            meta: patch.meta.clone(),
        })
    }
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Domain, RecordMeta};

    const LEN: usize = 3 * 1440;

    fn patch(values: Vec<f64>) -> TimeSeriesPatch {
        TimeSeriesPatch::new(values, RecordMeta::new("x", "P1", Domain::Source, Some(30), 0)).unwrap()
    }

    fn wavy() -> Vec<f64> {
        (0..LEN).map(|t| 50.0 + 40.0 * (t as f64 / 229.0).sin()).collect()
    }

    #[test]
    fn feature_bank_layout() {
        let f = feature_bank(&wavy());
        assert_eq!(f.len(), feature_count(LEN));
        assert_eq!(feature_count(10080), 2 * 168 + 32 + 3 + 2);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn embedding_is_deterministic() {
        let enc = SurrogateEncoder::new(64, LEN, 3).unwrap();
        let p = patch(wavy());
        let a = enc.embed_patch(&p).unwrap();
        let b = enc.embed_patch(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector.len(), 64);
        assert_eq!(cosine_similarity(&a.vector, &b.vector), 1.0);
        // a second encoder with the same seed is the same map
        let again = SurrogateEncoder::new(64, LEN, 3).unwrap();
        assert_eq!(again.embed_patch(&p).unwrap(), a);
    }

    #[test]
    fn constant_patches_differ() {
        let enc = SurrogateEncoder::new(32, LEN, 3).unwrap();
        let zero = enc.embed_patch(&patch(vec![0.0; LEN])).unwrap();
        let hundred = enc.embed_patch(&patch(vec![100.0; LEN])).unwrap();
        assert_ne!(zero.vector, hundred.vector);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let enc = SurrogateEncoder::new(8, LEN, 3).unwrap();
        assert!(matches!(enc.embed_patch(&patch(vec![1.0; LEN - 1])), Err(Error::Shape(_))));
    }

    #[test]
    fn projection_is_frozen() {
        let enc = SurrogateEncoder::new(16, LEN, 3).unwrap();
        let before = enc.projection_bytes();
        let p = patch(wavy());
        for _ in 0..5 {
            enc.embed_patch(&p).unwrap();
        }
        enc.embed_all(&[p.clone(), p]).unwrap();
        assert_eq!(enc.projection_bytes(), before);
    }

    #[test]
    fn autocorrelation_of_constant_is_zero() {
        let f = feature_bank(&vec![5.0; LEN]);
        let n = f.len();
        assert_eq!(&f[n - 5..n - 2], &[0.0, 0.0, 0.0]);
        assert_eq!(f[n - 1], 0.0);
    }

    #[test]
    fn precomputed_lookup() {
        let rec = EmbeddingRecord {
            vector: vec![1.0, 2.0],
            meta: RecordMeta::new("x", "P1", Domain::Source, None, 0),
        };
        let enc = PrecomputedEmbeddings::new(vec![rec.clone()]).unwrap();
        assert_eq!(enc.dim(), 2);
        assert_eq!(enc.embed_patch(&patch(vec![0.0; 4])).unwrap().vector, rec.vector);
        let mut other = patch(vec![0.0; 4]);
        other.meta.patch_id = "y".into();
        assert!(enc.embed_patch(&other).is_err());
    }
}
