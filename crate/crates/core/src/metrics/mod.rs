//! Evaluation: gestational-age MAE, k-NN domain-mixing entropy, ARI of a
//! 2-means clustering against domain tags, a logistic domain probe, and a
//! PCA projection for plotting.

mod cluster;
mod mixing;
mod pca;
mod probe;

pub use cluster::{adjusted_rand_index, ari_two_means, kmeans, KMeans};
pub use mixing::{binary_entropy, mixing_entropy, nearest_neighbors};
pub use pca::{pca_project_2d, Pca};
pub use probe::{domain_probe_auc, roc_auc, threshold_accuracy};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::Serialize;

use crate::align::{self, AlignmentModel};
use crate::datamodel::{AlignedEmbedding, Domain, EmbeddingRecord, MetricsConfig, RecordMeta};
use crate::error::{Error, Result};
use crate::neuralnet::batch_from_rows;

/// A vector with its record metadata.
pub trait Tagged {
    fn vector(&self) -> &[f32];
    fn meta(&self) -> &RecordMeta;
}

impl Tagged for EmbeddingRecord {
    fn vector(&self) -> &[f32] {
        &self.vector
    }
    fn meta(&self) -> &RecordMeta {
        &self.meta
    }
}

impl Tagged for AlignedEmbedding {
    fn vector(&self) -> &[f32] {
        &self.vector
    }
    fn meta(&self) -> &RecordMeta {
        &self.meta
    }
}

/// Stack vectors into a matrix and collect `is_source` tags.
pub fn matrix_and_tags<T: Tagged>(items: &[T]) -> Result<(Array2<f64>, Vec<bool>)> {
    let dim = items.first().map_or(0, |r| r.vector().len());
    let x = batch_from_rows(items.iter().map(Tagged::vector), dim)?;
    let tags = items.iter().map(|r| r.meta().domain == Domain::Source).collect();
    Ok((x, tags))
}

pub fn mae_weeks(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Config("MAE of an empty set".into()));
    }
    Ok(predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / predictions.len() as f64)
}

/// Domain-separation scores for one embedding space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Separation {
    pub mixing_entropy: f64,
    pub ari: f64,
    pub domain_probe_auc: f64,
}

pub fn separation<T: Tagged>(items: &[T], config: &MetricsConfig, seed: u64) -> Result<Separation> {
    let (x, tags) = matrix_and_tags(items)?;
    Ok(Separation {
        mixing_entropy: mixing_entropy(x.view(), &tags, config.knn_k)?,
        ari: ari_two_means(x.view(), &tags, config.kmeans_restarts, config.kmeans_max_iter, seed)?,
        domain_probe_auc: domain_probe_auc(x.view(), &tags, seed)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSummary {
    pub domain: Domain,
    pub week: u16,
    pub count: usize,
    pub mean_predicted: f64,
    pub mae: f64,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub label: String,
    pub n_source: usize,
    pub n_target: usize,
    pub mae_source_weeks: f64,
    pub mae_target_weeks: f64,
    pub knn_k: usize,
    /// Scores in the model's aligned space.
    pub separation: Separation,
    /// Share of aligned points the discriminator places on the right side
    /// of 0.5.
    pub discriminator_accuracy: f64,
    pub per_bin: Vec<BinSummary>,
}

fn labels_of(records: &[EmbeddingRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            r.meta
                .ga_weeks()
                .map(f64::from)
                .ok_or_else(|| Error::Config(format!("`{}` has no label to evaluate against", r.meta.patch_id)))
        })
        .collect()
}

fn per_bin(domain: Domain, preds: &[f64], truths: &[f64]) -> Vec<BinSummary> {
    let mut groups: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    for (p, t) in preds.iter().zip(truths) {
        groups.entry(*t as u16).or_default().push(*p);
    }
    groups
        .into_iter()
        .map(|(week, ps)| {
            let n = ps.len() as f64;
            BinSummary {
                domain,
                week,
                count: ps.len(),
                mean_predicted: ps.iter().sum::<f64>() / n,
                mae: ps.iter().map(|p| (p - f64::from(week)).abs()).sum::<f64>() / n,
                exact: ps.iter().filter(|&&p| p.round() == f64::from(week)).count() as f64 / n,
            }
        })
        .collect()
}

/// Score a trained model on held-out source and target embeddings. This is
/// the only place target labels are unsealed.
pub fn evaluate(
    label: &str,
    model: &AlignmentModel,
    source: &[EmbeddingRecord],
    target: &[EmbeddingRecord],
    config: &MetricsConfig,
    seed: u64,
) -> Result<EvaluationReport> {
    let pred_s = align::predict_ga(model, source)?;
    let pred_t = align::predict_ga(model, target)?;
    let truth_s = labels_of(source)?;
    let truth_t = labels_of(target)?;

    let mut aligned = align::adapt(&model.adapter, source)?;
    aligned.extend(align::adapt(&model.adapter, target)?);
    let (_, tags) = matrix_and_tags(&aligned)?;
    let d_out = align::discriminate(model, &aligned)?;

    let mut bins = per_bin(Domain::Source, &pred_s, &truth_s);
    bins.extend(per_bin(Domain::Target, &pred_t, &truth_t));
    Ok(EvaluationReport {
        label: label.to_string(),
        n_source: source.len(),
        n_target: target.len(),
        mae_source_weeks: mae_weeks(&pred_s, &truth_s)?,
        mae_target_weeks: mae_weeks(&pred_t, &truth_t)?,
        knn_k: config.knn_k,
        separation: separation(&aligned, config, seed)?,
        discriminator_accuracy: threshold_accuracy(&d_out, &tags),
        per_bin: bins,
    })
}

impl EvaluationReport {
    pub fn mae_ratio(&self) -> f64 {
        self.mae_target_weeks / self.mae_source_weeks
    }

    pub fn to_table(&self) -> String {
        let s = &self.separation;
        let mut out = String::new();
        let _ = writeln!(out, "report: {}", self.label);
        let _ = writeln!(out, "  source patches        {:>10}", self.n_source);
        let _ = writeln!(out, "  target patches        {:>10}", self.n_target);
        let _ = writeln!(out, "  MAE source (weeks)    {:>10.4}", self.mae_source_weeks);
        let _ = writeln!(out, "  MAE target (weeks)    {:>10.4}", self.mae_target_weeks);
        let _ = writeln!(out, "  MAE target/source     {:>10.4}", self.mae_ratio());
        let _ = writeln!(out, "  mixing entropy (k={:<2}) {:>10.4}", self.knn_k, s.mixing_entropy);
        let _ = writeln!(out, "  ARI (2-means)         {:>10.4}", s.ari);
        let _ = writeln!(out, "  domain probe AUC      {:>10.4}", s.domain_probe_auc);
        let _ = writeln!(out, "  discriminator acc     {:>10.4}", self.discriminator_accuracy);
        let _ = writeln!(out, "  per-bin (domain week n mean_pred mae exact):");
        for b in &self.per_bin {
            let _ = writeln!(
                out,
                "    {:<6} {:>3} {:>4} {:>8.3} {:>8.3} {:>6.3}",
                b.domain, b.week, b.count, b.mean_predicted, b.mae, b.exact
            );
        }
        out
    }

    /// `metric,value` rows followed by a per-bin section.
    pub fn to_csv(&self) -> String {
        let s = &self.separation;
        let mut out = String::from("metric,value\n");
        for (k, v) in [
            ("n_source", self.n_source as f64),
            ("n_target", self.n_target as f64),
            ("mae_source_weeks", self.mae_source_weeks),
            ("mae_target_weeks", self.mae_target_weeks),
            ("mae_ratio", self.mae_ratio()),
            ("knn_k", self.knn_k as f64),
            ("mixing_entropy", s.mixing_entropy),
            ("ari", s.ari),
            ("domain_probe_auc", s.domain_probe_auc),
            ("discriminator_accuracy", self.discriminator_accuracy),
        ] {
            let _ = writeln!(out, "{k},{v}");
        }
        out.push_str("\ndomain,week,count,mean_predicted,mae,exact\n");
        for b in &self.per_bin {
            let _ = writeln!(out, "{},{},{},{},{},{}", b.domain, b.week, b.count, b.mean_predicted, b.mae, b.exact);
        }
        out
    }
}

/// `x,y,domain,ga_weeks` lines for external plotting. Target labels are
/// unsealed here, for figures only.
pub fn projection_text<T: Tagged>(items: &[T]) -> Result<String> {
    let (x, _) = matrix_and_tags(items)?;
    let p = pca_project_2d(x.view())?;
    let mut out = String::from("x,y,domain,ga_weeks\n");
    for ([a, b], r) in p.coords.iter().zip(items) {
        let ga = r.meta().ga_weeks().map(|w| w.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{a},{b},{},{ga}", r.meta().domain);
    }
    Ok(out)
}
