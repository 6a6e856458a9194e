//! Patient-identification scorer used to drive anonymization.
//!
//! A one-hidden-layer softmax network over patient identities, trained on
//! source embeddings. Its predicted probability of the true patient is the
//! identifiability score.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::datamodel::{EmbeddingRecord, IdentifierConfig};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::neuralnet::{self, batch_from_rows, Activation, Adam, Network};
use crate::rng;

/// Anything that can report how confidently an embedding belongs to a
/// given patient.
pub trait PatientScorer: Sync {
    fn knows(&self, patient_id: &str) -> bool;

    /// Probability in `[0, 1]` that `embedding` belongs to `patient_id`.
    fn probability(&self, embedding: &[f32], patient_id: &str) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
    pub heldout_count: usize,
}

#[derive(Debug, Clone)]
pub struct IdentifierModel {
    label_set: Vec<String>,
    index: HashMap<String, usize>,
    network: Network,
    pub training_report: TrainingReport,
}

fn index_of(labels: &[String]) -> HashMap<String, usize> {
    labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect()
}

impl IdentifierModel {
    pub fn from_parts(label_set: Vec<String>, network: Network, training_report: TrainingReport) -> Result<Self> {
        if network.output_dim() != label_set.len() {
            return Err(Error::Shape(format!(
                "network has {} outputs for {} patients",
                network.output_dim(),
                label_set.len()
            )));
        }
        Ok(Self {
            index: index_of(&label_set),
            label_set,
            network,
            training_report,
        })
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn label_index(&self, patient_id: &str) -> Option<usize> {
        self.index.get(patient_id).copied()
    }

    /// Softmax probabilities over [`IdentifierModel::label_set`].
    pub fn predict_proba(&self, embedding: &[f32]) -> Result<Vec<f64>> {
        let x = batch_from_rows([embedding], self.input_dim())?;
        let logits = self.network.predict(x.view())?;
        Ok(neuralnet::softmax(logits.view()).row(0).to_vec())
    }

    pub fn predict_proba_batch(&self, embeddings: &[&[f32]]) -> Result<Array2<f64>> {
        let x = batch_from_rows(embeddings.iter().copied(), self.input_dim())?;
        let logits = self.network.predict(x.view())?;
        Ok(neuralnet::softmax(logits.view()))
    }

    /// Top-1 accuracy over `records` whose patient is in the label set.
    pub fn accuracy(&self, records: &[EmbeddingRecord]) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::Config("accuracy of an empty set".into()));
        }
        let rows: Vec<&[f32]> = records.iter().map(|r| r.vector.as_slice()).collect();
        let probs = self.predict_proba_batch(&rows)?;
        let mut correct = 0usize;
        for (row, r) in probs.rows().into_iter().zip(records) {
            let truth = self
                .label_index(&r.meta.patient_id)
                .ok_or_else(|| Error::Identity(r.meta.patient_id.clone()))?;
            if argmax(row.iter().copied()) == truth {
                correct += 1;
            }
        }
        Ok(correct as f64 / records.len() as f64)
    }

    /// Writes `<stem>.tsnn` plus `<stem>.labels.txt` (one patient id per
    /// line, preceded by `# key=value` report lines).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let r = &self.training_report;
        let mut text = format!(
            "# epochs_run={}\n# final_loss={}\n# train_accuracy={}\n# heldout_accuracy={}\n# heldout_count={}\n",
            r.epochs_run, r.final_loss, r.train_accuracy, r.heldout_accuracy, r.heldout_count
        );
        for l in &self.label_set {
            text.push_str(l);
            text.push('\n');
        }
        self.network.save(&stem.with_extension("tsnn"))?;
        fsutil::atomic_write(&stem.with_extension("labels.txt"), text.as_bytes())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let network = Network::load(&stem.with_extension("tsnn"))?;
        let labels_path = stem.with_extension("labels.txt");
        let text = String::from_utf8(fsutil::read(&labels_path)?)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", labels_path.display())))?;
        let mut report = BTreeMap::new();
        let mut labels = Vec::new();
        for line in text.lines() {
            if let Some(kv) = line.strip_prefix('#') {
                if let Some((k, v)) = kv.trim().split_once('=') {
                    report.insert(k.to_string(), v.to_string());
                }
            } else if !line.trim().is_empty() {
                labels.push(line.trim().to_string());
            }
        }
        let num = |k: &str| report.get(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
        let training_report = TrainingReport {
            epochs_run: num("epochs_run") as usize,
            final_loss: num("final_loss"),
            train_accuracy: num("train_accuracy"),
            heldout_accuracy: num("heldout_accuracy"),
            heldout_count: num("heldout_count") as usize,
        };
        Self::from_parts(labels, network, training_report)
    }
}

impl PatientScorer for IdentifierModel {
    fn knows(&self, patient_id: &str) -> bool {
        self.index.contains_key(patient_id)
    }

    fn probability(&self, embedding: &[f32], patient_id: &str) -> Result<f64> {
        let i = self
            .label_index(patient_id)
            .ok_or_else(|| Error::Identity(patient_id.to_string()))?;
        Ok(self.predict_proba(embedding)?[i])
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Stop once the epoch-mean training loss falls below this.
const CONVERGED_LOSS: f64 = 1e-4;

/// Train the scorer. Each patient's patches are split at patch level: a
/// `holdout_fraction` share (at least one, never all) is held out to
/// measure accuracy on unseen patches of known patients.
pub fn train_identifier(
    embeddings: &[EmbeddingRecord],
    config: &IdentifierConfig,
    seed: u64,
) -> Result<IdentifierModel> {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in embeddings.iter().enumerate() {
        by_patient.entry(r.meta.patient_id.as_str()).or_default().push(i);
    }
    if by_patient.len() < 2 {
        return Err(Error::Config(format!(
            "identifier needs at least 2 patients, got {}",
            by_patient.len()
        )));
    }
    if let Some((id, _)) = by_patient.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::Config(format!("patient `{id}` has fewer than 2 patches")));
    }
    let dim = embeddings[0].vector.len();
    let label_set: Vec<String> = by_patient.keys().map(|s| s.to_string()).collect();
    let index = index_of(&label_set);

    let mut split_rng = rng::stage_rng(seed, "identifier-holdout", &[]);
    let mut train_idx = Vec::new();
    let mut heldout_idx = Vec::new();
    for rows in by_patient.values() {
        let mut rows = rows.clone();
        rows.shuffle(&mut split_rng);
        let n_hold = ((config.holdout_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        heldout_idx.extend_from_slice(&rows[..n_hold]);
        train_idx.extend_from_slice(&rows[n_hold..]);
    }

    let labels: Vec<usize> = embeddings.iter().map(|r| index[&r.meta.patient_id]).collect();
    let inputs = batch_from_rows(embeddings.iter().map(|r| r.vector.as_slice()), dim)?;

    let mut init_rng = rng::stage_rng(seed, "identifier-init", &[]);
    let mut network = Network::mlp(
        &[dim, config.hidden, label_set.len()],
        &[Activation::Relu, Activation::Linear],
        &mut init_rng,
    )?;
    let mut opt = Adam::new(&network, config.lr);
    let mut shuffle_rng = rng::stage_rng(seed, "identifier-shuffle", &[]);

    let mut order = train_idx.clone();
    let mut epochs_run = 0;
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = inputs.select(ndarray::Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = network.forward(x.view())?;
            let (loss, grad) = neuralnet::cross_entropy_softmax(logits.view(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("identifier loss became {loss}")));
            }
            let back = network.backward(&cache, grad.view())?;
            opt.step(&mut network, &back.params)?;
            loss_sum += loss * batch.len() as f64;
        }
        epochs_run += 1;
        final_loss = loss_sum / order.len() as f64;
        if final_loss < CONVERGED_LOSS {
            break;
        }
    }

    let mut model = IdentifierModel::from_parts(
        label_set,
        network,
        TrainingReport {
            epochs_run,
            final_loss,
            train_accuracy: 0.0,
            heldout_accuracy: 0.0,
            heldout_count: heldout_idx.len(),
        },
    )?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| embeddings[i].clone()).collect::<Vec<_>>();
    model.training_report.train_accuracy = model.accuracy(&pick(&train_idx))?;
    model.training_report.heldout_accuracy = model.accuracy(&pick(&heldout_idx))?;
    Ok(model)
}
