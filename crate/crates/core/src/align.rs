//! Adversarial alignment: an adapter maps frozen embeddings into a shared
//! space, a discriminator tries to tell the domains apart (least-squares
//! objective), and a task classifier learns gestational-age bins from the
//! aligned source embeddings only.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datamodel::{AlignConfig, AlignedEmbedding, Domain, EmbeddingRecord, GaBinning};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::identifier::argmax;
use crate::neuralnet::{self, batch_from_rows, Activation, Adam, Gradients, Network};
use crate::rng;

/// Discriminator target for source embeddings.
pub const SOURCE_TARGET: f64 = 1.0;
/// Discriminator target for target embeddings.
pub const TARGET_TARGET: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    /// Effective lambda at the last step of the epoch.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    /// ReLU hidden layer, tanh output; a bounded aligned space keeps the
    /// least-squares game from drifting.
    pub adapter: Network,
    pub discriminator: Network,
    pub task_classifier: Network,
    pub lambda: f64,
    pub lr_adapter: f64,
    pub lr_discriminator: f64,
    pub binning: GaBinning,
    pub expected_value_decoding: bool,
    pub history: Vec<EpochStats>,
}

impl AlignmentModel {
    pub fn new(d_embed: usize, config: &AlignConfig, binning: GaBinning, seed: u64) -> Result<Self> {
        if d_embed < config.d_align {
            return Err(Error::Config(format!(
                "d_embed {d_embed} is smaller than d_align {}",
                config.d_align
            )));
        }
        let relu_linear = [Activation::Relu, Activation::Linear];
        let adapter = Network::mlp(
            &[d_embed, config.adapter_hidden, config.d_align],
            &[Activation::Relu, Activation::Tanh],
            &mut rng::stage_rng(seed, "init-adapter", &[]),
        )?;
        let discriminator = Network::mlp(
            &[config.d_align, config.discriminator_hidden, 1],
            &relu_linear,
            &mut rng::stage_rng(seed, "init-discriminator", &[]),
        )?;
        let task_classifier = Network::mlp(
            &[config.d_align, config.classifier_hidden, usize::from(binning.n_bins)],
            &relu_linear,
            &mut rng::stage_rng(seed, "init-classifier", &[]),
        )?;
        Ok(Self {
            adapter,
            discriminator,
            task_classifier,
            lambda: config.lambda,
            lr_adapter: config.lr_adapter,
            lr_discriminator: config.lr_discriminator(),
            binning,
            expected_value_decoding: config.expected_value_decoding,
            history: Vec::new(),
        })
    }

    pub fn d_embed(&self) -> usize {
        self.adapter.input_dim()
    }

    pub fn d_align(&self) -> usize {
        self.adapter.output_dim()
    }

    /// Class logits for raw (pre-adapter) embeddings.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.adapter.predict(x)?;
        self.task_classifier.predict(z.view())
    }

    /// Writes `adapter.tsnn`, `discriminator.tsnn`, `classifier.tsnn`,
    /// `model.toml` and `history.csv` into `dir`.
    pub fn save(&self, dir: &Path, extra: &ModelManifestExtra) -> Result<()> {
        self.adapter.save(&dir.join("adapter.tsnn"))?;
        self.discriminator.save(&dir.join("discriminator.tsnn"))?;
        self.task_classifier.save(&dir.join("classifier.tsnn"))?;
        let manifest = ModelManifest {
            lambda: self.lambda,
            lr_adapter: self.lr_adapter,
            lr_discriminator: self.lr_discriminator,
            lr_ratio: self.lr_discriminator / self.lr_adapter,
            bin_min: self.binning.bin_min,
            n_bins: self.binning.n_bins,
            expected_value_decoding: self.expected_value_decoding,
            extra: extra.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        fsutil::atomic_write(&dir.join("model.toml"), text.as_bytes())?;
        fsutil::atomic_write(&dir.join("history.csv"), &history_csv(&self.history)?)
    }

    pub fn load(dir: &Path) -> Result<(Self, ModelManifestExtra)> {
        let path = dir.join("model.toml");
        let text = String::from_utf8(fsutil::read(&path)?)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let m: ModelManifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let history_path = dir.join("history.csv");
        let mut history = Vec::new();
        let bytes = fsutil::read(&history_path)?;
        let mut reader = csv::Reader::from_reader(bytes.as_slice());
        for row in reader.deserialize() {
            history.push(row.map_err(|e| Error::Config(format!("{}: {e}", history_path.display())))?);
        }
        let model = Self {
            adapter: Network::load(&dir.join("adapter.tsnn"))?,
            discriminator: Network::load(&dir.join("discriminator.tsnn"))?,
            task_classifier: Network::load(&dir.join("classifier.tsnn"))?,
            lambda: m.lambda,
            lr_adapter: m.lr_adapter,
            lr_discriminator: m.lr_discriminator,
            binning: GaBinning::new(m.bin_min, m.n_bins)?,
            expected_value_decoding: m.expected_value_decoding,
            history,
        };
        if model.adapter.output_dim() != model.discriminator.input_dim()
            || model.adapter.output_dim() != model.task_classifier.input_dim()
            || model.task_classifier.output_dim() != usize::from(m.n_bins)
        {
            return Err(Error::Shape(format!("networks in {} do not chain", dir.display())));
        }
        Ok((model, m.extra))
    }
}

/// Run metadata stored next to the networks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelManifestExtra {
    pub seed: u64,
    pub baseline: bool,
    pub symmetric_adversarial: bool,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    lambda: f64,
    lr_adapter: f64,
    lr_discriminator: f64,
    lr_ratio: f64,
    bin_min: u16,
    n_bins: u16,
    expected_value_decoding: bool,
    extra: ModelManifestExtra,
}

pub fn history_csv(history: &[EpochStats]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in history {
        w.serialize(h).map_err(|e| Error::Config(e.to_string()))?;
    }
    if history.is_empty() {
        w.write_record(["epoch", "l_cls", "l_adv", "l_disc", "lambda"])
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

/// Adapter forward pass over records; metadata is carried over.
pub fn adapt(adapter: &Network, embeddings: &[EmbeddingRecord]) -> Result<Vec<AlignedEmbedding>> {
    let x = batch_from_rows(embeddings.iter().map(|r| r.vector.as_slice()), adapter.input_dim())?;
    let z = adapter.predict(x.view())?;
    Ok(z.rows()
        .into_iter()
        .zip(embeddings)
        .map(|(row, r)| AlignedEmbedding {
            vector: row.iter().map(|&v| v as f32).collect(),
            meta: r.meta.clone(),
        })
        .collect())
}

/// Labeled source rows. Labels come from [`crate::datamodel::RecordMeta::training_label`],
/// which refuses target records.
#[derive(Debug, Clone)]
pub struct SourceBatch {
    pub x: Array2<f64>,
    pub bins: Vec<usize>,
}

impl SourceBatch {
    pub fn from_records(records: &[EmbeddingRecord], binning: &GaBinning) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.vector.len());
        let bins = records
            .iter()
            .map(|r| binning.week_to_bin(r.meta.training_label()?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x: batch_from_rows(records.iter().map(|r| r.vector.as_slice()), dim)?,
            bins,
        })
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            bins: rows.iter().map(|&i| self.bins[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Target rows. Only vectors are taken; metadata is never consulted.
pub fn target_matrix(records: &[EmbeddingRecord]) -> Result<Array2<f64>> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    if let Some(r) = records.iter().find(|r| r.meta.domain != Domain::Target) {
        return Err(Error::Config(format!("`{}` is not a target record", r.meta.patch_id)));
    }
    batch_from_rows(records.iter().map(|r| r.vector.as_slice()), dim)
}

/// `½[mse(D(zs), 1) + mse(D(zt), 0)]` and its gradient with respect to the
/// discriminator's parameters. `zs`/`zt` are treated as constants.
pub fn discriminator_loss(d: &Network, zs: ArrayView2<f64>, zt: ArrayView2<f64>) -> Result<(f64, Gradients)> {
    if zs.nrows() == 0 || zt.nrows() == 0 {
        return Err(Error::Config("discriminator loss needs non-empty batches".into()));
    }
    let (ps, cache_s) = d.forward(zs)?;
    let (pt, cache_t) = d.forward(zt)?;
    let (ls, gs) = neuralnet::mse_to_constant(ps.view(), SOURCE_TARGET)?;
    let (lt, gt) = neuralnet::mse_to_constant(pt.view(), TARGET_TARGET)?;
    let mut grads = d.backward(&cache_s, gs.view())?.params;
    grads.add_scaled(&d.backward(&cache_t, gt.view())?.params, 1.0)?;
    grads.scale(0.5);
    Ok((0.5 * (ls + lt), grads))
}

#[derive(Debug, Clone)]
pub struct AdapterLoss {
    pub total: f64,
    pub cls: f64,
    pub adv: f64,
    pub adapter_grads: Gradients,
    pub classifier_grads: Gradients,
}

/// `L_cls + lambda * L_adv`, with gradients for the adapter and the task
/// classifier. The discriminator is only differentiated through; its own
/// parameter gradients are discarded.
///
/// `L_adv` is `mse(D(adapter(zt)), 1)`, or with `symmetric` set,
/// `½[mse(D(adapter(zs)), ½) + mse(D(adapter(zt)), ½)]`.
pub fn adapter_loss(
    model: &AlignmentModel,
    source: &SourceBatch,
    target: ArrayView2<f64>,
    lambda: f64,
    symmetric: bool,
) -> Result<AdapterLoss> {
    if source.is_empty() || target.nrows() == 0 {
        return Err(Error::Config("adapter loss needs non-empty batches".into()));
    }
    let d = &model.discriminator;
    let (zs, cache_as) = model.adapter.forward(source.x.view())?;
    let (logits, cache_c) = model.task_classifier.forward(zs.view())?;
    let (cls, g_logits) = neuralnet::cross_entropy_softmax(logits.view(), &source.bins)?;
    let back_c = model.task_classifier.backward(&cache_c, g_logits.view())?;
    let mut g_zs = back_c.input;

    let (zt, cache_at) = model.adapter.forward(target)?;
    let (pt, cache_dt) = d.forward(zt.view())?;
    let (adv, g_zt) = if symmetric {
        let (ps, cache_ds) = d.forward(zs.view())?;
        let (ls, g_ps) = neuralnet::mse_to_constant(ps.view(), 0.5)?;
        let (lt, g_pt) = neuralnet::mse_to_constant(pt.view(), 0.5)?;
        let g_zs_adv = d.backward(&cache_ds, g_ps.view())?.input;
        g_zs.scaled_add(0.5 * lambda, &g_zs_adv);
        (0.5 * (ls + lt), d.backward(&cache_dt, g_pt.view())?.input * 0.5)
    } else {
        let (lt, g_pt) = neuralnet::mse_to_constant(pt.view(), SOURCE_TARGET)?;
        (lt, d.backward(&cache_dt, g_pt.view())?.input)
    };

    let mut adapter_grads = model.adapter.backward(&cache_as, g_zs.view())?.params;
    if lambda != 0.0 {
        let g_target = model.adapter.backward(&cache_at, (g_zt * lambda).view())?.params;
        adapter_grads.add_scaled(&g_target, 1.0)?;
    }
    Ok(AdapterLoss {
        total: cls + lambda * adv,
        cls,
        adv,
        adapter_grads,
        classifier_grads: back_c.params,
    })
}

/// Optimizer state for one training run.
pub struct Trainer {
    pub model: AlignmentModel,
    opt_adapter: Adam,
    opt_classifier: Adam,
    opt_discriminator: Adam,
}

impl Trainer {
    pub fn new(model: AlignmentModel) -> Self {
        Self {
            opt_adapter: Adam::new(&model.adapter, model.lr_adapter),
            opt_classifier: Adam::new(&model.task_classifier, model.lr_adapter),
            opt_discriminator: Adam::new(&model.discriminator, model.lr_discriminator),
            model,
        }
    }

    /// One discriminator update. Touches only the discriminator.
    pub fn discriminator_half_step(&mut self, source: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
        let zs = self.model.adapter.predict(source)?;
        let zt = self.model.adapter.predict(target)?;
        let (loss, grads) = discriminator_loss(&self.model.discriminator, zs.view(), zt.view())?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("discriminator loss became {loss}")));
        }
        self.opt_discriminator.step(&mut self.model.discriminator, &grads)?;
        Ok(loss)
    }

    /// One adapter + classifier update. Touches neither the discriminator
    /// nor its optimizer.
    pub fn adapter_half_step(
        &mut self,
        source: &SourceBatch,
        target: ArrayView2<f64>,
        lambda: f64,
        symmetric: bool,
    ) -> Result<AdapterLoss> {
        let loss = adapter_loss(&self.model, source, target, lambda, symmetric)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "adapter loss became {} (cls {}, adv {})",
                loss.total, loss.cls, loss.adv
            )));
        }
        self.opt_adapter.step(&mut self.model.adapter, &loss.adapter_grads)?;
        self.opt_classifier.step(&mut self.model.task_classifier, &loss.classifier_grads)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Adversarial game with 1:1 alternating updates.
    Aligned,
    /// Classifier on adapted source only: lambda forced to 0 and the
    /// discriminator never updated.
    Baseline,
}

/// Effective lambda at 0-based `step`, ramping linearly over the first
/// `warmup_steps`.
pub fn lambda_at(lambda: f64, step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        lambda
    } else {
        lambda * ((step + 1) as f64 / warmup_steps as f64).min(1.0)
    }
}

/// Training stopped on a non-finite loss. `model` holds the parameters as
/// they were at the end of the last completed epoch.
#[derive(Debug)]
pub struct TrainAbort {
    pub model: AlignmentModel,
    pub epoch: usize,
    pub batch: usize,
    pub cause: Error,
}

impl std::fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "training aborted at epoch {} batch {}: {} (last good epoch {})",
            self.epoch,
            self.batch,
            self.cause,
            self.model.history.len()
        )
    }
}

impl From<TrainAbort> for Error {
    fn from(a: TrainAbort) -> Self {
        match a.cause {
            Error::Numeric(_) => Error::Numeric(a.to_string()),
            other => other,
        }
    }
}

/// Train `model` on labeled source and unlabeled target embeddings.
///
/// Each epoch shuffles the source set into `batch_size` batches; target
/// batches of the same size are drawn from a separately shuffled target
/// order, wrapping as needed. Per batch: one discriminator update, then one
/// adapter + classifier update.
pub fn train(
    model: AlignmentModel,
    source: &[EmbeddingRecord],
    target: &[EmbeddingRecord],
    config: &AlignConfig,
    mode: Mode,
    seed: u64,
) -> std::result::Result<AlignmentModel, TrainAbort> {
    let abort = |model: AlignmentModel, cause| TrainAbort { model, epoch: 0, batch: 0, cause };
    let source_all = match SourceBatch::from_records(source, &model.binning) {
        Ok(b) => b,
        Err(e) => return Err(abort(model, e)),
    };
    let target_all = match target_matrix(target) {
        Ok(t) => t,
        Err(e) => return Err(abort(model, e)),
    };
    if source_all.is_empty() || target_all.nrows() == 0 || config.batch_size == 0 {
        return Err(abort(model, Error::Config("training needs source, target and batch_size > 0".into())));
    }
    let d_embed = model.d_embed();
    if source_all.x.ncols() != d_embed || target_all.ncols() != d_embed {
        let msg = format!(
            "embeddings have dimension {}/{}, adapter expects {d_embed}",
            source_all.x.ncols(),
            target_all.ncols()
        );
        return Err(abort(model, Error::Shape(msg)));
    }

    let lambda = match mode {
        Mode::Aligned => model.lambda,
        Mode::Baseline => 0.0,
    };
    let batches_per_epoch = source_all.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let warmup_steps = (config.lambda_warmup_fraction * total_steps as f64).ceil() as usize;

    let mut shuffle = rng::stage_rng(seed, "align-shuffle", &[]);
    let mut src_order: Vec<usize> = (0..source_all.len()).collect();
    let mut tgt_order: Vec<usize> = (0..target_all.nrows()).collect();
    let mut tgt_cursor = tgt_order.len();
    let mut trainer = Trainer::new(model);
    let mut checkpoint = trainer.model.clone();
    let mut step = 0;

    for epoch in 0..config.epochs {
        src_order.shuffle(&mut shuffle);
        let (mut sum_cls, mut sum_adv, mut sum_disc) = (0.0, 0.0, 0.0);
        let mut lam = lambda;
        for (b, rows) in src_order.chunks(config.batch_size).enumerate() {
            let mut tgt_rows = Vec::with_capacity(rows.len());
            while tgt_rows.len() < rows.len() {
                if tgt_cursor == tgt_order.len() {
                    tgt_order.shuffle(&mut shuffle);
                    tgt_cursor = 0;
                }
                tgt_rows.push(tgt_order[tgt_cursor]);
                tgt_cursor += 1;
            }
            let src = source_all.select(rows);
            let tgt = target_all.select(Axis(0), &tgt_rows);
            lam = lambda_at(lambda, step, warmup_steps);

            let result = (|| {
                let disc = match mode {
                    Mode::Aligned => trainer.discriminator_half_step(src.x.view(), tgt.view())?,
                    Mode::Baseline => f64::NAN,
                };
                let loss = trainer.adapter_half_step(&src, tgt.view(), lam, config.symmetric_adversarial)?;
                Ok::<_, Error>((disc, loss))
            })();
            match result {
                Ok((disc, loss)) => {
                    let w = rows.len() as f64;
                    sum_cls += loss.cls * w;
                    sum_adv += loss.adv * w;
                    sum_disc += disc * w;
                }
                Err(cause) => {
                    return Err(TrainAbort { model: checkpoint, epoch, batch: b, cause });
                }
            }
            step += 1;
        }
        let n = source_all.len() as f64;
        trainer.model.history.push(EpochStats {
            epoch,
            l_cls: sum_cls / n,
            l_adv: sum_adv / n,
            l_disc: if mode == Mode::Baseline { 0.0 } else { sum_disc / n },
            lambda: lam,
        });
        checkpoint = trainer.model.clone();
    }
    Ok(trainer.model)
}

/// Predicted weeks per record: argmax bin, or the softmax-weighted mean bin
/// when the model decodes by expected value.
pub fn predict_ga(model: &AlignmentModel, embeddings: &[EmbeddingRecord]) -> Result<Vec<f64>> {
    let x = batch_from_rows(embeddings.iter().map(|r| r.vector.as_slice()), model.d_embed())?;
    decode(model, model.logits(x.view())?.view())
}

pub fn decode(model: &AlignmentModel, logits: ArrayView2<f64>) -> Result<Vec<f64>> {
    let b = &model.binning;
    if logits.ncols() != usize::from(b.n_bins) {
        return Err(Error::Shape(format!("{} logits for {} bins", logits.ncols(), b.n_bins)));
    }
    if model.expected_value_decoding {
        let p = neuralnet::softmax(logits);
        Ok(p.rows()
            .into_iter()
            .map(|row| f64::from(b.bin_min) + row.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>())
            .collect())
    } else {
        logits
            .rows()
            .into_iter()
            .map(|row| Ok(f64::from(b.bin_to_week(argmax(row.iter().copied()))?)))
            .collect()
    }
}

/// Discriminator output for aligned vectors.
pub fn discriminate(model: &AlignmentModel, aligned: &[AlignedEmbedding]) -> Result<Vec<f64>> {
    let z = batch_from_rows(aligned.iter().map(|r| r.vector.as_slice()), model.d_align())?;
    Ok(model.discriminator.predict(z.view())?.slice(s![.., 0]).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::RecordMeta;

    fn small_config() -> AlignConfig {
        AlignConfig {
            d_align: 4,
            adapter_hidden: 8,
            discriminator_hidden: 5,
            classifier_hidden: 6,
            batch_size: 4,
            epochs: 3,
            ..AlignConfig::default()
        }
    }

    fn binning() -> GaBinning {
        GaBinning::new(20, 5).unwrap()
    }

    fn records(n: usize, domain: Domain, offset: f32) -> Vec<EmbeddingRecord> {
        (0..n)
            .map(|i| {
                let meta = RecordMeta::new(format!("p{i}"), format!("P{}", i % 3), Domain::Source, Some(20 + (i % 5) as u16), 0);
                EmbeddingRecord {
                    vector: (0..6).map(|j| ((i * 7 + j) as f32).sin() + offset).collect(),
                    meta: if domain == Domain::Target { meta.as_target() } else { meta },
                }
            })
            .collect()
    }

    fn model() -> AlignmentModel {
        AlignmentModel::new(6, &small_config(), binning(), 3).unwrap()
    }

    #[test]
    fn default_dimensions() {
        let m = AlignmentModel::new(256, &AlignConfig::default(), GaBinning::default(), 0).unwrap();
        assert_eq!(m.d_align(), 128);
        assert_eq!(m.lr_discriminator / m.lr_adapter, 2.0);
        assert_eq!(m.task_classifier.output_dim(), 38);
        assert!(AlignmentModel::new(64, &AlignConfig::default(), GaBinning::default(), 0).is_err());
    }

    #[test]
    fn zero_adapter_gives_zero_vectors() {
        let m = model();
        let out = adapt(&m.adapter.zeroed(), &records(3, Domain::Source, 0.0)).unwrap();
        assert!(out.iter().all(|r| r.vector.iter().all(|&v| v == 0.0)));
        assert_eq!(out[1].meta.patch_id, "p1");
    }

    #[test]
    fn discriminator_loss_closed_forms() {
        // one linear layer: D(z) = w.z + b
        let mut d = Network::mlp(&[2, 1], &[Activation::Linear], &mut rng::rng_from(0)).unwrap();
        d.layers_mut()[0].weights.fill(0.0);
        d.layers_mut()[0].bias.fill(0.5);
        let zs = Array2::from_elem((3, 2), 1.0);
        let zt = Array2::from_elem((2, 2), -1.0);
        assert!((discriminator_loss(&d, zs.view(), zt.view()).unwrap().0 - 0.25).abs() < 1e-15);

        d.layers_mut()[0].weights.fill(0.25);
        assert_eq!(discriminator_loss(&d, zs.view(), zt.view()).unwrap().0, 0.0);
        assert!(matches!(
            discriminator_loss(&d, zs.slice(s![0..0, ..]), zt.view()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn lambda_zero_is_pure_classification() {
        let m = model();
        let src = SourceBatch::from_records(&records(5, Domain::Source, 0.0), &m.binning).unwrap();
        let tgt = target_matrix(&records(4, Domain::Target, 2.0)).unwrap();
        let l0 = adapter_loss(&m, &src, tgt.view(), 0.0, false).unwrap();
        assert_eq!(l0.total, l0.cls);
        // Classification-only gradient, computed directly.
        let (z, ca) = m.adapter.forward(src.x.view()).unwrap();
        let (logits, cc) = m.task_classifier.forward(z.view()).unwrap();
        let (_, g) = neuralnet::cross_entropy_softmax(logits.view(), &src.bins).unwrap();
        let gz = m.task_classifier.backward(&cc, g.view()).unwrap().input;
        let ga = m.adapter.backward(&ca, gz.view()).unwrap().params;
        assert_eq!(ga, l0.adapter_grads);
    }

    #[test]
    fn fooled_discriminator_has_zero_adversarial_loss() {
        let mut m = model();
        let last = m.discriminator.layers().len() - 1;
        m.discriminator.layers_mut()[last].weights.fill(0.0);
        m.discriminator.layers_mut()[last].bias.fill(1.0);
        let src = SourceBatch::from_records(&records(5, Domain::Source, 0.0), &m.binning).unwrap();
        let tgt = target_matrix(&records(4, Domain::Target, 2.0)).unwrap();
        assert_eq!(adapter_loss(&m, &src, tgt.view(), 1.0, false).unwrap().adv, 0.0);
    }

    #[test]
    fn target_records_are_refused_as_labeled_source() {
        let m = model();
        let err = SourceBatch::from_records(&records(3, Domain::Target, 0.0), &m.binning).unwrap_err();
        assert!(matches!(err, Error::GuardViolation(_)));
        assert!(target_matrix(&records(3, Domain::Source, 0.0)).is_err());
    }

    #[test]
    fn warmup_ramp() {
        assert_eq!(lambda_at(2.0, 0, 4), 0.5);
        assert_eq!(lambda_at(2.0, 3, 4), 2.0);
        assert_eq!(lambda_at(2.0, 10, 4), 2.0);
        assert_eq!(lambda_at(2.0, 0, 0), 2.0);
    }

    #[test]
    fn baseline_leaves_discriminator_at_init() {
        let m = model();
        let d0 = m.discriminator.clone();
        let trained = train(m, &records(12, Domain::Source, 0.0), &records(7, Domain::Target, 1.0), &small_config(), Mode::Baseline, 5).unwrap();
        assert_eq!(trained.discriminator.to_bytes(), d0.to_bytes());
        assert_eq!(trained.history.len(), 3);
        assert!(trained.history.iter().all(|h| h.lambda == 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            train(model(), &records(12, Domain::Source, 0.0), &records(7, Domain::Target, 1.0), &small_config(), Mode::Aligned, 5).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_ne!(a.discriminator, model().discriminator);
    }

    #[test]
    fn non_finite_input_aborts_with_checkpoint() {
        let mut tgt = records(7, Domain::Target, 1.0);
        tgt[2].vector[0] = f32::INFINITY;
        let err = train(model(), &records(12, Domain::Source, 0.0), &tgt, &small_config(), Mode::Aligned, 5).unwrap_err();
        assert!(matches!(err.cause, Error::Numeric(_)));
        assert_eq!(err.model.history.len(), err.epoch);
        assert!(matches!(Error::from(err), Error::Numeric(_)));
    }

    #[test]
    fn argmax_decoding() {
        let m = model();
        let mut logits = Array2::zeros((2, 5));
        logits[[0, 3]] = 4.0;
        logits[[1, 0]] = 1.0;
        assert_eq!(decode(&m, logits.view()).unwrap(), vec![23.0, 20.0]);
        let shifted = &logits + 100.0;
        assert_eq!(decode(&m, shifted.view()).unwrap(), vec![23.0, 20.0]);
        let ev = AlignmentModel { expected_value_decoding: true, ..m };
        let flat = Array2::zeros((1, 5));
        assert!((decode(&ev, flat.view()).unwrap()[0] - 22.0).abs() < 1e-12);
    }

    #[test]
    fn save_and_load() {
        let m = train(model(), &records(12, Domain::Source, 0.0), &records(7, Domain::Target, 1.0), &small_config(), Mode::Aligned, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let extra = ModelManifestExtra { seed: 5, epochs: 3, batch_size: 4, ..Default::default() };
        m.save(dir.path(), &extra).unwrap();
        let (back, extra_back) = AlignmentModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(extra_back, extra);
        let text = std::fs::read_to_string(dir.path().join("model.toml")).unwrap();
        assert!(text.contains("lr_ratio = 2.0"));
    }
}
