//! Stage wiring shared by the command-line tool and the acceptance suite:
//! the end-to-end label-transfer experiment, its plain-text summary, and the
//! run manifest that records every artifact with its hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::align::{self, AlignmentModel, Mode, ModelManifestExtra};
use crate::cohortgen;
use crate::datamodel::{self, EmbeddingRecord, EncoderKind, PatientSplit, RunConfig, TimeSeriesPatch};
use crate::encoder::{Encoder, SurrogateEncoder};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::identifier::{self, IdentifierModel};
use crate::metrics::{self, EvaluationReport, Separation};
use crate::simulator::{self, SimulationTrace};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// The surrogate encoder for `config`. Stages that must embed new values
/// (simulation, target embedding) cannot run on precomputed vectors.
pub fn surrogate(config: &RunConfig) -> Result<SurrogateEncoder> {
    if config.encoder.kind != EncoderKind::Surrogate {
        return Err(Error::Config(
            "this stage embeds new values and needs encoder.kind = \"surrogate\"".into(),
        ));
    }
    SurrogateEncoder::from_config(&config.encoder, config.patch_len())
}

/// Patient-level train/eval split, drawn from the ids in `records`.
pub fn patient_split<T: datamodel::HasPatient>(records: &[T], config: &RunConfig) -> Result<PatientSplit> {
    PatientSplit::new(records.iter().map(|r| r.patient_id()), config.data.eval_fraction, config.seed)
}

/// Wall-clock seconds per stage, in execution order.
#[derive(Debug, Default, Clone)]
pub struct StageTimer {
    pub stages: Vec<(String, f64)>,
}

impl StageTimer {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.stages.push((stage.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, s)| s).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnonymizationSummary {
    pub patches: usize,
    /// Patches whose final score is at most `(1 - delta) * s_base`.
    pub reached_threshold: usize,
    pub max_iterations: usize,
    pub n_max: usize,
    pub schedules_increasing: bool,
}

impl AnonymizationSummary {
    pub fn from_traces(traces: &[SimulationTrace], n_max: usize) -> Self {
        Self {
            patches: traces.len(),
            reached_threshold: traces
                .iter()
                .filter(|t| t.anonymization.final_score <= t.anonymization.s_thresh)
                .count(),
            max_iterations: traces.iter().map(|t| t.anonymization.iterations_used).max().unwrap_or(0),
            n_max,
            schedules_increasing: traces
                .iter()
                .all(|t| t.anonymization.noise_scales.windows(2).all(|w| w[1] > w[0])),
        }
    }
}

/// Everything the label-transfer experiment produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub source_patches: Vec<TimeSeriesPatch>,
    pub target_patches: Vec<TimeSeriesPatch>,
    pub traces: Vec<SimulationTrace>,
    pub identifier: IdentifierModel,
    pub source_embeddings: Vec<EmbeddingRecord>,
    pub target_embeddings: Vec<EmbeddingRecord>,
    pub split: PatientSplit,
    pub baseline_model: AlignmentModel,
    pub aligned_model: AlignmentModel,
    pub outcome: Outcome,
}

/// The numbers behind the summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub seed: u64,
    /// Identifier top-1 accuracy on the clean source patches.
    pub identifier_clean_accuracy: f64,
    /// The same identifier on their simulated target versions.
    pub identifier_target_accuracy: f64,
    pub anonymization: AnonymizationSummary,
    /// Scores on every raw embedding, source and target.
    pub raw: Separation,
    pub baseline: EvaluationReport,
    pub aligned: EvaluationReport,
    /// Target label reads counted while both models trained.
    pub training_label_reads: u64,
}

/// gen, embed, train-identifier, simulate, embed targets, split, align
/// (baseline and adversarial) and evaluate.
pub fn run_experiment(config: &RunConfig, timer: &mut StageTimer) -> Result<Experiment> {
    config.validate()?;
    let seed = config.seed;
    let encoder = surrogate(config)?;

    let source_patches = timer.time("gen", || {
        cohortgen::generate_cohort(config.cohort.n_patients, config.cohort.patches_per_patient, config, seed)
    })?;
    let source_embeddings = timer.time("embed-source", || encoder.embed_all(&source_patches))?;
    let identifier =
        timer.time("train-identifier", || identifier::train_identifier(&source_embeddings, &config.identifier, seed))?;
    let (target_patches, traces) = timer.time("simulate", || {
        simulator::simulate_all(&source_patches, &identifier, &encoder, &config.simulator, seed)
    })?;
    let target_embeddings = timer.time("embed-target", || encoder.embed_all(&target_patches))?;

    let split = patient_split(&source_embeddings, config)?;
    let (src_train, src_eval) = split.partition(&source_embeddings);
    let (tgt_train, tgt_eval) = split.partition(&target_embeddings);

    let binning = config.binning()?;
    datamodel::reset_target_label_reads();
    let train = |mode: Mode| -> Result<AlignmentModel> {
        let model = AlignmentModel::new(encoder.dim(), &config.align, binning, seed)?;
        Ok(align::train(model, &src_train, &tgt_train, &config.align, mode, seed)?)
    };
    let baseline_model = timer.time("align-baseline", || train(Mode::Baseline))?;
    let aligned_model = timer.time("align-adversarial", || train(Mode::Aligned))?;
    let training_label_reads = datamodel::target_label_reads();

    let outcome = timer.time("eval", || {
        let mut raw = source_embeddings.clone();
        raw.extend(target_embeddings.iter().cloned());
        Ok(Outcome {
            seed,
            identifier_clean_accuracy: identifier.accuracy(&source_embeddings)?,
            identifier_target_accuracy: identifier.accuracy(&target_embeddings)?,
            anonymization: AnonymizationSummary::from_traces(&traces, config.simulator.n_max),
            raw: metrics::separation(&raw, &config.metrics, seed)?,
            baseline: metrics::evaluate("baseline", &baseline_model, &src_eval, &tgt_eval, &config.metrics, seed)?,
            aligned: metrics::evaluate("aligned", &aligned_model, &src_eval, &tgt_eval, &config.metrics, seed)?,
            training_label_reads,
        })
    })?;

    Ok(Experiment {
        source_patches,
        target_patches,
        traces,
        identifier,
        source_embeddings,
        target_embeddings,
        split,
        baseline_model,
        aligned_model,
        outcome,
    })
}

/// The four-cell MAE table and the domain-mixing rows, as plain text.
pub fn summary_text(o: &Outcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seed {}", o.seed);
    let _ = writeln!(out);
    let _ = writeln!(out, "GA MAE (weeks), held-out patients");
    let _ = writeln!(out, "  {:<10} {:>10} {:>10} {:>15}", "model", "source", "target", "target/source");
    for r in [&o.baseline, &o.aligned] {
        let _ = writeln!(
            out,
            "  {:<10} {:>10.4} {:>10.4} {:>15.4}",
            r.label,
            r.mae_source_weeks,
            r.mae_target_weeks,
            r.mae_ratio()
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "domain mixing (k = {})", o.aligned.knn_k);
    let _ = writeln!(out, "  {:<30} {:>10} {:>10} {:>10}", "embeddings", "entropy", "ARI", "probe AUC");
    let rows = [
        ("raw, all records", &o.raw),
        ("baseline adapter, held-out", &o.baseline.separation),
        ("aligned adapter, held-out", &o.aligned.separation),
    ];
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "  {:<30} {:>10.4} {:>10.4} {:>10.4}",
            name, s.mixing_entropy, s.ari, s.domain_probe_auc
        );
    }
    let _ = writeln!(out);
    let a = &o.anonymization;
    let _ = writeln!(
        out,
        "identifier top-1: clean {:.4}, simulated {:.4}",
        o.identifier_clean_accuracy, o.identifier_target_accuracy
    );
    let _ = writeln!(
        out,
        "anonymization: {}/{} patches reached the threshold, max iterations {} (cap {}), schedules increasing: {}",
        a.reached_threshold, a.patches, a.max_iterations, a.n_max, a.schedules_increasing
    );
    let _ = writeln!(out, "discriminator accuracy, aligned held-out: {:.4}", o.aligned.discriminator_accuracy);
    let _ = writeln!(out, "target label reads during training: {}", o.training_label_reads);
    out
}

/// Files written by [`write_experiment`] that must be identical across runs
/// with the same config.
pub const REPORT_FILES: [&str; 7] = [
    "summary.txt",
    "baseline_report.txt",
    "baseline_report.csv",
    "aligned_report.txt",
    "aligned_report.csv",
    "projection_raw.csv",
    "projection_aligned.csv",
];

/// Write reports and models into `dir` and return the manifest describing
/// them. Timings go to the manifest only, so the reports stay reproducible.
pub fn write_experiment(exp: &Experiment, config: &RunConfig, dir: &Path, timer: &StageTimer) -> Result<RunManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let o = &exp.outcome;
    let mut raw = exp.source_embeddings.clone();
    raw.extend(exp.target_embeddings.iter().cloned());
    let (src_eval, tgt_eval) = (
        exp.split.partition(&exp.source_embeddings).1,
        exp.split.partition(&exp.target_embeddings).1,
    );
    let mut aligned = align::adapt(&exp.aligned_model.adapter, &src_eval)?;
    aligned.extend(align::adapt(&exp.aligned_model.adapter, &tgt_eval)?);

    let texts = [
        summary_text(o),
        o.baseline.to_table(),
        o.baseline.to_csv(),
        o.aligned.to_table(),
        o.aligned.to_csv(),
        metrics::projection_text(&raw)?,
        metrics::projection_text(&aligned)?,
    ];
    let mut manifest = RunManifest::new("repro-fig3", config);
    for (name, text) in REPORT_FILES.iter().zip(texts) {
        let path = dir.join(name);
        fsutil::atomic_write(&path, text.as_bytes())?;
        manifest.record_artifact(dir, &path)?;
    }
    simulator::write_traces(&dir.join("traces.jsonl"), &exp.traces)?;
    manifest.record_artifact(dir, &dir.join("traces.jsonl"))?;
    for (name, model, baseline) in [
        ("model_baseline", &exp.baseline_model, true),
        ("model_aligned", &exp.aligned_model, false),
    ] {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        model.save(&sub, &model_extra(config, baseline))?;
        for file in ["adapter.tsnn", "discriminator.tsnn", "classifier.tsnn", "model.toml", "history.csv"] {
            manifest.record_artifact(dir, &sub.join(file))?;
        }
    }
    for (stage, secs) in &timer.stages {
        manifest.record_timing(stage, *secs);
    }
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn model_extra(config: &RunConfig, baseline: bool) -> ModelManifestExtra {
    ModelManifestExtra {
        seed: config.seed,
        baseline,
        symmetric_adversarial: config.align.symmetric_adversarial,
        epochs: config.align.epochs,
        batch_size: config.align.batch_size,
    }
}

/// One run's provenance: the full config, the hash of every file written,
/// and how long each stage took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    /// Path relative to the manifest's directory, mapped to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
            config: config.clone(),
        }
    }

    /// The manifest in `dir` if there is one; otherwise a fresh one. The
    /// command, seed and config are replaced by the current run's.
    pub fn open(dir: &Path, command: &str, config: &RunConfig) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(command, config));
        }
        let mut m = Self::load(&path)?;
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        m.command = command.to_string();
        m.seed = config.seed;
        m.config = config.clone();
        Ok(m)
    }

    pub fn record_artifact(&mut self, root: &Path, path: &Path) -> Result<()> {
        let key = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.artifacts.insert(key, fsutil::sha256_file(path)?);
        Ok(())
    }

    pub fn record_timing(&mut self, stage: &str, secs: f64) {
        self.timings.insert(stage.to_string(), secs);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fsutil::atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(fsutil::read(path)?)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().replace('\n', " "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_with_config_echo() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.txt");
        fsutil::atomic_write(&file, b"abc").unwrap();
        let mut cfg = RunConfig::default();
        cfg.simulator.sigma = Some(3.0);
        let mut m = RunManifest::new("gen", &cfg);
        m.record_artifact(dir.path(), &file).unwrap();
        m.record_timing("gen", 0.5);
        m.save(&dir.path().join(MANIFEST_FILE)).unwrap();
        let back = RunManifest::open(dir.path(), "gen", &cfg).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.artifacts["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn surrogate_is_required_for_embedding_stages() {
        let mut cfg = RunConfig::default();
        cfg.encoder.kind = EncoderKind::FromFile;
        assert!(matches!(surrogate(&cfg), Err(Error::Config(_))));
    }
}
