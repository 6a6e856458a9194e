use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tsalign_core::align::{self, AlignmentModel, Mode};
use tsalign_core::datamodel::{io, Domain, EmbeddingRecord, EncoderKind, RunConfig, TimeSeriesPatch};
use tsalign_core::encoder::{self, Encoder, PrecomputedEmbeddings};
use tsalign_core::identifier::{self, IdentifierModel};
use tsalign_core::pipeline::{self, RunManifest, StageTimer};
use tsalign_core::{cohortgen, fsutil, metrics, simulator, Error, Result};

use crate::{overrides, Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    let config = overrides::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let mut timer = StageTimer::default();
    match &cli.command {
        Command::Gen { out } => gen(&config, out, &mut timer),
        Command::Embed { patches, out, from_file } => embed(&config, patches, out, from_file.as_deref(), &mut timer),
        Command::TrainIdentifier { embeddings, out } => train_identifier(&config, embeddings, out, &mut timer),
        Command::Simulate { patches, identifier, out } => simulate(&config, patches, identifier, out, &mut timer),
        Command::Align { source, target, out, baseline } => {
            align_cmd(&config, source, target, out, *baseline, &mut timer)
        }
        Command::Eval { model, source, target, out } => eval(&config, model, source, target, out, &mut timer),
        Command::ReproFig3 { out } => repro_fig3(&config, out, &mut timer),
    }
}

fn parent(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

/// Record `files` and the stage timings in the manifest that lives in `dir`.
fn update_manifest(dir: &Path, command: &str, config: &RunConfig, files: &[PathBuf], timer: &StageTimer) -> Result<()> {
    let mut m = RunManifest::open(dir, command, config)?;
    for f in files {
        m.record_artifact(dir, f)?;
    }
    for (stage, secs) in &timer.stages {
        m.record_timing(stage, *secs);
    }
    m.save(&dir.join(pipeline::MANIFEST_FILE))
}

fn read_patches(path: &Path, config: &RunConfig) -> Result<Vec<TimeSeriesPatch>> {
    let patches = io::read_patches(path)?;
    if patches.is_empty() {
        return Err(Error::Config(format!("{} lists no patches", path.display())));
    }
    for p in &patches {
        p.check_length(config.patch_len())?;
    }
    Ok(patches)
}

fn read_embeddings(path: &Path, dim: usize) -> Result<Vec<EmbeddingRecord>> {
    let records = encoder::load_embeddings(path)?;
    if let Some(r) = records.iter().find(|r| r.vector.len() != dim) {
        return Err(Error::Shape(format!(
            "{}: `{}` has dimension {}, expected {dim}",
            path.display(),
            r.meta.patch_id,
            r.vector.len()
        )));
    }
    Ok(records)
}

fn gen(config: &RunConfig, out: &Path, timer: &mut StageTimer) -> Result<()> {
    let dir = parent(out);
    ensure_dir(&dir)?;
    let patches = timer.time("gen", || {
        cohortgen::generate_cohort(config.cohort.n_patients, config.cohort.patches_per_patient, config, config.seed)
    })?;
    io::write_patches(out, &patches)?;
    update_manifest(&dir, "gen", config, &[out.to_path_buf(), out.with_extension("tspx")], timer)
}

fn embed(config: &RunConfig, patches: &Path, out: &Path, from_file: Option<&Path>, timer: &mut StageTimer) -> Result<()> {
    let dir = parent(out);
    ensure_dir(&dir)?;
    let patches = read_patches(patches, config)?;
    let mut metadata = BTreeMap::new();
    let records = match (from_file, config.encoder.kind) {
        (Some(_), _) | (None, EncoderKind::FromFile) => {
            let file = from_file.ok_or_else(|| {
                Error::Config("encoder.kind = \"fromfile\" needs --from-file".into())
            })?;
            let (records, meta) = encoder::load_embeddings_with_metadata(file)?;
            if records.len() != patches.len() {
                return Err(Error::Shape(format!(
                    "{} holds {} embeddings for {} patches",
                    file.display(),
                    records.len(),
                    patches.len()
                )));
            }
            metadata.extend(meta.into_iter().filter(|(k, _)| k != "dim"));
            metadata.insert("encoder".into(), "fromfile".into());
            let lookup = PrecomputedEmbeddings::new(records)?;
            timer.time("embed", || lookup.embed_all(&patches))?
        }
        (None, EncoderKind::Surrogate) => {
            let enc = pipeline::surrogate(config)?;
            metadata.insert("encoder".into(), "surrogate".into());
            metadata.insert("surrogate_seed".into(), config.encoder.surrogate_seed.to_string());
            metadata.insert("pooling".into(), "mean".into());
            timer.time("embed", || enc.embed_all(&patches))?
        }
    };
    encoder::save_embeddings_with_metadata(&records, out, &metadata)?;
    update_manifest(&dir, "embed", config, &[out.to_path_buf(), encoder::manifest_path(out)], timer)
}

fn train_identifier(config: &RunConfig, embeddings: &Path, out: &Path, timer: &mut StageTimer) -> Result<()> {
    let dir = parent(out);
    ensure_dir(&dir)?;
    let records = read_embeddings(embeddings, config.encoder.d_embed)?;
    let model = timer.time("train-identifier", || identifier::train_identifier(&records, &config.identifier, config.seed))?;
    model.save(out)?;
    let r = &model.training_report;
    println!(
        "identifier: {} patients, held-out accuracy {:.4} over {} patches",
        model.label_set().len(),
        r.heldout_accuracy,
        r.heldout_count
    );
    let files = [out.with_extension("tsnn"), out.with_extension("labels.txt")];
    update_manifest(&dir, "train-identifier", config, &files, timer)
}

fn simulate(config: &RunConfig, patches: &Path, identifier: &Path, out: &Path, timer: &mut StageTimer) -> Result<()> {
    let dir = parent(out);
    ensure_dir(&dir)?;
    let patches = read_patches(patches, config)?;
    let scorer = IdentifierModel::load(identifier)?;
    let enc = pipeline::surrogate(config)?;
    if scorer.input_dim() != enc.dim() {
        return Err(Error::Shape(format!(
            "identifier expects {}-d embeddings, encoder produces {}",
            scorer.input_dim(),
            enc.dim()
        )));
    }
    let (targets, traces) =
        timer.time("simulate", || simulator::simulate_all(&patches, &scorer, &enc, &config.simulator, config.seed))?;
    io::write_patches(out, &targets)?;
    let trace_path = out.with_extension("traces.jsonl");
    simulator::write_traces(&trace_path, &traces)?;
    let summary = pipeline::AnonymizationSummary::from_traces(&traces, config.simulator.n_max);
    println!(
        "simulate: {}/{} patches reached the threshold, max iterations {}",
        summary.reached_threshold, summary.patches, summary.max_iterations
    );
    update_manifest(&dir, "simulate", config, &[out.to_path_buf(), out.with_extension("tspx"), trace_path], timer)
}

fn load_pair(config: &RunConfig, source: &Path, target: &Path) -> Result<(Vec<EmbeddingRecord>, Vec<EmbeddingRecord>)> {
    let src = read_embeddings(source, config.encoder.d_embed)?;
    let tgt = read_embeddings(target, config.encoder.d_embed)?;
    if let Some(r) = src.iter().find(|r| r.meta.domain != Domain::Source) {
        return Err(Error::Config(format!("{}: `{}` is not a source record", source.display(), r.meta.patch_id)));
    }
    if let Some(r) = tgt.iter().find(|r| r.meta.domain != Domain::Target) {
        return Err(Error::Config(format!("{}: `{}` is not a target record", target.display(), r.meta.patch_id)));
    }
    Ok((src, tgt))
}

fn align_cmd(config: &RunConfig, source: &Path, target: &Path, out: &Path, baseline: bool, timer: &mut StageTimer) -> Result<()> {
    ensure_dir(out)?;
    let (src, tgt) = load_pair(config, source, target)?;
    let split = pipeline::patient_split(&src, config)?;
    let (src_train, _) = split.partition(&src);
    let (tgt_train, _) = split.partition(&tgt);
    let mode = if baseline { Mode::Baseline } else { Mode::Aligned };
    let model = AlignmentModel::new(config.encoder.d_embed, &config.align, config.binning()?, config.seed)?;
    let stage = if baseline { "align-baseline" } else { "align-adversarial" };
    let model = timer.time(stage, || Ok(align::train(model, &src_train, &tgt_train, &config.align, mode, config.seed)?))?;
    model.save(out, &pipeline::model_extra(config, baseline))?;
    if let Some(last) = model.history.last() {
        println!(
            "{stage}: {} epochs, final l_cls {:.4} l_adv {:.4} l_disc {:.4}",
            model.history.len(),
            last.l_cls,
            last.l_adv,
            last.l_disc
        );
    }
    let files: Vec<PathBuf> = ["adapter.tsnn", "discriminator.tsnn", "classifier.tsnn", "model.toml", "history.csv"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    update_manifest(out, stage, config, &files, timer)
}

fn eval(config: &RunConfig, model: &Path, source: &Path, target: &Path, out: &Path, timer: &mut StageTimer) -> Result<()> {
    ensure_dir(out)?;
    let (model, extra) = AlignmentModel::load(model)?;
    let (src, tgt) = load_pair(config, source, target)?;
    if model.d_embed() != config.encoder.d_embed {
        return Err(Error::Shape(format!(
            "model expects {}-d embeddings, config says {}",
            model.d_embed(),
            config.encoder.d_embed
        )));
    }
    let split = pipeline::patient_split(&src, config)?;
    let (_, src_eval) = split.partition(&src);
    let (_, tgt_eval) = split.partition(&tgt);
    let label = if extra.baseline { "baseline" } else { "aligned" };
    let report = timer.time("eval", || metrics::evaluate(label, &model, &src_eval, &tgt_eval, &config.metrics, config.seed))?;
    let mut aligned = align::adapt(&model.adapter, &src_eval)?;
    aligned.extend(align::adapt(&model.adapter, &tgt_eval)?);

    let files = [
        (out.join("report.txt"), report.to_table()),
        (out.join("report.csv"), report.to_csv()),
        (out.join("projection.csv"), metrics::projection_text(&aligned)?),
    ];
    for (path, text) in &files {
        fsutil::atomic_write(path, text.as_bytes())?;
    }
    print!("{}", report.to_table());
    let paths: Vec<PathBuf> = files.into_iter().map(|(p, _)| p).collect();
    update_manifest(out, "eval", config, &paths, timer)
}

fn repro_fig3(config: &RunConfig, out: &Path, timer: &mut StageTimer) -> Result<()> {
    let exp = pipeline::run_experiment(config, timer)?;
    pipeline::write_experiment(&exp, config, out, timer)?;
    print!("{}", pipeline::summary_text(&exp.outcome));
    println!("total {:.1}s, artifacts in {}", timer.total(), out.display());
    Ok(())
}
