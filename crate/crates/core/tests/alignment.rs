use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsalign_core::align::{self, AlignmentModel, Mode};
use tsalign_core::datamodel::{self, AlignConfig, Domain, EmbeddingRecord, GaBinning, RecordMeta};
use tsalign_core::metrics::mae_weeks;

const DIM: usize = 12;

fn small_config() -> AlignConfig {
    AlignConfig {
        d_align: 6,
        adapter_hidden: 16,
        discriminator_hidden: 8,
        classifier_hidden: 12,
        batch_size: 16,
        epochs: 4,
        ..AlignConfig::default()
    }
}

/// Records whose first coordinate tracks the week; targets are shifted.
fn records(n: usize, domain: Domain, seed: u64, label: impl Fn(usize) -> Option<u16>) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let week = 25 + (i % 16) as u16;
            let shift = if domain == Domain::Target { 0.8 } else { 0.0 };
            let vector = (0..DIM)
                .map(|j| {
                    let signal = if j == 0 { (f64::from(week) - 32.0) / 8.0 } else { 0.0 };
                    (signal + shift + rng.random_range(-0.1..0.1)) as f32
                })
                .collect();
            let tag = if domain == Domain::Target { "T" } else { "S" };
            EmbeddingRecord {
                vector,
                meta: RecordMeta::new(format!("{tag}{i}"), format!("P{}", i / 4), domain, label(i), 0),
            }
        })
        .collect()
}

fn model_bytes(model: &AlignmentModel) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), &Default::default()).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn train(target: &[EmbeddingRecord], seed: u64) -> AlignmentModel {
    let cfg = small_config();
    let source = records(48, Domain::Source, 1, |i| Some(25 + (i % 16) as u16));
    let model = AlignmentModel::new(DIM, &cfg, GaBinning::default(), seed).unwrap();
    align::train(model, &source, target, &cfg, Mode::Aligned, seed).unwrap()
}

#[test]
fn target_labels_never_reach_training() {
    let sealed = records(40, Domain::Target, 2, |i| Some(25 + (i % 16) as u16));
    let unlabeled = records(40, Domain::Target, 2, |_| None);
    datamodel::reset_target_label_reads();
    let a = train(&sealed, 3);
    assert_eq!(datamodel::target_label_reads(), 0);
    let b = train(&unlabeled, 3);
    assert_eq!(model_bytes(&a), model_bytes(&b));
}

#[test]
fn discriminator_rate_defaults_to_twice_adapter_rate() {
    let cfg = AlignConfig { lr_adapter: 3e-4, ..AlignConfig::default() };
    let model = AlignmentModel::new(256, &cfg, GaBinning::default(), 0).unwrap();
    assert_eq!(model.lr_discriminator, 2.0 * model.lr_adapter);
    assert_eq!(model.d_align(), 128);
}

#[test]
fn baseline_beats_the_median_predictor_on_held_out_source() {
    let mut cfg = small_config();
    cfg.epochs = 150;
    let all = records(160, Domain::Source, 8, |i| Some(25 + (i % 16) as u16));
    let (train_set, held_out) = datamodel::split_by_patient(&all, 0.25, 8).unwrap();
    let target = records(32, Domain::Target, 9, |_| None);
    let model = AlignmentModel::new(DIM, &cfg, GaBinning::default(), 8).unwrap();
    let model = align::train(model, &train_set, &target, &cfg, Mode::Baseline, 8).unwrap();

    let truth: Vec<f64> = held_out.iter().map(|r| f64::from(r.meta.ga_weeks().unwrap())).collect();
    let mut train_weeks: Vec<f64> = train_set.iter().map(|r| f64::from(r.meta.ga_weeks().unwrap())).collect();
    train_weeks.sort_by(f64::total_cmp);
    let median = train_weeks[train_weeks.len() / 2];
    let median_mae = mae_weeks(&vec![median; truth.len()], &truth).unwrap();
    let model_mae = mae_weeks(&align::predict_ga(&model, &held_out).unwrap(), &truth).unwrap();
    assert!(model_mae < median_mae, "model {model_mae}, median {median_mae}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn any_sealed_target_labels_give_the_same_model(weeks in prop::collection::vec(20u16..=57, 40)) {
        let labeled = records(40, Domain::Target, 2, |i| Some(weeks[i]));
        let unlabeled = records(40, Domain::Target, 2, |_| None);
        prop_assert_eq!(model_bytes(&train(&labeled, 12)), model_bytes(&train(&unlabeled, 12)));
    }

    #[test]
    fn argmax_ignores_constant_logit_shifts(
        logits in prop::collection::vec(-20.0f64..20.0, 38 * 3),
        shift in -100.0f64..100.0,
    ) {
        let model = AlignmentModel::new(DIM, &small_config(), GaBinning::default(), 0).unwrap();
        let a = Array2::from_shape_vec((3, 38), logits).unwrap();
        let b = &a + shift;
        prop_assert_eq!(align::decode(&model, a.view()).unwrap(), align::decode(&model, b.view()).unwrap());
    }
}
