use tsalign_core::datamodel::{Domain, RunConfig};
use tsalign_core::encoder::{Encoder, SurrogateEncoder};
use tsalign_core::identifier::{self, PatientScorer};
use tsalign_core::metrics::{self, matrix_and_tags};
use tsalign_core::{cohortgen, simulator};

fn config() -> RunConfig {
    let mut c = RunConfig::default();
    c.cohort.n_patients = 20;
    c.cohort.patches_per_patient = 6;
    c
}

#[test]
fn identifier_learns_twenty_patients_and_loses_them_on_targets() {
    let cfg = config();
    let patches = cohortgen::generate_cohort(20, 6, &cfg, 11).unwrap();
    let enc = SurrogateEncoder::from_config(&cfg.encoder, cfg.patch_len()).unwrap();
    let src = enc.embed_all(&patches).unwrap();
    let id = identifier::train_identifier(&src, &cfg.identifier, 11).unwrap();

    let chance = 1.0 / 20.0;
    assert!(id.training_report.heldout_accuracy > 5.0 * chance, "{:?}", id.training_report);
    let mean_score = src
        .iter()
        .map(|r| id.probability(&r.vector, &r.meta.patient_id).unwrap())
        .sum::<f64>()
        / src.len() as f64;
    assert!(mean_score > chance, "mean true-patient score {mean_score}");

    let (targets, traces) = simulator::simulate_all(&patches, &id, &enc, &cfg.simulator, 11).unwrap();
    assert!(traces.iter().all(|t| t.anonymization.iterations_used <= cfg.simulator.n_max));
    let tgt = enc.embed_all(&targets).unwrap();
    let clean = id.accuracy(&src).unwrap();
    let obfuscated = id.accuracy(&tgt).unwrap();
    assert!(obfuscated < 0.5 * clean, "clean {clean}, targets {obfuscated}");
}

#[test]
fn raw_embeddings_carry_domain_and_label() {
    let cfg = config();
    let patches = cohortgen::generate_cohort(20, 6, &cfg, 5).unwrap();
    let enc = SurrogateEncoder::from_config(&cfg.encoder, cfg.patch_len()).unwrap();
    let src = enc.embed_all(&patches).unwrap();
    let id = identifier::train_identifier(&src, &cfg.identifier, 5).unwrap();
    let (targets, _) = simulator::simulate_all(&patches, &id, &enc, &cfg.simulator, 5).unwrap();
    let tgt = enc.embed_all(&targets).unwrap();

    // Logistic domain probe, read out as accuracy at its 0.5 threshold.
    let mut both = src.clone();
    both.extend(tgt.iter().cloned());
    let (x, tags) = matrix_and_tags(&both).unwrap();
    let auc = metrics::domain_probe_auc(x.view(), &tags, 5).unwrap();
    assert!(auc > 0.9, "probe auc {auc}");
    assert!(tgt.iter().all(|r| r.meta.domain == Domain::Target));

    // Least-squares readout of the label from source embeddings.
    let (xs, _) = matrix_and_tags(&src).unwrap();
    let y: Vec<f64> = src.iter().map(|r| f64::from(r.meta.ga_weeks().unwrap())).collect();
    let r = ridge_fit_correlation(&xs, &y, 1e-3);
    assert!(r.abs() > 0.3, "readout r {r}");
}

/// In-sample correlation of a ridge readout, solved on the normal equations.
fn ridge_fit_correlation(x: &ndarray::Array2<f64>, y: &[f64], ridge: f64) -> f64 {
    let (n, d) = x.dim();
    let a = nalgebra::DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { x[[i, j]] });
    let b = nalgebra::DVector::from_column_slice(y);
    let mut gram = a.transpose() * &a;
    for k in 0..d {
        gram[(k, k)] += ridge;
    }
    let w = gram.cholesky().expect("ridge gram is positive definite").solve(&(a.transpose() * &b));
    let pred: Vec<f64> = (a * w).iter().copied().collect();
    let mp = pred.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let cov: f64 = pred.iter().zip(y).map(|(p, t)| (p - mp) * (t - my)).sum();
    let sp = pred.iter().map(|p| (p - mp).powi(2)).sum::<f64>().sqrt();
    let sy = y.iter().map(|t| (t - my).powi(2)).sum::<f64>().sqrt();
    cov / (sp * sy)
}
