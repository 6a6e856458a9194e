use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsalign_core::datamodel::{Domain, RecordMeta, SimulatorConfig, TimeSeriesPatch};
use tsalign_core::encoder::Encoder;
use tsalign_core::identifier::PatientScorer;
use tsalign_core::simulator::{self, AnonymizeParams};
use tsalign_core::Result;

/// One-number "embedding": the series' standard deviation.
struct Spread;

impl Encoder for Spread {
    fn dim(&self) -> usize {
        1
    }
    fn embed_values(&self, values: &[f64]) -> Result<Vec<f32>> {
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        Ok(vec![(values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt() as f32])
    }
}

/// Confidence falls as the spread grows past a reference.
struct SpreadScorer(f64);

impl PatientScorer for SpreadScorer {
    fn knows(&self, id: &str) -> bool {
        id == "P1"
    }
    fn probability(&self, embedding: &[f32], _: &str) -> Result<f64> {
        Ok(1.0 / (1.0 + (f64::from(embedding[0]) / self.0).powi(4)))
    }
}

fn patch(values: Vec<f64>) -> TimeSeriesPatch {
    TimeSeriesPatch::new(values, RecordMeta::new("P1-d000", "P1", Domain::Source, Some(30), 0)).unwrap()
}

fn wave(n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (1.0 + (i as f64 / 40.0).sin())).collect()
}

#[test]
fn smoothing_uses_truncated_windows_at_the_edges() {
    assert_eq!(simulator::smooth(&[0.0, 3.0, 0.0], 3).unwrap(), vec![1.5, 1.0, 1.5]);
}

#[test]
fn smoothing_reduces_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<f64> = (0..2000).map(|_| rand::Rng::random_range(&mut rng, 0.0..100.0)).collect();
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    for w in [31, 61, 121] {
        assert!(var(&simulator::smooth(&values, w).unwrap()) < var(&values));
    }
}

#[test]
fn mask_share_lands_in_the_expected_band() {
    let values = vec![1.0; 10080];
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, count) = simulator::mask(&values, 0.2, 1, 120, &mut rng).unwrap();
        let zeros = out.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, count, "runs overlapped");
        let share = zeros as f64 / 10080.0;
        assert!((0.2..=0.2119).contains(&share), "share {share}");
    }
}

#[test]
fn calibrated_sigma_reaches_half_the_base_score() {
    let config = SimulatorConfig::default();
    let mut reached = 0;
    for k in 0..20 {
        let p = patch(wave(600, 10.0 + k as f64));
        let sigma = simulator::resolve_sigma(&config, &p.values);
        let scorer = SpreadScorer(simulator_spread(&p.values));
        let params = AnonymizeParams { delta: 0.5, n_max: 50, sigma };
        let (_, trace) = simulator::anonymize(&p, &scorer, &Spread, params, k).unwrap();
        reached += usize::from(trace.final_score <= 0.5 * trace.s_base);
    }
    assert!(reached >= 18);
}

fn simulator_spread(values: &[f64]) -> f64 {
    f64::from(Spread.embed_values(values).unwrap()[0])
}

#[test]
fn targets_drop_identity_and_seal_labels() {
    let config = SimulatorConfig::default();
    let p = patch(wave(1440, 50.0));
    let scorer = SpreadScorer(simulator_spread(&p.values));
    let (t, trace) = simulator::simulate_target(&p, &scorer, &Spread, &config, 9).unwrap();
    assert_eq!(t.meta.domain, Domain::Target);
    assert_eq!(t.meta.patient_id, "P1");
    assert_eq!(t.len(), p.len());
    assert!(trace.masked_fraction >= config.mask_fraction);
    assert_eq!(trace.steps, simulator::PIPELINE_STEPS);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn anonymization_trace_invariants(
        amp in 1.0f64..100.0,
        delta in 0.0f64..=1.0,
        n_max in 1usize..30,
        sigma in 0.01f64..20.0,
        seed in any::<u64>(),
    ) {
        let p = patch(wave(300, amp));
        let scorer = SpreadScorer(simulator_spread(&p.values));
        let params = AnonymizeParams { delta, n_max, sigma };
        let (out, trace) = simulator::anonymize(&p, &scorer, &Spread, params, seed).unwrap();
        prop_assert_eq!(trace.s_thresh, trace.s_base * (1.0 - delta));
        prop_assert!(trace.iterations_used <= n_max);
        prop_assert_eq!(trace.noise_scales.len(), trace.iterations_used);
        prop_assert!(trace.noise_scales.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(trace.final_score <= trace.s_thresh || trace.iterations_used == n_max);
        prop_assert!(out.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn rescale_ratio_equals_drawn_factor(
        values in prop::collection::vec(0.1f64..500.0, 2..200),
        lo in 0.1f64..1.0,
        width in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, factor) = simulator::rescale(&values, [lo, lo + width], &mut rng).unwrap();
        prop_assert!(factor >= lo && factor <= lo + width);
        let ratio = out.iter().sum::<f64>() / values.iter().sum::<f64>();
        prop_assert!((ratio - factor).abs() < 1e-9);
    }

    #[test]
    fn masked_runs_are_disjoint_and_cover_the_target(
        len in 200usize..3000,
        fraction in 0.0f64..0.6,
        min_run in 1usize..40,
        extra in 0usize..80,
        seed in any::<u64>(),
    ) {
        let max_run = (min_run + extra).min(len);
        let values = vec![2.0; len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, count) = simulator::mask(&values, fraction, min_run, max_run, &mut rng).unwrap();
        let zeros = out.iter().filter(|&&v| v == 0.0).count();
        prop_assert_eq!(zeros, count);
        prop_assert!(count >= (fraction * len as f64).ceil() as usize);
        prop_assert!(count < (fraction * len as f64).ceil() as usize + max_run);
    }

    #[test]
    fn smoothing_stays_within_input_range(
        values in prop::collection::vec(0.0f64..1000.0, 5..300),
        half in 0usize..10,
    ) {
        let w = (2 * half + 1).min(if values.len() % 2 == 0 { values.len() - 1 } else { values.len() });
        let out = simulator::smooth(&values, w).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(out.len(), values.len());
        prop_assert!(out.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
    }
}
