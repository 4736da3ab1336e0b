use proptest::prelude::*;

use caprecap_core::identification::{dr_summand, efficiency_bound, remainder_bound, remainder_r2, EfficiencyBoundInput};
use caprecap_core::model::{validate_dataset, QProbs};
use caprecap_core::rng::keyed_rng;
use caprecap_core::simulation::{run_replication, sample_population, SimConfig};

/// Outcomes `(y1, y2)` of an observed unit with their probabilities.
fn outcomes(q: &QProbs) -> [((f64, f64), f64); 4] {
    [
        ((1.0, 1.0), q.q12()),
        ((1.0, 0.0), q.q1() - q.q12()),
        ((0.0, 1.0), q.q2() - q.q12()),
        ((0.0, 0.0), q.q0()),
    ]
}

/// Coherent triple with `gamma <= 1`, allowing units seen on neither of the
/// first two lists.
fn triple() -> impl Strategy<Value = QProbs> {
    (0.05f64..1.0, 0.05f64..1.0, 0.05f64..=1.0)
        .prop_map(|(q1, q2, g)| (q1, q2, g * q1 * q2))
        .prop_filter("coherent", |&(q1, q2, q12)| q1 + q2 - q12 <= 1.0 && q12 > 1e-3)
        .prop_map(|(q1, q2, q12)| QProbs::new(q1, q2, q12).unwrap())
}

/// Two-list truth: every observed unit is on list 1 or list 2.
fn two_list_truth() -> impl Strategy<Value = QProbs> {
    (0.1f64..=1.0, 0.1f64..=1.0)
        .prop_filter("positive overlap", |&(q1, q2)| q1 + q2 - 1.0 > 0.02)
        .prop_map(|(q1, q2)| QProbs::new(q1, q2, q1 + q2 - 1.0).unwrap())
}

/// Estimate with unclamped `gamma`.
fn estimate() -> impl Strategy<Value = QProbs> {
    (0.05f64..=1.0, 0.05f64..=1.0, 0.05f64..=1.0)
        .prop_map(|(q1, q2, g)| QProbs::from_estimates(q1, q2, g * q1 * q2).unwrap())
}

fn rows() -> impl Strategy<Value = Vec<(Vec<f64>, Vec<f64>)>> {
    (2usize..5, 0usize..4).prop_flat_map(|(k, d)| {
        let y = prop::collection::vec(prop::bool::ANY, k)
            .prop_filter("captured", |b| b.iter().any(|&v| v))
            .prop_map(|b| b.into_iter().map(|v| if v { 1.0 } else { 0.0 }).collect::<Vec<f64>>());
        let x = prop::collection::vec(-1e6f64..1e6, d);
        prop::collection::vec((y, x), 1..40)
    })
}

proptest! {
    #[test]
    fn dataset_round_trips(rows in rows()) {
        let ds = validate_dataset(&rows).unwrap();
        prop_assert_eq!(ds.n_observed(), rows.len());
        prop_assert_eq!(ds.to_rows(), rows);
    }

    #[test]
    fn summand_is_conditionally_unbiased(q in triple()) {
        let m: f64 = outcomes(&q).iter().map(|&((y1, y2), p)| p * dr_summand(y1, y2, &q)).sum();
        prop_assert!((m - 1.0 / q.gamma()).abs() <= 1e-9 * (1.0 / q.gamma()));
    }

    #[test]
    fn bound_matches_enumerated_variance(qs in prop::collection::vec(triple(), 1..8)) {
        let psi_inv = qs.iter().map(|q| 1.0 / q.gamma()).sum::<f64>() / qs.len() as f64;
        let enumerated = qs
            .iter()
            .map(|q| {
                outcomes(q)
                    .iter()
                    .map(|&((y1, y2), p)| p * (dr_summand(y1, y2, q) - psi_inv).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / qs.len() as f64;
        let bound = efficiency_bound(&EfficiencyBoundInput::uniform(qs).unwrap()).unwrap();
        prop_assert!((bound - enumerated).abs() <= 1e-9 * enumerated.max(1.0), "{} vs {}", bound, enumerated);
    }

    #[test]
    fn remainder_is_the_bias_of_the_summand(pairs in prop::collection::vec((two_list_truth(), estimate()), 1..8)) {
        let (truth, est): (Vec<QProbs>, Vec<QProbs>) = pairs.into_iter().unzip();
        let n = truth.len() as f64;
        let bias = truth
            .iter()
            .zip(&est)
            .map(|(q, e)| {
                let mean: f64 = outcomes(q).iter().map(|&((y1, y2), p)| p * dr_summand(y1, y2, e)).sum();
                mean - 1.0 / q.gamma()
            })
            .sum::<f64>()
            / n;
        let r2 = remainder_r2(&truth, &est).unwrap();
        prop_assert!((r2 - bias).abs() <= 1e-8 * bias.abs().max(1.0), "{} vs {}", r2, bias);
        prop_assert!(r2.abs() <= remainder_bound(&truth, &est).unwrap() * (1.0 + 1e-12));
        prop_assert!(remainder_r2(&truth, &truth).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn populations_depend_only_on_the_stream(seed in any::<u64>(), stream in any::<u64>(), n in 1usize..200) {
        let a = sample_population(n, -1.758, &mut keyed_rng(seed, stream)).unwrap();
        let b = sample_population(n, -1.758, &mut keyed_rng(seed, stream)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn replications_are_reproducible_and_distinct() {
    let config = SimConfig {
        n_population: 1000,
        n_reps: 3,
        seed: 9,
        ..SimConfig::default()
    };
    let first: Vec<_> = (0..3).map(|r| run_replication(&config, r).unwrap()).collect();
    let again: Vec<_> = (0..3).rev().map(|r| run_replication(&config, r).unwrap()).collect();
    assert!(first.iter().eq(again.iter().rev()));
    assert_ne!(first[0], first[1]);
}
