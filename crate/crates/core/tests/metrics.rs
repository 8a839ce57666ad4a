use icl_lab::eval::{
    calibration_fit, confusion, expected_calibration_error, summarize_accuracies, RunResult,
};
use icl_lab::{Mode, Prediction, Task};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn sweep_summary_ignores_order(accs in prop::collection::vec(0u32..=200, 1..12), seed in any::<u64>()) {
        let accs: Vec<f64> = accs.iter().map(|&n| n as f64 / 200.0).collect();
        let mut shuffled = accs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let a = summarize_accuracies(Task::ImpactType, "m", &accs).unwrap();
        let b = summarize_accuracies(Task::ImpactType, "m", &shuffled).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fit_recovers_exact_lines(a in -3.0f64..3.0, c in -1.0f64..1.0,
                                xs in prop::collection::hash_set(0u32..1000, 2..30)) {
        let points: Vec<(f64, f64)> = xs.iter().map(|&x| {
            let x = x as f64 / 1000.0;
            (x, a * x + c)
        }).collect();
        let fit = calibration_fit(&points).unwrap();
        prop_assert!((fit.slope - a).abs() < 1e-9, "slope {} vs {a}", fit.slope);
        prop_assert!((fit.intercept - c).abs() < 1e-9, "intercept {} vs {c}", fit.intercept);
        prop_assert!(fit.r2 > 1.0 - 1e-9 || a == 0.0);
    }

    #[test]
    fn ece_is_within_bounds(items in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 0..50),
                            bins in 1usize..20) {
        let e = expected_calibration_error(&items, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }
}

#[test]
fn fit_rejects_constant_confidence() {
    let err = calibration_fit(&[(0.7, 0.1), (0.7, 0.5), (0.7, 0.9)]).unwrap_err();
    assert!(err.to_string().contains("degenerate"));
}

/// ECE from the definition: explicit bin edges, last bin closed.
fn ece_oracle(items: &[(f64, bool)], bins: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<&(f64, bool)> = items
            .iter()
            .filter(|(c, _)| *c >= lo && (*c < hi || (b == bins - 1 && *c <= hi)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let acc = members.iter().filter(|(_, ok)| *ok).count() as f64 / n;
        let conf = members.iter().map(|(c, _)| c).sum::<f64>() / n;
        total += n / items.len() as f64 * (acc - conf).abs();
    }
    total
}

#[test]
fn ece_matches_binning_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for bins in [1, 5, 10, 15] {
        let mut items: Vec<(f64, bool)> = (0..100)
            .map(|_| {
                let c: f64 = rng.gen();
                (c, rng.gen_bool(c))
            })
            .collect();
        items[0].0 = 1.0;
        items[1].0 = 0.0;
        let got = expected_calibration_error(&items, bins).unwrap();
        let want = ece_oracle(&items, bins);
        assert!((got - want).abs() < 1e-12, "bins={bins}: {got} vs {want}");
    }
}

fn prediction(i: usize, gold: &str, predicted: &str, failed: bool) -> Prediction {
    Prediction {
        query_id: format!("q{i}"),
        predicted: predicted.into(),
        confidence: 0.5,
        gold: Some(gold.into()),
        gold_prob: None,
        mode: Mode::Generation,
        extraction_failed: failed,
        scores: vec![],
    }
}

#[test]
fn confusion_matches_hand_tally() {
    // (gold, predicted, repeats); "-" marks a failed extraction.
    let plan = [
        ("Opportunity", "Opportunity", 8),
        ("Opportunity", "Risk", 3),
        ("Opportunity", "Cannot Distinguish", 1),
        ("Opportunity", "-", 2),
        ("Risk", "Risk", 6),
        ("Risk", "Opportunity", 2),
        ("Risk", "-", 1),
        ("Cannot Distinguish", "Cannot Distinguish", 3),
        ("Cannot Distinguish", "Opportunity", 4),
    ];
    let mut predictions = Vec::new();
    for (gold, predicted, n) in plan {
        for _ in 0..n {
            let failed = predicted == "-";
            let shown = if failed { "Opportunity" } else { predicted };
            predictions.push(prediction(predictions.len(), gold, shown, failed));
        }
    }
    assert_eq!(predictions.len(), 30);
    let run = RunResult::from_predictions(
        "c".into(),
        Task::ImpactType,
        "m".into(),
        Mode::Generation,
        predictions,
        vec![],
        vec![],
    );
    let m = confusion(&run).unwrap();
    assert_eq!(m.cells, vec![vec![8, 3, 1], vec![2, 6, 0], vec![4, 0, 3]]);
    assert_eq!(m.unparsed, vec![2, 1, 0]);
    assert_eq!(m.total(), 30);
    assert_eq!(m.diagonal(), 17);
    assert_eq!(run.n_correct, 17);
    assert_eq!(m.accuracy(), run.accuracy);
}
