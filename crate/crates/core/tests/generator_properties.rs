mod common;

use proptest::prelude::*;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transforms_hold_their_invariants(seed in any::<u64>()) {
        check_transforms(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn generators_are_deterministic_sound_and_covering(seed in any::<u64>()) {
        for task in LABELED_TASKS {
            check_generator(task, seed).map_err(|e| TestCaseError::fail(format!("{task}: {e}")))?;
        }
    }

    #[test]
    fn stats_match_brute_force(seed in any::<u64>()) {
        check_stats_oracle(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn metrics_match_confusion_oracle(seed in any::<u64>()) {
        check_metric_oracle(seed).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn oracle_agrees_with_worked_examples() {
    let ramp = oracle_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]);
    assert!((ramp[1] - 2f64.sqrt()).abs() < 1e-12);
    assert!((ramp[5] + 1.3).abs() < 1e-12);
    assert_eq!(oracle_stats(&[0.0, 1.0, 0.0, 1.0, 0.0])[7], 2.0);
    assert_eq!(oracle_stats(&[2.0; 4]), [2.0, 0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0]);
}
