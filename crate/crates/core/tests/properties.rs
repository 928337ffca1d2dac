mod common;

use common::props;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn dynamics_scale_invariance(
        alpha in 0.1f64..50.0,
        beta in 0.05f64..5.0,
        gamma in 0.05f64..5.0,
        t_switch in 0.0f64..10.0,
        t in 0.0f64..20.0,
        kappa in 0.1f64..10.0,
    ) {
        props::scale_invariance(alpha, beta, gamma, t_switch, t, kappa).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn degenerate_rates_scale_invariance(alpha in 0.1f64..50.0, beta in 0.05f64..5.0, t in 0.0f64..20.0, kappa in 0.1f64..10.0) {
        props::scale_invariance(alpha, beta, beta, 5.0, t, kappa).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn perron_vector_is_positive(seed in any::<u64>()) {
        props::perron_positive(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn transition_rows_sum_to_one(seed in any::<u64>()) {
        props::row_stochastic(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn generator_annihilates_constants(seed in any::<u64>()) {
        props::generator_kills_constants(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn hitting_iteration_is_monotone(seed in any::<u64>()) {
        props::hitting_monotone(seed).map_err(TestCaseError::fail)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn em_loss_never_increases(seed in any::<u64>(), n_cells in 50usize..200) {
        props::em_loss_monotone(seed, n_cells).map_err(TestCaseError::fail)?;
    }
}
