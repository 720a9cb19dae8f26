use proptest::prelude::*;
use supertask_core::agents::HierQParams;
use supertask_core::fitting::{
    fit_mle, parameter_recovery, qlearn_loglik, recovery_mission, FitOptions, Model, QlearnData,
    ALPHA_BOUNDS, BETA_BOUNDS, FIXED_LAPSE,
};
use supertask_core::sim::{derive_seed, simulate_records};
use supertask_core::{AgentConfig, AgentKind, SessionConfig};

fn dataset(alpha: f64, beta: f64, trials: u32, seed: u64) -> Vec<supertask_core::TrialRecord> {
    let config = SessionConfig {
        missions: vec![recovery_mission(trials)],
        seed,
    };
    let mut agent = AgentConfig::new(AgentKind::HierQ, derive_seed(seed, &[1]));
    agent.hier_q = HierQParams {
        alpha,
        beta,
        lapse: FIXED_LAPSE,
    };
    simulate_records(config, &agent).unwrap()
}

#[test]
fn truth_has_the_highest_mean_loglik() {
    let truth = (0.3, 6.0);
    let others = [(0.1, 6.0), (0.3, 2.0), (0.6, 12.0)];
    let mut at_truth = 0.0;
    let mut at_other = [0.0; 3];
    for s in 0..200 {
        let data = QlearnData::from_records(&dataset(truth.0, truth.1, 200, s));
        at_truth += data.loglik(truth.0, truth.1, FIXED_LAPSE).unwrap();
        for (acc, th) in at_other.iter_mut().zip(others) {
            *acc += data.loglik(th.0, th.1, FIXED_LAPSE).unwrap();
        }
    }
    for (ll, th) in at_other.iter().zip(others) {
        assert!(at_truth > *ll, "{th:?}: {ll} >= {at_truth}");
    }
}

#[test]
fn recovery_rmse_bounds_bias() {
    let grid = [
        HierQParams {
            alpha: 0.3,
            beta: 2.0,
            lapse: FIXED_LAPSE,
        },
        HierQParams {
            alpha: 0.5,
            beta: 6.0,
            lapse: FIXED_LAPSE,
        },
    ];
    let report = parameter_recovery(Model::Qlearn, &grid, 150, 6, 9).unwrap();
    for cell in &report.cells {
        for p in &cell.params {
            assert!(p.rmse + 1e-12 >= p.bias.abs(), "{p:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fits_stay_in_bounds(alpha in 0.01f64..1.0, beta in 0.0f64..32.0, trials in 20u32..200, seed in any::<u64>()) {
        let recs = dataset(alpha, beta, trials, seed);
        let fit = fit_mle(&recs, Model::Qlearn, &FitOptions::default()).unwrap();
        let a = fit.get("alpha").unwrap();
        let b = fit.get("beta").unwrap();
        prop_assert!((ALPHA_BOUNDS.0..=ALPHA_BOUNDS.1).contains(&a), "alpha {a}");
        prop_assert!((BETA_BOUNDS.0..=BETA_BOUNDS.1).contains(&b), "beta {b}");
        prop_assert!(fit.loglik.unwrap() <= 0.0);
        let ll = qlearn_loglik(&recs, a, b, FIXED_LAPSE).unwrap();
        prop_assert_eq!(ll.to_bits(), fit.loglik.unwrap().to_bits());
    }
}
