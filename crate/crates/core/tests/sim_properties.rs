use proptest::prelude::*;
use synthmsc_core::effects::{predict_counterfactual, rmse};
use synthmsc_core::sim::{gen_ar1_panel, gen_setting, Setting, SimConfig};

#[test]
fn ar1_chain_moments() {
    let panel = gen_ar1_panel(10, 100_000, 12345, 200);
    let stationary_var = 1.0 / (1.0 - 0.81);
    for i in 0..10 {
        let col = panel.col(i);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        assert!((mean - ((i % 10) + 1) as f64).abs() < 0.1, "unit {i} mean {mean}");
        assert!((var - stationary_var).abs() < 0.1 * stationary_var, "unit {i} var {var}");
    }
}

fn small_config(setting: Setting, m: usize, n: usize, s: usize, seed: u64) -> SimConfig {
    SimConfig { n, t0: 20, t1: 4, s, ..SimConfig::new(setting, m, seed) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_weights_invariants(seed in any::<u64>(), m in 1usize..20, n in 1usize..30, extra in 0usize..200) {
        let s = (m + extra).min(n * m);
        let draw = gen_setting(&small_config(Setting::SparseLinear, m, n, s, seed)).unwrap();
        let theta = draw.theta.unwrap();
        prop_assert_eq!(theta.count_nonzero(), s);
        for j in 0..m {
            let col = theta.col(j);
            prop_assert!(col.iter().any(|v| *v != 0.0));
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn draws_are_reproducible(seed in any::<u64>(), setting in 1u8..=2) {
        let cfg = small_config(Setting::from_number(setting).unwrap(), 3, 5, 8, seed);
        prop_assert_eq!(gen_setting(&cfg).unwrap(), gen_setting(&cfg).unwrap());
    }
}

#[test]
fn noiseless_oracle_weights_have_zero_error() {
    let cfg = SimConfig { noise_sd: 0.0, ..small_config(Setting::SparseLinear, 6, 12, 20, 3) };
    let draw = gen_setting(&cfg).unwrap();
    let pred = predict_counterfactual(draw.theta.as_ref().unwrap(), &draw.split.x_post).unwrap();
    assert!(rmse(&pred, &draw.true_y0_post).unwrap() < 1e-12);
}

#[test]
fn distinct_replications_differ() {
    let cfg = small_config(Setting::Independent, 2, 3, 2, 9);
    let a = gen_setting(&SimConfig { seed: cfg.replication_seed(0), ..cfg.clone() }).unwrap();
    let b = gen_setting(&SimConfig { seed: cfg.replication_seed(1), ..cfg }).unwrap();
    assert_ne!(a.split.x_pre, b.split.x_pre);
}
