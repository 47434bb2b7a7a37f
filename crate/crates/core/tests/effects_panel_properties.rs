use proptest::prelude::*;
use synthmsc_core::effects::{att, rmse};
use synthmsc_core::panel::split;
use synthmsc_core::{Matrix, PanelData};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
}

proptest! {
    #[test]
    fn att_is_grand_mean_of_effects((y, cf) in pair()) {
        let report = att(&y, &cf).unwrap();
        prop_assert!((report.att - report.per_unit_effects.mean()).abs() < 1e-10);
        let period_mean = report.att_per_period.iter().sum::<f64>() / report.att_per_period.len() as f64;
        prop_assert!((report.att - period_mean).abs() < 1e-10);
    }

    #[test]
    fn att_ignores_unit_order((y, cf) in pair()) {
        let perm: Vec<usize> = (0..y.cols()).rev().collect();
        let a = att(&y, &cf).unwrap().att;
        let b = att(&y.select_cols(&perm), &cf.select_cols(&perm)).unwrap().att;
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn att_shifts_with_outcomes((y, cf) in pair(), kappa in -10.0f64..10.0) {
        let a = att(&y, &cf).unwrap().att;
        let b = att(&y.map(|v| v + kappa), &cf).unwrap().att;
        prop_assert!((b - a - kappa).abs() < 1e-10);
    }

    #[test]
    fn rmse_sign_and_scale((cf, truth) in pair(), scale in 0.0f64..20.0) {
        let base = rmse(&cf, &truth).unwrap();
        prop_assert!(base >= 0.0);
        let err = cf.sub(&truth).unwrap();
        let flipped = truth.sub(&err).unwrap();
        prop_assert!((rmse(&flipped, &truth).unwrap() - base).abs() < 1e-10);
        let scaled = truth.add(&err.scale(scale)).unwrap();
        prop_assert!((rmse(&scaled, &truth).unwrap() - scale * base).abs() < 1e-8 * (1.0 + scale * base));
    }

    #[test]
    fn split_partitions_the_panel(outcomes in matrix(6, 5), m in 1usize..5, t0 in 1usize..=6) {
        let units: Vec<String> = (0..5).map(|i| format!("u{i}")).collect();
        let treated: Vec<bool> = (0..5).map(|i| i < m).collect();
        let panel = PanelData::new(units, (1..=6).collect(), outcomes.clone(), treated, t0).unwrap();
        let s = split(&panel);
        let treated_block = s.y_pre.vcat(&s.y_post).unwrap();
        let control_block = s.x_pre.vcat(&s.x_post).unwrap();
        prop_assert_eq!(treated_block.hcat(&control_block).unwrap(), outcomes);
    }
}
