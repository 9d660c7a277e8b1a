//! Each validation check fails on a model built to violate it and passes on a sound one.

use std::sync::Arc;

use chaos_rates::validation::{
    test_bank_finiteness, test_conditional_variance_identity, test_integrability_condition, test_potential,
    test_quotient_lemma, test_rho_martingale, test_type_d_decomposition,
};
use chaos_rates::{ChaosModel, ChaosSpec, CustomIntegrand, DetFn, PathEnsemble, PathFunctional, TimeGrid};

fn grid(t_max: f64, n: usize, tail: f64) -> Arc<TimeGrid> {
    Arc::new(TimeGrid::new(t_max, n, tail).unwrap())
}

/// `sigma = 1` before `s = 1` and `0` afterwards: the potential dies at `s = 1`.
#[derive(Debug)]
struct SwitchOff;

impl PathFunctional for SwitchOff {
    fn sigma_along(&self, times: &[f64], _values: &[f64], _increments: &[f64], out: &mut [f64]) {
        for (o, &t) in out.iter_mut().zip(times) {
            *o = if t < 1.0 { 1.0 } else { 0.0 };
        }
    }
}

#[test]
fn potential_rejects_a_vanishing_kernel() {
    let g = grid(2.0, 20, 1.5);
    let spec = ChaosSpec::Custom(CustomIntegrand::new(Arc::new(SwitchOff), 1, 0.0));
    let model = ChaosModel::new(spec, g.clone()).unwrap();
    let ens = PathEnsemble::new(g.clone(), 50, 1, false).unwrap();
    let entry = test_potential(&model, &ens);
    assert!(!entry.pass());
    assert!(entry.failures().any(|r| r.test == "potential.positive"));

    let sound = ChaosModel::new(ChaosSpec::first_chaos(DetFn::exponential(1.0, 0.5)), g).unwrap();
    assert!(test_potential(&sound, &ens).pass());
}

#[test]
fn type_d_rejects_coarse_left_sums() {
    // left sums of E[sigma^2] = r e^{-r s} overshoot by about r dt / 2 of the mass
    let g = grid(5.0, 5, 1.0);
    let model = ChaosModel::new(ChaosSpec::gbm(0.5, 0.2), g.clone()).unwrap();
    let ens = PathEnsemble::new(g, 10_000, 2, false).unwrap();
    let entry = test_type_d_decomposition(&model, &ens);
    assert!(!entry.pass(), "{entry:?}");

    let fine = grid(5.0, 5000, 1.0);
    let model = ChaosModel::new(ChaosSpec::gbm(0.5, 0.2), fine.clone()).unwrap();
    let ens = PathEnsemble::new(fine, 2_000, 2, false).unwrap();
    assert!(test_type_d_decomposition(&model, &ens).pass());
}

#[test]
fn conditional_variance_rejects_coarse_ito_sums() {
    let sigma = DetFn::exponential(1.0, 1.0);
    let coarse = grid(2.0, 2, 3.0);
    let model = ChaosModel::new(ChaosSpec::first_chaos(sigma.clone()), coarse.clone()).unwrap();
    let ens = PathEnsemble::new(coarse, 10_000, 3, false).unwrap();
    assert!(!test_conditional_variance_identity(&model, &ens, &[0.0, 1.0]).pass());

    let fine = grid(2.0, 400, 3.0);
    let model = ChaosModel::new(ChaosSpec::first_chaos(sigma), fine.clone()).unwrap();
    let ens = PathEnsemble::new(fine, 10_000, 3, false).unwrap();
    let entry = test_conditional_variance_identity(&model, &ens, &[0.0, 1.0]);
    assert!(entry.pass(), "{entry:?}");
}

#[test]
fn rho_equality_rejects_a_kernel_truncated_just_past_the_horizon() {
    // pi -> 0 at T_tail forces r dt = O(1), where the discrete bank loses r^2 dt^2 / 2 per step
    let g = grid(5.0, 50, 1.02);
    let spec = ChaosSpec::gbm(0.02, 0.2).as_custom(64, 0.0).unwrap();
    let model = ChaosModel::new(spec, g.clone()).unwrap();
    let ens = PathEnsemble::new(g, 500, 4, false).unwrap();
    let rho = test_rho_martingale(&model, &ens, &[1.0, 5.0]);
    assert!(!rho.martingale.pass(), "{:?}", rho.martingale);
    assert!(rho.supermartingale.pass(), "{:?}", rho.supermartingale);
}

#[test]
fn rho_martingale_holds_for_a_closed_form_kernel() {
    let g = grid(5.0, 50, 1.0);
    let model = ChaosModel::new(ChaosSpec::gbm(0.02, 0.2), g.clone()).unwrap();
    let ens = PathEnsemble::new(g, 20_000, 4, false).unwrap();
    let rho = test_rho_martingale(&model, &ens, &[1.0, 5.0]);
    assert!(rho.martingale.pass(), "{:?}", rho.martingale);
    assert!(rho.supermartingale.pass());
}

#[test]
fn integrability_rejects_a_tail_dependent_kernel() {
    // truncated slow decay: pi_t ~ T_tail - t, so B depends on T_tail at order one
    let g = grid(5.0, 50, 2.0);
    let spec = ChaosSpec::first_chaos(DetFn::exponential(1.0, 0.01))
        .as_custom(1, 0.0)
        .unwrap();
    let model = ChaosModel::new(spec, g.clone()).unwrap();
    let ens = PathEnsemble::new(g.clone(), 100, 5, false).unwrap();
    let entry = test_integrability_condition(&model, &ens, 5.0);
    assert!(!entry.pass());
    assert!(
        entry.failures().any(|r| r.test == "integrability.double_tail"),
        "{entry:?}"
    );

    let sound = ChaosModel::new(ChaosSpec::first_chaos(DetFn::exponential(1.0, 0.01)), g).unwrap();
    let entry = test_integrability_condition(&sound, &ens, 5.0);
    assert!(entry.pass(), "{entry:?}");
}

#[test]
fn quotient_rejects_a_single_draw_kernel_estimate() {
    // E[Y / pi_hat] > 1 when pi_hat is one noisy draw
    let g = grid(2.0, 40, 10.0);
    let spec = ChaosSpec::gbm(0.5, 1.0).as_custom(1, 0.0).unwrap();
    let model = ChaosModel::new(spec, g.clone()).unwrap();
    let ens = PathEnsemble::new(g, 2_000, 6, false).unwrap();
    let entry = test_quotient_lemma(&model, &ens, &[0.0, 1.0]);
    assert!(!entry.pass(), "{entry:?}");
}

#[test]
fn bank_finiteness_reports_a_kernel_that_vanishes_at_the_horizon() {
    let g = grid(2.0, 20, 1.0);
    let spec = ChaosSpec::gbm(0.1, 0.2).as_custom(4, 0.0).unwrap();
    let ens = PathEnsemble::new(g, 20, 7, false).unwrap();
    let entry = test_bank_finiteness(&spec, &ens);
    assert!(!entry.pass());
    assert!(entry.error.is_some(), "{entry:?}");

    assert!(test_bank_finiteness(&ChaosSpec::gbm(0.1, 0.2), &ens).pass());
}
