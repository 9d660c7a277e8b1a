//! Closed-form conditional moments against brute-force nested Monte Carlo of the same `sigma`.

use std::sync::Arc;

use chaos_rates::stats::{try_reduce_paths, Moments};
use chaos_rates::term_structure::{bond_price, initial_curve};
use chaos_rates::{BrownianPath, ChaosModel, ChaosSpec, DetFn, PathEnsemble, TimeGrid};

/// Two independent-looking sample means agree within 3 combined standard errors.
fn agree(a: &Moments, b: &Moments) -> (f64, f64) {
    let diff = a.mean() - b.mean();
    let se = (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
    (diff, se)
}

fn compare_kernel(spec: ChaosSpec, grid: Arc<TimeGrid>, t: f64, n_outer: usize, n_inner: usize, seed: u64) {
    let closed = ChaosModel::new(spec.clone(), grid.clone()).unwrap();
    let nested = ChaosModel::new(spec.as_custom(n_inner, 0.0).unwrap(), grid.clone()).unwrap();
    let k = grid.index_of(t).unwrap();
    let ens = PathEnsemble::new(grid, n_outer, seed, false).unwrap();
    let (a, b) = try_reduce_paths(
        &ens,
        || (Moments::default(), Moments::default()),
        |acc, _, path| {
            acc.0.push(closed.conditional_mass_at(&path, k)?.mean);
            acc.1.push(nested.conditional_mass_at(&path, k)?.mean);
            Ok(())
        },
        |acc, o| {
            acc.0.merge(&o.0);
            acc.1.merge(&o.1);
        },
    )
    .unwrap();
    let (diff, se) = agree(&a, &b);
    assert!(
        diff.abs() <= 3.0 * se,
        "closed {} vs nested {}: diff {diff:e}, combined se {se:e}",
        a.mean(),
        b.mean()
    );
}

#[test]
fn gbm_kernel_matches_nested_estimate() {
    // T_tail = 15 leaves e^{-14} of the mass untruncated beyond t = 1
    let grid = Arc::new(TimeGrid::new(1.0, 10, 15.0).unwrap());
    compare_kernel(ChaosSpec::gbm(1.0, 0.5), grid, 1.0, 10_000, 1_000, 101);
}

#[test]
fn second_chaos_kernel_matches_nested_estimate() {
    let spec = ChaosSpec::SecondChaos {
        psi: DetFn::exponential(0.3, 0.4),
        g: DetFn::exponential(1.0, 0.1),
        h: DetFn::exponential(0.4, 0.5),
    };
    let grid = Arc::new(TimeGrid::new(1.0, 10, 20.0).unwrap());
    compare_kernel(spec, grid, 1.0, 4_000, 500, 202);
}

#[test]
fn second_chaos_initial_curve_matches_nested_bond() {
    let spec = ChaosSpec::SecondChaos {
        psi: DetFn::exponential(0.3, 0.4),
        g: DetFn::exponential(1.0, 0.1),
        h: DetFn::exponential(0.4, 0.5),
    };
    let grid = Arc::new(TimeGrid::new(4.0, 80, 6.0).unwrap());
    let nested = ChaosModel::new(spec.as_custom(20_000, 0.0).unwrap(), grid.clone()).unwrap();
    let curve = initial_curve(&spec, &[1.0, 2.0, 4.0]).unwrap();
    let origin = BrownianPath::zero(grid);
    for (&t, &p) in curve.maturities().iter().zip(curve.discounts()).skip(1) {
        let est = bond_price(&nested, &origin, 0.0, t).unwrap();
        assert!(
            (est.mean - p).abs() <= 3.0 * est.std_error,
            "T = {t}: nested {} ± {} vs closed {p}",
            est.mean,
            est.std_error
        );
    }
}

#[test]
fn gbm_forward_and_bond_from_nested_estimator() {
    let grid = Arc::new(TimeGrid::new(2.0, 40, 20.0).unwrap());
    let spec = ChaosSpec::gbm(0.5, 0.3);
    let nested = ChaosModel::new(spec.as_custom(4_000, 0.0).unwrap(), grid.clone()).unwrap();
    let path = PathEnsemble::new(grid, 1, 5, false).unwrap().path(0);
    let p = bond_price(&nested, &path, 1.0, 2.0).unwrap();
    assert!((p.mean - (-0.5f64).exp()).abs() <= 3.0 * p.std_error, "{p:?}");
    let f = chaos_rates::term_structure::forward_rate(&nested, &path, 1.0, 2.0).unwrap();
    assert!((f.mean - 0.5).abs() <= 3.0 * f.std_error, "{f:?}");
}
