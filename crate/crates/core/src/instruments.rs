//! Single cash flows, bond calls, the floating-rate note, and a dividend-paying GBM asset.

use serde::Serialize;

use crate::chaos::ChaosModel;
use crate::error::{invalid, Result};
use crate::kernel::kernel_path;
use crate::paths::{BrownianPath, PathEnsemble};
use crate::stats::{try_reduce_paths, Moments};

/// Payoff `H_T` received at the pay time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    Constant(f64),
    /// `(P(T, maturity) - strike)^+`
    BondCall {
        maturity: f64,
        strike: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CashflowSpec {
    pub pay_time: f64,
    pub payoff: Payoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: u64,
}

impl PriceEstimate {
    fn zero(n_paths: usize) -> Self {
        Self {
            value: 0.0,
            std_error: 0.0,
            n_paths: n_paths as u64,
        }
    }
}

/// `pi_0`, which is path-independent.
fn initial_kernel(model: &ChaosModel) -> f64 {
    model.total_mass()
}

/// Ensemble mean of a per-path deflated payoff, divided by `pi_0`.
fn deflated_mean<F>(model: &ChaosModel, ensemble: &PathEnsemble, f: F) -> Result<PriceEstimate>
where
    F: Fn(&BrownianPath) -> Result<f64> + Sync,
{
    let m = try_reduce_paths(
        ensemble,
        Moments::default,
        |acc, _, path| {
            acc.push(f(&path)?);
            Ok(())
        },
        |acc, other| acc.merge(&other),
    )?;
    let pi0 = initial_kernel(model);
    Ok(PriceEstimate {
        value: m.mean() / pi0,
        std_error: m.std_error() / pi0,
        n_paths: m.count(),
    })
}

fn payoff_value(model: &ChaosModel, path: &BrownianPath, pay_index: usize, payoff: Payoff) -> Result<f64> {
    match payoff {
        Payoff::Constant(c) => Ok(c),
        Payoff::BondCall { maturity, strike } => {
            let m = model.grid().index_of(maturity)?;
            if m <= pay_index {
                return Ok(0.0);
            }
            let p = model.tail_ratio_at(path, pay_index, m)?.mean;
            Ok((p - strike).max(0.0))
        }
    }
}

/// `S_0 = E[pi_T H_T] / pi_0`; zero once `valuation_t >= T`.
///
/// Only `valuation_t = 0` (or `>= T`) is priced as a scalar.
pub fn price_single_cashflow(
    model: &ChaosModel,
    ensemble: &PathEnsemble,
    valuation_t: f64,
    cf: CashflowSpec,
) -> Result<PriceEstimate> {
    let grid = model.grid();
    let pay = grid.index_of(cf.pay_time)?;
    if valuation_t >= cf.pay_time {
        return Ok(PriceEstimate::zero(ensemble.n_paths()));
    }
    if valuation_t != 0.0 {
        return Err(invalid("scalar prices are defined at valuation time 0 only"));
    }
    if let Payoff::Constant(c) = cf.payoff {
        if !(c.is_finite() && c >= 0.0) {
            return Err(invalid("payoff must be non-negative"));
        }
    }
    deflated_mean(model, ensemble, |path| {
        let pi_t = model.conditional_mass_at(path, pay)?.mean;
        Ok(pi_t * payoff_value(model, path, pay, cf.payoff)?)
    })
}

/// Call on the `T`-bond expiring at `t`: `C_0 = E[pi_t (P(t,T) - K)^+] / pi_0`.
pub fn price_bond_option(
    model: &ChaosModel,
    ensemble: &PathEnsemble,
    t: f64,
    maturity: f64,
    strike: f64,
) -> Result<PriceEstimate> {
    if !(t > 0.0 && t < maturity) {
        return Err(invalid(format!("option needs 0 < t < T, got t = {t}, T = {maturity}")));
    }
    if !(strike > 0.0 && strike < 1.0) {
        return Err(invalid(format!("strike must lie in (0, 1), got {strike}")));
    }
    price_single_cashflow(
        model,
        ensemble,
        0.0,
        CashflowSpec {
            pay_time: t,
            payoff: Payoff::BondCall { maturity, strike },
        },
    )
}

/// Deflated floating-rate note `pi_t + sum_{j<i} pi_j r_j dt` on `[0, horizon]`.
pub fn frn_deflated_path(model: &ChaosModel, path: &BrownianPath) -> Result<Vec<f64>> {
    let kp = kernel_path(model, path)?;
    let dt = model.grid().dt();
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(kp.pi.len());
    for i in 0..kp.pi.len() {
        out.push(kp.pi[i] + acc);
        acc += kp.pi[i] * kp.short_rate[i] * dt;
    }
    Ok(out)
}

/// Dividend-paying asset with GBM dynamics under a GBM pricing kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmAsset {
    pub s0: f64,
    /// Short rate of the kernel; cancels from the deflated value.
    pub r: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub dividend_yield: f64,
}

/// Deflated total value `pi_t S_t + delta sum_{j<i} pi_j S_j dt` on `[0, horizon]`, where
/// `pi_t S_t = S_0 exp(-delta t + (sigma - lambda) W_t - (sigma - lambda)^2 t / 2)`.
pub fn gbm_deflated_asset(asset: &GbmAsset, path: &BrownianPath) -> Result<Vec<f64>> {
    let GbmAsset {
        s0,
        r,
        lambda,
        sigma,
        dividend_yield: delta,
    } = *asset;
    if !(s0 > 0.0 && r > 0.0 && delta >= 0.0 && lambda.is_finite() && sigma.is_finite()) {
        return Err(invalid("need S0 > 0, r > 0, delta >= 0 and finite volatilities"));
    }
    let grid = path.grid();
    let h = grid.horizon_index();
    let dt = grid.dt();
    let v = sigma - lambda;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(h + 1);
    for (&t, &w) in grid.times()[..=h].iter().zip(path.values()) {
        let deflated = s0 * (-delta * t + v * w - 0.5 * v * v * t).exp();
        out.push(deflated + delta * acc);
        acc += deflated * dt;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::chaos::{ChaosSpec, DetFn};
    use crate::paths::TimeGrid;

    fn flat_model() -> (ChaosModel, PathEnsemble) {
        let grid = Arc::new(TimeGrid::new(2.0, 20, 1.0).unwrap());
        let model = ChaosModel::new(ChaosSpec::first_chaos(DetFn::exponential(1.0, 0.5)), grid.clone()).unwrap();
        (model, PathEnsemble::new(grid, 8, 1, false).unwrap())
    }

    #[test]
    fn deterministic_bond_call() {
        let (model, ens) = flat_model();
        let c = price_bond_option(&model, &ens, 1.0, 2.0, 0.3).unwrap();
        let e1 = (-1.0f64).exp();
        assert!((c.value - e1 * (e1 - 0.3)).abs() < 1e-12);
        assert!((c.value - 0.024972).abs() < 1e-6);
        assert_eq!(c.std_error, 0.0);
        let otm = price_bond_option(&model, &ens, 1.0, 2.0, 0.5).unwrap();
        assert_eq!(otm.value, 0.0);
        assert!(price_bond_option(&model, &ens, 2.0, 1.0, 0.5).is_err());
        assert!(price_bond_option(&model, &ens, 1.0, 2.0, 1.5).is_err());
    }

    #[test]
    fn unit_cashflow_is_a_bond() {
        let (model, ens) = flat_model();
        let cf = CashflowSpec {
            pay_time: 1.5,
            payoff: Payoff::Constant(1.0),
        };
        let p = price_single_cashflow(&model, &ens, 0.0, cf).unwrap();
        assert!((p.value - (-1.5f64).exp()).abs() < 1e-12);
        assert_eq!(price_single_cashflow(&model, &ens, 1.5, cf).unwrap().value, 0.0);
    }

    #[test]
    fn flat_frn_is_constant() {
        let (model, ens) = flat_model();
        let bar = frn_deflated_path(&model, &ens.path(0)).unwrap();
        assert_eq!(bar[0], 1.0);
        // left-endpoint sum of e^{-s} over steps of 0.1 overshoots by O(dt)
        for (i, b) in bar.iter().enumerate() {
            let t = 0.1 * i as f64;
            let riemann: f64 = (0..i).map(|j| (-0.1 * j as f64).exp() * 0.1).sum();
            assert!((b - ((-t).exp() + riemann)).abs() < 1e-12);
        }
    }

    #[test]
    fn matched_volatility_asset_is_constant() {
        let grid = Arc::new(TimeGrid::new(5.0, 50, 1.0).unwrap());
        let path = PathEnsemble::new(grid, 1, 2, false).unwrap().path(0);
        let asset = GbmAsset {
            s0: 1.3,
            r: 0.05,
            lambda: 0.2,
            sigma: 0.2,
            dividend_yield: 0.0,
        };
        assert!(gbm_deflated_asset(&asset, &path).unwrap().iter().all(|v| *v == 1.3));
    }
}
