//! Pricing kernel, short rate, money-market account and numeraire along a path.

use crate::chaos::{ChaosModel, ChaosSpec};
use crate::error::{Error, Result};
use crate::paths::{BrownianPath, PathEnsemble};
use crate::stats::{try_reduce_paths, Estimate, VecMoments};

/// Kernel values at or below this are treated as a positivity breach.
pub const KERNEL_FLOOR: f64 = 1e-300;

/// Per-path trajectories on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPath {
    pub times: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    /// `pi_t`
    pub pi: Vec<f64>,
    /// `r_t = sigma_t^2 / pi_t`
    pub short_rate: Vec<f64>,
    /// `B_t = exp(sum_{j<i} r_j dt)`
    pub bank: Vec<f64>,
    /// `rho_t = pi_t B_t`
    pub rho: Vec<f64>,
    /// `xi_t = 1 / pi_t`
    pub numeraire: Vec<f64>,
}

/// Builds the kernel trajectory of `path` up to the grid horizon.
pub fn kernel_path(model: &ChaosModel, path: &BrownianPath) -> Result<KernelPath> {
    let grid = model.grid();
    let h = grid.horizon_index();
    let times = grid.times()[..=h].to_vec();
    let sample = model.sigma_path(path)?;
    let pi = model.conditional_masses(path, h)?;
    for (&t, &p) in times.iter().zip(&pi) {
        if p.is_nan() || p <= KERNEL_FLOOR {
            return Err(Error::NonPositiveKernel { time: t, value: p });
        }
    }
    let sigma_sq = sample.sigma_sq[..=h].to_vec();
    let short_rate: Vec<f64> = sigma_sq.iter().zip(&pi).map(|(s, p)| s / p).collect();
    let dt = grid.dt();
    let mut bank = Vec::with_capacity(h + 1);
    let mut log_b = 0.0;
    bank.push(1.0);
    for (i, r) in short_rate[..h].iter().enumerate() {
        log_b += r * dt;
        let b = log_b.exp();
        if !b.is_finite() {
            return Err(Error::BankOverflow { time: times[i + 1] });
        }
        bank.push(b);
    }
    let rho = pi.iter().zip(&bank).map(|(p, b)| p * b).collect();
    let numeraire = pi.iter().map(|p| 1.0 / p).collect();
    Ok(KernelPath {
        times,
        sigma_sq,
        pi,
        short_rate,
        bank,
        rho,
        numeraire,
    })
}

/// Market price of risk `lambda_t = -theta_t / pi_t` on `[0, horizon]`.
pub fn market_price_of_risk(model: &ChaosModel, path: &BrownianPath) -> Result<Vec<f64>> {
    let h = model.grid().horizon_index();
    match model.spec() {
        ChaosSpec::FirstChaos { .. } => Ok(vec![0.0; h + 1]),
        ChaosSpec::GbmExponential { lambda, .. } => Ok(vec![*lambda; h + 1]),
        ChaosSpec::SecondChaos { .. } => {
            let theta = model.kernel_volatility(path, h)?;
            let pi = model.conditional_masses(path, h)?;
            Ok(theta.iter().zip(&pi).map(|(th, p)| -th / p).collect())
        }
        ChaosSpec::Custom(_) => Err(Error::UnsupportedFamily(
            "market price of risk is not available for custom integrands".into(),
        )),
    }
}

/// Ensemble means of `pi` and `rho` at every horizon grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSummary {
    pub times: Vec<f64>,
    pub pi: Vec<Estimate>,
    pub rho: Vec<Estimate>,
}

pub fn summarize(model: &ChaosModel, ensemble: &PathEnsemble) -> Result<KernelSummary> {
    let h = model.grid().horizon_index();
    let (pi, rho) = try_reduce_paths(
        ensemble,
        || (VecMoments::new(h + 1), VecMoments::new(h + 1)),
        |acc, _, path| {
            let kp = kernel_path(model, &path)?;
            acc.0.push(&kp.pi);
            acc.1.push(&kp.rho);
            Ok(())
        },
        |acc, other| {
            acc.0.merge(&other.0);
            acc.1.merge(&other.1);
        },
    )?;
    Ok(KernelSummary {
        times: model.grid().times()[..=h].to_vec(),
        pi: pi.estimates(),
        rho: rho.estimates(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::chaos::DetFn;
    use crate::paths::TimeGrid;

    #[test]
    fn flat_model_has_unit_rate_and_rho() {
        let grid = Arc::new(TimeGrid::new(4.0, 40, 1.0).unwrap());
        let model = ChaosModel::new(ChaosSpec::first_chaos(DetFn::exponential(1.0, 0.5)), grid.clone()).unwrap();
        let path = PathEnsemble::new(grid, 1, 1, false).unwrap().path(0);
        let kp = kernel_path(&model, &path).unwrap();
        for i in 0..kp.times.len() {
            let t = kp.times[i];
            assert!((kp.pi[i] - (-t).exp()).abs() < 1e-15);
            assert!((kp.short_rate[i] - 1.0).abs() < 1e-12);
            assert!((kp.rho[i] - 1.0).abs() < 1e-12);
            assert!((kp.pi[i] * kp.numeraire[i] - 1.0).abs() <= f64::EPSILON);
        }
        assert_eq!(kp.bank[0], 1.0);
        assert_eq!(kp.rho[0], kp.pi[0]);
    }

    #[test]
    fn gbm_zero_path_has_constant_rate() {
        let (r, l) = (0.05, 0.2);
        let grid = Arc::new(TimeGrid::new(10.0, 100, 1.0).unwrap());
        let model = ChaosModel::new(ChaosSpec::gbm(r, l), grid.clone()).unwrap();
        let kp = kernel_path(&model, &BrownianPath::zero(grid.clone())).unwrap();
        for (i, &t) in kp.times.iter().enumerate() {
            assert!((kp.pi[i] - (-r * t - 0.5 * l * l * t).exp()).abs() < 1e-15);
            assert!((kp.short_rate[i] - r).abs() < 1e-15);
            assert!((kp.bank[i] - (r * t).exp()).abs() < 1e-12 * kp.bank[i]);
        }
        assert_eq!(market_price_of_risk(&model, &BrownianPath::zero(grid)).unwrap()[7], l);
    }

    #[test]
    fn truncated_custom_kernel_hits_the_floor() {
        // T_tail = horizon: the nested conditional mass at the horizon is an empty integral
        let grid = Arc::new(TimeGrid::new(1.0, 10, 1.0).unwrap());
        let spec = ChaosSpec::gbm(0.1, 0.1).as_custom(4, 0.0).unwrap();
        let model = ChaosModel::new(spec, grid.clone()).unwrap();
        let err = kernel_path(&model, &BrownianPath::zero(grid)).unwrap_err();
        assert!(matches!(err, Error::NonPositiveKernel { value, .. } if value == 0.0));
    }

    #[test]
    fn custom_has_no_market_price_of_risk() {
        let grid = Arc::new(TimeGrid::new(1.0, 10, 2.0).unwrap());
        let spec = ChaosSpec::gbm(0.1, 0.1).as_custom(4, 0.0).unwrap();
        let model = ChaosModel::new(spec, grid.clone()).unwrap();
        assert!(matches!(
            market_price_of_risk(&model, &BrownianPath::zero(grid)),
            Err(Error::UnsupportedFamily(_))
        ));
    }
}
