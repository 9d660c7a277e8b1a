//! Path functionals for custom integrands and the nested Monte-Carlo estimator.
//!
//! Conditional expectations at grid index `k` are estimated by resimulating the
//! Brownian path beyond `t_k` `n_inner` times. Inner path `j` draws from the
//! ChaCha stream `j` of a seed mixed from the outer path's `(seed, index)` and
//! `k`, so every estimate is a pure function of the outer path. Integrals of
//! `sigma^2` along inner paths use the trapezoid rule over `[t_k, T_tail]`;
//! nothing is added beyond `T_tail`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{gbm_sigma, trapezoid, ChaosModel, ChaosSpec, CustomIntegrand, PathFunctional, Shape};
use crate::error::{invalid, Result};
use crate::paths::{mix64, stream_rng, BrownianPath};
use crate::stats::{Estimate, Moments};

/// `sigma` of a closed-form family, evaluated pathwise without its closed-form moments.
///
/// Produces the same `sigma` as the closed-form model on the same path, which
/// makes it a brute-force oracle for the analytic conditional moments.
#[derive(Debug, Clone)]
pub struct ClosedFormFunctional {
    spec: ChaosSpec,
}

impl ClosedFormFunctional {
    pub fn new(spec: ChaosSpec) -> Result<Self> {
        match Shape::compile(&spec)? {
            Shape::Custom(_) => Err(invalid("closed-form functional needs a closed-form spec")),
            _ => Ok(Self { spec }),
        }
    }
}

impl PathFunctional for ClosedFormFunctional {
    fn sigma_along(&self, times: &[f64], values: &[f64], increments: &[f64], out: &mut [f64]) {
        match &self.spec {
            ChaosSpec::FirstChaos { sigma } => {
                for (o, &t) in out.iter_mut().zip(times) {
                    *o = sigma.eval(t);
                }
            }
            ChaosSpec::SecondChaos { psi, g, h } => {
                // same recursion as the closed-form model, without temporaries
                let mut integral = 0.0;
                for (i, (o, &t)) in out.iter_mut().zip(times).enumerate() {
                    *o = psi.eval(t) + h.eval(t) * integral;
                    if i < increments.len() {
                        integral += g.eval(t) * increments[i];
                    }
                }
            }
            ChaosSpec::GbmExponential { r, lambda, scale } => gbm_sigma(*r, *lambda, *scale, times, values, out),
            ChaosSpec::Custom(_) => unreachable!("rejected in constructor"),
        }
    }
}

/// `sigma_s = amplitude * exp(-decay * s) * cos(frequency * W_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampedCosine {
    pub amplitude: f64,
    pub decay: f64,
    pub frequency: f64,
}

impl PathFunctional for DampedCosine {
    fn sigma_along(&self, times: &[f64], values: &[f64], _increments: &[f64], out: &mut [f64]) {
        for ((o, &t), &w) in out.iter_mut().zip(times).zip(values) {
            *o = self.amplitude * (-self.decay * t).exp() * (self.frequency * w).cos();
        }
    }
}

/// Nested estimates at one outer `(path, k)`, optionally also at a later index `m`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Nested {
    /// `E_t[int_t^T_tail sigma^2]`
    pub mass: Estimate,
    /// `E_t[int_T^T_tail sigma^2]`
    pub tail: Option<Estimate>,
    /// `E_t[sigma_T^2]`
    pub second_moment: Option<Estimate>,
    /// `tail / mass`
    pub ratio: Option<Estimate>,
    /// `second_moment / tail`
    pub forward: Option<Estimate>,
}

/// Ratio of two sample means from paired draws with a delta-method standard error.
fn ratio_estimate(num: &[f64], den: &[f64]) -> Estimate {
    let n = num.len();
    let mn: f64 = num.iter().sum::<f64>() / n as f64;
    let md: f64 = den.iter().sum::<f64>() / n as f64;
    let r = mn / md;
    let resid: Moments = num.iter().zip(den).map(|(a, b)| a - r * b).collect();
    Estimate {
        mean: r,
        std_error: resid.std_error() / md.abs(),
        n: n as u64,
    }
}

pub(crate) fn nested(
    model: &ChaosModel,
    ci: &CustomIntegrand,
    path: &BrownianPath,
    k: usize,
    m: Option<usize>,
) -> Result<Nested> {
    let grid = model.grid();
    let times = grid.times();
    let n = grid.tail_index();
    let dt = grid.dt();
    let sd = dt.sqrt();
    let id = path.id();
    let seed = mix64(id.seed ^ mix64(id.index ^ mix64(k as u64 ^ 0x6e65_7374)));

    let mut increments = path.increments().to_vec();
    let mut values = path.values().to_vec();
    let mut sigma = vec![0.0; n + 1];
    let scale2 = ci.scale * ci.scale;

    let cap = ci.n_inner;
    let mut den = Vec::with_capacity(cap);
    let mut num = Vec::with_capacity(if m.is_some() { cap } else { 0 });
    let mut sec = Vec::with_capacity(if m.is_some() { cap } else { 0 });
    let mut sq = vec![0.0; n + 1];

    for j in 0..ci.n_inner {
        let mut rng = stream_rng(seed, j as u64);
        for i in k..n {
            let z: f64 = rng.sample(StandardNormal);
            increments[i] = sd * z;
            values[i + 1] = values[i] + increments[i];
        }
        ci.evaluator.sigma_along(times, &values, &increments, &mut sigma);
        for i in k..=n {
            sq[i] = sigma[i] * sigma[i] * scale2;
        }
        den.push(trapezoid(&sq[k..], dt));
        if let Some(m) = m {
            num.push(trapezoid(&sq[m..], dt));
            sec.push(sq[m]);
        }
    }

    let mass = den.iter().copied().collect::<Moments>().estimate();
    let (tail, second_moment, ratio, forward) = if m.is_some() {
        (
            Some(num.iter().copied().collect::<Moments>().estimate()),
            Some(sec.iter().copied().collect::<Moments>().estimate()),
            Some(ratio_estimate(&num, &den)),
            Some(ratio_estimate(&sec, &num)),
        )
    } else {
        (None, None, None, None)
    };
    Ok(Nested {
        mass,
        tail,
        second_moment,
        ratio,
        forward,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::chaos::DetFn;
    use crate::paths::{PathEnsemble, TimeGrid};

    #[test]
    fn wrapped_sigma_matches_closed_form() {
        let grid = Arc::new(TimeGrid::new(2.0, 20, 2.0).unwrap());
        let path = PathEnsemble::new(grid.clone(), 1, 3, false).unwrap().path(0);
        for spec in [
            ChaosSpec::gbm(0.1, 0.4),
            ChaosSpec::SecondChaos {
                psi: DetFn::exponential(0.3, 0.2),
                g: DetFn::exponential(1.0, 0.1),
                h: DetFn::exponential(0.2, 0.3),
            },
            ChaosSpec::first_chaos(DetFn::exponential(1.0, 0.5)),
        ] {
            let closed = ChaosModel::new(spec.clone(), grid.clone()).unwrap();
            let custom = ChaosModel::new(spec.as_custom(8, 0.0).unwrap(), grid.clone()).unwrap();
            assert_eq!(
                closed.sigma_path(&path).unwrap().sigma,
                custom.sigma_path(&path).unwrap().sigma
            );
        }
    }

    #[test]
    fn nested_is_deterministic_and_exact_for_first_chaos() {
        let grid = Arc::new(TimeGrid::new(1.0, 10, 3.0).unwrap());
        let spec = ChaosSpec::first_chaos(DetFn::exponential(1.0, 0.5))
            .as_custom(16, 0.0)
            .unwrap();
        let model = ChaosModel::new(spec, grid.clone()).unwrap();
        let path = PathEnsemble::new(grid.clone(), 2, 9, false).unwrap().path(1);
        let a = model.conditional_mass_at(&path, 4).unwrap();
        let b = model.conditional_mass_at(&path, 4).unwrap();
        assert_eq!(a, b);
        // deterministic sigma: every inner draw agrees
        assert_eq!(a.std_error, 0.0);
        let ys: Vec<f64> = grid.times()[4..].iter().map(|t| (-t).exp()).collect();
        assert!((a.mean - trapezoid(&ys, grid.dt())).abs() < 1e-14);
    }

    #[test]
    fn ratio_of_proportional_samples_is_exact() {
        let den = [1.0, 2.0, 3.0, 4.0];
        let num: Vec<f64> = den.iter().map(|d| 0.5 * d).collect();
        let e = ratio_estimate(&num, &den);
        assert!((e.mean - 0.5).abs() < 1e-15);
        assert!(e.std_error < 1e-15);
    }

    #[test]
    fn damped_cosine_at_origin() {
        let f = DampedCosine {
            amplitude: 2.0,
            decay: 1.0,
            frequency: 3.0,
        };
        let mut out = [0.0; 1];
        f.sigma_along(&[0.0], &[0.0], &[], &mut out);
        assert_eq!(out[0], 2.0);
    }
}
