//! The random variable `X = int_0^inf sigma_s dW_s` and its conditional moments.
//!
//! A [`ChaosSpec`] picks one model family for the integrand `sigma`. A
//! [`ChaosModel`] binds a spec to a [`TimeGrid`], precomputes every
//! deterministic coefficient on that grid, and then evaluates path-dependent
//! quantities in O(grid) per path:
//!
//! * `sigma_t` along a path ([`ChaosModel::sigma_path`]),
//! * the conditional mass `E_t[int_t^inf sigma_s^2 ds]`, which is the pricing kernel,
//! * `E_t[int_T^inf sigma_s^2 ds]` and `E_t[sigma_T^2]` for bond prices and forward rates.
//!
//! The closed-form families carry analytic tails, so nothing is lost past
//! `T_tail`. A [`CustomIntegrand`] is handled by nested Monte Carlo and
//! truncated at `T_tail`; its certified tail bound is carried along for reporting.

mod config;
mod custom;
pub(crate) mod expfn;

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paths::{BrownianPath, PathEnsemble, TimeGrid};
use crate::stats::{Estimate, Moments};

pub use config::{FunctionalConfig, SpecConfig};
pub use custom::{ClosedFormFunctional, DampedCosine};
use expfn::PiecewiseExp;

/// Exponential tail `amplitude * exp(-decay * (s - last_knot))` beyond the last knot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpTail {
    pub amplitude: f64,
    pub decay: f64,
}

/// A deterministic function of time on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetFn {
    /// `amplitude * exp(-decay * s)`.
    Exponential { amplitude: f64, decay: f64 },
    /// `values[i]` on `[knots[i], knots[i+1])`, then the exponential tail (zero if absent).
    Piecewise {
        knots: Vec<f64>,
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail: Option<ExpTail>,
    },
}

impl DetFn {
    pub fn exponential(amplitude: f64, decay: f64) -> Self {
        DetFn::Exponential { amplitude, decay }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            DetFn::Exponential { amplitude, decay } => amplitude * (-decay * s).exp(),
            DetFn::Piecewise { knots, values, tail } => {
                let last = *knots.last().expect("validated knots");
                if s >= last {
                    tail.map_or(0.0, |t| t.amplitude * (-t.decay * (s - last)).exp())
                } else {
                    let i = knots.partition_point(|k| *k <= s).saturating_sub(1);
                    values[i]
                }
            }
        }
    }

    /// Multiplies the function by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            DetFn::Exponential { amplitude, decay } => DetFn::Exponential {
                amplitude: amplitude * c,
                decay: *decay,
            },
            DetFn::Piecewise { knots, values, tail } => DetFn::Piecewise {
                knots: knots.clone(),
                values: values.iter().map(|v| v * c).collect(),
                tail: tail.map(|t| ExpTail {
                    amplitude: t.amplitude * c,
                    decay: t.decay,
                }),
            },
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        match self {
            DetFn::Exponential { amplitude, decay } => {
                if !amplitude.is_finite() || !decay.is_finite() {
                    return Err(invalid(format!("{name}: parameters must be finite")));
                }
            }
            DetFn::Piecewise { knots, values, tail } => {
                if knots.is_empty() || knots[0] != 0.0 {
                    return Err(invalid(format!("{name}: knots must start at 0")));
                }
                if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid(format!("{name}: knots must be finite and strictly increasing")));
                }
                if values.len() + 1 != knots.len() {
                    return Err(invalid(format!(
                        "{name}: expected {} values for {} knots, got {}",
                        knots.len() - 1,
                        knots.len(),
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(format!("{name}: values must be finite")));
                }
                if let Some(t) = tail {
                    if !t.amplitude.is_finite() || !t.decay.is_finite() {
                        return Err(invalid(format!("{name}: tail parameters must be finite")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Evaluates `sigma` along a path for a [`CustomIntegrand`].
pub trait PathFunctional: Send + Sync + fmt::Debug {
    /// Writes `sigma(times[i])` into `out[i]` for every index.
    ///
    /// `out[i]` must depend on `values[..=i]` and `increments[..i]` only (adaptedness).
    fn sigma_along(&self, times: &[f64], values: &[f64], increments: &[f64], out: &mut [f64]);
}

/// An arbitrary adapted integrand, handled by nested Monte Carlo.
#[derive(Debug, Clone)]
pub struct CustomIntegrand {
    pub evaluator: Arc<dyn PathFunctional>,
    /// Inner resimulations per conditional expectation.
    pub n_inner: usize,
    /// User-certified bound on `E[int_{T_tail}^inf sigma^2 ds]`; reported, never added.
    pub tail_bound: f64,
    /// Multiplies `sigma`.
    pub scale: f64,
}

impl CustomIntegrand {
    pub fn new(evaluator: Arc<dyn PathFunctional>, n_inner: usize, tail_bound: f64) -> Self {
        Self {
            evaluator,
            n_inner,
            tail_bound,
            scale: 1.0,
        }
    }
}

/// The integrand of `X`, one model family at a time.
#[derive(Debug, Clone)]
pub enum ChaosSpec {
    /// Deterministic `sigma(s)`.
    FirstChaos {
        sigma: DetFn,
    },
    /// `sigma_s = psi(s) + h(s) * int_0^s g(u) dW_u`, i.e. kernel `phi(u, s) = g(u) h(s)`.
    SecondChaos {
        psi: DetFn,
        g: DetFn,
        h: DetFn,
    },
    /// `sigma_t = scale * sqrt(r) * exp(-r t / 2 - lambda W_t / 2 - lambda^2 t / 4)`.
    GbmExponential {
        r: f64,
        lambda: f64,
        scale: f64,
    },
    Custom(CustomIntegrand),
}

impl ChaosSpec {
    pub fn first_chaos(sigma: DetFn) -> Self {
        ChaosSpec::FirstChaos { sigma }
    }

    pub fn gbm(r: f64, lambda: f64) -> Self {
        ChaosSpec::GbmExponential { r, lambda, scale: 1.0 }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ChaosSpec::FirstChaos { .. } => "first_chaos",
            ChaosSpec::SecondChaos { .. } => "second_chaos",
            ChaosSpec::GbmExponential { .. } => "gbm_exponential",
            ChaosSpec::Custom(_) => "custom",
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, ChaosSpec::Custom(_))
    }

    /// Multiplies `sigma` by `c`; the kernel scales by `c^2`, prices are unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            ChaosSpec::FirstChaos { sigma } => ChaosSpec::FirstChaos { sigma: sigma.scaled(c) },
            ChaosSpec::SecondChaos { psi, g, h } => ChaosSpec::SecondChaos {
                psi: psi.scaled(c),
                g: g.clone(),
                h: h.scaled(c),
            },
            ChaosSpec::GbmExponential { r, lambda, scale } => ChaosSpec::GbmExponential {
                r: *r,
                lambda: *lambda,
                scale: scale * c,
            },
            ChaosSpec::Custom(ci) => ChaosSpec::Custom(CustomIntegrand {
                scale: ci.scale * c,
                ..ci.clone()
            }),
        }
    }

    /// Wraps a closed-form spec as a [`CustomIntegrand`] with the same `sigma`,
    /// so its conditional moments are estimated by brute force.
    pub fn as_custom(&self, n_inner: usize, tail_bound: f64) -> Result<Self> {
        if !self.is_closed_form() {
            return Err(invalid("spec is already custom"));
        }
        Ok(ChaosSpec::Custom(CustomIntegrand::new(
            Arc::new(ClosedFormFunctional::new(self.clone())?),
            n_inner,
            tail_bound,
        )))
    }
}

/// Sign process `u_t` in `{+1, -1}` applied to `sigma` (rotation in one dimension).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Rotation {
    #[default]
    Identity,
    /// `sigma -> -sigma` everywhere.
    Global,
    /// `sigma -> -sigma` for `start <= t < end`.
    Interval { start: f64, end: f64 },
}

impl Rotation {
    pub fn sign(&self, t: f64) -> f64 {
        match *self {
            Rotation::Identity => 1.0,
            Rotation::Global => -1.0,
            Rotation::Interval { start, end } => {
                if t >= start && t < end {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Outcome of [`validate_spec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecCheck {
    /// `E[int_0^inf sigma^2 ds]`; `None` for custom integrands, whose mass is
    /// only estimated once a grid is known.
    pub total_mass: Option<f64>,
}

/// Checks square-integrability and non-degeneracy of `spec`.
pub fn validate_spec(spec: &ChaosSpec) -> Result<SpecCheck> {
    let shape = Shape::compile(spec)?;
    Ok(SpecCheck {
        total_mass: shape.total_mass(),
    })
}

/// Grid-free closed-form pieces of a spec.
#[derive(Debug, Clone)]
pub(crate) enum Shape {
    First { sigma: DetFn, sq: PiecewiseExp },
    Second(Box<SecondShape>),
    Gbm { r: f64, lambda: f64, scale: f64 },
    Custom(CustomIntegrand),
}

#[derive(Debug, Clone)]
pub(crate) struct SecondShape {
    psi: DetFn,
    g: DetFn,
    h: DetFn,
    psi_sq: PiecewiseExp,
    psi_h: PiecewiseExp,
    h_sq: PiecewiseExp,
    g_sq: PiecewiseExp,
    /// `g(u)^2 * int_u^inf h^2`; its tail integral from `t` is `int_t^inf h(s)^2 int_t^s g^2 du ds`.
    c_density: PiecewiseExp,
}

impl SecondShape {
    fn a_pp(&self, t: f64) -> f64 {
        self.psi_sq.tail_integral(t)
    }
    fn a_ph(&self, t: f64) -> f64 {
        self.psi_h.tail_integral(t)
    }
    fn a_hh(&self, t: f64) -> f64 {
        self.h_sq.tail_integral(t)
    }
    fn c(&self, t: f64) -> f64 {
        self.c_density.tail_integral(t)
    }
    fn g_mass(&self, t: f64, s: f64) -> f64 {
        self.g_sq.integrate(t, s)
    }
}

impl Shape {
    pub(crate) fn compile(spec: &ChaosSpec) -> Result<Self> {
        match spec {
            ChaosSpec::FirstChaos { sigma } => {
                sigma.check("sigma")?;
                let sq = PiecewiseExp::from_detfn(sigma).square();
                if !sq.has_finite_tail() {
                    return Err(Error::DivergentMass(
                        "sigma^2 does not decay beyond the last knot".into(),
                    ));
                }
                if sq.vanishes_eventually() {
                    return Err(Error::DegenerateSpec("sigma vanishes after a finite time".into()));
                }
                Ok(Shape::First {
                    sigma: sigma.clone(),
                    sq,
                })
            }
            ChaosSpec::SecondChaos { psi, g, h } => {
                psi.check("psi")?;
                g.check("g")?;
                h.check("h")?;
                let pe = PiecewiseExp::from_detfn(psi);
                let ge = PiecewiseExp::from_detfn(g);
                let he = PiecewiseExp::from_detfn(h);
                let psi_sq = pe.square();
                let h_sq = he.square();
                let g_sq = ge.square();
                if !psi_sq.has_finite_tail() {
                    return Err(Error::DivergentMass("psi^2 does not decay".into()));
                }
                if !h_sq.has_finite_tail() {
                    return Err(Error::DivergentMass("h^2 does not decay".into()));
                }
                let h_tail = h_sq
                    .tail_antiderivative()
                    .ok_or_else(|| Error::DivergentMass("h^2 does not decay".into()))?;
                let c_density = g_sq.mul(&h_tail);
                if !c_density.has_finite_tail() {
                    return Err(Error::DivergentMass(
                        "g^2 grows faster than int_u^inf h^2 decays".into(),
                    ));
                }
                let second_order_dies = h_sq.vanishes_eventually() || g_sq.is_identically_zero();
                if psi_sq.vanishes_eventually() && second_order_dies {
                    return Err(Error::DegenerateSpec("E[sigma^2] vanishes after a finite time".into()));
                }
                Ok(Shape::Second(Box::new(SecondShape {
                    psi: psi.clone(),
                    g: g.clone(),
                    h: h.clone(),
                    psi_h: pe.mul(&he),
                    psi_sq,
                    h_sq,
                    g_sq,
                    c_density,
                })))
            }
            ChaosSpec::GbmExponential { r, lambda, scale } => {
                if !r.is_finite() || !lambda.is_finite() {
                    return Err(invalid("r and lambda must be finite"));
                }
                if *r < 0.0 {
                    return Err(invalid(format!("r must be positive, got {r}")));
                }
                if *r == 0.0 {
                    return Err(Error::DegenerateSpec("r = 0 makes sigma vanish".into()));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(invalid("scale must be positive"));
                }
                Ok(Shape::Gbm {
                    r: *r,
                    lambda: *lambda,
                    scale: *scale,
                })
            }
            ChaosSpec::Custom(ci) => {
                if ci.n_inner == 0 {
                    return Err(invalid("n_inner must be at least 1"));
                }
                if !(ci.tail_bound.is_finite() && ci.tail_bound >= 0.0) {
                    return Err(invalid("tail_bound must be finite and non-negative"));
                }
                if !(ci.scale.is_finite() && ci.scale > 0.0) {
                    return Err(invalid("scale must be positive"));
                }
                Ok(Shape::Custom(ci.clone()))
            }
        }
    }

    pub(crate) fn total_mass(&self) -> Option<f64> {
        match self {
            Shape::Custom(_) => None,
            _ => self.mean_tail_mass(0.0).ok(),
        }
    }

    /// `int_T^inf E[sigma_s^2] ds`.
    pub(crate) fn mean_tail_mass(&self, t: f64) -> Result<f64> {
        match self {
            Shape::First { sq, .. } => Ok(sq.tail_integral(t)),
            Shape::Second(s) => Ok(s.a_pp(t) + s.g_mass(0.0, t) * s.a_hh(t) + s.c(t)),
            Shape::Gbm { r, scale, .. } => Ok(scale * scale * (-r * t).exp()),
            Shape::Custom(_) => Err(Error::UnsupportedFamily(
                "custom integrands have no closed-form unconditional moments".into(),
            )),
        }
    }

    /// `E[sigma_T^2]`.
    pub(crate) fn mean_sigma_sq(&self, t: f64) -> Result<f64> {
        match self {
            Shape::First { sigma, .. } => {
                let s = sigma.eval(t);
                Ok(s * s)
            }
            Shape::Second(s) => {
                let psi = s.psi.eval(t);
                let h = s.h.eval(t);
                Ok(psi * psi + h * h * s.g_mass(0.0, t))
            }
            Shape::Gbm { r, scale, .. } => Ok(scale * scale * r * (-r * t).exp()),
            Shape::Custom(_) => Err(Error::UnsupportedFamily(
                "custom integrands have no closed-form unconditional moments".into(),
            )),
        }
    }
}

/// `sigma` sampled along one path, with the running `int_0^t sigma^2 ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSample {
    grid: Arc<TimeGrid>,
    /// Signed `sigma(t_i)` on `[0, T_tail]`.
    pub sigma: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    /// `int_0^{t_i} sigma^2 ds`: left-endpoint sums for stochastic integrands,
    /// exact for deterministic ones.
    pub cumulative: Vec<f64>,
}

impl SigmaSample {
    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }
}

/// Per-grid deterministic tables.
#[derive(Debug, Clone)]
enum Tables {
    First {
        sigma: Vec<f64>,
        /// `int_{t_i}^inf sigma^2`
        mass: Vec<f64>,
        /// `int_0^{t_i} sigma^2`
        cumulative: Vec<f64>,
    },
    Second {
        psi: Vec<f64>,
        g: Vec<f64>,
        h: Vec<f64>,
        a_pp: Vec<f64>,
        a_ph: Vec<f64>,
        a_hh: Vec<f64>,
        c: Vec<f64>,
    },
    Gbm,
    Custom,
}

/// A validated spec bound to a time grid.
#[derive(Debug, Clone)]
pub struct ChaosModel {
    spec: ChaosSpec,
    grid: Arc<TimeGrid>,
    rotation: Rotation,
    shape: Shape,
    tables: Tables,
    total_mass: f64,
}

impl ChaosModel {
    pub fn new(spec: ChaosSpec, grid: Arc<TimeGrid>) -> Result<Self> {
        let shape = Shape::compile(&spec)?;
        let times = grid.times();
        let tables = match &shape {
            Shape::First { sigma, sq } => Tables::First {
                sigma: times.iter().map(|&t| sigma.eval(t)).collect(),
                mass: times.iter().map(|&t| sq.tail_integral(t)).collect(),
                cumulative: times.iter().map(|&t| sq.integrate(0.0, t)).collect(),
            },
            Shape::Second(s) => Tables::Second {
                psi: times.iter().map(|&t| s.psi.eval(t)).collect(),
                g: times.iter().map(|&t| s.g.eval(t)).collect(),
                h: times.iter().map(|&t| s.h.eval(t)).collect(),
                a_pp: times.iter().map(|&t| s.a_pp(t)).collect(),
                a_ph: times.iter().map(|&t| s.a_ph(t)).collect(),
                a_hh: times.iter().map(|&t| s.a_hh(t)).collect(),
                c: times.iter().map(|&t| s.c(t)).collect(),
            },
            Shape::Gbm { .. } => Tables::Gbm,
            Shape::Custom(_) => Tables::Custom,
        };
        let mut model = Self {
            spec,
            grid,
            rotation: Rotation::Identity,
            shape,
            tables,
            total_mass: 0.0,
        };
        model.total_mass = match model.shape.total_mass() {
            Some(m) => m,
            None => model.estimate_custom_mass()?,
        };
        if !model.total_mass.is_finite() {
            return Err(Error::DivergentMass(format!(
                "total mass {} is not finite",
                model.total_mass
            )));
        }
        if model.total_mass <= 0.0 {
            return Err(Error::DegenerateSpec("total mass is zero".into()));
        }
        Ok(model)
    }

    /// The same model with `sigma` multiplied by the sign process `rotation`.
    pub fn with_rotation(mut self, rotation: Rotation) -> Self {
        self.rotation = rotation;
        self
    }

    pub fn spec(&self) -> &ChaosSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    /// `E[int_0^inf sigma^2 ds]` (estimated over `[0, T_tail]` for custom integrands).
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Certified tail bound for custom integrands, zero otherwise.
    pub fn tail_bound(&self) -> f64 {
        match &self.spec {
            ChaosSpec::Custom(ci) => ci.tail_bound,
            _ => 0.0,
        }
    }

    pub(crate) fn check_path(&self, path: &BrownianPath) -> Result<()> {
        if path.grid().as_ref() != self.grid.as_ref() {
            return Err(invalid("path was sampled on a different grid"));
        }
        Ok(())
    }

    /// `sigma` at every grid time on `[0, T_tail]`.
    pub fn sigma_path(&self, path: &BrownianPath) -> Result<SigmaSample> {
        self.check_path(path)?;
        let times = self.grid.times();
        let n = times.len();
        let mut sigma = vec![0.0; n];
        match (&self.shape, &self.tables) {
            (Shape::First { .. }, Tables::First { sigma: tab, .. }) => sigma.copy_from_slice(tab),
            (Shape::Second(_), Tables::Second { psi, g, h, .. }) => {
                second_chaos_sigma(psi, g, h, path.increments(), &mut sigma)
            }
            (Shape::Gbm { r, lambda, scale }, _) => gbm_sigma(*r, *lambda, *scale, times, path.values(), &mut sigma),
            (Shape::Custom(ci), _) => {
                ci.evaluator
                    .sigma_along(times, path.values(), path.increments(), &mut sigma);
                if ci.scale != 1.0 {
                    sigma.iter_mut().for_each(|s| *s *= ci.scale);
                }
            }
            _ => unreachable!("tables match shape"),
        }
        if self.rotation != Rotation::Identity {
            for (s, &t) in sigma.iter_mut().zip(times) {
                *s *= self.rotation.sign(t);
            }
        }
        let sigma_sq: Vec<f64> = sigma.iter().map(|s| s * s).collect();
        let cumulative = match &self.tables {
            Tables::First { cumulative, .. } => cumulative.clone(),
            _ => {
                let dt = self.grid.dt();
                let mut out = Vec::with_capacity(n);
                let mut acc = 0.0;
                out.push(0.0);
                for s2 in &sigma_sq[..n - 1] {
                    acc += s2 * dt;
                    out.push(acc);
                }
                out
            }
        };
        Ok(SigmaSample {
            grid: self.grid.clone(),
            sigma,
            sigma_sq,
            cumulative,
        })
    }

    /// State variable the closed forms condition on: `W` (GBM) or `int_0^t g dW` (second chaos).
    fn driver<'a>(&self, path: &'a BrownianPath) -> Cow<'a, [f64]> {
        match &self.tables {
            Tables::Gbm => Cow::Borrowed(path.values()),
            Tables::Second { g, .. } => {
                let mut out = Vec::with_capacity(g.len());
                let mut acc = 0.0;
                out.push(0.0);
                for (gi, dw) in g.iter().zip(path.increments()) {
                    acc += gi * dw;
                    out.push(acc);
                }
                Cow::Owned(out)
            }
            _ => Cow::Borrowed(&[]),
        }
    }

    /// Closed-form `E_{t_k}[int_{t_m}^inf sigma^2]` given the driver value `x` at `t_k`.
    fn closed_tail_mass(&self, k: usize, m: usize, x: f64) -> f64 {
        let times = self.grid.times();
        match (&self.shape, &self.tables) {
            (_, Tables::First { mass, .. }) => mass[m],
            (
                Shape::Second(s),
                Tables::Second {
                    a_pp, a_ph, a_hh, c, ..
                },
            ) => {
                let base = a_pp[m] + 2.0 * x * a_ph[m] + x * x * a_hh[m] + c[m];
                if m == k {
                    base
                } else {
                    base + s.g_mass(times[k], times[m]) * a_hh[m]
                }
            }
            (Shape::Gbm { r, lambda, scale }, _) => {
                scale * scale * (-r * times[m] - lambda * x - 0.5 * lambda * lambda * times[k]).exp()
            }
            _ => unreachable!("closed-form families only"),
        }
    }

    /// Closed-form `E_{t_k}[sigma_{t_m}^2]`.
    fn closed_second_moment(&self, k: usize, m: usize, x: f64) -> f64 {
        let times = self.grid.times();
        match (&self.shape, &self.tables) {
            (_, Tables::First { sigma, .. }) => sigma[m] * sigma[m],
            (Shape::Second(s), Tables::Second { psi, h, .. }) => {
                let mean = psi[m] + h[m] * x;
                mean * mean + h[m] * h[m] * s.g_mass(times[k], times[m])
            }
            (Shape::Gbm { r, lambda, scale }, _) => {
                scale * scale * r * (-r * times[m] - lambda * x - 0.5 * lambda * lambda * times[k]).exp()
            }
            _ => unreachable!("closed-form families only"),
        }
    }

    fn driver_at(&self, path: &BrownianPath, k: usize) -> f64 {
        let d = self.driver(path);
        d.get(k).copied().unwrap_or(0.0)
    }

    /// `pi_t = E_t[int_t^inf sigma^2 ds]` at grid time `t`.
    pub fn conditional_mass(&self, path: &BrownianPath, t: f64) -> Result<f64> {
        let k = self.grid.index_of(t)?;
        Ok(self.conditional_mass_at(path, k)?.mean)
    }

    /// Conditional mass at grid index `k`, with its nested-MC standard error.
    pub fn conditional_mass_at(&self, path: &BrownianPath, k: usize) -> Result<Estimate> {
        self.check_path(path)?;
        self.check_index(k)?;
        if let Shape::Custom(ci) = &self.shape {
            return Ok(custom::nested(self, ci, path, k, None)?.mass);
        }
        Ok(Estimate::exact(self.closed_tail_mass(k, k, self.driver_at(path, k))))
    }

    /// Conditional mass at every grid index `0..=upto`.
    pub fn conditional_masses(&self, path: &BrownianPath, upto: usize) -> Result<Vec<f64>> {
        self.check_path(path)?;
        self.check_index(upto)?;
        if let Shape::Custom(ci) = &self.shape {
            return (0..=upto)
                .map(|k| Ok(custom::nested(self, ci, path, k, None)?.mass.mean))
                .collect();
        }
        let d = self.driver(path);
        Ok((0..=upto)
            .map(|k| self.closed_tail_mass(k, k, d.get(k).copied().unwrap_or(0.0)))
            .collect())
    }

    /// `E_t[int_T^inf sigma^2 ds]` for grid indices `k <= m`.
    pub fn tail_mass_at(&self, path: &BrownianPath, k: usize, m: usize) -> Result<Estimate> {
        self.check_path(path)?;
        self.check_pair(k, m)?;
        if let Shape::Custom(ci) = &self.shape {
            let n = custom::nested(self, ci, path, k, Some(m))?;
            return Ok(n.tail.expect("requested"));
        }
        Ok(Estimate::exact(self.closed_tail_mass(k, m, self.driver_at(path, k))))
    }

    /// `E_t[sigma_T^2]` for grid indices `k <= m`.
    pub fn second_moment_at(&self, path: &BrownianPath, k: usize, m: usize) -> Result<Estimate> {
        self.check_path(path)?;
        self.check_pair(k, m)?;
        if let Shape::Custom(ci) = &self.shape {
            let n = custom::nested(self, ci, path, k, Some(m))?;
            return Ok(n.second_moment.expect("requested"));
        }
        Ok(Estimate::exact(self.closed_second_moment(
            k,
            m,
            self.driver_at(path, k),
        )))
    }

    /// `E_t[int_T^inf sigma^2] / E_t[int_t^inf sigma^2]` for `k <= m`.
    ///
    /// Custom integrands use the same inner paths for numerator and denominator
    /// and report a delta-method standard error.
    pub fn tail_ratio_at(&self, path: &BrownianPath, k: usize, m: usize) -> Result<Estimate> {
        self.check_path(path)?;
        self.check_pair(k, m)?;
        if let Shape::Custom(ci) = &self.shape {
            let n = custom::nested(self, ci, path, k, Some(m))?;
            return Ok(n.ratio.expect("requested"));
        }
        if let Shape::Gbm { r, .. } = self.shape {
            // the path factor cancels exactly
            let times = self.grid.times();
            return Ok(Estimate::exact((-r * (times[m] - times[k])).exp()));
        }
        let x = self.driver_at(path, k);
        Ok(Estimate::exact(
            self.closed_tail_mass(k, m, x) / self.closed_tail_mass(k, k, x),
        ))
    }

    /// `E_t[sigma_T^2] / E_t[int_T^inf sigma^2]` for `k <= m`.
    pub fn forward_ratio_at(&self, path: &BrownianPath, k: usize, m: usize) -> Result<Estimate> {
        self.check_path(path)?;
        self.check_pair(k, m)?;
        if let Shape::Custom(ci) = &self.shape {
            let n = custom::nested(self, ci, path, k, Some(m))?;
            return Ok(n.forward.expect("requested"));
        }
        if let Shape::Gbm { r, .. } = self.shape {
            return Ok(Estimate::exact(r));
        }
        let x = self.driver_at(path, k);
        Ok(Estimate::exact(
            self.closed_second_moment(k, m, x) / self.closed_tail_mass(k, m, x),
        ))
    }

    /// Discrete Ito sum `X = sum_i sigma(t_i) dW_i` over `[0, T_tail]` (`X_0 = 0`).
    pub fn x_sample(&self, path: &BrownianPath) -> Result<f64> {
        let s = self.sigma_path(path)?;
        Ok(ito_sum(&s.sigma, path.increments(), 0))
    }

    /// `sum_{i >= k} sigma(t_i) dW_i`, the discretized `X_{T_tail} - X_t`.
    pub fn ito_increment(&self, sample: &SigmaSample, path: &BrownianPath, k: usize) -> f64 {
        ito_sum(&sample.sigma, path.increments(), k)
    }

    /// Variance of `X - X_{T_tail}` given the path: the conditional mass at `T_tail`
    /// for closed forms (zero for custom integrands, which stop at `T_tail`).
    pub fn residual_variance(&self, path: &BrownianPath) -> Result<f64> {
        if !self.spec.is_closed_form() {
            return Ok(0.0);
        }
        Ok(self.conditional_mass_at(path, self.grid.tail_index())?.mean)
    }

    /// Realized `int_t^inf sigma^2 ds` on this path.
    ///
    /// Exact for deterministic integrands; otherwise trapezoid over `[t, T_tail]`
    /// plus [`Self::residual_variance`].
    pub fn realized_tail_mass(&self, sample: &SigmaSample, path: &BrownianPath, k: usize) -> Result<f64> {
        if let Tables::First { mass, .. } = &self.tables {
            return Ok(mass[k]);
        }
        let body = trapezoid(&sample.sigma_sq[k..], self.grid.dt());
        Ok(body + self.residual_variance(path)?)
    }

    /// Volatility `theta_t` of the kernel (`d pi = -r pi dt + theta dW`) for closed forms.
    pub(crate) fn kernel_volatility(&self, path: &BrownianPath, upto: usize) -> Result<Vec<f64>> {
        self.check_path(path)?;
        self.check_index(upto)?;
        match (&self.shape, &self.tables) {
            (Shape::First { .. }, _) => Ok(vec![0.0; upto + 1]),
            (Shape::Gbm { lambda, .. }, _) => {
                let pi = self.conditional_masses(path, upto)?;
                Ok(pi.iter().map(|p| -lambda * p).collect())
            }
            (Shape::Second(_), Tables::Second { g, a_ph, a_hh, .. }) => {
                let d = self.driver(path);
                Ok((0..=upto).map(|k| 2.0 * g[k] * (a_ph[k] + d[k] * a_hh[k])).collect())
            }
            _ => Err(Error::UnsupportedFamily(
                "market price of risk needs a closed-form family".into(),
            )),
        }
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k > self.grid.tail_index() {
            return Err(invalid(format!("grid index {k} beyond T_tail")));
        }
        Ok(())
    }

    fn check_pair(&self, k: usize, m: usize) -> Result<()> {
        self.check_index(m)?;
        if k > m {
            return Err(invalid("need t <= T"));
        }
        Ok(())
    }

    fn estimate_custom_mass(&self) -> Result<f64> {
        let Shape::Custom(ci) = &self.shape else {
            unreachable!("custom only")
        };
        let ens = PathEnsemble::new(self.grid.clone(), ci.n_inner, crate::paths::mix64(0x6d61_7373), false)?;
        let mut m = Moments::default();
        for path in ens.iter() {
            let s = self.sigma_path(&path)?;
            m.push(trapezoid(&s.sigma_sq, self.grid.dt()));
        }
        Ok(m.mean())
    }
}

fn ito_sum(sigma: &[f64], increments: &[f64], from: usize) -> f64 {
    sigma[from..increments.len()]
        .iter()
        .zip(&increments[from..])
        .map(|(s, dw)| s * dw)
        .sum()
}

/// Trapezoid rule over consecutive samples spaced `dt` apart.
pub(crate) fn trapezoid(ys: &[f64], dt: f64) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    let inner: f64 = ys[1..ys.len() - 1].iter().sum();
    (0.5 * (ys[0] + ys[ys.len() - 1]) + inner) * dt
}

/// `sigma_i = psi_i + h_i I_i`, `I_{i+1} = I_i + g_i dW_i`.
pub(crate) fn second_chaos_sigma(psi: &[f64], g: &[f64], h: &[f64], increments: &[f64], out: &mut [f64]) {
    let mut integral = 0.0;
    for i in 0..out.len() {
        out[i] = psi[i] + h[i] * integral;
        if i < increments.len() {
            integral += g[i] * increments[i];
        }
    }
}

pub(crate) fn gbm_sigma(r: f64, lambda: f64, scale: f64, times: &[f64], values: &[f64], out: &mut [f64]) {
    let amp = scale * r.sqrt();
    for ((o, &t), &w) in out.iter_mut().zip(times).zip(values) {
        *o = amp * (-0.5 * r * t - 0.5 * lambda * w - 0.25 * lambda * lambda * t).exp();
    }
}
