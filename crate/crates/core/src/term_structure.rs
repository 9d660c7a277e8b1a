//! Discount bonds, forward rates, the initial curve, and first-chaos calibration.
//!
//! Bond prices follow the ratio form `P(t,T) = E_t[int_T^inf sigma^2] / E_t[int_t^inf sigma^2]`
//! for `t < T` and vanish for `t >= T` (the bond has paid out).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::chaos::{ChaosModel, ChaosSpec, DetFn, ExpTail, Shape};
use crate::error::{invalid, Error, Result};
use crate::paths::BrownianPath;
use crate::stats::Estimate;

/// Initial term structure `P(0,T)` on a maturity grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountCurve {
    maturities: Vec<f64>,
    discounts: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    maturity: f64,
    discount: f64,
}

impl DiscountCurve {
    /// Checks `P(0,0) = 1`, `0 < P <= 1`, increasing maturities and non-increasing discounts.
    ///
    /// Interior flat segments (zero forward rate) are accepted with a warning.
    pub fn new(maturities: Vec<f64>, discounts: Vec<f64>) -> Result<Self> {
        if maturities.len() != discounts.len() {
            return Err(Error::InvalidCurve("maturities and discounts differ in length".into()));
        }
        if maturities.is_empty() || maturities[0] != 0.0 || discounts[0] != 1.0 {
            return Err(Error::InvalidCurve("curve must start with the row 0,1".into()));
        }
        if maturities.iter().chain(&discounts).any(|v| !v.is_finite()) {
            return Err(Error::InvalidCurve("non-finite entry".into()));
        }
        if let Some(w) = maturities.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidCurve(format!(
                "maturities must increase strictly ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(p) = discounts.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidCurve(format!("discount {p} outside (0, 1]")));
        }
        for i in 1..discounts.len() {
            if discounts[i] > discounts[i - 1] {
                return Err(Error::InvalidCurve(format!(
                    "discount rises from {} to {} between T = {} and T = {}",
                    discounts[i - 1],
                    discounts[i],
                    maturities[i - 1],
                    maturities[i]
                )));
            }
            if discounts[i] == discounts[i - 1] && i + 1 < discounts.len() {
                log::warn!(
                    "flat discount segment on [{}, {}] implies a zero-rate interval",
                    maturities[i - 1],
                    maturities[i]
                );
            }
        }
        Ok(Self { maturities, discounts })
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    pub fn len(&self) -> usize {
        self.maturities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maturities.is_empty()
    }

    /// Reads `maturity,discount` rows with a header line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["maturity", "discount"] {
            return Err(Error::InvalidCurve(format!(
                "expected header \"maturity,discount\", got \"{}\"",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut m, mut d) = (Vec::new(), Vec::new());
        for row in rdr.deserialize::<CurveRow>() {
            let row = row.map_err(|e| Error::InvalidCurve(e.to_string()))?;
            m.push(row.maturity);
            d.push(row.discount);
        }
        Self::new(m, d)
    }

    /// Writes `maturity,discount` rows with 12 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["maturity", "discount"])?;
        for (m, d) in self.maturities.iter().zip(&self.discounts) {
            w.write_record([format!("{m:.11e}"), format!("{d:.11e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `P(t,T)` on one path; zero for `t >= T`.
pub fn bond_price(model: &ChaosModel, path: &BrownianPath, t: f64, maturity: f64) -> Result<Estimate> {
    let grid = model.grid();
    let k = grid.index_of(t)?;
    let m = grid.index_of(maturity)?;
    if k >= m {
        return Ok(Estimate::exact(0.0));
    }
    model.tail_ratio_at(path, k, m)
}

/// Instantaneous forward rate `f(t,T) = E_t[sigma_T^2] / E_t[int_T^inf sigma^2]` for `t < T`.
pub fn forward_rate(model: &ChaosModel, path: &BrownianPath, t: f64, maturity: f64) -> Result<Estimate> {
    let grid = model.grid();
    let k = grid.index_of(t)?;
    let m = grid.index_of(maturity)?;
    if k >= m {
        return Err(invalid(format!(
            "forward rate needs t < T, got t = {t}, T = {maturity}"
        )));
    }
    model.forward_ratio_at(path, k, m)
}

/// `f(t, t + dt)` next to the kernel short rate `sigma_t^2 / pi_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShortRateCheck {
    pub forward: f64,
    pub short_rate: f64,
    /// `|forward - short_rate|`, expected to be O(dt).
    pub gap: f64,
}

pub fn short_rate_limit_check(model: &ChaosModel, path: &BrownianPath, t: f64) -> Result<ShortRateCheck> {
    let grid = model.grid();
    let k = grid.index_of(t)?;
    if k >= grid.horizon_index() {
        return Err(invalid(format!("t = {t} must lie before the horizon")));
    }
    let forward = model.forward_ratio_at(path, k, k + 1)?.mean;
    let sigma = model.sigma_path(path)?;
    let pi = model.conditional_mass_at(path, k)?.mean;
    let short_rate = sigma.sigma_sq[k] / pi;
    Ok(ShortRateCheck {
        forward,
        short_rate,
        gap: (forward - short_rate).abs(),
    })
}

fn closed_shape(spec: &ChaosSpec) -> Result<Shape> {
    let shape = Shape::compile(spec)?;
    if let Shape::Custom(_) = shape {
        return Err(Error::UnsupportedFamily(
            "the initial curve of a custom integrand needs a Monte-Carlo estimate; use bond_price at t = 0".into(),
        ));
    }
    Ok(shape)
}

/// `P(0,T) = int_T^inf E[sigma^2] / int_0^inf E[sigma^2]` at each maturity.
///
/// Maturities must be non-negative and strictly increasing; `0` is prepended when absent.
pub fn initial_curve(spec: &ChaosSpec, maturities: &[f64]) -> Result<DiscountCurve> {
    let shape = closed_shape(spec)?;
    if maturities.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(invalid("maturities must be finite and non-negative"));
    }
    if maturities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("maturities must be strictly increasing"));
    }
    let mut ts = Vec::with_capacity(maturities.len() + 1);
    if maturities.first() != Some(&0.0) {
        ts.push(0.0);
    }
    ts.extend_from_slice(maturities);
    let total = shape.mean_tail_mass(0.0)?;
    let discounts = ts
        .iter()
        .map(|&t| Ok(shape.mean_tail_mass(t)? / total))
        .collect::<Result<Vec<_>>>()?;
    DiscountCurve::new(ts, discounts)
}

/// `f(0,T) = E[sigma_T^2] / int_T^inf E[sigma^2]`.
pub fn initial_forward(spec: &ChaosSpec, maturity: f64) -> Result<f64> {
    let shape = closed_shape(spec)?;
    Ok(shape.mean_sigma_sq(maturity)? / shape.mean_tail_mass(maturity)?)
}

/// First-chaos spec reproducing `curve` at its knots, normalized to `pi_0 = 1`.
///
/// `sigma^2` is constant between knots (so `P` is linear there) and decays
/// exponentially beyond the last knot at the rate implied by the last segment.
pub fn calibrate_first_chaos(curve: &DiscountCurve) -> Result<ChaosSpec> {
    let (m, p) = (curve.maturities(), curve.discounts());
    if m.len() < 2 {
        return Err(Error::InvalidCurve("calibration needs at least two maturities".into()));
    }
    let values: Vec<f64> = (0..m.len() - 1)
        .map(|i| ((p[i] - p[i + 1]) / (m[i + 1] - m[i])).sqrt())
        .collect();
    let n = m.len() - 1;
    let kappa = (p[n - 1] / p[n]).ln() / (m[n] - m[n - 1]);
    if kappa <= 0.0 {
        return Err(Error::DegenerateSpec(
            "flat terminal segment leaves no rate for the tail".into(),
        ));
    }
    let sigma = DetFn::Piecewise {
        knots: m.to_vec(),
        values,
        tail: Some(ExpTail {
            amplitude: (kappa * p[n]).sqrt(),
            decay: 0.5 * kappa,
        }),
    };
    Ok(ChaosSpec::first_chaos(sigma))
}
