//! Run configuration.
//!
//! A run is described by one TOML file. Every table rejects unknown keys.
//!
//! ```toml
//! output = "out"                # optional, relative to the config file; `--out` overrides; defaults to "."
//!
//! [spec]                        # simulate, curve, validate, price
//! family = "gbm_exponential"    # first_chaos | second_chaos | gbm_exponential | custom
//! r = 0.05
//! lambda = 0.2
//!
//! [grid]                        # simulate, validate, price
//! t_max = 10.0
//! n_steps = 1000
//! tail_factor = 2.0             # T_tail = tail_factor * t_max
//!
//! [mc]                          # simulate, validate, price
//! n_paths = 10000
//! seed = 12345
//! antithetic = false
//!
//! [simulate]
//! paths_to_write = 10           # rows of kernel_paths.csv come from the first paths
//!
//! [curve]
//! maturities = [1.0, 2.0, 5.0, 10.0]
//!
//! [validate]
//! checkpoints = [0.0, 1.0, 5.0] # defaults to [0, t_max]
//! integrability_time = 1.0      # defaults to t_max
//!
//! [[price.bond_options]]        # call at `t` on the bond maturing at `maturity`
//! t = 1.0
//! maturity = 2.0
//! strike = 0.9
//!
//! [[price.cashflows]]           # `amount` paid at `pay_time`
//! pay_time = 10.0
//! amount = 1.0
//!
//! [calibrate]
//! curve_file = "curve.csv"      # columns maturity,discount; relative to the config file
//! ```
//!
//! Deterministic functions (`sigma`, `psi`, `g`, `h`) are tables with a `kind`:
//! `{ kind = "exponential", amplitude, decay }` or
//! `{ kind = "piecewise", knots, values, tail = { amplitude, decay } }`.
//! A `custom` spec names a built-in `functional` (same `kind` names as the
//! families plus `damped_cosine`) and requires `n_inner`; `tail_bound` and
//! `scale` are optional.

use std::path::{Path, PathBuf};

use chaos_rates::SpecConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

fn default_paths_to_write() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SpecConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<PriceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_max: f64,
    pub n_steps: usize,
    pub tail_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_paths_to_write")]
    pub paths_to_write: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            paths_to_write: default_paths_to_write(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub maturities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrability_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceConfig {
    #[serde(default)]
    pub bond_options: Vec<BondOptionConfig>,
    #[serde(default)]
    pub cashflows: Vec<CashflowConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BondOptionConfig {
    pub t: f64,
    pub maturity: f64,
    pub strike: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CashflowConfig {
    pub pay_time: f64,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub curve_file: PathBuf,
}

/// `Some(value)` or a config failure naming the missing key.
pub fn require<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T, Failure> {
    value
        .as_ref()
        .ok_or_else(|| Failure::Config(format!("missing key `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))
    }

    /// Reads the file and resolves relative `output` and `calibrate.curve_file` against its directory.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = &mut config.output {
            resolve(out);
        }
        if let Some(cal) = &mut config.calibrate {
            resolve(&mut cal.curve_file);
        }
        Ok(config)
    }
}
