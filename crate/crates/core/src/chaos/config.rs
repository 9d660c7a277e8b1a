//! Serializable form of [`ChaosSpec`], discriminated by `family`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ChaosSpec, ClosedFormFunctional, CustomIntegrand, DampedCosine, DetFn, PathFunctional};
use crate::error::{invalid, Result};

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

fn zero() -> f64 {
    0.0
}

/// Configuration block for a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpecConfig {
    FirstChaos {
        sigma: DetFn,
    },
    SecondChaos {
        psi: DetFn,
        g: DetFn,
        h: DetFn,
    },
    GbmExponential {
        r: f64,
        lambda: f64,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
    Custom {
        functional: FunctionalConfig,
        n_inner: usize,
        #[serde(default = "zero")]
        tail_bound: f64,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        scale: f64,
    },
}

/// Built-in path functionals available to custom integrands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    FirstChaos { sigma: DetFn },
    SecondChaos { psi: DetFn, g: DetFn, h: DetFn },
    GbmExponential { r: f64, lambda: f64 },
    DampedCosine { amplitude: f64, decay: f64, frequency: f64 },
}

impl FunctionalConfig {
    fn build(&self) -> Result<Arc<dyn PathFunctional>> {
        let closed = |spec| -> Result<Arc<dyn PathFunctional>> { Ok(Arc::new(ClosedFormFunctional::new(spec)?)) };
        match self {
            FunctionalConfig::FirstChaos { sigma } => closed(ChaosSpec::first_chaos(sigma.clone())),
            FunctionalConfig::SecondChaos { psi, g, h } => closed(ChaosSpec::SecondChaos {
                psi: psi.clone(),
                g: g.clone(),
                h: h.clone(),
            }),
            FunctionalConfig::GbmExponential { r, lambda } => closed(ChaosSpec::gbm(*r, *lambda)),
            FunctionalConfig::DampedCosine {
                amplitude,
                decay,
                frequency,
            } => {
                if ![amplitude, decay, frequency].iter().all(|v| v.is_finite()) {
                    return Err(invalid("damped_cosine parameters must be finite"));
                }
                Ok(Arc::new(DampedCosine {
                    amplitude: *amplitude,
                    decay: *decay,
                    frequency: *frequency,
                }))
            }
        }
    }
}

impl SpecConfig {
    pub fn to_spec(&self) -> Result<ChaosSpec> {
        Ok(match self {
            SpecConfig::FirstChaos { sigma } => ChaosSpec::first_chaos(sigma.clone()),
            SpecConfig::SecondChaos { psi, g, h } => ChaosSpec::SecondChaos {
                psi: psi.clone(),
                g: g.clone(),
                h: h.clone(),
            },
            SpecConfig::GbmExponential { r, lambda, scale } => ChaosSpec::GbmExponential {
                r: *r,
                lambda: *lambda,
                scale: *scale,
            },
            SpecConfig::Custom {
                functional,
                n_inner,
                tail_bound,
                scale,
            } => ChaosSpec::Custom(CustomIntegrand {
                evaluator: functional.build()?,
                n_inner: *n_inner,
                tail_bound: *tail_bound,
                scale: *scale,
            }),
        })
    }

    /// Config block for a closed-form spec; custom integrands carry arbitrary code and have none.
    pub fn from_spec(spec: &ChaosSpec) -> Result<Self> {
        Ok(match spec {
            ChaosSpec::FirstChaos { sigma } => SpecConfig::FirstChaos { sigma: sigma.clone() },
            ChaosSpec::SecondChaos { psi, g, h } => SpecConfig::SecondChaos {
                psi: psi.clone(),
                g: g.clone(),
                h: h.clone(),
            },
            ChaosSpec::GbmExponential { r, lambda, scale } => SpecConfig::GbmExponential {
                r: *r,
                lambda: *lambda,
                scale: *scale,
            },
            ChaosSpec::Custom(_) => {
                return Err(invalid("custom integrands cannot be serialized"));
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn parses_each_family() {
        let gbm: SpecConfig = toml::from_str("family = \"gbm_exponential\"\nr = 0.05\nlambda = 0.2\n").unwrap();
        assert!(matches!(gbm.to_spec().unwrap(), ChaosSpec::GbmExponential { scale, .. } if scale == 1.0));

        let first: SpecConfig = toml::from_str(
            "family = \"first_chaos\"\n[sigma]\nkind = \"piecewise\"\nknots = [0.0, 1.0]\nvalues = [0.2]\ntail = { amplitude = 0.2, decay = 0.1 }\n",
        )
        .unwrap();
        assert!(matches!(first.to_spec().unwrap(), ChaosSpec::FirstChaos { .. }));

        let custom: SpecConfig = toml::from_str(
            "family = \"custom\"\nn_inner = 10\n[functional]\nkind = \"damped_cosine\"\namplitude = 1.0\ndecay = 0.5\nfrequency = 2.0\n",
        )
        .unwrap();
        assert!(matches!(custom.to_spec().unwrap(), ChaosSpec::Custom(c) if c.n_inner == 10));
    }

    #[test]
    fn custom_without_n_inner_is_rejected() {
        let err = toml::from_str::<SpecConfig>(
            "family = \"custom\"\n[functional]\nkind = \"gbm_exponential\"\nr = 0.1\nlambda = 0.1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("n_inner"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(
            toml::from_str::<SpecConfig>("family = \"gbm_exponential\"\nr = 0.05\nlambda = 0.2\nmu = 1.0\n").is_err()
        );
    }

    #[test]
    fn round_trip_through_toml() {
        let spec = SpecConfig::FirstChaos {
            sigma: DetFn::Piecewise {
                knots: vec![0.0, 1.0, 2.0],
                values: vec![0.3, 0.2],
                tail: Some(super::super::ExpTail {
                    amplitude: 0.2,
                    decay: 0.05,
                }),
            },
        };
        let text = toml::to_string(&spec).unwrap();
        let back: SpecConfig = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn custom_spec_has_no_config() {
        let spec = ChaosSpec::gbm(0.1, 0.1).as_custom(4, 0.0).unwrap();
        assert!(matches!(SpecConfig::from_spec(&spec), Err(Error::InvalidArgument(_))));
    }
}
