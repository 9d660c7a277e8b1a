//! One function per verb. Each writes its CSVs into the output directory.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chaos_rates::instruments::{price_bond_option, price_single_cashflow, CashflowSpec, Payoff, PriceEstimate};
use chaos_rates::kernel::{kernel_path, summarize};
use chaos_rates::term_structure::{calibrate_first_chaos, initial_curve, initial_forward};
use chaos_rates::validation::{run_battery, BatteryOptions};
use chaos_rates::{ChaosModel, ChaosSpec, DiscountCurve, PathEnsemble, SpecConfig, TimeGrid};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{require, RunConfig};
use crate::Failure;

/// Fixed float format of every CSV: 12 significant digits.
fn num(x: f64) -> String {
    format!("{x:.11e}")
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| io_failure(path, e))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<(), Failure>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| io_failure(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    ValidationFailed,
}

/// A parsed configuration bound to an output directory.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Engine {
    name: &'static str,
    version: &'static str,
    cli_version: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    threads: Option<usize>,
    engine: Engine,
    config: &'a RunConfig,
}

impl Run {
    pub fn new(config: RunConfig, out: Option<PathBuf>) -> Result<Self, Failure> {
        let out = out
            .or_else(|| config.output.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `manifest.toml`: the resolved config, the verb and the engine version.
    pub fn write_manifest(&self, command: &str, threads: Option<usize>) -> Result<(), Failure> {
        let mut config = self.config.clone();
        config.output = Some(self.out.clone());
        let manifest = Manifest {
            command,
            threads,
            engine: Engine {
                name: "chaos-rates",
                version: chaos_rates::VERSION,
                cli_version: env!("CARGO_PKG_VERSION"),
            },
            config: &config,
        };
        let text = toml::to_string(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
        let path = self.path("manifest.toml");
        fs::write(&path, text).map_err(|e| io_failure(&path, e))
    }

    fn spec(&self) -> Result<ChaosSpec, Failure> {
        Ok(require(&self.config.spec, "spec")?.to_spec()?)
    }

    fn model_and_ensemble(&self) -> Result<(ChaosModel, PathEnsemble), Failure> {
        let spec = self.spec()?;
        let g = require(&self.config.grid, "grid")?;
        let mc = require(&self.config.mc, "mc")?;
        let grid = Arc::new(TimeGrid::new(g.t_max, g.n_steps, g.tail_factor)?);
        let model = ChaosModel::new(spec, grid.clone())?;
        let ens = PathEnsemble::new(grid, mc.n_paths, mc.seed, mc.antithetic)?;
        Ok((model, ens))
    }

    pub fn simulate(&self) -> Result<Outcome, Failure> {
        let (model, ens) = self.model_and_ensemble()?;
        let n_write = self
            .config
            .simulate
            .unwrap_or_default()
            .paths_to_write
            .min(ens.n_paths());
        let paths = (0..n_write)
            .into_par_iter()
            .map(|i| kernel_path(&model, &ens.path(i)))
            .collect::<chaos_rates::Result<Vec<_>>>()?;
        let rows = paths.iter().enumerate().flat_map(|(i, kp)| {
            (0..kp.times.len()).map(move |j| {
                vec![
                    i.to_string(),
                    num(kp.times[j]),
                    num(kp.sigma_sq[j]),
                    num(kp.pi[j]),
                    num(kp.short_rate[j]),
                    num(kp.bank[j]),
                    num(kp.rho[j]),
                ]
            })
        });
        write_rows(
            &self.path("kernel_paths.csv"),
            &["path_id", "t", "sigma_sq", "pi", "short_rate", "bank", "rho"],
            rows,
        )?;

        let summary = summarize(&model, &ens)?;
        let rows = (0..summary.times.len()).map(|j| {
            vec![
                num(summary.times[j]),
                num(summary.pi[j].mean),
                num(summary.pi[j].std_error),
                num(summary.rho[j].mean),
                num(summary.rho[j].std_error),
            ]
        });
        write_rows(
            &self.path("summary.csv"),
            &["t", "mean_pi", "se_pi", "mean_rho", "se_rho"],
            rows,
        )?;
        println!(
            "simulated {} paths; wrote kernel_paths.csv ({n_write} paths) and summary.csv to {}",
            ens.n_paths(),
            self.out.display()
        );
        Ok(Outcome::Done)
    }

    pub fn curve(&self) -> Result<Outcome, Failure> {
        let spec = self.spec()?;
        let maturities = &require(&self.config.curve, "curve")?.maturities;
        let curve = initial_curve(&spec, maturities)?;
        let rows = curve
            .maturities()
            .iter()
            .zip(curve.discounts())
            .map(|(&t, &p)| Ok(vec![num(t), num(p), num(initial_forward(&spec, t)?)]))
            .collect::<Result<Vec<_>, Failure>>()?;
        write_rows(&self.path("curve.csv"), &["maturity", "discount", "forward"], rows)?;
        println!("wrote curve.csv ({} maturities) to {}", curve.len(), self.out.display());
        Ok(Outcome::Done)
    }

    pub fn validate(&self) -> Result<Outcome, Failure> {
        let (model, ens) = self.model_and_ensemble()?;
        let grid = model.grid().clone();
        let mut opts = BatteryOptions::for_grid(&grid);
        if let Some(v) = &self.config.validate {
            if let Some(c) = &v.checkpoints {
                opts.checkpoints = c.clone();
            }
            if let Some(t) = v.integrability_time {
                opts.integrability_time = t;
            }
        }
        for &t in opts.checkpoints.iter().chain([&opts.integrability_time]) {
            if grid.index_of(t)? > grid.horizon_index() {
                return Err(Failure::Config(format!("checkpoint {t} lies beyond t_max")));
            }
        }
        let report = run_battery(&model, &ens, &opts);
        let path = self.path("validation.csv");
        report.write_csv(File::create(&path).map_err(|e| io_failure(&path, e))?)?;
        print!("{report}");
        std::io::stdout().flush().ok();
        Ok(if report.all_pass() {
            Outcome::Done
        } else {
            Outcome::ValidationFailed
        })
    }

    pub fn price(&self) -> Result<Outcome, Failure> {
        let block = require(&self.config.price, "price")?;
        if block.bond_options.is_empty() && block.cashflows.is_empty() {
            return Err(Failure::Config("price block lists no instruments".into()));
        }
        let (model, ens) = self.model_and_ensemble()?;
        let mut rows = Vec::new();
        let mut push = |name: String, p: PriceEstimate| {
            rows.push(vec![name, num(p.value), num(p.std_error), p.n_paths.to_string()]);
        };
        for o in &block.bond_options {
            let p = price_bond_option(&model, &ens, o.t, o.maturity, o.strike)?;
            push(format!("bond_call t={} T={} K={}", o.t, o.maturity, o.strike), p);
        }
        for c in &block.cashflows {
            let cf = CashflowSpec {
                pay_time: c.pay_time,
                payoff: Payoff::Constant(c.amount),
            };
            let p = price_single_cashflow(&model, &ens, 0.0, cf)?;
            push(format!("cashflow T={} amount={}", c.pay_time, c.amount), p);
        }
        let n = rows.len();
        write_rows(
            &self.path("prices.csv"),
            &["instrument", "value", "std_error", "n_paths"],
            rows,
        )?;
        println!("priced {n} instruments; wrote prices.csv to {}", self.out.display());
        Ok(Outcome::Done)
    }

    pub fn calibrate(&self) -> Result<Outcome, Failure> {
        let file = &require(&self.config.calibrate, "calibrate")?.curve_file;
        let reader =
            File::open(file).map_err(|e| Failure::Config(format!("cannot read curve file {}: {e}", file.display())))?;
        let curve = DiscountCurve::read_csv(reader)?;
        let spec = calibrate_first_chaos(&curve)?;

        #[derive(Serialize)]
        struct Fitted {
            spec: SpecConfig,
        }
        let text = toml::to_string(&Fitted {
            spec: SpecConfig::from_spec(&spec)?,
        })
        .map_err(|e| Failure::Runtime(e.to_string()))?;
        let spec_path = self.path("calibrated_spec.toml");
        fs::write(&spec_path, text).map_err(|e| io_failure(&spec_path, e))?;

        let repriced = initial_curve(&spec, curve.maturities())?;
        let mut worst = 0.0f64;
        let rows: Vec<Vec<String>> = curve
            .maturities()
            .iter()
            .zip(curve.discounts().iter().zip(repriced.discounts()))
            .map(|(&t, (&input, &out))| {
                let err = (out - input).abs();
                worst = worst.max(err);
                vec![num(t), num(input), num(out), num(err)]
            })
            .collect();
        write_rows(
            &self.path("roundtrip.csv"),
            &["maturity", "input", "repriced", "abs_error"],
            rows,
        )?;
        println!(
            "calibrated {} knots, max abs error {worst:.3e}; wrote calibrated_spec.toml and roundtrip.csv to {}",
            curve.len(),
            self.out.display()
        );
        Ok(Outcome::Done)
    }
}
