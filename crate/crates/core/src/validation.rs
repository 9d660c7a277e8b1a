//! Statistical checks of the kernel's martingale and potential properties.
//!
//! Every check produces an [`Entry`] of [`Row`]s. A row compares an ensemble
//! estimate with a target under a gate of `3 SE + 1e-9 max(1, |target|)`; the
//! small absolute floor only absorbs rounding when the standard error is zero.
//! Differences between two quantities on the same paths are estimated from
//! their per-path differences, so the standard error accounts for correlation.
//! Engine errors (for example a kernel below the positivity floor) turn into
//! failing rows rather than aborting the battery.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::chaos::{ChaosModel, ChaosSpec, Rotation, Shape};
use crate::error::{Error, Result};
use crate::kernel::kernel_path;
use crate::paths::{BrownianPath, PathEnsemble, TimeGrid};
use crate::stats::{try_reduce_paths, Estimate, VecMoments};
use crate::term_structure::bond_price;

/// Number of standard errors allowed by every statistical gate.
pub const SE_GATE: f64 = 3.0;
/// Absolute slack, relative to `max(1, |target|)`, for rounding.
pub const FLOOR: f64 = 1e-9;
/// Relative change allowed by stability and refinement checks.
pub const STABILITY: f64 = 0.05;

fn gate(std_error: f64, target: f64) -> f64 {
    SE_GATE * std_error + FLOOR * target.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// `|estimate - target| <= tolerance`
    Equal,
    /// `estimate - target <= tolerance`
    AtMost,
    /// Reported only.
    Info,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub test: String,
    pub time: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub target: f64,
    pub tolerance: f64,
    pub gate: Gate,
    pub pass: bool,
}

impl Row {
    pub fn equal(test: &str, time: f64, est: Estimate, target: f64) -> Self {
        let tolerance = gate(est.std_error, target);
        Self {
            test: test.into(),
            time,
            estimate: est.mean,
            std_error: est.std_error,
            target,
            tolerance,
            gate: Gate::Equal,
            pass: (est.mean - target).abs() <= tolerance,
        }
    }

    pub fn at_most(test: &str, time: f64, est: Estimate, bound: f64) -> Self {
        let tolerance = gate(est.std_error, bound);
        Self {
            test: test.into(),
            time,
            estimate: est.mean,
            std_error: est.std_error,
            target: bound,
            tolerance,
            gate: Gate::AtMost,
            pass: est.mean - bound <= tolerance,
        }
    }

    /// `|b - a| / |a|` against a fixed limit.
    fn relative_change(test: &str, time: f64, a: f64, b: f64, limit: f64) -> Self {
        let change = ((b - a) / a).abs();
        Self {
            test: test.into(),
            time,
            estimate: change,
            std_error: 0.0,
            target: 0.0,
            tolerance: limit,
            gate: Gate::AtMost,
            pass: change <= limit,
        }
    }

    fn info(test: &str, time: f64, est: Estimate) -> Self {
        Self {
            test: test.into(),
            time,
            estimate: est.mean,
            std_error: est.std_error,
            target: f64::NAN,
            tolerance: f64::NAN,
            gate: Gate::Info,
            pass: true,
        }
    }

    fn hard(test: &str, time: f64, value: f64, target: f64, pass: bool) -> Self {
        Self {
            test: test.into(),
            time,
            estimate: value,
            std_error: 0.0,
            target,
            tolerance: 0.0,
            gate: Gate::AtMost,
            pass,
        }
    }

    fn error(test: &str, err: &Error) -> Self {
        let t = match err {
            Error::NonPositiveKernel { time, .. } | Error::BankOverflow { time } => *time,
            _ => f64::NAN,
        };
        Self::hard(&format!("{test}.error"), t, f64::NAN, f64::NAN, false)
    }
}

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub rows: Vec<Row>,
    pub n_paths: usize,
    pub seed: u64,
    /// Engine error that ended the check early, if any.
    pub error: Option<String>,
}

impl Entry {
    fn new(name: &str, ens: &PathEnsemble, rows: Vec<Row>) -> Self {
        Self {
            name: name.into(),
            rows,
            n_paths: ens.n_paths(),
            seed: ens.seed(),
            error: None,
        }
    }

    fn failed(name: &str, ens: &PathEnsemble, err: &Error) -> Self {
        log::warn!("{name}: {err}");
        let mut entry = Entry::new(name, ens, vec![Row::error(name, err)]);
        entry.error = Some(err.to_string());
        entry
    }

    pub fn pass(&self) -> bool {
        self.error.is_none() && self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

fn guarded(name: &str, ens: &PathEnsemble, f: impl FnOnce() -> Result<Vec<Row>>) -> Entry {
    match f() {
        Ok(rows) => Entry::new(name, ens, rows),
        Err(e) => Entry::failed(name, ens, &e),
    }
}

/// A collection of entries ordered by test name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub entries: Vec<Entry>,
}

impl ValidationReport {
    pub fn push(&mut self, entry: Entry) {
        self.entries.push(entry);
        self.entries.sort_by(|a, b| a.name.cmp(&b.name));
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(Entry::pass)
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Records `test,time,estimate,std_error,target,tolerance,verdict`, 12 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "test",
            "time",
            "estimate",
            "std_error",
            "target",
            "tolerance",
            "verdict",
        ])?;
        for row in self.entries.iter().flat_map(|e| &e.rows) {
            w.write_record([
                row.test.clone(),
                format!("{:.11e}", row.time),
                format!("{:.11e}", row.estimate),
                format!("{:.11e}", row.std_error),
                format!("{:.11e}", row.target),
                format!("{:.11e}", row.tolerance),
                if row.pass { "pass" } else { "fail" }.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Standardized distance of a row from its gate; larger is closer to failing.
fn severity(r: &Row) -> f64 {
    match r.gate {
        Gate::Info => f64::NEG_INFINITY,
        Gate::Equal => (r.estimate - r.target).abs() / r.tolerance,
        Gate::AtMost => (r.estimate - r.target) / r.tolerance,
    }
}

impl fmt::Display for ValidationReport {
    /// One line per entry showing its first failing row, or else its tightest row.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>7} {:>6} {:>8} {:>9}  {:>14} {:>10} {:>14} {:>10}",
            "test", "verdict", "rows", "time", "paths", "estimate", "std_error", "target", "tolerance"
        )?;
        for e in &self.entries {
            let shown = e
                .failures()
                .next()
                .or_else(|| e.rows.iter().max_by(|a, b| severity(a).total_cmp(&severity(b))));
            let verdict = if e.pass() { "pass" } else { "FAIL" };
            match shown {
                Some(r) => writeln!(
                    f,
                    "{:<24} {:>7} {:>6} {:>8.3} {:>9}  {:>14.6e} {:>10.3e} {:>14.6e} {:>10.3e}",
                    e.name,
                    verdict,
                    e.rows.len(),
                    r.time,
                    e.n_paths,
                    r.estimate,
                    r.std_error,
                    r.target,
                    r.tolerance
                )?,
                None => writeln!(f, "{:<24} {:>7} {:>6}", e.name, verdict, 0)?,
            }
            if let Some(err) = &e.error {
                writeln!(f, "    error: {err}")?;
            }
        }
        Ok(())
    }
}

fn indices(grid: &TimeGrid, times: &[f64]) -> Result<Vec<usize>> {
    times.iter().map(|&t| grid.index_of(t)).collect()
}

/// Per-coordinate moments of a vector statistic computed on every path.
fn fold_vec<F>(ens: &PathEnsemble, len: usize, f: F) -> Result<VecMoments>
where
    F: Fn(&BrownianPath, &mut [f64]) -> Result<()> + Sync,
{
    try_reduce_paths(
        ens,
        || (VecMoments::new(len), vec![0.0; len]),
        |acc, _, path| {
            f(&path, &mut acc.1)?;
            acc.0.push(&acc.1);
            Ok(())
        },
        |acc, other| acc.0.merge(&other.0),
    )
    .map(|(m, _)| m)
}

/// Mean `pi` is non-increasing on `[0, T_tail]`, stays below the family's tail
/// bound at `T_tail`, and `pi > 0` on every path at every time before `T_tail`.
pub fn test_potential(model: &ChaosModel, ens: &PathEnsemble) -> Entry {
    guarded("potential", ens, || {
        let grid = model.grid();
        let n = grid.tail_index();
        // (pi and its increments, scratch, smallest pi seen, whether a NaN was seen)
        type Acc = (VecMoments, Vec<f64>, f64, bool);
        let (stats, _, lowest, nan): Acc = try_reduce_paths(
            ens,
            || (VecMoments::new(2 * n + 1), vec![0.0; 2 * n + 1], f64::INFINITY, false),
            |acc, _, path| {
                let pi = model.conditional_masses(&path, n)?;
                acc.1[..=n].copy_from_slice(&pi);
                for i in 0..n {
                    acc.1[n + 1 + i] = pi[i + 1] - pi[i];
                }
                acc.0.push(&acc.1);
                for p in &pi[..n] {
                    acc.2 = acc.2.min(*p);
                    acc.3 |= p.is_nan();
                }
                Ok(())
            },
            |acc, other| {
                acc.0.merge(&other.0);
                acc.2 = acc.2.min(other.2);
                acc.3 |= other.3;
            },
        )?;
        let times = grid.times();
        let mut rows = Vec::with_capacity(n + 2);
        for i in 0..n {
            rows.push(Row::at_most(
                "potential.monotone",
                times[i + 1],
                stats.get(n + 1 + i).estimate(),
                0.0,
            ));
        }
        let bound = match model.spec() {
            ChaosSpec::Custom(ci) => ci.tail_bound,
            spec => Shape::compile(spec)?.mean_tail_mass(grid.tail_horizon())?,
        };
        rows.push(Row::at_most(
            "potential.tail",
            grid.tail_horizon(),
            stats.get(n).estimate(),
            bound,
        ));
        let lowest = if nan { f64::NAN } else { lowest };
        rows.push(Row::hard("potential.positive", 0.0, lowest, 0.0, lowest > 0.0));
        Ok(rows)
    })
}

/// `pi_t + int_0^t sigma^2 ds` has constant mean on `[0, horizon]`.
pub fn test_type_d_decomposition(model: &ChaosModel, ens: &PathEnsemble) -> Entry {
    guarded("type_d", ens, || {
        let grid = model.grid();
        let h = grid.horizon_index();
        let stats = fold_vec(ens, h, |path, out| {
            let pi = model.conditional_masses(path, h)?;
            let s = model.sigma_path(path)?;
            let start = pi[0] + s.cumulative[0];
            for i in 1..=h {
                out[i - 1] = pi[i] + s.cumulative[i] - start;
            }
            Ok(())
        })?;
        Ok((1..=h)
            .map(|i| {
                Row::equal(
                    "type_d.decomposition",
                    grid.times()[i],
                    stats.get(i - 1).estimate(),
                    0.0,
                )
            })
            .collect())
    })
}

/// The two halves of the `rho = pi B` check.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoEntries {
    /// `E[rho_t] = rho_0`
    pub martingale: Entry,
    /// `E[rho_t] <= rho_0`
    pub supermartingale: Entry,
}

/// `rho_t - rho_0` at each of `times`: zero mean for a martingale, non-positive for a supermartingale.
pub fn test_rho_martingale(model: &ChaosModel, ens: &PathEnsemble, times: &[f64]) -> RhoEntries {
    let stats = indices(model.grid(), times).and_then(|idx| {
        fold_vec(ens, idx.len(), |path, out| {
            let kp = kernel_path(model, path)?;
            for (o, &k) in out.iter_mut().zip(&idx) {
                *o = kp.rho[k] - kp.rho[0];
            }
            Ok(())
        })
    });
    match stats {
        Ok(stats) => {
            let rows = |name: &str, at_most: bool| -> Vec<Row> {
                times
                    .iter()
                    .enumerate()
                    .map(|(j, &t)| {
                        let est = stats.get(j).estimate();
                        if at_most {
                            Row::at_most(name, t, est, 0.0)
                        } else {
                            Row::equal(name, t, est, 0.0)
                        }
                    })
                    .collect()
            };
            RhoEntries {
                martingale: Entry::new("rho_martingale", ens, rows("rho.martingale", false)),
                supermartingale: Entry::new("rho_supermartingale", ens, rows("rho.supermartingale", true)),
            }
        }
        Err(e) => RhoEntries {
            martingale: Entry::failed("rho_martingale", ens, &e),
            supermartingale: Entry::failed("rho_supermartingale", ens, &e),
        },
    }
}

/// `E[int_0^t pi dB] = E[sum_{j<k} pi_j r_j B_j dt]` on the grid.
pub fn integrability_estimate(model: &ChaosModel, ens: &PathEnsemble, t: f64) -> Result<Estimate> {
    let k = model.grid().index_of(t)?;
    if k > model.grid().horizon_index() {
        return Err(Error::InvalidArgument(format!("t = {t} lies beyond the horizon")));
    }
    let dt = model.grid().dt();
    let stats = fold_vec(ens, 1, |path, out| {
        let kp = kernel_path(model, path)?;
        out[0] = (0..k).map(|j| kp.pi[j] * kp.short_rate[j] * kp.bank[j] * dt).sum();
        Ok(())
    })?;
    Ok(stats.get(0).estimate())
}

/// `E[int_0^t pi dB]` is finite: stable within 5% when `N` doubles and when `T_tail` doubles.
pub fn test_integrability_condition(model: &ChaosModel, ens: &PathEnsemble, t: f64) -> Entry {
    guarded("integrability", ens, || {
        let base = integrability_estimate(model, ens, t)?;
        let more_paths = integrability_estimate(model, &ens.with_n_paths(2 * ens.n_paths())?, t)?;
        let grid = model.grid();
        let longer = Arc::new(grid.with_tail_factor(2.0 * grid.tail_factor())?);
        let long_model = ChaosModel::new(model.spec().clone(), longer.clone())?.with_rotation(model.rotation());
        let long_tail = integrability_estimate(&long_model, &ens.with_grid(longer)?, t)?;
        Ok(vec![
            Row::info("integrability.value", t, base),
            Row::relative_change("integrability.double_n", t, base.mean, more_paths.mean, STABILITY),
            Row::relative_change("integrability.double_tail", t, base.mean, long_tail.mean, STABILITY),
        ])
    })
}

/// `E[(int_t^inf sigma^2) / pi_t] = 1` at each of `times`.
pub fn test_quotient_lemma(model: &ChaosModel, ens: &PathEnsemble, times: &[f64]) -> Entry {
    guarded("quotient", ens, || {
        let idx = indices(model.grid(), times)?;
        let stats = fold_vec(ens, idx.len(), |path, out| {
            let s = model.sigma_path(path)?;
            for (o, &k) in out.iter_mut().zip(&idx) {
                let pi = model.conditional_mass_at(path, k)?.mean;
                *o = model.realized_tail_mass(&s, path, k)? / pi;
            }
            Ok(())
        })?;
        Ok(times
            .iter()
            .enumerate()
            .map(|(j, &t)| Row::equal("quotient", t, stats.get(j).estimate(), 1.0))
            .collect())
    })
}

/// `E[(X - X_t)^2] = E[pi_t]`, compared path by path at each of `times`.
///
/// `X - X_t` is the Ito sum over `[t, T_tail]`; the variance of the remainder
/// beyond `T_tail` is added from the closed form when one exists.
pub fn test_conditional_variance_identity(model: &ChaosModel, ens: &PathEnsemble, times: &[f64]) -> Entry {
    guarded("conditional_variance", ens, || {
        let idx = indices(model.grid(), times)?;
        let stats = fold_vec(ens, idx.len(), |path, out| {
            let s = model.sigma_path(path)?;
            let residual = model.residual_variance(path)?;
            for (o, &k) in out.iter_mut().zip(&idx) {
                let dx = model.ito_increment(&s, path, k);
                *o = dx * dx + residual - model.conditional_mass_at(path, k)?.mean;
            }
            Ok(())
        })?;
        Ok(times
            .iter()
            .enumerate()
            .map(|(j, &t)| Row::equal("conditional_variance", t, stats.get(j).estimate(), 0.0))
            .collect())
    })
}

/// `max_t B_t` converges under grid refinement (`dt`, `dt/2`, `dt/4`) on the same Brownian paths.
pub fn test_bank_finiteness(spec: &ChaosSpec, ens: &PathEnsemble) -> Entry {
    guarded("bank_finiteness", ens, || {
        let coarse = ens.grid().clone();
        let mid = Arc::new(coarse.refine(2)?);
        let fine = Arc::new(coarse.refine(4)?);
        let levels = [
            (ChaosModel::new(spec.clone(), coarse.clone())?, 4),
            (ChaosModel::new(spec.clone(), mid.clone())?, 2),
            (ChaosModel::new(spec.clone(), fine.clone())?, 1),
        ];
        let fine_ens = ens.with_grid(fine)?;
        let stats = fold_vec(&fine_ens, levels.len(), |path, out| {
            for (o, (model, factor)) in out.iter_mut().zip(&levels) {
                let p = if *factor == 1 {
                    path.clone()
                } else {
                    path.coarsen(model.grid().clone(), *factor)?
                };
                let kp = kernel_path(model, &p)?;
                *o = kp.bank.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            Ok(())
        })?;
        let mut rows: Vec<Row> = levels
            .iter()
            .enumerate()
            .map(|(j, (model, _))| Row::info("bank.max", model.grid().dt(), stats.get(j).estimate()))
            .collect();
        rows.push(Row::relative_change(
            "bank.refinement",
            levels[2].0.grid().dt(),
            stats.get(1).mean(),
            stats.get(2).mean(),
            STABILITY,
        ));
        Ok(rows)
    })
}

fn bits_differ(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x.to_bits() != y.to_bits()).count()
}

/// Sign flips of `sigma` leave `pi`, `r`, `B` and bond prices bit-identical.
///
/// Also checks that a flip on `[0, horizon/2)` does not change the verdict of the
/// conditional-variance check at `times`.
pub fn test_rotation_invariance(model: &ChaosModel, ens: &PathEnsemble, times: &[f64]) -> Entry {
    guarded("rotation", ens, || {
        let grid = model.grid();
        let horizon = grid.horizon();
        let mid = grid.times()[grid.horizon_index() / 2];
        let rotations = [
            ("rotation.global", Rotation::Global),
            (
                "rotation.interval",
                Rotation::Interval {
                    start: 0.0,
                    end: horizon / 2.0,
                },
            ),
        ];
        let rotated: Vec<ChaosModel> = rotations.iter().map(|(_, r)| model.clone().with_rotation(*r)).collect();
        let stats = fold_vec(ens, rotations.len(), |path, out| {
            let base = kernel_path(model, path)?;
            let bonds = [
                bond_price(model, path, 0.0, horizon)?.mean,
                bond_price(model, path, mid, horizon)?.mean,
            ];
            for (o, m) in out.iter_mut().zip(&rotated) {
                let kp = kernel_path(m, path)?;
                let rb = [
                    bond_price(m, path, 0.0, horizon)?.mean,
                    bond_price(m, path, mid, horizon)?.mean,
                ];
                *o = (bits_differ(&base.pi, &kp.pi)
                    + bits_differ(&base.short_rate, &kp.short_rate)
                    + bits_differ(&base.bank, &kp.bank)
                    + bits_differ(&bonds, &rb)) as f64;
            }
            Ok(())
        })?;
        let mut rows: Vec<Row> = rotations
            .iter()
            .enumerate()
            .map(|(j, (name, _))| {
                // total mismatches over all paths
                let total = stats.get(j).mean() * ens.n_paths() as f64;
                Row::hard(name, horizon, total, 0.0, total == 0.0)
            })
            .collect();
        let plain = test_conditional_variance_identity(model, ens, times).pass();
        let flipped = test_conditional_variance_identity(&rotated[1], ens, times).pass();
        rows.push(Row::hard(
            "rotation.variance_verdict",
            horizon,
            f64::from(u8::from(plain != flipped)),
            0.0,
            plain == flipped,
        ));
        Ok(rows)
    })
}

/// Checkpoints for the battery.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryOptions {
    /// Times for the `rho`, quotient and conditional-variance checks.
    pub checkpoints: Vec<f64>,
    /// Upper limit `t` of `int_0^t pi dB`.
    pub integrability_time: f64,
}

impl BatteryOptions {
    /// `0` and the horizon.
    pub fn for_grid(grid: &TimeGrid) -> Self {
        Self {
            checkpoints: vec![0.0, grid.horizon()],
            integrability_time: grid.horizon(),
        }
    }
}

/// Runs every check on one ensemble.
pub fn run_battery(model: &ChaosModel, ens: &PathEnsemble, opts: &BatteryOptions) -> ValidationReport {
    let mut report = ValidationReport::default();
    let times = &opts.checkpoints;
    report.push(test_potential(model, ens));
    report.push(test_type_d_decomposition(model, ens));
    let rho = test_rho_martingale(model, ens, times);
    report.push(rho.martingale);
    report.push(rho.supermartingale);
    report.push(test_integrability_condition(model, ens, opts.integrability_time));
    report.push(test_quotient_lemma(model, ens, times));
    report.push(test_conditional_variance_identity(model, ens, times));
    report.push(test_bank_finiteness(model.spec(), ens));
    report.push(test_rotation_invariance(model, ens, times));
    report
}
