//! Time grids and seedable Brownian path ensembles.
//!
//! Every path in an ensemble is a pure function of `(seed, index, grid)`:
//! path `i` draws its normals from a ChaCha8 stream selected by the path's
//! pair index, so paths can be generated in any order, on any number of
//! workers, and still come out bit-identical. Ensembles are lazy; a path is
//! regenerated whenever it is requested.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Relative tolerance used to decide whether a time sits on the grid.
const GRID_SNAP: f64 = 1e-9;

/// Uniform time grid on `[0, T_tail]` with a distinguished horizon `T_max`.
///
/// The horizon is where kernel trajectories stop; the stretch `(T_max, T_tail]`
/// is simulated only so that forward integrals of `sigma^2` can be truncated
/// late enough.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Uniform grid with spacing `t_max / n_steps` and `T_tail = tail_factor * t_max`.
    ///
    /// `tail_factor * n_steps` must be an integer so the tail continues at the
    /// same spacing.
    pub fn new(t_max: f64, n_steps: usize, tail_factor: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(invalid(format!("t_max must be positive and finite, got {t_max}")));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps must be at least 1"));
        }
        if !(tail_factor.is_finite() && tail_factor >= 1.0) {
            return Err(invalid(format!("tail_factor must be >= 1, got {tail_factor}")));
        }
        let tail_steps = tail_factor * n_steps as f64;
        let n_tail = tail_steps.round();
        if (tail_steps - n_tail).abs() > 1e-9 * tail_steps {
            return Err(invalid(format!(
                "tail_factor * n_steps = {tail_steps} must be an integer"
            )));
        }
        let n_tail = n_tail as usize;
        let times = (0..=n_tail).map(|i| t_max * i as f64 / n_steps as f64).collect();
        Ok(Self {
            times,
            dt: t_max / n_steps as f64,
            n_steps,
        })
    }

    /// Builds a grid from explicit times, rejecting anything that is not uniform.
    pub fn from_times(times: &[f64], horizon: f64) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(invalid("grid needs at least two times starting at 0"));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("grid times must be finite"));
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(invalid("grid times must be strictly increasing"));
        }
        for w in times.windows(2) {
            let step = w[1] - w[0];
            if step <= 0.0 {
                return Err(invalid("grid times must be strictly increasing"));
            }
            if (step - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(invalid("non-uniform grids are not supported"));
            }
        }
        let n_steps = (horizon / dt).round();
        if n_steps < 1.0 || (n_steps * dt - horizon).abs() > GRID_SNAP * horizon.max(1.0) {
            return Err(invalid(format!("horizon {horizon} is not a grid time")));
        }
        let n_steps = n_steps as usize;
        if n_steps >= times.len() {
            return Err(invalid("horizon lies beyond the last grid time"));
        }
        let n_tail = times.len() - 1;
        let tail_factor = n_tail as f64 / n_steps as f64;
        Self::new(horizon, n_steps, tail_factor)
    }

    /// All grid times on `[0, T_tail]`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Grid times on `[0, T_max]`.
    pub fn horizon_times(&self) -> &[f64] {
        &self.times[..=self.n_steps]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.n_steps]
    }

    pub fn tail_horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Index of `T_max`.
    pub fn horizon_index(&self) -> usize {
        self.n_steps
    }

    /// Index of `T_tail`.
    pub fn tail_index(&self) -> usize {
        self.times.len() - 1
    }

    /// Number of steps up to the horizon.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn tail_factor(&self) -> f64 {
        self.tail_index() as f64 / self.n_steps as f64
    }

    /// Index of grid time `t`, or an invalid-argument error if `t` is off-grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if !t.is_finite() || t < -GRID_SNAP {
            return Err(invalid(format!("time {t} is not a grid time")));
        }
        let k = (t / self.dt).round();
        let ok = k >= 0.0
            && (k as usize) < self.times.len()
            && (self.times[k as usize] - t).abs() <= GRID_SNAP * t.abs().max(1.0);
        if ok {
            Ok(k as usize)
        } else {
            Err(invalid(format!(
                "time {t} is not a grid time in [0, {}]",
                self.tail_horizon()
            )))
        }
    }

    /// The same horizon and tail factor with `factor` times as many steps.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("refinement factor must be at least 1"));
        }
        Self::new(self.horizon(), self.n_steps * factor, self.tail_factor())
    }

    /// The same horizon and spacing with a different tail factor.
    pub fn with_tail_factor(&self, tail_factor: f64) -> Result<Self> {
        Self::new(self.horizon(), self.n_steps, tail_factor)
    }
}

/// Identifies where a path came from; nested simulations derive their seeds from it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct PathId {
    pub seed: u64,
    pub index: u64,
}

/// One discretized Brownian trajectory on `[0, T_tail]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: Arc<TimeGrid>,
    increments: Vec<f64>,
    values: Vec<f64>,
    id: PathId,
}

impl BrownianPath {
    /// Builds a path from its increments; `values` is their running sum from `W(0) = 0`.
    pub fn from_increments(grid: Arc<TimeGrid>, increments: Vec<f64>, id: PathId) -> Result<Self> {
        if increments.len() != grid.tail_index() {
            return Err(invalid(format!(
                "expected {} increments, got {}",
                grid.tail_index(),
                increments.len()
            )));
        }
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut w = 0.0;
        values.push(w);
        for dw in &increments {
            w += dw;
            values.push(w);
        }
        Ok(Self {
            grid,
            increments,
            values,
            id,
        })
    }

    /// `W == 0`; handy for checking closed forms.
    pub fn zero(grid: Arc<TimeGrid>) -> Self {
        let n = grid.tail_index();
        Self {
            grid,
            increments: vec![0.0; n],
            values: vec![0.0; n + 1],
            id: PathId::default(),
        }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn id(&self) -> PathId {
        self.id
    }

    /// Sign-mirrored copy.
    pub fn negated(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            increments: self.increments.iter().map(|x| -x).collect(),
            values: self.values.iter().map(|x| -x).collect(),
            id: self.id,
        }
    }

    /// Restricts the path to a grid whose spacing is `factor` times coarser,
    /// summing increments so the coarse path sees the same Brownian motion.
    pub fn coarsen(&self, coarse: Arc<TimeGrid>, factor: usize) -> Result<Self> {
        if factor == 0 || coarse.tail_index() * factor != self.grid.tail_index() {
            return Err(invalid("coarse grid does not nest inside the fine grid"));
        }
        let increments = self.increments.chunks(factor).map(|c| c.iter().sum()).collect();
        Self::from_increments(coarse, increments, self.id)
    }
}

/// A lazily generated ensemble of `n_paths` Brownian paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: Arc<TimeGrid>,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
}

impl PathEnsemble {
    /// `sample_paths`: ensemble of `n_paths` paths on `[0, T_tail]`.
    pub fn new(grid: Arc<TimeGrid>, n_paths: usize, seed: u64, antithetic: bool) -> Result<Self> {
        if n_paths == 0 {
            return Err(invalid("n_paths must be at least 1"));
        }
        if antithetic && !n_paths.is_multiple_of(2) {
            return Err(invalid(format!(
                "antithetic sampling needs an even path count, got {n_paths}"
            )));
        }
        Ok(Self {
            grid,
            n_paths,
            seed,
            antithetic,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    /// Path `index`; panics if out of range.
    pub fn path(&self, index: usize) -> BrownianPath {
        assert!(index < self.n_paths, "path index {index} out of range");
        let (stream, mirror) = if self.antithetic {
            (index / 2, index % 2 == 1)
        } else {
            (index, false)
        };
        let sd = self.grid.dt().sqrt();
        let n = self.grid.tail_index();
        let mut rng = stream_rng(self.seed, stream as u64);
        let increments = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                if mirror {
                    -(sd * z)
                } else {
                    sd * z
                }
            })
            .collect();
        let id = PathId {
            seed: self.seed,
            index: index as u64,
        };
        BrownianPath::from_increments(self.grid.clone(), increments, id).expect("increment count matches grid")
    }

    pub fn iter(&self) -> impl Iterator<Item = BrownianPath> + '_ {
        (0..self.n_paths).map(move |i| self.path(i))
    }

    /// Generates every path up front.
    pub fn materialize(&self) -> Vec<BrownianPath> {
        self.iter().collect()
    }

    /// Same seed and grid with a different path count; the first paths coincide.
    pub fn with_n_paths(&self, n_paths: usize) -> Result<Self> {
        Self::new(self.grid.clone(), n_paths, self.seed, self.antithetic)
    }

    /// Same seed and path count on another grid.
    pub fn with_grid(&self, grid: Arc<TimeGrid>) -> Result<Self> {
        Self::new(grid, self.n_paths, self.seed, self.antithetic)
    }
}

/// ChaCha8 generator for `(seed, stream)`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; folds several counters into one seed.
pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_quarter_steps() {
        let g = TimeGrid::new(1.0, 4, 1.0).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.tail_horizon(), 1.0);
        assert_eq!(g.horizon(), 1.0);
    }

    #[test]
    fn long_grid_with_tail() {
        let g = TimeGrid::new(10.0, 1000, 3.0).unwrap();
        assert_eq!(g.horizon_times().len(), 1001);
        assert!((g.dt() - 0.01).abs() < 1e-15);
        assert_eq!(g.tail_horizon(), 30.0);
        assert_eq!(g.times().len(), 3001);
        assert_eq!(g.horizon(), 10.0);
    }

    #[test]
    fn rejects_bad_grid_arguments() {
        assert!(TimeGrid::new(0.0, 4, 1.0).is_err());
        assert!(TimeGrid::new(-1.0, 4, 1.0).is_err());
        assert!(TimeGrid::new(1.0, 0, 1.0).is_err());
        assert!(TimeGrid::new(1.0, 4, 0.5).is_err());
        assert!(TimeGrid::new(1.0, 4, 1.1).is_err());
    }

    #[test]
    fn from_times_rejects_non_uniform() {
        assert!(TimeGrid::from_times(&[0.0, 0.1, 0.3], 0.3).is_err());
        let g = TimeGrid::from_times(&[0.0, 0.5, 1.0, 1.5, 2.0], 1.0).unwrap();
        assert_eq!(g.horizon_index(), 2);
        assert_eq!(g.tail_index(), 4);
    }

    #[test]
    fn index_lookup() {
        let g = TimeGrid::new(10.0, 1000, 2.0).unwrap();
        assert_eq!(g.index_of(0.0).unwrap(), 0);
        assert_eq!(g.index_of(1.0).unwrap(), 100);
        assert_eq!(g.index_of(20.0).unwrap(), 2000);
        assert!(g.index_of(0.005).is_err());
        assert!(g.index_of(20.01).is_err());
        assert!(g.index_of(f64::NAN).is_err());
    }

    #[test]
    fn antithetic_pairs_mirror_exactly() {
        let g = Arc::new(TimeGrid::new(1.0, 50, 2.0).unwrap());
        let e = PathEnsemble::new(g, 2, 7, true).unwrap();
        let p0 = e.path(0);
        let p1 = e.path(1);
        for (a, b) in p0.increments().iter().zip(p1.increments()) {
            assert_eq!(a.to_bits(), (-b).to_bits());
        }
        // W(0) = 0 on both; every later value is the exact mirror
        for (a, b) in p0.values()[1..].iter().zip(&p1.values()[1..]) {
            assert_eq!(a.to_bits(), (-b).to_bits());
        }
    }

    #[test]
    fn odd_antithetic_rejected() {
        let g = Arc::new(TimeGrid::new(1.0, 4, 1.0).unwrap());
        assert!(PathEnsemble::new(g.clone(), 3, 1, true).is_err());
        assert!(PathEnsemble::new(g, 0, 1, false).is_err());
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let g = Arc::new(TimeGrid::new(2.0, 40, 1.5).unwrap());
        let a = PathEnsemble::new(g.clone(), 6, 99, false).unwrap();
        let b = PathEnsemble::new(g, 6, 99, false).unwrap();
        assert_eq!(a.materialize(), b.materialize());
        // Any access order gives the same path.
        assert_eq!(a.path(4), b.materialize()[4]);
    }

    #[test]
    fn values_are_running_sums() {
        let g = Arc::new(TimeGrid::new(1.0, 20, 1.0).unwrap());
        let p = PathEnsemble::new(g, 1, 3, false).unwrap().path(0);
        assert_eq!(p.values()[0], 0.0);
        for i in 0..p.increments().len() {
            let d = p.values()[i + 1] - p.values()[i];
            assert!((d - p.increments()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn coarsening_keeps_endpoint_values() {
        let fine = Arc::new(TimeGrid::new(1.0, 40, 1.0).unwrap());
        let coarse = Arc::new(TimeGrid::new(1.0, 10, 1.0).unwrap());
        let p = PathEnsemble::new(fine, 1, 5, false).unwrap().path(0);
        let c = p.coarsen(coarse, 4).unwrap();
        for (k, v) in c.values().iter().enumerate() {
            assert!((v - p.values()[4 * k]).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_paths() {
        let g = Arc::new(TimeGrid::new(1.0, 10, 1.0).unwrap());
        let a = PathEnsemble::new(g.clone(), 2, 1, false).unwrap();
        let b = PathEnsemble::new(g, 2, 2, false).unwrap();
        assert_ne!(a.path(0).values(), b.path(0).values());
        assert_ne!(a.path(0).values(), a.path(1).values());
    }
}
