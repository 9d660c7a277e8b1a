//! Ensemble statistics with reproducible parallel reduction.
//!
//! Paths are split into fixed-size blocks; blocks are folded independently
//! (possibly in parallel) and then merged strictly in block order, so every
//! statistic is bit-identical for any thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::paths::{BrownianPath, PathEnsemble};

/// Paths per reduction block.
pub const BLOCK_SIZE: usize = 256;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            n: 1,
        }
    }
}

/// Running mean and centred second moment (Welford, merged with Chan's update).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            std_error: self.std_error(),
            n: self.n,
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Per-coordinate moments of a vector-valued sample.
#[derive(Debug, Clone, PartialEq)]
pub struct VecMoments {
    cells: Vec<Moments>,
}

impl VecMoments {
    pub fn new(len: usize) -> Self {
        Self {
            cells: vec![Moments::default(); len],
        }
    }

    pub fn push(&mut self, xs: &[f64]) {
        debug_assert_eq!(xs.len(), self.cells.len());
        for (c, x) in self.cells.iter_mut().zip(xs) {
            c.push(*x);
        }
    }

    pub fn merge(&mut self, other: &VecMoments) {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, i: usize) -> &Moments {
        &self.cells[i]
    }

    pub fn estimates(&self) -> Vec<Estimate> {
        self.cells.iter().map(Moments::estimate).collect()
    }
}

/// Folds every path of `ensemble` into an accumulator, block by block.
///
/// `fold` may fail; the error from the lowest-indexed failing block is returned.
pub fn try_reduce_paths<A, I, F, M>(ensemble: &PathEnsemble, init: I, fold: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, usize, BrownianPath) -> Result<()> + Sync,
    M: Fn(&mut A, A),
{
    let n = ensemble.n_paths();
    let n_blocks = n.div_ceil(BLOCK_SIZE);
    let blocks: Vec<Result<A>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            for i in b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(n) {
                fold(&mut acc, i, ensemble.path(i))?;
            }
            Ok(acc)
        })
        .collect();
    let mut out = init();
    for block in blocks {
        merge(&mut out, block?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_sample_has_zero_error() {
        let m: Moments = std::iter::repeat_n(0.024972, 1000).collect();
        assert_eq!(m.mean(), 0.024972);
        assert_eq!(m.std_error(), 0.0);
    }

    #[test]
    fn known_variance() {
        let m: Moments = [1.0, 2.0, 3.0, 4.0].into_iter().collect();
        assert!((m.mean() - 2.5).abs() < 1e-15);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(xs in proptest::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let whole: Moments = xs.iter().copied().collect();
            let mut left: Moments = xs[..split].iter().copied().collect();
            let right: Moments = xs[split..].iter().copied().collect();
            left.merge(&right);
            prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
            prop_assert!((left.variance() - whole.variance()).abs() <= 1e-7 * (1.0 + whole.variance()));
        }
    }
}
