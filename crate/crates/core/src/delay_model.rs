//! Bounded stationary Markov chains for the packet ages r and d.
//!
//! A chain lives on the integer interval [lo, hi]. Row `a` of the one-step
//! matrix is the distribution of the next value given the current value is
//! `a` (indices in absolute delay units). Because the age of the freshest
//! packet can grow by at most one per step, and every admissible delay has a
//! non-zero chance of delivery, the one-step matrix must satisfy the support
//! rule `step[a][b] > 0  <=>  b <= a + 1` in both directions. n-step
//! probabilities are matrix powers of the one-step matrix.

use nalgebra::DMatrix;
use rand_chacha::rand_core::RngCore;
use std::sync::Mutex;
use thiserror::Error;

use crate::rng_util;

/// Row sums must match 1 within this tolerance; rejected otherwise
/// (no silent renormalization).
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("transition matrix must be {expected}x{expected}, got {rows}x{cols}")]
    Shape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("row {row} (delay {value}) sums to {sum:.17e}, expected 1 within {ROW_SUM_TOL:e}")]
    RowSum { row: usize, value: usize, sum: f64 },
    #[error("entry ({from},{to}) = {entry} outside [0,1]")]
    EntryRange { from: usize, to: usize, entry: f64 },
    #[error("support violation at ({from},{to}): {reason}")]
    Support {
        from: usize,
        to: usize,
        reason: &'static str,
    },
    #[error("delay value {value} outside [{lo},{hi}]")]
    OutOfRange { value: usize, lo: usize, hi: usize },
    #[error("bounds lo={lo} > hi={hi}")]
    Bounds { lo: usize, hi: usize },
}

/// An n-step transition lookup in absolute delay units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionQuery {
    pub from_value: usize,
    pub to_value: usize,
    pub steps: usize,
}

/// Validated bounded Markov chain with cached matrix powers.
///
/// Immutable after construction; the power cache grows behind a mutex, so a
/// chain can be shared across threads. Sampling takes a caller-owned rng.
#[derive(Debug)]
pub struct DelayChain {
    lo: usize,
    hi: usize,
    step: DMatrix<f64>,
    powers: Mutex<Vec<DMatrix<f64>>>,
}

impl Clone for DelayChain {
    fn clone(&self) -> Self {
        let powers = self.powers.lock().unwrap().clone();
        DelayChain {
            lo: self.lo,
            hi: self.hi,
            step: self.step.clone(),
            powers: Mutex::new(powers),
        }
    }
}

impl DelayChain {
    /// Validates and builds a chain. `step` is row-major over [lo, hi].
    pub fn new(lo: usize, hi: usize, step: DMatrix<f64>) -> Result<Self, ChainError> {
        if lo > hi {
            return Err(ChainError::Bounds { lo, hi });
        }
        let size = hi - lo + 1;
        if step.nrows() != size || step.ncols() != size {
            return Err(ChainError::Shape {
                expected: size,
                rows: step.nrows(),
                cols: step.ncols(),
            });
        }
        for ai in 0..size {
            let a = lo + ai;
            let mut sum = 0.0;
            for bi in 0..size {
                let b = lo + bi;
                let entry = step[(ai, bi)];
                if !(0.0..=1.0).contains(&entry) || !entry.is_finite() {
                    return Err(ChainError::EntryRange {
                        from: a,
                        to: b,
                        entry,
                    });
                }
                if b > a + 1 && entry != 0.0 {
                    return Err(ChainError::Support {
                        from: a,
                        to: b,
                        reason: "positive mass above a+1 (age grows by at most one per step)",
                    });
                }
                if b <= a + 1 && entry <= 0.0 {
                    return Err(ChainError::Support {
                        from: a,
                        to: b,
                        reason: "zero mass where strict positivity is required (b <= a+1)",
                    });
                }
                sum += entry;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ChainError::RowSum {
                    row: ai,
                    value: a,
                    sum,
                });
            }
        }
        let identity = DMatrix::identity(size, size);
        Ok(DelayChain {
            lo,
            hi,
            step,
            powers: Mutex::new(vec![identity]),
        })
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    /// Number of states, hi - lo + 1.
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn one_step_matrix(&self) -> &DMatrix<f64> {
        &self.step
    }

    fn index(&self, value: usize) -> Result<usize, ChainError> {
        if value < self.lo || value > self.hi {
            return Err(ChainError::OutOfRange {
                value,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(value - self.lo)
    }

    /// Entry (from, to) of the n-step power; steps = 0 is the identity kernel.
    pub fn n_step(&self, q: TransitionQuery) -> Result<f64, ChainError> {
        let fi = self.index(q.from_value)?;
        let ti = self.index(q.to_value)?;
        let mut powers = self.powers.lock().unwrap();
        while powers.len() <= q.steps {
            let next = powers.last().unwrap() * &self.step;
            powers.push(next);
        }
        Ok(powers[q.steps][(fi, ti)])
    }

    /// Convenience wrapper around [`DelayChain::n_step`]. A target outside
    /// the chain's support has probability zero, so layouts may span a wider
    /// delay range than the chain actually visits.
    pub fn prob(&self, from: usize, to: usize, steps: usize) -> f64 {
        if to < self.lo || to > self.hi {
            return 0.0;
        }
        self.n_step(TransitionQuery {
            from_value: from,
            to_value: to,
            steps,
        })
        .expect("source value within chain bounds")
    }

    /// Draws the next value from row `current`.
    pub fn sample_next(
        &self,
        current: usize,
        rng: &mut impl RngCore,
    ) -> Result<usize, ChainError> {
        let row = self.index(current)?;
        let u = rng_util::uniform(rng);
        let mut acc = 0.0;
        for bi in 0..self.len() {
            acc += self.step[(row, bi)];
            if u < acc {
                return Ok(self.lo + bi);
            }
        }
        // Row sums to 1 within tolerance; u can exceed acc only by rounding.
        Ok(self.hi.min(current + 1))
    }

    /// Chain that stays at a single value forever.
    pub fn deterministic(value: usize) -> Self {
        DelayChain::new(value, value, DMatrix::from_element(1, 1, 1.0)).unwrap()
    }
}
