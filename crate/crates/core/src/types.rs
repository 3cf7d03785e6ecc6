//! Shared data model: the uncertainty box, interaction tuples and seeded
//! random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned uncertainty set. Every coordinate is a closed interval
/// `[lower[i], upper[i]]` with `lower[i] < upper[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl UncertaintyBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::contract("uncertainty box must have dimension >= 1"));
        }
        if lower.len() != upper.len() {
            return Err(Error::contract(format!(
                "uncertainty box bounds differ in length: {} vs {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::contract(format!(
                    "uncertainty box axis {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Per-axis interval lengths.
    pub fn lengths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Euclidean projection onto the box (per-axis clamp).
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect())
    }

    pub fn project_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
        Ok(())
    }

    /// Cartesian grid with `n_per_dim` equally spaced points per axis,
    /// endpoints included. The last axis varies fastest.
    pub fn grid_points(&self, n_per_dim: usize) -> Result<Vec<Vec<f64>>> {
        if n_per_dim < 2 {
            return Err(Error::contract(format!(
                "grid needs at least 2 points per dimension, got {n_per_dim}"
            )));
        }
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|d| linspace(self.lower[d], self.upper[d], n_per_dim))
            .collect();
        let total = n_per_dim.pow(self.dim() as u32);
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.dim()];
        for _ in 0..total {
            points.push(idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect());
            for d in (0..self.dim()).rev() {
                idx[d] += 1;
                if idx[d] < n_per_dim {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(points)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::contract(format!(
                "expected a {}-dimensional point, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// `n >= 2` equally spaced values from `lo` to `hi` with exact endpoints.
fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// One interaction tuple `(s, a, r, s', h, omega)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Termination flag: true at a terminal state or the horizon cap.
    pub done: bool,
    pub omega: Vec<f64>,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self
                .state
                .iter()
                .chain(&self.action)
                .chain(&self.next_state)
                .chain(&self.omega)
                .all(|v| v.is_finite())
    }

    /// `h` as a number in `{0, 1}`.
    pub fn done_flag(&self) -> f64 {
        if self.done {
            1.0
        } else {
            0.0
        }
    }
}

/// Independent random streams derived from one run seed. Each subsystem
/// draws from its own ChaCha stream so that changing one consumer does not
/// shift the numbers another one sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Env = 1,
    Sampler = 2,
    Refresh = 3,
    Replay = 4,
    Smoothing = 5,
    Behavior = 6,
    Eval = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    indexed_rng(seed, stream as u64, 0)
}

/// Stream `stream` of `seed`, further split by `index` (e.g. a grid point).
pub fn indexed_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 32) | index);
    rng
}
