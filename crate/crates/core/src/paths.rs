//! Discretized Brownian paths and the two path transformations used by the
//! derivative oracles and the density criteria.
//!
//! Paths are generated from a ChaCha8 stream keyed by `(seed, index)`, so
//! path `i` can be produced without touching paths `0..i` and Monte Carlo
//! loops stay bit-reproducible under any parallel schedule.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_k = k T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter(
                "grid needs at least one step".into(),
            ));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.n_steps as f64
        }
    }

    pub fn nearest_index(&self, t: f64) -> usize {
        let k = (t / self.step()).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_steps)
        }
    }

    /// Grid index of `t` if `t` is a node (up to `1e-9` steps).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        if !(t >= -1e-9 * self.step() && t <= self.horizon * (1.0 + 1e-12)) {
            return None;
        }
        let k = self.nearest_index(t);
        ((self.time(k) - t).abs() <= 1e-9 * self.step()).then_some(k)
    }

    /// Grid index of `t`, or an error naming `what`.
    pub fn require_index(&self, t: f64, what: &str) -> Result<usize> {
        self.index_of(t).ok_or_else(|| {
            Error::InvalidTime(format!(
                "{what} = {t} is not a node of the grid (T = {}, n_steps = {})",
                self.horizon, self.n_steps
            ))
        })
    }
}

/// A Cameron–Martin perturbation `B(t) -> B(t) + epsilon * min(t, alpha0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftDirection {
    pub alpha0: f64,
    pub epsilon: f64,
}

/// Record of a shift applied to a path; `alpha` is the grid time actually used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedShift {
    pub requested_alpha: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub snapped: bool,
}

/// Brownian path sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    increments: Vec<f64>,
    values: Vec<f64>,
    shifts: Vec<AppliedShift>,
}

fn cumulative(increments: &[f64]) -> Vec<f64> {
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut b = 0.0;
    values.push(b);
    for d in increments {
        b += d;
        values.push(b);
    }
    values
}

impl BrownianPath {
    pub fn from_increments(grid: TimeGrid, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(Error::GridMismatch(format!(
                "expected {} increments, got {}",
                grid.n_steps(),
                increments.len()
            )));
        }
        let values = cumulative(&increments);
        Ok(BrownianPath {
            grid,
            increments,
            values,
            shifts: Vec::new(),
        })
    }

    /// The path with all increments zero.
    pub fn zero(grid: TimeGrid) -> Self {
        BrownianPath {
            grid,
            increments: vec![0.0; grid.n_steps()],
            values: vec![0.0; grid.n_nodes()],
            shifts: Vec::new(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `Delta B_k = B(t_{k+1}) - B(t_k)`.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `B(t_k)` for every node.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn shifts(&self) -> &[AppliedShift] {
        &self.shifts
    }

    /// Sum of squared increments.
    pub fn quadratic_variation(&self) -> f64 {
        self.increments.iter().map(|d| d * d).sum()
    }

    /// Same path on a grid `factor` times coarser; each coarse increment is
    /// the sum of the fine ones it covers.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianPath> {
        if factor == 0 || !self.grid.n_steps().is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.grid.n_steps()
            )));
        }
        let grid = TimeGrid::new(self.grid.horizon(), self.grid.n_steps() / factor)?;
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().sum())
            .collect();
        BrownianPath::from_increments(grid, increments)
    }

    /// Debug dump with header `k,t,B`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,t,B")?;
        for (k, b) in self.values.iter().enumerate() {
            writeln!(out, "{k},{:.16e},{:.16e}", self.grid.time(k), b)?;
        }
        Ok(())
    }
}

/// Deterministic path number `index` of the stream keyed by `seed`.
pub fn sample_path(grid: &TimeGrid, seed: u64, index: u64) -> BrownianPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let sd = grid.step().sqrt();
    let increments: Vec<f64> = (0..grid.n_steps())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let values = cumulative(&increments);
    BrownianPath {
        grid: *grid,
        increments,
        values,
        shifts: Vec::new(),
    }
}

/// Apply `B(t_k) -> B(t_k) + epsilon * min(t_k, alpha0)`. `alpha0` is
/// snapped to the nearest grid time; the snap is recorded on the result.
pub fn shift_path(path: &BrownianPath, dir: ShiftDirection) -> Result<BrownianPath> {
    let grid = path.grid;
    if !(dir.alpha0 > 0.0 && dir.alpha0 <= grid.horizon() * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "shift time alpha0 must lie in (0, T], got {}",
            dir.alpha0
        )));
    }
    if !dir.epsilon.is_finite() {
        return Err(Error::InvalidParameter(
            "shift magnitude must be finite".into(),
        ));
    }
    let k0 = grid.nearest_index(dir.alpha0).max(1);
    let alpha = grid.time(k0);
    let mut out = path.clone();
    for k in 0..k0 {
        out.increments[k] += dir.epsilon * (grid.time(k + 1) - grid.time(k));
    }
    for (k, b) in out.values.iter_mut().enumerate() {
        *b += dir.epsilon * grid.time(k).min(alpha);
    }
    out.shifts.push(AppliedShift {
        requested_alpha: dir.alpha0,
        alpha,
        epsilon: dir.epsilon,
        snapped: (alpha - dir.alpha0).abs() > 1e-9 * grid.step(),
    });
    Ok(out)
}

/// Ornstein–Uhlenbeck mixing `e^{-theta} w + sqrt(1 - e^{-2 theta}) w'`,
/// increment by increment.
pub fn mix_paths(
    omega: &BrownianPath,
    omega_prime: &BrownianPath,
    theta: f64,
) -> Result<BrownianPath> {
    if omega.grid != omega_prime.grid {
        return Err(Error::GridMismatch(
            "mixed paths must share the same time grid".into(),
        ));
    }
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mixing parameter theta must be a finite nonnegative number, got {theta}"
        )));
    }
    let keep = (-theta).exp();
    let fresh = (-(-2.0 * theta).exp_m1()).sqrt();
    let increments: Vec<f64> = omega
        .increments
        .iter()
        .zip(&omega_prime.increments)
        .map(|(a, b)| keep * a + fresh * b)
        .collect();
    BrownianPath::from_increments(omega.grid, increments)
}
