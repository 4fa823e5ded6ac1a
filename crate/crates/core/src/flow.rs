//! Characteristics of the continuity equation along one Brownian path.
//!
//! The noise is additive, so the Stratonovich and Itô readings of the
//! characteristic equation coincide and explicit Euler is strong order one.
//! Forward and backward solvers consume the same increments; the backward
//! solver evaluates the drift at the already-known later node.

use std::io::Write;

use crate::error::{Error, Result};
use crate::paths::{BrownianPath, TimeGrid};
use crate::quadrature::trapezoid;
use crate::scenario::{DriftSpec, InitialConditionSpec};

/// States with magnitude above this abort the path.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Nodes `t_k in [s, t]` and states `X_{s, t_k}(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrajectory {
    pub grid: TimeGrid,
    pub k_start: usize,
    pub k_end: usize,
    pub x: f64,
    pub values: Vec<f64>,
}

/// Nodes `t_k in [s, t]` and inverse-flow states `Y_{t_k, t}(x)`;
/// `values[j]` belongs to grid node `k_start + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTrajectory {
    pub grid: TimeGrid,
    pub k_start: usize,
    pub k_end: usize,
    pub x: f64,
    pub values: Vec<f64>,
}

impl ForwardTrajectory {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("trajectory is never empty")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_trajectory(out, "X", &self.grid, self.k_start, &self.values)
    }
}

impl BackwardTrajectory {
    pub fn s(&self) -> f64 {
        self.grid.time(self.k_start)
    }

    pub fn t(&self) -> f64 {
        self.grid.time(self.k_end)
    }

    /// `Y_{s,t}(x)`, the state at the start of the interval.
    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    pub fn stays_in(&self, lo: f64, hi: f64) -> bool {
        self.values.iter().all(|&y| y >= lo && y <= hi)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_trajectory(out, "Y", &self.grid, self.k_start, &self.values)
    }
}

fn write_trajectory<W: Write>(
    mut out: W,
    name: &str,
    grid: &TimeGrid,
    k_start: usize,
    values: &[f64],
) -> std::io::Result<()> {
    writeln!(out, "k,t,{name}")?;
    for (j, v) in values.iter().enumerate() {
        let k = k_start + j;
        writeln!(out, "{k},{:.16e},{:.16e}", grid.time(k), v)?;
    }
    Ok(())
}

fn interval(path: &BrownianPath, s: f64, t: f64) -> Result<(usize, usize)> {
    let grid = path.grid();
    let ks = grid.require_index(s, "s")?;
    let kt = grid.require_index(t, "t")?;
    if ks > kt {
        return Err(Error::InvalidTime(format!(
            "need s <= t, got s = {s}, t = {t}"
        )));
    }
    Ok((ks, kt))
}

fn guard(step: usize, value: f64) -> Result<f64> {
    if value.is_finite() && value.abs() <= DIVERGENCE_LIMIT {
        Ok(value)
    } else {
        Err(Error::Divergence { step, value })
    }
}

/// Euler scheme for `X_{s,t}(x) = x + int_s^t b(r, X_{s,r}) dr + B_t - B_s`.
pub fn solve_forward(
    drift: &DriftSpec,
    path: &BrownianPath,
    s: f64,
    t: f64,
    x: f64,
) -> Result<ForwardTrajectory> {
    let (ks, kt) = interval(path, s, t)?;
    forward_between(drift, path, ks, kt, x)
}

pub(crate) fn forward_between(
    drift: &DriftSpec,
    path: &BrownianPath,
    ks: usize,
    kt: usize,
    x: f64,
) -> Result<ForwardTrajectory> {
    let grid = *path.grid();
    let h = grid.step();
    let dbs = path.increments();
    let mut values = Vec::with_capacity(kt - ks + 1);
    let mut state = guard(ks, x)?;
    values.push(state);
    for (k, db) in dbs.iter().enumerate().take(kt).skip(ks) {
        let b = drift.jet(state)[0];
        state = guard(k + 1, state + b * h + db)?;
        values.push(state);
    }
    Ok(ForwardTrajectory {
        grid,
        k_start: ks,
        k_end: kt,
        x,
        values,
    })
}

/// Backward Euler sweep for `Y_{s,t}(x) = x - int_s^t b(r, Y_{r,t}) dr - (B_t - B_s)`
/// from the terminal condition `Y_{t,t}(x) = x`.
pub fn solve_backward(
    drift: &DriftSpec,
    path: &BrownianPath,
    s: f64,
    t: f64,
    x: f64,
) -> Result<BackwardTrajectory> {
    let (ks, kt) = interval(path, s, t)?;
    backward_between(drift, path, ks, kt, x)
}

pub(crate) fn backward_between(
    drift: &DriftSpec,
    path: &BrownianPath,
    ks: usize,
    kt: usize,
    x: f64,
) -> Result<BackwardTrajectory> {
    let grid = *path.grid();
    let h = grid.step();
    let dbs = path.increments();
    let n = kt - ks + 1;
    let mut values = vec![0.0; n];
    values[n - 1] = guard(kt, x)?;
    for k in (ks..kt).rev() {
        let next = values[k + 1 - ks];
        let b = drift.jet(next)[0];
        values[k - ks] = guard(k, next - b * h - dbs[k])?;
    }
    Ok(BackwardTrajectory {
        grid,
        k_start: ks,
        k_end: kt,
        x,
        values,
    })
}

/// `JY_{s,t}(x) = exp(-int_s^t b'(v, Y_{v,t}(x)) dv)`, trapezoidal in `v`.
pub fn jacobian_backward(drift: &DriftSpec, traj: &BackwardTrajectory) -> f64 {
    let slopes: Vec<f64> = traj.values.iter().map(|&y| drift.jet(y)[1]).collect();
    (-trapezoid(&slopes, traj.grid.step())).exp()
}

/// `u(t, x)` with the pieces it was assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub u: f64,
    /// `Y_{0,t}(x)`
    pub y: f64,
    /// `JY_{0,t}(x)`
    pub jy: f64,
    pub trajectory: BackwardTrajectory,
}

/// `u(t, x) = u0(Y_{0,t}(x)) JY_{0,t}(x)`.
pub fn solution_at(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    path: &BrownianPath,
    t: f64,
    x: f64,
) -> Result<Solution> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::InvalidTime(format!("solution needs t > 0, got {t}")));
    }
    let trajectory = solve_backward(drift, path, 0.0, t, x)?;
    Ok(assemble(drift, ic, trajectory))
}

pub(crate) fn assemble(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    trajectory: BackwardTrajectory,
) -> Solution {
    let y = trajectory.initial();
    let jy = jacobian_backward(drift, &trajectory);
    Solution {
        u: ic.jet(y)[0] * jy,
        y,
        jy,
        trajectory,
    }
}
