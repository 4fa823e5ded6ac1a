//! Pathwise Malliavin derivatives of the inverse flow, its Jacobian and the
//! solution `u = u0(Y) JY`, together with the a-priori bound audit.
//!
//! With `P(a) = int_s^a b'(Y_{r,t}) dr` (trapezoidal on the grid) and
//! `E(a, c) = exp(-(P(c) - P(a)))`, the first derivatives are
//!
//! ```text
//! D_a Y_{s,t}   = -E(s, a)                                  for a in [s, t]
//! D_a JY_{s,t}  = -JY int_s^a b''(Y_v) D_a Y_{v,t} dv
//! D_a u(t, x)   = u0'(Y) D_a Y JY + u0(Y) D_a JY
//! ```
//!
//! and the second derivatives follow by differentiating once more:
//!
//! ```text
//! D_b D_a Y_{v,t} = -E(v, a) int_v^{min(a,b)} b''(Y_r) E(r, b) dr
//! D_b D_a JY      =  JY I_a I_b
//!                  - JY int_s^{min(a,b)} [b'''(Y_v) D_a Y_{v,t} D_b Y_{v,t}
//!                                        + b''(Y_v) D_b D_a Y_{v,t}] dv
//! ```
//!
//! with `I_a = int_s^a b''(Y_v) D_a Y_{v,t} dv`. Every nested integral is a
//! trapezoidal sum on the simulation grid; the nesting is unrolled into
//! running sums (`gt`, `lt`, `ht` below) so a full `(a, b)` matrix costs
//! `O(1)` per entry. The running sums only ever multiply by
//! `exp(-(P(k+1) - P(k)))`, so nothing overflows before the derivatives
//! themselves do.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::BackwardTrajectory;
use crate::paths::TimeGrid;
use crate::quadrature::trapezoid_product;
use crate::report::Verdict;
use crate::scenario::{BoundConstants, DriftSpec, HypothesisReport, InitialConditionSpec};

/// Prefix sums that make every derivative formula an `O(1)` lookup.
#[derive(Debug, Clone)]
pub struct InverseFlowCalculus {
    grid: TimeGrid,
    k_start: usize,
    k_end: usize,
    jy: f64,
    /// `P` at each local node.
    p: Vec<f64>,
    /// `D_a Y_{s,t} = -exp(-P(a))`.
    dy: Vec<f64>,
    /// `exp(-P(a)) int_s^a b''(Y_v) exp(P(v)) dv`; `D_a JY = JY gt[a]`.
    gt: Vec<f64>,
    /// `int_s^a b'''(Y_v) exp(-2 (P(a) - P(v))) dv`.
    lt: Vec<f64>,
    /// `exp(-2 P(a)) int_s^a b''(Y_v) exp(P(v)) G(v) dv` with `G = exp(P) gt`.
    ht: Vec<f64>,
}

impl InverseFlowCalculus {
    pub fn new(drift: &DriftSpec, traj: &BackwardTrajectory) -> Self {
        let h = traj.grid.step();
        let n = traj.values.len();
        let jets: Vec<[f64; 4]> = traj.values.iter().map(|&y| drift.jet(y)).collect();

        let mut p = vec![0.0; n];
        let mut gt = vec![0.0; n];
        let mut lt = vec![0.0; n];
        let mut ht = vec![0.0; n];
        for j in 0..n.saturating_sub(1) {
            let (a, b) = (&jets[j], &jets[j + 1]);
            let dp = 0.5 * h * (a[1] + b[1]);
            p[j + 1] = p[j] + dp;
            let decay = (-dp).exp();
            let decay2 = decay * decay;
            gt[j + 1] = decay * gt[j] + 0.5 * h * (a[2] * decay + b[2]);
            lt[j + 1] = decay2 * lt[j] + 0.5 * h * (a[3] * decay2 + b[3]);
            ht[j + 1] = decay2 * ht[j] + 0.5 * h * (a[2] * gt[j] * decay2 + b[2] * gt[j + 1]);
        }
        let dy = p.iter().map(|pk| -(-pk).exp()).collect();
        let jy = (-p[n - 1]).exp();
        InverseFlowCalculus {
            grid: traj.grid,
            k_start: traj.k_start,
            k_end: traj.k_end,
            jy,
            p,
            dy,
            gt,
            lt,
            ht,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Global grid indices `[k_start, k_end]` where the derivatives live.
    pub fn support(&self) -> (usize, usize) {
        (self.k_start, self.k_end)
    }

    pub fn jy(&self) -> f64 {
        self.jy
    }

    fn local(&self, k: usize) -> Option<usize> {
        (k >= self.k_start && k <= self.k_end).then(|| k - self.k_start)
    }

    /// `D_{t_k} Y_{s,t}(x)`; exactly zero off `[s, t]`.
    pub fn d_y(&self, k: usize) -> f64 {
        self.local(k).map_or(0.0, |j| self.dy[j])
    }

    /// `D_{t_k} JY_{s,t}(x)`.
    pub fn d_jy(&self, k: usize) -> f64 {
        self.local(k).map_or(0.0, |j| self.jy * self.gt[j])
    }

    /// `D_{t_l} D_{t_k} Y_{s,t}(x)`.
    pub fn d2_y(&self, k: usize, l: usize) -> f64 {
        match (self.local(k), self.local(l)) {
            (Some(i), Some(j)) => {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                self.dy[hi] * self.gt[lo]
            }
            _ => 0.0,
        }
    }

    /// `D_{t_l} D_{t_k} JY_{s,t}(x)`.
    pub fn d2_jy(&self, k: usize, l: usize) -> f64 {
        match (self.local(k), self.local(l)) {
            (Some(i), Some(j)) => {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                let e = (-(self.p[hi] - self.p[lo])).exp();
                self.d2_jy_local(i, j, lo, e)
            }
            _ => 0.0,
        }
    }

    #[inline]
    fn d2_jy_local(&self, i: usize, j: usize, lo: usize, e: f64) -> f64 {
        let g = self.gt[lo];
        self.jy * (self.gt[i] * self.gt[j] - e * self.lt[lo] + e * (g * g - self.ht[lo]))
    }
}

/// A function on the time grid that vanishes outside `[support.0, support.1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: TimeGrid,
    pub support: (usize, usize),
    pub values: Vec<f64>,
}

impl GridFunction {
    /// Build from a closure evaluated on the support; zero elsewhere.
    pub fn from_fn(grid: TimeGrid, support: (usize, usize), f: impl Fn(usize) -> f64) -> Self {
        let mut values = vec![0.0; grid.n_nodes()];
        for (k, v) in values
            .iter_mut()
            .enumerate()
            .take(support.1 + 1)
            .skip(support.0)
        {
            *v = f(k);
        }
        GridFunction {
            grid,
            support,
            values,
        }
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values[self.support.0..=self.support.1]
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

/// `<f, g>` in `L^2([0, T])`: trapezoidal rule over the common support.
pub fn h_inner(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch(
            "inner product of profiles on different grids".into(),
        ));
    }
    let lo = f.support.0.max(g.support.0);
    let hi = f.support.1.min(g.support.1);
    if lo >= hi {
        return Ok(0.0);
    }
    Ok(trapezoid_product(
        &f.values[lo..=hi],
        &g.values[lo..=hi],
        f.grid.step(),
    ))
}

pub fn h_norm(f: &GridFunction) -> f64 {
    h_inner(f, f).expect("a profile shares its own grid").sqrt()
}

/// First Malliavin derivatives of `Y_{0,t}(x)`, `JY_{0,t}(x)` and `u(t, x)`
/// as functions of `a` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeProfile {
    pub t: f64,
    pub x: f64,
    pub u: f64,
    pub y: f64,
    pub jy: f64,
    pub dy: GridFunction,
    pub djy: GridFunction,
    pub du: GridFunction,
}

impl DerivativeProfile {
    pub fn from_calculus(
        calc: &InverseFlowCalculus,
        ic: &InitialConditionSpec,
        traj: &BackwardTrajectory,
    ) -> Self {
        let y = traj.initial();
        let [u0, u1, _] = ic.jet(y);
        let jy = calc.jy();
        let grid = *calc.grid();
        let support = calc.support();
        let dy = GridFunction::from_fn(grid, support, |k| calc.d_y(k));
        let djy = GridFunction::from_fn(grid, support, |k| calc.d_jy(k));
        let du = GridFunction::from_fn(grid, support, |k| {
            u1 * dy.values[k] * jy + u0 * djy.values[k]
        });
        DerivativeProfile {
            t: traj.t(),
            x: traj.x,
            u: u0 * jy,
            y,
            jy,
            dy,
            djy,
            du,
        }
    }

    /// Debug dump with header `alpha,dY,dJY,du`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "alpha,dY,dJY,du")?;
        for k in 0..self.du.grid.n_nodes() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.du.grid.time(k),
                self.dy.values[k],
                self.djy.values[k],
                self.du.values[k]
            )?;
        }
        Ok(())
    }
}

fn require_origin(traj: &BackwardTrajectory) -> Result<()> {
    if traj.k_start != 0 {
        return Err(Error::InvalidTime(format!(
            "solution derivatives need a trajectory anchored at s = 0, got s = {}",
            traj.s()
        )));
    }
    Ok(())
}

/// `D_alpha Y_{s,t}(x)` at the grid node nearest to `alpha`.
pub fn d_y(drift: &DriftSpec, traj: &BackwardTrajectory, alpha: f64) -> f64 {
    InverseFlowCalculus::new(drift, traj).d_y(traj.grid.nearest_index(alpha))
}

/// `D_alpha JY_{s,t}(x)` at the grid node nearest to `alpha`.
pub fn d_jy(drift: &DriftSpec, traj: &BackwardTrajectory, alpha: f64) -> f64 {
    InverseFlowCalculus::new(drift, traj).d_jy(traj.grid.nearest_index(alpha))
}

/// `D_beta D_alpha Y_{s,t}(x)` at the nearest grid nodes.
pub fn d2_y(drift: &DriftSpec, traj: &BackwardTrajectory, alpha: f64, beta: f64) -> f64 {
    let g = traj.grid;
    InverseFlowCalculus::new(drift, traj).d2_y(g.nearest_index(alpha), g.nearest_index(beta))
}

/// `D_beta D_alpha JY_{s,t}(x)` at the nearest grid nodes.
pub fn d2_jy(drift: &DriftSpec, traj: &BackwardTrajectory, alpha: f64, beta: f64) -> f64 {
    let g = traj.grid;
    InverseFlowCalculus::new(drift, traj).d2_jy(g.nearest_index(alpha), g.nearest_index(beta))
}

/// First-derivative profile of `u(t, x)` along the trajectory's path.
pub fn du_profile(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    traj: &BackwardTrajectory,
) -> Result<DerivativeProfile> {
    require_origin(traj)?;
    let calc = InverseFlowCalculus::new(drift, traj);
    Ok(DerivativeProfile::from_calculus(&calc, ic, traj))
}

/// Full second-derivative matrices on the grid, row `alpha`, column `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondDerivativeProfile {
    pub t: f64,
    pub x: f64,
    pub n_nodes: usize,
    pub d2y: Vec<f64>,
    pub d2jy: Vec<f64>,
    pub d2u: Vec<f64>,
}

impl SecondDerivativeProfile {
    pub fn d2u_at(&self, alpha_k: usize, beta_k: usize) -> f64 {
        self.d2u[alpha_k * self.n_nodes + beta_k]
    }

    pub fn d2y_at(&self, alpha_k: usize, beta_k: usize) -> f64 {
        self.d2y[alpha_k * self.n_nodes + beta_k]
    }

    pub fn d2jy_at(&self, alpha_k: usize, beta_k: usize) -> f64 {
        self.d2jy[alpha_k * self.n_nodes + beta_k]
    }
}

/// `D_beta D_alpha u` from the five-term product-rule expansion.
#[inline]
fn d2u_entry(
    jet: [f64; 3],
    jy: f64,
    (dy_a, dy_b): (f64, f64),
    (djy_a, djy_b): (f64, f64),
    d2y: f64,
    d2jy: f64,
) -> f64 {
    let [u0, u1, u2] = jet;
    u1 * dy_a * djy_b + u1 * d2y * jy + u2 * dy_b * dy_a * jy + u0 * d2jy + u1 * dy_b * djy_a
}

pub fn d2u_profile(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    traj: &BackwardTrajectory,
) -> Result<SecondDerivativeProfile> {
    require_origin(traj)?;
    let calc = InverseFlowCalculus::new(drift, traj);
    let n = traj.grid.n_nodes();
    let jet = ic.jet(traj.initial());
    let jy = calc.jy();
    let mut d2y = vec![0.0; n * n];
    let mut d2jy = vec![0.0; n * n];
    let mut d2u = vec![0.0; n * n];
    let (_, kt) = calc.support();
    for a in 0..=kt {
        for b in 0..=kt {
            let y2 = calc.d2_y(a, b);
            let j2 = calc.d2_jy(a, b);
            d2y[a * n + b] = y2;
            d2jy[a * n + b] = j2;
            d2u[a * n + b] = d2u_entry(
                jet,
                jy,
                (calc.d_y(a), calc.d_y(b)),
                (calc.d_jy(a), calc.d_jy(b)),
                y2,
                j2,
            );
        }
    }
    Ok(SecondDerivativeProfile {
        t: traj.t(),
        x: traj.x,
        n_nodes: n,
        d2y,
        d2jy,
        d2u,
    })
}

/// Sup norms of the second derivatives over the grid square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderSup {
    pub d2y: f64,
    pub d2jy: f64,
    pub d2u: f64,
}

/// Sup norms of all second derivatives without materializing the matrices.
pub fn second_order_sup(
    calc: &InverseFlowCalculus,
    ic: &InitialConditionSpec,
    y: f64,
) -> SecondOrderSup {
    let jet = ic.jet(y);
    let jy = calc.jy;
    let m = calc.p.len();
    // ratios of exp(-P) replace one exp per entry while P stays moderate
    let moderate = calc.p.iter().all(|p| p.abs() < 300.0);
    let en: Vec<f64> = calc.p.iter().map(|p| (-p).exp()).collect();
    let djy: Vec<f64> = calc.gt.iter().map(|g| jy * g).collect();
    let mut sup = SecondOrderSup {
        d2y: 0.0,
        d2jy: 0.0,
        d2u: 0.0,
    };
    for lo in 0..m {
        let inv_lo = 1.0 / en[lo];
        for hi in lo..m {
            let e = if moderate {
                en[hi] * inv_lo
            } else {
                (-(calc.p[hi] - calc.p[lo])).exp()
            };
            let y2 = calc.dy[hi] * calc.gt[lo];
            let j2 = calc.d2_jy_local(lo, hi, lo, e);
            let u2 = d2u_entry(
                jet,
                jy,
                (calc.dy[lo], calc.dy[hi]),
                (djy[lo], djy[hi]),
                y2,
                j2,
            );
            sup.d2y = sup.d2y.max(y2.abs());
            sup.d2jy = sup.d2jy.max(j2.abs());
            sup.d2u = sup.d2u.max(u2.abs());
        }
    }
    sup
}

/// Per-path outcome of every bound and sign check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAudit {
    pub in_window: bool,
    pub u: f64,
    pub y: f64,
    pub jy: f64,
    pub du_norm_sq: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub decomposition_rel_err: f64,
    pub sup_dy: f64,
    pub max_dy: f64,
    pub sup_djy: f64,
    pub max_djy: f64,
    pub sup_du: f64,
    pub second_order: Option<SecondOrderSup>,
    /// Whether `|D_a JY| >= C t e^{||b'|| t} e^{-||b'|| a}` holds on `[0, t]`.
    pub djy_lower_printed: Option<bool>,
    /// Whether `|D_a JY| >= C a e^{-||b'|| t} e^{-||b'|| a}` holds on `[0, t]`.
    pub djy_lower_derived: Option<bool>,
}

/// Relative tolerance of the identity `||Du||^2 = A1 + A2 + A3`.
pub const DECOMPOSITION_TOL: f64 = 1e-10;
const BOUND_SLACK: f64 = 1e-12;

/// Compute the per-path audit. Bound checks are evaluated later against
/// [`BoundConstants`] by [`AuditSummary`]; this only gathers the numbers.
pub fn audit_path(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    hyp: &HypothesisReport,
    traj: &BackwardTrajectory,
    second_order: bool,
) -> Result<PathAudit> {
    require_origin(traj)?;
    let calc = InverseFlowCalculus::new(drift, traj);
    let prof = DerivativeProfile::from_calculus(&calc, ic, traj);
    let [u0, u1, _] = ic.jet(prof.y);
    let jy = prof.jy;

    let du_norm_sq = h_inner(&prof.du, &prof.du)?;
    let a1 = u1 * u1 * jy * jy * h_inner(&prof.dy, &prof.dy)?;
    let a2 = u0 * u0 * h_inner(&prof.djy, &prof.djy)?;
    let a3 = 2.0 * u1 * jy * u0 * h_inner(&prof.dy, &prof.djy)?;
    let total = a1 + a2 + a3;
    let scale = du_norm_sq.abs().max(a1.abs() + a2.abs() + a3.abs());
    let decomposition_rel_err = if scale > 0.0 {
        (du_norm_sq - total).abs() / scale
    } else {
        0.0
    };

    let in_window = traj.stays_in(hyp.window.x_lo, hyp.window.x_hi);
    let (djy_lower_printed, djy_lower_derived) = if hyp.cc11 && in_window {
        let c = hyp.cc11_constant;
        let nb = hyp.sup_b1;
        let t = traj.t();
        let (_, kt) = calc.support();
        let grid = calc.grid();
        let mut printed = true;
        let mut derived = true;
        for k in 0..=kt {
            let a = grid.time(k);
            let v = prof.djy.values[k].abs();
            let tail = (-nb * a).exp();
            printed &= v >= c * t * (nb * t).exp() * tail * (1.0 - BOUND_SLACK);
            derived &= v >= c * a * (-nb * t).exp() * tail * (1.0 - BOUND_SLACK);
        }
        (Some(printed), Some(derived))
    } else {
        (None, None)
    };

    Ok(PathAudit {
        in_window,
        u: prof.u,
        y: prof.y,
        jy,
        du_norm_sq,
        a1,
        a2,
        a3,
        decomposition_rel_err,
        sup_dy: prof.dy.sup_abs(),
        max_dy: prof.dy.max(),
        sup_djy: prof.djy.sup_abs(),
        max_djy: prof.djy.max(),
        sup_du: prof.du.sup_abs(),
        second_order: second_order.then(|| second_order_sup(&calc, ic, prof.y)),
        djy_lower_printed,
        djy_lower_derived,
    })
}

/// Tally of one named check over many paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckTally {
    pub name: String,
    pub applicable: usize,
    pub passed: usize,
    pub failed: usize,
    /// Recorded for comparison only; excluded from the run's exit status.
    pub informational: bool,
    pub verdict: Verdict,
}

/// Aggregated audit over a batch of paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub n_paths: usize,
    pub n_diverged: usize,
    pub n_out_of_window: usize,
    pub min_du_norm_sq: Option<f64>,
    pub max_decomposition_rel_err: f64,
    pub checks: Vec<CheckTally>,
}

impl AuditSummary {
    /// Tally `audits` (`None` marks a diverged path) against the constants.
    pub fn tally(
        audits: &[Option<PathAudit>],
        hyp: &HypothesisReport,
        constants: &BoundConstants,
    ) -> Self {
        let c = constants;
        let within = |v: f64, bound: f64| v <= bound * (1.0 + BOUND_SLACK);

        // (name, needs window, needs hypotheses, predicate)
        type Predicate<'a> = Box<dyn Fn(&PathAudit) -> Option<bool> + 'a>;
        const PRINTED: &str = "|D_a JY| lower bound as printed";
        let mut specs: Vec<(&str, bool, bool, Predicate)> = vec![
            (
                "D_a Y <= 0",
                false,
                true,
                Box::new(|a: &PathAudit| Some(a.max_dy <= 0.0)),
            ),
            (
                "JY > 0",
                false,
                true,
                Box::new(|a: &PathAudit| Some(a.jy > 0.0)),
            ),
            (
                "||Du||^2 = A1 + A2 + A3",
                false,
                true,
                Box::new(|a: &PathAudit| Some(a.decomposition_rel_err <= DECOMPOSITION_TOL)),
            ),
            (
                "D_a JY <= 0",
                true,
                hyp.cc1,
                Box::new(|a: &PathAudit| Some(a.max_djy <= 0.0)),
            ),
            (
                "|D_a Y| <= C1",
                true,
                true,
                Box::new(move |a: &PathAudit| Some(within(a.sup_dy, c.c1))),
            ),
            (
                "|JY| <= C1",
                true,
                true,
                Box::new(move |a: &PathAudit| Some(within(a.jy.abs(), c.c1))),
            ),
            (
                "|D_a JY| <= C2",
                true,
                true,
                Box::new(move |a: &PathAudit| Some(within(a.sup_djy, c.c2))),
            ),
            (
                "|D_a u| <= C3",
                true,
                true,
                Box::new(move |a: &PathAudit| Some(within(a.sup_du, c.c3))),
            ),
            (
                "|D_b D_a Y| <= C2",
                true,
                true,
                Box::new(move |a: &PathAudit| a.second_order.map(|s| within(s.d2y, c.c2))),
            ),
            (
                "|D_b D_a JY| <= T C1^3 (||b'''|| + 2T ||b''||^2)",
                true,
                true,
                Box::new(move |a: &PathAudit| a.second_order.map(|s| within(s.d2jy, c.d2jy_bound))),
            ),
            (
                "|D_b D_a u| <= C4",
                true,
                true,
                Box::new(move |a: &PathAudit| a.second_order.map(|s| within(s.d2u, c.c4))),
            ),
            (
                "A1 > 0",
                true,
                hyp.cc2,
                Box::new(|a: &PathAudit| Some(a.a1 > 0.0)),
            ),
            (
                "A2 >= 0",
                true,
                hyp.cc2,
                Box::new(|a: &PathAudit| Some(a.a2 >= 0.0)),
            ),
            (
                "A3 >= 0",
                true,
                hyp.cc1 && hyp.cc2,
                Box::new(|a: &PathAudit| Some(a.a3 >= 0.0)),
            ),
        ];
        if let Some(c5) = c.c5 {
            specs.push((
                "||Du||^2 >= C5(t)",
                true,
                hyp.cc11 && hyp.cc22,
                Box::new(move |a: &PathAudit| Some(a.du_norm_sq >= c5)),
            ));
        }
        specs.push((
            PRINTED,
            true,
            hyp.cc11,
            Box::new(|a: &PathAudit| a.djy_lower_printed),
        ));
        specs.push((
            "|D_a JY| lower bound with factor a e^{-||b'|| t}",
            true,
            hyp.cc11,
            Box::new(|a: &PathAudit| a.djy_lower_derived),
        ));

        let n_diverged = audits.iter().filter(|a| a.is_none()).count();
        let valid: Vec<&PathAudit> = audits.iter().flatten().collect();
        let n_out_of_window = valid.iter().filter(|a| !a.in_window).count();

        let checks = specs
            .iter()
            .map(|(name, needs_window, hypotheses_hold, pred)| {
                let mut applicable = 0;
                let mut passed = 0;
                if *hypotheses_hold {
                    for a in valid.iter().filter(|a| a.in_window || !needs_window) {
                        if let Some(ok) = pred(a) {
                            applicable += 1;
                            passed += ok as usize;
                        }
                    }
                }
                let failed = applicable - passed;
                let verdict = if !hypotheses_hold {
                    Verdict::not_applicable("hypotheses of this estimate do not hold on the window")
                } else if applicable == 0 {
                    Verdict::not_applicable("no applicable paths")
                } else if failed == 0 {
                    Verdict::pass(format!("{passed}/{applicable} paths"))
                } else {
                    Verdict::fail(format!("{failed}/{applicable} paths violate"))
                };
                CheckTally {
                    name: name.to_string(),
                    applicable,
                    passed,
                    failed,
                    informational: *name == PRINTED,
                    verdict,
                }
            })
            .collect();

        AuditSummary {
            n_paths: audits.len(),
            n_diverged,
            n_out_of_window,
            min_du_norm_sq: valid
                .iter()
                .map(|a| a.du_norm_sq)
                .min_by(|a, b| a.total_cmp(b)),
            max_decomposition_rel_err: valid
                .iter()
                .map(|a| a.decomposition_rel_err)
                .fold(0.0, f64::max),
            checks,
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckTally> {
        self.checks.iter().find(|c| c.name == name)
    }
}
