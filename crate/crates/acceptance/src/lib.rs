//! Independent oracles: closed-form laws, Cameron–Martin finite
//! differences and error measures used by the tests of `continuity-lab`.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use continuity_lab::density::DensityEstimate;
use continuity_lab::flow::solution_at;
use continuity_lab::paths::{shift_path, BrownianPath, ShiftDirection};
use continuity_lab::scenario::{DriftSpec, InitialConditionSpec};
use statrs::distribution::{Continuous, ContinuousCDF, LogNormal, Normal};

/// Every builtin drift family, with the coefficients used across the tests.
pub fn builtin_drifts() -> Vec<DriftSpec> {
    vec![
        DriftSpec::Zero,
        DriftSpec::Linear { a: 1.0, c: 0.0 },
        DriftSpec::Quadratic { kappa: 1.0 },
        DriftSpec::LogCosh { kappa: 1.0 },
        DriftSpec::Polynomial {
            coefficients: vec![0.0, -0.5, 0.0, 0.1],
        },
    ]
}

fn u_shifted(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    path: &BrownianPath,
    shifts: &[(f64, f64)],
    t: f64,
    x: f64,
) -> Option<f64> {
    let mut p = path.clone();
    for &(alpha0, epsilon) in shifts {
        p = shift_path(&p, ShiftDirection { alpha0, epsilon }).ok()?;
    }
    solution_at(drift, ic, &p, t, x).ok().map(|s| s.u)
}

/// Central difference of `u` along the Cameron–Martin direction
/// `h(s) = min(s, alpha0)`, which approximates `int_0^{alpha0} D_s u ds`.
pub fn cameron_martin_first(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    path: &BrownianPath,
    t: f64,
    x: f64,
    alpha0: f64,
    eps: f64,
) -> Option<f64> {
    let up = u_shifted(drift, ic, path, &[(alpha0, eps)], t, x)?;
    let dn = u_shifted(drift, ic, path, &[(alpha0, -eps)], t, x)?;
    Some((up - dn) / (2.0 * eps))
}

/// Mixed central difference along two directions, which approximates
/// `int_0^{alpha0} int_0^{beta0} D_b D_a u db da`.
#[allow(clippy::too_many_arguments)]
pub fn cameron_martin_second(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    path: &BrownianPath,
    t: f64,
    x: f64,
    alpha0: f64,
    beta0: f64,
    eps: f64,
) -> Option<f64> {
    let pp = u_shifted(drift, ic, path, &[(alpha0, eps), (beta0, eps)], t, x)?;
    let pm = u_shifted(drift, ic, path, &[(alpha0, eps), (beta0, -eps)], t, x)?;
    let mp = u_shifted(drift, ic, path, &[(alpha0, -eps), (beta0, eps)], t, x)?;
    let mm = u_shifted(drift, ic, path, &[(alpha0, -eps), (beta0, -eps)], t, x)?;
    Some((pp - pm - mp + mm) / (4.0 * eps * eps))
}

/// Exact law of `u(t, x) = pi/2 + arctan(x - B_t) + delta` under zero drift.
pub struct ArctanPushForward {
    pub delta: f64,
    pub t: f64,
    pub x: f64,
}

impl ArctanPushForward {
    pub fn density(&self, z: f64) -> f64 {
        let w = z - self.delta - FRAC_PI_2;
        if w.abs() >= FRAC_PI_2 {
            return 0.0;
        }
        let y = w.tan();
        let sd = self.t.sqrt();
        let normal = Normal::new(self.x, sd).unwrap();
        normal.pdf(y) * (1.0 + y * y)
    }

    /// Interval holding the central `mass` of the law.
    pub fn central(&self, mass: f64) -> (f64, f64) {
        let normal = Normal::new(self.x, self.t.sqrt()).unwrap();
        let u0 = |y: f64| FRAC_PI_2 + y.atan() + self.delta;
        (
            u0(normal.inverse_cdf((1.0 - mass) / 2.0)),
            u0(normal.inverse_cdf((1.0 + mass) / 2.0)),
        )
    }
}

/// Standard lognormal and its central-mass interval.
pub fn lognormal_density(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else {
        LogNormal::new(0.0, 1.0).unwrap().pdf(z)
    }
}

pub fn lognormal_central(mass: f64) -> (f64, f64) {
    let n = Normal::new(0.0, 1.0).unwrap();
    (
        n.inverse_cdf((1.0 - mass) / 2.0).exp(),
        n.inverse_cdf((1.0 + mass) / 2.0).exp(),
    )
}

/// Largest `|rho_hat - rho|` over grid nodes inside `region`.
pub fn sup_error(est: &DensityEstimate, exact: impl Fn(f64) -> f64, region: (f64, f64)) -> f64 {
    est.z
        .iter()
        .zip(&est.rho)
        .filter(|(z, _)| **z >= region.0 && **z <= region.1)
        .map(|(&z, &r)| (r - exact(z)).abs())
        .fold(0.0, f64::max)
}

/// Print a status line that bypasses the test harness's output capture.
pub fn report_line(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}
