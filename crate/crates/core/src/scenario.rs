//! Coefficient families, hypothesis scans and the explicit bound constants.
//!
//! All sup norms and sign conditions are evaluated on a bounded [`Window`]
//! rather than on the whole real line. Globally, `b'' <= -C < 0` is
//! incompatible with a bounded `b'`, so the window is what makes the
//! hypotheses checkable; every [`HypothesisReport`] states the window it was
//! computed on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::TimeGrid;

/// Drift `b(t, x)`. All builtins are autonomous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    /// `b = 0`
    Zero,
    /// `b(x) = c - a x`
    Linear { a: f64, c: f64 },
    /// `b(x) = -kappa x^2 / 2`
    Quadratic { kappa: f64 },
    /// `b(x) = -kappa log cosh x`
    #[serde(rename = "logcosh")]
    LogCosh { kappa: f64 },
    /// `b(x) = sum_i coefficients[i] x^i`
    Polynomial { coefficients: Vec<f64> },
}

impl DriftSpec {
    pub const MAX_ORDER: u8 = 3;

    /// `[b, b', b'', b''']` at `x`.
    pub fn jet(&self, x: f64) -> [f64; 4] {
        match *self {
            DriftSpec::Zero => [0.0; 4],
            DriftSpec::Linear { a, c } => [c - a * x, -a, 0.0, 0.0],
            DriftSpec::Quadratic { kappa } => [-0.5 * kappa * x * x, -kappa * x, -kappa, 0.0],
            DriftSpec::LogCosh { kappa } => {
                let ax = x.abs();
                let e = (-2.0 * ax).exp();
                let log_cosh = ax + e.ln_1p() - std::f64::consts::LN_2;
                let th = x.tanh();
                // sech^2 without cancellation for large |x|
                let sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
                [
                    -kappa * log_cosh,
                    -kappa * th,
                    -kappa * sech2,
                    2.0 * kappa * sech2 * th,
                ]
            }
            DriftSpec::Polynomial { ref coefficients } => polynomial_jet(coefficients, x),
        }
    }

    /// Exact `order`-th spatial derivative at `(t, x)`.
    pub fn eval(&self, _t: f64, x: f64, order: u8) -> Result<f64> {
        if order > Self::MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order,
                max: Self::MAX_ORDER,
            });
        }
        Ok(self.jet(x)[order as usize])
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "drift parameter {name} must be finite"
                )))
            }
        };
        match self {
            DriftSpec::Zero => Ok(()),
            DriftSpec::Linear { a, c } => finite("a", *a).and(finite("c", *c)),
            DriftSpec::Quadratic { kappa } | DriftSpec::LogCosh { kappa } => {
                finite("kappa", *kappa)
            }
            DriftSpec::Polynomial { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::InvalidParameter(
                        "polynomial drift needs at least one coefficient".into(),
                    ));
                }
                coefficients
                    .iter()
                    .try_for_each(|c| finite("coefficients", *c))
            }
        }
    }
}

fn polynomial_jet(coefficients: &[f64], x: f64) -> [f64; 4] {
    // Horner on the polynomial and its first three derivatives at once.
    let mut jet = [0.0; 4];
    for &c in coefficients.iter().rev() {
        jet[3] = jet[3] * x + 3.0 * jet[2];
        jet[2] = jet[2] * x + 2.0 * jet[1];
        jet[1] = jet[1] * x + jet[0];
        jet[0] = jet[0] * x + c;
    }
    jet
}

/// Initial condition `u0(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConditionSpec {
    /// `u0(x) = pi/2 + arctan(x) + delta`
    ArctanShift { delta: f64 },
    /// `u0(x) = e^x`
    Exponential,
    /// `u0(x) = alpha x + beta`
    Affine { alpha: f64, beta: f64 },
}

impl InitialConditionSpec {
    pub const MAX_ORDER: u8 = 2;

    /// `[u0, u0', u0'']` at `x`.
    pub fn jet(&self, x: f64) -> [f64; 3] {
        match *self {
            InitialConditionSpec::ArctanShift { delta } => {
                let q = 1.0 / (1.0 + x * x);
                [
                    std::f64::consts::FRAC_PI_2 + x.atan() + delta,
                    q,
                    -2.0 * x * q * q,
                ]
            }
            InitialConditionSpec::Exponential => {
                let e = x.exp();
                [e, e, e]
            }
            InitialConditionSpec::Affine { alpha, beta } => [alpha * x + beta, alpha, 0.0],
        }
    }

    pub fn eval(&self, x: f64, order: u8) -> Result<f64> {
        if order > Self::MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order,
                max: Self::MAX_ORDER,
            });
        }
        Ok(self.jet(x)[order as usize])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            InitialConditionSpec::ArctanShift { delta } => delta.is_finite(),
            InitialConditionSpec::Exponential => true,
            InitialConditionSpec::Affine { alpha, beta } => alpha.is_finite() && beta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "initial-condition parameters must be finite".into(),
            ))
        }
    }
}

/// Exact `order`-th derivative of the drift.
pub fn eval_drift(spec: &DriftSpec, t: f64, x: f64, order: u8) -> Result<f64> {
    spec.eval(t, x, order)
}

/// Exact `order`-th derivative of the initial condition.
pub fn eval_initial(spec: &InitialConditionSpec, x: f64, order: u8) -> Result<f64> {
    spec.eval(x, order)
}

fn default_n_scan() -> usize {
    401
}

/// Spatial interval on which sup norms and sign conditions are scanned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x_lo: f64,
    pub x_hi: f64,
    #[serde(default = "default_n_scan")]
    pub n_scan: usize,
}

impl Default for Window {
    fn default() -> Self {
        Window {
            x_lo: -2.0,
            x_hi: 2.0,
            n_scan: default_n_scan(),
        }
    }
}

impl Window {
    pub fn new(x_lo: f64, x_hi: f64, n_scan: usize) -> Result<Self> {
        let w = Window { x_lo, x_hi, n_scan };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo.is_finite() && self.x_hi.is_finite() && self.x_lo < self.x_hi) {
            return Err(Error::InvalidWindow(format!(
                "need finite x_lo < x_hi, got [{}, {}]",
                self.x_lo, self.x_hi
            )));
        }
        if self.n_scan < 2 {
            return Err(Error::InvalidWindow(format!(
                "n_scan must be at least 2, got {}",
                self.n_scan
            )));
        }
        Ok(())
    }

    /// Uniform scan points, endpoints included.
    pub fn scan_points(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n_scan;
        let span = self.x_hi - self.x_lo;
        (0..n).map(move |i| {
            if i + 1 == n {
                self.x_hi
            } else {
                self.x_lo + span * i as f64 / (n - 1) as f64
            }
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_lo && x <= self.x_hi
    }
}

/// A sign-condition failure found during the window scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub x: f64,
    pub value: f64,
}

/// Outcome of scanning the coefficient hypotheses on a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub window: Window,
    pub horizon: f64,
    /// `b'' <= 0` on the window.
    pub cc1: bool,
    /// `b'' <= -C < 0` on the window.
    pub cc11: bool,
    /// Largest `C` with `b'' <= -C` on the scan grid (grid minimum of `-b''`).
    pub cc11_constant: f64,
    /// `u0 > 0` and `u0' > 0` on the window.
    pub cc2: bool,
    /// `u0 >= C > 0` and `u0' > 0` on the window.
    pub cc22: bool,
    /// Largest `C` with `u0 >= C` on the scan grid (grid minimum of `u0`).
    pub cc22_constant: f64,
    pub sup_b1: f64,
    pub sup_b2: f64,
    pub sup_b3: f64,
    pub sup_u0: f64,
    pub sup_u0_d1: f64,
    pub sup_u0_d2: f64,
    /// Total number of violating scan points per condition, and the first
    /// few locations.
    pub violation_counts: ViolationCounts,
    pub violations: Vec<Violation>,
    pub interpretation: String,
    pub holder_regularity: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub b2_positive: usize,
    pub u0_nonpositive: usize,
    pub u0_d1_nonpositive: usize,
}

const MAX_LISTED_VIOLATIONS: usize = 8;

/// Scan the window and evaluate all hypothesis flags and sup norms.
pub fn check_hypotheses(
    drift: &DriftSpec,
    ic: &InitialConditionSpec,
    window: &Window,
    horizon: f64,
) -> Result<HypothesisReport> {
    window.validate()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidTime(format!(
            "horizon must be positive, got {horizon}"
        )));
    }

    let mut sup = [0.0_f64; 6];
    let mut min_neg_b2 = f64::INFINITY;
    let mut min_u0 = f64::INFINITY;
    let mut counts = ViolationCounts::default();
    let mut violations = Vec::new();
    let mut record = |condition: &str, x: f64, value: f64| {
        if violations.len() < MAX_LISTED_VIOLATIONS {
            violations.push(Violation {
                condition: condition.to_string(),
                x,
                value,
            });
        }
    };

    for x in window.scan_points() {
        let b = drift.jet(x);
        let u = ic.jet(x);
        sup[0] = sup[0].max(b[1].abs());
        sup[1] = sup[1].max(b[2].abs());
        sup[2] = sup[2].max(b[3].abs());
        sup[3] = sup[3].max(u[0].abs());
        sup[4] = sup[4].max(u[1].abs());
        sup[5] = sup[5].max(u[2].abs());
        min_neg_b2 = min_neg_b2.min(-b[2]);
        min_u0 = min_u0.min(u[0]);
        if b[2] > 0.0 {
            counts.b2_positive += 1;
            record("b'' <= 0", x, b[2]);
        }
        if u[0] <= 0.0 {
            counts.u0_nonpositive += 1;
            record("u0 > 0", x, u[0]);
        }
        if u[1] <= 0.0 {
            counts.u0_d1_nonpositive += 1;
            record("u0' > 0", x, u[1]);
        }
    }

    let cc1 = counts.b2_positive == 0;
    let cc11 = min_neg_b2 > 0.0;
    let cc2 = counts.u0_nonpositive == 0 && counts.u0_d1_nonpositive == 0;
    let cc22 = cc2 && min_u0 > 0.0;

    Ok(HypothesisReport {
        window: *window,
        horizon,
        cc1,
        cc11,
        cc11_constant: min_neg_b2,
        cc2,
        cc22,
        cc22_constant: min_u0,
        sup_b1: sup[0],
        sup_b2: sup[1],
        sup_b3: sup[2],
        sup_u0: sup[3],
        sup_u0_d1: sup[4],
        sup_u0_d2: sup[5],
        violation_counts: counts,
        violations,
        interpretation: format!(
            "sup norms and sign conditions evaluated on the window [{}, {}] with {} scan points, not on the whole real line",
            window.x_lo, window.x_hi, window.n_scan
        ),
        holder_regularity: "assumed: builtin coefficients are smooth; not checked numerically".into(),
    })
}

/// Explicit a-priori constants built from window sup norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub horizon: f64,
    pub t: f64,
    /// `e^{T ||b'||}`: bounds `|D Y|` and `|JY|`.
    pub c1: f64,
    /// `C1^2 T ||b''||`: bounds `|D JY|` and `|D D Y|`.
    pub c2: f64,
    /// `||u0'|| C1^2 + ||u0|| C2`: bounds `|D u|`.
    pub c3: f64,
    /// `T C1^3 (||b'''|| + 2 T ||b''||^2)`: bounds `|D D JY|`.
    pub d2jy_bound: f64,
    /// Five-term bound on `|D D u|`.
    pub c4: f64,
    /// `C^4 e^{-4 T ||b'||} t^3 / 3` with `C` from the strict concavity
    /// condition; absent when that condition fails.
    pub c5: Option<f64>,
}

/// Evaluate the bound constants at time `t` in `(0, horizon]`.
pub fn constants(report: &HypothesisReport, horizon: f64, t: f64) -> Result<BoundConstants> {
    if !(horizon > 0.0 && t > 0.0 && t <= horizon) {
        return Err(Error::InvalidTime(format!(
            "constants need 0 < t <= T, got t = {t}, T = {horizon}"
        )));
    }
    let c1 = (horizon * report.sup_b1).exp();
    let c2 = c1 * c1 * horizon * report.sup_b2;
    let c3 = report.sup_u0_d1 * c1 * c1 + report.sup_u0 * c2;
    let d2jy_bound = horizon * c1.powi(3) * (report.sup_b3 + 2.0 * horizon * report.sup_b2.powi(2));
    let c4 = 3.0 * report.sup_u0_d1 * c1 * c2
        + report.sup_u0_d2 * c1.powi(3)
        + report.sup_u0 * d2jy_bound;
    let c5 = report.cc11.then(|| {
        report.cc11_constant.powi(4) * (-4.0 * horizon * report.sup_b1).exp() * t.powi(3) / 3.0
    });
    Ok(BoundConstants {
        horizon,
        t,
        c1,
        c2,
        c3,
        d2jy_bound,
        c4,
        c5,
    })
}

/// A fully specified model: coefficients, hypothesis window and time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub drift: DriftSpec,
    pub ic: InitialConditionSpec,
    pub window: Window,
    pub grid: TimeGrid,
}

impl Model {
    pub fn new(
        drift: DriftSpec,
        ic: InitialConditionSpec,
        window: Window,
        grid: TimeGrid,
    ) -> Result<Self> {
        drift.validate()?;
        ic.validate()?;
        window.validate()?;
        Ok(Model {
            drift,
            ic,
            window,
            grid,
        })
    }

    pub fn hypotheses(&self) -> Result<HypothesisReport> {
        check_hypotheses(&self.drift, &self.ic, &self.window, self.grid.horizon())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{E, FRAC_PI_2, PI};

    fn builtin_drifts() -> Vec<DriftSpec> {
        vec![
            DriftSpec::Zero,
            DriftSpec::Linear { a: 1.0, c: 0.3 },
            DriftSpec::Quadratic { kappa: 1.0 },
            DriftSpec::LogCosh { kappa: 1.0 },
            DriftSpec::Polynomial {
                coefficients: vec![0.2, -0.5, 0.3, 0.1],
            },
        ]
    }

    fn builtin_ics() -> Vec<InitialConditionSpec> {
        vec![
            InitialConditionSpec::ArctanShift { delta: 0.1 },
            InitialConditionSpec::Exponential,
            InitialConditionSpec::Affine {
                alpha: 2.0,
                beta: 1.0,
            },
        ]
    }

    #[test]
    fn drift_examples() {
        assert_eq!(eval_drift(&DriftSpec::Zero, 0.5, 1.0, 0).unwrap(), 0.0);
        let q = DriftSpec::Quadratic { kappa: 1.0 };
        assert_eq!(eval_drift(&q, 0.3, 1.5, 2).unwrap(), -1.0);
        let l = DriftSpec::Linear { a: 1.0, c: 0.0 };
        assert_eq!(eval_drift(&l, 0.9, 2.0, 1).unwrap(), -1.0);
        assert_eq!(eval_drift(&l, 0.9, 2.0, 0).unwrap(), -2.0);
    }

    #[test]
    fn order_four_is_rejected() {
        let err = eval_drift(&DriftSpec::Zero, 0.0, 0.0, 4).unwrap_err();
        assert_eq!(err, Error::UnsupportedOrder { order: 4, max: 3 });
        let err = eval_initial(&InitialConditionSpec::Exponential, 0.0, 3).unwrap_err();
        assert_eq!(err, Error::UnsupportedOrder { order: 3, max: 2 });
    }

    #[test]
    fn initial_condition_examples() {
        let ic = InitialConditionSpec::ArctanShift { delta: 0.1 };
        assert!((eval_initial(&ic, 0.0, 0).unwrap() - (FRAC_PI_2 + 0.1)).abs() < 1e-15);
        assert_eq!(eval_initial(&ic, 0.0, 1).unwrap(), 1.0);
        let e = eval_initial(&InitialConditionSpec::Exponential, 0.3, 2).unwrap();
        assert!((e - 0.3f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn logcosh_is_stable_far_out() {
        let d = DriftSpec::LogCosh { kappa: 1.0 };
        let j = d.jet(800.0);
        assert!(j.iter().all(|v| v.is_finite()));
        assert!((j[0] + 800.0 - std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(j[2], -0.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let step = 1e-5;
        for drift in builtin_drifts() {
            for &x in &[-1.7, -0.4, 0.3, 1.1, 2.2] {
                let j = drift.jet(x);
                let jp = drift.jet(x + step);
                let jm = drift.jet(x - step);
                for order in 1..4 {
                    let fd = (jp[order - 1] - jm[order - 1]) / (2.0 * step);
                    let err = (fd - j[order]).abs() / j[order].abs().max(1.0);
                    assert!(
                        err <= 1e-6,
                        "{drift:?} x={x} order={order}: fd {fd} vs {}",
                        j[order]
                    );
                }
            }
        }
        for ic in builtin_ics() {
            for &x in &[-1.7, -0.4, 0.3, 1.1, 2.2] {
                let j = ic.jet(x);
                let jp = ic.jet(x + step);
                let jm = ic.jet(x - step);
                for order in 1..3 {
                    let fd = (jp[order - 1] - jm[order - 1]) / (2.0 * step);
                    let err = (fd - j[order]).abs() / j[order].abs().max(1.0);
                    assert!(err <= 1e-6, "{ic:?} x={x} order={order}");
                }
            }
        }
    }

    #[test]
    fn quadratic_arctan_scan() {
        let w = Window::new(-2.0, 2.0, 401).unwrap();
        let r = check_hypotheses(
            &DriftSpec::Quadratic { kappa: 1.0 },
            &InitialConditionSpec::ArctanShift { delta: 0.1 },
            &w,
            1.0,
        )
        .unwrap();
        assert!(r.cc1 && r.cc11 && r.cc2 && r.cc22);
        assert_eq!(r.cc11_constant, 1.0);
        assert_eq!(r.sup_b1, 2.0);
        assert_eq!(r.sup_b2, 1.0);
        assert_eq!(r.sup_b3, 0.0);
        // grid minimum of u0 on [-2, 2] sits at the left endpoint
        let u0_min = FRAC_PI_2 + (-2.0f64).atan() + 0.1;
        assert!((r.cc22_constant - u0_min).abs() < 1e-15);
        assert!((r.sup_u0 - (FRAC_PI_2 + 2.0f64.atan() + 0.1)).abs() < 1e-15);
        assert_eq!(r.sup_u0_d1, 1.0);
        assert!(r.violations.is_empty());
        assert!(r.interpretation.contains("[-2, 2]"));
    }

    #[test]
    fn linear_drift_is_concave_but_not_strictly() {
        let r = check_hypotheses(
            &DriftSpec::Linear { a: 1.0, c: 0.0 },
            &InitialConditionSpec::ArctanShift { delta: 0.1 },
            &Window::default(),
            1.0,
        )
        .unwrap();
        assert!(r.cc1);
        assert!(!r.cc11);
    }

    #[test]
    fn zero_drift_exponential_window() {
        let r = check_hypotheses(
            &DriftSpec::Zero,
            &InitialConditionSpec::Exponential,
            &Window::new(-1.0, 1.0, 401).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(r.cc2 && r.cc22);
        assert!((r.cc22_constant - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn violations_are_located() {
        let r = check_hypotheses(
            &DriftSpec::Polynomial {
                coefficients: vec![0.0, 0.0, 0.0, 1.0],
            },
            &InitialConditionSpec::Affine {
                alpha: 0.0,
                beta: 1.0,
            },
            &Window::new(-1.0, 1.0, 21).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(!r.cc1 && !r.cc2 && !r.cc22);
        assert_eq!(r.violation_counts.u0_d1_nonpositive, 21);
        // b'' = 6x > 0 for x > 0
        assert_eq!(r.violation_counts.b2_positive, 10);
        assert!(r.violations.len() <= MAX_LISTED_VIOLATIONS);
    }

    #[test]
    fn invalid_window_is_rejected() {
        assert!(Window::new(1.0, 1.0, 10).is_err());
        assert!(Window::new(0.0, 1.0, 1).is_err());
        assert!(check_hypotheses(
            &DriftSpec::Zero,
            &InitialConditionSpec::Exponential,
            &Window::default(),
            0.0
        )
        .is_err());
    }

    fn report_with(sup_b1: f64, sup_b2: f64, cc11_constant: f64) -> HypothesisReport {
        let mut r = check_hypotheses(
            &DriftSpec::Zero,
            &InitialConditionSpec::ArctanShift { delta: 0.1 },
            &Window::default(),
            1.0,
        )
        .unwrap();
        r.sup_b1 = sup_b1;
        r.sup_b2 = sup_b2;
        r.cc11 = cc11_constant > 0.0;
        r.cc11_constant = cc11_constant;
        r
    }

    #[test]
    fn constant_examples() {
        let c = constants(&report_with(1.0, 0.0, 0.0), 1.0, 1.0).unwrap();
        assert!((c.c1 - E).abs() < 1e-15);
        assert!(c.c5.is_none());

        let c = constants(&report_with(2.0, 1.0, 1.0), 1.0, 1.0).unwrap();
        assert!((c.c1 - E.powi(2)).abs() < 1e-13);
        assert!((c.c2 - E.powi(4)).abs() < 1e-12);
        let c5 = c.c5.unwrap();
        assert!((c5 - (-8.0f64).exp() / 3.0).abs() < 1e-18);
        assert!((c5 / 1.1179e-4 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn c3_for_the_quadratic_scenario() {
        let r = check_hypotheses(
            &DriftSpec::Quadratic { kappa: 1.0 },
            &InitialConditionSpec::ArctanShift { delta: 0.1 },
            &Window::default(),
            1.0,
        )
        .unwrap();
        let c = constants(&r, 1.0, 1.0).unwrap();
        let e4 = E.powi(4);
        let u0_sup = FRAC_PI_2 + 2.0f64.atan() + 0.1;
        assert!((c.c3 - (e4 + u0_sup * e4)).abs() < 1e-10);
        // with the global supremum of u0 (pi + delta) in place of the window one
        let mut global = r.clone();
        global.sup_u0 = PI + 0.1;
        let g = constants(&global, 1.0, 1.0).unwrap();
        assert!((g.c3 - 231.58).abs() < 0.01);
        assert!((g.c3 * g.c3 - 5.363e4).abs() < 5.0);
    }

    #[test]
    fn c4_chains_the_five_terms() {
        let r = check_hypotheses(
            &DriftSpec::LogCosh { kappa: 1.0 },
            &InitialConditionSpec::ArctanShift { delta: 0.1 },
            &Window::default(),
            1.0,
        )
        .unwrap();
        let c = constants(&r, 1.0, 0.5).unwrap();
        let c1 = c.c1;
        let d2jy = c1.powi(3) * (r.sup_b3 + 2.0 * r.sup_b2.powi(2));
        assert!((c.d2jy_bound - d2jy).abs() < 1e-12 * d2jy);
        let expected = 3.0 * r.sup_u0_d1 * c1 * c.c2 + r.sup_u0_d2 * c1.powi(3) + r.sup_u0 * d2jy;
        assert!((c.c4 - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn constants_need_t_in_range() {
        let r = report_with(1.0, 1.0, 1.0);
        assert!(constants(&r, 1.0, 0.0).is_err());
        assert!(constants(&r, 1.0, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn shrinking_the_window_never_grows_sup_norms(
            lo in -3.0f64..-0.1, hi in 0.1f64..3.0, shrink in 0.0f64..0.9, which in 0usize..5
        ) {
            let drift = builtin_drifts().swap_remove(which);
            let ic = InitialConditionSpec::ArctanShift { delta: 0.1 };
            // nested grids: the inner window's scan points are a subset of the outer one's
            let outer = Window::new(lo, hi, 401).unwrap();
            let step = (hi - lo) / 400.0;
            let cut = ((shrink * 100.0) as usize).min(199);
            let inner = Window::new(lo + cut as f64 * step, hi - cut as f64 * step, 401 - 2 * cut).unwrap();
            let a = check_hypotheses(&drift, &ic, &outer, 1.0).unwrap();
            let b = check_hypotheses(&drift, &ic, &inner, 1.0).unwrap();
            let tol = 1e-12;
            prop_assert!(b.sup_b1 <= a.sup_b1 + tol);
            prop_assert!(b.sup_b2 <= a.sup_b2 + tol);
            prop_assert!(b.sup_b3 <= a.sup_b3 + tol);
            prop_assert!(b.sup_u0 <= a.sup_u0 + tol);
            prop_assert!(b.sup_u0_d1 <= a.sup_u0_d1 + tol);
            prop_assert!(b.sup_u0_d2 <= a.sup_u0_d2 + tol);
        }

        #[test]
        fn c5_scales_with_t_cubed(c in 0.1f64..2.0, b1 in 0.0f64..3.0, t1 in 0.05f64..1.0, t2 in 0.05f64..1.0) {
            let r = report_with(b1, 1.0, c);
            let a = constants(&r, 1.0, t1).unwrap().c5.unwrap();
            let b = constants(&r, 1.0, t2).unwrap().c5.unwrap();
            prop_assert!(((a / t1.powi(3)) - (b / t2.powi(3))).abs() <= 1e-12 * (a / t1.powi(3)));
            if t1 < t2 { prop_assert!(a < b); }
        }

        #[test]
        fn hypothesis_flags_are_nested(which in 0usize..5, ic_which in 0usize..3, lo in -3.0f64..0.0, width in 0.1f64..4.0) {
            let drift = builtin_drifts().swap_remove(which);
            let ic = builtin_ics().swap_remove(ic_which);
            let r = check_hypotheses(&drift, &ic, &Window::new(lo, lo + width, 101).unwrap(), 1.0).unwrap();
            prop_assert!(!r.cc11 || r.cc1);
            prop_assert!(!r.cc22 || r.cc2);
        }
    }
}
