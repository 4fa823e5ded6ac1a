//! Monte Carlo law of `u(t, x)`: sampling, kernel density estimation,
//! positivity of the Malliavin norm, the Gaussian sandwich and tail decay.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::solve_backward;
use crate::malliavin::{audit_path, du_profile, h_inner, PathAudit};
use crate::paths::{mix_paths, sample_path};
use crate::quadrature::{cumulative_trapezoid, trapezoid};
use crate::report::{Status, Verdict};
use crate::scenario::{BoundConstants, HypothesisReport, Model};

/// Seed offset for the independent copy `omega'` used by the coupling.
pub const PRIME_SEED_XOR: u64 = 0x9E37_79B9_7F4A_7C15;

/// One Monte Carlo draw of `u(t, x)` with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: u64,
    /// `NaN` when the path diverged.
    pub u: f64,
    pub du_norm_sq: f64,
    pub in_window: bool,
    pub diverged: bool,
    #[serde(skip)]
    pub audit: Option<PathAudit>,
}

impl SampleRecord {
    /// Usable for density estimation: finite and inside the hypothesis window.
    pub fn is_valid(&self) -> bool {
        !self.diverged && self.in_window
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub t: f64,
    pub x: f64,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn valid_values(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.is_valid())
            .map(|r| r.u)
            .collect()
    }

    pub fn n_diverged(&self) -> usize {
        self.records.iter().filter(|r| r.diverged).count()
    }

    pub fn n_out_of_window(&self) -> usize {
        self.records
            .iter()
            .filter(|r| !r.diverged && !r.in_window)
            .count()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.n_diverged() as f64 / self.len() as f64
    }

    /// Fraction of draws excluded from the density (diverged or out of window).
    pub fn exclusion_rate(&self) -> f64 {
        (self.n_diverged() + self.n_out_of_window()) as f64 / self.len() as f64
    }

    pub fn audits(&self) -> Vec<Option<PathAudit>> {
        self.records.iter().map(|r| r.audit.clone()).collect()
    }

    /// Header `index,u,du_norm_sq,in_window`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,u,du_norm_sq,in_window")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{}",
                r.index, r.u, r.du_norm_sq, r.in_window
            )?;
        }
        Ok(())
    }
}

/// Draw `n` independent copies of `u(t, x)` along paths `0..n` of `seed`.
/// Paths listed below `second_order_paths` also get the second-order sups.
pub fn sample_solution(
    model: &Model,
    hyp: &HypothesisReport,
    t: f64,
    x: f64,
    n: usize,
    seed: u64,
    second_order_paths: usize,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "sample size must be at least 1".into(),
        ));
    }
    if t <= 0.0 {
        return Err(Error::InvalidTime(format!("need t > 0, got {t}")));
    }
    model.grid.require_index(t, "evaluation time")?;
    let records = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let path = sample_path(&model.grid, seed, i);
            let audit = solve_backward(&model.drift, &path, 0.0, t, x).and_then(|traj| {
                audit_path(
                    &model.drift,
                    &model.ic,
                    hyp,
                    &traj,
                    (i as usize) < second_order_paths,
                )
            });
            match audit {
                Ok(a) => SampleRecord {
                    index: i,
                    u: a.u,
                    du_norm_sq: a.du_norm_sq,
                    in_window: a.in_window,
                    diverged: false,
                    audit: Some(a),
                },
                Err(_) => SampleRecord {
                    index: i,
                    u: f64::NAN,
                    du_norm_sq: f64::NAN,
                    in_window: false,
                    diverged: true,
                    audit: None,
                },
            }
        })
        .collect();
    Ok(SampleSet {
        t,
        x,
        seed,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// Silverman's rule `1.06 sd n^{-1/5}`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeOptions {
    pub bandwidth: Bandwidth,
    pub z_nodes: usize,
    /// Grid range; `None` means sample mean plus or minus 5 sample sd,
    /// widened when needed so every kernel keeps 5 bandwidths on the grid.
    pub range: Option<(f64, f64)>,
}

impl Default for KdeOptions {
    fn default() -> Self {
        KdeOptions {
            bandwidth: Bandwidth::Auto,
            z_nodes: 512,
            range: None,
        }
    }
}

/// Roughness `int K^2` of the Gaussian kernel.
const KERNEL_ROUGHNESS: f64 = 0.282_094_791_773_878_14;
/// Kernel support cut, in bandwidths; the dropped mass is below 1e-16.
const KERNEL_CUT: f64 = 8.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub z: Vec<f64>,
    pub rho: Vec<f64>,
    pub se: Vec<f64>,
    pub bandwidth: f64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl DensityEstimate {
    pub fn spacing(&self) -> f64 {
        self.z[1] - self.z[0]
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.rho, self.spacing())
    }

    /// Normalized trapezoidal CDF on the grid.
    pub fn cdf(&self) -> Vec<f64> {
        let c = cumulative_trapezoid(&self.rho, self.spacing());
        let total = *c.last().unwrap();
        c.into_iter().map(|v| v / total).collect()
    }

    /// Quantile of the normalized estimate, linear between grid nodes.
    pub fn quantile(&self, q: f64) -> f64 {
        let cdf = self.cdf();
        let k = cdf.partition_point(|&c| c < q);
        if k == 0 {
            return self.z[0];
        }
        if k >= cdf.len() {
            return *self.z.last().unwrap();
        }
        let (c0, c1) = (cdf[k - 1], cdf[k]);
        let w = if c1 > c0 { (q - c0) / (c1 - c0) } else { 0.0 };
        self.z[k - 1] + w * (self.z[k] - self.z[k - 1])
    }

    /// Header `z,rho_hat,se,lower_env,upper_env`; envelopes are `NaN` when absent.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        envelopes: Option<(&SandwichBounds, GammaVariant)>,
    ) -> std::io::Result<()> {
        writeln!(out, "z,rho_hat,se,lower_env,upper_env")?;
        for k in 0..self.z.len() {
            let (lo, hi) = envelopes
                .and_then(|(b, v)| b.envelopes(v, self.z[k]))
                .unwrap_or((f64::NAN, f64::NAN));
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.z[k], self.rho[k], self.se[k], lo, hi
            )?;
        }
        Ok(())
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Gaussian-kernel density estimate on a uniform grid.
pub fn kde(samples: &[f64], opts: &KdeOptions) -> Result<DensityEstimate> {
    if samples.is_empty() {
        return Err(Error::DegenerateSample("no samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    if opts.z_nodes < 2 {
        return Err(Error::InvalidParameter("z_nodes must be at least 2".into()));
    }
    let n = samples.len();
    let (mean, sd) = mean_sd(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bandwidth = match opts.bandwidth {
        Bandwidth::Fixed(h) if h.is_finite() && h > 0.0 => h,
        Bandwidth::Fixed(h) => {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        Bandwidth::Auto => {
            if n < 2 || sd == 0.0 {
                return Err(Error::DegenerateSample(
                    "automatic bandwidth needs at least two distinct samples".into(),
                ));
            }
            1.06 * sd * (n as f64).powf(-0.2)
        }
    };
    let (lo, hi) = match opts.range {
        Some((lo, hi)) if lo < hi => (lo, hi),
        Some((lo, hi)) => {
            return Err(Error::InvalidParameter(format!(
                "empty grid range [{lo}, {hi}]"
            )))
        }
        None => {
            let half = 5.0 * sd;
            (
                (mean - half).min(sorted[0] - 5.0 * bandwidth),
                (mean + half).max(sorted[n - 1] + 5.0 * bandwidth),
            )
        }
    };
    let dz = (hi - lo) / (opts.z_nodes - 1) as f64;
    let z: Vec<f64> = (0..opts.z_nodes).map(|k| lo + k as f64 * dz).collect();
    let norm = 1.0 / (n as f64 * bandwidth * (2.0 * PI).sqrt());
    let reach = KERNEL_CUT * bandwidth;
    let rho: Vec<f64> = z
        .par_iter()
        .map(|&zk| {
            let a = sorted.partition_point(|&s| s < zk - reach);
            let b = sorted.partition_point(|&s| s <= zk + reach);
            let sum: f64 = sorted[a..b]
                .iter()
                .map(|&s| {
                    let r = (zk - s) / bandwidth;
                    (-0.5 * r * r).exp()
                })
                .sum();
            sum * norm
        })
        .collect();
    let se = rho
        .iter()
        .map(|&r| (r * KERNEL_ROUGHNESS / (n as f64 * bandwidth)).sqrt())
        .collect();
    Ok(DensityEstimate {
        z,
        rho,
        se,
        bandwidth,
        n,
        mean,
        sd,
    })
}

/// Positivity of `||Du||^2` over the valid draws, plus the `C5(t)` floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BouleauHirschReport {
    pub n_valid: usize,
    pub min_du_norm_sq: Option<f64>,
    pub c5: Option<f64>,
    pub positivity: Verdict,
    pub c5_floor: Verdict,
}

pub fn bouleau_hirsch_check(
    samples: &SampleSet,
    hyp: &HypothesisReport,
    constants: &BoundConstants,
) -> BouleauHirschReport {
    let norms: Vec<f64> = samples
        .records
        .iter()
        .filter(|r| r.is_valid())
        .map(|r| r.du_norm_sq)
        .collect();
    let min = norms.iter().copied().min_by(f64::total_cmp);
    let positivity = match min {
        None => Verdict::not_applicable("no valid samples"),
        Some(m) if m > 0.0 => {
            Verdict::pass(format!("min ||Du||^2 = {m:e} over {} samples", norms.len()))
        }
        Some(m) => Verdict::fail(format!("min ||Du||^2 = {m:e} is not positive")),
    };
    let applies = hyp.cc11 && hyp.cc22;
    let c5_floor = match (min, constants.c5) {
        _ if !applies => {
            Verdict::not_applicable("strict concavity or strict positivity fails on the window")
        }
        (None, _) | (_, None) => Verdict::not_applicable("no valid samples"),
        (Some(m), Some(c5)) if m >= c5 => Verdict::pass(format!("min {m:e} >= C5 = {c5:e}")),
        (Some(m), Some(c5)) => {
            let below = norms.iter().filter(|&&v| v < c5).count();
            Verdict::fail(format!("{below} samples below C5 = {c5:e}; min {m:e}"))
        }
    };
    BouleauHirschReport {
        n_valid: norms.len(),
        min_du_norm_sq: min,
        c5: constants.c5,
        positivity,
        c5_floor,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichParams {
    pub n_prime: usize,
    pub theta_nodes: Vec<f64>,
    /// Smallest admissible evaluation time.
    pub t0: f64,
}

impl Default for SandwichParams {
    fn default() -> Self {
        SandwichParams {
            n_prime: 1000,
            theta_nodes: vec![0.0, 0.1, 0.5, 1.0, 2.0, 4.0],
            t0: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaVariant {
    Empirical,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaStats {
    pub theta: f64,
    pub n_pairs: usize,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichBounds {
    pub m: f64,
    pub d: f64,
    pub gamma2_min_empirical: f64,
    pub gamma2_max_empirical: f64,
    pub gamma2_q01: f64,
    pub gamma2_q99: f64,
    pub gamma2_min_analytic: Option<f64>,
    pub gamma2_max_analytic: f64,
    pub n_prime: usize,
    pub theta: Vec<ThetaStats>,
    pub n_pairs_used: usize,
    pub n_pairs_excluded: usize,
    pub n_nonpositive: usize,
    pub positivity: Verdict,
    pub bracket: Verdict,
}

impl SandwichBounds {
    pub fn pair_exclusion_rate(&self) -> f64 {
        let total = self.n_pairs_used + self.n_pairs_excluded;
        if total == 0 {
            0.0
        } else {
            self.n_pairs_excluded as f64 / total as f64
        }
    }

    pub fn gammas(&self, variant: GammaVariant) -> Option<(f64, f64)> {
        let (lo, hi) = match variant {
            GammaVariant::Empirical => (self.gamma2_min_empirical, self.gamma2_max_empirical),
            GammaVariant::Analytic => (self.gamma2_min_analytic?, self.gamma2_max_analytic),
        };
        (lo > 0.0 && lo <= hi && hi.is_finite()).then_some((lo, hi))
    }

    /// `(lower(z), upper(z))`; `None` when the gammas do not define a sandwich.
    pub fn envelopes(&self, variant: GammaVariant, z: f64) -> Option<(f64, f64)> {
        let (g_min, g_max) = self.gammas(variant)?;
        let r2 = (z - self.m).powi(2);
        let lower = self.d / (2.0 * g_max) * (-r2 / (2.0 * g_min)).exp();
        let upper = self.d / (2.0 * g_min) * (-r2 / (2.0 * g_max)).exp();
        Some((lower, upper))
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let k = pos.floor() as usize;
    let w = pos - k as f64;
    if k + 1 < sorted.len() {
        sorted[k] * (1.0 - w) + sorted[k + 1] * w
    } else {
        sorted[k]
    }
}

/// Estimate the sandwich parameters from the coupling
/// `omega~ = e^{-theta} omega + sqrt(1 - e^{-2 theta}) omega'`.
///
/// The inner products `<Du(omega), Du(omega~)>` are bounded directly rather
/// than through a conditional expectation; pairs where either path leaves
/// the window or diverges are excluded and counted.
pub fn sandwich(
    model: &Model,
    hyp: &HypothesisReport,
    constants: &BoundConstants,
    samples: &SampleSet,
    params: &SandwichParams,
) -> Result<SandwichBounds> {
    let (t, x) = (samples.t, samples.x);
    if params.n_prime == 0 || params.theta_nodes.is_empty() {
        return Err(Error::InvalidParameter(
            "sandwich needs n_prime >= 1 and at least one theta node".into(),
        ));
    }
    if let Some(bad) = params
        .theta_nodes
        .iter()
        .find(|th| !(th.is_finite() && **th >= 0.0))
    {
        return Err(Error::InvalidParameter(format!(
            "theta nodes must be >= 0, got {bad}"
        )));
    }
    if params.t0.is_nan() || params.t0 <= 0.0 || t < params.t0 {
        return Err(Error::InvalidTime(format!(
            "the sandwich estimate holds for t in [t0, T] with t0 > 0; got t = {t}, t0 = {}",
            params.t0
        )));
    }
    let values = samples.valid_values();
    if values.is_empty() {
        return Err(Error::DegenerateSample(
            "no valid samples for the sandwich".into(),
        ));
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let d = values.iter().map(|v| (v - m).abs()).sum::<f64>() / values.len() as f64;

    let (drift, ic, grid, seed) = (&model.drift, &model.ic, &model.grid, samples.seed);
    let window = hyp.window;
    let profile = |path: &crate::paths::BrownianPath| {
        let traj = solve_backward(drift, path, 0.0, t, x).ok()?;
        if !traj.stays_in(window.x_lo, window.x_hi) {
            return None;
        }
        du_profile(drift, ic, &traj).ok()
    };
    // inner products per pair, one row per theta node
    let rows: Vec<Vec<Option<f64>>> = (0..params.n_prime as u64)
        .into_par_iter()
        .map(|i| {
            let omega = sample_path(grid, seed, i);
            let omega_prime = sample_path(grid, seed ^ PRIME_SEED_XOR, i);
            let base = profile(&omega);
            params
                .theta_nodes
                .iter()
                .map(|&theta| {
                    let base = base.as_ref()?;
                    let mixed = mix_paths(&omega, &omega_prime, theta).ok()?;
                    let tilde = profile(&mixed)?;
                    h_inner(&base.du, &tilde.du).ok()
                })
                .collect()
        })
        .collect();

    let mut theta = Vec::with_capacity(params.theta_nodes.len());
    let mut all = Vec::new();
    let mut excluded = 0;
    for (j, &th) in params.theta_nodes.iter().enumerate() {
        let col: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
        excluded += rows.len() - col.len();
        theta.push(ThetaStats {
            theta: th,
            n_pairs: col.len(),
            min: col.iter().copied().min_by(f64::total_cmp),
            max: col.iter().copied().max_by(f64::total_cmp),
        });
        all.extend(col);
    }
    if all.is_empty() {
        return Err(Error::DegenerateSample(
            "every coupling pair left the window or diverged".into(),
        ));
    }
    all.sort_by(f64::total_cmp);
    let n_nonpositive = all.iter().filter(|&&v| v <= 0.0).count();
    let applies = hyp.cc11 && hyp.cc22;
    let positivity = if !applies {
        Verdict::not_applicable("strict concavity or strict positivity fails on the window")
    } else if n_nonpositive == 0 {
        Verdict::pass(format!("all {} inner products positive", all.len()))
    } else {
        Verdict::fail(format!("{n_nonpositive} nonpositive inner products"))
    };

    let gamma2_min_empirical = all[0];
    let gamma2_max_empirical = *all.last().unwrap();
    let gamma2_max_analytic = constants.c3 * constants.c3 * constants.horizon;
    let gamma2_min_analytic = constants.c5;
    let n_pairs_used = all.len();
    let exit_rate = excluded as f64 / (excluded + n_pairs_used) as f64;
    let bracket = match gamma2_min_analytic {
        None => Verdict::not_applicable("no analytic lower constant without strict concavity"),
        Some(_) if exit_rate > 0.01 => Verdict::not_applicable(format!(
            "{:.2}% of coupling pairs left the window (> 1%)",
            100.0 * exit_rate
        )),
        Some(lo) if lo <= gamma2_min_empirical && gamma2_max_empirical <= gamma2_max_analytic => {
            Verdict::pass(format!(
                "{lo:e} <= {gamma2_min_empirical:e} and {gamma2_max_empirical:e} <= {gamma2_max_analytic:e}"
            ))
        }
        Some(lo) => Verdict::fail(format!(
            "analytic [{lo:e}, {gamma2_max_analytic:e}] does not contain empirical [{gamma2_min_empirical:e}, {gamma2_max_empirical:e}]"
        )),
    };
    Ok(SandwichBounds {
        m,
        d,
        gamma2_min_empirical,
        gamma2_max_empirical,
        gamma2_q01: quantile_sorted(&all, 0.01),
        gamma2_q99: quantile_sorted(&all, 0.99),
        gamma2_min_analytic,
        gamma2_max_analytic,
        n_prime: params.n_prime,
        theta,
        n_pairs_used,
        n_pairs_excluded: excluded,
        n_nonpositive,
        positivity,
        bracket,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeViolation {
    pub z: f64,
    pub rho_hat: f64,
    pub lower: f64,
    pub upper: f64,
    /// Distance outside the guard band, positive when violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub variant: GammaVariant,
    pub region: (f64, f64),
    pub n_tested: usize,
    pub n_untested: usize,
    pub n_violations: usize,
    /// First violations in grid order, at most 20.
    pub violations: Vec<EnvelopeViolation>,
    pub lower_below_upper: bool,
    pub verdict: Verdict,
}

const MAX_LISTED_VIOLATIONS: usize = 20;

/// Check `lower - 3 SE <= rho_hat <= upper + 3 SE` on the grid nodes inside
/// `region`. Nodes more than 5 sample sd from the mean are left untested.
pub fn envelope_check(
    density: &DensityEstimate,
    bounds: &SandwichBounds,
    variant: GammaVariant,
    region: (f64, f64),
) -> EnvelopeReport {
    let lower_below_upper = density
        .z
        .iter()
        .all(|&z| bounds.envelopes(variant, z).is_none_or(|(l, u)| l <= u));
    let mut report = EnvelopeReport {
        variant,
        region,
        n_tested: 0,
        n_untested: 0,
        n_violations: 0,
        violations: Vec::new(),
        lower_below_upper,
        verdict: Verdict::not_applicable(""),
    };
    if bounds.gammas(variant).is_none() {
        report.verdict = Verdict::not_applicable(
            "gammas do not define a sandwich (need 0 < gamma2_min <= gamma2_max)",
        );
        return report;
    }
    for k in 0..density.z.len() {
        let z = density.z[k];
        if z < region.0 || z > region.1 {
            continue;
        }
        if (z - density.mean).abs() > 5.0 * density.sd {
            report.n_untested += 1;
            continue;
        }
        report.n_tested += 1;
        let (lower, upper) = bounds.envelopes(variant, z).unwrap();
        let rho = density.rho[k];
        let guard = 3.0 * density.se[k];
        let margin = (lower - guard - rho).max(rho - upper - guard);
        if margin > 0.0 {
            report.n_violations += 1;
            if report.violations.len() < MAX_LISTED_VIOLATIONS {
                report.violations.push(EnvelopeViolation {
                    z,
                    rho_hat: rho,
                    lower,
                    upper,
                    margin,
                });
            }
        }
    }
    report.verdict = if !lower_below_upper {
        Verdict::fail("lower envelope exceeds upper envelope")
    } else if report.n_tested == 0 {
        Verdict::not_applicable("no grid nodes in the tested region")
    } else if report.n_violations == 0 {
        Verdict::pass(format!("{} nodes inside the guard band", report.n_tested))
    } else {
        Verdict::fail(format!(
            "{} of {} nodes outside the guard band",
            report.n_violations, report.n_tested
        ))
    };
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSide {
    pub side: String,
    pub z_start: f64,
    /// Last node whose relative standard error is at most 10%.
    pub z_end: f64,
    pub n_tested: usize,
    /// Largest `g_k / min_{j<k} g_j` along the tail.
    pub max_rise: f64,
    /// Mean of `g` on the outer fifth over the mean on the inner fifth.
    pub decay_ratio: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub p: u32,
    pub q: f64,
    pub center: f64,
    pub sides: Vec<TailSide>,
    pub verdict: Verdict,
}

/// Slack allowed for the monotone decrease of `|z - c|^p rho_hat(z)`.
pub const TAIL_SLACK: f64 = 1.1;
const TAIL_MAX_REL_SE: f64 = 0.1;
const TAIL_MIN_NODES: usize = 5;

/// Check that `g(z) = |z - c|^p rho_hat(z)` decays in both tails.
///
/// The tails start at the `(1 - q)/2` and `(1 + q)/2` quantiles of the
/// estimate, `c` is its median, and each tail runs outward while the
/// relative standard error of `rho_hat` stays at most 10%. A tail passes
/// when `g` never rises more than 10% above its running minimum and its
/// outer fifth averages at least 10% below its inner fifth.
pub fn tail_check(density: &DensityEstimate, p: u32, q: f64) -> TailReport {
    let center = density.quantile(0.5);
    let starts = [
        ("left", density.quantile((1.0 - q) / 2.0)),
        ("right", density.quantile((1.0 + q) / 2.0)),
    ];
    let reliable = |k: usize| {
        let r = density.rho[k];
        r > 0.0 && density.se[k] / r <= TAIL_MAX_REL_SE
    };
    let n = density.z.len();
    let sides: Vec<TailSide> = starts
        .iter()
        .map(|&(side, z0)| {
            let order: Vec<usize> = if side == "left" {
                (0..n).rev().filter(|&k| density.z[k] <= z0).collect()
            } else {
                (0..n).filter(|&k| density.z[k] >= z0).collect()
            };
            let idx: Vec<usize> = order.into_iter().take_while(|&k| reliable(k)).collect();
            let g: Vec<f64> = idx
                .iter()
                .map(|&k| (density.z[k] - center).abs().powi(p as i32) * density.rho[k])
                .collect();
            let mut max_rise: f64 = 1.0;
            let mut running = f64::INFINITY;
            for &v in &g {
                if running.is_finite() && running > 0.0 {
                    max_rise = max_rise.max(v / running);
                }
                running = running.min(v);
            }
            let fifth = (g.len() / 5).max(1);
            let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            let decay_ratio = if g.is_empty() {
                f64::NAN
            } else {
                avg(&g[g.len() - fifth..]) / avg(&g[..fifth])
            };
            let status = if g.len() < TAIL_MIN_NODES {
                Status::NotApplicable
            } else if max_rise <= TAIL_SLACK && decay_ratio <= 1.0 / TAIL_SLACK {
                Status::Pass
            } else {
                Status::Fail
            };
            TailSide {
                side: side.into(),
                z_start: z0,
                z_end: idx.last().map_or(z0, |&k| density.z[k]),
                n_tested: g.len(),
                max_rise,
                decay_ratio,
                status,
            }
        })
        .collect();
    let verdict = if sides.iter().any(|s| s.status == Status::Fail) {
        let failing: Vec<&str> = sides
            .iter()
            .filter(|s| s.status == Status::Fail)
            .map(|s| s.side.as_str())
            .collect();
        Verdict::fail(format!(
            "|z|^{p} rho_hat does not decay in the {} tail",
            failing.join(" and ")
        ))
    } else if sides.iter().all(|s| s.status == Status::NotApplicable) {
        Verdict::not_applicable("too few reliable tail nodes")
    } else {
        Verdict::pass(format!(
            "|z|^{p} rho_hat decays beyond the central {q} mass"
        ))
    };
    TailReport {
        p,
        q,
        center,
        sides,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::TimeGrid;
    use crate::scenario::{constants, DriftSpec, InitialConditionSpec, Window};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Cauchy, Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn model(drift: DriftSpec, ic: InitialConditionSpec, window: Window, n_steps: usize) -> Model {
        Model::new(drift, ic, window, TimeGrid::new(1.0, n_steps).unwrap()).unwrap()
    }

    fn setup(m: &Model) -> (HypothesisReport, BoundConstants) {
        let hyp = m.hypotheses().unwrap();
        let c = constants(&hyp, 1.0, 1.0).unwrap();
        (hyp, c)
    }

    #[test]
    fn normal_density_at_zero() {
        let est = kde(&normals(100_000, 1), &KdeOptions::default()).unwrap();
        let k = est.z.partition_point(|&z| z < 0.0);
        let (z0, z1) = (est.z[k - 1], est.z[k]);
        let at0 = est.rho[k - 1] + (est.rho[k] - est.rho[k - 1]) * (0.0 - z0) / (z1 - z0);
        assert!((at0 - 0.39894).abs() < 0.01, "{at0}");
        let mass = est.mass();
        assert!((0.98..=1.001).contains(&mass), "{mass}");
        assert!(est.rho.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn degenerate_samples() {
        assert!(matches!(
            kde(&[2.0; 10], &KdeOptions::default()),
            Err(Error::DegenerateSample(_))
        ));
        assert!(matches!(
            kde(&[1.0], &KdeOptions::default()),
            Err(Error::DegenerateSample(_))
        ));
        let opts = KdeOptions {
            bandwidth: Bandwidth::Fixed(0.5),
            ..KdeOptions::default()
        };
        let one = kde(&[1.0], &opts).unwrap();
        assert!((one.mass() - 1.0).abs() < 1e-3);
        assert!(kde(
            &[1.0],
            &KdeOptions {
                bandwidth: Bandwidth::Fixed(-1.0),
                ..opts
            }
        )
        .is_err());
    }

    #[test]
    fn single_path_sample_set() {
        let m = model(
            DriftSpec::Zero,
            InitialConditionSpec::Exponential,
            Window::new(-6.0, 6.0, 401).unwrap(),
            100,
        );
        let (hyp, _) = setup(&m);
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 1, 3, 0).unwrap();
        assert_eq!(s.len(), 1);
        let opts = KdeOptions {
            bandwidth: Bandwidth::Fixed(0.1),
            ..KdeOptions::default()
        };
        assert!(kde(&s.valid_values(), &opts).is_ok());
        assert!(sample_solution(&m, &hyp, 1.0, 0.0, 0, 3, 0).is_err());
    }

    #[test]
    fn log_of_exponential_ic_is_normal() {
        let m = model(
            DriftSpec::Zero,
            InitialConditionSpec::Exponential,
            Window::new(-10.0, 10.0, 401).unwrap(),
            50,
        );
        let (hyp, _) = setup(&m);
        let n = 100_000;
        let s = sample_solution(&m, &hyp, 1.0, 0.0, n, 0, 0).unwrap();
        let mean_log = s.valid_values().iter().map(|u| u.ln()).sum::<f64>() / n as f64;
        assert!(mean_log.abs() < 4.0 / (n as f64).sqrt(), "{mean_log}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = model(
            DriftSpec::Quadratic { kappa: 1.0 },
            InitialConditionSpec::ArctanShift { delta: 0.1 },
            Window::default(),
            200,
        );
        let (hyp, _) = setup(&m);
        let a = sample_solution(&m, &hyp, 1.0, 0.0, 300, 9, 3).unwrap();
        let b = sample_solution(&m, &hyp, 1.0, 0.0, 300, 9, 3).unwrap();
        assert_eq!(format!("{:?}", a.records), format!("{:?}", b.records));
    }

    #[test]
    fn zero_drift_positivity_closed_form() {
        let ic = InitialConditionSpec::ArctanShift { delta: 0.1 };
        let m = model(
            DriftSpec::Zero,
            ic.clone(),
            Window::new(-8.0, 8.0, 401).unwrap(),
            100,
        );
        let (hyp, c) = setup(&m);
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 500, 4, 0).unwrap();
        let r = bouleau_hirsch_check(&s, &hyp, &c);
        assert_eq!(r.positivity.status, Status::Pass);
        let expected = (0..500)
            .map(|i| {
                let b1 = sample_path(&m.grid, 4, i).value_at(100);
                ic.jet(-b1)[1].powi(2)
            })
            .min_by(f64::total_cmp)
            .unwrap();
        assert!((r.min_du_norm_sq.unwrap() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn constant_ic_fails_positivity() {
        let m = model(
            DriftSpec::Linear { a: 1.0, c: 0.0 },
            InitialConditionSpec::Affine {
                alpha: 0.0,
                beta: 1.0,
            },
            Window::new(-8.0, 8.0, 401).unwrap(),
            100,
        );
        let (hyp, c) = setup(&m);
        assert!(!hyp.cc2);
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 50, 0, 0).unwrap();
        let r = bouleau_hirsch_check(&s, &hyp, &c);
        assert_eq!(r.positivity.status, Status::Fail);
        assert_eq!(r.min_du_norm_sq, Some(0.0));
    }

    #[test]
    fn zero_drift_sandwich_closed_form() {
        let ic = InitialConditionSpec::ArctanShift { delta: 0.1 };
        let m = model(
            DriftSpec::Zero,
            ic.clone(),
            Window::new(-8.0, 8.0, 401).unwrap(),
            200,
        );
        let (hyp, c) = setup(&m);
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 200, 11, 0).unwrap();
        let params = SandwichParams {
            n_prime: 100,
            ..SandwichParams::default()
        };
        let b = sandwich(&m, &hyp, &c, &s, &params).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..100 {
            let w = sample_path(&m.grid, 11, i);
            let wp = sample_path(&m.grid, 11 ^ PRIME_SEED_XOR, i);
            for &th in &params.theta_nodes {
                let mixed = mix_paths(&w, &wp, th).unwrap();
                let v = ic.jet(-w.value_at(200))[1] * ic.jet(-mixed.value_at(200))[1];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        assert!((b.gamma2_min_empirical - lo).abs() < 1e-10);
        assert!((b.gamma2_max_empirical - hi).abs() < 1e-10);
        assert!(b.gamma2_q01 >= lo && b.gamma2_q99 <= hi);
    }

    #[test]
    fn theta_zero_reproduces_the_norm() {
        let m = model(
            DriftSpec::LogCosh { kappa: 1.0 },
            InitialConditionSpec::ArctanShift { delta: 0.1 },
            Window::new(-6.0, 6.0, 401).unwrap(),
            200,
        );
        let (hyp, c) = setup(&m);
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 20, 5, 0).unwrap();
        let params = SandwichParams {
            n_prime: 20,
            theta_nodes: vec![0.0],
            t0: 0.1,
        };
        let b = sandwich(&m, &hyp, &c, &s, &params).unwrap();
        let norms: Vec<f64> = s
            .records
            .iter()
            .filter(|r| r.is_valid())
            .map(|r| r.du_norm_sq)
            .collect();
        let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = norms.iter().copied().fold(0.0, f64::max);
        assert_eq!(b.gamma2_min_empirical, min);
        assert_eq!(b.gamma2_max_empirical, max);
    }

    #[test]
    fn sandwich_refuses_small_times() {
        let m = model(
            DriftSpec::Zero,
            InitialConditionSpec::Exponential,
            Window::new(-6.0, 6.0, 401).unwrap(),
            100,
        );
        let hyp = m.hypotheses().unwrap();
        let c = constants(&hyp, 1.0, 0.05).unwrap();
        let s = sample_solution(&m, &hyp, 0.05, 0.0, 10, 0, 0).unwrap();
        let err = sandwich(&m, &hyp, &c, &s, &SandwichParams::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidTime(_)));
    }

    #[test]
    fn quadratic_analytic_constants() {
        let m = model(
            DriftSpec::Quadratic { kappa: 1.0 },
            InitialConditionSpec::ArctanShift { delta: 0.1 },
            Window::default(),
            100,
        );
        let (hyp, c) = setup(&m);
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 50, 0, 0).unwrap();
        let b = sandwich(
            &m,
            &hyp,
            &c,
            &s,
            &SandwichParams {
                n_prime: 20,
                ..SandwichParams::default()
            },
        )
        .unwrap();
        assert!((b.gamma2_min_analytic.unwrap() - (-8.0f64).exp() / 3.0).abs() < 1e-18);
        assert!((b.gamma2_max_analytic - c.c3 * c.c3).abs() < 1e-9);
        assert_eq!(b.positivity.status, Status::Pass);
    }

    #[test]
    fn gaussian_case_matches_the_envelope() {
        // u0(x) = x + 0.5 with zero drift: u = 0.5 - B(1) is N(0.5, 1) and
        // every inner product equals t, so both envelopes collapse to
        // d / 2 exp(-(z - m)^2 / 2) = phi(z - m) up to d = sqrt(2/pi)
        let m = model(
            DriftSpec::Zero,
            InitialConditionSpec::Affine {
                alpha: 1.0,
                beta: 0.5,
            },
            Window::new(-8.0, 8.0, 401).unwrap(),
            100,
        );
        let (hyp, c) = setup(&m);
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 100_000, 2, 0).unwrap();
        let b = sandwich(
            &m,
            &hyp,
            &c,
            &s,
            &SandwichParams {
                n_prime: 50,
                ..SandwichParams::default()
            },
        )
        .unwrap();
        assert!((b.gamma2_min_empirical - 1.0).abs() < 1e-12);
        assert!((b.gamma2_max_empirical - 1.0).abs() < 1e-12);
        let est = kde(&s.valid_values(), &KdeOptions::default()).unwrap();
        let rep = envelope_check(
            &est,
            &b,
            GammaVariant::Empirical,
            (est.mean - 2.0 * est.sd, est.mean + 2.0 * est.sd),
        );
        assert_eq!(rep.verdict.status, Status::Pass, "{rep:?}");
        assert!((b.d - (2.0 / PI).sqrt()).abs() < 0.01);
    }

    #[test]
    fn far_tail_is_untested() {
        let est = kde(
            &normals(10_000, 3),
            &KdeOptions {
                range: Some((-8.0, 8.0)),
                ..KdeOptions::default()
            },
        )
        .unwrap();
        let b = SandwichBounds {
            m: 0.0,
            d: (2.0 / PI).sqrt(),
            gamma2_min_empirical: 1.0,
            gamma2_max_empirical: 1.0,
            gamma2_q01: 1.0,
            gamma2_q99: 1.0,
            gamma2_min_analytic: None,
            gamma2_max_analytic: 1.0,
            n_prime: 0,
            theta: vec![],
            n_pairs_used: 0,
            n_pairs_excluded: 0,
            n_nonpositive: 0,
            positivity: Verdict::pass(""),
            bracket: Verdict::pass(""),
        };
        let rep = envelope_check(&est, &b, GammaVariant::Empirical, (-8.0, 8.0));
        let beyond = est
            .z
            .iter()
            .filter(|&&z| (z - est.mean).abs() > 5.0 * est.sd)
            .count();
        assert!(beyond > 0);
        assert_eq!(rep.n_untested, beyond);
        assert_eq!(rep.n_tested + rep.n_untested, est.z.len());
        let core = envelope_check(&est, &b, GammaVariant::Empirical, (-2.0, 2.0));
        assert_eq!(core.verdict.status, Status::Pass, "{core:?}");
        let skipped = envelope_check(&est, &b, GammaVariant::Analytic, (-8.0, 8.0));
        assert_eq!(skipped.verdict.status, Status::NotApplicable);
    }

    #[test]
    fn normal_tail_decays() {
        let est = kde(&normals(100_000, 8), &KdeOptions::default()).unwrap();
        let rep = tail_check(&est, 4, 0.95);
        assert_eq!(rep.verdict.status, Status::Pass, "{rep:?}");
        let rep = tail_check(&est, 0, 0.95);
        assert_eq!(rep.verdict.status, Status::Pass, "{rep:?}");
    }

    #[test]
    fn cauchy_tail_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Cauchy::new(0.0, 1.0).unwrap();
        let samples: Vec<f64> = (0..1_000_000).map(|_| c.sample(&mut rng)).collect();
        let opts = KdeOptions {
            bandwidth: Bandwidth::Fixed(1.0),
            z_nodes: 2048,
            range: Some((-150.0, 150.0)),
        };
        let est = kde(&samples, &opts).unwrap();
        let mass = est.mass();
        assert!((0.98..=1.001).contains(&mass), "{mass}");
        let rep = tail_check(&est, 2, 0.95);
        assert_eq!(rep.verdict.status, Status::Fail, "{rep:?}");
    }

    #[test]
    fn csv_outputs() {
        let est = kde(
            &normals(100, 0),
            &KdeOptions {
                z_nodes: 8,
                ..KdeOptions::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        est.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("z,rho_hat,se,lower_env,upper_env\n"));
        assert!(text.lines().nth(1).unwrap().ends_with("NaN,NaN"));
        assert_eq!(text.lines().count(), 9);

        let m = model(
            DriftSpec::Zero,
            InitialConditionSpec::Exponential,
            Window::default(),
            10,
        );
        let hyp = m.hypotheses().unwrap();
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 3, 0, 0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,u,du_norm_sq,in_window\n0,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn kde_mass_and_sign(seed in 0u64..1000, n in 2usize..400, scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
            let xs: Vec<f64> = normals(n, seed).into_iter().map(|v| shift + scale * v.powi(3)).collect();
            let est = kde(&xs, &KdeOptions::default()).unwrap();
            prop_assert!(est.rho.iter().all(|&r| r >= 0.0));
            let mass = est.mass();
            prop_assert!((0.98..=1.001).contains(&mass), "mass {}", mass);
        }

        #[test]
        fn envelopes_are_ordered(m in -5.0f64..5.0, d in 0.0f64..3.0, g1 in 1e-4f64..10.0, g2 in 1e-4f64..10.0, z in -20.0f64..20.0) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let b = SandwichBounds {
                m, d,
                gamma2_min_empirical: lo, gamma2_max_empirical: hi,
                gamma2_q01: lo, gamma2_q99: hi,
                gamma2_min_analytic: None, gamma2_max_analytic: hi,
                n_prime: 0, theta: vec![], n_pairs_used: 0, n_pairs_excluded: 0, n_nonpositive: 0,
                positivity: Verdict::pass(""), bracket: Verdict::pass(""),
            };
            let (l, u) = b.envelopes(GammaVariant::Empirical, z).unwrap();
            prop_assert!(l <= u);
        }
    }

    #[test]
    fn empirical_gammas_bracket_every_sample() {
        let m = model(
            DriftSpec::Quadratic { kappa: 1.0 },
            InitialConditionSpec::ArctanShift { delta: 0.1 },
            Window::new(-6.0, 6.0, 401).unwrap(),
            200,
        );
        let (hyp, c) = setup(&m);
        let s = sample_solution(&m, &hyp, 1.0, 0.0, 40, 1, 0).unwrap();
        let b = sandwich(
            &m,
            &hyp,
            &c,
            &s,
            &SandwichParams {
                n_prime: 40,
                ..SandwichParams::default()
            },
        )
        .unwrap();
        for th in &b.theta {
            assert!(
                th.min.unwrap() >= b.gamma2_min_empirical
                    && th.max.unwrap() <= b.gamma2_max_empirical
            );
        }
        assert!(b.gamma2_q01 <= b.gamma2_q99);
    }
}
