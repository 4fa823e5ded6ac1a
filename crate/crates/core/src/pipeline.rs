//! Orchestration: runs the stages in order for every `(t, x)` pair, collects
//! verdicts and writes `report.json`, `samples.csv` and `density.csv`.

use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use crate::config::{RunConfig, Stage};
use crate::density::{
    bouleau_hirsch_check, envelope_check, kde, sample_solution, sandwich, tail_check,
    BouleauHirschReport, DensityEstimate, EnvelopeReport, GammaVariant, KdeOptions, SampleSet,
    SandwichBounds, TailReport,
};
use crate::malliavin::AuditSummary;
use crate::paths::TimeGrid;
use crate::report::{Timing, Verdict, VerdictCounts};
use crate::scenario::{constants, BoundConstants, HypothesisReport, Model};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Largest tolerated fraction of diverged or excluded paths.
pub const EXCLUSION_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusions {
    pub n_paths: usize,
    pub n_diverged: usize,
    pub n_out_of_window: usize,
    pub divergence_rate: f64,
    pub exclusion_rate: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySummary {
    pub n: usize,
    pub bandwidth: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub mass: Option<f64>,
    pub verdict: Verdict,
}

/// Everything computed for one `(t, x)` pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub t: f64,
    pub x: f64,
    pub constants: BoundConstants,
    pub exclusions: Option<Exclusions>,
    pub malliavin: Option<AuditSummary>,
    pub density: Option<DensitySummary>,
    pub bouleau_hirsch: Option<BouleauHirschReport>,
    pub sandwich: Option<SandwichBounds>,
    pub envelopes: Vec<EnvelopeReport>,
    pub tail: Option<TailReport>,
    pub files: Vec<String>,
}

impl Evaluation {
    /// Named verdicts that decide the exit status.
    pub fn verdicts(&self) -> Vec<(String, &Verdict)> {
        let mut out = Vec::new();
        if let Some(e) = &self.exclusions {
            out.push(("exclusions".to_string(), &e.verdict));
        }
        if let Some(m) = &self.malliavin {
            for c in m.checks.iter().filter(|c| !c.informational) {
                out.push((format!("malliavin: {}", c.name), &c.verdict));
            }
        }
        if let Some(d) = &self.density {
            out.push(("kde mass".to_string(), &d.verdict));
        }
        if let Some(b) = &self.bouleau_hirsch {
            out.push(("||Du||^2 > 0".to_string(), &b.positivity));
            out.push(("||Du||^2 >= C5(t)".to_string(), &b.c5_floor));
        }
        if let Some(s) = &self.sandwich {
            out.push((
                "sandwich inner products positive".to_string(),
                &s.positivity,
            ));
            out.push(("analytic gammas bracket empirical".to_string(), &s.bracket));
        }
        for e in &self.envelopes {
            let name = match e.variant {
                GammaVariant::Empirical => "envelope (empirical gammas)",
                GammaVariant::Analytic => "envelope (analytic gammas)",
            };
            out.push((name.to_string(), &e.verdict));
        }
        if let Some(t) = &self.tail {
            out.push(("tail decay".to_string(), &t.verdict));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: u64,
    pub exit_code: i32,
    pub verdicts: VerdictCounts,
    pub config: RunConfig,
    pub hypotheses: HypothesisReport,
    pub evaluations: Vec<Evaluation>,
    /// Wall-clock only; excluded from determinism comparisons.
    pub timings: Vec<Timing>,
}

/// In-memory results kept for file output.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub samples: Vec<Option<SampleSet>>,
    pub densities: Vec<Option<DensityEstimate>>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub artifacts: Artifacts,
}

#[derive(Default)]
struct Clock(Vec<Timing>);

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        match self.0.iter_mut().find(|t| t.stage == stage) {
            Some(t) => t.seconds += secs,
            None => self.0.push(Timing {
                stage: stage.to_string(),
                seconds: secs,
            }),
        }
        out
    }
}

fn file_name(base: &str, index: usize, count: usize) -> String {
    if count == 1 {
        format!("{base}.csv")
    } else {
        format!("{base}_{index}.csv")
    }
}

/// Run the pipeline up to `stage`. The configuration must already satisfy
/// [`RunConfig::validate_for`]. Nothing is written to disk.
pub fn run(config: &RunConfig, stage: Stage) -> anyhow::Result<RunOutcome> {
    config.validate_for(stage).map_err(anyhow::Error::new)?;
    let sc = &config.scenario;
    let grid = TimeGrid::new(sc.horizon, config.simulation.n_steps)?;
    let model = Model::new(sc.drift.clone(), sc.ic.clone(), sc.window, grid)?;
    let mut clock = Clock::default();
    let hyp = clock.time("check", || model.hypotheses())?;

    let pairs: Vec<(f64, f64)> = config
        .simulation
        .t_eval
        .iter()
        .flat_map(|&t| config.simulation.x_eval.iter().map(move |&x| (t, x)))
        .collect();
    let seed = config.montecarlo.seed;
    let csv = config.outputs.wants("csv");
    let mut evaluations = Vec::with_capacity(pairs.len());
    let mut artifacts = Artifacts::default();

    for (index, &(t, x)) in pairs.iter().enumerate() {
        let c = clock.time("check", || constants(&hyp, sc.horizon, t))?;
        let mut ev = Evaluation {
            t,
            x,
            constants: c.clone(),
            exclusions: None,
            malliavin: None,
            density: None,
            bouleau_hirsch: None,
            sandwich: None,
            envelopes: Vec::new(),
            tail: None,
            files: Vec::new(),
        };
        let mut samples_out = None;
        let mut density_out = None;
        if stage >= Stage::Simulate {
            let samples = clock.time("simulate", || {
                sample_solution(
                    &model,
                    &hyp,
                    t,
                    x,
                    config.montecarlo.n_paths,
                    seed,
                    config.simulation.second_order_paths,
                )
            })?;
            ev.malliavin = Some(clock.time("simulate", || {
                AuditSummary::tally(&samples.audits(), &hyp, &c)
            }));
            let rate = samples.exclusion_rate();
            let verdict = if stage < Stage::Density {
                Verdict::not_applicable("no density estimated at this stage")
            } else if rate <= EXCLUSION_TOLERANCE {
                Verdict::pass(format!("{:.3}% of paths excluded", 100.0 * rate))
            } else {
                Verdict::fail(format!(
                    "{:.3}% of paths excluded from the density (> {}%)",
                    100.0 * rate,
                    100.0 * EXCLUSION_TOLERANCE
                ))
            };
            ev.exclusions = Some(Exclusions {
                n_paths: samples.len(),
                n_diverged: samples.n_diverged(),
                n_out_of_window: samples.n_out_of_window(),
                divergence_rate: samples.divergence_rate(),
                exclusion_rate: rate,
                verdict,
            });
            if csv {
                ev.files.push(file_name("samples", index, pairs.len()));
            }

            if stage >= Stage::Density {
                let values = samples.valid_values();
                let opts = KdeOptions {
                    bandwidth: config.kde.bandwidth,
                    z_nodes: config.kde.z_nodes,
                    range: None,
                };
                let est = clock.time("density", || kde(&values, &opts));
                ev.density = Some(match &est {
                    Ok(d) => {
                        let mass = d.mass();
                        DensitySummary {
                            n: d.n,
                            bandwidth: Some(d.bandwidth),
                            mean: Some(d.mean),
                            sd: Some(d.sd),
                            mass: Some(mass),
                            verdict: if (0.98..=1.001).contains(&mass) {
                                Verdict::pass(format!("trapezoidal mass {mass:.6}"))
                            } else {
                                Verdict::fail(format!(
                                    "trapezoidal mass {mass:.6} outside [0.98, 1.001]"
                                ))
                            },
                        }
                    }
                    Err(e) => DensitySummary {
                        n: values.len(),
                        bandwidth: None,
                        mean: None,
                        sd: None,
                        mass: None,
                        verdict: Verdict::fail(format!("no density estimate: {e}")),
                    },
                });
                ev.bouleau_hirsch = Some(bouleau_hirsch_check(&samples, &hyp, &c));
                if csv && est.is_ok() {
                    ev.files.push(file_name("density", index, pairs.len()));
                }
                density_out = est.ok();
            }

            if stage >= Stage::Sandwich {
                if let Some(d) = &density_out {
                    let bounds = clock.time("sandwich", || {
                        sandwich(&model, &hyp, &c, &samples, &config.sandwich_params())
                    })?;
                    let region = (d.mean - 2.0 * d.sd, d.mean + 2.0 * d.sd);
                    ev.envelopes = [GammaVariant::Empirical, GammaVariant::Analytic]
                        .into_iter()
                        .map(|v| envelope_check(d, &bounds, v, region))
                        .collect();
                    ev.sandwich = Some(bounds);
                }
            }

            if stage >= Stage::All {
                if let Some(d) = &density_out {
                    ev.tail =
                        Some(clock.time("tail", || tail_check(d, config.tail.p, config.tail.q)));
                }
            }
            samples_out = Some(samples);
        }
        evaluations.push(ev);
        artifacts.samples.push(samples_out);
        artifacts.densities.push(density_out);
    }

    let mut counts = VerdictCounts::default();
    for ev in &evaluations {
        for (_, v) in ev.verdicts() {
            counts.add(v);
        }
    }
    let diverging = evaluations.iter().any(|e| {
        e.exclusions
            .as_ref()
            .is_some_and(|x| x.divergence_rate > EXCLUSION_TOLERANCE)
    });
    let exit_code = if diverging {
        EXIT_DIVERGENCE
    } else if counts.fail > 0 {
        EXIT_FAIL
    } else {
        EXIT_PASS
    };

    Ok(RunOutcome {
        report: RunReport {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            stage: stage.name().to_string(),
            seed,
            exit_code,
            verdicts: counts,
            config: config.clone(),
            hypotheses: hyp,
            evaluations,
            timings: clock.0,
        },
        artifacts,
    })
}

/// Write the report and CSV files selected by `outputs.formats` into `dir`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let report = &outcome.report;
    if report.config.outputs.wants("csv") {
        for (i, ev) in report.evaluations.iter().enumerate() {
            let sandwich = ev.sandwich.as_ref().map(|b| (b, GammaVariant::Empirical));
            for name in &ev.files {
                let path = dir.join(name);
                let file = fs::File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))?;
                let out = BufWriter::new(file);
                if name.starts_with("samples") {
                    if let Some(s) = &outcome.artifacts.samples[i] {
                        s.write_csv(out)?;
                    }
                } else if let Some(d) = &outcome.artifacts.densities[i] {
                    d.write_csv(out, sandwich)?;
                }
            }
        }
    }
    if report.config.outputs.wants("json") {
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(report)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::report::Status;

    fn config(extra: &str) -> RunConfig {
        parse_config(&format!(
            r#"{{"scenario": {{"drift": {{"kind": "quadratic", "kappa": 1.0}}, "ic": {{"kind": "arctan_shift", "delta": 0.1}}, "window": {{"x_lo": -6, "x_hi": 6}}}},
                "simulation": {{"n_steps": 100, "second_order_paths": 5}},
                "montecarlo": {{"n_paths": 400, "n_prime": 30}} {extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn check_stage_has_no_samples() {
        let out = run(&config(""), Stage::Check).unwrap();
        let ev = &out.report.evaluations[0];
        assert!(ev.malliavin.is_none() && ev.density.is_none());
        assert!(ev.files.is_empty());
        assert_eq!(out.report.exit_code, EXIT_PASS);
    }

    #[test]
    fn full_run_populates_every_section() {
        let out = run(&config(""), Stage::All).unwrap();
        let ev = &out.report.evaluations[0];
        assert!(ev.malliavin.is_some());
        assert!(ev.bouleau_hirsch.is_some());
        assert!(ev.sandwich.is_some());
        assert_eq!(ev.envelopes.len(), 2);
        assert!(ev.tail.is_some());
        assert_eq!(ev.files, vec!["samples.csv", "density.csv"]);
        assert_eq!(
            ev.bouleau_hirsch.as_ref().unwrap().positivity.status,
            Status::Pass
        );
    }

    #[test]
    fn several_pairs_get_indexed_files() {
        let mut c = config(r#", "outputs": {"formats": ["csv"]}"#);
        c.simulation.x_eval = vec![0.0, 0.5];
        let out = run(&c, Stage::Density).unwrap();
        assert_eq!(
            out.report.evaluations[1].files,
            vec!["samples_1.csv", "density_1.csv"]
        );
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&out, dir.path()).unwrap();
        assert!(dir.path().join("density_0.csv").exists());
        assert!(!dir.path().join("report.json").exists());
    }

    #[test]
    fn exclusions_fail_the_run() {
        let mut c = config("");
        c.scenario.window = crate::scenario::Window::default();
        let out = run(&c, Stage::Density).unwrap();
        let ex = out.report.evaluations[0].exclusions.as_ref().unwrap();
        assert!(ex.exclusion_rate > EXCLUSION_TOLERANCE);
        assert_eq!(ex.verdict.status, Status::Fail);
        assert_eq!(out.report.exit_code, EXIT_FAIL);
    }

    #[test]
    fn sandwich_refused_below_t0() {
        let mut c = config("");
        c.simulation.t_eval = vec![0.05];
        assert!(run(&c, Stage::Sandwich).is_err());
        assert!(run(&c, Stage::Density).is_ok());
    }
}
