//! Run configuration: JSON parsing with defaults, unknown-field detection and
//! validation that reports every problem at once.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use serde_json::{Map, Value};

use crate::density::{Bandwidth, SandwichParams};
use crate::scenario::{DriftSpec, InitialConditionSpec, Window};

/// Pipeline depth, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Check,
    Simulate,
    Density,
    Sandwich,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Check => "check",
            Stage::Simulate => "simulate",
            Stage::Density => "density",
            Stage::Sandwich => "sandwich",
            Stage::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub drift: DriftSpec,
    pub ic: InitialConditionSpec,
    pub window: Window,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub n_steps: usize,
    pub t_eval: Vec<f64>,
    pub x_eval: Vec<f64>,
    pub t0: f64,
    /// Paths, counted from index 0, that also get the second-order audit.
    pub second_order_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloConfig {
    pub n_paths: usize,
    pub n_prime: usize,
    pub seed: u64,
    pub theta_nodes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeConfig {
    pub bandwidth: Bandwidth,
    pub z_nodes: usize,
}

impl Serialize for KdeConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(2))?;
        match self.bandwidth {
            Bandwidth::Auto => m.serialize_entry("bandwidth", "auto")?,
            Bandwidth::Fixed(h) => m.serialize_entry("bandwidth", &h)?,
        }
        m.serialize_entry("z_nodes", &self.z_nodes)?;
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailConfig {
    pub p: u32,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<String>,
}

impl OutputConfig {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

/// Effective configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub simulation: SimulationConfig,
    pub montecarlo: MonteCarloConfig,
    pub kde: KdeConfig,
    pub tail: TailConfig,
    pub outputs: OutputConfig,
}

/// All problems found in a configuration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid configuration:\n  {}", .errors.join("\n  "))]
pub struct ConfigError {
    pub errors: Vec<String>,
}

pub const DEFAULT_THETA_NODES: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 2.0, 4.0];
const FORMATS: [&str; 2] = ["json", "csv"];

/// Field reader over one JSON object that remembers what it consumed.
struct Section<'a> {
    path: String,
    obj: Option<&'a Map<String, Value>>,
    used: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(path: &str, value: Option<&'a Value>, errors: &mut Vec<String>) -> Self {
        let obj = match value {
            None | Some(Value::Null) => None,
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                errors.push(format!("{path}: expected an object"));
                None
            }
        };
        Section {
            path: path.to_string(),
            obj,
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.used.push(key);
        self.obj.and_then(|m| m.get(key)).filter(|v| !v.is_null())
    }

    fn f64(&mut self, key: &'static str, default: f64, errors: &mut Vec<String>) -> f64 {
        match self.raw(key) {
            None => default,
            Some(v) => v.as_f64().unwrap_or_else(|| {
                errors.push(format!("{}.{key}: expected a number", self.path));
                default
            }),
        }
    }

    fn uint(&mut self, key: &'static str, default: u64, errors: &mut Vec<String>) -> u64 {
        match self.raw(key) {
            None => default,
            Some(v) => v.as_u64().unwrap_or_else(|| {
                errors.push(format!(
                    "{}.{key}: expected a non-negative integer",
                    self.path
                ));
                default
            }),
        }
    }

    fn f64_list(
        &mut self,
        key: &'static str,
        default: &[f64],
        errors: &mut Vec<String>,
    ) -> Vec<f64> {
        let Some(v) = self.raw(key) else {
            return default.to_vec();
        };
        match v
            .as_array()
            .map(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
        {
            Some(Some(list)) => list,
            _ => {
                errors.push(format!("{}.{key}: expected a list of numbers", self.path));
                default.to_vec()
            }
        }
    }

    fn finish(self, errors: &mut Vec<String>) {
        if let Some(m) = self.obj {
            for k in m.keys() {
                if !self.used.contains(&k.as_str()) {
                    errors.push(format!("{}: unknown field \"{k}\"", self.path));
                }
            }
        }
    }
}

fn typed<T: serde::de::DeserializeOwned>(
    path: &str,
    value: Option<&Value>,
    errors: &mut Vec<String>,
) -> Option<T> {
    match value {
        None | Some(Value::Null) => {
            errors.push(format!("{path}: missing required field"));
            None
        }
        Some(v) => match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                errors.push(format!("{path}: {e}"));
                None
            }
        },
    }
}

/// Fields a builtin kind accepts besides `kind`.
fn check_kind_fields(
    path: &str,
    value: Option<&Value>,
    allowed: &[(&str, &[&str])],
    errors: &mut Vec<String>,
) {
    let Some(Value::Object(m)) = value else {
        return;
    };
    let Some(kind) = m.get("kind").and_then(Value::as_str) else {
        return;
    };
    let Some((_, fields)) = allowed.iter().find(|(k, _)| *k == kind) else {
        return;
    };
    for k in m.keys() {
        if k != "kind" && !fields.contains(&k.as_str()) {
            errors.push(format!("{path}: unknown field \"{k}\" for kind \"{kind}\""));
        }
    }
}

const DRIFT_FIELDS: &[(&str, &[&str])] = &[
    ("zero", &[]),
    ("linear", &["a", "c"]),
    ("quadratic", &["kappa"]),
    ("logcosh", &["kappa"]),
    ("polynomial", &["coefficients"]),
];
const IC_FIELDS: &[(&str, &[&str])] = &[
    ("arctan_shift", &["delta"]),
    ("exponential", &[]),
    ("affine", &["alpha", "beta"]),
];

/// Parse and validate a configuration document. Stage-specific
/// constraints are checked separately by [`RunConfig::validate_for`].
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let root: Value = serde_json::from_str(text).map_err(|e| ConfigError {
        errors: vec![format!("malformed JSON: {e}")],
    })?;
    let mut errors = Vec::new();
    let mut top = Section::new("config", Some(&root), &mut errors);
    if top.obj.is_none() {
        return Err(ConfigError {
            errors: vec!["config: expected a JSON object".into()],
        });
    }

    let mut sc = Section::new("scenario", top.raw("scenario"), &mut errors);
    let drift_raw = sc.raw("drift");
    check_kind_fields("scenario.drift", drift_raw, DRIFT_FIELDS, &mut errors);
    let drift: Option<DriftSpec> = typed("scenario.drift", drift_raw, &mut errors);
    let ic_raw = sc.raw("ic");
    check_kind_fields("scenario.ic", ic_raw, IC_FIELDS, &mut errors);
    let ic: Option<InitialConditionSpec> = typed("scenario.ic", ic_raw, &mut errors);
    let mut win = Section::new("scenario.window", sc.raw("window"), &mut errors);
    let d = Window::default();
    let window = Window {
        x_lo: win.f64("x_lo", d.x_lo, &mut errors),
        x_hi: win.f64("x_hi", d.x_hi, &mut errors),
        n_scan: win.uint("n_scan", d.n_scan as u64, &mut errors) as usize,
    };
    win.finish(&mut errors);
    let horizon = match (sc.raw("T"), sc.raw("horizon")) {
        (Some(_), Some(_)) => {
            errors.push("scenario: give either \"T\" or \"horizon\", not both".into());
            1.0
        }
        (Some(_), None) => sc.f64("T", 1.0, &mut errors),
        (None, _) => sc.f64("horizon", 1.0, &mut errors),
    };
    sc.finish(&mut errors);

    let mut sim = Section::new("simulation", top.raw("simulation"), &mut errors);
    let n_steps = sim.uint("n_steps", 1000, &mut errors) as usize;
    let t_eval = sim.f64_list("t_eval", &[horizon], &mut errors);
    let x_eval = sim.f64_list("x_eval", &[0.0], &mut errors);
    let t0 = sim.f64("t0", 0.1, &mut errors);
    let second_order_paths = sim.uint("second_order_paths", 100, &mut errors) as usize;
    sim.finish(&mut errors);

    let mut mc = Section::new("montecarlo", top.raw("montecarlo"), &mut errors);
    let n_paths = mc.uint("n_paths", 10_000, &mut errors) as usize;
    let n_prime = mc.uint("n_prime", 1000, &mut errors) as usize;
    let seed = mc.uint("seed", 0, &mut errors);
    let theta_nodes = mc.f64_list("theta_nodes", &DEFAULT_THETA_NODES, &mut errors);
    mc.finish(&mut errors);

    let mut kd = Section::new("kde", top.raw("kde"), &mut errors);
    let bandwidth = match kd.raw("bandwidth") {
        None => Bandwidth::Auto,
        Some(Value::String(s)) if s == "auto" => Bandwidth::Auto,
        Some(v) => match v.as_f64() {
            Some(h) if h > 0.0 && h.is_finite() => Bandwidth::Fixed(h),
            Some(h) => {
                errors.push(format!(
                    "kde.bandwidth: must be \"auto\" or a positive number, got {h}"
                ));
                Bandwidth::Auto
            }
            None => {
                errors.push(format!(
                    "kde.bandwidth: must be \"auto\" or a positive number, got {v}"
                ));
                Bandwidth::Auto
            }
        },
    };
    let z_nodes = kd.uint("z_nodes", 512, &mut errors) as usize;
    kd.finish(&mut errors);

    let mut tl = Section::new("tail", top.raw("tail"), &mut errors);
    let p = tl.uint("p", 4, &mut errors);
    let q = tl.f64("q", 0.95, &mut errors);
    tl.finish(&mut errors);

    let mut out = Section::new("outputs", top.raw("outputs"), &mut errors);
    let directory = match out.raw("directory") {
        None => "out".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            errors.push("outputs.directory: expected a string".into());
            "out".to_string()
        }
    };
    let formats = match out.raw("formats") {
        None => FORMATS.iter().map(|s| s.to_string()).collect(),
        Some(v) => match v.as_array().map(|a| {
            a.iter()
                .map(|f| f.as_str().map(String::from))
                .collect::<Option<Vec<_>>>()
        }) {
            Some(Some(list)) => list,
            _ => {
                errors.push("outputs.formats: expected a list of strings".into());
                Vec::new()
            }
        },
    };
    out.finish(&mut errors);
    top.finish(&mut errors);

    // constraints
    if let Some(d) = &drift {
        if let Err(e) = d.validate() {
            errors.push(format!("scenario.drift: {e}"));
        }
    }
    if let Some(i) = &ic {
        if let Err(e) = i.validate() {
            errors.push(format!("scenario.ic: {e}"));
        }
    }
    if let Err(e) = window.validate() {
        errors.push(format!("scenario.window: {e}"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        errors.push(format!("scenario.T: T must be positive, got {horizon}"));
    }
    if n_steps < 10 {
        errors.push(format!(
            "simulation.n_steps: n_steps must be >= 10, got {n_steps}"
        ));
    }
    if t_eval.is_empty() {
        errors.push("simulation.t_eval: must not be empty".into());
    }
    for &t in &t_eval {
        if t.is_nan() || t <= 0.0 {
            errors.push(format!("simulation.t_eval: t_eval must be > 0, got {t}"));
        } else if t > horizon {
            errors.push(format!(
                "simulation.t_eval: t_eval must be ≤ T (T = {horizon}), got {t}"
            ));
        } else if n_steps >= 10 && horizon > 0.0 {
            let k = t / horizon * n_steps as f64;
            if (k - k.round()).abs() > 1e-9 * n_steps as f64 {
                errors.push(format!(
                    "simulation.t_eval: {t} is not a node of the grid with {n_steps} steps on [0, {horizon}]"
                ));
            }
        }
    }
    if x_eval.is_empty() {
        errors.push("simulation.x_eval: must not be empty".into());
    }
    if let Some(x) = x_eval.iter().find(|x| !x.is_finite()) {
        errors.push(format!("simulation.x_eval: must be finite, got {x}"));
    }
    if t0.is_nan() || t0 <= 0.0 {
        errors.push(format!("simulation.t0: t0 must be > 0, got {t0}"));
    }
    if n_paths == 0 {
        errors.push("montecarlo.n_paths: must be at least 1".into());
    }
    if n_prime == 0 {
        errors.push("montecarlo.n_prime: must be at least 1".into());
    }
    if theta_nodes.is_empty() {
        errors.push("montecarlo.theta_nodes: must not be empty".into());
    }
    if let Some(th) = theta_nodes
        .iter()
        .find(|th| !(th.is_finite() && **th >= 0.0))
    {
        errors.push(format!(
            "montecarlo.theta_nodes: nodes must be >= 0, got {th}"
        ));
    }
    if z_nodes < 2 {
        errors.push(format!("kde.z_nodes: must be at least 2, got {z_nodes}"));
    }
    if p > 64 {
        errors.push(format!("tail.p: must be at most 64, got {p}"));
    }
    if !(q > 0.0 && q < 1.0) {
        errors.push(format!("tail.q: must lie in (0, 1), got {q}"));
    }
    for f in &formats {
        if !FORMATS.contains(&f.as_str()) {
            errors.push(format!(
                "outputs.formats: unknown format \"{f}\" (expected json or csv)"
            ));
        }
    }

    if !errors.is_empty() {
        return Err(ConfigError { errors });
    }
    Ok(RunConfig {
        scenario: ScenarioConfig {
            drift: drift.unwrap(),
            ic: ic.unwrap(),
            window,
            horizon,
        },
        simulation: SimulationConfig {
            n_steps,
            t_eval,
            x_eval,
            t0,
            second_order_paths,
        },
        montecarlo: MonteCarloConfig {
            n_paths,
            n_prime,
            seed,
            theta_nodes,
        },
        kde: KdeConfig { bandwidth, z_nodes },
        tail: TailConfig { p: p as u32, q },
        outputs: OutputConfig { directory, formats },
    })
}

impl RunConfig {
    /// Constraints that only bind for some pipeline depths.
    pub fn validate_for(&self, stage: Stage) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if stage >= Stage::Sandwich {
            let t0 = self.simulation.t0;
            for &t in &self.simulation.t_eval {
                if t < t0 {
                    errors.push(format!(
                        "simulation.t_eval: {t} < t0 = {t0}; the Gaussian sandwich is only established for t in [t0, T], so sandwich runs need t0 ≤ min(t_eval)"
                    ));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { errors })
        }
    }

    pub fn sandwich_params(&self) -> SandwichParams {
        SandwichParams {
            n_prime: self.montecarlo.n_prime,
            theta_nodes: self.montecarlo.theta_nodes.clone(),
            t0: self.simulation.t0,
        }
    }
}
