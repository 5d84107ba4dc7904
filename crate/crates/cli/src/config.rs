//! Run configuration: JSON file, `--set` overrides, strict schema.

use std::path::Path;

use radner_core::model::{AnalyticFamily, Terminal};
use radner_core::picard::{Extension, PicardOptions};
use radner_core::riccati::RiccatiOptions;
use radner_core::taylor::{dyadic_schedule, TEvalPolicy, TaylorOrder};
use radner_core::{EndowmentSpec, MarketConfig, Matrix, VolSchedule};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveGeneral,
    SolveQuadratic,
    CompareTaylor,
    Example,
    Validate,
    LemmaSuite,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    /// Free-form note carried into the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market: Option<MarketSection>,
    #[serde(default)]
    pub endowments: Vec<EndowmentEntry>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub versions: Option<Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub dim_factor: usize,
    pub dim_assets: usize,
    pub risk_aversions: Vec<f64>,
    pub vol: VolEntry,
    pub maturity: f64,
    #[serde(default = "default_alpha")]
    pub holder_alpha: f64,
    #[serde(default)]
    pub ellipticity: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum VolEntry {
    Constant(Vec<Vec<f64>>),
    Linear { c0: Vec<Vec<f64>>, c1: Vec<Vec<f64>> },
    PiecewiseLinear { times: Vec<f64>, samples: Vec<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum EndowmentEntry {
    Zero {
        #[serde(default)]
        g0: f64,
    },
    Constant {
        value: f64,
        #[serde(default)]
        g0: f64,
    },
    Quadratic {
        f: f64,
        h: Vec<f64>,
        j: Vec<Vec<f64>>,
        #[serde(default)]
        g0: f64,
    },
    Example {
        alpha: f64,
        #[serde(default)]
        g0: f64,
    },
    Cosine {
        amplitude: f64,
        wave: Vec<f64>,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        g0: f64,
    },
    GaussianBump {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        g0: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Auto,
    Picard,
    Riccati,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Picard,
    ClosedForm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    AtZero,
    SupOverT,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub time_steps: usize,
    pub space_points: Option<usize>,
    pub half_width: Option<f64>,
    pub hermite_nodes: Option<usize>,
    pub legendre_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub extension: String,
}

impl Default for PicardSection {
    fn default() -> Self {
        let d = PicardOptions::default();
        Self {
            time_steps: d.time_steps,
            space_points: d.space_points,
            half_width: d.half_width,
            hermite_nodes: d.hermite_nodes,
            legendre_nodes: d.legendre_nodes,
            tol: d.tol,
            max_iter: d.max_iter,
            extension: "clamp".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiSection {
    pub atol: f64,
    pub rtol: f64,
    pub max_step_fraction: f64,
    pub blow_up_cap: f64,
    pub blow_up_resolution: f64,
}

impl Default for RiccatiSection {
    fn default() -> Self {
        let d = RiccatiOptions::default();
        Self {
            atol: d.atol,
            rtol: d.rtol,
            max_step_fraction: d.max_step_fraction,
            blow_up_cap: d.blow_up_cap,
            blow_up_resolution: d.blow_up_resolution,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub pipeline: Pipeline,
    pub picard: PicardSection,
    pub riccati: RiccatiSection,
    /// Explicit maturities; when absent, `2^{-k}` for `k` in `dyadic`.
    pub maturities: Option<Vec<f64>>,
    pub dyadic: [u32; 2],
    pub t_eval_policy: Policy,
    pub taylor_order: Order,
    pub lambda_source: Source,
    pub quadrature_nodes: usize,
    pub example_alpha: f64,
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub antithetic: bool,
    pub surface_times: usize,
    pub surface_points: Option<usize>,
    pub surface_half_width: f64,
    pub lemma_draws: usize,
    pub lemma_seeds: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            pipeline: Pipeline::Auto,
            picard: PicardSection::default(),
            riccati: RiccatiSection::default(),
            maturities: None,
            dyadic: [4, 10],
            t_eval_policy: Policy::AtZero,
            taylor_order: Order::Second,
            lambda_source: Source::Picard,
            quadrature_nodes: 16,
            example_alpha: 0.5,
            seed: 0,
            paths: 10_000,
            steps: 64,
            antithetic: true,
            surface_times: 5,
            surface_points: None,
            surface_half_width: 1.0,
            lemma_draws: 1000,
            lemma_seeds: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub precision: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            precision: 12,
        }
    }
}

fn default_alpha() -> f64 {
    0.5
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Sets `path` (dot-separated) in `root` to `raw`, parsed as JSON when it
/// parses and kept as a string otherwise. Missing objects are created.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("cli: bad override key '{path}'")));
    }
    for (n, key) in keys.iter().enumerate() {
        let last = n + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| config_err(format!("cli: override '{path}': '{key}' is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| config_err(format!("cli: override '{path}': index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(config_err(format!("cli: override '{path}': '{key}' is not inside an object"))),
        };
    }
    unreachable!()
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cli: reading {}: {e}", path.display())))?;
    let mut root: Value =
        serde_json::from_str(&text).map_err(|e| config_err(format!("cli: parsing {}: {e}", path.display())))?;
    for ov in overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| config_err(format!("cli: override '{ov}' is not key=value")))?;
        apply_override(&mut root, k.trim(), v)?;
    }
    serde_json::from_value(root).map_err(|e| config_err(format!("cli: config schema: {e}")))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, CliError> {
    Matrix::from_rows(rows).ok_or_else(|| config_err(format!("cli: {what} has ragged or empty rows")))
}

impl MarketSection {
    pub fn build(&self) -> Result<MarketConfig, CliError> {
        let vol = match &self.vol {
            VolEntry::Constant(c) => VolSchedule::constant(matrix(c, "market.vol.constant")?),
            VolEntry::Linear { c0, c1 } => VolSchedule::linear(matrix(c0, "market.vol.linear.c0")?, matrix(c1, "market.vol.linear.c1")?),
            VolEntry::PiecewiseLinear { times, samples } => {
                let ms = samples
                    .iter()
                    .map(|s| matrix(s, "market.vol.piecewise_linear.samples"))
                    .collect::<Result<Vec<_>, _>>()?;
                VolSchedule::piecewise_linear(times, &ms)?
            }
        };
        Ok(MarketConfig::new(
            self.dim_factor,
            self.dim_assets,
            self.risk_aversions.clone(),
            vol,
            self.maturity,
            self.holder_alpha,
            self.ellipticity.map(|[l, u]| (l, u)),
        )?)
    }
}

impl EndowmentEntry {
    pub fn build(&self, dim: usize) -> Result<EndowmentSpec, CliError> {
        Ok(match self {
            EndowmentEntry::Zero { g0 } => EndowmentSpec::zero(dim).with_initial(*g0),
            EndowmentEntry::Constant { value, g0 } => EndowmentSpec::constant(*value, dim).with_initial(*g0),
            EndowmentEntry::Quadratic { f, h, j, g0 } => EndowmentSpec::quadratic(*f, h.clone(), matrix(j, "endowment j")?, *g0)?,
            EndowmentEntry::Example { alpha, g0 } => EndowmentSpec::example(*alpha, dim, *g0)?,
            EndowmentEntry::Cosine {
                amplitude,
                wave,
                phase,
                g0,
            } => EndowmentSpec::analytic(
                AnalyticFamily::Cosine {
                    amplitude: *amplitude,
                    wave: wave.clone(),
                    phase: *phase,
                },
                *g0,
            )?,
            EndowmentEntry::GaussianBump {
                amplitude,
                center,
                width,
                g0,
            } => EndowmentSpec::analytic(
                AnalyticFamily::GaussianBump {
                    amplitude: *amplitude,
                    center: center.clone(),
                    width: *width,
                },
                *g0,
            )?,
        })
    }
}

impl RunConfig {
    pub fn market(&self) -> Result<MarketConfig, CliError> {
        self.market
            .as_ref()
            .ok_or_else(|| config_err("cli: this command needs a market section"))?
            .build()
    }

    pub fn endowments(&self, market: &MarketConfig) -> Result<Vec<EndowmentSpec>, CliError> {
        if self.endowments.len() != market.num_investors() {
            return Err(config_err(format!(
                "cli: {} endowments for {} risk aversions",
                self.endowments.len(),
                market.num_investors()
            )));
        }
        let g = self
            .endowments
            .iter()
            .map(|e| e.build(market.dim_factor()))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(k) = g.iter().position(|e| e.dim() != market.dim_factor()) {
            return Err(config_err(format!(
                "cli: endowment {k} has dimension {}, market has D = {}",
                g[k].dim(),
                market.dim_factor()
            )));
        }
        Ok(g)
    }

    pub fn picard_options(&self) -> Result<PicardOptions, CliError> {
        let p = &self.solver.picard;
        let extension = match p.extension.as_str() {
            "clamp" => Extension::Clamp,
            "linear" => Extension::Linear,
            other => return Err(config_err(format!("cli: solver.picard.extension must be clamp or linear (got '{other}')"))),
        };
        Ok(PicardOptions {
            time_steps: p.time_steps,
            space_points: p.space_points,
            half_width: p.half_width,
            hermite_nodes: p.hermite_nodes,
            legendre_nodes: p.legendre_nodes,
            tol: p.tol,
            max_iter: p.max_iter,
            extension,
        })
    }

    pub fn riccati_options(&self) -> RiccatiOptions {
        let r = &self.solver.riccati;
        RiccatiOptions {
            atol: r.atol,
            rtol: r.rtol,
            max_step_fraction: r.max_step_fraction,
            blow_up_cap: r.blow_up_cap,
            blow_up_resolution: r.blow_up_resolution,
        }
    }

    pub fn maturities(&self) -> Vec<f64> {
        match &self.solver.maturities {
            Some(m) => m.clone(),
            None => dyadic_schedule(self.solver.dyadic[0], self.solver.dyadic[1]),
        }
    }

    pub fn policy(&self) -> TEvalPolicy {
        match self.solver.t_eval_policy {
            Policy::AtZero => TEvalPolicy::AtZero,
            Policy::SupOverT => TEvalPolicy::SupOverT,
        }
    }

    pub fn order(&self) -> TaylorOrder {
        match self.solver.taylor_order {
            Order::First => TaylorOrder::First,
            Order::Second => TaylorOrder::Second,
        }
    }

    /// Fills every default that depends on the market so the manifest
    /// records the values actually used.
    pub fn resolve(&mut self, command: Command) -> Result<(), CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(config_err(format!(
                    "cli: config is for '{}' but '{}' was requested",
                    command_name(c),
                    command_name(command)
                )));
            }
        }
        self.command = Some(command);
        if self.output.precision == 0 || self.output.precision > 17 {
            return Err(config_err(format!("cli: output.precision must be in 1..=17 (got {})", self.output.precision)));
        }
        if self.solver.dyadic[0] > self.solver.dyadic[1] || self.solver.dyadic[1] > 52 {
            return Err(config_err("cli: solver.dyadic must be [lo, hi] with lo ≤ hi ≤ 52"));
        }
        if self.solver.surface_times == 0 || self.solver.quadrature_nodes == 0 {
            return Err(config_err("cli: solver.surface_times and solver.quadrature_nodes must be positive"));
        }
        if self.solver.maturities.is_none() {
            self.solver.maturities = Some(self.maturities());
        }
        if let Some(m) = &self.market {
            let d = m.dim_factor;
            let opts = PicardOptions {
                space_points: self.solver.picard.space_points,
                hermite_nodes: self.solver.picard.hermite_nodes,
                ..PicardOptions::default()
            };
            self.solver.picard.space_points = Some(opts.resolved_space_points(d));
            self.solver.picard.hermite_nodes = Some(opts.resolved_hermite_nodes(d));
            if self.solver.surface_points.is_none() {
                self.solver.surface_points = Some(match d {
                    1 => 21,
                    2 => 9,
                    _ => 5,
                });
            }
        }
        Ok(())
    }
}

pub fn command_name(c: Command) -> &'static str {
    match c {
        Command::SolveGeneral => "solve-general",
        Command::SolveQuadratic => "solve-quadratic",
        Command::CompareTaylor => "compare-taylor",
        Command::Example => "example",
        Command::Validate => "validate",
        Command::LemmaSuite => "lemma-suite",
    }
}
