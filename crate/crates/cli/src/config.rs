//! Run configuration: TOML file, `key=value` overrides, defaults resolution.

use std::path::{Path, PathBuf};

use esperiod::cascade::CascadeParams;
use esperiod::flow::{IntegratorConfig, Method};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    FindPeriodic,
    Certify,
    EsAnalyze,
    EsSolve,
    Planar,
    DemoCascade,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::FindPeriodic => "find_periodic",
            Self::Certify => "certify",
            Self::EsAnalyze => "es_analyze",
            Self::EsSolve => "es_solve",
            Self::Planar => "planar",
            Self::DemoCascade => "demo_cascade",
        }
    }

    fn default_system(self) -> Builtin {
        match self {
            Self::Simulate | Self::FindPeriodic | Self::Certify => Builtin::LinearTest,
            Self::EsAnalyze | Self::EsSolve => Builtin::EsQuadratic,
            Self::Planar => Builtin::HopfCircle,
            Self::DemoCascade => Builtin::VdpCascade,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    /// `ẋ = −x + sin t`
    LinearTest,
    /// `ẋ = 0`
    Zero,
    /// `ẋ = x`
    ExpGrowth,
    /// Extremum-seeking loop with `h = 1 + x²`.
    EsQuadratic,
    /// Extremum-seeking loop with `h = x² + x⁴`.
    EsQuartic,
    /// Extremum-seeking loop with the polynomial `es.map`.
    EsPolynomial,
    VdpCascade,
    HopfCircle,
    SpiralIn,
    /// `f = 1 − x₁² − x₂²/β²`, `ω` constant.
    Ellipse,
}

impl Builtin {
    pub fn is_es(self) -> bool {
        matches!(self, Self::EsQuadratic | Self::EsQuartic | Self::EsPolynomial)
    }

    pub fn is_planar(self) -> bool {
        matches!(self, Self::HopfCircle | Self::SpiralIn | Self::Ellipse)
    }

    pub fn dim(self) -> usize {
        match self {
            Self::VdpCascade => 3,
            s if s.is_planar() => 2,
            _ => 1,
        }
    }
}

/// Integrator overrides; unset fields take the command default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub method: Option<Method>,
    pub step: Option<f64>,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub blowup_threshold: Option<f64>,
    pub max_step: Option<f64>,
    pub max_steps: Option<usize>,
}

impl IntegratorSection {
    fn resolve(&self, base: IntegratorConfig) -> Self {
        Self {
            method: Some(self.method.unwrap_or(base.method)),
            step: Some(self.step.unwrap_or(base.step)),
            abs_tol: Some(self.abs_tol.unwrap_or(base.abs_tol)),
            rel_tol: Some(self.rel_tol.unwrap_or(base.rel_tol)),
            blowup_threshold: Some(self.blowup_threshold.unwrap_or(base.blowup_threshold)),
            max_step: Some(self.max_step.unwrap_or(base.max_step)),
            max_steps: Some(self.max_steps.unwrap_or(base.max_steps)),
        }
    }

    pub fn to_config(&self) -> IntegratorConfig {
        let d = IntegratorConfig::default();
        IntegratorConfig {
            method: self.method.unwrap_or(d.method),
            step: self.step.unwrap_or(d.step),
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            blowup_threshold: self.blowup_threshold.unwrap_or(d.blowup_threshold),
            max_step: self.max_step.unwrap_or(d.max_step),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Initial state; defaults to a system-specific point.
    pub x0: Option<Vec<f64>>,
    pub t0: f64,
    pub periods: usize,
    pub samples_per_period: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            x0: None,
            t0: 0.0,
            periods: 10,
            samples_per_period: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    /// Monotone iteration of a scalar return map.
    Monotone,
    /// Banach iteration under a contraction certificate.
    Contraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub method: SearchMethod,
    /// Section time of the return map.
    pub t0: f64,
    /// Scalar start for monotone iteration.
    pub x0: f64,
    /// Start for contraction iteration; defaults to the box center.
    pub x_init: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iters: usize,
    /// Optional bounds; leaving them counts as unbounded.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            method: SearchMethod::Monotone,
            t0: 0.0,
            x0: 0.0,
            x_init: None,
            tol: 1e-10,
            max_iters: 1000,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundChoice {
    /// Sampled maximum of the measure over the box.
    Envelope,
    /// `p(t) ≡ certificate.p`.
    Constant,
    /// Closed-form bound of the extremum-seeking loop on `[−b, b]`.
    Es,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormChoice {
    One,
    Two,
    Inf,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSection {
    pub bound: BoundChoice,
    pub p: Option<f64>,
    /// Cube half-width when `lower`/`upper` are not given.
    pub half_width: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub norm: NormChoice,
    /// Row-major weight matrix for `norm = "weighted"`.
    pub weight: Option<Vec<Vec<f64>>>,
    pub time_samples: usize,
    pub axis_samples: usize,
    pub slack: f64,
}

impl Default for CertificateSection {
    fn default() -> Self {
        Self {
            bound: BoundChoice::Envelope,
            p: None,
            half_width: 1.0,
            lower: None,
            upper: None,
            norm: NormChoice::Two,
            weight: None,
            time_samples: 256,
            axis_samples: 32,
            slack: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsMethod {
    EvenMap,
    Contraction,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsSection {
    /// Polynomial coefficients `c0 c1 ...` for `es_polynomial`.
    pub map: Option<String>,
    pub epsilon: f64,
    pub a: f64,
    pub radius: f64,
    pub b: Option<f64>,
    pub method: EsMethod,
    /// Picard grid cells on the half period.
    pub grid_n: usize,
    /// Picard stopping tolerance.
    pub tol: f64,
    /// Banach stopping tolerance for the contraction route.
    pub banach_tol: f64,
    pub max_iters: usize,
    /// Random initial conditions in `[−R, R]` for the basin check.
    pub basin_count: usize,
    pub basin_periods: usize,
    /// Run the averaging-transform probe in `es_analyze`.
    pub probe: bool,
}

impl Default for EsSection {
    fn default() -> Self {
        Self {
            map: None,
            epsilon: 0.01,
            a: 0.1,
            radius: 1.0,
            b: None,
            method: EsMethod::Both,
            grid_n: 1024,
            tol: 1e-12,
            banach_tol: 1e-10,
            max_iters: 100_000,
            basin_count: 0,
            basin_periods: 150,
            probe: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanarSection {
    /// Ellipse aspect; fixed to 1 for the other builtins.
    pub beta: Option<f64>,
    pub omega: Option<f64>,
    pub z0: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PlanarSection {
    fn default() -> Self {
        Self {
            beta: None,
            omega: None,
            z0: 0.7,
            z_min: -2.0,
            z_max: 2.0,
            tol: 1e-12,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Filled from the subcommand when absent.
    pub command: Option<Command>,
    pub system: Option<Builtin>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub integrator: IntegratorSection,
    pub simulate: SimulateSection,
    pub search: SearchSection,
    pub certificate: CertificateSection,
    pub es: EsSection,
    pub planar: PlanarSection,
    pub cascade: CascadeParams,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Applies `section.key=value` overrides. Values are read as TOML and
    /// fall back to plain strings.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut table = toml::Table::try_from(&self).map_err(|e| CliError::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
            let key = key.trim();
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts
                .pop()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| CliError::Config(format!("override `{item}` has an empty key")))?;
            let mut node = &mut table;
            for part in parts {
                let entry = node
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry
                    .as_table_mut()
                    .ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not a section")))?;
            }
            node.insert(leaf.to_string(), value);
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("after overrides: {e}")))
    }

    /// Fills every default so the result is self-describing and reruns identically.
    pub fn resolve(mut self, command: Command) -> Result<Self, CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "config is for `{}` but the `{}` subcommand was run",
                    c.name(),
                    command.name()
                )));
            }
        }
        self.command = Some(command);
        let system = *self.system.get_or_insert(command.default_system());
        self.output_dir.get_or_insert_with(|| PathBuf::from("out"));

        let base = match command {
            Command::Planar => IntegratorConfig::adaptive(1e-13, 1e-13),
            _ => IntegratorConfig::default(),
        };
        self.integrator = self.integrator.resolve(base);

        if self.simulate.x0.is_none() {
            self.simulate.x0 = Some(match system {
                Builtin::VdpCascade => {
                    vec![self.cascade.x0[0], self.cascade.x0[1], self.cascade.y0]
                }
                s if s.is_planar() => vec![0.5, 0.0],
                _ => vec![0.0],
            });
        }

        match system {
            Builtin::Ellipse => {
                self.planar.beta.get_or_insert(2.0);
                self.planar.omega.get_or_insert(1.0);
            }
            Builtin::HopfCircle | Builtin::SpiralIn => {
                for (name, v) in [("beta", self.planar.beta), ("omega", self.planar.omega)] {
                    if v.is_some_and(|v| v != 1.0) {
                        return Err(CliError::Config(format!(
                            "planar.{name} is fixed to 1 for {system:?}; use system = \"ellipse\""
                        )));
                    }
                }
                self.planar.beta = Some(1.0);
                self.planar.omega = Some(1.0);
            }
            _ => {}
        }
        if system == Builtin::EsPolynomial && self.es.map.is_none() {
            return Err(CliError::Config(
                "system es_polynomial needs es.map = \"c0 c1 ...\"".into(),
            ));
        }
        if system != Builtin::EsPolynomial && self.es.map.is_some() {
            return Err(CliError::Config(
                "es.map is only used with system = \"es_polynomial\"".into(),
            ));
        }
        Ok(self)
    }

    pub fn command(&self) -> Command {
        self.command.expect("resolved config")
    }

    pub fn system(&self) -> Builtin {
        self.system.expect("resolved config")
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().expect("resolved config")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected_with_location() {
        let err = RunConfig::parse("[es]\nepsilon = 0.1\nepsilonn = 0.2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epsilonn"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let cfg = RunConfig::default()
            .with_overrides(&["es.epsilon=0.002".into(), "system=es_quartic".into(), "seed=7".into()])
            .unwrap();
        assert_eq!(cfg.es.epsilon, 0.002);
        assert_eq!(cfg.system, Some(Builtin::EsQuartic));
        assert_eq!(cfg.seed, 7);
        assert!(RunConfig::default().with_overrides(&["es.nope=1".into()]).is_err());
        assert!(RunConfig::default().with_overrides(&["seed".into()]).is_err());
    }

    #[test]
    fn resolution_is_idempotent() {
        for cmd in [
            Command::Simulate,
            Command::Planar,
            Command::DemoCascade,
            Command::EsSolve,
        ] {
            let once = RunConfig::default().resolve(cmd).unwrap();
            assert_eq!(once.clone().resolve(cmd).unwrap(), once);
        }
    }

    #[test]
    fn command_mismatch_is_a_config_error() {
        let cfg = RunConfig::parse("command = \"planar\"").unwrap();
        assert!(matches!(cfg.resolve(Command::Simulate), Err(CliError::Config(_))));
    }

    #[test]
    fn planar_defaults() {
        let cfg = RunConfig::default().resolve(Command::Planar).unwrap();
        assert_eq!(cfg.integrator.abs_tol, Some(1e-13));
        assert_eq!(cfg.planar.beta, Some(1.0));
        let bad = RunConfig::parse("[planar]\nbeta = 2.0").unwrap();
        assert!(bad.resolve(Command::Planar).is_err());
    }
}
