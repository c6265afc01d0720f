//! Run configuration: a TOML file, command-line overrides and the output
//! directory override `SPECTRAL_FORGE_OUT`, merged into one [`RunConfig`].

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "SPECTRAL_FORGE_OUT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: missing required field `{field}`")]
    Missing { origin: String, field: String },
    #[error("{origin}: field `{field}`: {reason}")]
    Invalid { origin: String, field: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    VerifyBlocks,
    BuildSparse,
    BuildAlmostInteger,
    BuildFlc,
    CheckCompleteness,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::VerifyBlocks => "verify-blocks",
            CommandKind::BuildSparse => "build-sparse",
            CommandKind::BuildAlmostInteger => "build-almost-integer",
            CommandKind::BuildFlc => "build-flc",
            CommandKind::CheckCompleteness => "check-completeness",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaParams {
    pub l: u32,
    pub h: f64,
    pub h1: f64,
}

/// `verify-blocks`: the building-block inequalities and the seeded
/// difference-operator battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlocksParams {
    /// Widths for the triangle and trapezoid inequalities.
    pub hs: Vec<f64>,
    pub ps: Vec<f64>,
    /// Widths for the properties of `φ`.
    pub phi_hs: Vec<f64>,
    pub sigma: Vec<SigmaParams>,
    /// Random polynomials in the difference-operator battery.
    pub trials: usize,
    pub max_terms: usize,
    pub max_alpha: f64,
    pub max_k: u32,
    pub grid_points: usize,
    /// Random smooth functions for the difference bound on three intervals.
    pub bound_trials: usize,
}

impl Default for BlocksParams {
    fn default() -> Self {
        BlocksParams {
            hs: vec![0.01, 0.05, 0.1, 0.2, 0.4],
            ps: vec![1.0, 1.25, 1.5, 2.0, 3.0],
            phi_hs: vec![0.01, 0.05, 0.15],
            sigma: vec![SigmaParams { l: 1, h: 0.5, h1: 0.7 }, SigmaParams { l: 2, h: 0.4, h1: 0.6 }],
            trials: 200,
            max_terms: 12,
            max_alpha: 0.4,
            max_k: 4,
            grid_points: 64,
            bound_trials: 4,
        }
    }
}

/// `build-sparse`: the sparse driver with `ε_n = 1/log(n + eps_shift)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseParams {
    pub steps: usize,
    pub eps_shift: f64,
    pub lambda0: f64,
    pub h_terms: usize,
}

impl Default for SparseParams {
    fn default() -> Self {
        SparseParams { steps: 3, eps_shift: 3.0, lambda0: 1.0, h_terms: 3 }
    }
}

/// `build-almost-integer`: with `steps = 0` a single `(Γ, Q)` construction
/// for `v` a sum of bumps on `s` intervals, otherwise the outer driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmostParams {
    pub alpha: String,
    pub s: usize,
    pub eps: f64,
    pub p: f64,
    pub n: u64,
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
    pub steps: usize,
    pub max_n: u64,
    pub max_partial: usize,
    pub max_grid_log2: u32,
}

impl Default for AlmostParams {
    fn default() -> Self {
        AlmostParams {
            alpha: "0.3/n".into(),
            s: 1,
            eps: 0.3,
            p: 2.0,
            n: 10,
            h: 0.3,
            h1: 0.6,
            h2: 0.9,
            steps: 0,
            max_n: 256,
            max_partial: 2048,
            max_grid_log2: 23,
        }
    }
}

/// `build-flc`: one two-gap polynomial for a restricted Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlcParams {
    pub a: f64,
    pub l: u32,
    pub h: f64,
    pub eps: f64,
    /// The target is `e^{-t²/width²}` on the Landau set.
    pub width: f64,
    pub max_terms: usize,
}

impl Default for FlcParams {
    fn default() -> Self {
        FlcParams { a: std::f64::consts::SQRT_2, l: 1, h: 0.6, eps: 0.1, width: 1.0, max_terms: 128 }
    }
}

/// `check-completeness`: Gram residuals of integers and of `n + α_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletenessParams {
    pub l: u32,
    pub h: f64,
    pub alpha: String,
    pub ms: Vec<usize>,
}

impl Default for CompletenessParams {
    fn default() -> Self {
        CompletenessParams { l: 1, h: 0.8, alpha: "0.3/n".into(), ms: vec![8, 16, 32, 64, 128, 256] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit")]
    pub tolerance_scale: f64,
    #[serde(default)]
    pub blocks: BlocksParams,
    #[serde(default)]
    pub sparse: SparseParams,
    #[serde(default)]
    pub almost_integer: AlmostParams,
    #[serde(default)]
    pub flc: FlcParams,
    #[serde(default)]
    pub completeness: CompletenessParams,
}

fn unit() -> f64 {
    1.0
}

/// Values layered over the file: command-line flags, then the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<CommandKind>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tolerance_scale: Option<f64>,
    /// `(section, key, value)` triples for command parameters.
    pub params: Vec<(&'static str, &'static str, Value)>,
}

impl Overrides {
    pub fn param(&mut self, section: &'static str, key: &'static str, value: Option<impl Into<Value>>) {
        if let Some(v) = value {
            self.params.push((section, key, v.into()));
        }
    }
}

impl RunConfig {
    /// A configuration from TOML text; `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let table = parse_table(text, origin)?;
        Self::from_table(table, origin)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Merges an optional file, the overrides and the environment, then
    /// validates.
    pub fn resolve(path: Option<&Path>, over: &Overrides, env_out: Option<PathBuf>) -> Result<Self, ConfigError> {
        let (mut table, origin) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.into(), source })?;
                (parse_table(&text, &p.display().to_string())?, p.display().to_string())
            }
            None => (Table::new(), "command line".to_string()),
        };
        if let Some(c) = over.command {
            table.insert("command".into(), Value::String(c.name().into()));
        }
        if let Some(o) = over.out.as_ref().or(env_out.as_ref()) {
            table.insert("out".into(), Value::String(o.display().to_string()));
        }
        if let Some(s) = over.seed {
            let v = i64::try_from(s).map_err(|_| ConfigError::Invalid {
                origin: origin.clone(),
                field: "seed".into(),
                reason: format!("{s} exceeds the largest storable seed {}", i64::MAX),
            })?;
            table.insert("seed".into(), Value::Integer(v));
        }
        if let Some(t) = over.tolerance_scale {
            table.insert("tolerance_scale".into(), Value::Float(t));
        }
        for (section, key, value) in &over.params {
            let entry = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(t) => {
                    t.insert(key.to_string(), value.clone());
                }
                _ => {
                    return Err(ConfigError::Invalid {
                        origin,
                        field: section.to_string(),
                        reason: "expected a table".into(),
                    })
                }
            }
        }
        Self::from_table(table, &origin)
    }

    fn from_table(table: Table, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| classify(e, origin))?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    fn validate(&self, origin: &str) -> Result<(), ConfigError> {
        let bad = |field: &str, reason: String| {
            Err(ConfigError::Invalid { origin: origin.into(), field: field.into(), reason })
        };
        if !(self.tolerance_scale > 0.0 && self.tolerance_scale.is_finite()) {
            return bad("tolerance_scale", format!("{} must be positive", self.tolerance_scale));
        }
        if self.out.as_os_str().is_empty() {
            return bad("out", "must not be empty".into());
        }
        let unit_interval = |x: f64| x > 0.0 && x < 1.0;
        match self.command {
            CommandKind::VerifyBlocks => {
                let b = &self.blocks;
                if let Some(p) = b.ps.iter().find(|p| !(**p >= 1.0 && p.is_finite())) {
                    return bad("blocks.ps", format!("exponent {p} must be at least 1"));
                }
                if let Some(h) = b.hs.iter().chain(&b.phi_hs).find(|h| !(**h > 0.0 && **h <= 0.5)) {
                    return bad("blocks.hs", format!("width {h} must lie in (0, 1/2]"));
                }
                if !(b.max_alpha > 0.0 && b.max_alpha < 0.5) {
                    return bad("blocks.max_alpha", format!("{} must lie in (0, 1/2)", b.max_alpha));
                }
                if b.max_terms == 0 || b.grid_points == 0 {
                    return bad("blocks.max_terms", "term and grid counts must be positive".into());
                }
            }
            CommandKind::BuildSparse => {
                let s = &self.sparse;
                if s.steps == 0 {
                    return bad("sparse.steps", "must be positive".into());
                }
                if !(s.eps_shift > 1.0) {
                    return bad("sparse.eps_shift", format!("{} must exceed 1", s.eps_shift));
                }
            }
            CommandKind::BuildAlmostInteger => {
                let a = &self.almost_integer;
                if let Err(e) = a.alpha.parse::<spectral_forge_core::almost_integer::AlphaSeq>() {
                    return bad("almost_integer.alpha", e.to_string());
                }
                if !(1..=3).contains(&a.s) {
                    return bad("almost_integer.s", format!("{} must lie in 1..=3", a.s));
                }
                if !(a.eps > 0.0) {
                    return bad("almost_integer.eps", format!("{} must be positive", a.eps));
                }
                if !(a.p >= 1.0) {
                    return bad("almost_integer.p", format!("{} must be at least 1", a.p));
                }
                if !(unit_interval(a.h) && a.h < a.h1 && a.h1 < a.h2 && a.h2 < 1.0) {
                    return bad("almost_integer.h", "widths must satisfy 0 < h < h1 < h2 < 1".into());
                }
                if a.steps > 0 && a.s % 2 == 0 {
                    return bad("almost_integer.s", format!("the driver needs an odd s, got {}", a.s));
                }
            }
            CommandKind::BuildFlc => {
                let f = &self.flc;
                if !(f.a > 0.0 && f.a.is_finite()) {
                    return bad("flc.a", format!("{} must be positive", f.a));
                }
                if !unit_interval(f.h) {
                    return bad("flc.h", format!("{} must lie in (0, 1)", f.h));
                }
                if !(f.eps > 0.0) || !(f.width > 0.0) {
                    return bad("flc.eps", "eps and width must be positive".into());
                }
            }
            CommandKind::CheckCompleteness => {
                let c = &self.completeness;
                if !unit_interval(c.h) {
                    return bad("completeness.h", format!("{} must lie in (0, 1)", c.h));
                }
                if let Err(e) = c.alpha.parse::<spectral_forge_core::almost_integer::AlphaSeq>() {
                    return bad("completeness.alpha", e.to_string());
                }
                if c.ms.is_empty() || c.ms.contains(&0) {
                    return bad("completeness.ms", "truncations must be positive and nonempty".into());
                }
            }
        }
        Ok(())
    }

    /// The parameter section of the selected command, for the report.
    pub fn params_value(&self) -> serde_json::Value {
        let v = match self.command {
            CommandKind::VerifyBlocks => serde_json::to_value(&self.blocks),
            CommandKind::BuildSparse => serde_json::to_value(&self.sparse),
            CommandKind::BuildAlmostInteger => serde_json::to_value(&self.almost_integer),
            CommandKind::BuildFlc => serde_json::to_value(&self.flc),
            CommandKind::CheckCompleteness => serde_json::to_value(&self.completeness),
        };
        v.expect("parameter sections serialize")
    }
}

fn parse_table(text: &str, origin: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| ConfigError::Parse { origin: origin.into(), message: e.to_string() })
}

fn classify(e: toml::de::Error, origin: &str) -> ConfigError {
    let message = e.message().to_string();
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            return ConfigError::Missing { origin: origin.into(), field: field.into() };
        }
    }
    ConfigError::Parse { origin: origin.into(), message: e.to_string().trim_end().to_string() }
}
