//! Run configuration: a single versioned JSON document.
//!
//! Every section is optional and falls back to the defaults below; unknown
//! keys are rejected so that typos surface as errors rather than silently
//! ignored settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::stone::{Mode, QuadratureBudget};

/// The only configuration schema version understood.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(default)]
    pub potential: Potential,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub propagator: PropagatorConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Half side of the box `[-R, R]³`.
    pub radius: f64,
    /// Gauss–Legendre nodes per axis.
    pub order: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { radius: 4.0, order: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub lambda0: f64,
    pub rank_tol: f64,
    /// Largest `λ` of the halving sequence used by `expand-m`.
    pub expansion_start: f64,
    pub expansion_points: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { lambda0: crate::birman::DEFAULT_LAMBDA0, rank_tol: 1e-8, expansion_start: 0.05, expansion_points: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Cosine,
    SineOverSqrt,
    Halfwave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagatorConfig {
    pub mode: ModeName,
    /// Exponent of `H^{α/2}` for the halfwave mode.
    pub alpha: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    pub n_min: usize,
    pub nodes_per_cycle: f64,
    pub n_cap: usize,
    pub tail_eps: f64,
    /// Use the free operator regardless of the potential.
    pub free: bool,
    /// Radius of the sample cloud; defaults to half the grid radius.
    pub cloud_radius: Option<f64>,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        let b = QuadratureBudget::default();
        Self {
            mode: ModeName::Cosine,
            alpha: 0.0,
            t_min: 10.0,
            t_max: 300.0,
            t_points: 10,
            n_min: b.n_min,
            nodes_per_cycle: b.nodes_per_cycle,
            n_cap: b.n_cap,
            tail_eps: b.tail_eps,
            free: false,
            cloud_radius: None,
        }
    }
}

impl PropagatorConfig {
    pub fn mode(&self) -> Mode {
        match self.mode {
            ModeName::Cosine => Mode::Cosine,
            ModeName::SineOverSqrt => Mode::SineOverSqrt,
            ModeName::Halfwave => Mode::Halfwave { alpha: self.alpha },
        }
    }

    pub fn budget(&self) -> QuadratureBudget {
        QuadratureBudget {
            n_min: self.n_min,
            nodes_per_cycle: self.nodes_per_cycle,
            n_cap: self.n_cap,
            tail_eps: self.tail_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub c_min: f64,
    pub c_max: f64,
    pub steps: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { c_min: 0.5, c_max: 40.0, steps: 24 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec![Format::Json, Format::Csv] }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            potential: Potential::default(),
            grid: GridConfig::default(),
            spectral: SpectralConfig::default(),
            propagator: PropagatorConfig::default(),
            scan: ScanConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn bad(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    /// Parse and validate. Syntax and schema errors carry serde's
    /// line/column position.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(bad("schema", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        self.potential.validate().map_err(|e| bad("potential", e))?;
        let g = &self.grid;
        if !(g.radius > 0.0 && g.radius <= 64.0) {
            return Err(bad("grid.radius", "must lie in (0, 64]"));
        }
        if !(2..=16).contains(&g.order) {
            return Err(bad("grid.order", "must lie in [2, 16]"));
        }
        let s = &self.spectral;
        if !(s.lambda0 > 0.0 && s.lambda0 <= 1.0) {
            return Err(bad("spectral.lambda0", "must lie in (0, 1]"));
        }
        if !(s.rank_tol > 0.0 && s.rank_tol <= 1e-2) {
            return Err(bad("spectral.rank_tol", "must lie in (0, 1e-2]"));
        }
        if !(s.expansion_start > 0.0 && s.expansion_start <= 1.0) {
            return Err(bad("spectral.expansion_start", "must lie in (0, 1]"));
        }
        if !(3..=30).contains(&s.expansion_points) {
            return Err(bad("spectral.expansion_points", "must lie in [3, 30]"));
        }
        let p = &self.propagator;
        if p.mode == ModeName::Halfwave && !(p.alpha > -1.5 && p.alpha <= 0.0) {
            return Err(bad("propagator.alpha", "must lie in (-3/2, 0]"));
        }
        if !(p.t_min > 0.0 && p.t_max > p.t_min && p.t_max <= 1e6) {
            return Err(bad("propagator.t_min/t_max", "need 0 < t_min < t_max <= 1e6"));
        }
        if !(2..=400).contains(&p.t_points) {
            return Err(bad("propagator.t_points", "must lie in [2, 400]"));
        }
        if !(1..=1 << 20).contains(&p.n_min) || !(p.n_min..=1 << 20).contains(&p.n_cap) {
            return Err(bad("propagator.n_min/n_cap", "need 1 <= n_min <= n_cap <= 2^20"));
        }
        if !(p.nodes_per_cycle >= 1.0 && p.nodes_per_cycle <= 256.0) {
            return Err(bad("propagator.nodes_per_cycle", "must lie in [1, 256]"));
        }
        if !(p.tail_eps > 0.0 && p.tail_eps <= 1e-2) {
            return Err(bad("propagator.tail_eps", "must lie in (0, 1e-2]"));
        }
        if let Some(r) = p.cloud_radius {
            if !(r > 0.0 && r <= g.radius) {
                return Err(bad("propagator.cloud_radius", "must lie in (0, grid.radius]"));
            }
        }
        let c = &self.scan;
        if !(c.c_min > 0.0 && c.c_max > c.c_min && c.c_max.is_finite()) {
            return Err(bad("scan.c_min/c_max", "need 0 < c_min < c_max"));
        }
        if !(2..=10_000).contains(&c.steps) {
            return Err(bad("scan.steps", "must lie in [2, 10000]"));
        }
        if self.output.formats.is_empty() {
            return Err(bad("output.formats", "at least one format is required"));
        }
        Ok(())
    }

    pub fn cloud_radius(&self) -> f64 {
        self.propagator.cloud_radius.unwrap_or(self.grid.radius / 2.0)
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}
