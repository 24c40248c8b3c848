//! Subcommand orchestration behind the `beamlab` binary.
//!
//! Each subcommand reads a [`RunConfig`], writes its artifacts into the
//! configured output directory and returns a short summary. Errors map onto
//! exit codes through [`exit_code`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::birman::{
    assemble_spectral, expansion_orders, halving_sequence, m_inverse_blowup_order, ExpansionFit, SpectralAssembly,
    Truncation,
};
use crate::config::{Format, RunConfig};
use crate::decay::{
    decay_report, default_cloud, log_spaced_times, slope_fit, sup_kernel_scan, DecayCurve, DecayReport, DecayRun,
    KernelPath, SlopeFit, PERTURBED_SLOPE_TOL,
};
use crate::error::{Error, Result};
use crate::freekernel::Sign;
use crate::quadrature::{build_box_grid, QuadratureGrid};
use crate::resonance::{classify, coupling_scan, ResonanceReport, ScanRoot};
use crate::stone::{
    correction_psi, free_kernel_value, free_propagator_kernel, free_sine_kernel_oracle, gaussian_halfwave_kernel,
    kernel_csv, perturbed_from_table, table_range, CorrectionTable, Mode, PropagatorRequest, QuadratureBudget,
    TABLE_TOL,
};
use crate::{dist, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Classify,
    ScanCoupling,
    FreeCheck,
    Propagate,
    ExpandM,
    DecayReport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::ScanCoupling => "scan-coupling",
            Command::FreeCheck => "free-check",
            Command::Propagate => "propagate",
            Command::ExpandM => "expand-m",
            Command::DecayReport => "decay-report",
        }
    }
}

/// Exit status for an error: 2 for bad input, 3 for a spectral singularity,
/// 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::DegeneratePotential(_) | Error::Json(_) => 2,
        Error::SpectralSingularity { .. } => 3,
        _ => 1,
    }
}

/// What a run produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    /// Kernel samples flagged by the quadrature.
    pub warnings: usize,
    pub lines: Vec<String>,
}

struct Writer<'a> {
    cfg: &'a RunConfig,
    summary: RunSummary,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, format: Format, body: &str) -> Result<()> {
        if !self.cfg.wants(format) {
            return Ok(());
        }
        std::fs::create_dir_all(&self.cfg.output.dir)?;
        let path = self.cfg.output.dir.join(name);
        std::fs::write(&path, body)?;
        self.summary.artifacts.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, Format::Json, &text)
    }

    fn say(&mut self, line: String) {
        self.summary.lines.push(line);
    }
}

fn grid_of(cfg: &RunConfig) -> Result<QuadratureGrid> {
    build_box_grid(cfg.grid.radius, cfg.grid.order)
}

fn assembly(cfg: &RunConfig) -> Result<(QuadratureGrid, SpectralAssembly)> {
    let grid = grid_of(cfg)?;
    let sa = assemble_spectral(&cfg.potential, &grid)?;
    Ok((grid, sa))
}

/// Run one subcommand.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let mut w = Writer { cfg, summary: RunSummary::default() };
    match cmd {
        Command::Classify => {
            let (_, sa) = assembly(cfg)?;
            let report = classify(&sa, cfg.spectral.rank_tol)?;
            w.say(format!("classification: {:?} (ranks {:?})", report.classification, report.ranks));
            for warning in &report.warnings {
                w.say(format!("warning: {warning}"));
            }
            w.json("classify.json", &report)?;
        }
        Command::ScanCoupling => {
            let grid = grid_of(cfg)?;
            let s = &cfg.scan;
            let scan = coupling_scan(&cfg.potential, &grid, s.c_min, s.c_max, s.steps, cfg.spectral.rank_tol)?;
            w.say(format!("{} samples, {} roots", scan.samples.len(), scan.roots.len()));
            for r in &scan.roots {
                w.say(format!("root c* = {:.12} (sigma ratio {:e})", r.coupling, r.sigma_ratio));
            }
            w.write("scan.csv", Format::Csv, &scan.to_csv())?;
            w.json("scan_roots.json", &ScanRoots { roots: scan.roots.clone() })?;
        }
        Command::FreeCheck => {
            let report = free_check(&cfg.propagator.budget(), cfg.cloud_radius())?;
            w.say(format!(
                "halfwave max rel error {:.3e}; cosine slope {:.4}; sine slope {:.4}; pass = {}",
                report.halfwave_max_rel_error, report.cosine_slope.slope, report.sine_slope.slope, report.pass
            ));
            w.json("free_check.json", &report)?;
        }
        Command::Propagate => {
            let p = &cfg.propagator;
            let times = log_spaced_times(p.t_min, p.t_max, p.t_points)?;
            let mut req = PropagatorRequest::new(p.mode(), times, default_cloud(cfg.cloud_radius())?);
            req.budget = p.budget();
            req.lambda0 = cfg.spectral.lambda0;
            let (samples, provenance) = if p.free {
                (free_propagator_kernel(&req)?, "free")
            } else {
                let (_, sa) = assembly(cfg)?;
                let report = classify(&sa, cfg.spectral.rank_tol)?;
                let table = build_table(&sa, &req)?;
                (perturbed_from_table(&req, &table, report.classification)?, "perturbed")
            };
            let curve = DecayCurve::from_samples(req.mode, &samples, provenance)?;
            w.summary.warnings += curve.total_warnings();
            if curve.slope.is_finite() {
                w.say(format!("{} kernel samples; slope {:.4} ± {:.4}", samples.len(), curve.slope, curve.stderr));
            } else {
                w.say(format!("{} kernel samples; too few times for a slope fit", samples.len()));
            }
            w.write("kernels.csv", Format::Csv, &kernel_csv(&samples))?;
            w.write("decay_curve.csv", Format::Csv, &curve.to_csv())?;
            w.json("decay_curve.json", &curve)?;
        }
        Command::ExpandM => {
            let (_, sa) = assembly(cfg)?;
            let report = expand_m(&sa, cfg.spectral.expansion_start, cfg.spectral.expansion_points)?;
            w.say(format!(
                "leading order {:.3}, with G1 {:.3}, blow-up {:.3}",
                report.leading_plus.order, report.with_g1_plus.order, report.blowup_order
            ));
            w.json("expand_m.json", &report)?;
        }
        Command::DecayReport => {
            let (_, sa) = assembly(cfg)?;
            let resonance = classify(&sa, cfg.spectral.rank_tol)?;
            let p = &cfg.propagator;
            let times = log_spaced_times(p.t_min, p.t_max, p.t_points)?;
            let run = DecayRun {
                sa: &sa,
                report: &resonance,
                modes: vec![Mode::Cosine, Mode::SineOverSqrt],
                times,
                window: (p.t_min, p.t_max),
                cloud: default_cloud(cfg.cloud_radius())?,
                budget: p.budget(),
                lambda0: cfg.spectral.lambda0,
                tolerance: PERTURBED_SLOPE_TOL,
            };
            let report = decay_report(&run)?;
            w.summary.warnings += report.warnings;
            for e in &report.entries {
                w.say(format!(
                    "{}: slope {:.4} ± {:.4}, expected {}, pass = {}",
                    e.mode.label(),
                    e.slope,
                    e.stderr,
                    e.expected,
                    e.pass
                ));
            }
            for c in &report.curves {
                w.write(&format!("decay_{}.csv", c.mode.label()), Format::Csv, &c.to_csv())?;
            }
            w.json("decay_report.json", &CombinedReport { resonance: &resonance, decay: &report })?;
        }
    }
    if w.summary.warnings > 0 {
        let n = w.summary.warnings;
        w.say(format!("{n} kernel samples carry accuracy warnings"));
    }
    Ok(w.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRoots {
    pub roots: Vec<ScanRoot>,
}

#[derive(Serialize)]
struct CombinedReport<'a> {
    resonance: &'a ResonanceReport,
    decay: &'a DecayReport,
}

fn build_table(sa: &SpectralAssembly, req: &PropagatorRequest) -> Result<CorrectionTable> {
    let t_min = req.times.iter().fold(f64::INFINITY, |m, t| m.min(t.abs()));
    let psi = req.pairs.iter().fold(0.0f64, |m, (x, y)| m.max(correction_psi(sa, x, y)));
    CorrectionTable::build(sa, &req.pairs, table_range(t_min, psi)?, TABLE_TOL)
}

/// Expansion orders of `M^±(λ)` and the blow-up order of `M⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandReport {
    pub lambdas: Vec<f64>,
    pub leading_plus: ExpansionFit,
    pub with_g1_plus: ExpansionFit,
    pub leading_minus: ExpansionFit,
    pub with_g1_minus: ExpansionFit,
    pub blowup_order: f64,
}

pub fn expand_m(sa: &SpectralAssembly, start: f64, points: usize) -> Result<ExpandReport> {
    let lambdas = halving_sequence(start, points);
    Ok(ExpandReport {
        leading_plus: expansion_orders(sa, Sign::Plus, Truncation::Leading, &lambdas)?,
        with_g1_plus: expansion_orders(sa, Sign::Plus, Truncation::WithG1, &lambdas)?,
        leading_minus: expansion_orders(sa, Sign::Minus, Truncation::Leading, &lambdas)?,
        with_g1_minus: expansion_orders(sa, Sign::Minus, Truncation::WithG1, &lambdas)?,
        blowup_order: m_inverse_blowup_order(sa, Sign::Plus, &lambdas)?,
        lambdas,
    })
}

/// One oracle comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSample {
    pub t: f64,
    pub x: Point,
    pub y: Point,
    pub stone: num_complex::Complex64,
    pub exact: num_complex::Complex64,
    pub rel_error: f64,
}

/// Free propagator against its closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeCheckReport {
    pub halfwave: Vec<OracleSample>,
    pub halfwave_max_rel_error: f64,
    pub sine_max_rel_error: f64,
    pub sine_diagonal_max_rel_error: f64,
    pub cosine_slope: SlopeFit,
    pub sine_slope: SlopeFit,
    pub pass: bool,
}

/// Ten deterministic `(t, x, y)` with `t ∈ [1, 100]` and points in the ball
/// of radius `reach`.
pub fn oracle_points(reach: f64) -> Result<Vec<(f64, Point, Point)>> {
    let cloud = default_cloud(reach)?;
    Ok((0..10)
        .map(|k| {
            // Golden-ratio sequence for the exponent of t.
            let u = (0.5 + k as f64 * 0.618_033_988_749_894_9).fract();
            let (x, y) = cloud[5 + k];
            (100f64.powf(u), x, y)
        })
        .collect())
}

pub fn free_check(budget: &QuadratureBudget, reach: f64) -> Result<FreeCheckReport> {
    let mut halfwave = Vec::new();
    let mut sine_err = 0.0f64;
    for (t, x, y) in oracle_points(reach)? {
        let v = free_kernel_value(Mode::Halfwave { alpha: 0.0 }, t, &x, &y, budget)?;
        let exact = gaussian_halfwave_kernel(t, dist(&x, &y));
        halfwave.push(OracleSample {
            t,
            x,
            y,
            stone: v.value,
            exact,
            rel_error: (v.value - exact).norm() / exact.norm(),
        });
        let s = free_kernel_value(Mode::SineOverSqrt, t, &x, &y, budget)?.value.re;
        let e = free_sine_kernel_oracle(t, dist(&x, &y));
        sine_err = sine_err.max((s - e).abs() / e.abs());
    }
    let times = log_spaced_times(10.0, 1000.0, 8)?;
    let mut diag = 0.0f64;
    for &t in &times {
        let s = free_kernel_value(Mode::SineOverSqrt, t, &[0.0; 3], &[0.0; 3], budget)?.value.re;
        let e = (std::f64::consts::PI / (2.0 * t)).sqrt() / (4.0 * std::f64::consts::PI.powi(2));
        diag = diag.max((s - e).abs() / e);
    }
    let cloud = default_cloud(reach)?;
    let mut slopes = Vec::new();
    for mode in [Mode::Cosine, Mode::SineOverSqrt] {
        let mut req = PropagatorRequest::new(mode, times.clone(), cloud.clone());
        req.budget = *budget;
        let curve = sup_kernel_scan(&req, &KernelPath::Free)?;
        slopes.push(slope_fit(&curve, (10.0, 1000.0))?);
    }
    let max_hw = halfwave.iter().fold(0.0f64, |m, s| m.max(s.rel_error));
    let pass =
        max_hw < 1e-3 && (slopes[0].slope + 1.5).abs() <= 0.05 && (slopes[1].slope + 0.5).abs() <= 0.05 && diag < 1e-2;
    Ok(FreeCheckReport {
        halfwave,
        halfwave_max_rel_error: max_hw,
        sine_max_rel_error: sine_err,
        sine_diagonal_max_rel_error: diag,
        cosine_slope: slopes[0],
        sine_slope: slopes[1],
        pass,
    })
}

/// Parse `QBL_THREADS`: a positive thread cap, or `None` when unset.
pub fn thread_cap(value: Option<&str>) -> Result<Option<usize>> {
    match value {
        None => Ok(None),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("QBL_THREADS must be a positive integer, got `{s}`"))),
        },
    }
}

/// Resolve the configuration: the file if given, else defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::DegeneratePotential("x".into())), 2);
        assert_eq!(exit_code(&Error::SpectralSingularity { lambda: 0.1, sigma_min: 0.0 }), 3);
        assert_eq!(exit_code(&Error::DegenerateOperator), 1);
    }

    #[test]
    fn thread_cap_parsing() {
        assert_eq!(thread_cap(None).unwrap(), None);
        assert_eq!(thread_cap(Some("4")).unwrap(), Some(4));
        assert!(thread_cap(Some("0")).is_err());
        assert!(thread_cap(Some("many")).is_err());
    }

    #[test]
    fn oracle_points_cover_time_range() {
        let pts = oracle_points(2.0).unwrap();
        assert_eq!(pts.len(), 10);
        assert!(pts.iter().all(|(t, _, _)| (1.0..=100.0).contains(t)));
        let (lo, hi) = pts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), (t, _, _)| (a.min(*t), b.max(*t)));
        assert!(lo < 3.0 && hi > 30.0);
    }
}
