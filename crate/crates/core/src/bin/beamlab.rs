use std::path::PathBuf;
use std::process::ExitCode;

use beamlab::cli::{exit_code, load_config, run, thread_cap, Command};
use beamlab::config::RunConfig;
use clap::{Parser, Subcommand};

/// Zero-energy resonances and wave propagators of H = Δ² + V in three dimensions.
#[derive(Parser)]
#[command(name = "beamlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON run configuration (`"schema": 1`); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Coupling multiplier of the potential.
    #[arg(long, global = true)]
    coupling: Option<f64>,

    /// Half side of the grid box.
    #[arg(long, global = true)]
    radius: Option<f64>,

    /// Gauss–Legendre nodes per axis.
    #[arg(long, global = true)]
    order: Option<usize>,

    #[arg(long, global = true)]
    t_min: Option<f64>,

    #[arg(long, global = true)]
    t_max: Option<f64>,

    #[arg(long, global = true)]
    t_points: Option<usize>,

    /// Propagate with the free operator.
    #[arg(long, global = true)]
    free: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Classify the zero-energy threshold (JSON report).
    Classify,
    /// Scan the coupling for resonant values (CSV + roots).
    ScanCoupling,
    /// Compare the free propagator with its closed forms.
    FreeCheck,
    /// Kernel samples and the sup-norm decay curve.
    Propagate,
    /// Low-energy expansion orders of M(λ).
    ExpandM,
    /// Classification plus fitted decay exponents.
    DecayReport,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Classify => Command::Classify,
            Cmd::ScanCoupling => Command::ScanCoupling,
            Cmd::FreeCheck => Command::FreeCheck,
            Cmd::Propagate => Command::Propagate,
            Cmd::ExpandM => Command::ExpandM,
            Cmd::DecayReport => Command::DecayReport,
        }
    }
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(d) = &cli.out {
        cfg.output.dir = d.clone();
    }
    if let Some(c) = cli.coupling {
        cfg.potential.coupling = c;
    }
    if let Some(r) = cli.radius {
        cfg.grid.radius = r;
    }
    if let Some(o) = cli.order {
        cfg.grid.order = o;
    }
    if let Some(t) = cli.t_min {
        cfg.propagator.t_min = t;
    }
    if let Some(t) = cli.t_max {
        cfg.propagator.t_max = t;
    }
    if let Some(n) = cli.t_points {
        cfg.propagator.t_points = n;
    }
    if cli.free {
        cfg.propagator.free = true;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        if let Some(n) = thread_cap(std::env::var("QBL_THREADS").ok().as_deref())? {
            // Only fails if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        let mut cfg = load_config(cli.config.as_deref())?;
        apply_overrides(&cli, &mut cfg);
        cfg.validate()?;
        run(cli.command.into(), &cfg)
    })();
    match result {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            for a in &summary.artifacts {
                println!("wrote {}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("beamlab: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
