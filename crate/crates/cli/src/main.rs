use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use relaxplast_cli::{envelope, fem1d, plate, point3d, ConfigError, EnergyKind, Outcome, RunOptions, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "relaxplast", version, about = "Relaxed condensed energies: envelope checks and finite-element experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Energy {
    Condensed,
    Relaxed,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: out/<command>]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the closed-form envelope with the numerical convex hull.
    Envelope {
        #[command(flatten)]
        common: Common,
    },
    /// Bar experiments with the condensed and relaxed energies.
    Fem1d {
        #[command(flatten)]
        common: Common,
        /// Run one energy only.
        #[arg(long, value_enum)]
        energy: Option<Energy>,
    },
    /// Evaluate the 3D relaxed law along a strain path.
    Point3d {
        #[command(flatten)]
        common: Common,
    },
    /// Plane-strain plate with a hole on a coarse and a refined mesh.
    Plate {
        #[command(flatten)]
        common: Common,
        /// Coarse refinement level; the fine mesh is one level above.
        #[arg(long)]
        refine: Option<u32>,
        #[arg(long, value_enum, default_value = "relaxed")]
        energy: Energy,
    },
}

fn options(name: &str, c: Common, refine: Option<u32>, energy: Option<Energy>) -> RunOptions {
    RunOptions {
        config: c.config,
        out: c.out.unwrap_or_else(|| PathBuf::from("out").join(name)),
        seed: c.seed,
        refine,
        energy: energy.map(|e| match e {
            Energy::Condensed => EnergyKind::Condensed,
            Energy::Relaxed => EnergyKind::Relaxed,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors count as configuration errors
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Envelope { common } => envelope::run(&options("envelope", common, None, None)),
        Command::Fem1d { common, energy } => fem1d::run(&options("fem1d", common, None, energy)),
        Command::Point3d { common } => point3d::run(&options("point3d", common, None, None)),
        Command::Plate { common, refine, energy } => plate::run(&options("plate", common, refine, Some(energy))),
    };
    let code = match result {
        Ok(Outcome::Pass) => 0,
        Ok(o) => o.exit_code(),
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    ExitCode::from(code as u8)
}
