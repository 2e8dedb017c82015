//! Batch runner behind the `relaxplast` binary.
//!
//! Each command reads an optional JSON config (defaults otherwise), writes
//! CSV and JSON artifacts into the output directory and returns an
//! [`Outcome`] that maps onto the process exit code.

pub mod config;
pub mod envelope;
pub mod fem1d;
pub mod output;
pub mod plate;
pub mod point3d;

use std::path::PathBuf;

pub use config::ConfigError;
pub use relaxplast::fem1d::EnergyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    ToleranceFailure,
    ConvergenceFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::ToleranceFailure => 2,
            Outcome::ConvergenceFailure => 3,
        }
    }

    fn from_checks(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::ToleranceFailure
        }
    }
}

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 4;

/// Command-line options shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub refine: Option<u32>,
    pub energy: Option<EnergyKind>,
}

fn prepare(opts: &RunOptions) -> anyhow::Result<()> {
    std::fs::create_dir_all(&opts.out)
        .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", opts.out.display()))
}
