//! Batch runner for interview-market campaigns.

pub mod campaign;
pub mod grid;
pub mod presets;

use std::path::PathBuf;

use clap::Parser;
use thiserror::Error;

use interview_match::market::ConfigError;

pub use campaign::{run_campaign, Campaign, CampaignReport};
pub use presets::Preset;

pub const EXIT_OK: u8 = 0;
pub const EXIT_AUDIT: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bad config grid: {0}")]
    Grid(String),
    #[error("bad flag: {0}")]
    Flag(String),
    #[error("market generation failed: {0}")]
    Generation(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Parser)]
#[command(name = "interview-match", version, about = "Seeded Monte Carlo campaigns for interview matching markets")]
pub struct Args {
    /// JSON config; array-valued fields are crossed into a grid.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Overrides every config's seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Overrides every config's run count.
    #[arg(long, value_name = "N")]
    pub runs: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Audit a grid of tiny markets (or the given config) and write nothing.
    #[arg(long)]
    pub verify_only: bool,
    /// Fraction of runs that get double-cut dominance audits.
    #[arg(long, value_name = "RATE", default_value_t = 0.05)]
    pub audit_sample: f64,
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub group_size: usize,
    /// Focal doctors per config for a deviation report (0 = none).
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub deviations: usize,
}

const VERIFY_RUNS: usize = 20;

impl Args {
    pub fn campaign(&self) -> Result<Campaign, CliError> {
        if !(0.0..=1.0).contains(&self.audit_sample) {
            return Err(CliError::Flag(format!("--audit-sample {} is outside [0, 1]", self.audit_sample)));
        }
        if self.group_size == 0 {
            return Err(CliError::Flag("--group-size must be at least 1".into()));
        }
        let mut configs = match (&self.config, self.preset) {
            (Some(path), _) => grid::expand(&std::fs::read_to_string(path).map_err(ConfigError::from)?)?,
            (None, Some(p)) => p.configs(),
            (None, None) if self.verify_only => presets::verify_grid(VERIFY_RUNS),
            (None, None) => return Err(CliError::Flag("one of --config, --preset or --verify-only is required".into())),
        };
        for c in &mut configs {
            if let Some(seed) = self.seed {
                c.seed = seed;
            }
            if let Some(runs) = self.runs {
                c.runs = runs;
            }
            c.validate()?;
        }
        Ok(Campaign {
            configs,
            out: (!self.verify_only).then(|| self.out.clone()),
            group_size: self.group_size,
            audit_sample: self.audit_sample,
            deviations: self.deviations,
            verify_only: self.verify_only,
        })
    }
}

/// Runs the campaign described by `args`, prints the summary, and returns the exit code.
pub fn run(args: &Args) -> u8 {
    let campaign = match args.campaign() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run_campaign(&campaign) {
        Ok(report) => {
            print!("{}", report.summary());
            if report.passed() {
                EXIT_OK
            } else {
                for f in &report.failures {
                    eprintln!("audit failure: config {} run {} check {}", f.config, f.run, f.check);
                }
                EXIT_AUDIT
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let a = Args::try_parse_from(["x", "--preset", "paper-500", "--seed", "9", "--runs", "3", "--group-size", "20"]).unwrap();
        let c = a.campaign().unwrap();
        assert_eq!(c.configs.len(), 2);
        assert!(c.configs.iter().all(|c| c.seed == 9 && c.runs == 3));
        assert_eq!(c.group_size, 20);
    }

    #[test]
    fn config_and_preset_conflict() {
        assert!(Args::try_parse_from(["x", "--preset", "school", "--config", "a.json"]).is_err());
    }

    #[test]
    fn bad_rate_is_rejected() {
        let a = Args::try_parse_from(["x", "--preset", "school", "--audit-sample", "1.5"]).unwrap();
        assert!(matches!(a.campaign(), Err(CliError::Flag(_))));
    }

    #[test]
    fn nothing_to_run() {
        let a = Args::try_parse_from(["x"]).unwrap();
        assert_eq!(run(&a), EXIT_CONFIG);
    }
}
