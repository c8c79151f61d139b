//! Built-in campaigns.

use clap::ValueEnum;

use interview_match::market::{MarketConfig, Setting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// n=2000, k=5, kappa=5, cone 0.3, doctor-selected and requested interviews.
    #[value(name = "paper-2000")]
    Paper2000,
    /// n=500, kappa=5, k in {5, 12}.
    #[value(name = "paper-500")]
    Paper500,
    /// School choice, n=2000, kappa=5, k in {5, 12}.
    School,
    /// Request-interview protocol, n=2000, kappa=5, k in {5, 12}.
    Request,
}

/// Half-width of a cone of size 0.3.
const HALF_WIDTH: f64 = 0.15;
const RUNS: usize = 100;

fn base(n: usize, k: usize, setting: Setting) -> MarketConfig {
    MarketConfig::balanced(n, 5, k).with_cone(HALF_WIDTH).with_setting(setting).with_runs(RUNS)
}

impl Preset {
    pub fn configs(self) -> Vec<MarketConfig> {
        match self {
            Preset::Paper2000 => vec![base(2000, 5, Setting::Residency), base(2000, 5, Setting::RequestInterview)],
            Preset::Paper500 => vec![base(500, 5, Setting::Residency), base(500, 12, Setting::Residency)],
            Preset::School => vec![base(2000, 5, Setting::SchoolChoice), base(2000, 12, Setting::SchoolChoice)],
            Preset::Request => vec![base(2000, 5, Setting::RequestInterview), base(2000, 12, Setting::RequestInterview)],
        }
    }
}

/// Tiny markets for `--verify-only`: 6 doctors and 3 hospitals of two seats,
/// across every setting and two cone widths.
pub fn verify_grid(runs: usize) -> Vec<MarketConfig> {
    let mut out = Vec::new();
    for setting in [Setting::Residency, Setting::SchoolChoice, Setting::RequestInterview] {
        for half in [0.2, 0.5] {
            let mut cfg = MarketConfig::balanced(6, 2, 2).with_cone(half).with_setting(setting).with_runs(runs);
            cfg.n_hospitals = 3;
            out.push(cfg);
        }
    }
    out
}
