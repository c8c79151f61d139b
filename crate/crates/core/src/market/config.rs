use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    NonPositive(&'static str),
    #[error("k = {k} exceeds the number of hospitals ({n_hospitals})")]
    TooManyInterviews { k: usize, n_hospitals: usize },
    #[error("capacity vector has {got} entries but there are {expected} hospitals")]
    CapacityLength { expected: usize, got: usize },
    #[error("{name} = {value} must lie in [0, 1]")]
    WeightOutOfRange { name: &'static str, value: f64 },
    #[error("{name} = {value} must be a positive finite number")]
    NotPositive { name: &'static str, value: f64 },
    #[error("alpha derivation needs k >= 2 (ln k > 0); set alpha or cone_override explicitly")]
    AlphaUndefined,
    #[error("could not read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Which side builds the interview edges and how hospitals value doctors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Setting {
    /// Doctors pick interviews, both sides have interview values.
    #[default]
    Residency,
    /// Schools share one ranking of students by public rating.
    SchoolChoice,
    /// Doctors request, hospitals grant by their own private values.
    RequestInterview,
}

impl Setting {
    pub fn label(self) -> &'static str {
        match self {
            Setting::Residency => "residency",
            Setting::SchoolChoice => "school",
            Setting::RequestInterview => "request",
        }
    }
}

/// Hospital seats: one value for all hospitals, or one per hospital.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Capacity {
    Uniform(usize),
    PerHospital(Vec<usize>),
}

impl Capacity {
    pub fn of(&self, hospital: usize) -> usize {
        match self {
            Capacity::Uniform(c) => *c,
            Capacity::PerHospital(v) => v[hospital],
        }
    }

    pub fn expand(&self, n_hospitals: usize) -> Vec<usize> {
        (0..n_hospitals).map(|h| self.of(h)).collect()
    }

    pub fn is_uniform(&self) -> bool {
        match self {
            Capacity::Uniform(_) => true,
            Capacity::PerHospital(v) => v.windows(2).all(|w| w[0] == w[1]),
        }
    }

    pub fn mean(&self, n_hospitals: usize) -> f64 {
        match self {
            Capacity::Uniform(c) => *c as f64,
            Capacity::PerHospital(v) => v.iter().sum::<usize>() as f64 / n_hospitals.max(1) as f64,
        }
    }
}

fn default_a() -> f64 {
    5.0
}
fn default_weight() -> f64 {
    1.0
}
fn default_runs() -> usize {
    1
}
fn default_alpha_factor() -> f64 {
    2.0
}

/// All parameters of one market scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub n_doctors: usize,
    pub n_hospitals: usize,
    pub capacity: Capacity,
    /// Interviews per doctor.
    pub k: usize,
    /// Cone half-width multiplier.
    #[serde(default = "default_a")]
    pub a: f64,
    /// Cone scale; derived from `k` when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Absolute cone half-width in rating units, overriding `a * alpha`.
    #[serde(default)]
    pub cone_override: Option<f64>,
    #[serde(default)]
    pub setting: Setting,
    #[serde(default = "default_weight")]
    pub nu_d: f64,
    #[serde(default = "default_weight")]
    pub nu_h: f64,
    /// Rating offset between the sides; 0 derives it from the seat imbalance.
    #[serde(default)]
    pub rating_shift: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Leading factor `c` in `alpha = (c (4a+1) ln k / k)^(1/2)`.
    #[serde(default = "default_alpha_factor")]
    pub alpha_factor: f64,
}

impl MarketConfig {
    /// Equal sides: `n_doctors` doctors and `n_doctors / capacity` hospitals.
    pub fn balanced(n_doctors: usize, capacity: usize, k: usize) -> Self {
        Self {
            n_doctors,
            n_hospitals: (n_doctors / capacity.max(1)).max(1),
            capacity: Capacity::Uniform(capacity),
            k,
            a: default_a(),
            alpha: None,
            cone_override: None,
            setting: Setting::Residency,
            nu_d: 1.0,
            nu_h: 1.0,
            rating_shift: 0.0,
            seed: 0,
            runs: 1,
            alpha_factor: default_alpha_factor(),
        }
    }

    pub fn with_setting(mut self, setting: Setting) -> Self {
        self.setting = setting;
        self
    }

    pub fn with_cone(mut self, half_width: f64) -> Self {
        self.cone_override = Some(half_width);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_runs(mut self, runs: usize) -> Self {
        self.runs = runs;
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn capacities(&self) -> Vec<usize> {
        self.capacity.expand(self.n_hospitals)
    }

    pub fn total_seats(&self) -> usize {
        self.capacities().iter().sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_doctors == 0 {
            return Err(ConfigError::NonPositive("n_doctors"));
        }
        if self.n_hospitals == 0 {
            return Err(ConfigError::NonPositive("n_hospitals"));
        }
        if self.k == 0 {
            return Err(ConfigError::NonPositive("k"));
        }
        if self.runs == 0 {
            return Err(ConfigError::NonPositive("runs"));
        }
        if self.k > self.n_hospitals {
            return Err(ConfigError::TooManyInterviews { k: self.k, n_hospitals: self.n_hospitals });
        }
        match &self.capacity {
            Capacity::Uniform(0) => return Err(ConfigError::NonPositive("capacity")),
            Capacity::Uniform(_) => {}
            Capacity::PerHospital(v) => {
                if v.len() != self.n_hospitals {
                    return Err(ConfigError::CapacityLength { expected: self.n_hospitals, got: v.len() });
                }
                if v.iter().any(|&c| c == 0) {
                    return Err(ConfigError::NonPositive("capacity"));
                }
            }
        }
        for (name, value) in [("nu_d", self.nu_d), ("nu_h", self.nu_h)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::WeightOutOfRange { name, value });
            }
        }
        let positive = |name: &'static str, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::NotPositive { name, value })
            }
        };
        positive("a", self.a)?;
        positive("alpha_factor", self.alpha_factor)?;
        if let Some(alpha) = self.alpha {
            positive("alpha", alpha)?;
        }
        if let Some(cone) = self.cone_override {
            positive("cone_override", cone)?;
        }
        if !self.rating_shift.is_finite() {
            return Err(ConfigError::NotPositive { name: "rating_shift", value: self.rating_shift });
        }
        Ok(())
    }
}

/// Cone scale `alpha` for a configuration.
///
/// Residency and request-interview markets use `(c(4a+1) ln k / k)^(1/2)`,
/// school choice uses `c(4a+1) ln k / k`, with `c = alpha_factor` (default 2).
/// An explicit `alpha` wins; otherwise a `cone_override` implies
/// `alpha = cone_override / a`.
pub fn derive_alpha(config: &MarketConfig) -> Result<f64, ConfigError> {
    if let Some(alpha) = config.alpha {
        return Ok(alpha);
    }
    if let Some(cone) = config.cone_override {
        return Ok(cone / config.a);
    }
    if config.k < 2 {
        return Err(ConfigError::AlphaUndefined);
    }
    let k = config.k as f64;
    let base = config.alpha_factor * (4.0 * config.a + 1.0) * k.ln() / k;
    Ok(match config.setting {
        Setting::SchoolChoice => base,
        Setting::Residency | Setting::RequestInterview => base.sqrt(),
    })
}

/// Cone half-width in rating units (`a * alpha` unless overridden).
pub fn effective_half_width(config: &MarketConfig) -> Result<f64, ConfigError> {
    match config.cone_override {
        Some(cone) => Ok(cone),
        None => Ok(config.a * derive_alpha(config)?),
    }
}

/// Half-open rating interval `[low, high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingRange {
    pub low: f64,
    pub high: f64,
}

impl RatingRange {
    pub const UNIT: RatingRange = RatingRange { low: 0.0, high: 1.0 };

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x < self.high
    }
}

/// Rating ranges `(doctors, hospitals)` for a market whose sides differ.
///
/// With `shift = m/n > 0` (extra doctors) the doctors span `[0, 1+shift)`
/// and the hospitals `[shift, 1+shift)`, so the short side sits at the top of
/// the long side's range. A negative shift mirrors the construction.
pub fn shift_ranges(shift: f64) -> (RatingRange, RatingRange) {
    let long = RatingRange { low: 0.0, high: 1.0 + shift.abs() };
    let short = RatingRange { low: shift.abs(), high: 1.0 + shift.abs() };
    if shift >= 0.0 {
        (long, short)
    } else {
        (short, long)
    }
}

/// Shift implied by a configuration: `rating_shift` when non-zero, otherwise
/// `(doctors - seats) / min(doctors, seats)`.
pub fn config_shift(config: &MarketConfig) -> f64 {
    if config.rating_shift != 0.0 {
        return config.rating_shift;
    }
    let doctors = config.n_doctors as f64;
    let seats = config.total_seats() as f64;
    if doctors == seats {
        0.0
    } else {
        (doctors - seats) / doctors.min(seats)
    }
}
