//! Scenario configuration and replayable market instances.

mod config;
mod oracle;

pub use config::{
    config_shift, derive_alpha, effective_half_width, shift_ranges, Capacity, ConfigError, MarketConfig,
    RatingRange, Setting,
};
pub use oracle::{keyed_bits, keyed_unit, Redraw, ValueKind, ValueOracle};

use thiserror::Error;

use crate::scalar::Scalar;
use oracle::{STREAM_DOCTOR_RATING, STREAM_HOSPITAL_RATING};

const MAX_REGENERATIONS: u64 = 16;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("ratings still collide after {0} regenerations")]
    RatingCollision(u64),
    #[error("{side} rating {value} lies outside [{low}, {high})")]
    RatingOutOfRange { side: &'static str, value: f64, low: f64, high: f64 },
    #[error("expected {expected} {side} ratings, got {got}")]
    WrongCount { side: &'static str, expected: usize, got: usize },
}

/// One realized market: public ratings plus the pairwise value oracle.
///
/// Immutable after construction. Ratings are also kept sorted with the
/// permutation back to agent ids so cone queries are binary searches.
#[derive(Debug, Clone)]
pub struct MarketInstance<T = f64> {
    pub config: MarketConfig,
    pub run_index: u64,
    pub doctor_range: RatingRange,
    pub hospital_range: RatingRange,
    pub doctor_ratings: Vec<T>,
    pub hospital_ratings: Vec<T>,
    pub capacities: Vec<usize>,
    pub oracle: ValueOracle,
    /// `a * alpha_eff`, the cone half-width in rating units.
    pub half_width: T,
    /// `alpha_eff = half_width / a`.
    pub alpha: T,
    /// Set when the cone is wider than the hospital rating range.
    pub cone_clamped: bool,
    doctors_by_rating: Vec<usize>,
    sorted_doctor_ratings: Vec<T>,
    hospitals_by_rating: Vec<usize>,
    sorted_hospital_ratings: Vec<T>,
}

fn draw_ratings<T: Scalar>(
    seed: u64,
    run: u64,
    stream: u64,
    count: usize,
    range: RatingRange,
) -> Result<Vec<T>, GenerationError> {
    let low = T::of(range.low);
    let high = T::of(range.high);
    let width = T::of(range.width());
    let draw = |i: usize, attempt: u64| {
        let u = T::of(keyed_unit(&[seed, run, stream, i as u64, attempt])).min(T::below_one());
        low + width * u
    };
    let mut attempts = vec![0u64; count];
    let mut ratings: Vec<T> = (0..count).map(|i| draw(i, 0)).collect();
    for round in 0..=MAX_REGENERATIONS {
        let mut order: Vec<usize> = (0..count).collect();
        order.sort_by(|&a, &b| ratings[a].partial_cmp(&ratings[b]).unwrap().then(a.cmp(&b)));
        let mut bad: Vec<usize> = order.windows(2).filter(|w| ratings[w[0]] == ratings[w[1]]).map(|w| w[1]).collect();
        bad.extend((0..count).filter(|&i| ratings[i] >= high));
        if bad.is_empty() {
            return Ok(ratings);
        }
        if round == MAX_REGENERATIONS {
            break;
        }
        for i in bad {
            attempts[i] += 1;
            ratings[i] = draw(i, attempts[i]);
        }
    }
    Err(GenerationError::RatingCollision(MAX_REGENERATIONS))
}

fn sorted_index<T: Scalar>(ratings: &[T]) -> (Vec<usize>, Vec<T>) {
    let mut by: Vec<usize> = (0..ratings.len()).collect();
    by.sort_by(|&a, &b| ratings[a].partial_cmp(&ratings[b]).unwrap().then(a.cmp(&b)));
    let sorted = by.iter().map(|&i| ratings[i]).collect();
    (by, sorted)
}

/// Draws an instance. Pure in `(config, run_index)`.
pub fn generate<T: Scalar>(config: &MarketConfig, run_index: u64) -> Result<MarketInstance<T>, GenerationError> {
    config.validate()?;
    let (doctor_range, hospital_range) = shift_ranges(config_shift(config));
    let doctor_ratings =
        draw_ratings(config.seed, run_index, STREAM_DOCTOR_RATING, config.n_doctors, doctor_range)?;
    let hospital_ratings =
        draw_ratings(config.seed, run_index, STREAM_HOSPITAL_RATING, config.n_hospitals, hospital_range)?;
    MarketInstance::assemble(config.clone(), run_index, doctor_range, hospital_range, doctor_ratings, hospital_ratings)
}

impl<T: Scalar> MarketInstance<T> {
    /// Builds an instance from explicit ratings; pairwise values still come
    /// from the keyed oracle.
    pub fn from_ratings(
        config: &MarketConfig,
        run_index: u64,
        doctor_ratings: Vec<T>,
        hospital_ratings: Vec<T>,
    ) -> Result<Self, GenerationError> {
        let (doctor_range, hospital_range) = shift_ranges(config_shift(config));
        Self::from_ratings_in(config, run_index, doctor_ratings, hospital_ratings, doctor_range, hospital_range)
    }

    /// As [`MarketInstance::from_ratings`] with explicit rating ranges.
    pub fn from_ratings_in(
        config: &MarketConfig,
        run_index: u64,
        doctor_ratings: Vec<T>,
        hospital_ratings: Vec<T>,
        doctor_range: RatingRange,
        hospital_range: RatingRange,
    ) -> Result<Self, GenerationError> {
        config.validate()?;
        for (side, ratings, range, expected) in [
            ("doctor", &doctor_ratings, doctor_range, config.n_doctors),
            ("hospital", &hospital_ratings, hospital_range, config.n_hospitals),
        ] {
            if ratings.len() != expected {
                return Err(GenerationError::WrongCount { side, expected, got: ratings.len() });
            }
            if let Some(&bad) = ratings.iter().find(|r| !range.contains(r.to_f64_lossy())) {
                return Err(GenerationError::RatingOutOfRange {
                    side,
                    value: bad.to_f64_lossy(),
                    low: range.low,
                    high: range.high,
                });
            }
        }
        Self::assemble(config.clone(), run_index, doctor_range, hospital_range, doctor_ratings, hospital_ratings)
    }

    fn assemble(
        config: MarketConfig,
        run_index: u64,
        doctor_range: RatingRange,
        hospital_range: RatingRange,
        doctor_ratings: Vec<T>,
        hospital_ratings: Vec<T>,
    ) -> Result<Self, GenerationError> {
        let half = effective_half_width(&config)?;
        let (doctors_by_rating, sorted_doctor_ratings) = sorted_index(&doctor_ratings);
        let (hospitals_by_rating, sorted_hospital_ratings) = sorted_index(&hospital_ratings);
        Ok(Self {
            capacities: config.capacities(),
            oracle: ValueOracle::new(config.seed, run_index),
            half_width: T::of(half),
            alpha: T::of(half / config.a),
            cone_clamped: 2.0 * half > hospital_range.width(),
            run_index,
            doctor_range,
            hospital_range,
            doctor_ratings,
            hospital_ratings,
            doctors_by_rating,
            sorted_doctor_ratings,
            hospitals_by_rating,
            sorted_hospital_ratings,
            config,
        })
    }

    pub fn n_doctors(&self) -> usize {
        self.doctor_ratings.len()
    }

    pub fn n_hospitals(&self) -> usize {
        self.hospital_ratings.len()
    }

    pub fn a(&self) -> T {
        T::of(self.config.a)
    }

    pub fn value(&self, kind: ValueKind, doctor: usize, hospital: usize) -> T {
        T::of(self.oracle.value(kind, doctor, hospital)).min(T::below_one())
    }

    /// Same market with fresh interview values for `doctor` only.
    pub fn with_redraw(&self, doctor: usize, replicate: u64) -> Self {
        let mut out = self.clone();
        out.oracle.redraw = Some(Redraw { doctor, replicate });
        out
    }

    /// Hospitals with rating in `[low, high)`, ascending by rating.
    pub fn hospitals_in(&self, low: T, high: T) -> &[usize] {
        let lo = self.sorted_hospital_ratings.partition_point(|&r| r < low);
        let hi = self.sorted_hospital_ratings.partition_point(|&r| r < high);
        &self.hospitals_by_rating[lo..hi.max(lo)]
    }

    /// Doctors with rating in `[low, high)`, ascending by rating.
    pub fn doctors_in(&self, low: T, high: T) -> &[usize] {
        let lo = self.sorted_doctor_ratings.partition_point(|&r| r < low);
        let hi = self.sorted_doctor_ratings.partition_point(|&r| r < high);
        &self.doctors_by_rating[lo..hi.max(lo)]
    }

    /// Doctors ordered from the highest rating down.
    pub fn doctors_by_rank(&self) -> impl Iterator<Item = usize> + '_ {
        self.doctors_by_rating.iter().rev().copied()
    }

    pub fn hospitals_by_rank(&self) -> impl Iterator<Item = usize> + '_ {
        self.hospitals_by_rating.iter().rev().copied()
    }

    /// Doctors below this rating are the bottommost ones.
    pub fn doctor_bottom_cutoff(&self) -> T {
        T::of(self.hospital_range.low.max(self.doctor_range.low)) + self.half_width
    }

    pub fn hospital_bottom_cutoff(&self) -> T {
        (T::of(self.doctor_range.low) + self.half_width).max(T::of(self.hospital_range.low))
    }

    pub fn doctor_is_bottommost(&self, d: usize) -> bool {
        self.doctor_ratings[d] < self.doctor_bottom_cutoff()
    }

    pub fn hospital_is_bottommost(&self, h: usize) -> bool {
        self.hospital_ratings[h] < self.hospital_bottom_cutoff()
    }
}
