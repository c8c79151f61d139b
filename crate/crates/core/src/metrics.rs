//! Per-run statistics, rank-grouped aggregates and the metrics CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{find_blocking_pairs, AnalysisError};
use crate::da::{Matching, Preferences};
use crate::market::{effective_half_width, MarketConfig, MarketInstance, Setting};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Integrity(#[from] AnalysisError),
    #[error("matching has {0} blocking pairs")]
    Unstable(usize),
    #[error("runs come from different configurations")]
    MismatchedConfigs,
    #[error("no runs to aggregate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoctorStat<T> {
    pub rating: T,
    pub hospital: Option<usize>,
    pub utility: Option<T>,
    /// `r(d) + 2 - U`; the whole benchmark when unmatched.
    pub loss: T,
    pub unmatched: bool,
    pub non_bottommost: bool,
    pub in_cone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HospitalStat<T> {
    pub rating: T,
    pub fill: usize,
    pub capacity: usize,
    pub full: bool,
    /// Utilities for the held doctors, best first.
    pub seat_utilities: Vec<T>,
    /// `r(h) + 1 - mean seat utility`; `None` for an empty hospital.
    pub loss: Option<T>,
    pub non_bottommost: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats<T> {
    pub config: MarketConfig,
    pub run_index: u64,
    pub doctors: Vec<DoctorStat<T>>,
    pub hospitals: Vec<HospitalStat<T>>,
    /// Doctor ids by rating, highest first.
    pub doctor_ranks: Vec<usize>,
    pub hospital_ranks: Vec<usize>,
}

/// Statistics of a matching, after checking it is stable.
pub fn run_stats<T: Scalar>(
    instance: &MarketInstance<T>,
    prefs: &Preferences<T>,
    matching: &Matching,
) -> Result<RunStats<T>, MetricsError> {
    let blocking = find_blocking_pairs(prefs, &instance.capacities, matching)?;
    if !blocking.is_empty() {
        return Err(MetricsError::Unstable(blocking.len()));
    }
    let two = T::of(2.0);
    let doctors = (0..instance.n_doctors())
        .map(|d| {
            let rating = instance.doctor_ratings[d];
            let hospital = matching.doctor_of[d];
            let utility = hospital.and_then(|h| prefs.doctor_utility(d, h));
            let in_cone = hospital.is_none_or(|h| (instance.hospital_ratings[h] - rating).abs() <= instance.half_width);
            DoctorStat {
                rating,
                hospital,
                utility,
                loss: rating + two - utility.unwrap_or(T::zero()),
                unmatched: hospital.is_none(),
                non_bottommost: !instance.doctor_is_bottommost(d),
                in_cone,
            }
        })
        .collect();
    let hospitals = (0..instance.n_hospitals())
        .map(|h| {
            let rating = instance.hospital_ratings[h];
            let mut seat_utilities: Vec<T> =
                matching.doctors_of[h].iter().filter_map(|&d| prefs.hospital_utility(h, d)).collect();
            seat_utilities.sort_by(|a, b| b.partial_cmp(a).expect("finite utilities"));
            let fill = seat_utilities.len();
            let loss = (fill > 0).then(|| {
                let mean = seat_utilities.iter().fold(T::zero(), |acc, &u| acc + u) / T::of(fill as f64);
                rating + T::one() - mean
            });
            HospitalStat {
                rating,
                fill,
                capacity: instance.capacities[h],
                full: fill >= instance.capacities[h],
                seat_utilities,
                loss,
                non_bottommost: !instance.hospital_is_bottommost(h),
            }
        })
        .collect();
    Ok(RunStats {
        config: instance.config.clone(),
        run_index: instance.run_index,
        doctors,
        hospitals,
        doctor_ranks: instance.doctors_by_rank().collect(),
        hospital_ranks: instance.hospitals_by_rank().collect(),
    })
}

/// Fraction of `items` for which `hit` holds, or `None` when `items` is empty.
fn fraction<I: Iterator<Item = bool>>(items: I) -> Option<f64> {
    let (mut hit, mut all) = (0usize, 0usize);
    for b in items {
        all += 1;
        hit += b as usize;
    }
    (all > 0).then(|| hit as f64 / all as f64)
}

fn mean<I: Iterator<Item = f64>>(items: I) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in items {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl<T: Scalar> RunStats<T> {
    pub fn matched_doctors(&self) -> usize {
        self.doctors.iter().filter(|d| !d.unmatched).count()
    }

    pub fn total_fill(&self) -> usize {
        self.hospitals.iter().map(|h| h.fill).sum()
    }

    pub fn doctor_non_match_rate(&self, non_bottommost_only: bool) -> Option<f64> {
        fraction(self.doctors.iter().filter(|d| !non_bottommost_only || d.non_bottommost).map(|d| d.unmatched))
    }

    pub fn doctor_match_rate(&self) -> f64 {
        1.0 - self.doctor_non_match_rate(false).unwrap_or(0.0)
    }

    pub fn hospital_non_full_rate(&self, non_bottommost_only: bool) -> Option<f64> {
        fraction(self.hospitals.iter().filter(|h| !non_bottommost_only || h.non_bottommost).map(|h| !h.full))
    }

    /// Filled seats over total seats.
    pub fn seat_fill_rate(&self) -> f64 {
        let seats: usize = self.hospitals.iter().map(|h| h.capacity).sum();
        self.total_fill() as f64 / seats.max(1) as f64
    }

    /// Non-full rate among the hospitals in the top `share` of ranks.
    pub fn top_hospital_non_full_rate(&self, share: f64) -> Option<f64> {
        let n = (self.hospital_ranks.len() as f64 * share).floor() as usize;
        fraction(self.hospital_ranks[..n].iter().map(|&h| !self.hospitals[h].full))
    }

    /// Every match lies in the matched doctor's cone.
    pub fn all_in_cone(&self) -> bool {
        self.doctors.iter().all(|d| d.in_cone)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Metric {
    DoctorNonMatch,
    DoctorNonMatchNonBottommost,
    DoctorLoss,
    HospitalNonFull,
    HospitalNonFullNonBottommost,
    HospitalLoss,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::DoctorNonMatch,
        Metric::DoctorNonMatchNonBottommost,
        Metric::DoctorLoss,
        Metric::HospitalNonFull,
        Metric::HospitalNonFullNonBottommost,
        Metric::HospitalLoss,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::DoctorNonMatch => "doctor_non_match",
            Metric::DoctorNonMatchNonBottommost => "doctor_non_match_non_bottommost",
            Metric::DoctorLoss => "doctor_loss",
            Metric::HospitalNonFull => "hospital_non_full",
            Metric::HospitalNonFullNonBottommost => "hospital_non_full_non_bottommost",
            Metric::HospitalLoss => "hospital_loss",
        }
    }

    fn is_doctor(self) -> bool {
        matches!(self, Metric::DoctorNonMatch | Metric::DoctorNonMatchNonBottommost | Metric::DoctorLoss)
    }
}

/// One rank group of an aggregated metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPoint {
    /// 1-based inclusive rank range.
    pub rank_lo: usize,
    pub rank_hi: usize,
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
    /// Runs in which the group had any eligible agent.
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupedSeries {
    pub metric: Metric,
    pub group_size: usize,
    pub points: Vec<GroupPoint>,
}

/// Nearest-rank percentile of sorted data.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per-group value of `metric` in one run.
fn group_values<T: Scalar>(stats: &RunStats<T>, metric: Metric, group_size: usize) -> Vec<Option<f64>> {
    let ranks = if metric.is_doctor() { &stats.doctor_ranks } else { &stats.hospital_ranks };
    ranks
        .chunks(group_size)
        .map(|chunk| {
            let ds = || chunk.iter().map(|&i| &stats.doctors[i]);
            let hs = || chunk.iter().map(|&i| &stats.hospitals[i]);
            match metric {
                Metric::DoctorNonMatch => fraction(ds().map(|d| d.unmatched)),
                Metric::DoctorNonMatchNonBottommost => fraction(ds().filter(|d| d.non_bottommost).map(|d| d.unmatched)),
                Metric::DoctorLoss => mean(ds().filter(|d| !d.unmatched).map(|d| d.loss.to_f64_lossy())),
                Metric::HospitalNonFull => fraction(hs().map(|h| !h.full)),
                Metric::HospitalNonFullNonBottommost => fraction(hs().filter(|h| h.non_bottommost).map(|h| !h.full)),
                Metric::HospitalLoss => mean(hs().filter_map(|h| h.loss).map(|x| x.to_f64_lossy())),
            }
        })
        .collect()
}

/// Mergeable partial aggregate: per-group samples across runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Accumulator {
    pub group_size: usize,
    pub config: Option<MarketConfig>,
    samples: BTreeMap<(Metric, usize), Vec<f64>>,
    sizes: BTreeMap<Metric, usize>,
}

impl Accumulator {
    pub fn new(group_size: usize) -> Self {
        Self { group_size: group_size.max(1), ..Self::default() }
    }

    /// Configs are compared without `runs` and `seed`-independent fields.
    fn same_config(a: &MarketConfig, b: &MarketConfig) -> bool {
        MarketConfig { runs: 0, ..a.clone() } == MarketConfig { runs: 0, ..b.clone() }
    }

    pub fn push<T: Scalar>(&mut self, stats: &RunStats<T>) -> Result<(), MetricsError> {
        match &self.config {
            Some(c) if !Self::same_config(c, &stats.config) => return Err(MetricsError::MismatchedConfigs),
            Some(_) => {}
            None => self.config = Some(stats.config.clone()),
        }
        for metric in Metric::ALL {
            let n = if metric.is_doctor() { stats.doctors.len() } else { stats.hospitals.len() };
            self.sizes.insert(metric, n);
            for (g, v) in group_values(stats, metric, self.group_size).into_iter().enumerate() {
                if let Some(v) = v {
                    self.samples.entry((metric, g)).or_default().push(v);
                }
            }
        }
        Ok(())
    }

    pub fn merge(mut self, other: Accumulator) -> Result<Accumulator, MetricsError> {
        match (&self.config, &other.config) {
            (Some(a), Some(b)) if !Self::same_config(a, b) => return Err(MetricsError::MismatchedConfigs),
            (None, Some(_)) => self.config = other.config.clone(),
            _ => {}
        }
        for (key, mut v) in other.samples {
            self.samples.entry(key).or_default().append(&mut v);
        }
        self.sizes.extend(other.sizes);
        Ok(self)
    }

    pub fn finish(&self) -> Result<Vec<GroupedSeries>, MetricsError> {
        if self.config.is_none() {
            return Err(MetricsError::Empty);
        }
        Ok(Metric::ALL
            .iter()
            .map(|&metric| {
                let n = self.sizes.get(&metric).copied().unwrap_or(0);
                let groups = n.div_ceil(self.group_size);
                let points = (0..groups)
                    .filter_map(|g| {
                        let xs = self.samples.get(&(metric, g))?;
                        let mut sorted = xs.clone();
                        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                        Some(GroupPoint {
                            rank_lo: g * self.group_size + 1,
                            rank_hi: ((g + 1) * self.group_size).min(n),
                            mean: xs.iter().sum::<f64>() / xs.len() as f64,
                            p10: nearest_rank(&sorted, 10.0),
                            p90: nearest_rank(&sorted, 90.0),
                            runs: xs.len(),
                        })
                    })
                    .collect();
                GroupedSeries { metric, group_size: self.group_size, points }
            })
            .collect())
    }
}

/// Aggregates runs of one configuration into per-metric grouped series.
pub fn aggregate<T: Scalar>(runs: &[RunStats<T>], group_size: usize) -> Result<Vec<GroupedSeries>, MetricsError> {
    let mut acc = Accumulator::new(group_size);
    for r in runs {
        acc.push(r)?;
    }
    acc.finish()
}

pub const CSV_HEADER: &str = "group_lo,group_hi,metric,mean,p10,p90,runs,setting,n,k,kappa,cone,seed";

/// Metrics CSV for one configuration, header included.
pub fn to_csv(series: &[GroupedSeries], config: &MarketConfig) -> String {
    let cone = effective_half_width(config).map_or(f64::NAN, |h| 2.0 * h);
    let kappa = config.capacity.mean(config.n_hospitals);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in series {
        for p in &s.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                p.rank_lo,
                p.rank_hi,
                s.metric.label(),
                p.mean,
                p.p10,
                p.p90,
                p.runs,
                config.setting.label(),
                config.n_doctors,
                config.k,
                kappa,
                cone,
                config.seed
            )
            .expect("writing to a String");
        }
    }
    out
}

/// Closed-form non-match bounds for agents rated at least `a alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremBounds {
    pub doctor: f64,
    pub hospital: f64,
}

pub fn theorem_bounds(setting: Setting, k: usize, a: f64, kappa: f64) -> TheoremBounds {
    let k = k as f64;
    match setting {
        Setting::SchoolChoice => TheoremBounds {
            doctor: (-4.0 * k / (4.0 * a + 1.0)).exp(),
            hospital: (-1.5 * kappa * k.ln()).exp(),
        },
        Setting::Residency | Setting::RequestInterview => {
            let root = (k * k.ln() / (4.0 * a + 1.0)).sqrt();
            TheoremBounds { doctor: (-4.0 * root).exp(), hospital: (-0.375 * kappa * root).exp() }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub setting: Setting,
    pub k: usize,
    pub empirical: f64,
    pub bound: f64,
    pub slack: f64,
    pub within_bound: bool,
}

/// Pooled non-bottommost doctor non-match fraction against the theorem bound.
pub fn bound_check<T: Scalar>(runs: &[RunStats<T>], slack: f64) -> Option<BoundReport> {
    let first = runs.first()?;
    let cfg = &first.config;
    let hits = fraction(runs.iter().flat_map(|r| r.doctors.iter().filter(|d| d.non_bottommost).map(|d| d.unmatched)))?;
    let bound = theorem_bounds(cfg.setting, cfg.k, cfg.a, cfg.capacity.mean(cfg.n_hospitals)).doctor;
    Some(BoundReport { setting: cfg.setting, k: cfg.k, empirical: hits, bound, slack, within_bound: hits <= bound * slack })
}

/// Strictly decreasing empirical rates along increasing `k`.
pub fn decreasing_in_k(reports: &[BoundReport]) -> bool {
    let mut sorted: Vec<&BoundReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.k);
    sorted.windows(2).all(|w| w[1].empirical < w[0].empirical)
}
