//! Double-cut harnesses: truncated DA runs around one agent or a rating
//! interval, surplus accounting, interval preprocessing and the
//! independent-proposal failure oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::da::{truncated_da, EventLog, Matching, Orientation, Preferences, ProposerLimit, TruncationRule};
use crate::market::{MarketInstance, Setting};
use crate::scalar::Scalar;
use crate::strategy::InterviewAssignment;

#[derive(Debug, Error, PartialEq)]
pub enum DoubleCutError {
    #[error("interval [{f}, {g}) must satisfy f < g and g - f < alpha = {alpha}")]
    BadInterval { f: f64, g: f64, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Focal<T> {
    Hospital(usize),
    Doctor(usize),
    /// Doctors with rating in `[f, g)`.
    Interval { f: T, g: T },
    /// Untruncated run.
    None,
}

/// Exclusions and population counts from interval preprocessing.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct IntervalExclusions {
    pub excluded_hospitals: Vec<usize>,
    pub excluded_doctors: Vec<usize>,
    /// Doctors of `I` that survive, ascending by id.
    pub kept_doctors: Vec<usize>,
    pub interval_size: usize,
    /// Hospitals in `L = [g - a alpha, f + a alpha)`.
    pub band_size: usize,
    pub band_kept: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleCutScenario<T> {
    pub focal: Focal<T>,
    pub orientation: Orientation,
    /// Lowest rating of a participating proposer.
    pub proposer_threshold: T,
    /// Lowest rating of a participating receiver.
    pub receiver_threshold: T,
    pub floor: T,
    pub rule: TruncationRule<T>,
    pub exclusions: IntervalExclusions,
    /// Focal agent lies in the bottommost band.
    pub bottommost: bool,
}

fn limits_for<T: Scalar>(n: usize, floor: T, has_floor: impl Fn(usize) -> bool) -> Vec<Option<ProposerLimit<T>>> {
    (0..n).map(|p| has_floor(p).then(|| ProposerLimit { floor, windows: Vec::new() })).collect()
}

impl<T: Scalar> DoubleCutScenario<T> {
    /// No truncation at all.
    pub fn degenerate(orientation: Orientation) -> Self {
        Self {
            focal: Focal::None,
            orientation,
            proposer_threshold: T::neg_infinity(),
            receiver_threshold: T::neg_infinity(),
            floor: T::neg_infinity(),
            rule: TruncationRule::none(),
            exclusions: IntervalExclusions::default(),
            bottommost: false,
        }
    }

    /// Doctor-proposing run for hospital `h`.
    ///
    /// Hospitals rated at least `r(h) - alpha` and doctors rated at least
    /// `r(h) - a alpha` take part. Doctors in `h`'s cone will not propose below
    /// `r(h) + 1 - alpha`; every doctor stops right after proposing to `h`.
    pub fn for_hospital(instance: &MarketInstance<T>, h: usize) -> Self {
        let r = instance.hospital_ratings[h];
        let (alpha, half) = (instance.alpha, instance.half_width);
        let proposer_threshold = r - half;
        let receiver_threshold = r - alpha;
        let floor = r + T::one() - alpha;
        let dr = &instance.doctor_ratings;
        let rule = TruncationRule {
            proposers: Some(dr.iter().map(|&x| x >= proposer_threshold).collect()),
            receivers: Some(instance.hospital_ratings.iter().map(|&x| x >= receiver_threshold).collect()),
            limits: limits_for(dr.len(), floor, |d| dr[d] >= r - half && dr[d] < r + half),
            focal: vec![h],
        };
        Self {
            focal: Focal::Hospital(h),
            orientation: Orientation::DoctorProposing,
            proposer_threshold,
            receiver_threshold,
            floor,
            rule,
            exclusions: IntervalExclusions::default(),
            bottommost: instance.hospital_is_bottommost(h),
        }
    }

    /// Hospital-proposing run for doctor `d`.
    ///
    /// Doctors rated at least `r(d) - alpha` and hospitals rated at least
    /// `r(d) - a alpha` take part. Hospitals in `d`'s cone will not propose
    /// below `r(d) + 1 - alpha`; every hospital stops right after proposing to
    /// `d`. In school choice a school's utility for `d` is `r(d)`, so the cut is
    /// at `r(d)` itself and applies to every school.
    pub fn for_doctor(instance: &MarketInstance<T>, d: usize) -> Self {
        let r = instance.doctor_ratings[d];
        let (alpha, half) = (instance.alpha, instance.half_width);
        let proposer_threshold = r - half;
        let receiver_threshold = r - alpha;
        let hr = &instance.hospital_ratings;
        let school = instance.config.setting == Setting::SchoolChoice;
        let floor = if school { r } else { r + T::one() - alpha };
        let rule = TruncationRule {
            proposers: Some(hr.iter().map(|&x| x >= proposer_threshold).collect()),
            receivers: Some(instance.doctor_ratings.iter().map(|&x| x >= receiver_threshold).collect()),
            limits: limits_for(hr.len(), floor, |h| school || (hr[h] >= r - half && hr[h] < r + half)),
            focal: vec![d],
        };
        Self {
            focal: Focal::Doctor(d),
            orientation: Orientation::HospitalProposing,
            proposer_threshold,
            receiver_threshold,
            floor,
            rule,
            exclusions: IntervalExclusions::default(),
            bottommost: instance.doctor_is_bottommost(d),
        }
    }

    /// Hospital-proposing run for the doctors rated in `[f, g)`.
    ///
    /// Preprocessing removes colliding hospitals (see [`interval_preprocess`]).
    /// Hospitals in `L` stop below `g + 1 - alpha` and whenever the next
    /// utility falls in a member's band `[r(d') + 1 - alpha, r(d') + 1)` but
    /// outside `[g + 1 - alpha, f + 1)`. Any proposal to a kept doctor of the
    /// interval ends that hospital's run.
    pub fn for_doctor_interval(
        instance: &MarketInstance<T>,
        assignment: &InterviewAssignment<T>,
        f: T,
        g: T,
    ) -> Result<Self, DoubleCutError> {
        let ex = interval_preprocess(instance, assignment, f, g)?;
        let (alpha, half) = (instance.alpha, instance.half_width);
        let one = T::one();
        let proposer_threshold = g - half;
        let receiver_threshold = g - alpha;
        let floor = g + one - alpha;
        let hr = &instance.hospital_ratings;
        let mut proposers: Vec<bool> = hr.iter().map(|&x| x >= proposer_threshold).collect();
        for &h in &ex.excluded_hospitals {
            proposers[h] = false;
        }
        let mut receivers: Vec<bool> = instance.doctor_ratings.iter().map(|&x| x >= receiver_threshold).collect();
        for &d in &ex.excluded_doctors {
            receivers[d] = false;
        }
        let (keep_lo, keep_hi) = (g + one - alpha, f + one);
        let windows: Vec<(T, T)> = ex
            .kept_doctors
            .iter()
            .flat_map(|&d| {
                let r = instance.doctor_ratings[d];
                let (lo, hi) = (r + one - alpha, r + one);
                [(lo, keep_lo.min(hi)), (keep_hi.max(lo), hi)]
            })
            .filter(|&(lo, hi)| lo < hi)
            .collect();
        let in_band = |h: usize| hr[h] >= g - half && hr[h] < f + half;
        let limits = (0..hr.len())
            .map(|h| in_band(h).then(|| ProposerLimit { floor, windows: windows.clone() }))
            .collect();
        let rule = TruncationRule { proposers: Some(proposers), receivers: Some(receivers), limits, focal: ex.kept_doctors.clone() };
        Ok(Self {
            focal: Focal::Interval { f, g },
            orientation: Orientation::HospitalProposing,
            proposer_threshold,
            receiver_threshold,
            floor,
            rule,
            bottommost: f < instance.doctor_bottom_cutoff(),
            exclusions: ex,
        })
    }

    /// Receivers whose outcome the scenario speaks about.
    pub fn in_scope_receivers(&self, n_receivers: usize) -> Vec<usize> {
        (0..n_receivers).filter(|&r| self.rule.receivers.as_ref().is_none_or(|v| v[r])).collect()
    }
}

/// Preprocessing for an interval `I = [f, g)` of doctors.
///
/// Excludes (i) hospitals rated in `[f + a alpha, g + a alpha)`; (ii)
/// hospitals of `L = [g - a alpha, f + a alpha)` with two or more edges into
/// `I`; (iii) the doctors of `I` on those edges; (iv) every hospital adjacent
/// to a removed doctor.
pub fn interval_preprocess<T: Scalar>(
    instance: &MarketInstance<T>,
    assignment: &InterviewAssignment<T>,
    f: T,
    g: T,
) -> Result<IntervalExclusions, DoubleCutError> {
    let alpha = instance.alpha;
    if !(f <= g) || g - f >= alpha {
        return Err(DoubleCutError::BadInterval { f: f.to_f64_lossy(), g: g.to_f64_lossy(), alpha: alpha.to_f64_lossy() });
    }
    let mut interval: Vec<usize> = instance.doctors_in(f, g).to_vec();
    interval.sort_unstable();
    if interval.is_empty() {
        return Ok(IntervalExclusions::default());
    }
    let half = instance.half_width;
    let n_h = instance.n_hospitals();
    let mut excluded = vec![false; n_h];
    for &h in instance.hospitals_in(f + half, g + half) {
        excluded[h] = true;
    }
    let band: Vec<usize> = instance.hospitals_in(g - half, f + half).to_vec();
    let in_interval = |d: usize| interval.binary_search(&d).is_ok();
    let mut removed_doctors = Vec::new();
    for &h in &band {
        let hits: Vec<usize> = assignment.hospitals[h].iter().map(|e| e.doctor).filter(|&d| in_interval(d)).collect();
        if hits.len() >= 2 {
            excluded[h] = true;
            removed_doctors.extend(hits);
        }
    }
    removed_doctors.sort_unstable();
    removed_doctors.dedup();
    for &d in &removed_doctors {
        for e in &assignment.doctors[d] {
            excluded[e.hospital] = true;
        }
    }
    let kept_doctors: Vec<usize> = interval.iter().copied().filter(|d| removed_doctors.binary_search(d).is_err()).collect();
    let band_kept = band.iter().filter(|&&h| !excluded[h]).count();
    Ok(IntervalExclusions {
        excluded_hospitals: (0..n_h).filter(|&h| excluded[h]).collect(),
        excluded_doctors: removed_doctors,
        kept_doctors,
        interval_size: interval.len(),
        band_size: band.len(),
        band_kept,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurplusReport<T> {
    pub participating_doctors: usize,
    pub participating_hospitals: usize,
    /// Unfilled hospitals (focal doctor or interval) or unmatched doctors
    /// (focal hospital) above the focal cone.
    pub unmatched_above: usize,
    /// Before flooring at zero.
    pub raw_surplus: f64,
    pub surplus: f64,
    pub proposals_to_focal: usize,
    pub focal_matched: bool,
    /// Focal receiver's utilities for its held partners, best first.
    pub focal_utilities: Vec<T>,
    pub bottommost: bool,
}

#[derive(Debug, Clone)]
pub struct DoubleCutRun<T> {
    pub matching: Matching,
    pub log: EventLog<T>,
    pub report: SurplusReport<T>,
}

fn count_in<T: Scalar>(ratings: &[T], low: T, high: T) -> usize {
    ratings.iter().filter(|&&x| x >= low && x < high).count()
}

/// Executes the scenario and measures its surplus.
pub fn run_double_cut<T: Scalar>(
    instance: &MarketInstance<T>,
    prefs: &Preferences<T>,
    scenario: &DoubleCutScenario<T>,
) -> DoubleCutRun<T> {
    let (matching, log) = truncated_da(prefs, &instance.capacities, &scenario.rule, scenario.orientation);
    let report = surplus_report(instance, prefs, scenario, &matching, &log);
    DoubleCutRun { matching, log, report }
}

fn surplus_report<T: Scalar>(
    instance: &MarketInstance<T>,
    prefs: &Preferences<T>,
    scenario: &DoubleCutScenario<T>,
    matching: &Matching,
    log: &EventLog<T>,
) -> SurplusReport<T> {
    let (alpha, half, one) = (instance.alpha, instance.half_width, T::one());
    let a1 = half + alpha;
    let top = T::infinity();
    let dr = &instance.doctor_ratings;
    let hr = &instance.hospital_ratings;
    let kappa = instance.config.capacity.mean(instance.n_hospitals());
    let (n_d, n_h) = (instance.n_doctors(), instance.n_hospitals());
    let active = |v: &Option<Vec<bool>>, n: usize| v.as_ref().map_or(n, |v| v.iter().filter(|&&b| b).count());
    let (participating_doctors, participating_hospitals) = match scenario.orientation {
        Orientation::DoctorProposing => (active(&scenario.rule.proposers, n_d), active(&scenario.rule.receivers, n_h)),
        Orientation::HospitalProposing => (active(&scenario.rule.receivers, n_d), active(&scenario.rule.proposers, n_h)),
    };
    let not_full = |low: T| (0..n_h).filter(|&h| hr[h] >= low && matching.fill(h) < instance.capacities[h]).count();
    let mut proposals_to_focal = 0;
    let mut focal_utilities = Vec::new();
    let (raw, unmatched_above) = match scenario.focal {
        Focal::Hospital(h) => {
            let r = hr[h];
            proposals_to_focal = log.proposals().filter(|e| e.target == Some(h)).count();
            focal_utilities = matching.doctors_of[h].iter().filter_map(|&d| prefs.hospital_utility(h, d)).collect();
            let available = count_in(dr, r - half, r + half) + count_in(dr, (r + a1).max(r + half), top);
            let seats: usize = (0..n_h).filter(|&x| hr[x] >= r - alpha).map(|x| instance.capacities[x]).sum();
            let above = (0..n_d).filter(|&d| dr[d] >= r + a1 && matching.doctor_of[d].is_none()).count();
            (available as f64 - seats as f64 - above as f64, above)
        }
        Focal::Doctor(d) => {
            let r = dr[d];
            proposals_to_focal = log.proposals().filter(|e| e.target == Some(d)).count();
            focal_utilities = matching.doctor_of[d].and_then(|h| prefs.doctor_utility(d, h)).into_iter().collect();
            let available = count_in(hr, r - half, r + half) + count_in(hr, (r + a1).max(r + half), top);
            let competitors = count_in(dr, r - alpha, top) as f64 / kappa;
            let above = not_full(r + a1);
            (available as f64 - competitors - above as f64, above)
        }
        Focal::Interval { f, g } => {
            let ex = &scenario.exclusions;
            let kept = &ex.kept_doctors;
            proposals_to_focal = log.proposals().filter(|e| e.target.is_some_and(|t| kept.contains(&t))).count();
            let excluded = |h: usize| ex.excluded_hospitals.binary_search(&h).is_ok();
            let upper_low = g + a1;
            let upper = if g <= one - a1 { upper_low } else { top };
            let j_upper = (0..n_h).filter(|&h| hr[h] >= upper && !excluded(h)).count();
            let j_band = (0..n_h).filter(|&h| hr[h] >= g - half && hr[h] < f + half && !excluded(h)).count();
            let above = (0..n_h).filter(|&h| hr[h] >= upper && matching.fill(h) < instance.capacities[h]).count();
            let k_count = (0..n_d).filter(|&x| dr[x] >= g - alpha && !(dr[x] >= f && dr[x] < g)).count();
            ((j_upper + j_band) as f64 - above as f64 - k_count as f64 / kappa, above)
        }
        Focal::None => (0.0, 0),
    };
    SurplusReport {
        participating_doctors,
        participating_hospitals,
        unmatched_above,
        raw_surplus: raw,
        surplus: raw.max(0.0),
        proposals_to_focal,
        focal_matched: !focal_utilities.is_empty(),
        focal_utilities,
        bottommost: scenario.bottommost,
    }
}

/// Proposals to `doctor` in a hospital-proposing log for which her interview
/// value is at least `1 - psi`.
pub fn qualifying_proposals<T: Scalar>(
    log: &EventLog<T>,
    assignment: &InterviewAssignment<T>,
    doctor: usize,
    psi: T,
) -> usize {
    log.proposals()
        .filter(|e| e.target == Some(doctor))
        .filter(|e| assignment.doctor_edge_to(doctor, e.proposer).is_some_and(|x| x.interview >= T::one() - psi))
        .count()
}

/// Inputs of the independent-proposal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleParams {
    /// Surplus, the number of independent chances.
    pub surplus: usize,
    pub cone_size: usize,
    pub k: usize,
    pub alpha: f64,
    pub psi: f64,
    pub a: f64,
}

impl OracleParams {
    /// Per-chance success probability `(k/|C|) alpha psi`.
    pub fn p(&self) -> f64 {
        (self.k as f64 / self.cone_size.max(1) as f64 * self.alpha * self.psi).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub closed_form: f64,
    pub monte_carlo: f64,
    /// Binomial standard error of the Monte Carlo estimate.
    pub standard_error: f64,
    pub trials: usize,
    /// Reference bound `exp(-2 k alpha psi / (4a + 1))`.
    pub reference_bound: f64,
}

/// Probability that none of `s` independent chances succeeds: `(1 - p)^s`.
pub fn independent_proposal_oracle(params: OracleParams, trials: usize, seed: u64) -> OracleEstimate {
    let p = params.p();
    let closed_form = (1.0 - p).powi(params.surplus as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let failures = (0..trials).filter(|_| (0..params.surplus).all(|_| !rng.gen_bool(p))).count();
    let monte_carlo = failures as f64 / trials.max(1) as f64;
    OracleEstimate {
        closed_form,
        monte_carlo,
        standard_error: (monte_carlo * (1.0 - monte_carlo) / trials.max(1) as f64).sqrt(),
        trials,
        reference_bound: (-2.0 * params.k as f64 * params.alpha * params.psi / (4.0 * params.a + 1.0)).exp(),
    }
}

/// Hospital-side mirror: probability of fewer than `kappa` successes among
/// `s` chances of probability `(k/|C|)(alpha - tau) psi_h`.
pub fn hospital_side_oracle(params: OracleParams, kappa: usize, tau: f64, trials: usize, seed: u64) -> OracleEstimate {
    let p = (params.k as f64 / params.cone_size.max(1) as f64 * (params.alpha - tau) * params.psi).clamp(0.0, 1.0);
    let s = params.surplus;
    let mut closed_form = 0.0;
    let mut term = (1.0 - p).powi(s as i32);
    for j in 0..kappa.min(s + 1) {
        closed_form += term;
        if p < 1.0 {
            term *= (s - j) as f64 / (j + 1) as f64 * p / (1.0 - p);
        }
    }
    if p >= 1.0 {
        closed_form = if s < kappa { 1.0 } else { 0.0 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let failures = (0..trials).filter(|_| (0..s).filter(|_| rng.gen_bool(p)).count() < kappa).count();
    let monte_carlo = failures as f64 / trials.max(1) as f64;
    let expected = 2.0 * kappa as f64 * params.k as f64 * (params.alpha - tau) * params.psi / (4.0 * params.a + 1.0);
    OracleEstimate {
        closed_form: closed_form.min(1.0),
        monte_carlo,
        standard_error: (monte_carlo * (1.0 - monte_carlo) / trials.max(1) as f64).sqrt(),
        trials,
        reference_bound: (-expected / 8.0).exp().min(1.0),
    }
}

/// Outcome of comparing a double-cut run with the full DA.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub receivers_checked: usize,
    /// Receivers doing strictly worse in the full run.
    pub violations: Vec<usize>,
    /// Proposers whose truncated sequence is not a prefix of the full one.
    pub prefix_violations: Vec<usize>,
}

impl DominanceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.prefix_violations.is_empty()
    }
}

fn seat_utilities<T: Scalar>(prefs: &Preferences<T>, m: &Matching, o: Orientation, receiver: usize) -> Vec<T> {
    let mut u: Vec<T> = match o {
        Orientation::DoctorProposing => {
            m.doctors_of[receiver].iter().filter_map(|&d| prefs.hospital_utility(receiver, d)).collect()
        }
        Orientation::HospitalProposing => {
            m.doctor_of[receiver].and_then(|h| prefs.doctor_utility(receiver, h)).into_iter().collect()
        }
    };
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite utilities"));
    u
}

/// Compares every in-scope receiver's held utilities, seat by seat, between
/// the full DA in the scenario's orientation and the double-cut run.
pub fn dominance_audit<T: Scalar>(
    instance: &MarketInstance<T>,
    prefs: &Preferences<T>,
    scenario: &DoubleCutScenario<T>,
) -> DominanceReport {
    let o = scenario.orientation;
    let caps = &instance.capacities;
    let (full, full_log) = truncated_da(prefs, caps, &TruncationRule::none(), o);
    let (cut, cut_log) = truncated_da(prefs, caps, &scenario.rule, o);
    let n_r = match o {
        Orientation::DoctorProposing => prefs.n_hospitals(),
        Orientation::HospitalProposing => prefs.n_doctors(),
    };
    let n_p = match o {
        Orientation::DoctorProposing => prefs.n_doctors(),
        Orientation::HospitalProposing => prefs.n_hospitals(),
    };
    let scope = scenario.in_scope_receivers(n_r);
    let violations = scope
        .iter()
        .copied()
        .filter(|&r| {
            let f = seat_utilities(prefs, &full, o, r);
            let c = seat_utilities(prefs, &cut, o, r);
            c.iter().enumerate().any(|(i, &cu)| f.get(i).is_none_or(|&fu| fu < cu))
        })
        .collect();
    let prefix_violations = (0..n_p)
        .filter(|&p| {
            let a = cut_log.sequence_of(p);
            let b = full_log.sequence_of(p);
            a.len() > b.len() || a[..] != b[..a.len()]
        })
        .collect();
    DominanceReport { receivers_checked: scope.len(), violations, prefix_violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::da::doctor_proposing_da;
    use crate::market::{generate, MarketConfig, RatingRange};
    use crate::strategy::select_interviews;

    fn market(n: usize, kappa: usize, k: usize, half: f64, seed: u64) -> (MarketInstance<f64>, InterviewAssignment<f64>, Preferences<f64>) {
        let cfg = MarketConfig::balanced(n, kappa, k).with_cone(half).with_seed(seed);
        let inst = generate::<f64>(&cfg, 0).unwrap();
        let a = select_interviews(&inst);
        let p = Preferences::from(&a);
        (inst, a, p)
    }

    #[test]
    fn degenerate_scenario_is_full_da() {
        let (inst, _, p) = market(60, 3, 4, 0.2, 1);
        let run = run_double_cut(&inst, &p, &DoubleCutScenario::degenerate(Orientation::DoctorProposing));
        assert_eq!(run.matching, doctor_proposing_da(&p, &inst.capacities));
        assert!(dominance_audit(&inst, &p, &DoubleCutScenario::degenerate(Orientation::HospitalProposing)).passed());
    }

    #[test]
    fn huge_alpha_lets_everyone_take_part() {
        let (inst, _, p) = market(40, 2, 3, 10.0, 2);
        let s = DoubleCutScenario::for_hospital(&inst, 3);
        assert!(s.rule.proposers.as_ref().unwrap().iter().all(|&b| b));
        assert!(s.rule.receivers.as_ref().unwrap().iter().all(|&b| b));
        assert!(s.floor < 0.0);
        assert!(dominance_audit(&inst, &p, &s).passed());
    }

    #[test]
    fn floor_is_respected_in_the_log() {
        let (inst, _, p) = market(50, 5, 5, 0.5, 3);
        let h = inst.hospitals_by_rank().nth(4).unwrap();
        let s = DoubleCutScenario::for_hospital(&inst, h);
        let run = run_double_cut(&inst, &p, &s);
        for e in run.log.proposals() {
            if s.rule.limits[e.proposer].is_some() {
                assert!(e.utility.unwrap() >= s.floor);
            }
        }
    }

    #[test]
    fn focal_hospital_is_dominated_on_small_markets() {
        for seed in 0..30 {
            let (inst, _, p) = market(6, 2, 2, 0.4, seed);
            for h in 0..3 {
                let s = DoubleCutScenario::for_hospital(&inst, h);
                let rep = dominance_audit(&inst, &p, &s);
                assert!(rep.passed(), "seed {seed} hospital {h}: {rep:?}");
            }
        }
    }

    #[test]
    fn school_focal_doctor_hears_only_from_her_cone() {
        let cfg = MarketConfig::balanced(300, 3, 4).with_cone(0.15).with_seed(5).with_setting(Setting::SchoolChoice);
        let inst = generate::<f64>(&cfg, 0).unwrap();
        let a = select_interviews(&inst);
        let p = Preferences::from(&a);
        let d = inst.doctors_by_rank().nth(100).unwrap();
        let s = DoubleCutScenario::for_doctor(&inst, d);
        let run = run_double_cut(&inst, &p, &s);
        let cone = crate::strategy::compute_cone(&inst, d);
        for e in run.log.proposals().filter(|e| e.target == Some(d)) {
            assert!(cone.members.contains(&e.proposer));
        }
        assert!(dominance_audit(&inst, &p, &s).passed());
    }

    fn hand_interval() -> (MarketInstance<f64>, InterviewAssignment<f64>) {
        // alpha = 0.1, a = 2: I = [0.50, 0.55), L = [0.35, 0.70)
        let mut cfg = MarketConfig::balanced(4, 1, 2).with_cone(0.2).with_seed(1);
        cfg.a = 2.0;
        cfg.n_hospitals = 5;
        let unit = RatingRange::UNIT;
        let doctors = vec![0.51, 0.53, 0.9, 0.52];
        let hospitals = vec![0.4, 0.6, 0.3, 0.72, 0.95];
        let inst = MarketInstance::from_ratings_in(&cfg, 0, doctors, hospitals, unit, unit).unwrap();
        // h1 has edges from d0 and d1; d0 also sees h2, d1 also sees h0
        let edges = vec![vec![1, 2], vec![1, 0], vec![4], vec![4]];
        let a = InterviewAssignment::from_edges(&inst, &edges);
        (inst, a)
    }

    #[test]
    fn interval_collision_removes_hospital_doctors_and_neighbours() {
        let (inst, a) = hand_interval();
        let ex = interval_preprocess(&inst, &a, 0.50, 0.55).unwrap();
        assert_eq!(ex.interval_size, 3);
        assert_eq!(ex.excluded_doctors, vec![0, 1]);
        assert_eq!(ex.kept_doctors, vec![3]);
        // h1 collides; h2, h0 neighbour removed doctors; h3 sits in [f+a alpha, g+a alpha)
        assert_eq!(ex.excluded_hospitals, vec![0, 1, 2, 3]);
        assert_eq!((ex.band_size, ex.band_kept), (2, 0));
    }

    #[test]
    fn interval_without_collisions_excludes_only_the_band() {
        let (inst, _) = hand_interval();
        let a = InterviewAssignment::from_edges(&inst, &[vec![1], vec![0], vec![4], vec![2]]);
        let ex = interval_preprocess(&inst, &a, 0.50, 0.55).unwrap();
        assert!(ex.excluded_doctors.is_empty());
        assert_eq!(ex.excluded_hospitals, inst.hospitals_in(0.7, 0.75).to_vec());
    }

    #[test]
    fn empty_or_wide_intervals() {
        let (inst, a) = hand_interval();
        assert_eq!(interval_preprocess(&inst, &a, 0.10, 0.15).unwrap(), IntervalExclusions::default());
        assert!(interval_preprocess(&inst, &a, 0.1, 0.3).is_err());
    }

    #[test]
    fn interval_windows_match_the_union_form() {
        let (inst, a) = hand_interval();
        let s = DoubleCutScenario::for_doctor_interval(&inst, &a, 0.50, 0.55).unwrap();
        let (f, g, alpha) = (0.50, 0.55, inst.alpha);
        for lim in s.rule.limits.iter().flatten() {
            for x in (0..2000).map(|i| 1.3 + i as f64 * 0.0002) {
                let in_windows = lim.windows.iter().any(|&(lo, hi)| lo <= x && x < hi);
                let union = (x >= f + 1.0 - alpha && x < g + 1.0 - alpha) || (x >= f + 1.0 && x < g + 1.0);
                let member = s.exclusions.kept_doctors.iter().any(|&d| {
                    let r = inst.doctor_ratings[d];
                    x >= r + 1.0 - alpha && x < r + 1.0
                });
                assert_eq!(in_windows, union && member, "x = {x}");
            }
        }
    }

    #[test]
    fn oracle_trivial_cases() {
        let base = OracleParams { surplus: 1, cone_size: 10, k: 5, alpha: 1.0, psi: 1.0, a: 5.0 };
        let est = independent_proposal_oracle(OracleParams { psi: 0.0, ..base }, 100, 1);
        assert_eq!(est.closed_form, 1.0);
        assert_eq!(est.monte_carlo, 1.0);
        let est = independent_proposal_oracle(base, 10, 1);
        assert_eq!(base.p(), 0.5);
        assert_eq!(est.closed_form, 0.5);
    }

    #[test]
    fn oracle_matches_monte_carlo() {
        let params = OracleParams { surplus: 100, cone_size: 200, k: 5, alpha: 0.3, psi: 1.0, a: 5.0 };
        let est = independent_proposal_oracle(params, 20_000, 7);
        assert!((params.p() - 0.0075).abs() < 1e-15);
        assert!((est.closed_form - 0.9925f64.powi(100)).abs() < 1e-12);
        assert!((est.closed_form - 0.471).abs() < 1e-3);
        let se = (est.closed_form * (1.0 - est.closed_form) / 20_000.0).sqrt();
        assert!((est.monte_carlo - est.closed_form).abs() <= 3.0 * se);
    }

    #[test]
    fn hospital_oracle_is_a_binomial_tail() {
        let params = OracleParams { surplus: 40, cone_size: 50, k: 5, alpha: 0.5, psi: 0.5, a: 5.0 };
        let est = hospital_side_oracle(params, 3, 0.0, 20_000, 3);
        let p: f64 = (5.0 / 50.0) * 0.5 * 0.5;
        let choose = |n: u64, j: u64| (0..j).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
        let want: f64 = (0..3).map(|j| choose(40, j) * p.powi(j as i32) * (1.0 - p).powi(40 - j as i32)).sum();
        assert!((est.closed_form - want).abs() < 1e-12);
        assert!((est.monte_carlo - want).abs() <= 3.0 * (want * (1.0 - want) / 20_000.0).sqrt());
        let one = hospital_side_oracle(params, 1, 0.0, 10, 3);
        assert!((one.closed_form - (1.0 - p).powi(40)).abs() < 1e-12);
    }
}
