//! Unilateral deviations of one doctor, evaluated with common random numbers.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::da::{doctor_proposing_da, truncated_da, EventLog, Matching, Orientation, Preferences, TruncationRule};
use crate::market::{MarketInstance, Setting, ValueKind};
use crate::scalar::{by_utility_desc, Scalar};
use crate::strategy::{compute_cone, InterviewAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DeviationKind {
    /// Keep the recommended set.
    Null,
    /// Swap the weakest choice for the best-rated unchosen hospital in the cone.
    SwapInCone,
    /// Swap the weakest choice for the hospital nearest `offset` above the cone.
    AboveCone { offset: f64 },
    /// Swap the weakest choice for the hospital nearest `offset` below the cone.
    BelowCone { offset: f64 },
    /// Ignore the cone: the global top `k` by `r(h) + v(d,h)`.
    TopKOfAll,
}

impl DeviationKind {
    pub fn label(&self) -> &'static str {
        match self {
            DeviationKind::Null => "null",
            DeviationKind::SwapInCone => "swap_in_cone",
            DeviationKind::AboveCone { .. } => "above_cone",
            DeviationKind::BelowCone { .. } => "below_cone",
            DeviationKind::TopKOfAll => "top_k_of_all",
        }
    }

    pub fn param(&self) -> Option<f64> {
        match self {
            DeviationKind::AboveCone { offset } | DeviationKind::BelowCone { offset } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationSpec {
    pub focal: usize,
    pub kind: DeviationKind,
    pub replicates: usize,
}

/// The deviant interview set and the offset actually realized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviantSet {
    pub hospitals: Vec<usize>,
    pub dropped: Option<usize>,
    pub added: Option<usize>,
    /// Rating distance of the added hospital from the cone edge.
    pub realized_offset: Option<f64>,
}

/// Chosen hospital with the lowest `r(h) + v(d,h)`.
fn weakest<T: Scalar>(instance: &MarketInstance<T>, doctor: usize, chosen: &[usize]) -> Option<usize> {
    chosen.iter().copied().min_by(|&x, &y| {
        let s = |h| instance.hospital_ratings[h] + instance.value(ValueKind::PrivateDh, doctor, h);
        s(x).partial_cmp(&s(y)).expect("finite").then(x.cmp(&y))
    })
}

fn swap(chosen: &[usize], drop: Option<usize>, add: Option<usize>) -> Vec<usize> {
    match (drop, add) {
        (Some(d), Some(a)) => chosen.iter().map(|&h| if h == d { a } else { h }).collect(),
        (None, Some(a)) => chosen.iter().copied().chain([a]).collect(),
        _ => chosen.to_vec(),
    }
}

/// Builds the focal doctor's interview set under `kind`. When no hospital
/// qualifies (nothing above or below the cone, nothing unchosen in it) the
/// recommended set is returned unchanged.
pub fn deviant_set<T: Scalar>(
    instance: &MarketInstance<T>,
    base: &InterviewAssignment<T>,
    doctor: usize,
    kind: DeviationKind,
) -> DeviantSet {
    let chosen: Vec<usize> = base.doctors[doctor].iter().map(|e| e.hospital).collect();
    let cone = compute_cone(instance, doctor);
    let hr = &instance.hospital_ratings;
    let unchanged = || DeviantSet { hospitals: chosen.clone(), dropped: None, added: None, realized_offset: None };
    let replace = |add: Option<usize>, offset: Option<f64>| {
        let Some(a) = add else { return unchanged() };
        let drop = if chosen.len() >= instance.config.k { weakest(instance, doctor, &chosen) } else { None };
        DeviantSet { hospitals: swap(&chosen, drop, Some(a)), dropped: drop, added: Some(a), realized_offset: offset }
    };
    match kind {
        DeviationKind::Null => unchanged(),
        DeviationKind::SwapInCone => {
            let add = cone.members.iter().rev().copied().find(|h| !chosen.contains(h));
            replace(add, None)
        }
        DeviationKind::AboveCone { offset } => {
            let target = cone.high.to_f64_lossy() + offset;
            let add = (0..hr.len())
                .filter(|&h| hr[h] >= cone.high)
                .min_by(|&x, &y| {
                    let dist = |h: usize| (hr[h].to_f64_lossy() - target).abs();
                    dist(x).partial_cmp(&dist(y)).expect("finite").then(x.cmp(&y))
                });
            replace(add, add.map(|h| hr[h].to_f64_lossy() - cone.high.to_f64_lossy()))
        }
        DeviationKind::BelowCone { offset } => {
            let target = cone.low.to_f64_lossy() - offset;
            let add = (0..hr.len())
                .filter(|&h| hr[h] < cone.low)
                .min_by(|&x, &y| {
                    let dist = |h: usize| (hr[h].to_f64_lossy() - target).abs();
                    dist(x).partial_cmp(&dist(y)).expect("finite").then(x.cmp(&y))
                });
            replace(add, add.map(|h| cone.low.to_f64_lossy() - hr[h].to_f64_lossy()))
        }
        DeviationKind::TopKOfAll => {
            let mut all: Vec<(usize, T)> =
                (0..hr.len()).map(|h| (h, hr[h] + instance.value(ValueKind::PrivateDh, doctor, h))).collect();
            all.sort_by(|a, b| by_utility_desc(*a, *b));
            all.truncate(instance.config.k);
            DeviantSet { hospitals: all.into_iter().map(|p| p.0).collect(), dropped: None, added: None, realized_offset: None }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationResult {
    pub spec: DeviationSpec,
    pub deviant: DeviantSet,
    pub base_mean: f64,
    pub deviant_mean: f64,
    pub gain_mean: f64,
    /// Standard error of the paired per-replicate gains.
    pub gain_se: f64,
    /// Replicates whose two runs produced the very same matching.
    pub identical_matchings: usize,
}

/// Focal utility, 0 when unmatched.
fn focal_utility<T: Scalar>(prefs: &Preferences<T>, m: &Matching, doctor: usize) -> f64 {
    m.doctor_of[doctor].and_then(|h| prefs.doctor_utility(doctor, h)).map_or(0.0, |u| u.to_f64_lossy())
}

/// Runs base and deviant markets over `replicates` redraws of the focal
/// doctor's interview values; everything else is held fixed.
pub fn evaluate_deviation<T: Scalar>(
    instance: &MarketInstance<T>,
    base: &InterviewAssignment<T>,
    spec: DeviationSpec,
) -> DeviationResult {
    let d = spec.focal;
    let deviant = deviant_set(instance, base, d, spec.kind);
    let base_edges: Vec<usize> = base.doctors[d].iter().map(|e| e.hospital).collect();
    let samples: Vec<(f64, f64, bool)> = (0..spec.replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let inst = instance.with_redraw(d, rep);
            let b = base.with_doctor_edges(&inst, d, &base_edges);
            let v = base.with_doctor_edges(&inst, d, &deviant.hospitals);
            let (pb, pv) = (Preferences::from(&b), Preferences::from(&v));
            let (mb, mv) = (doctor_proposing_da(&pb, &instance.capacities), doctor_proposing_da(&pv, &instance.capacities));
            (focal_utility(&pb, &mb, d), focal_utility(&pv, &mv, d), mb == mv)
        })
        .collect();
    let n = samples.len().max(1) as f64;
    let base_mean = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let deviant_mean = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let gains: Vec<f64> = samples.iter().map(|s| s.1 - s.0).collect();
    let gain_mean = gains.iter().sum::<f64>() / n;
    let var = if gains.len() > 1 {
        gains.iter().map(|g| (g - gain_mean).powi(2)).sum::<f64>() / (gains.len() - 1) as f64
    } else {
        0.0
    };
    DeviationResult {
        spec,
        deviant,
        base_mean,
        deviant_mean,
        gain_mean,
        gain_se: (var / n).sqrt(),
        identical_matchings: samples.iter().filter(|s| s.2).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindEstimate {
    pub kind: &'static str,
    pub param: Option<f64>,
    pub max_gain: f64,
    /// Standard error of the maximizing entry.
    pub se: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonEstimate {
    pub per_kind: Vec<KindEstimate>,
    pub max_gain: f64,
    pub max_se: f64,
    /// `c sqrt(ln k / k)` (residency) or `c ln k / k` (school).
    pub reference: f64,
}

/// Mean gain per `(kind, param)` cell averaged over focal doctors, then the
/// maximum over cells of each kind.
pub fn epsilon_estimate(results: &[DeviationResult], setting: Setting, k: usize, c: f64) -> EpsilonEstimate {
    let cells = grid_means(results);
    let mut per_kind: Vec<KindEstimate> = Vec::new();
    for cell in &cells {
        match per_kind.iter_mut().find(|e| e.kind == cell.kind) {
            Some(e) if cell.gain_mean > e.max_gain => {
                *e = KindEstimate { kind: cell.kind, param: cell.param, max_gain: cell.gain_mean, se: cell.gain_se, entries: cell.entries };
            }
            Some(_) => {}
            None => per_kind.push(KindEstimate {
                kind: cell.kind,
                param: cell.param,
                max_gain: cell.gain_mean,
                se: cell.gain_se,
                entries: cell.entries,
            }),
        }
    }
    let top = per_kind.iter().max_by(|a, b| a.max_gain.partial_cmp(&b.max_gain).expect("finite"));
    let kf = k as f64;
    let reference = match setting {
        Setting::SchoolChoice => c * kf.ln() / kf,
        Setting::Residency | Setting::RequestInterview => c * (kf.ln() / kf).sqrt(),
    };
    EpsilonEstimate {
        max_gain: top.map_or(0.0, |t| t.max_gain),
        max_se: top.map_or(0.0, |t| t.se),
        per_kind,
        reference,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub kind: &'static str,
    pub param: Option<f64>,
    pub gain_mean: f64,
    /// Standard error across focal doctors.
    pub gain_se: f64,
    pub entries: usize,
}

/// Per `(kind, param)` mean of per-focal mean gains.
pub fn grid_means(results: &[DeviationResult]) -> Vec<GridCell> {
    let mut keys: Vec<(&'static str, Option<f64>)> = Vec::new();
    for r in results {
        let key = (r.spec.kind.label(), r.spec.kind.param());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(kind, param)| {
            let gains: Vec<f64> = results
                .iter()
                .filter(|r| r.spec.kind.label() == kind && r.spec.kind.param() == param)
                .map(|r| r.gain_mean)
                .collect();
            let n = gains.len() as f64;
            let mean = gains.iter().sum::<f64>() / n;
            let var = if gains.len() > 1 { gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            GridCell { kind, param, gain_mean: mean, gain_se: (var / n).sqrt(), entries: gains.len() }
        })
        .collect()
}

pub const DEVIATION_CSV_HEADER: &str = "focal,kind,param,gain_mean,gain_se,replicates";

pub fn deviation_csv(results: &[DeviationResult]) -> String {
    let mut out = String::from(DEVIATION_CSV_HEADER);
    out.push('\n');
    for r in results {
        let param = r.spec.kind.param().map(|p| p.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.spec.focal, r.spec.kind.label(), param, r.gain_mean, r.gain_se, r.spec.replicates)
            .expect("writing to a String");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalityReport {
    pub changed_doctors: Vec<usize>,
    pub changed_hospitals: Vec<usize>,
    /// Changed agents that no proposal chain from the focal doctor reaches.
    pub unexplained_doctors: Vec<usize>,
    pub unexplained_hospitals: Vec<usize>,
}

impl LocalityReport {
    pub fn passed(&self) -> bool {
        self.unexplained_doctors.is_empty() && self.unexplained_hospitals.is_empty()
    }
}

/// Agents reachable from the focal doctor and her old and new hospitals by
/// following proposals in either log: a tainted doctor taints her targets,
/// a tainted hospital taints everyone who proposed to it.
fn taint(logs: &[&EventLog<f64>], doctor: usize, hospitals: &[usize]) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut ds: BTreeSet<usize> = [doctor].into();
    let mut hs: BTreeSet<usize> = hospitals.iter().copied().collect();
    loop {
        let before = (ds.len(), hs.len());
        for log in logs {
            for e in log.proposals() {
                let Some(t) = e.target else { continue };
                if ds.contains(&e.proposer) {
                    hs.insert(t);
                }
                if hs.contains(&t) {
                    ds.insert(e.proposer);
                }
            }
        }
        if (ds.len(), hs.len()) == before {
            return (ds, hs);
        }
    }
}

/// Diffs base and deviant matchings for one replicate and checks that every
/// change is explained by a proposal chain.
pub fn locality_check(
    instance: &MarketInstance<f64>,
    base: &InterviewAssignment<f64>,
    doctor: usize,
    deviant: &[usize],
    replicate: u64,
) -> LocalityReport {
    let inst = instance.with_redraw(doctor, replicate);
    let old: Vec<usize> = base.doctors[doctor].iter().map(|e| e.hospital).collect();
    let b = base.with_doctor_edges(&inst, doctor, &old);
    let v = base.with_doctor_edges(&inst, doctor, deviant);
    let (pb, pv) = (Preferences::from(&b), Preferences::from(&v));
    let none = TruncationRule::none();
    let (mb, lb) = truncated_da(&pb, &instance.capacities, &none, Orientation::DoctorProposing);
    let (mv, lv) = truncated_da(&pv, &instance.capacities, &none, Orientation::DoctorProposing);
    let seeds: Vec<usize> = old.iter().chain(deviant).copied().collect();
    let (ds, hs) = taint(&[&lb, &lv], doctor, &seeds);
    let changed_doctors: Vec<usize> = (0..mb.doctor_of.len()).filter(|&d| mb.doctor_of[d] != mv.doctor_of[d]).collect();
    let changed_hospitals: Vec<usize> = (0..mb.doctors_of.len()).filter(|&h| mb.doctors_of[h] != mv.doctors_of[h]).collect();
    LocalityReport {
        unexplained_doctors: changed_doctors.iter().copied().filter(|d| !ds.contains(d)).collect(),
        unexplained_hospitals: changed_hospitals.iter().copied().filter(|h| !hs.contains(h)).collect(),
        changed_doctors,
        changed_hospitals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{generate, MarketConfig};
    use crate::strategy::select_interviews;

    fn setup(setting: Setting, k: usize) -> (MarketInstance<f64>, InterviewAssignment<f64>) {
        let cfg = MarketConfig::balanced(400, 5, k).with_cone(0.15).with_seed(21).with_setting(setting);
        let inst = generate::<f64>(&cfg, 0).unwrap();
        let a = select_interviews(&inst);
        (inst, a)
    }

    fn mid_doctor(inst: &MarketInstance<f64>) -> usize {
        inst.doctors_by_rank().nth(150).unwrap()
    }

    #[test]
    fn null_deviation_gains_nothing() {
        let (inst, a) = setup(Setting::Residency, 5);
        let d = mid_doctor(&inst);
        let r = evaluate_deviation(&inst, &a, DeviationSpec { focal: d, kind: DeviationKind::Null, replicates: 10 });
        assert_eq!(r.gain_mean, 0.0);
        assert_eq!(r.identical_matchings, 10);
    }

    #[test]
    fn swap_replaces_the_weakest_choice() {
        let (inst, a) = setup(Setting::Residency, 5);
        let d = mid_doctor(&inst);
        let s = deviant_set(&inst, &a, d, DeviationKind::SwapInCone);
        let cone = compute_cone(&inst, d);
        let added = s.added.unwrap();
        assert!(cone.members.contains(&added));
        assert!(!a.has_edge(d, added));
        assert_eq!(s.hospitals.len(), 5);
        assert!(!s.hospitals.contains(&s.dropped.unwrap()));
    }

    #[test]
    fn above_cone_picks_the_nearest_hospital() {
        let (inst, a) = setup(Setting::Residency, 5);
        let d = mid_doctor(&inst);
        let cone = compute_cone(&inst, d);
        let s = deviant_set(&inst, &a, d, DeviationKind::AboveCone { offset: 0.05 });
        let h = s.added.unwrap();
        assert!(inst.hospital_ratings[h] >= cone.high);
        let target = cone.high + 0.05;
        let best = (0..inst.n_hospitals())
            .filter(|&x| inst.hospital_ratings[x] >= cone.high)
            .map(|x| (inst.hospital_ratings[x] - target).abs())
            .fold(f64::INFINITY, f64::min);
        assert_eq!((inst.hospital_ratings[h] - target).abs(), best);
        assert!((s.realized_offset.unwrap() - (inst.hospital_ratings[h] - cone.high)).abs() < 1e-12);
    }

    #[test]
    fn school_above_cone_never_helps() {
        let (inst, a) = setup(Setting::SchoolChoice, 5);
        let d = mid_doctor(&inst);
        let base = evaluate_deviation(&inst, &a, DeviationSpec { focal: d, kind: DeviationKind::AboveCone { offset: 0.1 }, replicates: 8 });
        // schools above the cone are full of students rated above d
        assert!(base.gain_mean <= 0.0, "{base:?}");
    }

    #[test]
    fn whole_range_cone_leaves_nothing_to_add() {
        let cfg = MarketConfig::balanced(20, 1, 20).with_cone(2.0).with_seed(3);
        let inst = generate::<f64>(&cfg, 0).unwrap();
        let a = select_interviews(&inst);
        for kind in [DeviationKind::SwapInCone, DeviationKind::AboveCone { offset: 0.0 }, DeviationKind::BelowCone { offset: 0.0 }] {
            let s = deviant_set(&inst, &a, 4, kind);
            assert_eq!(s.added, None);
        }
        let r = evaluate_deviation(&inst, &a, DeviationSpec { focal: 4, kind: DeviationKind::TopKOfAll, replicates: 4 });
        assert_eq!(r.gain_mean, 0.0);
    }

    #[test]
    fn changes_lie_on_proposal_chains() {
        let (inst, a) = setup(Setting::Residency, 5);
        let d = mid_doctor(&inst);
        for kind in [DeviationKind::SwapInCone, DeviationKind::AboveCone { offset: 0.0 }, DeviationKind::TopKOfAll] {
            let s = deviant_set(&inst, &a, d, kind);
            for rep in 0..3 {
                let rep = locality_check(&inst, &a, d, &s.hospitals, rep);
                assert!(rep.passed(), "{rep:?}");
            }
        }
    }

    #[test]
    fn csv_rows() {
        let (inst, a) = setup(Setting::Residency, 5);
        let d = mid_doctor(&inst);
        let r = evaluate_deviation(&inst, &a, DeviationSpec { focal: d, kind: DeviationKind::BelowCone { offset: 0.03 }, replicates: 2 });
        let csv = deviation_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(DEVIATION_CSV_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[1], "below_cone");
        assert_eq!(row[2], "0.03");
        assert_eq!(row[5], "2");
    }

    #[test]
    fn epsilon_takes_the_best_cell() {
        let mk = |kind, gain| DeviationResult {
            spec: DeviationSpec { focal: 0, kind, replicates: 1 },
            deviant: DeviantSet { hospitals: vec![], dropped: None, added: None, realized_offset: None },
            base_mean: 0.0,
            deviant_mean: gain,
            gain_mean: gain,
            gain_se: 0.0,
            identical_matchings: 0,
        };
        let rs = vec![
            mk(DeviationKind::AboveCone { offset: 0.0 }, 0.02),
            mk(DeviationKind::AboveCone { offset: 0.1 }, 0.01),
            mk(DeviationKind::SwapInCone, 0.05),
            mk(DeviationKind::TopKOfAll, -0.3),
        ];
        let e = epsilon_estimate(&rs, Setting::Residency, 5, 10.0);
        assert_eq!(e.max_gain, 0.05);
        assert_eq!(e.per_kind.iter().find(|k| k.kind == "above_cone").unwrap().param, Some(0.0));
        assert!((e.reference - 10.0 * (5f64.ln() / 5.0).sqrt()).abs() < 1e-12);
    }
}
