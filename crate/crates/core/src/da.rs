//! Many-to-one deferred acceptance in both orientations, with truncation.

use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::{by_utility_desc, Utility};
use crate::strategy::InterviewAssignment;

/// Ranked lists for both sides, with rank lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct Preferences<U> {
    /// Per doctor: `(hospital, U_d)` best first.
    pub doctors: Vec<Vec<(usize, U)>>,
    /// Per hospital: `(doctor, U_h)` best first.
    pub hospitals: Vec<Vec<(usize, U)>>,
    doctor_index: Vec<Vec<(usize, u32)>>,
    hospital_index: Vec<Vec<(usize, u32)>>,
}

fn index_of<U>(lists: &[Vec<(usize, U)>]) -> Vec<Vec<(usize, u32)>> {
    lists
        .iter()
        .map(|l| {
            let mut ix: Vec<(usize, u32)> = l.iter().enumerate().map(|(r, p)| (p.0, r as u32)).collect();
            ix.sort_unstable();
            ix
        })
        .collect()
}

impl<U: Utility> Preferences<U> {
    /// Lists are sorted here, descending by utility with ties to the lower id.
    pub fn from_lists(mut doctors: Vec<Vec<(usize, U)>>, mut hospitals: Vec<Vec<(usize, U)>>) -> Self {
        for l in doctors.iter_mut().chain(hospitals.iter_mut()) {
            l.sort_by(|a, b| by_utility_desc(*a, *b));
        }
        let doctor_index = index_of(&doctors);
        let hospital_index = index_of(&hospitals);
        Self { doctors, hospitals, doctor_index, hospital_index }
    }

    pub fn n_doctors(&self) -> usize {
        self.doctors.len()
    }

    pub fn n_hospitals(&self) -> usize {
        self.hospitals.len()
    }

    /// Position of `hospital` on `doctor`'s list.
    pub fn doctor_rank(&self, doctor: usize, hospital: usize) -> Option<usize> {
        let ix = &self.doctor_index[doctor];
        ix.binary_search_by_key(&hospital, |p| p.0).ok().map(|i| ix[i].1 as usize)
    }

    pub fn hospital_rank(&self, hospital: usize, doctor: usize) -> Option<usize> {
        let ix = &self.hospital_index[hospital];
        ix.binary_search_by_key(&doctor, |p| p.0).ok().map(|i| ix[i].1 as usize)
    }

    pub fn doctor_utility(&self, doctor: usize, hospital: usize) -> Option<U> {
        self.doctor_rank(doctor, hospital).map(|r| self.doctors[doctor][r].1)
    }

    pub fn hospital_utility(&self, hospital: usize, doctor: usize) -> Option<U> {
        self.hospital_rank(hospital, doctor).map(|r| self.hospitals[hospital][r].1)
    }

    /// Both endpoints list each other.
    pub fn is_mutual(&self, doctor: usize, hospital: usize) -> bool {
        self.doctor_rank(doctor, hospital).is_some() && self.hospital_rank(hospital, doctor).is_some()
    }

    fn side(&self, orientation: Orientation) -> (&[Vec<(usize, U)>], &[Vec<(usize, u32)>]) {
        match orientation {
            Orientation::DoctorProposing => (&self.doctors, &self.hospital_index),
            Orientation::HospitalProposing => (&self.hospitals, &self.doctor_index),
        }
    }
}

impl Preferences<i64> {
    /// Integer lists given best first; utilities are descending integers.
    pub fn from_rankings(doctors: &[Vec<usize>], hospitals: &[Vec<usize>]) -> Self {
        let score = |l: &Vec<usize>| l.iter().enumerate().map(|(r, &p)| (p, -(r as i64))).collect();
        Self::from_lists(doctors.iter().map(score).collect(), hospitals.iter().map(score).collect())
    }
}

impl<T: crate::scalar::Scalar> From<&InterviewAssignment<T>> for Preferences<T> {
    fn from(a: &InterviewAssignment<T>) -> Self {
        let (d, h) = a.build_preferences();
        Self::from_lists(d, h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Matching {
    pub doctor_of: Vec<Option<usize>>,
    /// Sorted by doctor id.
    pub doctors_of: Vec<Vec<usize>>,
}

impl Matching {
    pub fn empty(n_doctors: usize, n_hospitals: usize) -> Self {
        Self { doctor_of: vec![None; n_doctors], doctors_of: vec![Vec::new(); n_hospitals] }
    }

    pub fn from_pairs(n_doctors: usize, n_hospitals: usize, pairs: &[(usize, usize)]) -> Self {
        let mut m = Self::empty(n_doctors, n_hospitals);
        for &(d, h) in pairs {
            m.doctor_of[d] = Some(h);
            m.doctors_of[h].push(d);
        }
        for l in &mut m.doctors_of {
            l.sort_unstable();
        }
        m
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.doctor_of.iter().enumerate().filter_map(|(d, h)| h.map(|h| (d, h)))
    }

    pub fn matched_doctors(&self) -> usize {
        self.doctor_of.iter().filter(|h| h.is_some()).count()
    }

    pub fn fill(&self, hospital: usize) -> usize {
        self.doctors_of[hospital].len()
    }

    /// `doctor_of` and `doctors_of` describe the same pairs.
    pub fn is_consistent(&self) -> bool {
        let forward = self.pairs().all(|(d, h)| h < self.doctors_of.len() && self.doctors_of[h].contains(&d));
        let backward = self
            .doctors_of
            .iter()
            .enumerate()
            .all(|(h, ds)| ds.iter().all(|&d| d < self.doctor_of.len() && self.doctor_of[d] == Some(h)));
        forward && backward
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    DoctorProposing,
    HospitalProposing,
}

/// Per-proposer stop conditions checked before each proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposerLimit<U> {
    /// Proposals strictly below this utility are not made.
    pub floor: U,
    /// Half-open utility windows `[lo, hi)` whose hit stops the proposer.
    pub windows: Vec<(U, U)>,
}

/// Restrictions turning a DA run into an initial portion of one.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRule<U> {
    /// Proposers taking part; `None` means everyone.
    pub proposers: Option<Vec<bool>>,
    /// Receivers taking part. Reaching one that does not stops the proposer.
    pub receivers: Option<Vec<bool>>,
    /// Indexed by proposer; empty means no limits.
    pub limits: Vec<Option<ProposerLimit<U>>>,
    /// Receivers at which a proposer proposes and then halts.
    pub focal: Vec<usize>,
}

impl<U> Default for TruncationRule<U> {
    fn default() -> Self {
        Self { proposers: None, receivers: None, limits: Vec::new(), focal: Vec::new() }
    }
}

impl<U> TruncationRule<U> {
    pub fn none() -> Self {
        Self::default()
    }

    fn proposer_active(&self, p: usize) -> bool {
        self.proposers.as_ref().is_none_or(|v| v[p])
    }

    fn receiver_active(&self, r: usize) -> bool {
        self.receivers.as_ref().is_none_or(|v| v[r])
    }

    fn limit(&self, p: usize) -> Option<&ProposerLimit<U>> {
        self.limits.get(p).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HaltReason {
    Exhausted,
    OutOfScope,
    Floor,
    Window,
    Focal,
}

impl HaltReason {
    pub fn as_str(self) -> &'static str {
        match self {
            HaltReason::Exhausted => "exhausted",
            HaltReason::OutOfScope => "out-of-scope",
            HaltReason::Floor => "floor",
            HaltReason::Window => "window",
            HaltReason::Focal => "focal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    /// Accepted into a free seat.
    Hold,
    Reject,
    /// Accepted, bumping the receiver's worst held proposer.
    Displace,
    Halt(HaltReason),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Hold => f.write_str("hold"),
            Outcome::Reject => f.write_str("reject"),
            Outcome::Displace => f.write_str("displace"),
            Outcome::Halt(r) => write!(f, "halt:{}", r.as_str()),
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// One proposal or halt. Agent ids are proposer/receiver ids of the run's
/// orientation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event<U> {
    pub step: usize,
    pub proposer: usize,
    /// `None` for a halt on an exhausted list.
    pub target: Option<usize>,
    /// Proposer's utility for the target.
    pub utility: Option<U>,
    pub outcome: Outcome,
    #[serde(skip)]
    pub displaced: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog<U> {
    pub orientation: Orientation,
    pub events: Vec<Event<U>>,
}

impl<U> EventLog<U> {
    pub fn proposals(&self) -> impl Iterator<Item = &Event<U>> {
        self.events.iter().filter(|e| !matches!(e.outcome, Outcome::Halt(_)))
    }

    /// Targets proposed to by `proposer`, in order.
    pub fn sequence_of(&self, proposer: usize) -> Vec<usize> {
        self.proposals().filter(|e| e.proposer == proposer).filter_map(|e| e.target).collect()
    }

    pub fn halt_of(&self, proposer: usize) -> Option<HaltReason> {
        self.events.iter().rev().find(|e| e.proposer == proposer).and_then(|e| match e.outcome {
            Outcome::Halt(r) => Some(r),
            _ => None,
        })
    }
}

impl<U: Serialize> EventLog<U> {
    /// Line-delimited JSON, one record per event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

/// State of one side's "held" proposals at a receiver: a max-heap on the
/// receiver's rank of the proposer, so the top is the least preferred.
struct Receiver {
    held: BinaryHeap<(u32, usize)>,
    capacity: usize,
}

/// Core engine. `order` fixes the initial queue of proposers.
fn run<U: Utility>(
    prefs: &Preferences<U>,
    capacities: &[usize],
    orientation: Orientation,
    rule: &TruncationRule<U>,
    order: &[usize],
    record: bool,
) -> (Matching, EventLog<U>) {
    let (lists, receiver_index) = prefs.side(orientation);
    let (proposer_caps, receiver_caps): (Vec<usize>, Vec<usize>) = match orientation {
        Orientation::DoctorProposing => (vec![1; prefs.n_doctors()], capacities.to_vec()),
        Orientation::HospitalProposing => (capacities.to_vec(), vec![1; prefs.n_doctors()]),
    };
    let mut receivers: Vec<Receiver> =
        receiver_caps.iter().map(|&c| Receiver { held: BinaryHeap::with_capacity(c + 1), capacity: c }).collect();
    let mut next = vec![0usize; lists.len()];
    let mut held_count = vec![0usize; lists.len()];
    let mut halted = vec![false; lists.len()];
    let mut queued = vec![false; lists.len()];
    let mut queue = VecDeque::with_capacity(order.len());
    for &p in order {
        if rule.proposer_active(p) && !queued[p] {
            queued[p] = true;
            queue.push_back(p);
        }
    }
    let mut events = Vec::new();
    let mut step = 0usize;
    let mut log = |events: &mut Vec<Event<U>>, proposer, target, utility, outcome, displaced| {
        if record {
            events.push(Event { step, proposer, target, utility, outcome, displaced });
        }
        step += 1;
    };

    while let Some(p) = queue.pop_front() {
        queued[p] = false;
        if halted[p] || held_count[p] >= proposer_caps[p] {
            continue;
        }
        let list = &lists[p];
        let Some(&(r, u)) = list.get(next[p]) else {
            halted[p] = true;
            log(&mut events, p, None, None, Outcome::Halt(HaltReason::Exhausted), None);
            continue;
        };
        let halt = if !rule.receiver_active(r) {
            Some(HaltReason::OutOfScope)
        } else if let Some(limit) = rule.limit(p) {
            if u < limit.floor {
                Some(HaltReason::Floor)
            } else if limit.windows.iter().any(|&(lo, hi)| lo <= u && u < hi) {
                Some(HaltReason::Window)
            } else {
                None
            }
        } else {
            None
        };
        if let Some(reason) = halt {
            halted[p] = true;
            log(&mut events, p, Some(r), Some(u), Outcome::Halt(reason), None);
            continue;
        }
        next[p] += 1;
        let recv = &mut receivers[r];
        let outcome = match receiver_index[r].binary_search_by_key(&p, |x| x.0) {
            Err(_) => (Outcome::Reject, None),
            Ok(i) => {
                let rank = receiver_index[r][i].1;
                if recv.held.len() < recv.capacity {
                    recv.held.push((rank, p));
                    held_count[p] += 1;
                    (Outcome::Hold, None)
                } else if recv.held.peek().is_some_and(|&(worst, _)| rank < worst) {
                    let (_, out) = recv.held.pop().expect("non-empty");
                    recv.held.push((rank, p));
                    held_count[p] += 1;
                    held_count[out] -= 1;
                    (Outcome::Displace, Some(out))
                } else {
                    (Outcome::Reject, None)
                }
            }
        };
        log(&mut events, p, Some(r), Some(u), outcome.0, outcome.1);
        if let Some(out) = outcome.1 {
            if !halted[out] && !queued[out] {
                queued[out] = true;
                queue.push_back(out);
            }
        }
        if rule.focal.contains(&r) {
            halted[p] = true;
            log(&mut events, p, Some(r), Some(u), Outcome::Halt(HaltReason::Focal), None);
            continue;
        }
        if held_count[p] < proposer_caps[p] && !queued[p] {
            queued[p] = true;
            queue.push_back(p);
        }
    }

    let mut matching = Matching::empty(prefs.n_doctors(), prefs.n_hospitals());
    for (r, recv) in receivers.iter().enumerate() {
        for &(_, p) in recv.held.iter() {
            let (d, h) = match orientation {
                Orientation::DoctorProposing => (p, r),
                Orientation::HospitalProposing => (r, p),
            };
            matching.doctor_of[d] = Some(h);
            matching.doctors_of[h].push(d);
        }
    }
    for l in &mut matching.doctors_of {
        l.sort_unstable();
    }
    (matching, EventLog { orientation, events })
}

fn canonical(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn proposer_count<U>(prefs: &Preferences<U>, orientation: Orientation) -> usize {
    match orientation {
        Orientation::DoctorProposing => prefs.doctors.len(),
        Orientation::HospitalProposing => prefs.hospitals.len(),
    }
}

pub fn doctor_proposing_da<U: Utility>(prefs: &Preferences<U>, capacities: &[usize]) -> Matching {
    let order = canonical(prefs.n_doctors());
    run(prefs, capacities, Orientation::DoctorProposing, &TruncationRule::none(), &order, false).0
}

pub fn hospital_proposing_da<U: Utility>(prefs: &Preferences<U>, capacities: &[usize]) -> Matching {
    let order = canonical(prefs.n_hospitals());
    run(prefs, capacities, Orientation::HospitalProposing, &TruncationRule::none(), &order, false).0
}

pub fn da<U: Utility>(prefs: &Preferences<U>, capacities: &[usize], orientation: Orientation) -> Matching {
    match orientation {
        Orientation::DoctorProposing => doctor_proposing_da(prefs, capacities),
        Orientation::HospitalProposing => hospital_proposing_da(prefs, capacities),
    }
}

/// Runs DA under `rule` and returns the matching with its event log.
pub fn truncated_da<U: Utility>(
    prefs: &Preferences<U>,
    capacities: &[usize],
    rule: &TruncationRule<U>,
    orientation: Orientation,
) -> (Matching, EventLog<U>) {
    let order = canonical(proposer_count(prefs, orientation));
    run(prefs, capacities, orientation, rule, &order, true)
}

/// Untruncated DA with an explicit initial processing order of proposers.
pub fn run_with_order<U: Utility>(
    prefs: &Preferences<U>,
    capacities: &[usize],
    orientation: Orientation,
    order: &[usize],
) -> (Matching, EventLog<U>) {
    run(prefs, capacities, orientation, &TruncationRule::none(), order, true)
}

/// True iff processing proposers in `order` yields the canonical matching.
pub fn order_invariance_check<U: Utility>(
    prefs: &Preferences<U>,
    capacities: &[usize],
    orientation: Orientation,
    order: &[usize],
) -> bool {
    run_with_order(prefs, capacities, orientation, order).0 == da(prefs, capacities, orientation)
}
