//! Ground-truth verifiers for small and large instances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::da::{doctor_proposing_da, hospital_proposing_da, Matching, Preferences};
use crate::scalar::{Scalar, Utility};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("matching shape {doctors}x{hospitals} does not fit the preferences")]
    Shape { doctors: usize, hospitals: usize },
    #[error("matching is internally inconsistent")]
    Inconsistent,
    #[error("hospital {hospital} holds {held} doctors but has {capacity} seats")]
    OverCapacity { hospital: usize, held: usize, capacity: usize },
    #[error("doctor {doctor} is matched to hospital {hospital} without a mutual listing")]
    NotAnEdge { doctor: usize, hospital: usize },
    #[error("instance too large to enumerate: {doctors} doctors, {hospitals} hospitals, {seats} seats")]
    TooLarge { doctors: usize, hospitals: usize, seats: usize },
}

/// Why the hospital side of a blocking pair agrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Witness {
    UnderCapacity,
    /// The doctor the hospital would drop.
    Displaces(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockingPair<U> {
    pub doctor: usize,
    pub hospital: usize,
    /// `U_d(h) - U_d(mu(d))`; `None` when the doctor is unmatched.
    pub doctor_gain: Option<U>,
    pub witness: Witness,
}

/// Value of staying unmatched when utilities are compared or averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OutsideOption {
    /// Any match beats none.
    #[default]
    NegInfinity,
    Zero,
}

impl OutsideOption {
    pub fn value<T: Scalar>(self) -> T {
        match self {
            OutsideOption::NegInfinity => T::neg_infinity(),
            OutsideOption::Zero => T::zero(),
        }
    }
}

/// Checks a matching against the preferences and capacities.
pub fn check_integrity<U: Utility>(
    prefs: &Preferences<U>,
    capacities: &[usize],
    matching: &Matching,
) -> Result<(), AnalysisError> {
    if matching.doctor_of.len() != prefs.n_doctors()
        || matching.doctors_of.len() != prefs.n_hospitals()
        || capacities.len() != prefs.n_hospitals()
    {
        return Err(AnalysisError::Shape { doctors: matching.doctor_of.len(), hospitals: matching.doctors_of.len() });
    }
    if !matching.is_consistent() {
        return Err(AnalysisError::Inconsistent);
    }
    for (h, ds) in matching.doctors_of.iter().enumerate() {
        if ds.len() > capacities[h] {
            return Err(AnalysisError::OverCapacity { hospital: h, held: ds.len(), capacity: capacities[h] });
        }
    }
    for (d, h) in matching.pairs() {
        if !prefs.is_mutual(d, h) {
            return Err(AnalysisError::NotAnEdge { doctor: d, hospital: h });
        }
    }
    Ok(())
}

/// Every mutually listed pair that blocks `matching`.
pub fn find_blocking_pairs<U: Utility>(
    prefs: &Preferences<U>,
    capacities: &[usize],
    matching: &Matching,
) -> Result<Vec<BlockingPair<U>>, AnalysisError> {
    check_integrity(prefs, capacities, matching)?;
    let mut out = Vec::new();
    for d in 0..prefs.n_doctors() {
        let current = matching.doctor_of[d];
        let cutoff = current.map_or(prefs.doctors[d].len(), |h| prefs.doctor_rank(d, h).expect("checked edge"));
        for &(h, u) in &prefs.doctors[d][..cutoff] {
            let Some(rank) = prefs.hospital_rank(h, d) else { continue };
            let held = &matching.doctors_of[h];
            let witness = if held.len() < capacities[h] {
                Witness::UnderCapacity
            } else {
                let worst = held
                    .iter()
                    .copied()
                    .max_by_key(|&x| prefs.hospital_rank(h, x).expect("checked edge"))
                    .expect("full hospital has a doctor");
                if prefs.hospital_rank(h, worst).expect("checked edge") > rank {
                    Witness::Displaces(worst)
                } else {
                    continue;
                }
            };
            let doctor_gain = current.map(|c| u - prefs.doctor_utility(d, c).expect("checked edge"));
            out.push(BlockingPair { doctor: d, hospital: h, doctor_gain, witness });
        }
    }
    Ok(out)
}

pub fn is_stable<U: Utility>(prefs: &Preferences<U>, capacities: &[usize], matching: &Matching) -> bool {
    matches!(find_blocking_pairs(prefs, capacities, matching), Ok(v) if v.is_empty())
}

pub const MAX_ENUM_DOCTORS: usize = 8;
pub const MAX_ENUM_HOSPITALS: usize = 5;
pub const MAX_ENUM_SEATS: usize = 8;

/// All stable matchings by brute force over mutually listed pairs.
pub fn enumerate_stable<U: Utility>(
    prefs: &Preferences<U>,
    capacities: &[usize],
) -> Result<Vec<Matching>, AnalysisError> {
    let seats: usize = capacities.iter().sum();
    if prefs.n_doctors() > MAX_ENUM_DOCTORS || prefs.n_hospitals() > MAX_ENUM_HOSPITALS || seats > MAX_ENUM_SEATS {
        return Err(AnalysisError::TooLarge { doctors: prefs.n_doctors(), hospitals: prefs.n_hospitals(), seats });
    }
    if capacities.len() != prefs.n_hospitals() {
        return Err(AnalysisError::Shape { doctors: prefs.n_doctors(), hospitals: capacities.len() });
    }
    let mut out = Vec::new();
    let mut assign = vec![None; prefs.n_doctors()];
    let mut left = capacities.to_vec();
    walk(prefs, capacities, 0, &mut assign, &mut left, &mut out);
    Ok(out)
}

fn walk<U: Utility>(
    prefs: &Preferences<U>,
    capacities: &[usize],
    d: usize,
    assign: &mut Vec<Option<usize>>,
    left: &mut Vec<usize>,
    out: &mut Vec<Matching>,
) {
    if d == prefs.n_doctors() {
        let pairs: Vec<(usize, usize)> = assign.iter().enumerate().filter_map(|(d, h)| h.map(|h| (d, h))).collect();
        let m = Matching::from_pairs(prefs.n_doctors(), prefs.n_hospitals(), &pairs);
        if is_stable(prefs, capacities, &m) {
            out.push(m);
        }
        return;
    }
    assign[d] = None;
    walk(prefs, capacities, d + 1, assign, left, out);
    for &(h, _) in &prefs.doctors[d] {
        if left[h] > 0 && prefs.hospital_rank(h, d).is_some() {
            left[h] -= 1;
            assign[d] = Some(h);
            walk(prefs, capacities, d + 1, assign, left, out);
            left[h] += 1;
            assign[d] = None;
        }
    }
}

/// Doctor's position for her partner in `m`; unmatched ranks below every listed hospital.
fn doctor_position<U: Utility>(prefs: &Preferences<U>, m: &Matching, d: usize) -> usize {
    m.doctor_of[d].map_or(usize::MAX, |h| prefs.doctor_rank(d, h).unwrap_or(usize::MAX))
}

/// Every doctor weakly prefers her partner in `a` to her partner in `b`.
pub fn doctors_weakly_prefer<U: Utility>(prefs: &Preferences<U>, a: &Matching, b: &Matching) -> bool {
    (0..prefs.n_doctors()).all(|d| doctor_position(prefs, a, d) <= doctor_position(prefs, b, d))
}

/// Both orientations give the same matching. In school-choice markets this
/// is the uniqueness of the stable matching.
pub fn uniqueness_check_school<U: Utility>(prefs: &Preferences<U>, capacities: &[usize]) -> bool {
    doctor_proposing_da(prefs, capacities) == hospital_proposing_da(prefs, capacities)
}

/// Same matched doctors and the same per-hospital fill in both orientations.
pub fn rural_hospital_check<U: Utility>(prefs: &Preferences<U>, capacities: &[usize]) -> bool {
    let a = doctor_proposing_da(prefs, capacities);
    let b = hospital_proposing_da(prefs, capacities);
    let same_doctors = a.doctor_of.iter().zip(&b.doctor_of).all(|(x, y)| x.is_some() == y.is_some());
    let same_fill = (0..prefs.n_hospitals()).all(|h| a.fill(h) == b.fill(h));
    same_doctors && same_fill
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latin() -> Preferences<i64> {
        let d = [vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]];
        let h = [vec![1, 2, 0], vec![2, 0, 1], vec![0, 1, 2]];
        Preferences::from_rankings(&d, &h)
    }

    #[test]
    fn da_output_has_no_blocking_pairs() {
        let p = latin();
        let m = doctor_proposing_da(&p, &[1, 1, 1]);
        assert!(find_blocking_pairs(&p, &[1, 1, 1], &m).unwrap().is_empty());
    }

    #[test]
    fn swapped_partners_block() {
        // d0 and d1 both prefer h0; h0 prefers d0. DA gives d0-h0, d1-h1.
        let p = Preferences::from_rankings(&[vec![0, 1], vec![0, 1]], &[vec![0, 1], vec![0, 1]]);
        let m = Matching::from_pairs(2, 2, &[(0, 1), (1, 0)]);
        let bp = find_blocking_pairs(&p, &[1, 1], &m).unwrap();
        assert_eq!(bp.len(), 1);
        assert_eq!((bp[0].doctor, bp[0].hospital), (0, 0));
        assert_eq!(bp[0].witness, Witness::Displaces(1));
        assert_eq!(bp[0].doctor_gain, Some(1));
    }

    #[test]
    fn empty_matching_is_blocked_by_a_mutual_edge() {
        let p = Preferences::from_rankings(&[vec![0]], &[vec![0]]);
        let bp = find_blocking_pairs(&p, &[1], &Matching::empty(1, 1)).unwrap();
        assert_eq!(bp.len(), 1);
        assert_eq!(bp[0].witness, Witness::UnderCapacity);
        assert_eq!(bp[0].doctor_gain, None);
    }

    #[test]
    fn integrity_errors() {
        let p = Preferences::from_rankings(&[vec![0], vec![0]], &[vec![0]]);
        let over = Matching::from_pairs(2, 1, &[(0, 0), (1, 0)]);
        assert!(matches!(find_blocking_pairs(&p, &[2], &over), Err(AnalysisError::NotAnEdge { .. })));
        assert!(matches!(find_blocking_pairs(&p, &[1], &over), Err(AnalysisError::OverCapacity { .. })));
        let mut broken = Matching::from_pairs(2, 1, &[(0, 0)]);
        broken.doctors_of[0].clear();
        assert_eq!(find_blocking_pairs(&p, &[1], &broken), Err(AnalysisError::Inconsistent));
    }

    #[test]
    fn singleton_has_one_stable_matching() {
        let p = Preferences::from_rankings(&[vec![0]], &[vec![0]]);
        assert_eq!(enumerate_stable(&p, &[1]).unwrap().len(), 1);
    }

    #[test]
    fn latin_square_has_three_stable_matchings() {
        let all = enumerate_stable(&latin(), &[1, 1, 1]).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.iter().all(|m| is_stable(&latin(), &[1, 1, 1], m)));
    }

    #[test]
    fn guard_refuses_large_instances() {
        let d: Vec<Vec<usize>> = vec![vec![0]; 9];
        let p = Preferences::from_rankings(&d, &[vec![0, 1, 2, 3, 4, 5, 6, 7, 8]]);
        assert!(matches!(enumerate_stable(&p, &[1]), Err(AnalysisError::TooLarge { .. })));
    }

    #[test]
    fn school_lists_give_one_stable_matching() {
        // every school ranks students 2 > 0 > 1
        let d = [vec![0, 1], vec![1, 0], vec![0, 1]];
        let h = [vec![2, 0, 1], vec![2, 0, 1]];
        let p = Preferences::from_rankings(&d, &h);
        assert_eq!(enumerate_stable(&p, &[1, 1]).unwrap().len(), 1);
        assert!(uniqueness_check_school(&p, &[1, 1]));
        assert!(rural_hospital_check(&p, &[1, 1]));
    }

    #[test]
    fn extremal_matchings_on_the_latin_square() {
        let p = latin();
        let all = enumerate_stable(&p, &[1, 1, 1]).unwrap();
        let best = doctor_proposing_da(&p, &[1, 1, 1]);
        let worst = hospital_proposing_da(&p, &[1, 1, 1]);
        assert!(all.iter().all(|m| doctors_weakly_prefer(&p, &best, m) && doctors_weakly_prefer(&p, m, &worst)));
    }
}
