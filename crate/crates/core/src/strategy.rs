//! Cones, interview selection and post-interview utilities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market::{MarketInstance, Setting, ValueKind};
use crate::scalar::{by_utility_desc, Scalar};

/// Rating band `[low, high)` a doctor draws interview partners from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone<T> {
    pub doctor: usize,
    pub low: T,
    pub high: T,
    /// Member hospitals, ascending by rating.
    pub members: Vec<usize>,
}

pub fn compute_cone<T: Scalar>(instance: &MarketInstance<T>, doctor: usize) -> Cone<T> {
    let r = instance.doctor_ratings[doctor];
    let low = (r - instance.half_width).max(T::of(instance.hospital_range.low));
    let high = (r + instance.half_width).min(T::of(instance.hospital_range.high));
    Cone { doctor, low, high, members: instance.hospitals_in(low, high).to_vec() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoctorEdge<T> {
    pub hospital: usize,
    /// `r(h)`
    pub rating: T,
    /// `v(d,h)`
    pub private: T,
    /// `iota(d,h)`
    pub interview: T,
    pub utility: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HospitalEdge<T> {
    pub doctor: usize,
    /// `r(d)`
    pub rating: T,
    /// `iota(h,d)`
    pub interview: T,
    pub utility: T,
}

/// Interview edges with the utilities both endpoints attach to them.
///
/// Hospital lists are the exact inverse of doctor lists, ordered by doctor id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterviewAssignment<T> {
    pub setting: Setting,
    pub nu_d: T,
    pub nu_h: T,
    pub capacities: Vec<usize>,
    /// Per doctor, in selection order.
    pub doctors: Vec<Vec<DoctorEdge<T>>>,
    pub hospitals: Vec<Vec<HospitalEdge<T>>>,
    pub cone_sizes: Vec<usize>,
}

pub fn doctor_utility<T: Scalar>(rating: T, private: T, interview: T, nu_d: T) -> T {
    rating + private + nu_d * interview
}

pub fn hospital_utility<T: Scalar>(setting: Setting, rating: T, interview: T, nu_h: T) -> T {
    match setting {
        Setting::SchoolChoice => rating,
        Setting::Residency | Setting::RequestInterview => rating + nu_h * interview,
    }
}

/// Picks the `k` members with the largest key; ties go to the lower id.
fn top_by<T: Scalar>(members: &[usize], k: usize, key: impl Fn(usize) -> T) -> Vec<usize> {
    let mut scored: Vec<(usize, T)> = members.iter().map(|&h| (h, key(h))).collect();
    scored.sort_by(|a, b| by_utility_desc(*a, *b));
    scored.truncate(k);
    scored.into_iter().map(|(h, _)| h).collect()
}

/// Selection key for hospital `h`. With equal capacities it is `v(d,h)`; with
/// unequal ones a hospital with `kappa_h` seats scores `1 - (1 - v) / kappa_h`,
/// so wider hospitals are picked more often.
fn selection_key<T: Scalar>(instance: &MarketInstance<T>, uniform: bool, doctor: usize, hospital: usize) -> T {
    let v = instance.value(ValueKind::PrivateDh, doctor, hospital);
    if uniform {
        v
    } else {
        T::one() - (T::one() - v) / T::of(instance.capacities[hospital] as f64)
    }
}

fn doctor_choices<T: Scalar>(instance: &MarketInstance<T>, budget: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let uniform = instance.config.capacity.is_uniform();
    (0..instance.n_doctors())
        .into_par_iter()
        .map(|d| {
            let cone = compute_cone(instance, d);
            let chosen = top_by(&cone.members, budget, |h| selection_key(instance, uniform, d, h));
            (chosen, cone.members.len())
        })
        .unzip()
}

/// Recommended strategy: each doctor interviews the top `k` of her cone by private value.
pub fn select_interviews<T: Scalar>(instance: &MarketInstance<T>) -> InterviewAssignment<T> {
    let (edges, cone_sizes) = doctor_choices(instance, instance.config.k);
    let mut out = InterviewAssignment::from_edges(instance, &edges);
    out.cone_sizes = cone_sizes;
    out
}

/// Number of interview grants per hospital, `max(1, floor(kappa k^1.5))`.
pub fn grant_budget(kappa: usize, k: usize) -> usize {
    ((kappa as f64 * (k as f64).powf(1.5)).floor() as usize).max(1)
}

/// Request-interview protocol.
///
/// Doctors request their top `k^2` in-cone hospitals by private value; each
/// hospital grants its budget to the requesters it values most privately;
/// each hospital then keeps only its `kappa k` highest-utility interviewees,
/// and the dropped pairs disappear from both sides.
pub fn request_interview_protocol<T: Scalar>(instance: &MarketInstance<T>) -> InterviewAssignment<T> {
    let k = instance.config.k;
    let (requests, cone_sizes) = doctor_choices(instance, k * k);
    let mut received: Vec<Vec<usize>> = vec![Vec::new(); instance.n_hospitals()];
    for (d, hs) in requests.iter().enumerate() {
        for &h in hs {
            received[h].push(d);
        }
    }
    let mut granted: Vec<Vec<usize>> = vec![Vec::new(); instance.n_doctors()];
    for (h, ds) in received.iter().enumerate() {
        let budget = grant_budget(instance.capacities[h], k);
        for d in top_by(ds, budget, |d| instance.value(ValueKind::PrivateHd, d, h)) {
            granted[d].push(h);
        }
    }
    for (d, hs) in granted.iter_mut().enumerate() {
        // keep the doctor's request order
        let order = &requests[d];
        hs.sort_by_key(|h| order.iter().position(|x| x == h));
    }
    let mut out = InterviewAssignment::from_edges(instance, &granted);
    out.cone_sizes = cone_sizes;
    for h in 0..out.hospitals.len() {
        let limit = instance.capacities[h] * k;
        if out.hospitals[h].len() > limit {
            let mut listed: Vec<(usize, T)> = out.hospitals[h].iter().map(|e| (e.doctor, e.utility)).collect();
            listed.sort_by(|a, b| by_utility_desc(*a, *b));
            for &(d, _) in &listed[limit..] {
                out.doctors[d].retain(|e| e.hospital != h);
            }
            let keep: Vec<usize> = listed[..limit].iter().map(|p| p.0).collect();
            out.hospitals[h].retain(|e| keep.contains(&e.doctor));
        }
    }
    out
}

/// Dispatches on the instance's setting.
pub fn assign_interviews<T: Scalar>(instance: &MarketInstance<T>) -> InterviewAssignment<T> {
    match instance.config.setting {
        Setting::Residency | Setting::SchoolChoice => select_interviews(instance),
        Setting::RequestInterview => request_interview_protocol(instance),
    }
}

impl<T: Scalar> InterviewAssignment<T> {
    /// Materializes values for an explicit edge set (per doctor, in order).
    pub fn from_edges(instance: &MarketInstance<T>, edges: &[Vec<usize>]) -> Self {
        let setting = instance.config.setting;
        let nu_d = T::of(instance.config.nu_d);
        let nu_h = T::of(instance.config.nu_h);
        let doctors: Vec<Vec<DoctorEdge<T>>> = edges
            .iter()
            .enumerate()
            .map(|(d, hs)| hs.iter().map(|&h| Self::doctor_edge(instance, d, h, nu_d)).collect())
            .collect();
        let mut hospitals: Vec<Vec<HospitalEdge<T>>> = vec![Vec::new(); instance.n_hospitals()];
        for (d, hs) in edges.iter().enumerate() {
            for &h in hs {
                hospitals[h].push(Self::hospital_edge(instance, d, h, setting, nu_h));
            }
        }
        Self {
            setting,
            nu_d,
            nu_h,
            capacities: instance.capacities.clone(),
            doctors,
            hospitals,
            cone_sizes: vec![0; edges.len()],
        }
    }

    fn doctor_edge(instance: &MarketInstance<T>, d: usize, h: usize, nu_d: T) -> DoctorEdge<T> {
        let rating = instance.hospital_ratings[h];
        let private = instance.value(ValueKind::PrivateDh, d, h);
        let interview = instance.value(ValueKind::InterviewDh, d, h);
        DoctorEdge { hospital: h, rating, private, interview, utility: doctor_utility(rating, private, interview, nu_d) }
    }

    fn hospital_edge(instance: &MarketInstance<T>, d: usize, h: usize, setting: Setting, nu_h: T) -> HospitalEdge<T> {
        let rating = instance.doctor_ratings[d];
        let interview = instance.value(ValueKind::InterviewHd, d, h);
        HospitalEdge { doctor: d, rating, interview, utility: hospital_utility(setting, rating, interview, nu_h) }
    }

    /// Replaces one doctor's edges, reading fresh values from `instance`
    /// (which may carry a redraw for that doctor). Everyone else is untouched.
    pub fn with_doctor_edges(&self, instance: &MarketInstance<T>, doctor: usize, hospitals: &[usize]) -> Self {
        let mut out = self.clone();
        for e in &self.doctors[doctor] {
            out.hospitals[e.hospital].retain(|x| x.doctor != doctor);
        }
        out.doctors[doctor] = hospitals.iter().map(|&h| Self::doctor_edge(instance, doctor, h, self.nu_d)).collect();
        for &h in hospitals {
            let edge = Self::hospital_edge(instance, doctor, h, self.setting, self.nu_h);
            let list = &mut out.hospitals[h];
            let at = list.partition_point(|x| x.doctor < doctor);
            list.insert(at, edge);
        }
        out
    }

    pub fn n_doctors(&self) -> usize {
        self.doctors.len()
    }

    pub fn n_hospitals(&self) -> usize {
        self.hospitals.len()
    }

    pub fn edge_count(&self) -> usize {
        self.doctors.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, doctor: usize, hospital: usize) -> bool {
        self.doctors[doctor].iter().any(|e| e.hospital == hospital)
    }

    pub fn doctor_edge_to(&self, doctor: usize, hospital: usize) -> Option<&DoctorEdge<T>> {
        self.doctors[doctor].iter().find(|e| e.hospital == hospital)
    }

    pub fn hospital_edge_to(&self, hospital: usize, doctor: usize) -> Option<&HospitalEdge<T>> {
        self.hospitals[hospital].iter().find(|e| e.doctor == doctor)
    }

    /// Doctors whose strategy produced no interviews.
    pub fn strategy_unmatched(&self) -> Vec<usize> {
        (0..self.n_doctors()).filter(|&d| self.doctors[d].is_empty()).collect()
    }

    /// Ranked lists `(doctor lists, hospital lists)`, descending by utility,
    /// ties to the lower partner id.
    pub fn build_preferences(&self) -> (Vec<Vec<(usize, T)>>, Vec<Vec<(usize, T)>>) {
        let rank = |mut v: Vec<(usize, T)>| {
            v.sort_by(|a, b| by_utility_desc(*a, *b));
            v
        };
        let doctors = self.doctors.iter().map(|l| rank(l.iter().map(|e| (e.hospital, e.utility)).collect())).collect();
        let hospitals = self.hospitals.iter().map(|l| rank(l.iter().map(|e| (e.doctor, e.utility)).collect())).collect();
        (doctors, hospitals)
    }

    /// Recomputes every utility with new interview weights.
    pub fn weighted_utilities(&self, nu_d: T, nu_h: T) -> Self {
        let mut out = self.clone();
        out.nu_d = nu_d;
        out.nu_h = nu_h;
        for e in out.doctors.iter_mut().flatten() {
            e.utility = doctor_utility(e.rating, e.private, e.interview, nu_d);
        }
        for e in out.hospitals.iter_mut().flatten() {
            e.utility = hospital_utility(out.setting, e.rating, e.interview, nu_h);
        }
        out
    }

    /// Checks that the hospital lists are the inverse of the doctor lists.
    pub fn is_symmetric(&self) -> bool {
        let forward = self
            .doctors
            .iter()
            .enumerate()
            .all(|(d, l)| l.iter().all(|e| self.hospitals[e.hospital].iter().filter(|x| x.doctor == d).count() == 1));
        let backward = self
            .hospitals
            .iter()
            .enumerate()
            .all(|(h, l)| l.iter().all(|e| self.doctors[e.doctor].iter().filter(|x| x.hospital == h).count() == 1));
        forward && backward
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{generate, MarketConfig};

    fn by_hand(doctors: Vec<f64>, hospitals: Vec<f64>, k: usize, half: f64) -> MarketInstance<f64> {
        let mut cfg = MarketConfig::balanced(doctors.len(), 1, k).with_cone(half).with_seed(3);
        cfg.n_hospitals = hospitals.len();
        let unit = crate::market::RatingRange::UNIT;
        MarketInstance::from_ratings_in(&cfg, 0, doctors, hospitals, unit, unit).unwrap()
    }

    #[test]
    fn cone_in_the_middle() {
        let inst = by_hand(vec![0.5], vec![0.3, 0.5, 0.9], 1, 0.15);
        let cone = compute_cone(&inst, 0);
        assert!((cone.low - 0.35).abs() < 1e-12 && (cone.high - 0.65).abs() < 1e-12);
        assert_eq!(cone.members, vec![1]);
    }

    #[test]
    fn cone_clamps_at_the_bottom() {
        let inst = by_hand(vec![0.05], vec![0.1, 0.19, 0.21], 1, 0.15);
        let cone = compute_cone(&inst, 0);
        assert_eq!(cone.low, 0.0);
        assert!((cone.high - 0.2).abs() < 1e-12);
        assert_eq!(cone.members, vec![0, 1]);
    }

    #[test]
    fn selection_takes_everyone_when_the_cone_is_small() {
        let inst = by_hand(vec![0.5, 0.52], vec![0.45, 0.5, 0.55, 0.95], 3, 0.15);
        let a = select_interviews(&inst);
        let mut got: Vec<usize> = a.doctors[0].iter().map(|e| e.hospital).collect();
        got.sort();
        assert_eq!(got, vec![0, 1, 2]);
    }

    #[test]
    fn selection_drops_the_minimum_private_value() {
        let inst = by_hand(vec![0.5, 0.52], vec![0.40, 0.45, 0.5, 0.55, 0.6], 4, 0.15);
        let a = select_interviews(&inst);
        let cone = compute_cone(&inst, 0);
        assert_eq!(cone.members.len(), 5);
        let argmin = *cone
            .members
            .iter()
            .min_by(|&&x, &&y| {
                inst.value(ValueKind::PrivateDh, 0, x).partial_cmp(&inst.value(ValueKind::PrivateDh, 0, y)).unwrap()
            })
            .unwrap();
        assert_eq!(a.doctors[0].len(), 4);
        assert!(!a.has_edge(0, argmin));
    }

    #[test]
    fn empty_cone_leaves_the_doctor_without_interviews() {
        let inst = by_hand(vec![0.05, 0.9], vec![0.8, 0.85], 1, 0.1);
        let a = select_interviews(&inst);
        assert_eq!(a.strategy_unmatched(), vec![0]);
    }

    #[test]
    fn grant_budget_examples() {
        assert_eq!(grant_budget(1, 4), 8);
        assert_eq!(grant_budget(5, 5), 55);
        assert_eq!(grant_budget(1, 1), 1);
    }

    #[test]
    fn preference_order_is_descending() {
        let cfg = MarketConfig::balanced(200, 5, 5).with_cone(0.15).with_seed(1);
        let inst = generate::<f64>(&cfg, 0).unwrap();
        let a = select_interviews(&inst);
        let (dl, hl) = a.build_preferences();
        for l in dl.iter().chain(hl.iter()) {
            assert!(l.windows(2).all(|w| w[0].1 >= w[1].1));
        }
        assert!(a.is_symmetric());
    }

    #[test]
    fn school_lists_follow_public_ratings() {
        let cfg = MarketConfig::balanced(200, 5, 5).with_cone(0.15).with_seed(2).with_setting(Setting::SchoolChoice);
        let inst = generate::<f64>(&cfg, 0).unwrap();
        let a = select_interviews(&inst);
        let (_, hl) = a.build_preferences();
        for l in hl {
            assert!(l.windows(2).all(|w| inst.doctor_ratings[w[0].0] > inst.doctor_ratings[w[1].0]));
        }
    }

    #[test]
    fn hospital_weight_examples() {
        let u = |r: f64, i: f64, nu: f64| hospital_utility(Setting::Residency, r, i, nu);
        assert!((u(0.5, 0.9, 0.5) - 0.95).abs() < 1e-12 && (u(0.8, 0.2, 0.5) - 0.90).abs() < 1e-12);
        assert!(u(0.5, 0.9, 1.0) > u(0.8, 0.2, 1.0));
        assert!(u(0.5, 0.9, 0.0) < u(0.8, 0.2, 0.0));
    }

    #[test]
    fn unit_weights_reproduce_the_base_model() {
        let cfg = MarketConfig::balanced(100, 2, 3).with_cone(0.2).with_seed(4);
        let inst = generate::<f64>(&cfg, 0).unwrap();
        let a = select_interviews(&inst);
        assert_eq!(a.weighted_utilities(1.0, 1.0), a);
        let z = a.weighted_utilities(0.0, 1.0);
        for l in &z.doctors {
            for e in l {
                assert_eq!(e.utility, e.rating + e.private);
            }
        }
    }

    #[test]
    fn request_protocol_respects_budgets() {
        let mut cfg = MarketConfig::balanced(400, 1, 4).with_cone(0.15).with_seed(9);
        cfg.setting = Setting::RequestInterview;
        let inst = generate::<f64>(&cfg, 0).unwrap();
        let a = request_interview_protocol(&inst);
        assert!(a.is_symmetric());
        assert!(a.hospitals.iter().all(|l| l.len() <= 4));
        assert!(a.doctors.iter().all(|l| l.len() <= 16));
    }
}
