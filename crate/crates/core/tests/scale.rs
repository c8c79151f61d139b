use interview_match::da::Preferences;
use interview_match::double_cut::{interval_preprocess, run_double_cut, DoubleCutScenario};
use interview_match::market::{generate, MarketConfig};
use interview_match::strategy::select_interviews;

fn config(seed: u64) -> MarketConfig {
    MarketConfig::balanced(2000, 5, 5).with_cone(0.15).with_seed(seed)
}

#[test]
fn focal_doctor_surplus_is_large() {
    let mut hits = 0;
    let mut total = 0;
    for run in 0..4 {
        let inst = generate::<f64>(&config(5), run).unwrap();
        let a = select_interviews(&inst);
        let p = Preferences::from(&a);
        let needed = 0.5 * inst.alpha * inst.n_doctors() as f64 / 5.0;
        let focal: Vec<usize> = inst.doctors_by_rank().filter(|&d| !inst.doctor_is_bottommost(d)).step_by(40).collect();
        for d in focal {
            let run = run_double_cut(&inst, &p, &DoubleCutScenario::for_doctor(&inst, d));
            total += 1;
            hits += (run.report.surplus >= needed) as usize;
        }
    }
    let share = hits as f64 / total as f64;
    println!("surplus >= 0.5 alpha n / kappa in {hits}/{total}");
    assert!(share >= 0.95, "{share}");
}

#[test]
fn focal_hospital_surplus_is_large() {
    let mut hits = 0;
    let mut total = 0;
    for run in 0..4 {
        let inst = generate::<f64>(&config(6), run).unwrap();
        let a = select_interviews(&inst);
        let p = Preferences::from(&a);
        let needed = 0.5 * inst.alpha * inst.n_doctors() as f64 / 5.0;
        let focal: Vec<usize> = inst.hospitals_by_rank().filter(|&h| !inst.hospital_is_bottommost(h)).step_by(8).collect();
        for h in focal {
            let run = run_double_cut(&inst, &p, &DoubleCutScenario::for_hospital(&inst, h));
            total += 1;
            hits += (run.report.surplus >= needed) as usize;
        }
    }
    let share = hits as f64 / total as f64;
    println!("surplus >= 0.5 alpha n / kappa in {hits}/{total}");
    assert!(share >= 0.95, "{share}");
}

#[test]
fn interval_preprocessing_keeps_enough_doctors() {
    let (mut kept, mut size) = (0usize, 0usize);
    let mut bound = 0.0;
    for run in 0..100 {
        let inst = generate::<f64>(&config(7), run).unwrap();
        let a = select_interviews(&inst);
        let (alpha, k, big_a) = (inst.alpha, inst.config.k as f64, inst.config.a);
        let f = 0.5;
        let ex = interval_preprocess(&inst, &a, f, f + alpha / 2.0).unwrap();
        kept += ex.kept_doctors.len();
        size += ex.interval_size;
        bound = 1.0 - (-alpha * k / (2.0 * (4.0 * big_a + 1.0))).exp();
    }
    let mean_kept = kept as f64 / 100.0;
    let mean_size = size as f64 / 100.0;
    println!("mean |I'| {mean_kept}, mean |I| {mean_size}, factor {bound}");
    assert!(mean_kept >= mean_size * bound / 2.0);
}
