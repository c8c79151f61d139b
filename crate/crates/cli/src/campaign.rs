//! Campaign execution, audits and artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use interview_match::analysis::{
    doctors_weakly_prefer, enumerate_stable, is_stable, rural_hospital_check, uniqueness_check_school, MAX_ENUM_DOCTORS,
    MAX_ENUM_HOSPITALS, MAX_ENUM_SEATS,
};
use interview_match::da::{doctor_proposing_da, hospital_proposing_da, Preferences};
use interview_match::deviation::{deviation_csv, epsilon_estimate, evaluate_deviation, DeviationKind, DeviationSpec};
use interview_match::double_cut::{dominance_audit, DoubleCutScenario};
use interview_match::market::{generate, keyed_bits, keyed_unit, MarketConfig, Setting};
use interview_match::metrics::{aggregate, run_stats, to_csv, RunStats};
use interview_match::strategy::assign_interviews;

use crate::CliError;

/// Rural-hospital and uniqueness audits run up to this many doctors.
pub const SMALL_N: usize = 200;
const AUDIT_STREAM: u64 = 0xA0D1;
const DEVIATION_REPLICATES: usize = 20;

#[derive(Debug, Clone)]
pub struct Campaign {
    pub configs: Vec<MarketConfig>,
    /// `None` writes nothing.
    pub out: Option<PathBuf>,
    pub group_size: usize,
    /// Fraction of runs that get double-cut dominance audits.
    pub audit_sample: f64,
    /// Focal doctors per config for the deviation grid; 0 disables it.
    pub deviations: usize,
    /// Audit every run with every check, skip metrics.
    pub verify_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub config: usize,
    pub run: u64,
    pub check: &'static str,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub checked: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct ConfigReport {
    pub index: usize,
    pub label: String,
    pub hash: String,
    pub runs: usize,
    pub wall: Duration,
    pub audits: BTreeMap<&'static str, Tally>,
    pub artifacts: Vec<PathBuf>,
    pub epsilon: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub configs: Vec<ConfigReport>,
    pub failures: Vec<Failure>,
    pub wall: Duration,
}

impl CampaignReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// One `key=value` record per line.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.configs {
            write!(out, "record=config index={} label={} hash={} runs={} wall_ms={}", c.index, c.label, c.hash, c.runs, c.wall.as_millis())
                .unwrap();
            for (name, t) in &c.audits {
                write!(out, " audit.{name}={}/{}", t.checked - t.failed, t.checked).unwrap();
            }
            if let Some((eps, reference)) = c.epsilon {
                write!(out, " epsilon={eps} epsilon_reference={reference}").unwrap();
            }
            for a in &c.artifacts {
                write!(out, " artifact={}", a.display()).unwrap();
            }
            out.push('\n');
        }
        for f in &self.failures {
            writeln!(out, "record=failure config={} run={} check={}", f.config, f.run, f.check).unwrap();
        }
        writeln!(
            out,
            "record=campaign configs={} failures={} status={} wall_ms={}",
            self.configs.len(),
            self.failures.len(),
            if self.passed() { "ok" } else { "audit_failure" },
            self.wall.as_millis()
        )
        .unwrap();
        out
    }
}

pub fn config_hash(cfg: &MarketConfig) -> String {
    let json = serde_json::to_string(cfg).expect("configs serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn config_label(index: usize, cfg: &MarketConfig) -> String {
    format!(
        "{index:03}_{}_n{}_k{}_kappa{}_seed{}",
        cfg.setting.label(),
        cfg.n_doctors,
        cfg.k,
        cfg.capacity.mean(cfg.n_hospitals),
        cfg.seed
    )
}

struct RunOutcome {
    stats: Option<RunStats<f64>>,
    checks: Vec<(&'static str, bool)>,
}

fn enumerable(cfg: &MarketConfig) -> bool {
    cfg.n_doctors <= MAX_ENUM_DOCTORS && cfg.n_hospitals <= MAX_ENUM_HOSPITALS && cfg.total_seats() <= MAX_ENUM_SEATS
}

fn run_one(cfg: &MarketConfig, run: u64, c: &Campaign) -> Result<RunOutcome, CliError> {
    let inst = generate::<f64>(cfg, run).map_err(|e| CliError::Generation(e.to_string()))?;
    let a = assign_interviews(&inst);
    let p = Preferences::from(&a);
    let caps = &inst.capacities;
    let m = doctor_proposing_da(&p, caps);
    let mut checks = Vec::new();
    let stats = run_stats(&inst, &p, &m).ok();
    checks.push(("stability", stats.is_some()));
    if c.verify_only {
        checks.push(("stability_hospital_proposing", is_stable(&p, caps, &hospital_proposing_da(&p, caps))));
    }
    if enumerable(cfg) {
        let ok = enumerate_stable(&p, caps).is_ok_and(|all| {
            let hp = hospital_proposing_da(&p, caps);
            all.contains(&m) && all.iter().all(|x| doctors_weakly_prefer(&p, &m, x) && doctors_weakly_prefer(&p, x, &hp))
        });
        checks.push(("oracle", ok));
    }
    if c.verify_only || cfg.n_doctors <= SMALL_N {
        checks.push(("rural", rural_hospital_check(&p, caps)));
        if cfg.setting == Setting::SchoolChoice {
            checks.push(("uniqueness", uniqueness_check_school(&p, caps)));
        }
    }
    let sampled = c.verify_only || keyed_unit(&[cfg.seed, run, AUDIT_STREAM]) < c.audit_sample;
    if sampled {
        let h = (keyed_bits(&[cfg.seed, run, AUDIT_STREAM, 1]) % inst.n_hospitals() as u64) as usize;
        let d = (keyed_bits(&[cfg.seed, run, AUDIT_STREAM, 2]) % inst.n_doctors() as u64) as usize;
        for s in [DoubleCutScenario::for_hospital(&inst, h), DoubleCutScenario::for_doctor(&inst, d)] {
            checks.push(("dominance", dominance_audit(&inst, &p, &s).passed()));
        }
    }
    Ok(RunOutcome { stats, checks })
}

fn deviation_kinds(alpha: f64) -> [DeviationKind; 6] {
    [
        DeviationKind::SwapInCone,
        DeviationKind::AboveCone { offset: 0.0 },
        DeviationKind::AboveCone { offset: alpha },
        DeviationKind::AboveCone { offset: 2.0 * alpha },
        DeviationKind::BelowCone { offset: 0.0 },
        DeviationKind::TopKOfAll,
    ]
}

/// Deviation grid on run 0: `focal` doctors spread over the non-bottommost ranks.
fn deviation_report(cfg: &MarketConfig, focal: usize) -> Result<(String, f64, f64), CliError> {
    let inst = generate::<f64>(cfg, 0).map_err(|e| CliError::Generation(e.to_string()))?;
    let a = assign_interviews(&inst);
    let mut ranked: Vec<usize> = inst.doctors_by_rank().filter(|&d| !inst.doctor_is_bottommost(d)).collect();
    if ranked.is_empty() {
        ranked = inst.doctors_by_rank().collect();
    }
    let step = (ranked.len() / focal.max(1)).max(1);
    let specs: Vec<DeviationSpec> = ranked
        .iter()
        .step_by(step)
        .take(focal)
        .flat_map(|&d| {
            deviation_kinds(inst.alpha).map(|kind| DeviationSpec { focal: d, kind, replicates: DEVIATION_REPLICATES })
        })
        .collect();
    let results: Vec<_> = specs.into_par_iter().map(|s| evaluate_deviation(&inst, &a, s)).collect();
    let eps = epsilon_estimate(&results, cfg.setting, cfg.k, 2.0 * cfg.a);
    Ok((deviation_csv(&results), eps.max_gain, eps.reference))
}

pub fn run_campaign(c: &Campaign) -> Result<CampaignReport, CliError> {
    let start = Instant::now();
    if let Some(dir) = &c.out {
        fs::create_dir_all(dir)?;
    }
    let mut configs = Vec::new();
    let mut failures = Vec::new();
    for (index, cfg) in c.configs.iter().enumerate() {
        let t = Instant::now();
        let outcomes: Vec<RunOutcome> =
            (0..cfg.runs as u64).into_par_iter().map(|run| run_one(cfg, run, c)).collect::<Result<_, _>>()?;
        let mut audits: BTreeMap<&'static str, Tally> = BTreeMap::new();
        for (run, o) in outcomes.iter().enumerate() {
            for &(name, ok) in &o.checks {
                let t = audits.entry(name).or_default();
                t.checked += 1;
                if !ok {
                    t.failed += 1;
                    failures.push(Failure { config: index, run: run as u64, check: name });
                }
            }
        }
        let label = config_label(index, cfg);
        let mut artifacts = Vec::new();
        let mut epsilon = None;
        if let (Some(dir), false) = (&c.out, c.verify_only) {
            let stats: Vec<RunStats<f64>> = outcomes.into_iter().filter_map(|o| o.stats).collect();
            if !stats.is_empty() {
                let series = aggregate(&stats, c.group_size).map_err(|e| CliError::Generation(e.to_string()))?;
                let path = dir.join(format!("{label}.csv"));
                fs::write(&path, to_csv(&series, cfg))?;
                artifacts.push(path);
            }
            if c.deviations > 0 {
                let (csv, eps, reference) = deviation_report(cfg, c.deviations)?;
                let path = dir.join(format!("{label}_deviation.csv"));
                fs::write(&path, csv)?;
                artifacts.push(path);
                epsilon = Some((eps, reference));
            }
        }
        configs.push(ConfigReport {
            index,
            label,
            hash: config_hash(cfg),
            runs: cfg.runs,
            wall: t.elapsed(),
            audits,
            artifacts,
            epsilon,
        });
    }
    let report = CampaignReport { configs, failures, wall: start.elapsed() };
    if let (Some(dir), false) = (&c.out, c.verify_only) {
        fs::write(dir.join("summary.txt"), report.summary())?;
    }
    Ok(report)
}
