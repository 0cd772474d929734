//! The deployment loop: stream days, sparse feedback, refresh, held-out eval.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DeploymentConfig, Method};
use super::metrics::{classification, INDUCTION_TOKENS_IN, INDUCTION_TOKENS_OUT};
use super::world::{Dataset, SyntheticWorld};
use crate::error::{Error, Result};
use crate::guardrail::{apply_feedback, decide, Decision, DeployedMemory, GuardModel, GuardrailConfig, StubGuard};
use crate::http::{HttpConfig, HttpProvider};
use crate::induction::{refresh, PatternInducer, PolicyInducer, RefreshOptions};
use crate::label::Label;
use crate::memory::{CaseRecord, MemorySnapshot, PolicyMemory, Report};
use crate::retrieval::{Embedder, HashingEmbedder};

/// Backends used by one run.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub inducer: Arc<dyn PolicyInducer>,
    pub guard: Arc<dyn GuardModel>,
}

impl Providers {
    /// Offline stand-ins: hashing embedder, pattern inducer, rule-following
    /// guard. The inducer states rules over the two leading summary attributes.
    pub fn stub(world: Arc<SyntheticWorld>, local_overlap: f64) -> Self {
        Self {
            embedder: Arc::new(HashingEmbedder::default()),
            inducer: Arc::new(PatternInducer::default()),
            guard: Arc::new(StubGuard::new(world, local_overlap)),
        }
    }

    /// All three roles served by one HTTP endpoint.
    pub fn http(config: HttpConfig) -> Self {
        let p = Arc::new(HttpProvider::new(config));
        Self {
            embedder: p.clone(),
            inducer: p.clone(),
            guard: p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub day: u32,
    pub method: Method,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub allow_precision: f64,
    pub allow_recall: f64,
    pub refuse_precision: f64,
    pub refuse_recall: f64,
    pub f1_undefined: bool,
    /// Mean simulated cost units per held-out decision.
    pub latency: f64,
    pub fallback_rate: f64,
    pub broad_count: usize,
    pub local_count: usize,
    /// Reports received on this day.
    pub reports: usize,
    /// Offline induction tokens per stream decision so far.
    pub offline_tokens_in: f64,
    pub offline_tokens_out: f64,
}

/// Online outcome of one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayOutcome {
    pub decisions: Vec<Decision>,
    /// Misclassified cases with corrected labels, after noise.
    pub reports: Vec<Report>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: DeploymentConfig,
    /// Day 0 (before any feedback) through the last completed day.
    pub rows: Vec<MetricsRow>,
    /// Set when a refresh failed; rows stop at the last completed day.
    pub aborted: Option<String>,
    pub memory: PolicyMemory,
}

impl ExperimentResult {
    pub fn final_row(&self) -> &MetricsRow {
        self.rows.last().expect("day 0 is always evaluated")
    }

    pub fn initial_row(&self) -> &MetricsRow {
        &self.rows[0]
    }
}

/// Flips each corrected label independently with probability `rho`.
pub fn apply_noise<R: Rng>(reports: &mut [Report], rho: f64, rng: &mut R) {
    for r in reports {
        if rng.random_bool(rho) {
            r.corrected_label = r.corrected_label.flipped();
            r.flipped = true;
        }
    }
}

fn day_seed(seed: u64, day: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (u64::from(day) << 32 | 0x5EED)
}

pub struct Simulation {
    pub config: DeploymentConfig,
    pub data: Dataset,
    pub memory: PolicyMemory,
    providers: Providers,
    guard_cfg: GuardrailConfig,
    refresh_opts: RefreshOptions,
    deployed: DeployedMemory,
    induced_reports: usize,
    stream_decisions: usize,
}

impl Simulation {
    pub fn new(config: DeploymentConfig, providers: Providers) -> Result<Self> {
        config.validate()?;
        let world = SyntheticWorld::new(config.world);
        let total = config.days as usize * config.stream_per_day;
        let data = world.generate(config.seed, total, config.heldout_size);
        let (channels, gate) = config.method.setup()?;
        let memory = PolicyMemory::new(config.gating);
        let deployed = DeployedMemory::empty(Arc::new(memory.snapshot.clone()));
        Ok(Self {
            guard_cfg: GuardrailConfig {
                channels,
                gate,
                limits: config.retrieval,
                fail_closed: config.fail_closed,
            },
            refresh_opts: config.refresh_options()?,
            config,
            data,
            memory,
            providers,
            deployed,
            induced_reports: 0,
            stream_decisions: 0,
        })
    }

    /// Builds providers from the stub world of `config`.
    pub fn with_stubs(config: DeploymentConfig) -> Result<Self> {
        let world = Arc::new(SyntheticWorld::new(config.world));
        let providers = Providers::stub(world, config.local_overlap);
        Self::new(config, providers)
    }

    pub fn snapshot(&self) -> &MemorySnapshot {
        &self.memory.snapshot
    }

    fn decide_all(&self, cases: &[CaseRecord]) -> Result<Vec<Decision>> {
        cases
            .par_iter()
            .map(|c| {
                decide(
                    c,
                    &self.deployed,
                    self.providers.guard.as_ref(),
                    self.providers.embedder.as_ref(),
                    &self.guard_cfg,
                )
            })
            .collect()
    }

    /// Online phase of `day` (1-based): decide the day's stream against the
    /// deployed snapshot and report exactly the misclassified cases.
    pub fn run_day(&mut self, day: u32) -> Result<DayOutcome> {
        let n = self.config.stream_per_day;
        let start = (day as usize - 1) * n;
        let cases = &self.data.stream[start..start + n];
        let truth = &self.data.stream_truth[start..start + n];
        let decisions = self.decide_all(cases)?;
        self.stream_decisions += decisions.len();
        let mut reports = Vec::new();
        for ((case, t), d) in cases.iter().zip(truth).zip(&decisions) {
            if d.label != *t {
                reports.push(Report::new(case.clone(), d.label, *t, day)?);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(day_seed(self.config.seed, day));
        apply_noise(&mut reports, self.config.noise_rho, &mut rng);
        Ok(DayOutcome { decisions, reports })
    }

    /// Day-end feedback, then the offline refresh and redeployment.
    pub fn end_day(&mut self, outcome: &DayOutcome) -> Result<()> {
        let snapshot = &self.memory.snapshot;
        let mut updates = Vec::new();
        for report in &outcome.reports {
            let decision = outcome
                .decisions
                .iter()
                .find(|d| d.case_id == report.case.case_id)
                .expect("every report comes from a decision");
            updates.extend(apply_feedback(decision, report.corrected_label, snapshot)?);
        }
        let version = snapshot.version;
        self.memory.apply_updates(version, &updates)?;
        for report in &outcome.reports {
            self.memory.record_report(report.clone())?;
        }
        if !self.config.method.adapts() {
            return Ok(());
        }
        let before = self.memory.induced_days.len();
        let day_reports = outcome.reports.len();
        refresh(
            &mut self.memory,
            self.providers.embedder.as_ref(),
            self.providers.inducer.as_ref(),
            &self.refresh_opts,
        )?;
        if self.memory.induced_days.len() > before {
            self.induced_reports += day_reports;
        }
        self.deployed = DeployedMemory::new(
            Arc::new(self.memory.snapshot.clone()),
            self.memory.bank.reports().to_vec(),
            self.guard_cfg.channels,
            self.providers.embedder.as_ref(),
        )?;
        Ok(())
    }

    /// Decisions on the held-out set against the deployed memory.
    pub fn heldout_decisions(&self) -> Result<Vec<Decision>> {
        self.decide_all(&self.data.heldout)
    }

    /// Scores the deployed memory on the fixed, uncorrupted held-out set.
    pub fn evaluate_heldout(&self, day: u32, reports: usize) -> Result<MetricsRow> {
        let decisions = self.heldout_decisions()?;
        let predicted: Vec<Label> = decisions.iter().map(|d| d.label).collect();
        let m = classification(&predicted, &self.data.heldout_truth);
        let n = decisions.len().max(1) as f64;
        let per_decision = |tokens: f64| {
            if self.stream_decisions == 0 {
                0.0
            } else {
                tokens * self.induced_reports as f64 / self.stream_decisions as f64
            }
        };
        Ok(MetricsRow {
            day,
            method: self.config.method,
            seed: self.config.seed,
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
            allow_precision: m.allow.precision,
            allow_recall: m.allow.recall,
            refuse_precision: m.refuse.precision,
            refuse_recall: m.refuse.recall,
            f1_undefined: m.f1_undefined(),
            latency: decisions.iter().map(|d| d.simulated_latency).sum::<f64>() / n,
            fallback_rate: decisions.iter().filter(|d| d.used_fallback).count() as f64 / n,
            broad_count: self.memory.snapshot.broad.len(),
            local_count: self.memory.snapshot.local.len(),
            reports,
            offline_tokens_in: per_decision(INDUCTION_TOKENS_IN),
            offline_tokens_out: per_decision(INDUCTION_TOKENS_OUT),
        })
    }

    /// Runs every day. A failed refresh stops the run and is recorded in
    /// `aborted`; other failures are returned as errors.
    pub fn run(mut self) -> Result<ExperimentResult> {
        let mut rows = vec![self.evaluate_heldout(0, 0)?];
        let mut aborted = None;
        for day in 1..=self.config.days {
            let outcome = self.run_day(day)?;
            match self.end_day(&outcome) {
                Ok(()) => {}
                Err(e @ (Error::Refresh(_) | Error::Provider(_))) => {
                    aborted = Some(format!("day {day}: {e}"));
                    break;
                }
                Err(e) => return Err(e),
            }
            rows.push(self.evaluate_heldout(day, outcome.reports.len())?);
        }
        Ok(ExperimentResult {
            config: self.config,
            rows,
            aborted,
            memory: self.memory,
        })
    }
}

pub fn run_experiment(config: &DeploymentConfig) -> Result<ExperimentResult> {
    Simulation::with_stubs(config.clone())?.run()
}

pub fn run_experiment_with(config: &DeploymentConfig, providers: Providers) -> Result<ExperimentResult> {
    Simulation::new(config.clone(), providers)?.run()
}

/// Runs seeds `config.seed .. config.seed + count`.
pub fn run_seeds(config: &DeploymentConfig, count: u64, providers: Option<&Providers>) -> Result<Vec<ExperimentResult>> {
    (0..count)
        .map(|i| {
            let cfg = DeploymentConfig {
                seed: config.seed + i,
                ..config.clone()
            };
            match providers {
                Some(p) => run_experiment_with(&cfg, p.clone()),
                None => run_experiment(&cfg),
            }
        })
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub day: u32,
    pub method: Method,
    pub seeds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub latency_mean: f64,
    pub broad_count_mean: f64,
    pub local_count_mean: f64,
}

/// Per-day mean and std across seeds, over the days every run completed.
pub fn aggregate(results: &[ExperimentResult]) -> Vec<AggregateRow> {
    let Some(first) = results.first() else {
        return Vec::new();
    };
    let days = results.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    (0..days)
        .map(|i| {
            let col = |f: &dyn Fn(&MetricsRow) -> f64| results.iter().map(|r| f(&r.rows[i])).collect::<Vec<_>>();
            let (accuracy_mean, accuracy_std) = mean_std(&col(&|r| r.accuracy));
            let (macro_f1_mean, macro_f1_std) = mean_std(&col(&|r| r.macro_f1));
            AggregateRow {
                day: first.rows[i].day,
                method: first.config.method,
                seeds: results.len(),
                accuracy_mean,
                accuracy_std,
                macro_f1_mean,
                macro_f1_std,
                latency_mean: mean_std(&col(&|r| r.latency)).0,
                broad_count_mean: mean_std(&col(&|r| r.broad_count as f64)).0,
                local_count_mean: mean_std(&col(&|r| r.local_count as f64)).0,
            }
        })
        .collect()
}

pub const METRICS_HEADER: [&str; 8] = [
    "day",
    "method",
    "seed",
    "accuracy",
    "macro_f1",
    "latency",
    "broad_count",
    "local_count",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-day metrics CSV for days 1..N; day 0 lives in the run summary.
pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for r in rows.iter().filter(|r| r.day > 0) {
        w.write_record([
            r.day.to_string(),
            r.method.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.macro_f1),
            format!("{:.4}", r.latency),
            r.broad_count.to_string(),
            r.local_count.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "day",
        "method",
        "seeds",
        "accuracy_mean",
        "accuracy_std",
        "macro_f1_mean",
        "macro_f1_std",
        "latency_mean",
        "broad_count_mean",
        "local_count_mean",
    ])?;
    for r in rows {
        w.write_record([
            r.day.to_string(),
            r.method.to_string(),
            r.seeds.to_string(),
            format!("{:.6}", r.accuracy_mean),
            format!("{:.6}", r.accuracy_std),
            format!("{:.6}", r.macro_f1_mean),
            format!("{:.6}", r.macro_f1_std),
            format!("{:.4}", r.latency_mean),
            format!("{:.2}", r.broad_count_mean),
            format!("{:.2}", r.local_count_mean),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Files written for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub metrics: PathBuf,
    pub snapshot: PathBuf,
    pub state: PathBuf,
    pub summary: PathBuf,
}

pub fn write_artifacts(result: &ExperimentResult, out_dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let stem = format!("{}_seed{}", result.config.method, result.config.seed);
    let paths = RunArtifacts {
        metrics: out_dir.join(format!("metrics_{stem}.csv")),
        snapshot: out_dir.join(format!("snapshot_{stem}.json")),
        state: out_dir.join(format!("state_{stem}.json")),
        summary: out_dir.join(format!("summary_{stem}.json")),
    };
    fs::write(&paths.metrics, metrics_csv(&result.rows)?).map_err(io_err(&paths.metrics))?;
    crate::memory::save_snapshot(&result.memory.snapshot, &paths.snapshot)?;
    result.memory.save(&paths.state)?;
    let summary = serde_json::json!({
        "config": result.config,
        "aborted": result.aborted,
        "rows": result.rows,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail");
    fs::write(&paths.summary, text).map_err(io_err(&paths.summary))?;
    Ok(paths)
}

pub fn write_aggregate(results: &[ExperimentResult], out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let method = results.first().map(|r| r.config.method.as_str()).unwrap_or("none");
    let path = out_dir.join(format!("aggregate_{method}.csv"));
    fs::write(&path, aggregate_csv(&aggregate(results))?).map_err(io_err(&path))?;
    Ok(path)
}
