//! Randomized numerical checks of the gating and refinement results, as run
//! by the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{asymptotic_gap_ratio, gap_curves, gap_ratio, BroadState, LabeledStateDistribution, Level, SubState};
use crate::evidence::{
    beta_lower_quantile, calibration_table, confidence, regularized_incomplete_beta, EvidenceCounts,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random instances per distribution check.
    pub trials: usize,
    /// Posterior draws per evidence pair in the Monte Carlo check.
    pub draws: usize,
    pub tau: f64,
    pub delta: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 10_000,
            draws: 1_000_000,
            tau: 0.55,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

pub const CHECK_HEADER: &str = "check,passed,detail";

pub fn checks_csv(results: &[CheckResult]) -> String {
    let mut out = String::from(CHECK_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&format!("{},{},\"{}\"\n", r.name, r.passed, r.detail.replace('"', "'")));
    }
    out
}

fn conf(s: u64, c: u64, delta: f64) -> f64 {
    confidence(&EvidenceCounts::new(s, c), delta).expect("delta validated by caller")
}

/// Each tabulated support is the first that clears `tau`.
pub fn calibration(opts: &VerifyOptions) -> CheckResult {
    let table = match calibration_table(opts.tau, opts.delta, 7) {
        Ok(t) => t,
        Err(e) => return CheckResult::new("calibration", false, e.to_string()),
    };
    let minimal = table
        .iter()
        .all(|&(c, s)| conf(s, c, opts.delta) >= opts.tau && (s == 0 || conf(s - 1, c, opts.delta) < opts.tau));
    let detail = table.iter().map(|(c, s)| format!("c={c}:s={s}")).collect::<Vec<_>>().join(" ");
    CheckResult::new("calibration", minimal, detail)
}

/// Contradiction-free quantiles against `delta^(1/(s+1))`.
pub fn closed_form_quantiles() -> CheckResult {
    let mut worst = 0.0f64;
    for delta in [0.01, 0.05, 0.1] {
        for s in 0..=100u64 {
            let q = beta_lower_quantile(s, 0, delta).expect("valid delta");
            worst = worst.max((q - delta.powf(1.0 / (s as f64 + 1.0))).abs());
        }
    }
    CheckResult::new("closed_form_quantiles", worst <= 1e-8, format!("max error {worst:.3e}"))
}

/// CDF at the returned quantile against the requested level.
pub fn inverse_cdf_residual(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let s = rng.random_range(0..=100u64);
        let c = rng.random_range(0..=100u64);
        let delta = rng.random_range(0.001..0.5);
        let q = beta_lower_quantile(s, c, delta).expect("valid delta");
        let cdf = regularized_incomplete_beta(q, 1.0 + s as f64, 1.0 + c as f64);
        worst = worst.max((cdf - delta).abs());
    }
    CheckResult::new("inverse_cdf_residual", worst <= 1e-8, format!("max residual {worst:.3e}"))
}

/// Posterior mass below `tau` for surfaced pairs, by sampling.
pub fn posterior_surfacing(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut pairs = Vec::with_capacity(50);
    while pairs.len() < 50 {
        let (s, c) = (rng.random_range(0..=60u64), rng.random_range(0..=20u64));
        if conf(s, c, opts.delta) >= opts.tau {
            pairs.push((s, c, rng.random::<u64>()));
        }
    }
    let draws = opts.draws.max(1);
    let sigma = (opts.delta * (1.0 - opts.delta) / draws as f64).sqrt();
    let outcomes: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(s, c, seed)| {
            let beta = Beta::new(1.0 + s as f64, 1.0 + c as f64).expect("positive shape");
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (mut below, mut risk) = (0usize, 0.0);
            for _ in 0..draws {
                let theta: f64 = beta.sample(&mut r);
                below += usize::from(theta < opts.tau);
                risk += 1.0 - theta;
            }
            (below as f64 / draws as f64, risk / draws as f64)
        })
        .collect();
    let worst_tail = outcomes.iter().map(|o| o.0).fold(0.0, f64::max);
    let worst_risk = outcomes.iter().map(|o| o.1).fold(0.0, f64::max);
    let passed = worst_tail <= opts.delta + 3.0 * sigma && worst_risk <= (1.0 - opts.tau) + opts.delta;
    CheckResult::new(
        "posterior_surfacing",
        passed,
        format!("max Pr(theta<tau)={worst_tail:.5} max E[1-theta]={worst_risk:.5} over {} pairs", pairs.len()),
    )
}

/// Refinement gain never exceeds conflict mass; the pure split is tight.
pub fn conflict_mass_bound(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xb0d);
    let mut violations = 0usize;
    for _ in 0..opts.trials {
        let n = rng.random_range(1..=8);
        let d = LabeledStateDistribution::random(&mut rng, n, 4);
        for z in 0..n {
            let gain = d.refinement_gain(z).expect("every state is refined");
            let bound = d.conflict_mass(z).expect("state exists");
            if gain > bound + 1e-10 || gain < -1e-10 {
                violations += 1;
            }
        }
    }
    let tight = LabeledStateDistribution::new(vec![BroadState::refined(
        "z",
        1.0,
        vec![
            SubState { id: "u0".into(), mass: 0.5, eta: 0.0 },
            SubState { id: "u1".into(), mass: 0.5, eta: 1.0 },
        ],
    )])
    .expect("valid instance");
    let tight_ok = tight.refinement_gain(0).ok() == tight.conflict_mass(0).ok();
    CheckResult::new(
        "conflict_mass_bound",
        violations == 0 && tight_ok,
        format!("{violations} violations in {} instances; tight case {}", opts.trials, if tight_ok { "equal" } else { "differs" }),
    )
}

fn straddles(z: &BroadState) -> bool {
    z.mass > 0.0
        && z.refinement.iter().any(|u| u.mass > 0.0 && u.eta < 0.5)
        && z.refinement.iter().any(|u| u.mass > 0.0 && u.eta > 0.5)
}

/// Refined risk never exceeds broad risk, strictly below it when a state straddles 1/2.
pub fn refinement_inequality(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4ef);
    let (mut violations, mut strict_misses, mut straddling) = (0usize, 0usize, 0usize);
    for _ in 0..opts.trials {
        let n = rng.random_range(1..=8);
        let d = LabeledStateDistribution::random(&mut rng, n, 4);
        let (broad, refined) = (d.bayes_risk(Level::Broad), d.bayes_risk(Level::Refined));
        if refined > broad + 1e-12 {
            violations += 1;
        }
        if d.states().iter().any(straddles) {
            straddling += 1;
            if refined >= broad {
                strict_misses += 1;
            }
        }
    }
    CheckResult::new(
        "refinement_inequality",
        violations == 0 && strict_misses == 0,
        format!("{violations} violations; {strict_misses} non-strict of {straddling} straddling instances"),
    )
}

/// Confidence rises with support and falls with contradictions on 0..=50.
pub fn monotonicity(opts: &VerifyOptions) -> CheckResult {
    let grid: Vec<Vec<f64>> = (0..=50u64)
        .map(|s| (0..=50u64).map(|c| conf(s, c, opts.delta)).collect())
        .collect();
    let mut violations = 0usize;
    for s in 0..=50 {
        for c in 0..=50 {
            if s < 50 && grid[s + 1][c] < grid[s][c] {
                violations += 1;
            }
            if c < 50 && grid[s][c + 1] > grid[s][c] {
                violations += 1;
            }
        }
    }
    CheckResult::new("monotonicity", violations == 0, format!("{violations} violations on the 51x51 grid"))
}

/// Top-B selection by conflict mass against exhaustive subsets.
pub fn ranking_optimality(opts: &VerifyOptions) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7a4);
    let rounds = (opts.trials / 10).max(1);
    let mut failures = 0usize;
    for _ in 0..rounds {
        let n = rng.random_range(1..=12usize);
        let budget = rng.random_range(1..=n);
        let d = LabeledStateDistribution::random(&mut rng, n, 3);
        let masses: Vec<f64> = (0..n).map(|z| d.conflict_mass(z).expect("state exists")).collect();
        let greedy: f64 = d.top_by_conflict_mass(budget).iter().map(|&z| masses[z]).sum();
        let best = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == budget)
            .map(|m| (0..n).filter(|z| m >> z & 1 == 1).map(|z| masses[z]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        if greedy + 1e-12 < best {
            failures += 1;
        }
    }
    CheckResult::new("ranking_optimality", failures == 0, format!("{failures} of {rounds} instances suboptimal"))
}

/// Beta versus Hoeffding gap ratio at large n against its limit.
pub fn gap_ratio_limit(opts: &VerifyOptions) -> CheckResult {
    let limit = asymptotic_gap_ratio(0.5, opts.delta);
    match gap_curves(&[10_000], &[0.5], opts.delta) {
        Ok(rows) => {
            let observed = gap_ratio(&rows[0]);
            CheckResult::new(
                "gap_ratio_limit",
                (observed / limit - 1.0).abs() <= 0.05,
                format!("observed {observed:.4} limit {limit:.4}"),
            )
        }
        Err(e) => CheckResult::new("gap_ratio_limit", false, e.to_string()),
    }
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        calibration(opts),
        closed_form_quantiles(),
        inverse_cdf_residual(opts),
        posterior_surfacing(opts),
        conflict_mass_bound(opts),
        refinement_inequality(opts),
        monotonicity(opts),
        ranking_optimality(opts),
        gap_ratio_limit(opts),
    ]
}
