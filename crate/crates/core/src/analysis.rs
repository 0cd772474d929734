//! Numerical checks of the conflict-mass bounds, the refinement inequality
//! and the gap between Beta and Hoeffding lower bounds, on finite
//! distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::evidence::{beta_lower_quantile, hoeffding_lower, EvidenceError};

const TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("state masses sum to {0}, expected 1")]
    MassNotNormalized(f64),
    #[error("state {state}: sub-state masses sum to {sum}, expected 1")]
    SubMassNotNormalized { state: String, sum: f64 },
    #[error("state {state}: refuse rate {eta} disagrees with its sub-states ({mixed})")]
    Inconsistent { state: String, eta: f64, mixed: f64 },
    #[error("state {0}: probabilities must lie in [0, 1]")]
    OutOfRange(String),
    #[error("state {0} has no refinement")]
    NoRefinement(String),
    #[error("no state at index {0}")]
    NoState(usize),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

/// Bayes risk of a state with refuse rate `p`.
pub fn g(p: f64) -> f64 {
    p.min(1.0 - p)
}

/// Refined sub-state `u` of a broad state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubState {
    pub id: String,
    /// Pr(U = u | Z = z).
    pub mass: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadState {
    pub id: String,
    /// Pr(Z = z).
    pub mass: f64,
    /// Refuse rate under the broad representation.
    pub eta: f64,
    /// Empty when the state is not refined.
    pub refinement: Vec<SubState>,
}

impl BroadState {
    /// Builds a state whose refuse rate is the mixture of its sub-states.
    pub fn refined(id: impl Into<String>, mass: f64, refinement: Vec<SubState>) -> Self {
        let eta = refinement.iter().map(|u| u.mass * u.eta).sum();
        Self {
            id: id.into(),
            mass,
            eta,
            refinement,
        }
    }

    pub fn conflict_mass(&self) -> f64 {
        self.mass * g(self.eta)
    }

    fn refined_risk(&self) -> f64 {
        if self.refinement.is_empty() {
            return g(self.eta);
        }
        self.refinement.iter().map(|u| u.mass * g(u.eta)).sum()
    }
}

/// Granularity at which Bayes risk is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Broad,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledStateDistribution {
    states: Vec<BroadState>,
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl LabeledStateDistribution {
    pub fn new(states: Vec<BroadState>) -> Result<Self, AnalysisError> {
        let total: f64 = states.iter().map(|z| z.mass).sum();
        if (total - 1.0).abs() > TOL {
            return Err(AnalysisError::MassNotNormalized(total));
        }
        for z in &states {
            if !in_unit(z.mass) || !in_unit(z.eta) || z.refinement.iter().any(|u| !in_unit(u.mass) || !in_unit(u.eta)) {
                return Err(AnalysisError::OutOfRange(z.id.clone()));
            }
            if z.refinement.is_empty() {
                continue;
            }
            let sum: f64 = z.refinement.iter().map(|u| u.mass).sum();
            if (sum - 1.0).abs() > TOL {
                return Err(AnalysisError::SubMassNotNormalized { state: z.id.clone(), sum });
            }
            let mixed: f64 = z.refinement.iter().map(|u| u.mass * u.eta).sum();
            if (mixed - z.eta).abs() > TOL {
                return Err(AnalysisError::Inconsistent {
                    state: z.id.clone(),
                    eta: z.eta,
                    mixed,
                });
            }
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &[BroadState] {
        &self.states
    }

    fn state(&self, z: usize) -> Result<&BroadState, AnalysisError> {
        self.states.get(z).ok_or(AnalysisError::NoState(z))
    }

    /// Mass of minority-label errors in state `z`.
    pub fn conflict_mass(&self, z: usize) -> Result<f64, AnalysisError> {
        Ok(self.state(z)?.conflict_mass())
    }

    pub fn bayes_risk(&self, level: Level) -> f64 {
        self.states
            .iter()
            .map(|z| {
                z.mass
                    * match level {
                        Level::Broad => g(z.eta),
                        Level::Refined => z.refined_risk(),
                    }
            })
            .sum()
    }

    /// Risk reduction from splitting state `z` into its sub-states.
    pub fn refinement_gain(&self, z: usize) -> Result<f64, AnalysisError> {
        let state = self.state(z)?;
        if state.refinement.is_empty() {
            return Err(AnalysisError::NoRefinement(state.id.clone()));
        }
        Ok(state.mass * (g(state.eta) - state.refined_risk()))
    }

    /// Indices of the `budget` states with the largest conflict mass
    /// (lower index first on ties).
    pub fn top_by_conflict_mass(&self, budget: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.states.len()).collect();
        order.sort_by(|&a, &b| {
            self.states[b]
                .conflict_mass()
                .total_cmp(&self.states[a].conflict_mass())
                .then(a.cmp(&b))
        });
        order.truncate(budget);
        order
    }

    /// Random instance with `states` broad states, each split into 1 to
    /// `max_sub` sub-states.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, states: usize, max_sub: usize) -> Self {
        assert!(states > 0 && max_sub > 0, "need at least one state and one sub-state");
        let masses = simplex(rng, states);
        let built = masses
            .into_iter()
            .enumerate()
            .map(|(i, mass)| {
                let k = rng.random_range(1..=max_sub);
                let subs = simplex(rng, k)
                    .into_iter()
                    .enumerate()
                    .map(|(j, m)| SubState {
                        id: format!("z{i}u{j}"),
                        mass: m,
                        eta: rng.random::<f64>(),
                    })
                    .collect();
                BroadState::refined(format!("z{i}"), mass, subs)
            })
            .collect();
        Self::new(built).expect("generated instance is valid")
    }
}

/// Uniform point on the probability simplex; the last coordinate absorbs
/// rounding so the sum is exactly 1 up to one ulp.
fn simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = out[..n - 1].iter().sum();
    out[n - 1] = (1.0 - head).max(0.0);
    out
}

/// One point of the Beta versus Hoeffding comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n: u64,
    pub accuracy: f64,
    pub support: u64,
    pub beta: f64,
    pub hoeffding: f64,
}

pub const GAP_HEADER: &str = "n,accuracy,support,beta,hoeffding";

impl GapRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{:.6},{:.6}", self.n, self.accuracy, self.support, self.beta, self.hoeffding)
    }
}

/// Both lower bounds over an `n` by accuracy grid, with support `round(θ·n)`.
pub fn gap_curves(ns: &[u64], accuracies: &[f64], delta: f64) -> Result<Vec<GapRow>, AnalysisError> {
    let mut rows = Vec::with_capacity(ns.len() * accuracies.len());
    for &n in ns {
        if n == 0 {
            return Err(EvidenceError::NoEvidence.into());
        }
        for &accuracy in accuracies {
            if !in_unit(accuracy) {
                return Err(AnalysisError::OutOfRange(format!("accuracy {accuracy}")));
            }
            let support = (accuracy * n as f64).round() as u64;
            let contradiction = n - support;
            rows.push(GapRow {
                n,
                accuracy,
                support,
                beta: beta_lower_quantile(support, contradiction, delta)?,
                hoeffding: hoeffding_lower(support, contradiction, delta)?,
            });
        }
    }
    Ok(rows)
}

/// Large-sample ratio of the Beta gap to the Hoeffding gap at accuracy θ:
/// `z_{1-δ}·sqrt(θ(1-θ)) / sqrt(ln(1/δ)/2)`.
pub fn asymptotic_gap_ratio(accuracy: f64, delta: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(1.0 - delta);
    z * (accuracy * (1.0 - accuracy)).sqrt() / ((1.0 / delta).ln() / 2.0).sqrt()
}

/// Observed ratio of the two gaps below the empirical accuracy.
pub fn gap_ratio(row: &GapRow) -> f64 {
    let theta = row.support as f64 / row.n as f64;
    (theta - row.beta) / (theta - row.hoeffding)
}
