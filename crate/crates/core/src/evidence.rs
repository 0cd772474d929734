//! Beta-posterior confidence for policy evidence.
//!
//! A policy item with `s` supports and `c` contradictions has posterior
//! `Beta(1 + s, 1 + c)` under a uniform prior. Its confidence is the lower
//! `delta`-quantile of that posterior, found by bisection on the regularized
//! incomplete beta function.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::Label;

/// Stopping width for the quantile bisection bracket.
pub const QUANTILE_TOLERANCE: f64 = 1e-13;
pub const QUANTILE_MAX_ITERS: usize = 200;

const CF_MAX_ITERS: usize = 10_000;
const CF_EPS: f64 = 1e-16;
const CF_FPMIN: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("quantile level {0} is outside (0, 1)")]
    DeltaOutOfRange(f64),
    #[error("threshold {name}={value} is outside [0, 1]")]
    ThresholdOutOfRange { name: &'static str, value: f64 },
    #[error("no evidence recorded (support + contradiction = 0)")]
    NoEvidence,
}

/// Support and contradiction counts for one memory item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvidenceCounts {
    pub support: u64,
    pub contradiction: u64,
}

impl EvidenceCounts {
    pub const fn new(support: u64, contradiction: u64) -> Self {
        Self {
            support,
            contradiction,
        }
    }

    pub fn total(&self) -> u64 {
        self.support + self.contradiction
    }

    /// Records one outcome: a label match is support, a mismatch contradiction.
    pub fn observe(&mut self, recommended: Label, corrected: Label) {
        if recommended == corrected {
            self.support += 1;
        } else {
            self.contradiction += 1;
        }
    }

    pub fn add(&mut self, other: &EvidenceCounts) {
        self.support += other.support;
        self.contradiction += other.contradiction;
    }
}

/// Quantile level and the label-specific surfacing thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingConfig {
    pub delta: f64,
    pub tau_refuse: f64,
    pub tau_allow: f64,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            tau_refuse: 0.55,
            tau_allow: 0.55,
        }
    }
}

impl GatingConfig {
    pub fn validate(&self) -> Result<(), EvidenceError> {
        check_delta(self.delta)?;
        for (name, value) in [("tau_refuse", self.tau_refuse), ("tau_allow", self.tau_allow)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(EvidenceError::ThresholdOutOfRange { name, value });
            }
        }
        Ok(())
    }

    pub fn threshold(&self, label: Label) -> f64 {
        match label {
            Label::Refuse => self.tau_refuse,
            Label::Allow => self.tau_allow,
        }
    }
}

fn check_delta(delta: f64) -> Result<(), EvidenceError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(EvidenceError::DeltaOutOfRange(delta))
    }
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_FPMIN {
        d = CF_FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITERS {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_FPMIN {
            d = CF_FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_FPMIN {
            c = CF_FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_FPMIN {
            d = CF_FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_FPMIN {
            c = CF_FPMIN;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)` for `a, b > 0`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let front = ln_front.exp();
    // the fraction converges fast only below the mean; use the symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Lower `delta`-quantile of `Beta(1 + s, 1 + c)`.
pub fn beta_lower_quantile(support: u64, contradiction: u64, delta: f64) -> Result<f64, EvidenceError> {
    check_delta(delta)?;
    let a = 1.0 + support as f64;
    let b = 1.0 + contradiction as f64;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..QUANTILE_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if regularized_incomplete_beta(mid, a, b) < delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= QUANTILE_TOLERANCE {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Confidence score of an evidence pair.
pub fn confidence(evidence: &EvidenceCounts, delta: f64) -> Result<f64, EvidenceError> {
    beta_lower_quantile(evidence.support, evidence.contradiction, delta)
}

/// Label-specific surfacing rule. The comparison is inclusive.
pub fn gate(label: Label, conf: f64, cfg: &GatingConfig) -> bool {
    conf >= cfg.threshold(label)
}

/// Plain success rate `s / (s + c)`.
pub fn empirical_accuracy(evidence: &EvidenceCounts) -> Result<f64, EvidenceError> {
    match evidence.total() {
        0 => Err(EvidenceError::NoEvidence),
        n => Ok(evidence.support as f64 / n as f64),
    }
}

/// Hoeffding lower bound `s/n - sqrt(ln(1/delta) / 2n)`; not clamped.
pub fn hoeffding_lower(support: u64, contradiction: u64, delta: f64) -> Result<f64, EvidenceError> {
    check_delta(delta)?;
    let n = support + contradiction;
    if n == 0 {
        return Err(EvidenceError::NoEvidence);
    }
    let n = n as f64;
    Ok(support as f64 / n - ((1.0 / delta).ln() / (2.0 * n)).sqrt())
}

/// Smallest support that lifts confidence to `tau` at the given
/// contradiction count.
pub fn minimal_support(contradiction: u64, tau: f64, delta: f64) -> Result<u64, EvidenceError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(EvidenceError::ThresholdOutOfRange { name: "tau", value: tau });
    }
    let mut s = 0;
    while beta_lower_quantile(s, contradiction, delta)? < tau {
        s += 1;
    }
    Ok(s)
}

/// `(c, minimal support)` for `c = 0..=max_contradictions`.
pub fn calibration_table(tau: f64, delta: f64, max_contradictions: u64) -> Result<Vec<(u64, u64)>, EvidenceError> {
    (0..=max_contradictions)
        .map(|c| minimal_support(c, tau, delta).map(|s| (c, s)))
        .collect()
}

/// How retrieved broad items are filtered before serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRule {
    /// Lower posterior quantile against the label threshold.
    BetaQuantile,
    /// Empirical accuracy against the label threshold; items without evidence are blocked.
    EmpiricalAccuracy,
    /// Every retrieved item is surfaced.
    Disabled,
}

impl GateRule {
    pub fn admits(
        self,
        label: Label,
        evidence: &EvidenceCounts,
        cfg: &GatingConfig,
    ) -> Result<bool, EvidenceError> {
        match self {
            GateRule::BetaQuantile => Ok(gate(label, confidence(evidence, cfg.delta)?, cfg)),
            GateRule::EmpiricalAccuracy => match empirical_accuracy(evidence) {
                Ok(acc) => Ok(gate(label, acc, cfg)),
                Err(EvidenceError::NoEvidence) => Ok(false),
                Err(e) => Err(e),
            },
            GateRule::Disabled => Ok(true),
        }
    }
}
