//! Held-out classification metrics.

use serde::{Deserialize, Serialize};

use crate::label::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision or recall had a zero denominator; the F1 above is then 0.
    pub undefined: bool,
}

/// Accuracy, per-class scores and macro-F1 over ALLOW and REFUSE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub allow: ClassScores,
    pub refuse: ClassScores,
}

impl Classification {
    pub fn f1_undefined(&self) -> bool {
        self.allow.undefined || self.refuse.undefined
    }
}

fn class_scores(predicted: &[Label], truth: &[Label], class: Label) -> ClassScores {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        match (*p == class, *t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    match (precision, recall) {
        (Some(p), Some(r)) => ClassScores {
            precision: p,
            recall: r,
            f1: if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 },
            undefined: false,
        },
        (p, r) => ClassScores {
            precision: p.unwrap_or(0.0),
            recall: r.unwrap_or(0.0),
            f1: 0.0,
            undefined: true,
        },
    }
}

pub fn classification(predicted: &[Label], truth: &[Label]) -> Classification {
    assert_eq!(predicted.len(), truth.len(), "prediction and truth lengths differ");
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let allow = class_scores(predicted, truth, Label::Allow);
    let refuse = class_scores(predicted, truth, Label::Refuse);
    Classification {
        accuracy: if truth.is_empty() {
            0.0
        } else {
            correct as f64 / truth.len() as f64
        },
        macro_f1: (allow.f1 + refuse.f1) / 2.0,
        allow,
        refuse,
    }
}

/// Per-decision share of offline tokens when one induction call is reused
/// across `reuse_k` decisions.
pub fn amortized_cost(tokens_in: f64, tokens_out: f64, reuse_k: u64) -> crate::Result<(f64, f64)> {
    if reuse_k == 0 {
        return Err(crate::Error::Config("reuse count must be at least 1".into()));
    }
    Ok((tokens_in / reuse_k as f64, tokens_out / reuse_k as f64))
}

pub const INDUCTION_TOKENS_IN: f64 = 427.0;
pub const INDUCTION_TOKENS_OUT: f64 = 2300.0;
