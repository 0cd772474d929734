//! Adaptive guardrail memory built from sparse failure reports.
//!
//! Reports of misclassified cases are induced into broad policies and
//! conflict-aware local rules. Broad policies reach the guard model only
//! when their Beta-posterior confidence clears a label-specific threshold.
//! The [`simulator`] runs the whole loop on a synthetic rule world.

pub mod analysis;
pub mod error;
pub mod evidence;
pub mod guardrail;
pub mod http;
pub mod induction;
pub mod label;
pub mod memory;
pub mod retrieval;
pub mod simulator;
pub mod verify;

pub use error::{Error, ProviderError, Result};
pub use evidence::{
    beta_lower_quantile, confidence, empirical_accuracy, gate, hoeffding_lower, EvidenceCounts, GateRule,
    GatingConfig,
};
pub use label::{Label, LabelHistogram};
pub use memory::{BroadPolicy, CaseRecord, LocalRule, MemorySnapshot, PolicyMemory, Report, ReportBank};
