//! Online decision path: retrieve, gate, serialize, ask the guard model.

pub mod prompt;
pub mod stub;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ProviderError, Result};
use crate::evidence::{confidence, GateRule};
use crate::label::Label;
use crate::memory::{CaseRecord, EvidenceUpdate, ItemRef, MemoryError, MemorySnapshot, Report};
use crate::retrieval::{retrieve, Embedder, PoolEntry, RetrievalLimits};

pub use prompt::{parse_prompt, serialize_prompt, PromptMemory};
pub use stub::StubGuard;

pub const BASE_LATENCY: f64 = 1.0;
pub const BLOCK_LATENCY: f64 = 0.1;

/// What the guard model sees: the case, and the serialized memory prompt
/// unless the call is a plain base decision.
#[derive(Debug, Clone, Copy)]
pub struct GuardQuery<'a> {
    pub case: &'a CaseRecord,
    pub prompt: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardVerdict {
    pub label: Label,
    pub rationale: String,
}

pub trait GuardModel: Send + Sync {
    fn decide(&self, query: &GuardQuery<'_>) -> Result<GuardVerdict, ProviderError>;
}

/// Memory-free labeling function.
pub trait BaseGuardrail: Send + Sync {
    fn label(&self, case: &CaseRecord) -> Label;
}

/// Which memory types a method reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryChannels {
    pub cases: bool,
    pub broad: bool,
    pub local: bool,
}

impl MemoryChannels {
    pub const NONE: Self = Self {
        cases: false,
        broad: false,
        local: false,
    };
    pub const ALL: Self = Self {
        cases: true,
        broad: true,
        local: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardrailConfig {
    pub channels: MemoryChannels,
    pub gate: GateRule,
    pub limits: RetrievalLimits,
    /// Guard model errors count as REFUSE when set, ALLOW otherwise.
    pub fail_closed: bool,
}

impl Default for GuardrailConfig {
    fn default() -> Self {
        Self {
            channels: MemoryChannels::ALL,
            gate: GateRule::BetaQuantile,
            limits: RetrievalLimits::default(),
            fail_closed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub case_id: String,
    pub label: Label,
    pub used_fallback: bool,
    pub surfaced_broad_ids: Vec<String>,
    pub surfaced_local_ids: Vec<String>,
    pub retrieved_case_ids: Vec<String>,
    pub snapshot_version: u64,
    pub simulated_latency: f64,
    pub rationale: String,
    #[serde(default)]
    pub model_error: Option<String>,
}

/// A published snapshot with its retrieval pools, plus the case index.
#[derive(Debug, Clone)]
pub struct DeployedMemory {
    pub snapshot: Arc<MemorySnapshot>,
    cases: Vec<Report>,
    case_pool: Vec<PoolEntry>,
    broad_pool: Vec<PoolEntry>,
    local_pool: Vec<PoolEntry>,
}

impl DeployedMemory {
    /// Embeds the pools a method reads; the others stay empty.
    pub fn new(
        snapshot: Arc<MemorySnapshot>,
        cases: Vec<Report>,
        channels: MemoryChannels,
        embedder: &dyn Embedder,
    ) -> Result<Self, ProviderError> {
        let pool = |on: bool, items: Vec<(String, &str)>| -> Result<Vec<PoolEntry>, ProviderError> {
            if !on {
                return Ok(Vec::new());
            }
            items
                .into_iter()
                .map(|(id, text)| Ok(PoolEntry { id, embedding: embedder.embed(text)? }))
                .collect()
        };
        let case_pool = pool(
            channels.cases,
            cases.iter().map(|r| (r.report_id(), r.case.scenario_summary.as_str())).collect(),
        )?;
        let broad_pool = pool(
            channels.broad,
            snapshot.broad.iter().map(|b| (b.policy_id.clone(), b.statement.as_str())).collect(),
        )?;
        let local_pool = pool(
            channels.local,
            snapshot.local.iter().map(|l| (l.rule_id.clone(), l.region_summary.as_str())).collect(),
        )?;
        let cases = if channels.cases { cases } else { Vec::new() };
        Ok(Self {
            snapshot,
            cases,
            case_pool,
            broad_pool,
            local_pool,
        })
    }

    pub fn empty(snapshot: Arc<MemorySnapshot>) -> Self {
        Self {
            snapshot,
            cases: Vec::new(),
            case_pool: Vec::new(),
            broad_pool: Vec::new(),
            local_pool: Vec::new(),
        }
    }

    pub fn version(&self) -> u64 {
        self.snapshot.version
    }
}

/// Decides one case against deployed memory.
///
/// Broad items are gated, local rules never are. Policy-reading methods fall
/// back to a plain base decision when no broad item survives and no local
/// rule is retrieved; a cases-only method falls back when no case is
/// retrieved.
pub fn decide(
    case: &CaseRecord,
    memory: &DeployedMemory,
    guard: &dyn GuardModel,
    embedder: &dyn Embedder,
    cfg: &GuardrailConfig,
) -> Result<Decision> {
    let snapshot = &memory.snapshot;
    let ch = cfg.channels;
    let query = if ch.cases || ch.broad || ch.local {
        Some(embedder.embed(&case.scenario_summary)?)
    } else {
        None
    };
    let mut prompt_memory = PromptMemory::default();
    if let Some(q) = &query {
        if ch.cases {
            for hit in retrieve(q, &memory.case_pool, cfg.limits.max_cases) {
                prompt_memory.cases.push(&memory.cases[hit.index]);
            }
        }
        if ch.local {
            for hit in retrieve(q, &memory.local_pool, cfg.limits.max_local) {
                prompt_memory.local.push(&snapshot.local[hit.index]);
            }
        }
        if ch.broad {
            for hit in retrieve(q, &memory.broad_pool, cfg.limits.max_broad) {
                let item = &snapshot.broad[hit.index];
                if cfg.gate.admits(item.recommended_label, &item.evidence, &snapshot.gating)? {
                    let conf = confidence(&item.evidence, snapshot.gating.delta)?;
                    prompt_memory.broad.push((item, conf));
                }
            }
        }
    }
    let used_fallback = if ch.broad || ch.local {
        prompt_memory.broad.is_empty() && prompt_memory.local.is_empty()
    } else {
        prompt_memory.cases.is_empty()
    };
    let prompt = (!used_fallback).then(|| serialize_prompt(case, &prompt_memory));
    let verdict = guard.decide(&GuardQuery {
        case,
        prompt: prompt.as_deref(),
    });
    let blocks = if used_fallback { 0 } else { prompt_memory.block_count() };
    let (label, rationale, model_error) = match verdict {
        Ok(v) => (v.label, v.rationale, None),
        Err(e) => {
            let label = if cfg.fail_closed { Label::Refuse } else { Label::Allow };
            (label, "guard model error".to_string(), Some(e.to_string()))
        }
    };
    let ids = |used: bool, v: Vec<String>| if used { Vec::new() } else { v };
    Ok(Decision {
        case_id: case.case_id.clone(),
        label,
        used_fallback,
        surfaced_broad_ids: ids(
            used_fallback,
            prompt_memory.broad.iter().map(|(b, _)| b.policy_id.clone()).collect(),
        ),
        surfaced_local_ids: ids(
            used_fallback,
            prompt_memory.local.iter().map(|l| l.rule_id.clone()).collect(),
        ),
        retrieved_case_ids: ids(used_fallback, prompt_memory.cases.iter().map(|r| r.report_id()).collect()),
        snapshot_version: snapshot.version,
        simulated_latency: BASE_LATENCY + BLOCK_LATENCY * blocks as f64,
        rationale,
        model_error,
    })
}

/// Evidence updates for every item the decision surfaced.
pub fn apply_feedback(
    decision: &Decision,
    corrected: Label,
    snapshot: &MemorySnapshot,
) -> Result<Vec<EvidenceUpdate>, MemoryError> {
    if decision.snapshot_version != snapshot.version {
        return Err(MemoryError::VersionMismatch {
            decision: decision.snapshot_version,
            snapshot: snapshot.version,
        });
    }
    let mut updates = Vec::new();
    for id in &decision.surfaced_broad_ids {
        let item = snapshot.broad_by_id(id).ok_or_else(|| MemoryError::UnknownId(id.clone()))?;
        updates.push(EvidenceUpdate {
            item: ItemRef::Broad(id.clone()),
            recommended: item.recommended_label,
            corrected,
        });
    }
    for id in &decision.surfaced_local_ids {
        let item = snapshot.local_by_id(id).ok_or_else(|| MemoryError::UnknownId(id.clone()))?;
        updates.push(EvidenceUpdate {
            item: ItemRef::Local(id.clone()),
            recommended: item.recommended_label,
            corrected,
        });
    }
    Ok(updates)
}
