//! Reports, policy items, deployed snapshots and their persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{EvidenceCounts, GatingConfig};
use crate::label::{Label, LabelHistogram};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("case `{case_id}` was already reported on day {day}")]
    DuplicateReport { case_id: String, day: u32 },
    #[error("report for case `{0}` has identical predicted and corrected labels")]
    NotAMisclassification(String),
    #[error("duplicate memory id `{0}` in snapshot")]
    DuplicateId(String),
    #[error("unknown memory id `{0}` for snapshot")]
    UnknownId(String),
    #[error("decision was made against snapshot v{decision} but feedback targets v{snapshot}")]
    VersionMismatch { decision: u64, snapshot: u64 },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One deployment input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub namespace: String,
    pub scenario_text: String,
    /// Canonical short form used for embedding.
    pub scenario_summary: String,
    /// Base-scenario group; split hygiene is enforced on this key.
    pub group_id: String,
    /// Structured metadata carried with the input record.
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// A user-reported correction for a misclassified case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub case: CaseRecord,
    pub predicted_label: Label,
    pub corrected_label: Label,
    pub day: u32,
    /// Set when label noise changed `corrected_label`. Evaluation bookkeeping only.
    #[serde(default)]
    pub flipped: bool,
}

impl Report {
    pub fn new(
        case: CaseRecord,
        predicted_label: Label,
        corrected_label: Label,
        day: u32,
    ) -> Result<Self, MemoryError> {
        if predicted_label == corrected_label {
            return Err(MemoryError::NotAMisclassification(case.case_id));
        }
        Ok(Self {
            case,
            predicted_label,
            corrected_label,
            day,
            flipped: false,
        })
    }

    pub fn report_id(&self) -> String {
        format!("{}@d{}", self.case.case_id, self.day)
    }
}

/// Append-only store of every report received.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Report>", into = "Vec<Report>")]
pub struct ReportBank {
    reports: Vec<Report>,
    keys: BTreeSet<(String, u32)>,
}

impl From<Vec<Report>> for ReportBank {
    fn from(reports: Vec<Report>) -> Self {
        let keys = reports
            .iter()
            .map(|r| (r.case.case_id.clone(), r.day))
            .collect();
        Self { reports, keys }
    }
}

impl From<ReportBank> for Vec<Report> {
    fn from(bank: ReportBank) -> Self {
        bank.reports
    }
}

impl ReportBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, report: Report) -> Result<(), MemoryError> {
        let key = (report.case.case_id.clone(), report.day);
        if self.keys.contains(&key) {
            return Err(MemoryError::DuplicateReport {
                case_id: key.0,
                day: key.1,
            });
        }
        self.keys.insert(key);
        self.reports.push(report);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn on_day(&self, day: u32) -> impl Iterator<Item = &Report> {
        self.reports.iter().filter(move |r| r.day == day)
    }

    pub fn days(&self) -> BTreeSet<u32> {
        self.reports.iter().map(|r| r.day).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleType {
    #[default]
    GeneralPolicy,
    LocalException,
}

impl RuleType {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleType::GeneralPolicy => "general_policy",
            RuleType::LocalException => "local_exception",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "general_policy" => Some(RuleType::GeneralPolicy),
            "local_exception" => Some(RuleType::LocalException),
            _ => None,
        }
    }
}

/// A reusable policy statement with evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadPolicy {
    pub policy_id: String,
    /// Canonical rule text; this is what gets embedded and merged.
    pub statement: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub rule_type: RuleType,
    pub recommended_label: Label,
    pub evidence: EvidenceCounts,
    pub provenance: BTreeSet<String>,
    pub label_skew: LabelHistogram,
    #[serde(default)]
    pub near_conflict: bool,
}

/// One decisive attribute or facet of a mixed region, seen from one label side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pivot {
    pub facet: String,
    /// Common values among members carrying the rule's label.
    pub own: Vec<String>,
    /// Common values among members carrying the opposite label.
    pub other: Vec<String>,
}

impl Pivot {
    pub const NONE_FOUND: &'static str = "no decisive pivot found";

    pub fn none_found() -> Self {
        Self {
            facet: Self::NONE_FOUND.to_string(),
            own: Vec::new(),
            other: Vec::new(),
        }
    }

    pub fn is_marker(&self) -> bool {
        self.own.is_empty() && self.other.is_empty()
    }

    pub fn inverse(&self) -> Self {
        Self {
            facet: self.facet.clone(),
            own: self.other.clone(),
            other: self.own.clone(),
        }
    }
}

impl fmt::Display for Pivot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_marker() {
            return f.write_str(Self::NONE_FOUND);
        }
        let side = |values: &[String]| {
            if values.is_empty() {
                "none".to_string()
            } else {
                values.join(", ")
            }
        };
        write!(f, "{} differs: {} vs {}", self.facet, side(&self.own), side(&self.other))
    }
}

/// A narrow, label-specific boundary cue for a mixed-label region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRule {
    pub rule_id: String,
    pub region_summary: String,
    pub recommended_label: Label,
    pub pivots: Vec<Pivot>,
    pub evidence: EvidenceCounts,
    pub source_cluster_id: String,
}

/// Items whose evidence is updated by label match.
pub trait PolicyItem {
    fn item_id(&self) -> &str;
    fn recommended_label(&self) -> Label;
    fn evidence_mut(&mut self) -> &mut EvidenceCounts;
}

impl PolicyItem for BroadPolicy {
    fn item_id(&self) -> &str {
        &self.policy_id
    }
    fn recommended_label(&self) -> Label {
        self.recommended_label
    }
    fn evidence_mut(&mut self) -> &mut EvidenceCounts {
        &mut self.evidence
    }
}

impl PolicyItem for LocalRule {
    fn item_id(&self) -> &str {
        &self.rule_id
    }
    fn recommended_label(&self) -> Label {
        self.recommended_label
    }
    fn evidence_mut(&mut self) -> &mut EvidenceCounts {
        &mut self.evidence
    }
}

/// A label match increments support, a mismatch contradiction.
pub fn update_evidence<P: PolicyItem + ?Sized>(item: &mut P, corrected: Label) -> EvidenceCounts {
    let recommended = item.recommended_label();
    let ev = item.evidence_mut();
    ev.observe(recommended, corrected);
    *ev
}

/// The deployed memory. Immutable once published.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub version: u64,
    pub gating: GatingConfig,
    pub broad: Vec<BroadPolicy>,
    pub local: Vec<LocalRule>,
}

impl MemorySnapshot {
    pub fn empty(gating: GatingConfig) -> Self {
        Self {
            version: 0,
            gating,
            broad: Vec::new(),
            local: Vec::new(),
        }
    }

    pub fn new(
        version: u64,
        gating: GatingConfig,
        broad: Vec<BroadPolicy>,
        local: Vec<LocalRule>,
    ) -> Result<Self, MemoryError> {
        let snapshot = Self {
            version,
            gating,
            broad,
            local,
        };
        snapshot.check_ids()?;
        Ok(snapshot)
    }

    fn check_ids(&self) -> Result<(), MemoryError> {
        let mut seen = BTreeSet::new();
        let ids = self
            .broad
            .iter()
            .map(|b| &b.policy_id)
            .chain(self.local.iter().map(|l| &l.rule_id));
        for id in ids {
            if !seen.insert(id) {
                return Err(MemoryError::DuplicateId(id.clone()));
            }
        }
        Ok(())
    }

    pub fn broad_by_id(&self, id: &str) -> Option<&BroadPolicy> {
        self.broad.iter().find(|b| b.policy_id == id)
    }

    pub fn local_by_id(&self, id: &str) -> Option<&LocalRule> {
        self.local.iter().find(|l| l.rule_id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serialization cannot fail")
    }

    /// Parses a snapshot document, naming the record that fails to decode.
    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| MemoryError::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| MemoryError::Parse {
            location: "document root".into(),
            message: "expected a JSON object".into(),
        })?;
        let field = |key: &str| {
            obj.get(key).ok_or_else(|| MemoryError::Parse {
                location: format!("`{key}`"),
                message: "missing top-level key".into(),
            })
        };
        let version: u64 = decode(field("version")?, "version")?;
        let gating: GatingConfig = decode(field("gating")?, "gating")?;
        let broad = decode_list(field("broad")?, "broad")?;
        let local = decode_list(field("local")?, "local")?;
        let snapshot = Self {
            version,
            gating,
            broad,
            local,
        };
        snapshot.check_ids()?;
        Ok(snapshot)
    }
}

fn decode<T: DeserializeOwned>(value: &serde_json::Value, location: &str) -> Result<T, MemoryError> {
    T::deserialize(value).map_err(|e| MemoryError::Parse {
        location: location.to_string(),
        message: e.to_string(),
    })
}

fn decode_list<T: DeserializeOwned>(value: &serde_json::Value, key: &str) -> Result<Vec<T>, MemoryError> {
    let items = value.as_array().ok_or_else(|| MemoryError::Parse {
        location: format!("`{key}`"),
        message: "expected an array".into(),
    })?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let id = item
                .get(if key == "broad" { "policy_id" } else { "rule_id" })
                .and_then(|v| v.as_str())
                .map(|s| format!(" (id `{s}`)"))
                .unwrap_or_default();
            decode(item, &format!("{key}[{i}]{id}"))
        })
        .collect()
}

pub fn save_snapshot(snapshot: &MemorySnapshot, path: &Path) -> Result<(), MemoryError> {
    write_text(path, &snapshot.to_json())
}

pub fn load_snapshot(path: &Path) -> Result<MemorySnapshot, MemoryError> {
    MemorySnapshot::from_json(&read_text(path)?)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), MemoryError> {
    std::fs::write(path, text).map_err(|source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String, MemoryError> {
    std::fs::read_to_string(path).map_err(|source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reference to a surfaced memory item.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum ItemRef {
    Broad(String),
    Local(String),
}

/// One evidence observation produced by feedback on a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceUpdate {
    pub item: ItemRef,
    pub recommended: Label,
    pub corrected: Label,
}

/// Evidence gathered online, between two refreshes and across them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeLedger {
    /// Broad runtime counts keyed by policy statement text.
    pub broad: BTreeMap<String, EvidenceCounts>,
    /// Local runtime counts keyed by rule id; cleared when local rules are regenerated.
    pub local: BTreeMap<String, EvidenceCounts>,
}

impl RuntimeLedger {
    pub fn broad_counts(&self, statement: &str) -> EvidenceCounts {
        self.broad.get(statement).copied().unwrap_or_default()
    }
}

/// Writer-side adaptive memory: the report bank, retained raw broad
/// candidates, runtime evidence and the currently published snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMemory {
    pub bank: ReportBank,
    pub raw_candidates: Vec<BroadPolicy>,
    pub runtime: RuntimeLedger,
    /// Days whose reports have already been through induction.
    pub induced_days: BTreeSet<u32>,
    pub snapshot: MemorySnapshot,
}

impl PolicyMemory {
    pub fn new(gating: GatingConfig) -> Self {
        Self {
            bank: ReportBank::new(),
            raw_candidates: Vec::new(),
            runtime: RuntimeLedger::default(),
            induced_days: BTreeSet::new(),
            snapshot: MemorySnapshot::empty(gating),
        }
    }

    pub fn record_report(&mut self, report: Report) -> Result<(), MemoryError> {
        self.bank.record(report)
    }

    /// Applies feedback updates produced against `snapshot_version`. The
    /// published snapshot is left untouched; counts land in the runtime
    /// ledger and reach the next snapshot at refresh.
    pub fn apply_updates(
        &mut self,
        snapshot_version: u64,
        updates: &[EvidenceUpdate],
    ) -> Result<(), MemoryError> {
        if snapshot_version != self.snapshot.version {
            return Err(MemoryError::VersionMismatch {
                decision: snapshot_version,
                snapshot: self.snapshot.version,
            });
        }
        for update in updates {
            match &update.item {
                ItemRef::Broad(id) => {
                    let policy = self
                        .snapshot
                        .broad_by_id(id)
                        .ok_or_else(|| MemoryError::UnknownId(id.clone()))?;
                    self.runtime
                        .broad
                        .entry(policy.statement.clone())
                        .or_default()
                        .observe(update.recommended, update.corrected);
                }
                ItemRef::Local(id) => {
                    if self.snapshot.local_by_id(id).is_none() {
                        return Err(MemoryError::UnknownId(id.clone()));
                    }
                    self.runtime
                        .local
                        .entry(id.clone())
                        .or_default()
                        .observe(update.recommended, update.corrected);
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let text = serde_json::to_string_pretty(self).expect("state serialization cannot fail");
        write_text(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| MemoryError::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }
}
