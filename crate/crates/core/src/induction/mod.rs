//! Offline refresh: broad induction, merging, mixed regions and local rules.

pub mod cluster;
pub mod local;
pub mod stub;
pub mod template;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};
use crate::evidence::EvidenceCounts;
use crate::label::LabelHistogram;
use crate::memory::{BroadPolicy, MemorySnapshot, PolicyMemory, Report, RuntimeLedger};
use crate::retrieval::{Embedder, EmbeddingVector};

pub use cluster::average_linkage;
pub use local::{
    conflict_score, detect_mixed_regions, render_local_rule_text, render_local_rules, LabeledCase, MixedCluster,
};
pub use stub::PatternInducer;
pub use template::{parse_induced_items, render_induction_prompt, InducedItem};

/// One induction call: the rendered prompt plus the reports behind it.
#[derive(Debug, Clone, Copy)]
pub struct InductionRequest<'a> {
    pub prompt: &'a str,
    pub reports: &'a [Report],
}

/// Offline model that turns a group of failures into raw item text.
pub trait PolicyInducer: Send + Sync {
    fn induce(&self, request: &InductionRequest<'_>) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshOptions {
    pub build_broad: bool,
    pub build_local: bool,
    pub merge_threshold: f64,
    pub region_threshold: f64,
    pub min_cluster_size: usize,
    pub near_conflict_similarity: f64,
    /// Extra attempts after a failed inducer call.
    pub induction_retries: u32,
}

impl Default for RefreshOptions {
    fn default() -> Self {
        Self {
            build_broad: true,
            build_local: true,
            merge_threshold: 0.20,
            region_threshold: 0.20,
            min_cluster_size: 2,
            near_conflict_similarity: 0.85,
            induction_retries: 2,
        }
    }
}

fn call_with_retries(
    inducer: &dyn PolicyInducer,
    request: &InductionRequest<'_>,
    retries: u32,
) -> Result<String, ProviderError> {
    let mut last = None;
    for _ in 0..=retries {
        match inducer.induce(request) {
            Ok(text) => return Ok(text),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Induces broad candidates from one day's reports. Reports are presented
/// in case-id order. An empty group makes no inducer call.
pub fn induce_broad(
    day: u32,
    day_reports: &[Report],
    inducer: &dyn PolicyInducer,
    retries: u32,
) -> Result<Vec<BroadPolicy>> {
    if day_reports.is_empty() {
        return Ok(Vec::new());
    }
    let mut reports = day_reports.to_vec();
    reports.sort_by(|a, b| a.case.case_id.cmp(&b.case.case_id));
    let prompt = render_induction_prompt(&reports);
    let raw = call_with_retries(inducer, &InductionRequest { prompt: &prompt, reports: &reports }, retries)
        .map_err(|e| Error::Refresh(format!("induction for day {day} failed: {e}")))?;
    let skew = LabelHistogram::from_labels(reports.iter().map(|r| r.corrected_label));
    let provenance: BTreeSet<String> = reports.iter().map(Report::report_id).collect();
    let items = parse_induced_items(&raw, skew.majority());
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(k, item)| {
            let support = skew.get(item.recommended_label);
            BroadPolicy {
                policy_id: format!("b-d{day:03}-{}", k + 1),
                statement: item.content,
                title: item.title,
                description: item.description,
                rule_type: item.rule_type,
                recommended_label: item.recommended_label,
                evidence: EvidenceCounts::new(support, skew.total() - support),
                provenance: provenance.clone(),
                label_skew: skew,
                near_conflict: false,
            }
        })
        .collect())
}

fn embed_all<'a, I>(embedder: &dyn Embedder, texts: I) -> Result<Vec<EmbeddingVector>, ProviderError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut cache: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
    let mut out = Vec::new();
    for t in texts {
        if !cache.contains_key(t) {
            cache.insert(t, embedder.embed(t)?);
        }
        out.push(cache[t].clone());
    }
    Ok(out)
}

/// Merges candidates by statement similarity. Each cluster keeps the
/// member closest to the normalized mean embedding (smaller id on ties) with
/// summed evidence and label skew and the union of provenance. Output is in
/// policy-id order.
pub fn merge_broad(
    candidates: &[BroadPolicy],
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<Vec<BroadPolicy>, ProviderError> {
    let mut sorted: Vec<&BroadPolicy> = candidates.iter().collect();
    sorted.sort_by(|a, b| a.policy_id.cmp(&b.policy_id));
    let points = embed_all(embedder, sorted.iter().map(|p| p.statement.as_str()))?;
    let mut merged = Vec::new();
    for members in average_linkage(&points, threshold) {
        let centroid = EmbeddingVector::centroid(members.iter().map(|&i| &points[i]));
        let rep = match &centroid {
            Some(c) => {
                let mut best = members[0];
                for &i in &members[1..] {
                    if points[i].cosine(c) > points[best].cosine(c) {
                        best = i;
                    }
                }
                best
            }
            None => members[0],
        };
        let mut policy = sorted[rep].clone();
        policy.evidence = EvidenceCounts::default();
        policy.label_skew = LabelHistogram::default();
        policy.provenance.clear();
        policy.near_conflict = false;
        for &i in &members {
            policy.evidence.add(&sorted[i].evidence);
            policy.label_skew.merge(&sorted[i].label_skew);
            policy.provenance.extend(sorted[i].provenance.iter().cloned());
        }
        merged.push(policy);
    }
    merged.sort_by(|a, b| a.policy_id.cmp(&b.policy_id));
    Ok(merged)
}

/// Flags policies whose statement is at least `similarity` close to any
/// mixed-region summary.
pub fn mark_near_conflict(
    broad: &mut [BroadPolicy],
    conflicts: &[MixedCluster],
    embedder: &dyn Embedder,
    similarity: f64,
) -> Result<(), ProviderError> {
    let regions = embed_all(embedder, conflicts.iter().map(|c| c.region_summary.as_str()))?;
    for policy in broad.iter_mut() {
        let v = embedder.embed(&policy.statement)?;
        policy.near_conflict = regions.iter().any(|r| v.cosine(r) >= similarity);
    }
    Ok(())
}

/// What a refresh did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshOutcome {
    pub version: u64,
    pub inducer_calls: usize,
    pub new_candidates: usize,
    pub mixed_clusters: Vec<MixedCluster>,
}

/// Cases from the bank with their corrected labels; a case reported on
/// several days keeps its latest report.
pub fn labeled_bank_cases(reports: &[Report]) -> Vec<LabeledCase> {
    let mut latest: BTreeMap<&str, &Report> = BTreeMap::new();
    for r in reports {
        let slot = latest.entry(r.case.case_id.as_str()).or_insert(r);
        if r.day >= slot.day {
            *slot = r;
        }
    }
    latest
        .into_values()
        .map(|r| LabeledCase {
            case: r.case.clone(),
            label: r.corrected_label,
        })
        .collect()
}

/// Rebuilds memory from the cumulative bank and publishes version + 1.
///
/// Only days not yet induced reach the inducer. Broad memory is re-merged
/// from every retained raw candidate, then runtime counts are added back for
/// statements that survive; counts for vanished statements are dropped.
/// Local rules are regenerated from scratch. On error nothing is committed.
pub fn refresh(
    memory: &mut PolicyMemory,
    embedder: &dyn Embedder,
    inducer: &dyn PolicyInducer,
    opts: &RefreshOptions,
) -> Result<RefreshOutcome> {
    let mut raw = memory.raw_candidates.clone();
    let mut induced_days = memory.induced_days.clone();
    let mut inducer_calls = 0;
    let mut new_candidates = 0;
    if opts.build_broad {
        for day in memory.bank.days() {
            if induced_days.contains(&day) {
                continue;
            }
            let day_reports: Vec<Report> = memory.bank.on_day(day).cloned().collect();
            let induced = induce_broad(day, &day_reports, inducer, opts.induction_retries)?;
            inducer_calls += 1;
            new_candidates += induced.len();
            raw.extend(induced);
            induced_days.insert(day);
        }
    }

    let mut broad = merge_broad(&raw, embedder, opts.merge_threshold)?;
    let mut runtime = RuntimeLedger::default();
    for policy in &mut broad {
        if let Some(counts) = memory.runtime.broad.get(&policy.statement) {
            policy.evidence.add(counts);
            runtime.broad.insert(policy.statement.clone(), *counts);
        }
    }

    let (mixed, local) = if opts.build_local {
        let cases = labeled_bank_cases(memory.bank.reports());
        let mixed = detect_mixed_regions(&cases, embedder, opts.region_threshold, opts.min_cluster_size)?;
        let local = mixed.iter().flat_map(|c| render_local_rules(c, &cases)).collect();
        (mixed, local)
    } else {
        (Vec::new(), Vec::new())
    };
    mark_near_conflict(&mut broad, &mixed, embedder, opts.near_conflict_similarity)?;

    let version = memory.snapshot.version + 1;
    let snapshot = MemorySnapshot::new(version, memory.snapshot.gating, broad, local)?;
    memory.raw_candidates = raw;
    memory.induced_days = induced_days;
    memory.runtime = runtime;
    memory.snapshot = snapshot;
    Ok(RefreshOutcome {
        version,
        inducer_calls,
        new_candidates,
        mixed_clusters: mixed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::GatingConfig;
    use crate::label::Label;
    use crate::memory::fixtures::{broad, case};
    use crate::memory::{EvidenceUpdate, ItemRef};
    use crate::retrieval::HashingEmbedder;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Fixed {
        text: String,
        calls: AtomicUsize,
    }

    impl Fixed {
        fn new(text: impl Into<String>) -> Self {
            Self {
                text: text.into(),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl PolicyInducer for Fixed {
        fn induce(&self, _: &InductionRequest<'_>) -> Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.text.clone())
        }
    }

    struct Failing;

    impl PolicyInducer for Failing {
        fn induce(&self, _: &InductionRequest<'_>) -> Result<String, ProviderError> {
            Err(ProviderError::Transport {
                provider: "test",
                message: "down".into(),
            })
        }
    }

    fn item(label: &str) -> String {
        let item = format!("Title: t\nDescription: d\nContent: keep it private\nRecommended label: {label}\nRule type: general_policy");
        serde_json::json!({"insights": [item], "policies": []}).to_string()
    }

    fn report_on(id: &str, summary: &str, corrected: Label, day: u32) -> Report {
        Report::new(case(id, summary), corrected.flipped(), corrected, day).unwrap()
    }

    #[test]
    fn induced_evidence_follows_the_count_rule() {
        let all_refuse: Vec<Report> = (0..4).map(|i| report_on(&format!("c{i}"), "s", Label::Refuse, 1)).collect();
        let got = induce_broad(1, &all_refuse, &Fixed::new(item("inappropriate")), 0).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].evidence, EvidenceCounts::new(4, 0));
        assert_eq!(got[0].provenance.len(), 4);
        assert_eq!(got[0].label_skew.total(), 4);

        let mixed = vec![
            report_on("a", "s", Label::Allow, 1),
            report_on("b", "s", Label::Allow, 1),
            report_on("c", "s", Label::Refuse, 1),
        ];
        let got = induce_broad(1, &mixed, &Fixed::new(item("appropriate")), 0).unwrap();
        assert_eq!(got[0].evidence, EvidenceCounts::new(2, 1));
        // unrecognized label resolves to the group majority
        let got = induce_broad(1, &mixed, &Fixed::new(item("unclear")), 0).unwrap();
        assert_eq!(got[0].recommended_label, Label::Allow);
    }

    #[test]
    fn empty_day_makes_no_call() {
        let inducer = Fixed::new(item("appropriate"));
        assert!(induce_broad(1, &[], &inducer, 0).unwrap().is_empty());
        assert_eq!(inducer.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn identical_statements_sum_evidence() {
        let e = HashingEmbedder::default();
        let a = broad("b1", "never share health data", Label::Refuse, (3, 0));
        let b = broad("b2", "never share health data", Label::Refuse, (2, 1));
        let merged = merge_broad(&[b, a], &e, 0.2).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].policy_id, "b1");
        assert_eq!(merged[0].evidence, EvidenceCounts::new(5, 1));
        assert_eq!(merged[0].provenance.len(), 2);
        assert_eq!(merged[0].label_skew.total(), 2);
    }

    #[test]
    fn orthogonal_statements_stay_apart() {
        let e = HashingEmbedder::default();
        let a = broad("b1", "diagnosis journalist gossip", Label::Refuse, (3, 0));
        let b = broad("b2", "salary manager coordination", Label::Allow, (2, 1));
        let merged = merge_broad(&[a.clone(), b.clone()], &e, 0.2).unwrap();
        assert_eq!(merged, vec![a, b]);
    }

    #[test]
    fn representative_is_closest_to_centroid() {
        // fixed embeddings: A and B close, C far
        struct Table;
        impl Embedder for Table {
            fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
                let v = match text {
                    "A" => vec![1.0, 0.0, 0.0],
                    "B" => vec![0.8, 0.6, 0.0],
                    "B2" => vec![0.9, 0.43588989435406736, 0.0],
                    _ => vec![0.0, 0.0, 1.0],
                };
                Ok(EmbeddingVector::normalized(v).unwrap())
            }
        }
        // A-B distance 0.2 is not below threshold; A-B2 is about 0.1
        let a = broad("p1", "A", Label::Allow, (1, 0));
        let b = broad("p2", "B2", Label::Allow, (1, 0));
        let c = broad("p3", "C", Label::Allow, (1, 0));
        let merged = merge_broad(&[a, b, c], &Table, 0.2).unwrap();
        assert_eq!(merged.len(), 2);
        // two-member centroid is equidistant: smaller id wins
        assert_eq!(merged[0].statement, "A");
        assert_eq!(merged[0].evidence, EvidenceCounts::new(2, 0));

        let three = [
            broad("p1", "A", Label::Allow, (1, 0)),
            broad("p2", "B2", Label::Allow, (1, 0)),
            broad("p3", "B2", Label::Allow, (1, 0)),
        ];
        let merged = merge_broad(&three, &Table, 0.2).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].statement, "B2");
        assert_eq!(merged[0].policy_id, "p2");
    }

    #[test]
    fn near_conflict_boundary_is_inclusive() {
        struct Table;
        impl Embedder for Table {
            fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
                let v = match text {
                    "region" => vec![1.0, 0.0],
                    // 3-4-5 triangle: cosine to the region is exactly 0.6
                    "exact" => vec![3.0, 4.0],
                    "same" => vec![1.0, 0.0],
                    _ => vec![0.0, 1.0],
                };
                Ok(EmbeddingVector::normalized(v).unwrap())
            }
        }
        let cluster = MixedCluster {
            cluster_id: "privacy-000".into(),
            namespace: "privacy".into(),
            member_case_ids: vec![],
            label_histogram: LabelHistogram { allow: 1, refuse: 1 },
            conflict_score: 0.5,
            region_summary: "region".into(),
        };
        let mut policies = vec![
            broad("b1", "same", Label::Allow, (1, 0)),
            broad("b2", "far", Label::Allow, (1, 0)),
            broad("b3", "exact", Label::Allow, (1, 0)),
        ];
        mark_near_conflict(&mut policies, std::slice::from_ref(&cluster), &Table, 0.85).unwrap();
        assert_eq!(policies.iter().map(|p| p.near_conflict).collect::<Vec<_>>(), vec![true, false, false]);
        mark_near_conflict(&mut policies, &[cluster], &Table, 0.6).unwrap();
        assert_eq!(policies.iter().map(|p| p.near_conflict).collect::<Vec<_>>(), vec![true, false, true]);
    }

    fn memory_with(reports: Vec<Report>) -> PolicyMemory {
        let mut m = PolicyMemory::new(GatingConfig::default());
        for r in reports {
            m.record_report(r).unwrap();
        }
        m
    }

    #[test]
    fn refresh_without_new_reports_only_bumps_version() {
        let e = HashingEmbedder::default();
        let inducer = Fixed::new(item("inappropriate"));
        let mut m = memory_with((0..4).map(|i| report_on(&format!("c{i}"), "salary stranger gossip", Label::Refuse, 1)).collect());
        let first = refresh(&mut m, &e, &inducer, &RefreshOptions::default()).unwrap();
        assert_eq!((first.version, first.inducer_calls), (1, 1));
        assert!((1..=3).contains(&m.snapshot.broad.len()));
        assert!(m.snapshot.local.is_empty());
        let broad_before = m.snapshot.broad.clone();
        let second = refresh(&mut m, &e, &inducer, &RefreshOptions::default()).unwrap();
        assert_eq!((second.version, second.inducer_calls), (2, 0));
        assert_eq!(m.snapshot.broad, broad_before);
        assert_eq!(inducer.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn mixed_bank_gains_complementary_local_rules() {
        let e = HashingEmbedder::default();
        let mut m = memory_with(vec![
            report_on("a", "beliefs friend support", Label::Allow, 1),
            report_on("b", "beliefs friend support", Label::Refuse, 1),
        ]);
        let out = refresh(&mut m, &e, &Fixed::new(item("appropriate")), &RefreshOptions::default()).unwrap();
        assert_eq!(out.mixed_clusters.len(), 1);
        assert_eq!(m.snapshot.local.len(), 2);
        assert_ne!(m.snapshot.local[0].recommended_label, m.snapshot.local[1].recommended_label);
    }

    #[test]
    fn runtime_counts_carry_over_for_surviving_statements() {
        let e = HashingEmbedder::default();
        let inducer = Fixed::new(item("inappropriate"));
        let mut m = memory_with(vec![report_on("a", "x", Label::Refuse, 1), report_on("b", "x", Label::Refuse, 1)]);
        refresh(&mut m, &e, &inducer, &RefreshOptions::default()).unwrap();
        let id = m.snapshot.broad[0].policy_id.clone();
        let v = m.snapshot.version;
        let update = |corrected| EvidenceUpdate {
            item: ItemRef::Broad(id.clone()),
            recommended: Label::Refuse,
            corrected,
        };
        m.apply_updates(v, &[update(Label::Refuse), update(Label::Allow), update(Label::Refuse)]).unwrap();
        m.runtime.broad.insert("vanished statement".into(), EvidenceCounts::new(9, 9));
        refresh(&mut m, &e, &inducer, &RefreshOptions::default()).unwrap();
        assert_eq!(m.snapshot.broad[0].evidence, EvidenceCounts::new(4, 1));
        assert!(!m.runtime.broad.contains_key("vanished statement"));
        // carried counts stay in the ledger and are not double counted
        refresh(&mut m, &e, &inducer, &RefreshOptions::default()).unwrap();
        assert_eq!(m.snapshot.broad[0].evidence, EvidenceCounts::new(4, 1));
    }

    #[test]
    fn failed_refresh_commits_nothing() {
        let e = HashingEmbedder::default();
        let mut m = memory_with(vec![report_on("a", "x", Label::Refuse, 1)]);
        let before = m.clone();
        let err = refresh(&mut m, &e, &Failing, &RefreshOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Refresh(_)));
        assert_eq!(m, before);
    }
}
