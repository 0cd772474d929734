//! Mixed-label region detection and local rule rendering.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cluster::average_linkage;
use crate::error::ProviderError;
use crate::evidence::EvidenceCounts;
use crate::label::{Label, LabelHistogram};
use crate::memory::{CaseRecord, LocalRule, Pivot};
use crate::retrieval::{tokenize, Embedder};

pub const SUMMARY_FACET: &str = "summary facets";
const TOP_FACETS: usize = 5;

/// A semantic cluster of labeled cases that contains both labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedCluster {
    pub cluster_id: String,
    pub namespace: String,
    pub member_case_ids: Vec<String>,
    pub label_histogram: LabelHistogram,
    pub conflict_score: f64,
    /// Most frequent member summary; names the region in rendered rules.
    pub region_summary: String,
}

/// A case paired with its corrected label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub case: CaseRecord,
    pub label: Label,
}

pub fn conflict_score(hist: &LabelHistogram) -> f64 {
    let total = hist.total();
    if total == 0 {
        return 0.0;
    }
    1.0 - hist.allow.max(hist.refuse) as f64 / total as f64
}

/// Most frequent string; ties go to the lexicographically smallest.
fn mode<'a, I: IntoIterator<Item = &'a str>>(values: I) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (v, n) in counts {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((v, n));
        }
    }
    best.map(|(v, _)| v)
}

/// Clusters cases per namespace over summary embeddings and keeps clusters
/// with at least `min_size` members carrying both labels. Input order does
/// not matter: cases are clustered in case-id order.
pub fn detect_mixed_regions(
    cases: &[LabeledCase],
    embedder: &dyn Embedder,
    threshold: f64,
    min_size: usize,
) -> Result<Vec<MixedCluster>, ProviderError> {
    let mut by_namespace: BTreeMap<&str, Vec<&LabeledCase>> = BTreeMap::new();
    for c in cases {
        by_namespace.entry(c.case.namespace.as_str()).or_default().push(c);
    }
    let mut out = Vec::new();
    for (namespace, mut members) in by_namespace {
        members.sort_by(|a, b| a.case.case_id.cmp(&b.case.case_id));
        // identical summaries embed identically; embed each distinct one once
        let mut cache: BTreeMap<&str, _> = BTreeMap::new();
        let mut points = Vec::with_capacity(members.len());
        for m in &members {
            let summary = m.case.scenario_summary.as_str();
            if !cache.contains_key(summary) {
                cache.insert(summary, embedder.embed(summary)?);
            }
            points.push(cache[summary].clone());
        }
        for (k, cluster) in average_linkage(&points, threshold).into_iter().enumerate() {
            if cluster.len() < min_size {
                continue;
            }
            let hist = LabelHistogram::from_labels(cluster.iter().map(|&i| members[i].label));
            if !hist.is_mixed() {
                continue;
            }
            let region = mode(cluster.iter().map(|&i| members[i].case.scenario_summary.as_str()))
                .unwrap_or_default()
                .to_string();
            out.push(MixedCluster {
                cluster_id: format!("{namespace}-{k:03}"),
                namespace: namespace.to_string(),
                member_case_ids: cluster.iter().map(|&i| members[i].case.case_id.clone()).collect(),
                label_histogram: hist,
                conflict_score: conflict_score(&hist),
                region_summary: region,
            });
        }
    }
    Ok(out)
}

fn summaries<'a>(side: &[&'a CaseRecord]) -> Vec<&'a str> {
    side.iter().map(|c| c.scenario_summary.as_str()).collect()
}

fn top_tokens(summaries: &[&str]) -> Vec<String> {
    let mut tf: BTreeMap<String, usize> = BTreeMap::new();
    for s in summaries {
        for t in tokenize(s) {
            *tf.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = tf.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(TOP_FACETS).map(|(t, _)| t).collect()
}

/// Pivots seen from the ALLOW side: attributes whose modal value differs
/// between the two label sides, then summary tokens frequent on one side only.
fn extract_pivots(allow: &[&CaseRecord], refuse: &[&CaseRecord]) -> Vec<Pivot> {
    let mut pivots = Vec::new();
    let keys: BTreeSet<&str> = allow
        .iter()
        .chain(refuse)
        .flat_map(|c| c.attributes.keys().map(String::as_str))
        .collect();
    for key in keys {
        let side_mode = |side: &[&CaseRecord]| {
            mode(side.iter().filter_map(|c| c.attributes.get(key).map(String::as_str))).map(str::to_string)
        };
        if let (Some(a), Some(r)) = (side_mode(allow), side_mode(refuse)) {
            if a != r {
                pivots.push(Pivot {
                    facet: key.to_string(),
                    own: vec![a],
                    other: vec![r],
                });
            }
        }
    }
    let top_allow = top_tokens(&summaries(allow));
    let top_refuse = top_tokens(&summaries(refuse));
    let only = |a: &[String], b: &[String]| a.iter().filter(|t| !b.contains(t)).cloned().collect::<Vec<_>>();
    let (allow_only, refuse_only) = (only(&top_allow, &top_refuse), only(&top_refuse, &top_allow));
    if !allow_only.is_empty() || !refuse_only.is_empty() {
        pivots.push(Pivot {
            facet: SUMMARY_FACET.to_string(),
            own: allow_only,
            other: refuse_only,
        });
    }
    if pivots.is_empty() {
        pivots.push(Pivot::none_found());
    }
    pivots
}

/// Renders the two complementary local rules for a mixed cluster. Members
/// are looked up in `cases` by case id.
pub fn render_local_rules(cluster: &MixedCluster, cases: &[LabeledCase]) -> [LocalRule; 2] {
    let index: BTreeMap<&str, &LabeledCase> = cases.iter().map(|c| (c.case.case_id.as_str(), c)).collect();
    let members: Vec<&LabeledCase> = cluster
        .member_case_ids
        .iter()
        .filter_map(|id| index.get(id.as_str()).copied())
        .collect();
    let side = |label: Label| members.iter().filter(|m| m.label == label).map(|m| &m.case).collect::<Vec<_>>();
    let (allow, refuse) = (side(Label::Allow), side(Label::Refuse));
    let pivots = extract_pivots(&allow, &refuse);
    let hist = cluster.label_histogram;
    let rule = |label: Label, pivots: Vec<Pivot>| LocalRule {
        rule_id: format!(
            "l-{}-{}",
            cluster.cluster_id,
            if label == Label::Allow { "allow" } else { "refuse" }
        ),
        region_summary: cluster.region_summary.clone(),
        recommended_label: label,
        pivots,
        evidence: EvidenceCounts::new(hist.get(label), hist.get(label.flipped())),
        source_cluster_id: cluster.cluster_id.clone(),
    };
    let inverse = pivots.iter().map(Pivot::inverse).collect();
    [rule(Label::Allow, pivots), rule(Label::Refuse, inverse)]
}

/// Deterministic text form of a local rule.
pub fn render_local_rule_text(rule: &LocalRule) -> String {
    let pivots = rule.pivots.iter().map(Pivot::to_string).collect::<Vec<_>>().join("; ");
    format!(
        "Local rule: In the boundary-heavy region '{}', treat the case as {}.\n\
         Evidence: support={}, nearby contradictions={}.\n\
         Decisive pivots: {}.\n\
         Use this as a narrow exception-level cue when the current case matches the\n\
         same local pattern.",
        rule.region_summary,
        rule.recommended_label.as_template_str(),
        rule.evidence.support,
        rule.evidence.contradiction,
        pivots
    )
}
