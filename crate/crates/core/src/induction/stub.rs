//! Deterministic offline inducer that mines attribute patterns from failures.

use std::collections::BTreeMap;

use super::template::{render_item, InducedItem, MAX_ITEMS};
use super::{InductionRequest, PolicyInducer};
use crate::error::ProviderError;
use crate::label::Label;
use crate::memory::{Report, RuleType};

/// Attribute conjunction restricted to one namespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Pattern {
    namespace: String,
    conditions: Vec<(String, String)>,
}

/// Writes up each failure over the attributes its summary mentions first and
/// keeps the majority correction of every recurring pattern. Attributes that
/// never show up in a summary are never stated, so an item can be broader
/// than the rule that actually produced its reports.
#[derive(Debug, Clone)]
pub struct PatternInducer {
    /// Leading summary attributes stated per item.
    pub conditions: usize,
}

impl Default for PatternInducer {
    fn default() -> Self {
        Self { conditions: 2 }
    }
}

impl PatternInducer {
    /// Attributes whose value appears in the summary, by first mention.
    fn salient(&self, r: &Report) -> Vec<(String, String)> {
        let words: Vec<&str> = r.case.scenario_summary.split_whitespace().collect();
        let mut found: Vec<(usize, (String, String))> = r
            .case
            .attributes
            .iter()
            .filter_map(|(k, v)| words.iter().position(|w| w == v).map(|pos| (pos, (k.clone(), v.clone()))))
            .collect();
        found.sort();
        found.into_iter().take(self.conditions).map(|(_, kv)| kv).collect()
    }

    /// Up to [`MAX_ITEMS`] patterns, most frequent first. A pattern whose
    /// reports split evenly between labels is dropped.
    fn select(&self, reports: &[Report]) -> Vec<(Pattern, Label)> {
        let mut counts: BTreeMap<Pattern, [usize; 2]> = BTreeMap::new();
        for r in reports {
            let conditions = self.salient(r);
            if conditions.is_empty() {
                continue;
            }
            let pattern = Pattern {
                namespace: r.case.namespace.clone(),
                conditions,
            };
            counts.entry(pattern).or_default()[(r.corrected_label == Label::Refuse) as usize] += 1;
        }
        let mut ranked: Vec<(Pattern, Label, usize)> = counts
            .into_iter()
            .filter_map(|(p, [allow, refuse])| match allow.cmp(&refuse) {
                std::cmp::Ordering::Greater => Some((p, Label::Allow, allow + refuse)),
                std::cmp::Ordering::Less => Some((p, Label::Refuse, allow + refuse)),
                std::cmp::Ordering::Equal => None,
            })
            .collect();
        ranked.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(MAX_ITEMS);
        ranked.into_iter().map(|(p, l, _)| (p, l)).collect()
    }
}

/// Text for one mined pattern. The content line ends with the decisive
/// boundary as `key=value` pairs so rule-following guards can check it.
pub fn describe_pattern(conditions: &[(String, String)], label: Label) -> InducedItem {
    let values: Vec<&str> = conditions.iter().map(|(_, v)| v.as_str()).collect();
    let boundary = conditions
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("; ");
    let advice = match label {
        Label::Allow => "proceed once asked",
        Label::Refuse => "reject every request",
    };
    InducedItem {
        title: format!("{} requests", values.join(" with ")),
        description: format!("Requests involving {} were corrected to {}.", values.join(" and "), label.as_template_str()),
        content: format!(
            "{} is {}; {advice}; decisive boundary: {boundary}.",
            values.join(" with "),
            label.as_template_str(),
        ),
        recommended_label: label,
        rule_type: RuleType::GeneralPolicy,
    }
}

impl PolicyInducer for PatternInducer {
    fn induce(&self, request: &InductionRequest<'_>) -> Result<String, ProviderError> {
        let items: Vec<String> = self
            .select(request.reports)
            .into_iter()
            .map(|(p, l)| render_item(&describe_pattern(&p.conditions, l)))
            .collect();
        Ok(serde_json::json!({"insights": [], "policies": items}).to_string())
    }
}
