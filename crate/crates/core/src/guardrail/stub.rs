//! Rule-following guard model that reads the memory sections of its prompt.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::prompt::{boundary_values, parse_prompt, ParsedPrompt, PromptLocal};
use super::{BaseGuardrail, GuardModel, GuardQuery, GuardVerdict};
use crate::error::ProviderError;
use crate::label::{Label, LabelHistogram};
use crate::memory::CaseRecord;
use crate::retrieval::tokenize;

type Choice = (Label, String);

/// Deterministic guard: a matching local rule first, then applicable broad
/// policies when they agree, then exact-summary past cases, then
/// the base labeling function.
pub struct StubGuard {
    base: Arc<dyn BaseGuardrail>,
    /// Minimum share of a local rule's tokens that must occur in the case.
    pub local_overlap: f64,
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Share of the rule's region and own-side pivot tokens present in `tokens`.
pub fn local_overlap(rule: &PromptLocal, tokens: &BTreeSet<String>) -> f64 {
    let rule_tokens: BTreeSet<String> = tokenize(&rule.region)
        .into_iter()
        .chain(rule.pivot_values.iter().flat_map(|v| tokenize(v)))
        .collect();
    if rule_tokens.is_empty() {
        return 0.0;
    }
    rule_tokens.intersection(tokens).count() as f64 / rule_tokens.len() as f64
}

impl StubGuard {
    pub fn new(base: Arc<dyn BaseGuardrail>, local_overlap: f64) -> Self {
        Self { base, local_overlap }
    }

    /// Best-overlapping local rule; skipped when it ties with an
    /// opposite-label rule or falls below the overlap threshold.
    fn by_local(&self, parsed: &ParsedPrompt, tokens: &BTreeSet<String>) -> Option<Choice> {
        let scored: Vec<(f64, &PromptLocal, usize)> = parsed
            .local
            .iter()
            .enumerate()
            .map(|(i, r)| (local_overlap(r, tokens), r, i))
            .collect();
        let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        if !(best >= self.local_overlap) {
            return None;
        }
        let top: Vec<&(f64, &PromptLocal, usize)> = scored.iter().filter(|s| s.0 == best).collect();
        let label = top[0].1.label;
        if top.iter().any(|s| s.1.label != label) {
            return None;
        }
        Some((label, format!("local rule {} applies (overlap {best:.2})", top[0].2 + 1)))
    }

    /// Applicable broad policies, skipped when they disagree on the label.
    fn by_broad(parsed: &ParsedPrompt, tokens: &BTreeSet<String>) -> Option<Choice> {
        let applicable: Vec<(usize, Label)> = parsed
            .broad
            .iter()
            .enumerate()
            .filter(|(_, item)| {
                let values = boundary_values(&item.content);
                !values.is_empty() && values.iter().all(|v| tokenize(v).iter().all(|t| tokens.contains(t)))
            })
            .map(|(i, item)| (i, item.label))
            .collect();
        let (first, label) = *applicable.first()?;
        if applicable.iter().any(|(_, l)| *l != label) {
            return None;
        }
        Some((label, format!("memory {} applies", first + 1)))
    }

    fn by_cases(parsed: &ParsedPrompt, case: &CaseRecord) -> Option<Choice> {
        let own = token_set(&case.scenario_summary);
        let hist = LabelHistogram::from_labels(
            parsed
                .cases
                .iter()
                .filter(|c| token_set(&c.summary) == own)
                .map(|c| c.label),
        );
        if hist.total() == 0 || hist.allow == hist.refuse {
            return None;
        }
        Some((hist.majority(), format!("{} matching past cases", hist.total())))
    }
}

impl GuardModel for StubGuard {
    fn decide(&self, query: &GuardQuery<'_>) -> Result<GuardVerdict, ProviderError> {
        let case = query.case;
        let Some(prompt) = query.prompt else {
            return Ok(GuardVerdict {
                label: self.base.label(case),
                rationale: "no memory; base decision".into(),
            });
        };
        let parsed = parse_prompt(prompt);
        let mut tokens = token_set(&case.scenario_text);
        tokens.extend(tokenize(&case.scenario_summary));
        let (label, rationale) = self
            .by_local(&parsed, &tokens)
            .or_else(|| Self::by_broad(&parsed, &tokens))
            .or_else(|| Self::by_cases(&parsed, case))
            .unwrap_or_else(|| (self.base.label(case), "no memory item applies; base decision".into()));
        Ok(GuardVerdict { label, rationale })
    }
}
