//! Offline induction prompt rendering and response parsing.

use serde::Deserialize;

use crate::label::Label;
use crate::memory::{Report, RuleType};

pub const MAX_ITEMS: usize = 3;

/// One structured preventive item parsed from an inducer response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InducedItem {
    pub title: String,
    pub description: String,
    pub content: String,
    pub recommended_label: Label,
    pub rule_type: RuleType,
}

/// Renders the induction prompt for one group of day-end failures.
pub fn render_induction_prompt(reports: &[Report]) -> String {
    let mut out = String::from("Reported failures to convert into preventive memory:\n\n");
    for (i, r) in reports.iter().enumerate() {
        out.push_str(&format!(
            "  Failure {}:\n    Scenario: {}\n    Model prediction: {}\n    Correct label: {}\n\n",
            i + 1,
            r.case.scenario_text,
            r.predicted_label.as_template_str(),
            r.corrected_label.as_template_str(),
        ));
    }
    out.push_str(
        "Convert these failures into concise, generalizable preventive memory items.\n\
         Avoid quoting case-specific names or wording. Keep each item compact and\n\
         reusable. Produce at most 3 items.\n\
         \n\
         Each item must follow exactly this multiline format:\n\
         Title: short risk pattern title\n\
         Description: one-line summary\n\
         Content: preventive rule, decisive boundary, and when to defer if needed\n\
         Recommended label: appropriate or inappropriate\n\
         Rule type: general_policy or local_exception\n\
         \n\
         Respond with JSON: {\"insights\": [\"item1\", \"item2\", ...],\n\
         \"policies\": [\"item3\", ...]}\n",
    );
    out
}

/// Renders one item in the multiline format the prompt asks for.
pub fn render_item(item: &InducedItem) -> String {
    format!(
        "Title: {}\nDescription: {}\nContent: {}\nRecommended label: {}\nRule type: {}",
        item.title,
        item.description,
        item.content,
        item.recommended_label.as_template_str(),
        item.rule_type.as_str()
    )
}

#[derive(Deserialize)]
struct ResponseDoc {
    #[serde(default)]
    insights: Vec<serde_json::Value>,
    #[serde(default)]
    policies: Vec<serde_json::Value>,
}

fn item_texts(raw: &str) -> Vec<String> {
    let candidates = [
        Some(raw.trim()),
        raw.find('{')
            .zip(raw.rfind('}'))
            .filter(|(a, b)| a < b)
            .map(|(a, b)| &raw[a..=b]),
    ];
    for text in candidates.into_iter().flatten() {
        if let Ok(doc) = serde_json::from_str::<ResponseDoc>(text) {
            return doc
                .insights
                .into_iter()
                .chain(doc.policies)
                .map(|v| match v {
                    serde_json::Value::String(s) => s,
                    other => object_to_lines(&other),
                })
                .collect();
        }
    }
    // plain-text fallback: blank-line separated item blocks
    raw.split("\n\n").map(str::to_string).collect()
}

/// Accepts items returned as JSON objects keyed by field name.
fn object_to_lines(value: &serde_json::Value) -> String {
    let Some(obj) = value.as_object() else {
        return value.to_string();
    };
    obj.iter()
        .map(|(k, v)| format!("{}: {}", k.replace('_', " "), v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Title,
    Description,
    Content,
    Label,
    RuleType,
}

fn field_of(key: &str) -> Option<Field> {
    match key.trim().to_ascii_lowercase().as_str() {
        "title" => Some(Field::Title),
        "description" => Some(Field::Description),
        "content" => Some(Field::Content),
        "recommended label" | "recommended_label" | "label" => Some(Field::Label),
        "rule type" | "rule_type" | "type" => Some(Field::RuleType),
        _ => None,
    }
}

fn first_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

fn parse_item(text: &str, fallback_label: Label) -> Option<InducedItem> {
    let mut fields: [Option<String>; 5] = Default::default();
    let mut current: Option<Field> = None;
    for line in text.lines() {
        let parsed = line
            .split_once(':')
            .and_then(|(k, v)| field_of(k).map(|f| (f, v.trim().to_string())));
        match parsed {
            Some((f, v)) => {
                fields[f as usize] = Some(v);
                current = Some(f);
            }
            None => {
                let extra = line.trim();
                if let (Some(f), false) = (current, extra.is_empty()) {
                    let slot = fields[f as usize].get_or_insert_with(String::new);
                    if !slot.is_empty() {
                        slot.push(' ');
                    }
                    slot.push_str(extra);
                }
            }
        }
    }
    let [title, description, content, label, rule_type] = fields;
    let content = content.filter(|c| !c.is_empty())?;
    let title = title.filter(|t| !t.is_empty()).unwrap_or_else(|| first_words(&content, 8));
    let description = description.filter(|d| !d.is_empty()).unwrap_or_else(|| title.clone());
    let recommended_label = label
        .as_deref()
        .and_then(Label::parse_loose)
        .unwrap_or(fallback_label);
    let rule_type = rule_type
        .as_deref()
        .and_then(RuleType::parse)
        .unwrap_or_default();
    Some(InducedItem {
        title,
        description,
        content,
        recommended_label,
        rule_type,
    })
}

/// Parses an inducer response into at most [`MAX_ITEMS`] items. Items
/// without content are dropped; a missing or unrecognized label becomes
/// `fallback_label`.
pub fn parse_induced_items(raw: &str, fallback_label: Label) -> Vec<InducedItem> {
    item_texts(raw)
        .iter()
        .filter_map(|t| parse_item(t, fallback_label))
        .take(MAX_ITEMS)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::fixtures::report;

    #[test]
    fn prompt_lists_failures_in_order() {
        let reports = vec![
            report("c1", "diagnosis family support", Label::Allow, 1),
            report("c2", "salary journalist gossip", Label::Refuse, 1),
        ];
        let prompt = render_induction_prompt(&reports);
        let expected_head = "Reported failures to convert into preventive memory:\n\n  \
            Failure 1:\n    Scenario: Scenario about diagnosis family support.\n    \
            Model prediction: inappropriate\n    Correct label: appropriate\n\n  \
            Failure 2:\n    Scenario: Scenario about salary journalist gossip.\n    \
            Model prediction: appropriate\n    Correct label: inappropriate\n\n\
            Convert these failures";
        assert!(prompt.starts_with(expected_head), "{prompt}");
        assert!(prompt.ends_with("\"policies\": [\"item3\", ...]}\n"));
        assert!(prompt.contains("Produce at most 3 items."));
    }

    #[test]
    fn parses_json_response() {
        let item = "Title: T\nDescription: D\nContent: C1\ncontinued\nRecommended label: inappropriate\nRule type: local_exception";
        let raw = serde_json::json!({"insights": [item], "policies": []}).to_string();
        let items = parse_induced_items(&raw, Label::Allow);
        assert_eq!(
            items,
            vec![InducedItem {
                title: "T".into(),
                description: "D".into(),
                content: "C1 continued".into(),
                recommended_label: Label::Refuse,
                rule_type: RuleType::LocalException,
            }]
        );
    }

    #[test]
    fn invalid_label_uses_fallback_and_missing_fields_are_filled() {
        let raw = r#"```json
{"insights": ["Content: never share it\nRecommended label: maybe"], "policies": ["Title: only title"]}
```"#;
        let items = parse_induced_items(raw, Label::Refuse);
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].recommended_label, Label::Refuse);
        assert_eq!(items[0].title, "never share it");
        assert_eq!(items[0].description, "never share it");
        assert_eq!(items[0].rule_type, RuleType::GeneralPolicy);
    }

    #[test]
    fn caps_at_three_items_and_reads_plain_text() {
        let block = |i: usize| format!("Title: t{i}\nDescription: d\nContent: c{i}\nRecommended label: appropriate\nRule type: general_policy");
        let raw = (0..5).map(block).collect::<Vec<_>>().join("\n\n");
        let items = parse_induced_items(&raw, Label::Refuse);
        assert_eq!(items.len(), 3);
        assert_eq!(items[2].content, "c2");
        assert!(items.iter().all(|i| i.recommended_label == Label::Allow));
    }

    #[test]
    fn render_item_round_trips() {
        let item = InducedItem {
            title: "A".into(),
            description: "B".into(),
            content: "C".into(),
            recommended_label: Label::Allow,
            rule_type: RuleType::GeneralPolicy,
        };
        let raw = serde_json::json!({"insights": [], "policies": [render_item(&item)]}).to_string();
        assert_eq!(parse_induced_items(&raw, Label::Refuse), vec![item]);
    }
}
