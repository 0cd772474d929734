use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary guardrail decision. `Allow` is encoded as 0 and `Refuse` as 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Allow,
    Refuse,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Allow, Label::Refuse];

    pub fn as_int(self) -> u8 {
        match self {
            Label::Allow => 0,
            Label::Refuse => 1,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Allow => Label::Refuse,
            Label::Refuse => Label::Allow,
        }
    }

    /// Wording used inside prompt templates.
    pub fn as_template_str(self) -> &'static str {
        match self {
            Label::Allow => "appropriate",
            Label::Refuse => "inappropriate",
        }
    }

    /// Parses template wording as well as the ALLOW/REFUSE and 0/1 encodings.
    pub fn parse_loose(raw: &str) -> Option<Label> {
        let token = raw
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == '`')
            .to_ascii_lowercase();
        match token.as_str() {
            "appropriate" | "allow" | "0" => Some(Label::Allow),
            "inappropriate" | "refuse" | "1" => Some(Label::Refuse),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Allow => "ALLOW",
            Label::Refuse => "REFUSE",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::parse_loose(s).ok_or_else(|| format!("unrecognized label `{s}`"))
    }
}

/// Per-label count histogram.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub allow: u64,
    pub refuse: u64,
}

impl LabelHistogram {
    pub fn from_labels<I: IntoIterator<Item = Label>>(labels: I) -> Self {
        let mut hist = LabelHistogram::default();
        for label in labels {
            hist.add(label);
        }
        hist
    }

    pub fn add(&mut self, label: Label) {
        match label {
            Label::Allow => self.allow += 1,
            Label::Refuse => self.refuse += 1,
        }
    }

    pub fn get(&self, label: Label) -> u64 {
        match label {
            Label::Allow => self.allow,
            Label::Refuse => self.refuse,
        }
    }

    pub fn total(&self) -> u64 {
        self.allow + self.refuse
    }

    pub fn merge(&mut self, other: &LabelHistogram) {
        self.allow += other.allow;
        self.refuse += other.refuse;
    }

    /// Majority label; ties resolve to `Refuse`.
    pub fn majority(&self) -> Label {
        if self.allow > self.refuse {
            Label::Allow
        } else {
            Label::Refuse
        }
    }

    pub fn is_mixed(&self) -> bool {
        self.allow > 0 && self.refuse > 0
    }
}
