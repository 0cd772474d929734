use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::world::WorldConfig;
use crate::error::{Error, Result};
use crate::evidence::{GateRule, GatingConfig};
use crate::guardrail::MemoryChannels;
use crate::induction::RefreshOptions;
use crate::retrieval::RetrievalLimits;

/// Compared methods. `Agrail` is a reserved slot and cannot be run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pure,
    CaseMemory,
    BroadOnly,
    Lisa,
    LisaNoGate,
    LisaNoLocal,
    LisaNoBoth,
    GateAccuracy,
    Agrail,
}

impl Method {
    /// Every runnable method.
    pub const RUNNABLE: [Method; 8] = [
        Method::Pure,
        Method::CaseMemory,
        Method::BroadOnly,
        Method::Lisa,
        Method::LisaNoGate,
        Method::LisaNoLocal,
        Method::LisaNoBoth,
        Method::GateAccuracy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pure => "pure",
            Method::CaseMemory => "case_memory",
            Method::BroadOnly => "broad_only",
            Method::Lisa => "lisa",
            Method::LisaNoGate => "lisa_no_gate",
            Method::LisaNoLocal => "lisa_no_local",
            Method::LisaNoBoth => "lisa_no_both",
            Method::GateAccuracy => "gate_accuracy",
            Method::Agrail => "agrail",
        }
    }

    pub fn valid_names() -> String {
        Self::RUNNABLE.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
    }

    /// Memory channels read and the broad-item gate.
    pub fn setup(self) -> Result<(MemoryChannels, GateRule)> {
        let cases_broad = MemoryChannels {
            cases: true,
            broad: true,
            local: false,
        };
        Ok(match self {
            Method::Pure => (MemoryChannels::NONE, GateRule::Disabled),
            Method::CaseMemory => (
                MemoryChannels {
                    cases: true,
                    broad: false,
                    local: false,
                },
                GateRule::Disabled,
            ),
            Method::BroadOnly | Method::LisaNoBoth => (cases_broad, GateRule::Disabled),
            Method::LisaNoLocal => (cases_broad, GateRule::BetaQuantile),
            Method::LisaNoGate => (MemoryChannels::ALL, GateRule::Disabled),
            Method::GateAccuracy => (MemoryChannels::ALL, GateRule::EmpiricalAccuracy),
            Method::Lisa => (MemoryChannels::ALL, GateRule::BetaQuantile),
            Method::Agrail => {
                return Err(Error::Config(
                    "method `agrail` is reserved and not implemented (its checklist internals are out of scope)".into(),
                ))
            }
        })
    }

    /// Whether the method refreshes memory at all.
    pub fn adapts(self) -> bool {
        self != Method::Pure
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            Error::Config(format!("unknown method `{s}`; valid methods: {}", Method::valid_names()))
        })
    }
}

fn default_overlap() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

/// One simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    pub days: u32,
    pub stream_per_day: usize,
    pub heldout_size: usize,
    pub noise_rho: f64,
    pub seed: u64,
    pub method: Method,
    #[serde(default)]
    pub gating: GatingConfig,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub refresh: RefreshOptions,
    #[serde(default)]
    pub retrieval: RetrievalLimits,
    /// Share of a local rule's tokens the stub guard needs to see in a case.
    #[serde(default = "default_overlap")]
    pub local_overlap: f64,
    #[serde(default = "default_true")]
    pub fail_closed: bool,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        Self {
            days: 10,
            stream_per_day: 50,
            heldout_size: 500,
            noise_rho: 0.0,
            seed: 0,
            method: Method::Lisa,
            gating: GatingConfig::default(),
            world: WorldConfig::default(),
            refresh: RefreshOptions::default(),
            retrieval: RetrievalLimits::default(),
            local_overlap: default_overlap(),
            fail_closed: true,
        }
    }
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rho) {
            return Err(Error::Config(format!("noise_rho={} is outside [0, 1]", self.noise_rho)));
        }
        if self.days == 0 || self.stream_per_day == 0 || self.heldout_size == 0 {
            return Err(Error::Config("days, stream_per_day and heldout_size must be positive".into()));
        }
        let limits = self.retrieval;
        if limits.max_cases == 0 || limits.max_broad == 0 || limits.max_local == 0 {
            return Err(Error::Config("retrieval limits must be positive".into()));
        }
        self.gating.validate()?;
        self.world.validate()?;
        self.method.setup()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn refresh_options(&self) -> Result<RefreshOptions> {
        let (channels, _) = self.method.setup()?;
        Ok(RefreshOptions {
            build_broad: channels.broad,
            build_local: channels.local,
            ..self.refresh
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::RUNNABLE {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        let err = "lisa_plus".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("case_memory") && err.contains("gate_accuracy"), "{err}");
    }

    #[test]
    fn agrail_is_reserved() {
        assert!(Method::Agrail.setup().is_err());
        let cfg = DeploymentConfig {
            method: Method::Agrail,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hierarchy_adds_one_mechanism_per_step() {
        let ch = |m: Method| m.setup().unwrap();
        assert_eq!(ch(Method::Pure).0, MemoryChannels::NONE);
        assert!(ch(Method::CaseMemory).0.cases && !ch(Method::CaseMemory).0.broad);
        assert!(ch(Method::BroadOnly).0.broad && !ch(Method::BroadOnly).0.local);
        assert_eq!(ch(Method::BroadOnly).1, GateRule::Disabled);
        assert_eq!(ch(Method::Lisa), (MemoryChannels::ALL, GateRule::BetaQuantile));
    }

    #[test]
    fn config_json_round_trips_and_validates() {
        let cfg = DeploymentConfig::default();
        assert_eq!(DeploymentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let minimal = r#"{"days": 3, "stream_per_day": 10, "heldout_size": 20, "noise_rho": 0.2, "seed": 4, "method": "pure"}"#;
        let parsed = DeploymentConfig::from_json(minimal).unwrap();
        assert_eq!(parsed.gating, GatingConfig::default());
        let bad = minimal.replace("0.2", "1.5");
        assert!(DeploymentConfig::from_json(&bad).is_err());
        let unknown = minimal.replace("\"pure\"", "\"nope\"");
        assert!(DeploymentConfig::from_json(&unknown).unwrap_err().to_string().contains("lisa"));
    }
}
