//! Scenario files.
//!
//! Scenarios are written in TOML for humans; JSON is the canonical form used
//! for diffing and is accepted as input too.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::Strategy;
use crate::crypto::Scheme;
use crate::da2a::{select_relays, Mode};
use crate::master::{AlertExit, Punishment, ResidualF};
use crate::simnet::{LatencyModel, SimConfig, SimTime, MS};
use crate::types::{adjust_qos, batch_schedule_from_qos, Identity, PlayerId, QosVector, Rational};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("{origin}: field `{field}`: {message}")]
    Invalid { origin: String, field: String, message: String },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { origin: String::new(), field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    #[default]
    Direct,
    Relayed(u32),
    Alert,
}

impl ModeSpec {
    pub fn mode(self) -> Mode {
        match self {
            ModeSpec::Direct => Mode::Direct,
            ModeSpec::Relayed(k) => Mode::Relayed(k),
            ModeSpec::Alert => Mode::Alert,
        }
    }

    pub fn label(self) -> String {
        match self {
            ModeSpec::Direct => "direct".into(),
            ModeSpec::Relayed(k) => format!("relayed({k})"),
            ModeSpec::Alert => "alert".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: u32,
    pub to: u32,
    pub ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Share {
    pub player: u32,
    /// Exact ratio written as `"num/den"`.
    pub ratio: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledRequest {
    pub at_ms: u64,
    pub player: u32,
    pub ratio: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub player: u32,
    #[serde(flatten)]
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeDelay {
    pub player: u32,
    pub per_tx_ms: u64,
}

fn default_seed() -> u64 {
    1
}
fn default_latency() -> u64 {
    20
}
fn default_delta() -> u64 {
    200
}
fn default_max_time() -> u64 {
    600_000
}
fn default_window() -> u64 {
    8
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub n: u32,
    pub f: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_epochs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_transactions: Option<u64>,
    #[serde(default = "default_latency")]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<Link>,
    #[serde(default = "default_delta")]
    pub delta_ms: u64,
    #[serde(default = "default_max_time")]
    pub max_sim_time_ms: u64,
    #[serde(default = "default_window")]
    pub pipeline_window: u64,
    #[serde(default)]
    pub crypto: Scheme,
    #[serde(default = "default_true")]
    pub auto_fill: bool,
    /// Epoch size; defaults to the least common denominator of the QoS vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<u64>,
    /// Explicit QoS vector; uniform when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qos: Vec<Share>,
    /// Adjustments applied to the starting vector, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qos_adjust: Vec<Share>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qos_requests: Vec<ScheduledRequest>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<Assignment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compute_delay: Vec<ComputeDelay>,
    #[serde(default)]
    pub residual_f: ResidualF,
    #[serde(default)]
    pub punishment: Punishment,
    #[serde(default)]
    pub alert_exit: AlertExit,
}

pub fn parse_ratio(s: &str) -> Option<Rational> {
    let (n, d) = s.trim().split_once('/').unwrap_or((s.trim(), "1"));
    let (n, d) = (n.trim().parse::<u64>().ok()?, d.trim().parse::<u64>().ok()?);
    (d != 0).then(|| Rational::new(n, d))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl Scenario {
    pub fn from_toml(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |sp| line_col(text, sp.start));
            ScenarioError::Parse { origin: origin.into(), line, column, message: e.message().to_string() }
        })?;
        s.validate().map_err(|e| e.with_origin(origin))?;
        Ok(s)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            origin: origin.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate().map_err(|e| e.with_origin(origin))?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(origin.clone(), e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Scenario::from_json(&text, &origin)
        } else {
            Scenario::from_toml(&text, &origin)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn players(&self) -> Vec<PlayerId> {
        (1..=self.n).map(PlayerId).collect()
    }

    pub fn strategy(&self, p: PlayerId) -> Strategy {
        self.strategies.iter().find(|a| a.player == p.0).map_or(Strategy::Honest, |a| a.strategy.clone())
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut latency = LatencyModel::uniform(self.latency_ms * MS);
        for l in &self.links {
            let id = |i: u32| if i == 0 { Identity::Master } else { Identity::Player(PlayerId(i)) };
            latency.overrides.insert((id(l.from), id(l.to)), l.ms * MS);
        }
        SimConfig {
            n: self.n,
            f: self.f,
            latency,
            delta: self.delta_ms * MS,
            seed: self.seed,
            max_sim_time: self.max_sim_time_ms * MS,
        }
    }

    pub fn compute_per_tx(&self, p: PlayerId) -> SimTime {
        self.compute_delay.iter().find(|c| c.player == p.0).map_or(0, |c| c.per_tx_ms * MS)
    }

    pub fn initial_qos(&self) -> Result<QosVector, ScenarioError> {
        let mut qos = if self.qos.is_empty() {
            QosVector::uniform(self.players())
        } else {
            let mut ratios = BTreeMap::new();
            for s in &self.qos {
                let r = parse_ratio(&s.ratio).ok_or_else(|| invalid("qos", format!("bad ratio `{}`", s.ratio)))?;
                ratios.insert(PlayerId(s.player), r);
            }
            QosVector::new(ratios).map_err(|e| invalid("qos", e.to_string()))?
        };
        for s in &self.qos_adjust {
            let r = parse_ratio(&s.ratio).ok_or_else(|| invalid("qos_adjust", format!("bad ratio `{}`", s.ratio)))?;
            qos = adjust_qos(&qos, PlayerId(s.player), r).map_err(|e| invalid("qos_adjust", e.to_string()))?;
        }
        Ok(qos)
    }

    pub fn base(&self) -> Result<u64, ScenarioError> {
        Ok(match self.base {
            Some(b) => b,
            None => self.initial_qos()?.min_base(),
        })
    }

    pub fn initial_relays(&self) -> Vec<PlayerId> {
        match self.mode {
            ModeSpec::Direct => Vec::new(),
            ModeSpec::Relayed(k) => select_relays(&self.players(), k as usize, &[]),
            ModeSpec::Alert => select_relays(&self.players(), 2 * self.f as usize + 1, &[]),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.sim_config().validate().map_err(|e| invalid("n/f/delta_ms", e.to_string()))?;
        if self.target_epochs.is_none() && self.target_transactions.is_none() {
            return Err(invalid("target_epochs", "set target_epochs or target_transactions"));
        }
        let in_range = |p: u32| (1..=self.n).contains(&p);
        for l in &self.links {
            if (l.from != 0 && !in_range(l.from)) || (l.to != 0 && !in_range(l.to)) || l.from == l.to {
                return Err(invalid("links", format!("bad link {} -> {}", l.from, l.to)));
            }
        }
        let mut seen = BTreeSet::new();
        let (mut byzantine, mut rational) = (0, 0);
        for a in &self.strategies {
            if !in_range(a.player) || !seen.insert(a.player) {
                return Err(invalid("strategies", format!("player {} is unknown or assigned twice", a.player)));
            }
            if a.strategy.is_byzantine() {
                byzantine += 1;
            } else if !a.strategy.is_honest() {
                rational += 1;
            }
        }
        if byzantine > self.f {
            return Err(invalid("strategies", format!("{byzantine} byzantine players exceed f = {}", self.f)));
        }
        if rational > 1 {
            return Err(invalid("strategies", "rational deviators act alone"));
        }
        if let ModeSpec::Relayed(k) = self.mode {
            if k == 0 || k > self.n {
                return Err(invalid("mode", format!("relay count {k} out of range")));
            }
        }
        for c in &self.compute_delay {
            if !in_range(c.player) {
                return Err(invalid("compute_delay", format!("unknown player {}", c.player)));
            }
        }
        for r in &self.qos_requests {
            if !in_range(r.player) || parse_ratio(&r.ratio).is_none() {
                return Err(invalid("qos_requests", format!("bad request for player {}", r.player)));
            }
        }
        let qos = self.initial_qos()?;
        if qos.players().collect::<Vec<_>>() != self.players() {
            return Err(invalid("qos", "vector must cover exactly players 1..=n"));
        }
        batch_schedule_from_qos(&qos, self.base()?).map_err(|e| invalid("base", e.to_string()))?;
        if self.pipeline_window == 0 {
            return Err(invalid("pipeline_window", "must be at least 1"));
        }
        Ok(())
    }
}

impl ScenarioError {
    fn with_origin(self, origin: &str) -> ScenarioError {
        match self {
            ScenarioError::Invalid { field, message, .. } => {
                ScenarioError::Invalid { origin: origin.into(), field, message }
            }
            e => e,
        }
    }
}
