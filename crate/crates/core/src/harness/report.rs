//! Run metrics, as JSON and as a plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::harness::audit::{audit, AuditReport, TraceView};
use crate::simnet::{SimTime, Trace, TraceEvent, MS};
use crate::types::{Epoch, InstanceId, PlayerId, Rational};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerStats {
    pub player: PlayerId,
    /// Non-dummy transactions in the agreed ledger.
    pub committed: u64,
    pub ratio: String,
    /// Committed transactions per simulated second.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: u64,
    pub min: SimTime,
    pub mean: f64,
    pub p50: SimTime,
    pub p95: SimTime,
    pub max: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigSummary {
    pub time: SimTime,
    pub config_id: u64,
    pub start_epoch: Epoch,
    pub committee: Vec<PlayerId>,
    pub removed: Vec<PlayerId>,
    pub reduced: Vec<PlayerId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub time: SimTime,
    pub instance: InstanceId,
    pub accused: Vec<(PlayerId, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub end: String,
    pub end_time: SimTime,
    pub committed_epochs: u64,
    pub players: Vec<PlayerStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
    pub reconfigurations: Vec<ReconfigSummary>,
    pub detections: Vec<DetectionSummary>,
    pub audit: AuditReport,
}

/// Commit latency for every (node, epoch): commit time minus the time the
/// node last sent its own round-1 batch for that epoch.
pub fn latencies(trace: &Trace) -> BTreeMap<(PlayerId, Epoch), SimTime> {
    let mut sent = BTreeMap::new();
    let mut out = BTreeMap::new();
    for r in trace.events() {
        match &r.event {
            TraceEvent::Round1Sent { node, epoch, .. } => {
                sent.insert((*node, *epoch), r.time);
            }
            TraceEvent::Commit { node, epoch, .. } => {
                if let Some(t) = sent.get(&(*node, *epoch)) {
                    out.insert((*node, *epoch), r.time - t);
                }
            }
            _ => {}
        }
    }
    out
}

fn latency_stats(samples: impl IntoIterator<Item = SimTime>) -> Option<LatencyStats> {
    let mut v: Vec<SimTime> = samples.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let pick = |q: usize| v[((v.len() - 1) * q).div_ceil(100)];
    Some(LatencyStats {
        samples: v.len() as u64,
        min: v[0],
        mean: v.iter().sum::<u64>() as f64 / v.len() as f64,
        p50: pick(50),
        p95: pick(95),
        max: v[v.len() - 1],
    })
}

impl RunReport {
    pub fn from_trace(trace: &Trace) -> RunReport {
        let view = TraceView::new(trace);
        let (mut scenario, mut seed) = (String::new(), 0);
        let mut reconfigurations = Vec::new();
        let mut detections = Vec::new();
        for r in trace.events() {
            match &r.event {
                TraceEvent::Header { scenario: s, seed: sd, .. } => {
                    scenario = s.clone();
                    seed = *sd;
                }
                TraceEvent::NewConfig { config_id, era, removed, reduced, .. } => {
                    reconfigurations.push(ReconfigSummary {
                        time: r.time,
                        config_id: *config_id,
                        start_epoch: era.start_epoch,
                        committee: era.committee.clone(),
                        removed: removed.clone(),
                        reduced: reduced.clone(),
                    })
                }
                TraceEvent::Detection { instance, accused } => {
                    detections.push(DetectionSummary { time: r.time, instance: *instance, accused: accused.clone() })
                }
                _ => {}
            }
        }
        let end_time = trace.records.last().map_or(0, |r| r.time);
        let ledger = view.ledger();
        let mut counts: BTreeMap<PlayerId, u64> = view.committee.iter().map(|p| (*p, 0)).collect();
        for (_, txs) in ledger.values() {
            for tx in txs.iter().filter(|t| !t.dummy) {
                *counts.entry(tx.issuer).or_default() += 1;
            }
        }
        let total: u64 = counts.values().sum();
        let secs = end_time as f64 / (1000.0 * MS as f64);
        let players = counts
            .into_iter()
            .map(|(player, committed)| PlayerStats {
                player,
                committed,
                ratio: if total == 0 { "0".into() } else { Rational::new(committed, total).to_string() },
                rate: if secs > 0.0 { committed as f64 / secs } else { 0.0 },
            })
            .collect();
        let followers = latencies(trace).into_iter().filter(|((p, _), _)| view.is_follower(*p)).map(|(_, l)| l);
        RunReport {
            scenario,
            seed,
            end: view.end.clone().unwrap_or_default(),
            end_time,
            committed_epochs: ledger.len() as u64,
            players,
            latency: latency_stats(followers),
            reconfigurations,
            detections,
            audit: audit(trace),
        }
    }

    pub fn rate(&self, p: PlayerId) -> f64 {
        self.players.iter().find(|s| s.player == p).map_or(0.0, |s| s.rate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let ms = |t: SimTime| t as f64 / MS as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario {} (seed {})  end: {} at {:.1}ms",
            self.scenario,
            self.seed,
            self.end,
            ms(self.end_time)
        );
        let _ = writeln!(s, "committed epochs: {}", self.committed_epochs);
        if let Some(l) = &self.latency {
            let _ = writeln!(
                s,
                "latency ms: min {:.1}  mean {:.1}  p50 {:.1}  p95 {:.1}  max {:.1}  ({} samples)",
                ms(l.min),
                l.mean / MS as f64,
                ms(l.p50),
                ms(l.p95),
                ms(l.max),
                l.samples
            );
        }
        let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>10}", "player", "committed", "ratio", "tx/s");
        for p in &self.players {
            let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>10.2}", p.player.to_string(), p.committed, p.ratio, p.rate);
        }
        for r in &self.reconfigurations {
            let _ = writeln!(
                s,
                "reconfig {} at {:.1}ms: era from epoch {}, removed {:?}, reduced {:?}",
                r.config_id,
                ms(r.time),
                r.start_epoch,
                r.removed,
                r.reduced
            );
        }
        for d in &self.detections {
            let _ = writeln!(s, "detection at {:.1}ms on {:?}: {:?}", ms(d.time), d.instance, d.accused);
        }
        for v in &self.audit.verdicts {
            let mark = if v.passed { "ok" } else { "FAIL" };
            let _ = write!(s, "audit {:<20} {mark}", v.name);
            if !v.passed {
                let _ = write!(s, "  {} (records {:?})", v.detail, v.counterexample);
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_pick_upper_sample() {
        let l = latency_stats([10, 20, 30, 40]).unwrap();
        assert_eq!((l.min, l.p50, l.p95, l.max), (10, 30, 40, 40));
        assert_eq!(l.mean, 25.0);
        assert!(latency_stats([]).is_none());
    }

    #[test]
    fn latency_uses_latest_proposal() {
        let mut t = Trace::default();
        let p = PlayerId(1);
        t.record(0, TraceEvent::Round1Sent { node: p, config: 0, epoch: 3 });
        t.record(500, TraceEvent::Round1Sent { node: p, config: 1, epoch: 3 });
        t.record(
            560,
            TraceEvent::Commit { node: p, epoch: 3, digest: "d".into(), proof: "quorum".into(), txs: vec![] },
        );
        assert_eq!(latencies(&t)[&(p, 3)], 60);
    }
}
