//! Deterministic discrete-event network.
//!
//! Simulated time is an integer count of microseconds. Events are ordered by
//! `(time, seq)` where `seq` is the insertion counter, so two runs that
//! schedule the same events in the same order pop them in the same order.
//! Actors never see wall-clock time or any randomness the simulator did not
//! hand them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Epoch, Identity, InstanceId, PlayerId, SignedMessage};

/// Microseconds since the start of the run.
pub type SimTime = u64;

pub const MS: SimTime = 1_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("committee of {n} cannot tolerate f = {f}: need n >= 2f+3")]
    CommitteeTooSmall { n: u32, f: u32 },
    #[error("delta {delta}us is below the largest link latency {latency}us")]
    DeltaTooSmall { delta: SimTime, latency: SimTime },
    #[error("simulation reached {at}us without meeting its stop condition")]
    Timeout { at: SimTime },
}

/// Timers an actor can arm. They fire back at the same actor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Timer {
    /// A node finished computing its round-1 batch.
    BatchReady { config: u64, epoch: Epoch },
    /// A node checks whether an instance is still stuck.
    Stall { config: u64, generation: u64, instance: InstanceId },
    /// Master processes the next due instance.
    Monitor,
    /// Master stops waiting for relay answers.
    AnswersDue { investigation: u64 },
    /// Master stops waiting for statuses.
    StatusDue { reconfig_id: u64 },
    /// Master acts on a scheduled authority request.
    Request { index: usize },
    /// Master checks whether alert mode can be left.
    AlertReview { generation: u64 },
}

/// What an actor asks the simulator to do.
#[derive(Debug, Clone)]
pub enum Output {
    Send { to: Identity, msg: SignedMessage },
    Timer { at: SimTime, timer: Timer },
    Trace(TraceEvent),
}

/// Per-link one-way latency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyModel {
    pub default: SimTime,
    pub overrides: BTreeMap<(Identity, Identity), SimTime>,
}

impl LatencyModel {
    pub fn uniform(latency: SimTime) -> Self {
        LatencyModel { default: latency, overrides: BTreeMap::new() }
    }

    pub fn between(&self, from: Identity, to: Identity) -> SimTime {
        self.overrides.get(&(from, to)).copied().unwrap_or(self.default)
    }

    pub fn max(&self) -> SimTime {
        self.overrides.values().copied().fold(self.default, SimTime::max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub n: u32,
    pub f: u32,
    pub latency: LatencyModel,
    pub delta: SimTime,
    pub seed: u64,
    pub max_sim_time: SimTime,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 * self.f + 3 {
            return Err(SimError::CommitteeTooSmall { n: self.n, f: self.f });
        }
        let latency = self.latency.max();
        if self.delta < latency {
            return Err(SimError::DeltaTooSmall { delta: self.delta, latency });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum EventKind {
    Deliver { from: Identity, to: Identity, msg: SignedMessage },
    Timer { owner: Identity, timer: Timer },
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

/// Pending events plus the trace of everything that happened so far.
#[derive(Debug)]
pub struct Network {
    now: SimTime,
    seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    pending: BTreeMap<u64, Event>,
    latency: LatencyModel,
    pub trace: Trace,
}

impl Network {
    pub fn new(latency: LatencyModel) -> Self {
        Network { now: 0, seq: 0, heap: BinaryHeap::new(), pending: BTreeMap::new(), latency, trace: Trace::default() }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse((time, seq)));
        self.pending.insert(seq, Event { time, seq, kind });
    }

    pub fn send(&mut self, from: Identity, to: Identity, msg: SignedMessage) {
        let at = self.now + self.latency.between(from, to);
        self.trace.record(
            self.now,
            TraceEvent::Send {
                from,
                to,
                kind: msg.body.kind().to_string(),
                instance: msg.body.instance(),
                config: msg.body.config(),
            },
        );
        self.push(at, EventKind::Deliver { from, to, msg });
    }

    pub fn set_timer(&mut self, owner: Identity, at: SimTime, timer: Timer) {
        self.push(at.max(self.now), EventKind::Timer { owner, timer });
    }

    pub fn record(&mut self, event: TraceEvent) {
        self.trace.record(self.now, event);
    }

    /// Pops the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Event> {
        let Reverse((time, seq)) = self.heap.pop()?;
        self.now = time;
        self.pending.remove(&seq)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse((t, _))| *t)
    }
}

/// Summary of one committed transaction, enough for the audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxSummary {
    pub issuer: PlayerId,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub dummy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviatorInfo {
    pub player: PlayerId,
    pub strategy: String,
    /// Byzantine deviators count toward f; rational ones do not.
    pub byzantine: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EraInfo {
    pub start_epoch: Epoch,
    pub committee: Vec<PlayerId>,
    pub f: u32,
    /// Ratios as `"num/den"` strings in player order. A list rather than a
    /// map: integer map keys do not survive the flattened trace records.
    pub qos: Vec<(PlayerId, String)>,
    pub base: u64,
}

impl EraInfo {
    pub fn ratio(&self, p: PlayerId) -> Option<&str> {
        self.qos.iter().find(|(q, _)| *q == p).map(|(_, r)| r.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    Header {
        scenario: String,
        seed: u64,
        n: u32,
        f: u32,
        mode: String,
        delta: SimTime,
        era: EraInfo,
        deviators: Vec<DeviatorInfo>,
    },
    Send {
        from: Identity,
        to: Identity,
        kind: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        instance: Option<InstanceId>,
        #[serde(skip_serializing_if = "Option::is_none")]
        config: Option<u64>,
    },
    Deliver {
        from: Identity,
        to: Identity,
        kind: String,
    },
    /// Adversary dropped or rewrote an outbound message.
    Tampered {
        from: PlayerId,
        to: Identity,
        kind: String,
        action: String,
    },
    Round1Sent {
        node: PlayerId,
        config: u64,
        epoch: Epoch,
    },
    Commit {
        node: PlayerId,
        epoch: Epoch,
        digest: String,
        proof: String,
        txs: Vec<TxSummary>,
    },
    Stall {
        node: PlayerId,
        instance: InstanceId,
        missing: Vec<PlayerId>,
    },
    /// A node's own stall timer fired before its own message was ready.
    Late {
        node: PlayerId,
        instance: InstanceId,
    },
    Complaint {
        node: PlayerId,
        evidence: String,
    },
    ComplaintRejected {
        from: PlayerId,
        reason: String,
    },
    AlertSwitch {
        generation: u64,
        relays: Vec<PlayerId>,
    },
    Detection {
        instance: InstanceId,
        accused: Vec<(PlayerId, String)>,
    },
    ReconfigStart {
        reconfig_id: u64,
        trigger: String,
    },
    NewConfig {
        config_id: u64,
        era: EraInfo,
        closed: Vec<Epoch>,
        removed: Vec<PlayerId>,
        reduced: Vec<PlayerId>,
        relays: Vec<PlayerId>,
    },
    ConfigApplied {
        node: PlayerId,
        config_id: u64,
    },
    Rejected {
        node: PlayerId,
        what: String,
    },
    Halt {
        reason: String,
    },
    End {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: u64,
    pub time: SimTime,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn record(&mut self, time: SimTime, event: TraceEvent) {
        let id = self.records.len() as u64;
        self.records.push(TraceRecord { id, time, event });
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter()
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_ndjson(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Trace, serde_json::Error> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Trace { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyRing, Scheme};
    use crate::types::ProtocolMessage;

    fn msg(ring: &KeyRing, p: u32) -> SignedMessage {
        let id = Identity::Player(PlayerId(p));
        SignedMessage::sign(ring.key(id), id, ProtocolMessage::AlertMode { generation: p as u64, relays: vec![] })
    }

    #[test]
    fn events_pop_by_time_then_insertion() {
        let ring = KeyRing::generate(Scheme::Keyed, 1, (1..=3).map(|i| Identity::Player(PlayerId(i))));
        let mut latency = LatencyModel::uniform(20 * MS);
        let (a, b, c) = (Identity::Player(PlayerId(1)), Identity::Player(PlayerId(2)), Identity::Player(PlayerId(3)));
        latency.overrides.insert((a, c), 5 * MS);
        let mut net = Network::new(latency);
        net.send(a, b, msg(&ring, 1));
        net.send(a, c, msg(&ring, 2));
        net.set_timer(b, 20 * MS, Timer::Monitor);
        let order: Vec<_> = std::iter::from_fn(|| net.pop()).map(|e| (e.time, e.seq)).collect();
        assert_eq!(order, vec![(5 * MS, 1), (20 * MS, 0), (20 * MS, 2)]);
    }

    #[test]
    fn config_checks() {
        let mut cfg = SimConfig {
            n: 5,
            f: 1,
            latency: LatencyModel::uniform(20 * MS),
            delta: 200 * MS,
            seed: 0,
            max_sim_time: 1_000 * MS,
        };
        assert!(cfg.validate().is_ok());
        cfg.n = 4;
        assert_eq!(cfg.validate(), Err(SimError::CommitteeTooSmall { n: 4, f: 1 }));
        cfg.n = 5;
        cfg.delta = 10 * MS;
        assert!(matches!(cfg.validate(), Err(SimError::DeltaTooSmall { .. })));
    }

    #[test]
    fn trace_round_trips_through_ndjson() {
        let mut t = Trace::default();
        let era = EraInfo {
            start_epoch: 0,
            committee: vec![PlayerId(1), PlayerId(2)],
            f: 0,
            qos: vec![(PlayerId(1), "1/2".into()), (PlayerId(2), "1/2".into())],
            base: 2,
        };
        t.record(
            0,
            TraceEvent::Header {
                scenario: "s".into(),
                seed: 1,
                n: 2,
                f: 0,
                mode: "direct".into(),
                delta: 5,
                era,
                deviators: vec![],
            },
        );
        t.record(3, TraceEvent::AlertSwitch { generation: 1, relays: vec![PlayerId(1)] });
        t.record(
            9,
            TraceEvent::Commit {
                node: PlayerId(2),
                epoch: 0,
                digest: "ab".into(),
                proof: "quorum".into(),
                txs: vec![TxSummary { issuer: PlayerId(1), seq: 0, dummy: true }],
            },
        );
        let bytes = t.to_ndjson();
        let back = Trace::read_ndjson(bytes.as_slice()).unwrap();
        assert_eq!(back, t);
    }
}
