//! Committee member state machine.
//!
//! A node batches its own transactions, runs the three DA2A rounds of every
//! epoch, commits on `f+1` matching round-3 messages, reports stalls and
//! complaints to the master, and follows the master's reconfigurations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{Digest, KeyPair, Pki};
use crate::da2a::{self, Da2aInstance, DeliveryState, Mode};
use crate::evidence::{assess, EvidenceContext, Verdict};
use crate::simnet::{Output, SimTime, Timer, TraceEvent, TxSummary};
use crate::types::{
    epoch_digest, BatchSchedule, CommitProof, CommitteeHistory, Epoch, EpochRecord, Era, Evidence, FormatRule,
    Identity, InstanceId, Ledger, NewConfig, PlayerId, ProtocolMessage, QosVector, ReconfigTrigger, Round, Sanction,
    SignedMessage, StallReport, StatusEntry, Transaction,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SequencerError {
    #[error("transaction queue is full ({0} pending)")]
    QueueFull(usize),
    #[error("node is no longer in the committee")]
    Removed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeParams {
    /// Epochs whose round 1 may run ahead of the last commit.
    pub pipeline_window: u64,
    pub delta: SimTime,
    /// Time to produce one transaction of a round-1 batch.
    pub compute_per_tx: SimTime,
    pub queue_capacity: usize,
    /// Generate a fresh transaction whenever the queue runs dry.
    pub auto_fill: bool,
    pub payload_len: usize,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams {
            pipeline_window: 8,
            delta: 200_000,
            compute_per_tx: 0,
            queue_capacity: 10_000,
            auto_fill: true,
            payload_len: 8,
        }
    }
}

/// Starting configuration shared by every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Genesis {
    pub committee: Vec<PlayerId>,
    pub f: u32,
    pub qos: QosVector,
    pub base: u64,
    pub relays: Vec<PlayerId>,
}

impl Genesis {
    pub fn era(&self) -> Era {
        Era { start_epoch: 0, committee: self.committee.clone(), f: self.f, qos: self.qos.clone(), base: self.base }
    }
}

/// Deviations a node's own state machine applies to inbound traffic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Behavior {
    /// Origins whose sequencing messages are silently dropped on arrival.
    pub suppress: BTreeSet<PlayerId>,
    /// Keep sequencing while a reconfiguration is in progress.
    pub ignore_freeze: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Running,
    /// Complained; waits for the master to reconfigure.
    Blocked,
    Frozen {
        reconfig_id: u64,
    },
    Removed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeMetrics {
    pub bad_signatures: u64,
    pub rejected_control: u64,
    pub stale_messages: u64,
    pub mismatched_commits: u64,
    pub complaints: u64,
}

#[derive(Debug, Clone, Default)]
struct EpochProgress {
    rounds: [DeliveryState; 3],
    ordered: Option<(Vec<Transaction>, Digest)>,
    own: [Option<SignedMessage>; 3],
    stall_armed: [bool; 3],
    /// Origins still missing when this node's own stall timer fired. Their
    /// messages may arrive later, but a relay cannot vouch for them.
    late: [BTreeSet<PlayerId>; 3],
}

/// Last `l` committed transactions together with the epochs that prove them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadResult {
    pub txs: Vec<Transaction>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug)]
pub struct Node {
    me: PlayerId,
    key: KeyPair,
    pki: Arc<Pki>,
    params: NodeParams,
    config_id: u64,
    committee: Vec<PlayerId>,
    f: u32,
    schedule: BatchSchedule,
    relays: Vec<PlayerId>,
    generation: u64,
    epoch: Epoch,
    next_produce: Epoch,
    producing: Option<(Epoch, Vec<Transaction>)>,
    queue: VecDeque<Transaction>,
    next_seq: u64,
    next_dummy: u64,
    in_flight: BTreeMap<Epoch, Vec<Transaction>>,
    progress: BTreeMap<Epoch, EpochProgress>,
    future: Vec<SignedMessage>,
    last_reconfig: Option<u64>,
    pub ledger: Ledger,
    pub phase: Phase,
    pub behavior: Behavior,
    pub metrics: NodeMetrics,
}

fn round_index(r: Round) -> usize {
    r.number() as usize - 1
}

impl Node {
    pub fn new(me: PlayerId, key: KeyPair, pki: Arc<Pki>, params: NodeParams, genesis: &Genesis) -> Self {
        let schedule = genesis.era().schedule().expect("genesis schedule must be integral");
        let mut ledger = Ledger::default();
        ledger.history.push(genesis.era());
        let phase = if genesis.committee.contains(&me) { Phase::Running } else { Phase::Removed };
        Node {
            me,
            key,
            pki,
            params,
            config_id: 0,
            committee: genesis.committee.clone(),
            f: genesis.f,
            schedule,
            relays: genesis.relays.clone(),
            generation: 0,
            epoch: 0,
            next_produce: 0,
            producing: None,
            queue: VecDeque::new(),
            next_seq: 0,
            next_dummy: 0,
            in_flight: BTreeMap::new(),
            progress: BTreeMap::new(),
            future: Vec::new(),
            last_reconfig: None,
            ledger,
            phase,
            behavior: Behavior::default(),
            metrics: NodeMetrics::default(),
        }
    }

    pub fn id(&self) -> PlayerId {
        self.me
    }

    pub fn config_id(&self) -> u64 {
        self.config_id
    }

    pub fn committee(&self) -> &[PlayerId] {
        &self.committee
    }

    pub fn relays(&self) -> &[PlayerId] {
        &self.relays
    }

    /// Lowest epoch not yet committed locally.
    pub fn current_epoch(&self) -> Epoch {
        self.epoch
    }

    pub fn last_committed(&self) -> Option<Epoch> {
        self.ledger.last_epoch()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Queues a transaction issued by this node.
    pub fn append(&mut self, payload: Vec<u8>) -> Result<u64, SequencerError> {
        if self.phase == Phase::Removed {
            return Err(SequencerError::Removed);
        }
        if self.queue.len() >= self.params.queue_capacity {
            return Err(SequencerError::QueueFull(self.queue.len()));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push_back(Transaction::new(self.me, seq, payload));
        Ok(seq)
    }

    pub fn start(&mut self, now: SimTime) -> Vec<Output> {
        let mut out = Vec::new();
        self.maybe_produce(now, &mut out);
        out
    }

    fn instance(&self, epoch: Epoch, round: Round) -> Da2aInstance {
        Da2aInstance {
            id: InstanceId::new(epoch, round),
            participants: self.committee.clone(),
            relays: self.relays.clone(),
            mode: if self.relays.is_empty() { Mode::Direct } else { Mode::Alert },
            f: self.f,
            start_time: 0,
        }
    }

    fn sign(&self, body: ProtocolMessage) -> SignedMessage {
        SignedMessage::sign(&self.key, Identity::Player(self.me), body)
    }

    fn to_master(&self, body: ProtocolMessage, out: &mut Vec<Output>) {
        out.push(Output::Send { to: Identity::Master, msg: self.sign(body) });
    }

    fn emit(sends: Vec<da2a::Send>, out: &mut Vec<Output>) {
        out.extend(sends.into_iter().map(|s| Output::Send { to: Identity::Player(s.to), msg: s.msg }));
    }

    fn sequencing(&self) -> bool {
        match self.phase {
            Phase::Running => true,
            Phase::Frozen { .. } => self.behavior.ignore_freeze,
            Phase::Blocked | Phase::Removed => false,
        }
    }

    // -- batching -------------------------------------------------------

    fn take_batch(&mut self) -> Vec<Transaction> {
        let size = self.schedule.size(self.me) as usize;
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if let Some(tx) = self.queue.pop_front() {
                batch.push(tx);
            } else if self.params.auto_fill {
                let seq = self.next_seq;
                self.next_seq += 1;
                let mut payload = seq.to_be_bytes().to_vec();
                payload.resize(self.params.payload_len.max(8), 0);
                batch.push(Transaction::new(self.me, seq, payload));
            } else {
                batch.push(Transaction::dummy(self.me, self.next_dummy));
                self.next_dummy += 1;
            }
        }
        batch
    }

    fn maybe_produce(&mut self, now: SimTime, out: &mut Vec<Output>) {
        self.next_produce = self.next_produce.max(self.epoch);
        while self.sequencing()
            && self.producing.is_none()
            && self.next_produce < self.epoch + self.params.pipeline_window.max(1)
        {
            let e = self.next_produce;
            let batch = self.take_batch();
            if self.params.compute_per_tx > 0 {
                let at = now + self.params.compute_per_tx * batch.len() as u64;
                self.producing = Some((e, batch));
                out.push(Output::Timer { at, timer: Timer::BatchReady { config: self.config_id, epoch: e } });
                break;
            }
            self.propose(now, e, batch, out);
        }
    }

    fn propose(&mut self, now: SimTime, e: Epoch, batch: Vec<Transaction>, out: &mut Vec<Output>) {
        self.next_produce = e + 1;
        self.in_flight.insert(e, batch.clone());
        let msg = self.sign(ProtocolMessage::Round1 { config: self.config_id, epoch: e, batch });
        out.push(Output::Trace(TraceEvent::Round1Sent { node: self.me, config: self.config_id, epoch: e }));
        self.broadcast_own(e, Round::One, msg, out);
        self.advance(now, out);
    }

    fn broadcast_own(&mut self, e: Epoch, round: Round, msg: SignedMessage, out: &mut Vec<Output>) {
        let inst = self.instance(e, round);
        let (me, key) = (self.me, self.key.clone());
        let prog = self.progress.entry(e).or_default();
        prog.own[round_index(round)] = Some(msg.clone());
        let fwd = prog.rounds[round_index(round)].deliver_own(&inst, me, &key, msg.clone());
        let direct = da2a::broadcast(&inst, me, &msg).unwrap_or_default();
        Self::emit(direct, out);
        Self::emit(fwd, out);
    }

    // -- the three rounds -------------------------------------------------

    fn arm_stall(&mut self, now: SimTime, e: Epoch, round: Round, out: &mut Vec<Output>) {
        let prog = self.progress.entry(e).or_default();
        let i = round_index(round);
        if !prog.stall_armed[i] {
            prog.stall_armed[i] = true;
            out.push(Output::Timer {
                at: now + self.params.delta,
                timer: Timer::Stall {
                    config: self.config_id,
                    generation: self.generation,
                    instance: InstanceId::new(e, round),
                },
            });
        }
    }

    fn advance(&mut self, now: SimTime, out: &mut Vec<Output>) {
        while self.sequencing() {
            let e = self.epoch;
            let prog = self.progress.entry(e).or_default();
            if prog.own[1].is_none() {
                if !prog.rounds[0].missing(&self.committee).is_empty() {
                    self.arm_stall(now, e, Round::One, out);
                    break;
                }
                match self.order_epoch(e) {
                    Ok((txs, digest)) => {
                        self.progress.get_mut(&e).expect("progress exists").ordered = Some((txs, digest));
                        let msg = self.sign(ProtocolMessage::Round2 { config: self.config_id, epoch: e, digest });
                        self.broadcast_own(e, Round::Two, msg, out);
                    }
                    Err(evidence) => {
                        self.complain(evidence, out);
                        break;
                    }
                }
            }
            let prog = &self.progress[&e];
            let (txs, digest) = prog.ordered.clone().expect("ordered before round 2");
            if prog.own[2].is_none() {
                if !prog.rounds[1].missing(&self.committee).is_empty() {
                    self.arm_stall(now, e, Round::Two, out);
                    break;
                }
                let own = prog.own[1].clone().expect("own round-2 hash");
                let differing = prog.rounds[1].delivered.values().find(|m| match &m.body {
                    ProtocolMessage::Round2 { digest: d, .. } => *d != digest,
                    _ => true,
                });
                if let Some(other) = differing {
                    let evidence = Evidence::DigestMismatch { first: Box::new(own), second: Box::new(other.clone()) };
                    self.complain(evidence, out);
                    break;
                }
                let msg = self.sign(ProtocolMessage::Round3 { config: self.config_id, epoch: e, digest });
                self.broadcast_own(e, Round::Three, msg, out);
            }
            let prog = &self.progress[&e];
            let mut matching = Vec::new();
            let mut mismatched = 0;
            for m in prog.rounds[2].delivered.values() {
                match &m.body {
                    ProtocolMessage::Round3 { digest: d, .. } if *d == digest => matching.push(m.clone()),
                    _ => mismatched += 1,
                }
            }
            if matching.len() < self.f as usize + 1 {
                self.arm_stall(now, e, Round::Three, out);
                break;
            }
            self.metrics.mismatched_commits += mismatched;
            let hashes = prog.rounds[1].delivered.clone();
            let commits = prog.rounds[2].delivered.clone();
            // Prefer our own commit message in the proof, then lowest ids.
            matching.sort_by_key(|m| (m.sender != Identity::Player(self.me), m.sender));
            matching.truncate(self.f as usize + 1);
            let record = EpochRecord { epoch: e, txs, digest, hashes, commits, proof: CommitProof::Quorum(matching) };
            self.commit(record, out);
        }
        self.maybe_produce(now, out);
    }

    /// Checks every round-1 batch against the schedule and concatenates them
    /// in ascending sender order.
    fn order_epoch(&self, e: Epoch) -> Result<(Vec<Transaction>, Digest), Evidence> {
        let prog = &self.progress[&e];
        let mut txs = Vec::new();
        let mut members = self.committee.clone();
        members.sort();
        for p in members {
            let m = &prog.rounds[0].delivered[&p];
            let ProtocolMessage::Round1 { batch, .. } = &m.body else {
                unreachable!("round-1 state only holds round-1 messages")
            };
            if batch.len() != self.schedule.size(p) as usize {
                return Err(Evidence::BadFormat { message: Box::new(m.clone()), rule: FormatRule::BatchSize });
            }
            if batch.iter().any(|tx| tx.issuer != p) {
                return Err(Evidence::BadFormat { message: Box::new(m.clone()), rule: FormatRule::ForeignIssuer });
            }
            txs.extend(batch.iter().cloned());
        }
        let digest = epoch_digest(&txs);
        Ok((txs, digest))
    }

    fn commit(&mut self, record: EpochRecord, out: &mut Vec<Output>) {
        let e = record.epoch;
        out.push(Output::Trace(TraceEvent::Commit {
            node: self.me,
            epoch: e,
            digest: record.digest.to_string(),
            proof: record.proof.kind().to_string(),
            txs: record.txs.iter().map(|t| TxSummary { issuer: t.issuer, seq: t.seq, dummy: t.is_dummy() }).collect(),
        }));
        self.ledger.push(record);
        self.in_flight.remove(&e);
        self.epoch = e + 1;
        let keep_from = e.saturating_sub(1);
        self.progress.retain(|k, _| *k >= keep_from);
    }

    fn complain(&mut self, evidence: Evidence, out: &mut Vec<Output>) {
        if self.phase == Phase::Blocked {
            return;
        }
        self.metrics.complaints += 1;
        out.push(Output::Trace(TraceEvent::Complaint { node: self.me, evidence: evidence.kind().to_string() }));
        self.to_master(ProtocolMessage::Complaint { evidence }, out);
        self.phase = Phase::Blocked;
    }

    // -- inbound ----------------------------------------------------------

    pub fn on_message(&mut self, now: SimTime, msg: SignedMessage) -> Vec<Output> {
        let mut out = Vec::new();
        if self.phase == Phase::Removed {
            return out;
        }
        if !msg.verify(&self.pki) {
            self.metrics.bad_signatures += 1;
            out.push(Output::Trace(TraceEvent::Rejected { node: self.me, what: "bad signature".into() }));
            return out;
        }
        if msg.body.instance().is_some() {
            self.on_sequencing(now, msg, &mut out);
            return out;
        }
        if msg.sender != Identity::Master {
            // Control traffic between players is not part of the protocol.
            self.metrics.rejected_control += 1;
            return out;
        }
        match &msg.body {
            ProtocolMessage::RelayQuery { instance, about, recipient, .. } => {
                let received = self.progress.get(&instance.epoch).is_some_and(|p| {
                    let r = round_index(instance.round);
                    p.rounds[r].has(*about) && !p.late[r].contains(about)
                });
                let body = ProtocolMessage::RelayAnswer {
                    instance: *instance,
                    about: *about,
                    recipient: *recipient,
                    received,
                };
                self.to_master(body, &mut out);
            }
            ProtocolMessage::AlertMode { generation, relays } => {
                self.on_alert(now, *generation, relays.clone(), &mut out);
            }
            ProtocolMessage::Reconfig { reconfig_id, trigger } => {
                self.on_reconfig(*reconfig_id, trigger, &mut out);
            }
            ProtocolMessage::NewConfig(nc) => {
                let nc = nc.as_ref().clone();
                self.on_new_config(now, nc, msg, &mut out);
            }
            _ => self.metrics.rejected_control += 1,
        }
        out
    }

    fn on_sequencing(&mut self, now: SimTime, msg: SignedMessage, out: &mut Vec<Output>) {
        let config = msg.body.config().expect("sequencing messages carry a config");
        if config > self.config_id {
            self.future.push(msg);
            return;
        }
        if config < self.config_id || !self.sequencing() && self.phase != Phase::Blocked {
            self.metrics.stale_messages += 1;
            return;
        }
        let original = msg.original();
        let Some(origin) = original.sender_player() else { return };
        if self.behavior.suppress.contains(&origin) {
            return;
        }
        let id = msg.body.instance().expect("sequencing message");
        if id.epoch + 1 < self.epoch {
            self.metrics.stale_messages += 1;
            return;
        }
        let inst = self.instance(id.epoch, id.round);
        let (me, key, pki) = (self.me, self.key.clone(), self.pki.clone());
        let state = &mut self.progress.entry(id.epoch).or_default().rounds[round_index(id.round)];
        match da2a::on_message(&inst, state, me, &key, &pki, &msg) {
            Ok(received) => {
                Self::emit(received.forwards, out);
                if let Some(evidence) = received.conflict {
                    self.complain(evidence, out);
                    return;
                }
                if received.deliver.is_some() && self.sequencing() {
                    self.advance(now, out);
                }
            }
            Err(_) => self.metrics.rejected_control += 1,
        }
    }

    fn on_alert(&mut self, now: SimTime, generation: u64, relays: Vec<PlayerId>, out: &mut Vec<Output>) {
        if generation <= self.generation {
            return;
        }
        self.generation = generation;
        self.relays = relays;
        let (me, key) = (self.me, self.key.clone());
        let epochs: Vec<Epoch> = self.progress.keys().copied().filter(|e| *e >= self.epoch).collect();
        for e in epochs {
            for round in [Round::One, Round::Two, Round::Three] {
                let inst = self.instance(e, round);
                let prog = self.progress.get_mut(&e).expect("listed epoch");
                prog.stall_armed[round_index(round)] = false;
                if let Some(own) = prog.own[round_index(round)].clone() {
                    Self::emit(da2a::broadcast(&inst, me, &own).unwrap_or_default(), out);
                }
                if inst.is_relay(me) {
                    Self::emit(prog.rounds[round_index(round)].reforward_all(&inst, me, &key), out);
                }
            }
        }
        if self.sequencing() {
            self.advance(now, out);
        }
    }

    pub fn on_timer(&mut self, now: SimTime, timer: Timer) -> Vec<Output> {
        let mut out = Vec::new();
        match timer {
            Timer::BatchReady { config, epoch } => {
                if config != self.config_id || !self.sequencing() {
                    return out;
                }
                if let Some((e, batch)) = self.producing.take() {
                    if e == epoch {
                        self.propose(now, e, batch, &mut out);
                    } else {
                        self.producing = Some((e, batch));
                    }
                }
                self.maybe_produce(now, &mut out);
            }
            Timer::Stall { config, generation, instance } => {
                if config != self.config_id
                    || generation != self.generation
                    || self.phase != Phase::Running
                    || instance.epoch != self.epoch
                {
                    return out;
                }
                let Some(prog) = self.progress.get(&instance.epoch) else { return out };
                let state = &prog.rounds[round_index(instance.round)];
                let missing: Vec<PlayerId> =
                    state.missing(&self.committee).into_iter().filter(|p| *p != self.me).collect();
                if !missing.is_empty() {
                    out.push(Output::Trace(TraceEvent::Stall { node: self.me, instance, missing: missing.clone() }));
                    let report = StallReport { instance, missing: missing.clone(), generation: self.generation };
                    self.to_master(ProtocolMessage::Stall(report), &mut out);
                }
                if instance.round == Round::One && state.missing(&self.committee).contains(&self.me) {
                    out.push(Output::Trace(TraceEvent::Late { node: self.me, instance }));
                }
                let prog = self.progress.get_mut(&instance.epoch).expect("checked");
                prog.late[round_index(instance.round)].extend(missing);
                prog.stall_armed[round_index(instance.round)] = false;
                self.arm_stall(now, instance.epoch, instance.round, &mut out);
            }
            _ => {}
        }
        out
    }

    // -- reconfiguration ----------------------------------------------------

    fn on_reconfig(&mut self, reconfig_id: u64, trigger: &ReconfigTrigger, out: &mut Vec<Output>) {
        if self.last_reconfig.is_some_and(|r| r >= reconfig_id) {
            return;
        }
        if let Err(why) = validate_trigger(trigger, &self.pki, &self.ledger.history) {
            self.metrics.rejected_control += 1;
            out.push(Output::Trace(TraceEvent::Rejected { node: self.me, what: format!("reconfig: {why}") }));
            return;
        }
        self.last_reconfig = Some(reconfig_id);
        if !self.behavior.ignore_freeze {
            self.phase = Phase::Frozen { reconfig_id };
        }
        let last_committed = self.ledger.last_epoch();
        let from = last_committed.map_or(0, |e| e.saturating_sub(1));
        let entries = self
            .progress
            .range(from..)
            .map(|(e, p)| StatusEntry {
                epoch: *e,
                batches: p.rounds[0].delivered.values().cloned().collect(),
                hashes: p.rounds[1].delivered.values().cloned().collect(),
            })
            .filter(|s| !s.batches.is_empty() || !s.hashes.is_empty())
            .collect();
        self.to_master(ProtocolMessage::Status { reconfig_id, last_committed, entries }, out);
    }

    fn on_new_config(&mut self, now: SimTime, nc: NewConfig, signed: SignedMessage, out: &mut Vec<Output>) {
        if nc.config_id <= self.config_id {
            return;
        }
        if let Err(why) = validate_new_config(&nc, &self.committee, &self.pki, &self.ledger.history) {
            self.metrics.rejected_control += 1;
            out.push(Output::Trace(TraceEvent::Rejected { node: self.me, what: format!("new config: {why}") }));
            return;
        }
        let mut closing: Vec<_> = nc.closing.iter().flatten().collect();
        closing.sort_by_key(|c| c.epoch);
        for c in closing {
            if c.epoch < self.epoch {
                if self.ledger.get(c.epoch).is_some_and(|r| r.digest != c.digest) {
                    out.push(Output::Trace(TraceEvent::Rejected {
                        node: self.me,
                        what: format!("closing state disagrees with committed epoch {}", c.epoch),
                    }));
                }
                continue;
            }
            if c.epoch > self.epoch {
                out.push(Output::Trace(TraceEvent::Rejected {
                    node: self.me,
                    what: format!("closing state skips epoch {}", self.epoch),
                }));
                break;
            }
            let hashes = c.hashes.iter().filter_map(|m| m.sender_player().map(|p| (p, m.clone()))).collect();
            let record = EpochRecord {
                epoch: c.epoch,
                txs: c.txs.clone(),
                digest: c.digest,
                hashes,
                commits: BTreeMap::new(),
                proof: CommitProof::Master(Box::new(signed.clone())),
            };
            self.commit(record, out);
        }

        // Whatever was proposed but not committed goes back to the queue front.
        let mut requeue: Vec<Transaction> = Vec::new();
        for (_, batch) in std::mem::take(&mut self.in_flight) {
            requeue.extend(batch);
        }
        if let Some((_, batch)) = self.producing.take() {
            requeue.extend(batch);
        }
        for tx in requeue.into_iter().filter(|t| !t.is_dummy()).rev() {
            self.queue.push_front(tx);
        }

        self.config_id = nc.config_id;
        self.generation = nc.config_id;
        self.committee = nc.committee.clone();
        self.f = nc.f;
        self.relays = nc.relays.clone();
        let era =
            Era { start_epoch: nc.epoch, committee: nc.committee.clone(), f: nc.f, qos: nc.qos.clone(), base: nc.base };
        self.schedule = era.schedule().expect("validated schedule");
        self.ledger.history.push(era);
        self.epoch = nc.epoch;
        self.next_produce = nc.epoch;
        self.progress.clear();
        out.push(Output::Trace(TraceEvent::ConfigApplied { node: self.me, config_id: nc.config_id }));
        if !self.committee.contains(&self.me) {
            self.phase = Phase::Removed;
            return;
        }
        self.phase = Phase::Running;
        let future = std::mem::take(&mut self.future);
        for m in future {
            self.on_sequencing(now, m, out);
        }
        self.advance(now, out);
    }

    // -- reads --------------------------------------------------------------

    /// The last `l` committed transactions with proofs for every epoch they span.
    pub fn read(&self, l: usize) -> ReadResult {
        let mut txs = Vec::new();
        let mut epochs = Vec::new();
        for rec in self.ledger.entries.iter().rev() {
            if txs.len() >= l {
                break;
            }
            epochs.push(rec.clone());
            let take = (l - txs.len()).min(rec.txs.len());
            let mut part: Vec<_> = rec.txs[rec.txs.len() - take..].to_vec();
            part.extend(txs);
            txs = part;
        }
        epochs.reverse();
        ReadResult { txs, epochs }
    }
}

/// Checks that a reconfiguration request is backed by a valid proof.
pub fn validate_trigger(trigger: &ReconfigTrigger, pki: &Pki, history: &CommitteeHistory) -> Result<(), String> {
    let ctx = EvidenceContext { pki, history };
    match trigger {
        ReconfigTrigger::Detection(set) => {
            if set.is_empty() {
                return Err("empty detection set".into());
            }
            for (p, ev) in &set.accused {
                if assess(ev, &ctx) != Verdict::Accused(*p) {
                    return Err(format!("evidence against {p} does not hold"));
                }
            }
            Ok(())
        }
        ReconfigTrigger::Complaint(ev) => match assess(ev, &ctx) {
            Verdict::Invalid(why) => Err(why.into()),
            _ => Ok(()),
        },
        ReconfigTrigger::Request(m) => validate_request(m, pki),
    }
}

fn validate_request(m: &SignedMessage, pki: &Pki) -> Result<(), String> {
    if m.sender != Identity::Authority || !m.verify(pki) {
        return Err("request not signed by the authority".into());
    }
    match m.body {
        ProtocolMessage::QosRequest { .. } => Ok(()),
        _ => Err("request is not a QoS contract".into()),
    }
}

/// Checks a master-signed configuration change against its justifications.
pub fn validate_new_config(
    nc: &NewConfig,
    old_committee: &[PlayerId],
    pki: &Pki,
    history: &CommitteeHistory,
) -> Result<(), String> {
    let ctx = EvidenceContext { pki, history };
    for j in &nc.justifications {
        if let Evidence::NonResponse { accused, .. } = &j.evidence {
            if *accused != j.player {
                return Err(format!("non-response evidence names {accused}, not {}", j.player));
            }
            continue;
        }
        match assess(&j.evidence, &ctx) {
            Verdict::Accused(p) if p == j.player => {}
            _ => return Err(format!("justification against {} does not hold", j.player)),
        }
    }
    for p in old_committee {
        if !nc.committee.contains(p)
            && !nc.justifications.iter().any(|j| j.player == *p && j.sanction == Sanction::Remove)
        {
            return Err(format!("{p} removed without justification"));
        }
    }
    for r in &nc.requests {
        validate_request(r, pki)?;
    }
    if nc.committee.len() < 2 * nc.f as usize + 3 {
        return Err("committee below 2f+3".into());
    }
    crate::types::batch_schedule_from_qos(&nc.qos, nc.base).map_err(|e| e.to_string())?;
    for c in nc.closing.iter().flatten() {
        if epoch_digest(&c.txs) != c.digest {
            return Err(format!("closed epoch {} digest mismatch", c.epoch));
        }
        let Some(era) = history.era_at(c.epoch) else {
            return Err(format!("closed epoch {} precedes history", c.epoch));
        };
        let signers = closing_signers(&c.hashes, c.epoch, c.digest, pki);
        if !era.committee.iter().all(|p| signers.contains(p)) {
            return Err(format!("closed epoch {} lacks a full set of hashes", c.epoch));
        }
    }
    Ok(())
}

fn closing_signers(hashes: &[SignedMessage], epoch: Epoch, digest: Digest, pki: &Pki) -> BTreeSet<PlayerId> {
    hashes
        .iter()
        .filter(|m| m.verify(pki))
        .filter(
            |m| matches!(&m.body, ProtocolMessage::Round2 { epoch: e, digest: d, .. } if *e == epoch && *d == digest),
        )
        .filter_map(|m| m.sender_player())
        .collect()
}

/// Third-party check that `txs` is what the ledger committed at `epoch`.
pub fn verify_commit_proof(
    epoch: Epoch,
    txs: &[Transaction],
    proof: &CommitProof,
    pki: &Pki,
    history: &CommitteeHistory,
) -> bool {
    let digest = epoch_digest(txs);
    match proof {
        CommitProof::Quorum(msgs) => {
            let Some(era) = history.era_at(epoch) else { return false };
            let signers: BTreeSet<PlayerId> = msgs
                .iter()
                .filter(|m| m.verify(pki))
                .filter(|m| {
                    matches!(&m.body, ProtocolMessage::Round3 { epoch: e, digest: d, .. } if *e == epoch && *d == digest)
                })
                .filter_map(|m| m.sender_player())
                .filter(|p| era.committee.contains(p))
                .collect();
            signers.len() > era.f as usize
        }
        CommitProof::Master(m) => {
            if m.sender != Identity::Master || !m.verify(pki) {
                return false;
            }
            let ProtocolMessage::NewConfig(nc) = &m.body else { return false };
            nc.closed(epoch).is_some_and(|c| c.digest == digest && c.txs == txs)
        }
    }
}

/// Verifies a read: every epoch's proof holds and `txs` is the tail of their
/// concatenation.
pub fn verify_read(result: &ReadResult, pki: &Pki, history: &CommitteeHistory) -> bool {
    let mut all = Vec::new();
    for rec in &result.epochs {
        if !verify_commit_proof(rec.epoch, &rec.txs, &rec.proof, pki, history) {
            return false;
        }
        all.extend(rec.txs.iter().cloned());
    }
    all.len() >= result.txs.len() && all[all.len() - result.txs.len()..] == result.txs[..]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyRing, Scheme};

    fn setup(n: u32, f: u32) -> (KeyRing, Vec<Node>) {
        let ids: Vec<PlayerId> = (1..=n).map(PlayerId).collect();
        let ring = KeyRing::generate(
            Scheme::Keyed,
            3,
            ids.iter().map(|p| Identity::Player(*p)).chain([Identity::Master, Identity::Authority]),
        );
        let genesis = Genesis {
            committee: ids.clone(),
            f,
            qos: QosVector::uniform(ids.iter().copied()),
            base: u64::from(n),
            relays: vec![],
        };
        let pki = Arc::new(ring.pki.clone());
        let params = NodeParams { pipeline_window: 1, auto_fill: false, ..NodeParams::default() };
        let nodes = ids
            .iter()
            .map(|p| Node::new(*p, ring.key(Identity::Player(*p)).clone(), pki.clone(), params.clone(), &genesis))
            .collect();
        (ring, nodes)
    }

    /// Delivers player-to-player sends instantly until every node committed `target`.
    fn pump(nodes: &mut [Node], mut outs: Vec<(PlayerId, Output)>, target: Epoch) -> Vec<(PlayerId, SignedMessage)> {
        let mut to_master = Vec::new();
        while let Some((from, o)) = outs.pop() {
            if nodes.iter().all(|n| n.last_committed() >= Some(target)) {
                break;
            }
            if let Output::Send { to, msg } = o {
                match to {
                    Identity::Player(p) => {
                        let node = nodes.iter_mut().find(|n| n.id() == p).unwrap();
                        outs.extend(node.on_message(0, msg).into_iter().map(|o| (p, o)));
                    }
                    _ => to_master.push((from, msg)),
                }
            }
        }
        to_master
    }

    #[test]
    fn honest_epoch_commits_everywhere() {
        let (_, mut nodes) = setup(5, 1);
        for n in nodes.iter_mut() {
            n.append(vec![n.id().0 as u8]).unwrap();
        }
        let mut outs = Vec::new();
        for n in nodes.iter_mut() {
            let id = n.id();
            outs.extend(n.start(0).into_iter().map(|o| (id, o)));
        }
        pump(&mut nodes, outs, 0);
        for n in &nodes {
            assert!(n.last_committed() >= Some(0), "{} did not commit", n.id());
        }
        let first = &nodes[0].ledger.entries[0];
        let issuers: Vec<u32> = first.txs.iter().map(|t| t.issuer.0).collect();
        assert_eq!(issuers, vec![1, 2, 3, 4, 5]);
        assert!(!first.txs[0].is_dummy());
        for n in &nodes[1..] {
            assert_eq!(n.ledger.entries[0].digest, first.digest);
        }
    }

    #[test]
    fn empty_queue_pads_with_dummies() {
        let (_, mut nodes) = setup(5, 1);
        let mut outs = Vec::new();
        for n in nodes.iter_mut() {
            let id = n.id();
            outs.extend(n.start(0).into_iter().map(|o| (id, o)));
        }
        pump(&mut nodes, outs, 0);
        assert!(nodes[0].ledger.entries[0].txs.iter().all(|t| t.is_dummy()));
    }

    #[test]
    fn queue_capacity_enforced() {
        let (_, mut nodes) = setup(5, 1);
        nodes[0].params.queue_capacity = 2;
        nodes[0].append(vec![1]).unwrap();
        nodes[0].append(vec![2]).unwrap();
        assert_eq!(nodes[0].append(vec![3]), Err(SequencerError::QueueFull(2)));
    }

    #[test]
    fn read_returns_verifiable_suffix() {
        let (ring, mut nodes) = setup(5, 1);
        let mut outs = Vec::new();
        for n in nodes.iter_mut() {
            let id = n.id();
            for _ in 0..3 {
                n.append(vec![7]).unwrap();
            }
            outs.extend(n.start(0).into_iter().map(|o| (id, o)));
        }
        pump(&mut nodes, outs, 2);
        let r = nodes[2].read(7);
        assert_eq!(r.txs.len(), 7);
        assert_eq!(r.epochs.len(), 2);
        assert!(verify_read(&r, &ring.pki, &nodes[2].ledger.history));
        let mut forged = r.clone();
        forged.txs[0].seq += 1;
        assert!(!verify_read(&forged, &ring.pki, &nodes[2].ledger.history));
    }

    #[test]
    fn relay_does_not_vouch_for_late_messages() {
        let (ring, mut nodes) = setup(5, 1);
        let mut rest = nodes.split_off(1);
        let relay = &mut nodes[0];
        let round1 = |n: &mut Node| -> SignedMessage {
            n.start(0)
                .into_iter()
                .find_map(|o| match o {
                    Output::Send { msg, .. } if matches!(msg.body, ProtocolMessage::Round1 { .. }) => Some(msg),
                    _ => None,
                })
                .unwrap()
        };
        let stall = relay
            .start(0)
            .into_iter()
            .find_map(|o| match o {
                Output::Timer { at, timer: t @ Timer::Stall { .. } } => Some((at, t)),
                _ => None,
            })
            .unwrap();
        relay.on_message(10, round1(&mut rest[2]));
        relay.on_timer(stall.0, stall.1);
        relay.on_message(stall.0 + 10, round1(&mut rest[0]));

        let mut ask = |about: u32| {
            let q = SignedMessage::sign(
                ring.key(Identity::Master),
                Identity::Master,
                ProtocolMessage::RelayQuery {
                    instance: InstanceId::new(0, Round::One),
                    about: PlayerId(about),
                    recipient: PlayerId(3),
                    generation: 0,
                },
            );
            relay.on_message(stall.0 + 20, q).into_iter().find_map(|o| match o {
                Output::Send { msg, .. } => match msg.body {
                    ProtocolMessage::RelayAnswer { received, .. } => Some(received),
                    _ => None,
                },
                _ => None,
            })
        };
        assert_eq!(ask(4), Some(true));
        assert_eq!(ask(2), Some(false));
    }

    #[test]
    fn forged_reconfig_ignored() {
        let (ring, mut nodes) = setup(5, 1);
        let fake = SignedMessage::sign(
            ring.key(Identity::Player(PlayerId(2))),
            Identity::Master,
            ProtocolMessage::Reconfig {
                reconfig_id: 1,
                trigger: ReconfigTrigger::Complaint(Evidence::NonResponse { accused: PlayerId(3), reconfig_id: 0 }),
            },
        );
        nodes[0].on_message(0, fake);
        assert_eq!(nodes[0].phase, Phase::Running);
        assert_eq!(nodes[0].metrics.bad_signatures, 1);
        let unjustified = SignedMessage::sign(
            ring.key(Identity::Master),
            Identity::Master,
            ProtocolMessage::Reconfig { reconfig_id: 1, trigger: ReconfigTrigger::Detection(Default::default()) },
        );
        nodes[0].on_message(0, unjustified);
        assert_eq!(nodes[0].phase, Phase::Running);
        assert_eq!(nodes[0].metrics.rejected_control, 1);
    }
}
