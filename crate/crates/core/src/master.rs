//! The trusted master: turns stall reports into alert mode and detection,
//! adjudicates complaints, and reconfigures the committee.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, KeyPair, Pki};
use crate::da2a::{self, select_relays, Da2aError, Da2aInstance, Dispute, Mode, RelayAnswers};
use crate::evidence::{assess, EvidenceContext, Verdict};
use crate::simnet::{EraInfo, Output, SimTime, Timer, TraceEvent};
use crate::types::{
    adjust_qos, epoch_digest, halve_weight, ClosedEpoch, CommitteeHistory, Epoch, Era, Evidence, Identity, InstanceId,
    Justification, NewConfig, PlayerId, ProtocolMessage, QosVector, ReconfigTrigger, Sanction, SignedMessage,
    StatusEntry, Transaction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualF {
    /// Each removed player is assumed to have been one of the f faulty ones.
    #[default]
    Decrement,
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Punishment {
    /// First passive accusation halves the player's weight, the next removes it.
    #[default]
    HalveThenRemove,
    AlwaysRemove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum AlertExit {
    /// Stay in alert mode until the next reconfiguration.
    #[default]
    Stay,
    /// Return to normal relays after this many Δ without a stall report.
    AfterQuiet { deltas: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MasterParams {
    pub delta: SimTime,
    pub residual_f: ResidualF,
    pub punishment: Punishment,
    pub alert_exit: AlertExit,
    /// Broadcast mode to return to after a reconfiguration.
    pub normal_mode: Mode,
}

#[derive(Debug, Clone)]
struct Pending {
    due: SimTime,
    reports: BTreeMap<PlayerId, SignedMessage>,
}

#[derive(Debug, Clone)]
struct Investigation {
    id: u64,
    inst: Da2aInstance,
    disputes: Vec<Dispute>,
    answers: RelayAnswers,
}

#[derive(Debug, Clone)]
struct Reconfiguring {
    id: u64,
    sanctions: BTreeMap<PlayerId, (Sanction, Evidence)>,
    request: Option<SignedMessage>,
    statuses: BTreeMap<PlayerId, SignedMessage>,
}

#[derive(Debug)]
pub struct Master {
    key: KeyPair,
    pki: Arc<Pki>,
    params: MasterParams,
    committee: Vec<PlayerId>,
    f: u32,
    qos: QosVector,
    base: u64,
    relays: Vec<PlayerId>,
    generation: u64,
    counter: u64,
    era_start: Epoch,
    pub history: CommitteeHistory,
    pending: BTreeMap<InstanceId, Pending>,
    floor: Option<InstanceId>,
    investigation: Option<Investigation>,
    reconfig: Option<Reconfiguring>,
    offenses: BTreeMap<PlayerId, u32>,
    scheduled: Vec<(SimTime, SignedMessage)>,
    deferred: VecDeque<SignedMessage>,
    last_report: SimTime,
    pub halted: Option<String>,
}

impl Master {
    pub fn new(key: KeyPair, pki: Arc<Pki>, params: MasterParams, genesis: &crate::sequencer::Genesis) -> Self {
        let mut history = CommitteeHistory::default();
        history.push(genesis.era());
        Master {
            key,
            pki,
            params,
            committee: genesis.committee.clone(),
            f: genesis.f,
            qos: genesis.qos.clone(),
            base: genesis.base,
            relays: genesis.relays.clone(),
            generation: 0,
            counter: 0,
            era_start: 0,
            history,
            pending: BTreeMap::new(),
            floor: None,
            investigation: None,
            reconfig: None,
            offenses: BTreeMap::new(),
            scheduled: Vec::new(),
            deferred: VecDeque::new(),
            last_report: 0,
            halted: None,
        }
    }

    /// Queues an authority-signed request to act on at `at`.
    pub fn schedule_request(&mut self, at: SimTime, request: SignedMessage) {
        self.scheduled.push((at, request));
    }

    pub fn committee(&self) -> &[PlayerId] {
        &self.committee
    }

    pub fn start(&mut self, _now: SimTime) -> Vec<Output> {
        self.scheduled
            .iter()
            .enumerate()
            .map(|(index, (at, _))| Output::Timer { at: *at, timer: Timer::Request { index } })
            .collect()
    }

    fn next_id(&mut self) -> u64 {
        self.counter += 1;
        self.counter
    }

    fn busy(&self) -> bool {
        self.reconfig.is_some() || self.investigation.is_some() || self.halted.is_some()
    }

    fn sign(&self, body: ProtocolMessage) -> SignedMessage {
        SignedMessage::sign(&self.key, Identity::Master, body)
    }

    fn to_all(&self, targets: &[PlayerId], msg: &SignedMessage, out: &mut Vec<Output>) {
        out.extend(targets.iter().map(|p| Output::Send { to: Identity::Player(*p), msg: msg.clone() }));
    }

    pub fn on_message(&mut self, now: SimTime, msg: SignedMessage) -> Vec<Output> {
        let mut out = Vec::new();
        if self.halted.is_some() || !msg.verify(&self.pki) {
            return out;
        }
        let Some(from) = msg.sender_player() else { return out };
        if !self.committee.contains(&from) {
            return out;
        }
        match &msg.body {
            ProtocolMessage::Stall(report) => {
                if report.generation != self.generation || self.reconfig.is_some() {
                    return out;
                }
                if self.floor.is_some_and(|f| report.instance < f) {
                    return out;
                }
                self.last_report = now;
                let due = now + self.params.delta;
                let entry = self.pending.entry(report.instance).or_insert_with(|| {
                    out.push(Output::Timer { at: due, timer: Timer::Monitor });
                    Pending { due, reports: BTreeMap::new() }
                });
                entry.reports.entry(from).or_insert(msg.clone());
            }
            ProtocolMessage::RelayAnswer { instance, about, recipient, .. } => {
                if let Some(inv) = &mut self.investigation {
                    if inv.inst.id == *instance && inv.inst.is_relay(from) {
                        inv.answers.entry((*recipient, *about)).or_default().push(msg.clone());
                    }
                }
            }
            ProtocolMessage::Complaint { evidence } => self.on_complaint(now, from, evidence.clone(), &mut out),
            ProtocolMessage::Status { reconfig_id, .. } => {
                if let Some(r) = &mut self.reconfig {
                    if r.id == *reconfig_id {
                        r.statuses.entry(from).or_insert(msg.clone());
                    }
                }
            }
            _ => {}
        }
        out
    }

    fn on_complaint(&mut self, now: SimTime, from: PlayerId, evidence: Evidence, out: &mut Vec<Output>) {
        let verdict = assess(&evidence, &EvidenceContext { pki: &self.pki, history: &self.history });
        match verdict {
            Verdict::Invalid(why) => {
                out.push(Output::Trace(TraceEvent::ComplaintRejected { from, reason: why.into() }));
            }
            _ if self.reconfig.is_some() => {
                // Statuses of the running reconfiguration will show the culprit.
                if let (Verdict::Accused(p), Some(r)) = (verdict, &mut self.reconfig) {
                    r.sanctions.entry(p).or_insert((Sanction::Remove, evidence));
                }
            }
            Verdict::Accused(p) => {
                let mut sanctions = BTreeMap::new();
                sanctions.insert(p, (Sanction::Remove, evidence.clone()));
                self.start_reconfig(now, ReconfigTrigger::Complaint(evidence), sanctions, None, out);
            }
            Verdict::Warranted => {
                self.start_reconfig(now, ReconfigTrigger::Complaint(evidence), BTreeMap::new(), None, out);
            }
        }
    }

    pub fn on_timer(&mut self, now: SimTime, timer: Timer) -> Vec<Output> {
        let mut out = Vec::new();
        if self.halted.is_some() {
            return out;
        }
        match timer {
            Timer::Monitor => self.monitor(now, &mut out),
            Timer::AnswersDue { investigation } => {
                if self.investigation.as_ref().is_some_and(|i| i.id == investigation) {
                    self.finish_investigation(now, &mut out);
                }
            }
            Timer::StatusDue { reconfig_id } => {
                if self.reconfig.as_ref().is_some_and(|r| r.id == reconfig_id) {
                    self.finish_reconfig(now, &mut out);
                }
            }
            Timer::Request { index } => {
                let request = self.scheduled[index].1.clone();
                if self.busy() {
                    self.deferred.push_back(request);
                } else {
                    self.start_request(now, request, &mut out);
                }
            }
            Timer::AlertReview { generation } => self.review_alert(now, generation, &mut out),
            _ => {}
        }
        out
    }

    fn start_request(&mut self, now: SimTime, request: SignedMessage, out: &mut Vec<Output>) {
        let trigger = ReconfigTrigger::Request(Box::new(request.clone()));
        self.start_reconfig(now, trigger, BTreeMap::new(), Some(request), out);
    }

    // -- monitoring and detection ---------------------------------------------

    fn monitor(&mut self, now: SimTime, out: &mut Vec<Output>) {
        if self.busy() {
            return;
        }
        while let Some((&instance, pending)) = self.pending.iter().next() {
            if pending.due > now {
                out.push(Output::Timer { at: pending.due, timer: Timer::Monitor });
                return;
            }
            let pending = self.pending.remove(&instance).expect("first key");
            self.floor = Some(instance);
            let disputes: Vec<Dispute> = pending
                .reports
                .iter()
                .flat_map(|(recipient, report)| {
                    let ProtocolMessage::Stall(r) = &report.body else { unreachable!("only stall reports are queued") };
                    r.missing
                        .iter()
                        .filter(|o| *o != recipient && self.committee.contains(o))
                        .map(|o| Dispute { recipient: *recipient, origin: *o, report: report.clone() })
                        .collect::<Vec<_>>()
                })
                .collect();
            if disputes.is_empty() {
                continue;
            }
            if self.relays.len() < 2 * self.f as usize + 1 {
                let relays = select_relays(&self.committee, 2 * self.f as usize + 1, &[]);
                self.switch_relays(now, relays, out);
                return;
            }
            self.investigate(now, instance, disputes, out);
            return;
        }
    }

    fn switch_relays(&mut self, now: SimTime, relays: Vec<PlayerId>, out: &mut Vec<Output>) {
        self.generation = self.next_id();
        self.relays = relays.clone();
        self.pending.clear();
        out.push(Output::Trace(TraceEvent::AlertSwitch { generation: self.generation, relays: relays.clone() }));
        let msg = self.sign(ProtocolMessage::AlertMode { generation: self.generation, relays });
        self.to_all(&self.committee.clone(), &msg, out);
        if let AlertExit::AfterQuiet { deltas } = self.params.alert_exit {
            if !self.relays.is_empty() {
                out.push(Output::Timer {
                    at: now + deltas * self.params.delta,
                    timer: Timer::AlertReview { generation: self.generation },
                });
            }
        }
    }

    fn review_alert(&mut self, now: SimTime, generation: u64, out: &mut Vec<Output>) {
        let AlertExit::AfterQuiet { deltas } = self.params.alert_exit else { return };
        if generation != self.generation {
            return;
        }
        let quiet = deltas * self.params.delta;
        if self.busy() || !self.pending.is_empty() || now < self.last_report + quiet {
            out.push(Output::Timer { at: now + quiet, timer: Timer::AlertReview { generation } });
            return;
        }
        let normal = self.normal_relays(&self.committee.clone(), self.f);
        self.switch_relays(now, normal, out);
    }

    fn normal_relays(&self, committee: &[PlayerId], f: u32) -> Vec<PlayerId> {
        match self.params.normal_mode {
            Mode::Direct => Vec::new(),
            Mode::Relayed(k) => select_relays(committee, k as usize, &[]),
            Mode::Alert => select_relays(committee, 2 * f as usize + 1, &[]),
        }
    }

    fn investigate(&mut self, now: SimTime, instance: InstanceId, disputes: Vec<Dispute>, out: &mut Vec<Output>) {
        let id = self.next_id();
        let inst = Da2aInstance {
            id: instance,
            participants: self.committee.clone(),
            relays: self.relays.clone(),
            mode: Mode::Alert,
            f: self.f,
            start_time: now,
        };
        for d in &disputes {
            for relay in inst.eligible_relays(d.recipient, d.origin) {
                let q = self.sign(ProtocolMessage::RelayQuery {
                    instance,
                    about: d.origin,
                    recipient: d.recipient,
                    generation: self.generation,
                });
                out.push(Output::Send { to: Identity::Player(relay), msg: q });
            }
        }
        out.push(Output::Timer { at: now + 2 * self.params.delta, timer: Timer::AnswersDue { investigation: id } });
        self.investigation = Some(Investigation { id, inst, disputes, answers: RelayAnswers::new() });
    }

    fn finish_investigation(&mut self, now: SimTime, out: &mut Vec<Output>) {
        let inv = self.investigation.take().expect("investigation running");
        match da2a::detect(&inv.inst, &inv.disputes, &inv.answers, &self.pki) {
            Ok(set) if set.is_empty() => self.monitor(now, out),
            Ok(set) => {
                out.push(Output::Trace(TraceEvent::Detection {
                    instance: inv.inst.id,
                    accused: set.accused.iter().map(|(p, e)| (*p, e.kind().to_string())).collect(),
                }));
                let mut sanctions = BTreeMap::new();
                for (p, ev) in &set.accused {
                    let count = self.offenses.entry(*p).or_default();
                    *count += 1;
                    let sanction = match self.params.punishment {
                        Punishment::HalveThenRemove if *count == 1 && !ev.is_active() => Sanction::Reduce,
                        _ => Sanction::Remove,
                    };
                    sanctions.insert(*p, (sanction, ev.clone()));
                }
                self.start_reconfig(now, ReconfigTrigger::Detection(set), sanctions, None, out);
            }
            Err(Da2aError::InsufficientAnswers { pairs }) => {
                let relays = inv.inst.reinvestigate(pairs[0]).relays;
                self.switch_relays(now, relays, out);
            }
            Err(_) => self.monitor(now, out),
        }
    }

    // -- reconfiguration ------------------------------------------------------

    fn start_reconfig(
        &mut self,
        now: SimTime,
        trigger: ReconfigTrigger,
        sanctions: BTreeMap<PlayerId, (Sanction, Evidence)>,
        request: Option<SignedMessage>,
        out: &mut Vec<Output>,
    ) {
        let id = self.next_id();
        self.investigation = None;
        self.pending.clear();
        let label = match &trigger {
            ReconfigTrigger::Detection(_) => "detection".to_string(),
            ReconfigTrigger::Complaint(e) => format!("complaint:{}", e.kind()),
            ReconfigTrigger::Request(_) => "request".to_string(),
        };
        out.push(Output::Trace(TraceEvent::ReconfigStart { reconfig_id: id, trigger: label }));
        let msg = self.sign(ProtocolMessage::Reconfig { reconfig_id: id, trigger });
        self.to_all(&self.committee.clone(), &msg, out);
        out.push(Output::Timer { at: now + 2 * self.params.delta, timer: Timer::StatusDue { reconfig_id: id } });
        self.reconfig = Some(Reconfiguring { id, sanctions, request, statuses: BTreeMap::new() });
    }

    fn finish_reconfig(&mut self, now: SimTime, out: &mut Vec<Output>) {
        let r = self.reconfig.take().expect("reconfiguration running");
        let mut sanctions = r.sanctions;
        let entries: Vec<&StatusEntry> = r
            .statuses
            .values()
            .flat_map(|m| match &m.body {
                ProtocolMessage::Status { entries, .. } => entries.iter().collect::<Vec<_>>(),
                _ => Vec::new(),
            })
            .collect();
        for (p, ev) in find_equivocations(&entries, &self.pki) {
            if self.committee.contains(&p) {
                sanctions.insert(p, (Sanction::Remove, ev));
            }
        }
        for p in &self.committee {
            if !r.statuses.contains_key(p) {
                sanctions.insert(*p, (Sanction::Remove, Evidence::NonResponse { accused: *p, reconfig_id: r.id }));
            }
        }
        let removed: BTreeSet<PlayerId> =
            sanctions.iter().filter(|(_, (s, _))| *s == Sanction::Remove).map(|(p, _)| *p).collect();
        let reduced: Vec<PlayerId> =
            sanctions.iter().filter(|(_, (s, _))| *s == Sanction::Reduce).map(|(p, _)| *p).collect();
        let committee: Vec<PlayerId> = self.committee.iter().copied().filter(|p| !removed.contains(p)).collect();
        let f = match self.params.residual_f {
            ResidualF::Decrement => self.f.saturating_sub(removed.len() as u32),
            ResidualF::Keep => self.f,
        };
        if committee.len() < 2 * f as usize + 3 {
            self.halt(format!("committee of {} cannot tolerate f = {f}", committee.len()), out);
            return;
        }
        let qos = match self.next_qos(r.request.as_ref(), &reduced, &removed) {
            Ok(q) => q,
            Err(e) => {
                self.halt(format!("cannot derive QoS vector: {e}"), out);
                return;
            }
        };
        let base = qos.min_base();
        let closed = closing_state(&entries, &self.pki, &self.history);
        let epoch = closed.last().map_or(self.era_start, |c| c.epoch + 1).max(self.era_start);
        let relays = self.normal_relays(&committee, f);
        let config_id = self.next_id();
        let justifications = sanctions
            .into_iter()
            .map(|(player, (sanction, evidence))| Justification { player, sanction, evidence })
            .collect();
        let nc = NewConfig {
            config_id,
            committee: committee.clone(),
            f,
            epoch,
            closing: if closed.is_empty() { None } else { Some(closed.clone()) },
            qos: qos.clone(),
            base,
            relays: relays.clone(),
            justifications,
            requests: r.request.into_iter().collect(),
        };
        let era = Era { start_epoch: epoch, committee: committee.clone(), f, qos: qos.clone(), base };
        out.push(Output::Trace(TraceEvent::NewConfig {
            config_id,
            era: era_info(&era),
            closed: closed.iter().map(|c| c.epoch).collect(),
            removed: removed.iter().copied().collect(),
            reduced: reduced.clone(),
            relays: relays.clone(),
        }));
        let msg = self.sign(ProtocolMessage::NewConfig(Box::new(nc)));
        self.to_all(&self.committee.clone(), &msg, out);

        self.committee = committee;
        self.f = f;
        self.qos = qos;
        self.base = base;
        self.relays = relays;
        self.generation = config_id;
        self.era_start = epoch;
        self.history.push(era);
        self.pending.clear();
        self.floor = None;
        if let Some(next) = self.deferred.pop_front() {
            self.start_request(now, next, out);
        }
    }

    fn next_qos(
        &self,
        request: Option<&SignedMessage>,
        reduced: &[PlayerId],
        removed: &BTreeSet<PlayerId>,
    ) -> Result<QosVector, crate::types::TypesError> {
        let mut qos = self.qos.clone();
        if let Some(ProtocolMessage::QosRequest { player, ratio, .. }) = request.map(|m| &m.body) {
            if qos.ratio(*player).is_some() {
                qos = adjust_qos(&qos, *player, *ratio)?;
            }
        }
        for p in reduced {
            qos = halve_weight(&qos, *p)?;
        }
        if removed.is_empty() {
            Ok(qos)
        } else {
            qos.without(removed)
        }
    }

    fn halt(&mut self, reason: String, out: &mut Vec<Output>) {
        out.push(Output::Trace(TraceEvent::Halt { reason: reason.clone() }));
        self.halted = Some(reason);
    }
}

pub fn era_info(era: &Era) -> EraInfo {
    EraInfo {
        start_epoch: era.start_epoch,
        committee: era.committee.clone(),
        f: era.f,
        qos: era.qos.ratios().iter().map(|(p, r)| (*p, format!("{}/{}", r.numer(), r.denom()))).collect(),
        base: era.base,
    }
}

/// Pairs of differing signed sequencing messages from one sender for one
/// instance, found anywhere in the collected statuses.
pub fn find_equivocations(entries: &[&StatusEntry], pki: &Pki) -> Vec<(PlayerId, Evidence)> {
    let mut first: BTreeMap<(PlayerId, u64, InstanceId), &SignedMessage> = BTreeMap::new();
    let mut found: BTreeMap<PlayerId, Evidence> = BTreeMap::new();
    for m in entries.iter().flat_map(|e| e.batches.iter().chain(e.hashes.iter())) {
        let (Some(p), Some(config), Some(instance)) = (m.sender_player(), m.body.config(), m.body.instance()) else {
            continue;
        };
        if !m.verify(pki) {
            continue;
        }
        match first.get(&(p, config, instance)) {
            Some(prev) if prev.body != m.body => {
                found.entry(p).or_insert_with(|| Evidence::Equivocation {
                    first: Box::new((*prev).clone()),
                    second: Box::new(m.clone()),
                });
            }
            Some(_) => {}
            None => {
                first.insert((p, config, instance), m);
            }
        }
    }
    found.into_iter().collect()
}

/// Every epoch for which the statuses hold a full, matching set of round-2
/// hashes from the epoch's committee, together with round-1 batches that
/// reproduce the hashed digest. Sorted by epoch.
pub fn closing_state(entries: &[&StatusEntry], pki: &Pki, history: &CommitteeHistory) -> Vec<ClosedEpoch> {
    // (epoch, config) -> signer -> hash message
    let mut hashes: BTreeMap<(Epoch, u64), BTreeMap<PlayerId, Vec<&SignedMessage>>> = BTreeMap::new();
    let mut batches: BTreeMap<(Epoch, u64), BTreeMap<PlayerId, Vec<&SignedMessage>>> = BTreeMap::new();
    for e in entries {
        for m in &e.hashes {
            if let (ProtocolMessage::Round2 { config, epoch, .. }, Some(p)) = (&m.body, m.sender_player()) {
                if m.verify(pki) {
                    let v = hashes.entry((*epoch, *config)).or_default().entry(p).or_default();
                    if !v.iter().any(|x| x.body == m.body) {
                        v.push(m);
                    }
                }
            }
        }
        for m in &e.batches {
            if let (ProtocolMessage::Round1 { config, epoch, .. }, Some(p)) = (&m.body, m.sender_player()) {
                if m.verify(pki) {
                    let v = batches.entry((*epoch, *config)).or_default().entry(p).or_default();
                    if !v.iter().any(|x| x.body == m.body) {
                        v.push(m);
                    }
                }
            }
        }
    }
    let mut closed: BTreeMap<Epoch, ClosedEpoch> = BTreeMap::new();
    for ((epoch, config), by_signer) in &hashes {
        if closed.contains_key(epoch) {
            continue;
        }
        let Some(era) = history.era_at(*epoch) else { continue };
        let mut members = era.committee.clone();
        members.sort();
        let digests: BTreeSet<Digest> = by_signer
            .values()
            .flatten()
            .filter_map(|m| match &m.body {
                ProtocolMessage::Round2 { digest, .. } => Some(*digest),
                _ => None,
            })
            .collect();
        for digest in digests {
            let set: Vec<SignedMessage> = members
                .iter()
                .filter_map(|p| {
                    by_signer
                        .get(p)?
                        .iter()
                        .find(|m| matches!(&m.body, ProtocolMessage::Round2 { digest: d, .. } if *d == digest))
                })
                .map(|m| (*m).clone())
                .collect();
            if set.len() != members.len() {
                continue;
            }
            let Some(per_member) = members
                .iter()
                .map(|p| batches.get(&(*epoch, *config)).and_then(|b| b.get(p)).cloned())
                .collect::<Option<Vec<_>>>()
            else {
                continue;
            };
            if let Some(txs) = matching_batches(&per_member, digest) {
                closed.insert(*epoch, ClosedEpoch { epoch: *epoch, txs, digest, hashes: set });
                break;
            }
        }
    }
    closed.into_values().collect()
}

/// Picks one batch per member (members in ascending order) whose
/// concatenation hashes to `digest`. Equivocated batches make this a small
/// search; the combination count is capped.
fn matching_batches(per_member: &[Vec<&SignedMessage>], digest: Digest) -> Option<Vec<Transaction>> {
    let total: usize = per_member.iter().map(|c| c.len().max(1)).product();
    for mut k in 0..total.min(256) {
        let mut txs = Vec::new();
        for choices in per_member {
            let m = choices[k % choices.len()];
            k /= choices.len();
            if let ProtocolMessage::Round1 { batch, .. } = &m.body {
                txs.extend(batch.iter().cloned());
            }
        }
        if epoch_digest(&txs) == digest {
            return Some(txs);
        }
    }
    None
}
