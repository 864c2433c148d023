//! Detectable all-to-all broadcast.
//!
//! Every participant broadcasts one message per instance and should deliver
//! the message of every other participant. Messages go straight to all
//! participants; when relays are configured, a relay that delivers a message
//! for the first time forwards it to everyone else.
//!
//! With `2f+1` relays excluding both parties of a dispute, the master can
//! decide who is at fault for a missing delivery: if at least `f+1` relays
//! signed that they received the origin's message, some honest relay
//! forwarded it and the recipient is lying; otherwise the origin did not
//! reach all relays and is at fault.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{KeyPair, Pki};
use crate::simnet::SimTime;
use crate::types::{
    DetectionSet, Evidence, Identity, InstanceId, PassiveProof, PlayerId, ProtocolMessage, SignedMessage,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Da2aError {
    #[error("{0} is not a participant of this instance")]
    NotParticipant(PlayerId),
    #[error("signature does not verify")]
    BadSignature,
    #[error("forward from {0}, which is not a relay")]
    NotRelay(PlayerId),
    #[error("fewer than 2f+1 eligible relays for disputes {pairs:?}")]
    InsufficientAnswers { pairs: Vec<(PlayerId, PlayerId)> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Direct,
    Relayed(u32),
    Alert,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Da2aInstance {
    pub id: InstanceId,
    pub participants: Vec<PlayerId>,
    pub relays: Vec<PlayerId>,
    pub mode: Mode,
    pub f: u32,
    pub start_time: SimTime,
}

/// Picks the `count` lowest-id participants not in `exclude`.
pub fn select_relays(participants: &[PlayerId], count: usize, exclude: &[PlayerId]) -> Vec<PlayerId> {
    let mut sorted: Vec<_> = participants.iter().copied().filter(|p| !exclude.contains(p)).collect();
    sorted.sort();
    sorted.truncate(count);
    sorted
}

impl Da2aInstance {
    pub fn new(id: InstanceId, participants: Vec<PlayerId>, mode: Mode, f: u32, start_time: SimTime) -> Self {
        let relays = match mode {
            Mode::Direct => Vec::new(),
            Mode::Relayed(k) => select_relays(&participants, k as usize, &[]),
            Mode::Alert => select_relays(&participants, 2 * f as usize + 1, &[]),
        };
        Da2aInstance { id, participants, relays, mode, f, start_time }
    }

    pub fn with_relays(mut self, relays: Vec<PlayerId>) -> Self {
        self.relays = relays;
        self
    }

    pub fn is_participant(&self, p: PlayerId) -> bool {
        self.participants.contains(&p)
    }

    pub fn is_relay(&self, p: PlayerId) -> bool {
        self.relays.contains(&p)
    }

    /// Fresh alert instance whose relays exclude both suspects.
    pub fn reinvestigate(&self, suspects: (PlayerId, PlayerId)) -> Da2aInstance {
        let relays = select_relays(&self.participants, 2 * self.f as usize + 1, &[suspects.0, suspects.1]);
        Da2aInstance {
            id: self.id,
            participants: self.participants.clone(),
            relays,
            mode: Mode::Alert,
            f: self.f,
            start_time: self.start_time,
        }
    }

    /// Relays that may testify about an omission between `recipient` and `origin`.
    pub fn eligible_relays(&self, recipient: PlayerId, origin: PlayerId) -> Vec<PlayerId> {
        self.relays.iter().copied().filter(|r| *r != recipient && *r != origin).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Send {
    pub to: PlayerId,
    pub msg: SignedMessage,
}

/// Sends for one broadcast by `sender`: one copy to every other participant.
/// The sender delivers its own message locally.
pub fn broadcast(inst: &Da2aInstance, sender: PlayerId, msg: &SignedMessage) -> Result<Vec<Send>, Da2aError> {
    if !inst.is_participant(sender) {
        return Err(Da2aError::NotParticipant(sender));
    }
    Ok(inst.participants.iter().filter(|p| **p != sender).map(|p| Send { to: *p, msg: msg.clone() }).collect())
}

/// One participant's view of one instance.
#[derive(Debug, Clone, Default)]
pub struct DeliveryState {
    pub delivered: BTreeMap<PlayerId, SignedMessage>,
    pub forwarded: BTreeSet<PlayerId>,
}

#[derive(Debug, Default)]
pub struct Received {
    /// Original message delivered for the first time.
    pub deliver: Option<SignedMessage>,
    pub forwards: Vec<Send>,
    /// Set when the origin signed two different messages for this instance.
    pub conflict: Option<Evidence>,
}

impl DeliveryState {
    pub fn has(&self, origin: PlayerId) -> bool {
        self.delivered.contains_key(&origin)
    }

    /// Origins among `participants` that have not been delivered.
    pub fn missing(&self, participants: &[PlayerId]) -> Vec<PlayerId> {
        participants.iter().copied().filter(|p| !self.has(*p)).collect()
    }

    /// Records the participant's own broadcast; relays forward it too.
    pub fn deliver_own(&mut self, inst: &Da2aInstance, me: PlayerId, key: &KeyPair, msg: SignedMessage) -> Vec<Send> {
        self.delivered.entry(me).or_insert(msg.clone());
        self.forward_if_relay(inst, me, key, &msg)
    }

    fn forward_if_relay(
        &mut self,
        inst: &Da2aInstance,
        me: PlayerId,
        key: &KeyPair,
        original: &SignedMessage,
    ) -> Vec<Send> {
        let Some(origin) = original.sender_player() else {
            return Vec::new();
        };
        if !inst.is_relay(me) || !self.forwarded.insert(origin) {
            return Vec::new();
        }
        let fwd = SignedMessage::sign(
            key,
            Identity::Player(me),
            ProtocolMessage::RelayFwd { inner: Box::new(original.clone()) },
        );
        inst.participants.iter().filter(|p| **p != me).map(|p| Send { to: *p, msg: fwd.clone() }).collect()
    }

    /// Re-forwards everything already delivered, used when relays change.
    pub fn reforward_all(&mut self, inst: &Da2aInstance, me: PlayerId, key: &KeyPair) -> Vec<Send> {
        self.forwarded.clear();
        let originals: Vec<_> = self.delivered.values().cloned().collect();
        originals.iter().flat_map(|m| self.forward_if_relay(inst, me, key, m)).collect()
    }
}

/// Handles a direct or forwarded copy arriving at `me`.
///
/// The first copy of an origin's message is delivered; duplicates are
/// suppressed; a relay forwards an origin's message the first time it sees it.
pub fn on_message(
    inst: &Da2aInstance,
    state: &mut DeliveryState,
    me: PlayerId,
    key: &KeyPair,
    pki: &Pki,
    msg: &SignedMessage,
) -> Result<Received, Da2aError> {
    if !msg.verify(pki) {
        return Err(Da2aError::BadSignature);
    }
    if let ProtocolMessage::RelayFwd { .. } = msg.body {
        let relay = msg.sender_player().ok_or(Da2aError::BadSignature)?;
        if !inst.is_relay(relay) {
            return Err(Da2aError::NotRelay(relay));
        }
    }
    let original = msg.original();
    let origin = original.sender_player().ok_or(Da2aError::BadSignature)?;
    if !inst.is_participant(origin) {
        return Err(Da2aError::NotParticipant(origin));
    }
    let mut out = Received::default();
    match state.delivered.get(&origin) {
        Some(prev) if prev.body != original.body => {
            out.conflict =
                Some(Evidence::Equivocation { first: Box::new(prev.clone()), second: Box::new(original.clone()) });
        }
        Some(_) => {}
        None => {
            state.delivered.insert(origin, original.clone());
            out.deliver = Some(original.clone());
        }
    }
    if out.deliver.is_some() {
        out.forwards = state.forward_if_relay(inst, me, key, original);
    }
    Ok(out)
}

/// A recipient's signed claim that it did not deliver `origin`'s message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispute {
    pub recipient: PlayerId,
    pub origin: PlayerId,
    pub report: SignedMessage,
}

/// Relay answers collected for each (recipient, origin) dispute.
pub type RelayAnswers = BTreeMap<(PlayerId, PlayerId), Vec<SignedMessage>>;

/// Names the deviator behind each disputed delivery.
///
/// Relays that did not answer count as answering "not received". Disputes
/// with fewer than `2f+1` eligible relays are skipped; if nothing could be
/// decided because of that, `InsufficientAnswers` lists the skipped pairs so
/// the caller can re-select relays.
pub fn detect(
    inst: &Da2aInstance,
    disputes: &[Dispute],
    answers: &RelayAnswers,
    pki: &Pki,
) -> Result<DetectionSet, Da2aError> {
    let f = inst.f as usize;
    let mut set = DetectionSet::default();
    let mut skipped = Vec::new();
    for d in disputes {
        let relays = inst.eligible_relays(d.recipient, d.origin);
        if relays.len() < 2 * f + 1 {
            skipped.push((d.recipient, d.origin));
            continue;
        }
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        let mut yes = 0;
        for a in answers.get(&(d.recipient, d.origin)).into_iter().flatten() {
            let Some(relay) = a.sender_player() else { continue };
            if !relays.contains(&relay) || !a.verify(pki) || !seen.insert(relay) {
                continue;
            }
            match &a.body {
                ProtocolMessage::RelayAnswer { instance, about, recipient, received }
                    if *instance == inst.id && *about == d.origin && *recipient == d.recipient =>
                {
                    if *received {
                        yes += 1;
                    }
                    kept.push(a.clone());
                }
                _ => {}
            }
        }
        let accused = if yes > f { d.recipient } else { d.origin };
        set.accuse(
            accused,
            Evidence::PassiveProof(Box::new(PassiveProof {
                accused,
                instance: inst.id,
                origin: d.origin,
                recipient: d.recipient,
                relays,
                f: inst.f,
                report: d.report.clone(),
                answers: kept,
            })),
        );
    }
    if set.is_empty() && !skipped.is_empty() {
        return Err(Da2aError::InsufficientAnswers { pairs: skipped });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyRing, Scheme};
    use crate::types::{Round, StallReport, Transaction};
    use std::collections::VecDeque;

    fn players(n: u32) -> Vec<PlayerId> {
        (1..=n).map(PlayerId).collect()
    }

    fn ring(n: u32) -> KeyRing {
        KeyRing::generate(Scheme::Keyed, 5, players(n).into_iter().map(Identity::Player))
    }

    fn r1(ring: &KeyRing, p: PlayerId) -> SignedMessage {
        SignedMessage::sign(
            ring.key(p.into()),
            p.into(),
            ProtocolMessage::Round1 { config: 0, epoch: 0, batch: vec![Transaction::new(p, 0, vec![p.0 as u8])] },
        )
    }

    #[test]
    fn direct_broadcast_sends_n_minus_one() {
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Direct, 1, 0);
        let ring = ring(5);
        let sends = broadcast(&inst, PlayerId(1), &r1(&ring, PlayerId(1))).unwrap();
        assert_eq!(sends.len(), 4);
        assert!(broadcast(&inst, PlayerId(9), &r1(&ring, PlayerId(1))).is_err());
    }

    #[test]
    fn alert_mode_uses_2f_plus_1_relays() {
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        assert_eq!(inst.relays, players(3));
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(7), Mode::Alert, 2, 0);
        assert_eq!(inst.relays, players(5));
    }

    #[test]
    fn reinvestigate_excludes_suspects() {
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        assert_eq!(inst.reinvestigate((PlayerId(1), PlayerId(2))).relays, vec![PlayerId(3), PlayerId(4), PlayerId(5)]);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(7), Mode::Alert, 2, 0);
        assert_eq!(inst.reinvestigate((PlayerId(1), PlayerId(2))).relays, (3..=7).map(PlayerId).collect::<Vec<_>>());
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(6), Mode::Alert, 1, 0);
        assert_eq!(inst.reinvestigate((PlayerId(2), PlayerId(5))).relays, vec![PlayerId(1), PlayerId(3), PlayerId(4)]);
    }

    #[test]
    fn relay_forwards_once() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        let me = PlayerId(2);
        let mut st = DeliveryState::default();
        let m = r1(&ring, PlayerId(4));
        let first = on_message(&inst, &mut st, me, ring.key(me.into()), &ring.pki, &m).unwrap();
        assert!(first.deliver.is_some());
        assert_eq!(first.forwards.len(), 4);
        let again = on_message(&inst, &mut st, me, ring.key(me.into()), &ring.pki, &m).unwrap();
        assert!(again.deliver.is_none());
        assert!(again.forwards.is_empty());
    }

    #[test]
    fn forwarded_copy_first_then_direct_delivers_once() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        let me = PlayerId(5);
        let m = r1(&ring, PlayerId(4));
        let fwd = SignedMessage::sign(
            ring.key(PlayerId(1).into()),
            PlayerId(1).into(),
            ProtocolMessage::RelayFwd { inner: Box::new(m.clone()) },
        );
        let mut st = DeliveryState::default();
        let a = on_message(&inst, &mut st, me, ring.key(me.into()), &ring.pki, &fwd).unwrap();
        let b = on_message(&inst, &mut st, me, ring.key(me.into()), &ring.pki, &m).unwrap();
        assert!(a.deliver.is_some());
        assert!(b.deliver.is_none());
        assert!(a.forwards.is_empty(), "non-relay never forwards");
    }

    #[test]
    fn forged_message_rejected() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Direct, 1, 0);
        // p3 signs a batch but claims it came from p4.
        let mut forged = r1(&ring, PlayerId(3));
        forged.sender = PlayerId(4).into();
        let mut st = DeliveryState::default();
        let err = on_message(&inst, &mut st, PlayerId(1), ring.key(PlayerId(1).into()), &ring.pki, &forged);
        assert_eq!(err.unwrap_err(), Da2aError::BadSignature);
        assert!(st.delivered.is_empty());
    }

    #[test]
    fn conflicting_copies_yield_equivocation() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Direct, 1, 0);
        let p = PlayerId(3);
        let a = r1(&ring, p);
        let b = SignedMessage::sign(
            ring.key(p.into()),
            p.into(),
            ProtocolMessage::Round1 { config: 0, epoch: 0, batch: vec![Transaction::new(p, 0, b"other".to_vec())] },
        );
        let mut st = DeliveryState::default();
        let me = PlayerId(1);
        on_message(&inst, &mut st, me, ring.key(me.into()), &ring.pki, &a).unwrap();
        let out = on_message(&inst, &mut st, me, ring.key(me.into()), &ring.pki, &b).unwrap();
        assert!(matches!(out.conflict, Some(Evidence::Equivocation { .. })));
    }

    /// Byzantine origin reaches only relay p1 in alert mode; the forward still
    /// gets the message to everyone.
    #[test]
    fn single_relay_copy_reaches_everyone() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        let origin = PlayerId(5);
        let m = r1(&ring, origin);
        let mut states: BTreeMap<PlayerId, DeliveryState> =
            players(5).into_iter().map(|p| (p, DeliveryState::default())).collect();
        let mut queue: VecDeque<Send> = VecDeque::from(vec![Send { to: PlayerId(1), msg: m }]);
        while let Some(s) = queue.pop_front() {
            let st = states.get_mut(&s.to).unwrap();
            let out = on_message(&inst, st, s.to, ring.key(s.to.into()), &ring.pki, &s.msg).unwrap();
            queue.extend(out.forwards);
        }
        for p in players(4) {
            assert!(states[&p].has(origin), "{p} did not deliver");
        }
    }

    fn dispute(ring: &KeyRing, inst: &Da2aInstance, recipient: PlayerId, origin: PlayerId) -> Dispute {
        let report = SignedMessage::sign(
            ring.key(recipient.into()),
            recipient.into(),
            ProtocolMessage::Stall(StallReport { instance: inst.id, missing: vec![origin], generation: 0 }),
        );
        Dispute { recipient, origin, report }
    }

    fn answer(ring: &KeyRing, inst: &Da2aInstance, relay: PlayerId, d: &Dispute, received: bool) -> SignedMessage {
        SignedMessage::sign(
            ring.key(relay.into()),
            relay.into(),
            ProtocolMessage::RelayAnswer { instance: inst.id, about: d.origin, recipient: d.recipient, received },
        )
    }

    #[test]
    fn detect_accuses_lying_recipient() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        let d = dispute(&ring, &inst, PlayerId(4), PlayerId(5));
        // Two honest relays saw p5's message, one says no.
        let answers: RelayAnswers = [(
            (d.recipient, d.origin),
            vec![
                answer(&ring, &inst, PlayerId(1), &d, true),
                answer(&ring, &inst, PlayerId(2), &d, true),
                answer(&ring, &inst, PlayerId(3), &d, false),
            ],
        )]
        .into();
        let s = detect(&inst, &[d], &answers, &ring.pki).unwrap();
        assert_eq!(s.players(), [PlayerId(4)].into());
    }

    #[test]
    fn detect_accuses_silent_origin() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        let d = dispute(&ring, &inst, PlayerId(4), PlayerId(5));
        let answers: RelayAnswers =
            [((d.recipient, d.origin), (1..=3).map(|r| answer(&ring, &inst, PlayerId(r), &d, false)).collect())].into();
        let s = detect(&inst, std::slice::from_ref(&d), &answers, &ring.pki).unwrap();
        assert_eq!(s.players(), [PlayerId(5)].into());
        // Missing answers count as "no".
        let s = detect(&inst, &[d], &RelayAnswers::new(), &ring.pki).unwrap();
        assert_eq!(s.players(), [PlayerId(5)].into());
    }

    #[test]
    fn detect_empty_without_disputes() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        assert!(detect(&inst, &[], &RelayAnswers::new(), &ring.pki).unwrap().is_empty());
    }

    #[test]
    fn detect_requires_eligible_relays() {
        let ring = ring(5);
        let inst = Da2aInstance::new(InstanceId::new(0, Round::One), players(5), Mode::Alert, 1, 0);
        let d = dispute(&ring, &inst, PlayerId(1), PlayerId(2));
        let err = detect(&inst, std::slice::from_ref(&d), &RelayAnswers::new(), &ring.pki).unwrap_err();
        assert!(matches!(err, Da2aError::InsufficientAnswers { .. }));
        let again = inst.reinvestigate((PlayerId(1), PlayerId(2)));
        let s = detect(&again, &[d], &RelayAnswers::new(), &ring.pki).unwrap();
        assert_eq!(s.players(), [PlayerId(2)].into());
    }
}
