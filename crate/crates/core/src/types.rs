//! Ledger data model, QoS vectors, proofs and the protocol message taxonomy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, Encoder};
use crate::crypto::{self, Digest, KeyPair, Pki, Signature};

pub type Epoch = u64;
pub type Rational = Ratio<u64>;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub u32);

impl fmt::Debug for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl Canonical for PlayerId {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(self.0);
    }
}

/// Anyone holding a signing key: committee players, the master, and the
/// certificate authority that signs membership and QoS contracts.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Identity {
    Player(PlayerId),
    Master,
    Authority,
}

impl Identity {
    pub fn player(self) -> Option<PlayerId> {
        match self {
            Identity::Player(p) => Some(p),
            _ => None,
        }
    }

    pub(crate) fn seed_tag(self) -> u64 {
        match self {
            Identity::Player(p) => u64::from(p.0),
            Identity::Master => 1 << 40,
            Identity::Authority => 1 << 41,
        }
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identity::Player(p) => write!(f, "{p}"),
            Identity::Master => f.write_str("master"),
            Identity::Authority => f.write_str("authority"),
        }
    }
}

impl From<PlayerId> for Identity {
    fn from(p: PlayerId) -> Self {
        Identity::Player(p)
    }
}

impl Canonical for Identity {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Identity::Player(p) => enc.put_u8(0).put(p),
            Identity::Master => enc.put_u8(1),
            Identity::Authority => enc.put_u8(2),
        };
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Round {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Round {
    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Round> {
        match n {
            1 => Some(Round::One),
            2 => Some(Round::Two),
            3 => Some(Round::Three),
            _ => None,
        }
    }
}

impl Canonical for Round {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u8(self.number());
    }
}

/// One DA2A instance: a single round of a single epoch.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct InstanceId {
    pub epoch: Epoch,
    pub round: Round,
}

impl InstanceId {
    pub fn new(epoch: Epoch, round: Round) -> Self {
        InstanceId { epoch, round }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}r{}", self.epoch, self.round.number())
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Payload {
    Data(Vec<u8>),
    /// Placeholder appended when the issuer's queue is empty.
    Dummy,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Transaction {
    pub issuer: PlayerId,
    pub seq: u64,
    pub payload: Payload,
}

impl Transaction {
    pub fn new(issuer: PlayerId, seq: u64, payload: Vec<u8>) -> Self {
        Transaction { issuer, seq, payload: Payload::Data(payload) }
    }

    pub fn dummy(issuer: PlayerId, seq: u64) -> Self {
        Transaction { issuer, seq, payload: Payload::Dummy }
    }

    pub fn is_dummy(&self) -> bool {
        matches!(self.payload, Payload::Dummy)
    }

    pub fn payload_len(&self) -> usize {
        match &self.payload {
            Payload::Data(d) => d.len(),
            Payload::Dummy => 0,
        }
    }
}

impl Canonical for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.issuer).put_u64(self.seq);
        match &self.payload {
            Payload::Data(d) => enc.put_u8(0).put_bytes(d),
            Payload::Dummy => enc.put_u8(1),
        };
    }
}

/// Digest of an epoch's ordered transaction sequence.
pub fn epoch_digest(txs: &[Transaction]) -> Digest {
    let mut enc = Encoder::new();
    enc.put_seq(txs.iter());
    crypto::hash(&enc.finish())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypesError {
    #[error("no integral batch schedule for {player} over base {base}")]
    NonIntegralSchedule { player: PlayerId, base: u64 },
    #[error("invalid QoS vector: {0}")]
    InvalidQos(String),
}

/// Per-player share of the ledger, kept as exact rationals.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct QosVector {
    ratios: BTreeMap<PlayerId, Rational>,
}

impl QosVector {
    pub fn new(ratios: BTreeMap<PlayerId, Rational>) -> Result<Self, TypesError> {
        if ratios.is_empty() {
            return Err(TypesError::InvalidQos("empty vector".into()));
        }
        let one = Rational::from_integer(1);
        let mut sum = Rational::from_integer(0);
        for (p, r) in &ratios {
            if *r > one {
                return Err(TypesError::InvalidQos(format!("ratio of {p} exceeds 1")));
            }
            sum += *r;
        }
        if sum != one {
            return Err(TypesError::InvalidQos(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(QosVector { ratios })
    }

    pub fn uniform<I: IntoIterator<Item = PlayerId>>(players: I) -> Self {
        let players: Vec<_> = players.into_iter().collect();
        let n = players.len() as u64;
        assert!(n > 0, "uniform QoS over an empty committee");
        let ratios = players.into_iter().map(|p| (p, Rational::new(1, n))).collect();
        QosVector { ratios }
    }

    pub fn ratio(&self, p: PlayerId) -> Option<Rational> {
        self.ratios.get(&p).copied()
    }

    pub fn ratios(&self) -> &BTreeMap<PlayerId, Rational> {
        &self.ratios
    }

    pub fn players(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.ratios.keys().copied()
    }

    /// Least common denominator: the smallest epoch size this vector fits.
    pub fn min_base(&self) -> u64 {
        self.ratios.values().fold(1u64, |acc, r| lcm(acc, *r.denom()))
    }

    /// Drops `removed` and rescales the rest so the vector still sums to one.
    pub fn without(&self, removed: &BTreeSet<PlayerId>) -> Result<Self, TypesError> {
        let kept: BTreeMap<_, _> =
            self.ratios.iter().filter(|(p, _)| !removed.contains(p)).map(|(p, r)| (*p, *r)).collect();
        let total: Rational = kept.values().copied().sum();
        if total == Rational::from_integer(0) {
            return Err(TypesError::InvalidQos("no remaining share".into()));
        }
        QosVector::new(kept.into_iter().map(|(p, r)| (p, r / total)).collect())
    }
}

impl Canonical for QosVector {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(self.ratios.len() as u32);
        for (p, r) in &self.ratios {
            enc.put(p).put_u64(*r.numer()).put_u64(*r.denom());
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Sets `player`'s share to `new_ratio` and rescales everyone else
/// proportionally so the vector still sums to one.
pub fn adjust_qos(qos: &QosVector, player: PlayerId, new_ratio: Rational) -> Result<QosVector, TypesError> {
    let old = qos.ratio(player).ok_or_else(|| TypesError::InvalidQos(format!("{player} not in vector")))?;
    if old == new_ratio {
        return Ok(qos.clone());
    }
    let one = Rational::from_integer(1);
    if new_ratio > one {
        return Err(TypesError::InvalidQos("ratio above 1".into()));
    }
    if old == one {
        return Err(TypesError::InvalidQos(format!("{player} holds the whole ledger")));
    }
    let scale = (one - new_ratio) / (one - old);
    let ratios = qos.ratios.iter().map(|(p, r)| (*p, if *p == player { new_ratio } else { *r * scale })).collect();
    QosVector::new(ratios)
}

/// Halves `player`'s weight relative to the others: `r -> r / (2 - r)`.
///
/// With three equal players this yields 2/5, 2/5, 1/5, i.e. batches 2, 2, 1.
pub fn halve_weight(qos: &QosVector, player: PlayerId) -> Result<QosVector, TypesError> {
    let old = qos.ratio(player).ok_or_else(|| TypesError::InvalidQos(format!("{player} not in vector")))?;
    let two = Rational::from_integer(2);
    adjust_qos(qos, player, old / (two - old))
}

/// Per-epoch batch size for every committee member.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BatchSchedule {
    sizes: BTreeMap<PlayerId, u32>,
}

impl BatchSchedule {
    pub fn size(&self, p: PlayerId) -> u32 {
        self.sizes.get(&p).copied().unwrap_or(0)
    }

    pub fn sizes(&self) -> &BTreeMap<PlayerId, u32> {
        &self.sizes
    }

    pub fn total(&self) -> u64 {
        self.sizes.values().map(|s| u64::from(*s)).sum()
    }
}

pub fn batch_schedule_from_qos(qos: &QosVector, base: u64) -> Result<BatchSchedule, TypesError> {
    let mut sizes = BTreeMap::new();
    for (p, r) in &qos.ratios {
        let size = *r * Rational::from_integer(base);
        if !size.is_integer() || size.to_integer() == 0 {
            return Err(TypesError::NonIntegralSchedule { player: *p, base });
        }
        let size =
            u32::try_from(size.to_integer()).map_err(|_| TypesError::NonIntegralSchedule { player: *p, base })?;
        sizes.insert(*p, size);
    }
    Ok(BatchSchedule { sizes })
}

/// R-fairness of a committed segment: every follower holds at least
/// `floor(|segment| * r_i)` of its transactions.
pub fn check_r_fair(segment: &[Transaction], qos: &QosVector, followers: &BTreeSet<PlayerId>) -> bool {
    let mut counts: BTreeMap<PlayerId, u64> = BTreeMap::new();
    for tx in segment {
        *counts.entry(tx.issuer).or_default() += 1;
    }
    let len = segment.len() as u64;
    followers.iter().all(|p| {
        let r = qos.ratio(*p).unwrap_or_else(|| Rational::from_integer(0));
        let bound = (r * Rational::from_integer(len)).floor().to_integer();
        counts.get(p).copied().unwrap_or(0) >= bound
    })
}

// ---------------------------------------------------------------------------
// Messages

/// A protocol message together with its sender's signature over the digest
/// of its canonical encoding.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SignedMessage {
    pub sender: Identity,
    pub body: ProtocolMessage,
    pub signature: Signature,
}

impl SignedMessage {
    pub fn sign(key: &KeyPair, sender: Identity, body: ProtocolMessage) -> Self {
        let digest = Self::signing_digest(sender, &body);
        let signature = key.sign(&digest.0);
        SignedMessage { sender, body, signature }
    }

    pub fn signing_digest(sender: Identity, body: &ProtocolMessage) -> Digest {
        let mut enc = Encoder::new();
        enc.put_str("fairledger/msg").put(&sender).put(body);
        crypto::hash(&enc.finish())
    }

    /// Checks this signature and, for relayed copies, the wrapped original.
    pub fn verify(&self, pki: &Pki) -> bool {
        let digest = Self::signing_digest(self.sender, &self.body);
        if !pki.verify(self.sender, &digest.0, &self.signature) {
            return false;
        }
        match &self.body {
            ProtocolMessage::RelayFwd { inner } => {
                !matches!(inner.body, ProtocolMessage::RelayFwd { .. }) && inner.verify(pki)
            }
            _ => true,
        }
    }

    pub fn sender_player(&self) -> Option<PlayerId> {
        self.sender.player()
    }

    /// The message as originally broadcast, unwrapping a relay forward.
    pub fn original(&self) -> &SignedMessage {
        match &self.body {
            ProtocolMessage::RelayFwd { inner } => inner,
            _ => self,
        }
    }
}

impl Canonical for SignedMessage {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.sender).put(&self.body).put(&self.signature);
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StallReport {
    pub instance: InstanceId,
    pub missing: Vec<PlayerId>,
    /// Relay configuration generation the reporter was running under.
    pub generation: u64,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StatusEntry {
    pub epoch: Epoch,
    /// Signed round-1 batches received for this epoch.
    pub batches: Vec<SignedMessage>,
    /// Signed round-2 hashes received for this epoch.
    pub hashes: Vec<SignedMessage>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ClosedEpoch {
    pub epoch: Epoch,
    pub txs: Vec<Transaction>,
    pub digest: Digest,
    /// The full set of matching round-2 hashes that justifies closing.
    pub hashes: Vec<SignedMessage>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Sanction {
    Remove,
    /// Halve the player's weight in the QoS vector.
    Reduce,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Justification {
    pub player: PlayerId,
    pub sanction: Sanction,
    pub evidence: Evidence,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NewConfig {
    pub config_id: u64,
    pub committee: Vec<PlayerId>,
    pub f: u32,
    /// First epoch the new configuration runs.
    pub epoch: Epoch,
    /// Closing state; `None` means nothing past the common prefix is closed.
    pub closing: Option<Vec<ClosedEpoch>>,
    pub qos: QosVector,
    pub base: u64,
    /// Relays for the new configuration; empty means direct all-to-all.
    pub relays: Vec<PlayerId>,
    pub justifications: Vec<Justification>,
    /// Authority-signed requests that justify QoS changes.
    pub requests: Vec<SignedMessage>,
}

impl NewConfig {
    pub fn closed(&self, epoch: Epoch) -> Option<&ClosedEpoch> {
        self.closing.as_ref()?.iter().find(|c| c.epoch == epoch)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ReconfigTrigger {
    Detection(DetectionSet),
    Complaint(Evidence),
    /// Authority-signed QoS or membership contract.
    Request(Box<SignedMessage>),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ProtocolMessage {
    Round1 { config: u64, epoch: Epoch, batch: Vec<Transaction> },
    Round2 { config: u64, epoch: Epoch, digest: Digest },
    Round3 { config: u64, epoch: Epoch, digest: Digest },
    RelayFwd { inner: Box<SignedMessage> },
    RelayQuery { instance: InstanceId, about: PlayerId, recipient: PlayerId, generation: u64 },
    RelayAnswer { instance: InstanceId, about: PlayerId, recipient: PlayerId, received: bool },
    Stall(StallReport),
    Complaint { evidence: Evidence },
    Reconfig { reconfig_id: u64, trigger: ReconfigTrigger },
    Status { reconfig_id: u64, last_committed: Option<Epoch>, entries: Vec<StatusEntry> },
    NewConfig(Box<NewConfig>),
    AlertMode { generation: u64, relays: Vec<PlayerId> },
    QosRequest { request_id: u64, player: PlayerId, ratio: Rational },
}

impl ProtocolMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolMessage::Round1 { .. } => "round1",
            ProtocolMessage::Round2 { .. } => "round2",
            ProtocolMessage::Round3 { .. } => "round3",
            ProtocolMessage::RelayFwd { .. } => "relay_fwd",
            ProtocolMessage::RelayQuery { .. } => "relay_query",
            ProtocolMessage::RelayAnswer { .. } => "relay_answer",
            ProtocolMessage::Stall(_) => "stall",
            ProtocolMessage::Complaint { .. } => "complaint",
            ProtocolMessage::Reconfig { .. } => "reconfig",
            ProtocolMessage::Status { .. } => "status",
            ProtocolMessage::NewConfig(_) => "new_config",
            ProtocolMessage::AlertMode { .. } => "alert_mode",
            ProtocolMessage::QosRequest { .. } => "qos_request",
        }
    }

    /// DA2A instance this message belongs to, for the three sequencing rounds.
    pub fn instance(&self) -> Option<InstanceId> {
        match self {
            ProtocolMessage::Round1 { epoch, .. } => Some(InstanceId::new(*epoch, Round::One)),
            ProtocolMessage::Round2 { epoch, .. } => Some(InstanceId::new(*epoch, Round::Two)),
            ProtocolMessage::Round3 { epoch, .. } => Some(InstanceId::new(*epoch, Round::Three)),
            ProtocolMessage::RelayFwd { inner } => inner.body.instance(),
            _ => None,
        }
    }

    /// Configuration a sequencing message was produced under.
    pub fn config(&self) -> Option<u64> {
        match self {
            ProtocolMessage::Round1 { config, .. }
            | ProtocolMessage::Round2 { config, .. }
            | ProtocolMessage::Round3 { config, .. } => Some(*config),
            ProtocolMessage::RelayFwd { inner } => inner.body.config(),
            _ => None,
        }
    }
}

impl Canonical for StallReport {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.instance.epoch)
            .put(&self.instance.round)
            .put_seq(self.missing.iter())
            .put_u64(self.generation);
    }
}

impl Canonical for StatusEntry {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.epoch).put_seq(self.batches.iter()).put_seq(self.hashes.iter());
    }
}

impl Canonical for ClosedEpoch {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.epoch).put_seq(self.txs.iter()).put(&self.digest).put_seq(self.hashes.iter());
    }
}

impl Canonical for Justification {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.player);
        enc.put_u8(match self.sanction {
            Sanction::Remove => 0,
            Sanction::Reduce => 1,
        });
        enc.put(&self.evidence);
    }
}

impl Canonical for NewConfig {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u64(self.config_id).put_seq(self.committee.iter()).put_u32(self.f).put_u64(self.epoch);
        match &self.closing {
            None => enc.put_u8(0),
            Some(c) => enc.put_u8(1).put_seq(c.iter()),
        };
        enc.put(&self.qos)
            .put_u64(self.base)
            .put_seq(self.relays.iter())
            .put_seq(self.justifications.iter())
            .put_seq(self.requests.iter());
    }
}

impl Canonical for ReconfigTrigger {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            ReconfigTrigger::Detection(s) => enc.put_u8(0).put(s),
            ReconfigTrigger::Complaint(e) => enc.put_u8(1).put(e),
            ReconfigTrigger::Request(m) => enc.put_u8(2).put(m.as_ref()),
        };
    }
}

impl Canonical for ProtocolMessage {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            ProtocolMessage::Round1 { config, epoch, batch } => {
                enc.put_u8(1).put_u64(*config).put_u64(*epoch).put_seq(batch.iter());
            }
            ProtocolMessage::Round2 { config, epoch, digest } => {
                enc.put_u8(2).put_u64(*config).put_u64(*epoch).put(digest);
            }
            ProtocolMessage::Round3 { config, epoch, digest } => {
                enc.put_u8(3).put_u64(*config).put_u64(*epoch).put_str("commit").put(digest);
            }
            ProtocolMessage::RelayFwd { inner } => {
                enc.put_u8(4).put(inner.as_ref());
            }
            ProtocolMessage::RelayQuery { instance, about, recipient, generation } => {
                enc.put_u8(5)
                    .put_u64(instance.epoch)
                    .put(&instance.round)
                    .put(about)
                    .put(recipient)
                    .put_u64(*generation);
            }
            ProtocolMessage::RelayAnswer { instance, about, recipient, received } => {
                enc.put_u8(6)
                    .put_u64(instance.epoch)
                    .put(&instance.round)
                    .put(about)
                    .put(recipient)
                    .put_bool(*received);
            }
            ProtocolMessage::Stall(r) => {
                enc.put_u8(7).put(r);
            }
            ProtocolMessage::Complaint { evidence } => {
                enc.put_u8(8).put(evidence);
            }
            ProtocolMessage::Reconfig { reconfig_id, trigger } => {
                enc.put_u8(9).put_u64(*reconfig_id).put(trigger);
            }
            ProtocolMessage::Status { reconfig_id, last_committed, entries } => {
                enc.put_u8(10).put_u64(*reconfig_id).put_option(last_committed.as_ref()).put_seq(entries.iter());
            }
            ProtocolMessage::NewConfig(nc) => {
                enc.put_u8(11).put(nc.as_ref());
            }
            ProtocolMessage::AlertMode { generation, relays } => {
                enc.put_u8(12).put_u64(*generation).put_seq(relays.iter());
            }
            ProtocolMessage::QosRequest { request_id, player, ratio } => {
                enc.put_u8(13).put_u64(*request_id).put(player).put_u64(*ratio.numer()).put_u64(*ratio.denom());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evidence and proofs

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum FormatRule {
    /// Round-1 batch length differs from the sender's scheduled batch size.
    BatchSize,
    /// Round-1 batch carries a transaction issued by someone else.
    ForeignIssuer,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Evidence {
    /// Two signed messages from one sender for the same instance that differ.
    Equivocation {
        first: Box<SignedMessage>,
        second: Box<SignedMessage>,
    },
    BadFormat {
        message: Box<SignedMessage>,
        rule: FormatRule,
    },
    /// Round-2 hashes from two different senders disagree: someone deviated,
    /// but the culprit has to be found from the closing statuses.
    DigestMismatch {
        first: Box<SignedMessage>,
        second: Box<SignedMessage>,
    },
    /// Relay-answer backed accusation for a missing delivery.
    PassiveProof(Box<PassiveProof>),
    /// A committee member sent no status during reconfiguration; attested by
    /// the master's signature on the enclosing message.
    NonResponse {
        accused: PlayerId,
        reconfig_id: u64,
    },
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PassiveProof {
    pub accused: PlayerId,
    pub instance: InstanceId,
    /// Origin whose message was not delivered.
    pub origin: PlayerId,
    /// Participant that did not deliver.
    pub recipient: PlayerId,
    /// Relays queried; excludes both origin and recipient.
    pub relays: Vec<PlayerId>,
    pub f: u32,
    /// Recipient's signed non-delivery report.
    pub report: SignedMessage,
    /// Signed relay answers that were received in time.
    pub answers: Vec<SignedMessage>,
}

impl Evidence {
    pub fn kind(&self) -> &'static str {
        match self {
            Evidence::Equivocation { .. } => "equivocation",
            Evidence::BadFormat { .. } => "bad_format",
            Evidence::DigestMismatch { .. } => "digest_mismatch",
            Evidence::PassiveProof(_) => "passive",
            Evidence::NonResponse { .. } => "non_response",
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self, Evidence::Equivocation { .. } | Evidence::BadFormat { .. })
    }
}

impl Canonical for PassiveProof {
    fn encode(&self, enc: &mut Encoder) {
        enc.put(&self.accused)
            .put_u64(self.instance.epoch)
            .put(&self.instance.round)
            .put(&self.origin)
            .put(&self.recipient)
            .put_seq(self.relays.iter())
            .put_u32(self.f)
            .put(&self.report)
            .put_seq(self.answers.iter());
    }
}

impl Canonical for Evidence {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Evidence::Equivocation { first, second } => {
                enc.put_u8(0).put(first.as_ref()).put(second.as_ref());
            }
            Evidence::BadFormat { message, rule } => {
                enc.put_u8(1).put(message.as_ref()).put_u8(match rule {
                    FormatRule::BatchSize => 0,
                    FormatRule::ForeignIssuer => 1,
                });
            }
            Evidence::DigestMismatch { first, second } => {
                enc.put_u8(2).put(first.as_ref()).put(second.as_ref());
            }
            Evidence::PassiveProof(p) => {
                enc.put_u8(3).put(p.as_ref());
            }
            Evidence::NonResponse { accused, reconfig_id } => {
                enc.put_u8(4).put(accused).put_u64(*reconfig_id);
            }
        }
    }
}

/// Output of detect(): accused players, each with its proof.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct DetectionSet {
    pub accused: BTreeMap<PlayerId, Evidence>,
}

impl DetectionSet {
    pub fn is_empty(&self) -> bool {
        self.accused.is_empty()
    }

    pub fn players(&self) -> BTreeSet<PlayerId> {
        self.accused.keys().copied().collect()
    }

    pub fn accuse(&mut self, p: PlayerId, ev: Evidence) {
        self.accused.entry(p).or_insert(ev);
    }
}

impl Canonical for DetectionSet {
    fn encode(&self, enc: &mut Encoder) {
        enc.put_u32(self.accused.len() as u32);
        for (p, ev) in &self.accused {
            enc.put(p).put(ev);
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum CommitProof {
    /// f+1 signed round-3 messages over the same (epoch, digest).
    Quorum(Vec<SignedMessage>),
    /// A master-signed NewConfig whose closing state contains the epoch.
    Master(Box<SignedMessage>),
}

impl CommitProof {
    pub fn kind(&self) -> &'static str {
        match self {
            CommitProof::Quorum(_) => "quorum",
            CommitProof::Master(_) => "master",
        }
    }
}

/// One committed epoch: ordered transactions, the signed hashes and commits
/// gathered for it, and the certificate that makes it committed.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EpochRecord {
    pub epoch: Epoch,
    pub txs: Vec<Transaction>,
    pub digest: Digest,
    pub hashes: BTreeMap<PlayerId, SignedMessage>,
    pub commits: BTreeMap<PlayerId, SignedMessage>,
    pub proof: CommitProof,
}

/// Configuration active from `start_epoch` until the next era begins.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Era {
    pub start_epoch: Epoch,
    pub committee: Vec<PlayerId>,
    pub f: u32,
    pub qos: QosVector,
    pub base: u64,
}

impl Era {
    pub fn schedule(&self) -> Result<BatchSchedule, TypesError> {
        batch_schedule_from_qos(&self.qos, self.base)
    }
}

/// Sequence of eras, used to pick the committee that must have signed a
/// given epoch.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct CommitteeHistory {
    pub eras: Vec<Era>,
}

impl CommitteeHistory {
    pub fn era_at(&self, epoch: Epoch) -> Option<&Era> {
        self.eras.iter().rev().find(|e| e.start_epoch <= epoch)
    }

    pub fn push(&mut self, era: Era) {
        // A later era starting at or before an existing one supersedes it.
        self.eras.retain(|e| e.start_epoch < era.start_epoch);
        self.eras.push(era);
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Ledger {
    pub entries: Vec<EpochRecord>,
    pub history: CommitteeHistory,
}

impl Ledger {
    pub fn last_epoch(&self) -> Option<Epoch> {
        self.entries.last().map(|e| e.epoch)
    }

    pub fn get(&self, epoch: Epoch) -> Option<&EpochRecord> {
        // Epochs are strictly increasing, so binary search on them.
        self.entries.binary_search_by_key(&epoch, |e| e.epoch).ok().map(|i| &self.entries[i])
    }

    pub fn push(&mut self, rec: EpochRecord) {
        if let Some(last) = self.last_epoch() {
            assert!(rec.epoch > last, "ledger epochs must increase");
        }
        self.entries.push(rec);
    }

    pub fn tx_count(&self) -> usize {
        self.entries.iter().map(|e| e.txs.len()).sum()
    }
}
