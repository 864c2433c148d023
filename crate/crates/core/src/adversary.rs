//! Deviation strategies.
//!
//! A strategy sees only its own node's outbound messages (and can ask the
//! node to ignore some inbound ones). Anything it rewrites is re-signed with
//! its own key, so it can never produce a message another player would sign.

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, KeyPair};
use crate::sequencer::Behavior;
use crate::types::{Epoch, Identity, Payload, PlayerId, ProtocolMessage, Round, SignedMessage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Honest,
    /// Falls silent from `at_epoch` on.
    Crash {
        at_epoch: Epoch,
    },
    /// Drops sequencing messages of the given rounds (all rounds if empty) to `victims`.
    WithholdTo {
        victims: Vec<PlayerId>,
        #[serde(default)]
        rounds: Vec<u8>,
    },
    /// Sends a different round-1 batch to even-numbered players at `at_epoch`.
    EquivocateRound1 {
        at_epoch: Epoch,
    },
    /// Sends a different round-2 hash to even-numbered players at `at_epoch`.
    EquivocateRound2 {
        at_epoch: Epoch,
    },
    /// Ignores `about`'s messages and reports them missing.
    LieNonDelivery {
        about: PlayerId,
    },
    /// As a relay, never forwards anything to `victim`.
    RelayWithhold {
        victim: PlayerId,
    },
    /// Withholds its round-3 messages, keeps sequencing through a
    /// reconfiguration, and sends an empty status.
    OmitCommittedStatus,
    /// Withholds its messages from `target`, ignores the target's messages and
    /// reports them missing, hoping to get the target removed.
    FrameAttempt {
        target: PlayerId,
    },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Honest => "honest",
            Strategy::Crash { .. } => "crash",
            Strategy::WithholdTo { .. } => "withhold_to",
            Strategy::EquivocateRound1 { .. } => "equivocate_round1",
            Strategy::EquivocateRound2 { .. } => "equivocate_round2",
            Strategy::LieNonDelivery { .. } => "lie_non_delivery",
            Strategy::RelayWithhold { .. } => "relay_withhold",
            Strategy::OmitCommittedStatus => "omit_committed_status",
            Strategy::FrameAttempt { .. } => "frame_attempt",
        }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, Strategy::Honest)
    }

    /// Rational deviations are solo attempts at gaining share; everything
    /// else counts against `f`.
    pub fn is_byzantine(&self) -> bool {
        !matches!(self, Strategy::Honest | Strategy::LieNonDelivery { .. } | Strategy::FrameAttempt { .. })
    }

    /// Inbound behavior the node itself must apply.
    pub fn behavior(&self) -> Behavior {
        let mut b = Behavior::default();
        match self {
            Strategy::LieNonDelivery { about } => {
                b.suppress.insert(*about);
            }
            Strategy::FrameAttempt { target } => {
                b.suppress.insert(*target);
            }
            Strategy::OmitCommittedStatus => b.ignore_freeze = true,
            _ => {}
        }
        b
    }
}

/// What happened to one outbound message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Intercepted {
    Pass(SignedMessage),
    Dropped,
    Rewritten(SignedMessage),
}

impl Intercepted {
    pub fn message(self) -> Option<SignedMessage> {
        match self {
            Intercepted::Pass(m) | Intercepted::Rewritten(m) => Some(m),
            Intercepted::Dropped => None,
        }
    }

    pub fn action(&self) -> Option<&'static str> {
        match self {
            Intercepted::Pass(_) => None,
            Intercepted::Dropped => Some("dropped"),
            Intercepted::Rewritten(_) => Some("rewritten"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adversary {
    me: PlayerId,
    key: KeyPair,
    pub strategy: Strategy,
    crashed: bool,
}

fn equivocation_victim(to: Identity) -> bool {
    matches!(to, Identity::Player(p) if p.0 % 2 == 0)
}

impl Adversary {
    pub fn new(me: PlayerId, key: KeyPair, strategy: Strategy) -> Self {
        Adversary { me, key, strategy, crashed: false }
    }

    pub fn crashed(&self) -> bool {
        self.crashed
    }

    fn resign(&self, body: ProtocolMessage) -> SignedMessage {
        SignedMessage::sign(&self.key, Identity::Player(self.me), body)
    }

    /// Filters or rewrites one message the node wants to send to `to`.
    /// `current_epoch` is the node's lowest uncommitted epoch.
    pub fn intercept(&mut self, current_epoch: Epoch, to: Identity, msg: SignedMessage) -> Intercepted {
        let own = msg.sender == Identity::Player(self.me);
        let instance = msg.body.instance();
        match &self.strategy {
            Strategy::Honest | Strategy::LieNonDelivery { .. } => Intercepted::Pass(msg),
            Strategy::Crash { at_epoch } => {
                if current_epoch >= *at_epoch {
                    self.crashed = true;
                }
                if self.crashed || instance.is_some_and(|i| i.epoch >= *at_epoch) {
                    Intercepted::Dropped
                } else {
                    Intercepted::Pass(msg)
                }
            }
            Strategy::WithholdTo { victims, rounds } => {
                let hit = match (to, instance) {
                    (Identity::Player(p), Some(i)) => {
                        victims.contains(&p) && (rounds.is_empty() || rounds.contains(&i.round.number()))
                    }
                    _ => false,
                };
                if hit {
                    Intercepted::Dropped
                } else {
                    Intercepted::Pass(msg)
                }
            }
            Strategy::EquivocateRound1 { at_epoch } => match &msg.body {
                ProtocolMessage::Round1 { config, epoch, batch } if *epoch == *at_epoch && equivocation_victim(to) => {
                    let batch = batch
                        .iter()
                        .map(|tx| {
                            let mut tx = tx.clone();
                            tx.payload = match tx.payload {
                                Payload::Data(mut d) => {
                                    d.push(0xee);
                                    Payload::Data(d)
                                }
                                Payload::Dummy => Payload::Data(vec![0xee]),
                            };
                            tx
                        })
                        .collect();
                    let body = ProtocolMessage::Round1 { config: *config, epoch: *epoch, batch };
                    Intercepted::Rewritten(self.resign(body))
                }
                _ => Intercepted::Pass(msg),
            },
            Strategy::EquivocateRound2 { at_epoch } => match &msg.body {
                ProtocolMessage::Round2 { config, epoch, digest } if *epoch == *at_epoch && equivocation_victim(to) => {
                    let mut bytes = digest.0.to_vec();
                    bytes.extend_from_slice(b"other");
                    let body = ProtocolMessage::Round2 { config: *config, epoch: *epoch, digest: hash(&bytes) };
                    Intercepted::Rewritten(self.resign(body))
                }
                _ => Intercepted::Pass(msg),
            },
            Strategy::RelayWithhold { victim } => match &msg.body {
                ProtocolMessage::RelayFwd { .. } if to == Identity::Player(*victim) => Intercepted::Dropped,
                _ => Intercepted::Pass(msg),
            },
            Strategy::OmitCommittedStatus => match &msg.body {
                ProtocolMessage::Round3 { .. } if own => Intercepted::Dropped,
                ProtocolMessage::RelayFwd { inner }
                    if inner.sender == Identity::Player(self.me)
                        && matches!(inner.body.instance(), Some(i) if i.round == Round::Three) =>
                {
                    Intercepted::Dropped
                }
                ProtocolMessage::Status { reconfig_id, .. } => {
                    let body =
                        ProtocolMessage::Status { reconfig_id: *reconfig_id, last_committed: None, entries: vec![] };
                    Intercepted::Rewritten(self.resign(body))
                }
                _ => Intercepted::Pass(msg),
            },
            Strategy::FrameAttempt { target } => {
                if to == Identity::Player(*target) && instance.is_some() {
                    Intercepted::Dropped
                } else {
                    Intercepted::Pass(msg)
                }
            }
        }
    }
}
