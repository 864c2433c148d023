//! Independent checking of deviation evidence.
//!
//! Both the master (before acting) and every committee member (before
//! accepting a reconfiguration) run the same checks, so a proof that passes
//! here can be re-verified by any third party holding the [`Pki`] and the
//! committee history.

use std::collections::BTreeSet;

use crate::crypto::Pki;
use crate::types::{CommitteeHistory, Evidence, FormatRule, PassiveProof, PlayerId, ProtocolMessage, SignedMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The evidence proves this player deviated.
    Accused(PlayerId),
    /// Some deviation happened, the culprit is not named by this evidence alone.
    Warranted,
    Invalid(&'static str),
}

impl Verdict {
    pub fn accused(self) -> Option<PlayerId> {
        match self {
            Verdict::Accused(p) => Some(p),
            _ => None,
        }
    }
}

pub struct EvidenceContext<'a> {
    pub pki: &'a Pki,
    pub history: &'a CommitteeHistory,
}

impl EvidenceContext<'_> {
    fn member(&self, p: PlayerId, epoch: u64) -> bool {
        self.history.era_at(epoch).is_some_and(|e| e.committee.contains(&p))
    }
}

pub fn assess(ev: &Evidence, ctx: &EvidenceContext<'_>) -> Verdict {
    match ev {
        Evidence::Equivocation { first, second } => equivocation(first, second, ctx),
        Evidence::BadFormat { message, rule } => bad_format(message, *rule, ctx),
        Evidence::DigestMismatch { first, second } => digest_mismatch(first, second, ctx),
        Evidence::PassiveProof(p) => passive(p, ctx),
        Evidence::NonResponse { accused, .. } => Verdict::Accused(*accused),
    }
}

fn equivocation(a: &SignedMessage, b: &SignedMessage, ctx: &EvidenceContext<'_>) -> Verdict {
    if !a.verify(ctx.pki) || !b.verify(ctx.pki) {
        return Verdict::Invalid("bad signature");
    }
    let (a, b) = (a.original(), b.original());
    let Some(sender) = a.sender_player() else {
        return Verdict::Invalid("sender is not a player");
    };
    if a.sender != b.sender {
        return Verdict::Invalid("different senders");
    }
    let (Some(ia), Some(ib)) = (a.body.instance(), b.body.instance()) else {
        return Verdict::Invalid("not a sequencing message");
    };
    if ia != ib || a.body.config() != b.body.config() {
        return Verdict::Invalid("different instances");
    }
    if a.body == b.body {
        return Verdict::Invalid("messages are identical");
    }
    if !ctx.member(sender, ia.epoch) {
        return Verdict::Invalid("sender not in committee");
    }
    Verdict::Accused(sender)
}

fn bad_format(m: &SignedMessage, rule: FormatRule, ctx: &EvidenceContext<'_>) -> Verdict {
    if !m.verify(ctx.pki) {
        return Verdict::Invalid("bad signature");
    }
    let m = m.original();
    let Some(sender) = m.sender_player() else {
        return Verdict::Invalid("sender is not a player");
    };
    let ProtocolMessage::Round1 { epoch, batch, .. } = &m.body else {
        return Verdict::Invalid("format rules apply to round-1 batches");
    };
    let Some(era) = ctx.history.era_at(*epoch) else {
        return Verdict::Invalid("unknown era");
    };
    if !era.committee.contains(&sender) {
        return Verdict::Invalid("sender not in committee");
    }
    let violated = match rule {
        FormatRule::BatchSize => match era.schedule() {
            Ok(s) => batch.len() != s.size(sender) as usize,
            Err(_) => false,
        },
        FormatRule::ForeignIssuer => batch.iter().any(|tx| tx.issuer != sender),
    };
    if violated {
        Verdict::Accused(sender)
    } else {
        Verdict::Invalid("rule not violated")
    }
}

fn digest_mismatch(a: &SignedMessage, b: &SignedMessage, ctx: &EvidenceContext<'_>) -> Verdict {
    if !a.verify(ctx.pki) || !b.verify(ctx.pki) {
        return Verdict::Invalid("bad signature");
    }
    let (a, b) = (a.original(), b.original());
    match (&a.body, &b.body) {
        (
            ProtocolMessage::Round2 { config: ca, epoch: ea, digest: da },
            ProtocolMessage::Round2 { config: cb, epoch: eb, digest: db },
        ) if ea == eb && ca == cb && da != db => {
            let (Some(pa), Some(pb)) = (a.sender_player(), b.sender_player()) else {
                return Verdict::Invalid("sender is not a player");
            };
            if !ctx.member(pa, *ea) || !ctx.member(pb, *ea) {
                return Verdict::Invalid("sender not in committee");
            }
            if pa == pb {
                // Same signer, two digests: that is plain equivocation.
                return Verdict::Accused(pa);
            }
            Verdict::Warranted
        }
        _ => Verdict::Invalid("not two differing round-2 hashes"),
    }
}

fn passive(p: &PassiveProof, ctx: &EvidenceContext<'_>) -> Verdict {
    let Some(era) = ctx.history.era_at(p.instance.epoch) else {
        return Verdict::Invalid("unknown era");
    };
    let f = era.f as usize;
    if !p.report.verify(ctx.pki) || p.report.sender != p.recipient.into() {
        return Verdict::Invalid("bad non-delivery report");
    }
    match &p.report.body {
        ProtocolMessage::Stall(r) if r.instance == p.instance && r.missing.contains(&p.origin) => {}
        _ => return Verdict::Invalid("report does not claim this omission"),
    }
    let relays: BTreeSet<_> = p.relays.iter().copied().collect();
    if relays.len() != p.relays.len() || relays.len() < 2 * f + 1 {
        return Verdict::Invalid("too few relays");
    }
    if relays.contains(&p.origin) || relays.contains(&p.recipient) {
        return Verdict::Invalid("relays include a suspect");
    }
    if !relays.iter().all(|r| era.committee.contains(r)) {
        return Verdict::Invalid("relay outside committee");
    }
    let mut seen = BTreeSet::new();
    let mut yes = 0usize;
    for a in &p.answers {
        if !a.verify(ctx.pki) {
            return Verdict::Invalid("bad relay answer signature");
        }
        let Some(relay) = a.sender_player() else {
            return Verdict::Invalid("answer from non-player");
        };
        if !relays.contains(&relay) || !seen.insert(relay) {
            return Verdict::Invalid("answer from unexpected or duplicate relay");
        }
        match &a.body {
            ProtocolMessage::RelayAnswer { instance, about, recipient, received }
                if *instance == p.instance && *about == p.origin && *recipient == p.recipient =>
            {
                if *received {
                    yes += 1;
                }
            }
            _ => return Verdict::Invalid("answer about a different omission"),
        }
    }
    let expected = if yes > f { p.recipient } else { p.origin };
    if p.accused == expected {
        Verdict::Accused(expected)
    } else {
        Verdict::Invalid("accusation contradicts relay answers")
    }
}
