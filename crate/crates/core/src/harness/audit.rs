//! Audits over a recorded trace. Everything here is a pure function of the
//! trace, so re-auditing an exported file gives the same verdicts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::harness::scenario::parse_ratio;
use crate::simnet::{EraInfo, Trace, TraceEvent, TraceRecord, TxSummary};
use crate::types::{Epoch, PlayerId, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    /// Trace record ids that demonstrate a failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counterexample: Vec<u64>,
}

impl Verdict {
    fn pass(name: &str) -> Verdict {
        Verdict { name: name.into(), passed: true, detail: String::new(), counterexample: Vec::new() }
    }

    fn fail(name: &str, detail: String, counterexample: Vec<u64>) -> Verdict {
        Verdict { name: name.into(), passed: false, detail, counterexample }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub verdicts: Vec<Verdict>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

pub const SAFETY: &str = "safety";
pub const EPOCH_FAIRNESS: &str = "epoch_fairness";
pub const R_FAIRNESS: &str = "r_fairness";
pub const DETECTION: &str = "detection_accuracy";
pub const PROGRESS: &str = "progress";

/// One commit as recorded: (record id, epoch, digest, transactions).
pub type CommitRecord = (u64, Epoch, String, Vec<TxSummary>);

/// Facts pulled out of a trace once, shared by the audits and the report.
#[derive(Debug, Clone, Default)]
pub struct TraceView {
    pub committee: Vec<PlayerId>,
    pub deviators: BTreeSet<PlayerId>,
    /// First record at which a player missed its own round-1 deadline. From
    /// then on it is timing-faulty, whatever its strategy.
    pub late: BTreeMap<PlayerId, u64>,
    /// Eras in effect at the end of the run, oldest first.
    pub eras: Vec<EraInfo>,
    /// Commit records by node in trace order.
    pub commits: BTreeMap<PlayerId, Vec<CommitRecord>>,
    pub end: Option<String>,
}

impl TraceView {
    pub fn new(trace: &Trace) -> TraceView {
        let mut v = TraceView::default();
        for r in trace.events() {
            match &r.event {
                TraceEvent::Header { era, deviators, .. } => {
                    v.committee = era.committee.clone();
                    v.deviators = deviators.iter().map(|d| d.player).collect();
                    v.eras = vec![era.clone()];
                }
                TraceEvent::NewConfig { era, .. } => {
                    v.eras.retain(|e| e.start_epoch < era.start_epoch);
                    v.eras.push(era.clone());
                }
                TraceEvent::Commit { node, epoch, digest, txs, .. } => {
                    v.commits.entry(*node).or_default().push((r.id, *epoch, digest.clone(), txs.clone()));
                }
                TraceEvent::Late { node, .. } => {
                    v.late.entry(*node).or_insert(r.id);
                }
                TraceEvent::End { reason } => v.end = Some(reason.clone()),
                _ => {}
            }
        }
        v
    }

    pub fn is_follower(&self, p: PlayerId) -> bool {
        !self.deviators.contains(&p)
    }

    pub fn era_at(&self, epoch: Epoch) -> Option<&EraInfo> {
        self.eras.iter().rev().find(|e| e.start_epoch <= epoch)
    }

    /// The agreed ledger as seen by followers: one entry per committed epoch.
    pub fn ledger(&self) -> BTreeMap<Epoch, (u64, &[TxSummary])> {
        let mut out = BTreeMap::new();
        for (node, commits) in &self.commits {
            if !self.is_follower(*node) {
                continue;
            }
            for (id, epoch, _, txs) in commits {
                out.entry(*epoch).or_insert((*id, txs.as_slice()));
            }
        }
        out
    }
}

fn era_sizes(era: &EraInfo) -> Option<BTreeMap<PlayerId, u64>> {
    let base = Rational::from_integer(era.base);
    let mut sizes = BTreeMap::new();
    for (p, r) in &era.qos {
        let size = parse_ratio(r)? * base;
        if !size.is_integer() {
            return None;
        }
        sizes.insert(*p, size.to_integer());
    }
    Some(sizes)
}

fn safety(v: &TraceView) -> Verdict {
    let mut seen: BTreeMap<Epoch, (u64, &str)> = BTreeMap::new();
    for (node, commits) in &v.commits {
        if !v.is_follower(*node) {
            continue;
        }
        let mut prev: Option<(u64, Epoch)> = None;
        for (id, epoch, digest, _) in commits {
            let expected = prev.map_or(0, |(_, e)| e + 1);
            if *epoch != expected {
                let mut ids = prev.map(|(i, _)| vec![i]).unwrap_or_default();
                ids.push(*id);
                return Verdict::fail(SAFETY, format!("{node} committed epoch {epoch}, expected {expected}"), ids);
            }
            prev = Some((*id, *epoch));
            match seen.get(epoch) {
                Some((other, d)) if *d != digest.as_str() => {
                    return Verdict::fail(SAFETY, format!("followers disagree at epoch {epoch}"), vec![*other, *id]);
                }
                Some(_) => {}
                None => {
                    seen.insert(*epoch, (*id, digest));
                }
            }
        }
    }
    Verdict::pass(SAFETY)
}

fn epoch_fairness(v: &TraceView) -> Verdict {
    for (node, commits) in &v.commits {
        if !v.is_follower(*node) {
            continue;
        }
        for (id, epoch, _, txs) in commits {
            let Some(era) = v.era_at(*epoch) else {
                return Verdict::fail(EPOCH_FAIRNESS, format!("no era covers epoch {epoch}"), vec![*id]);
            };
            let Some(sizes) = era_sizes(era) else {
                return Verdict::fail(
                    EPOCH_FAIRNESS,
                    format!("era {} has no integral schedule", era.start_epoch),
                    vec![*id],
                );
            };
            let mut counts: BTreeMap<PlayerId, u64> = BTreeMap::new();
            for tx in txs {
                *counts.entry(tx.issuer).or_default() += 1;
            }
            let expected: BTreeMap<PlayerId, u64> = sizes.into_iter().filter(|(_, s)| *s > 0).collect();
            if counts != expected {
                return Verdict::fail(
                    EPOCH_FAIRNESS,
                    format!("epoch {epoch} at {node} has batch counts {counts:?}, schedule {expected:?}"),
                    vec![*id],
                );
            }
        }
    }
    Verdict::pass(EPOCH_FAIRNESS)
}

fn r_fairness(v: &TraceView) -> Verdict {
    let ledger = v.ledger();
    for (i, era) in v.eras.iter().enumerate() {
        let end = v.eras.get(i + 1).map_or(Epoch::MAX, |e| e.start_epoch);
        let segment: Vec<_> = ledger.range(era.start_epoch..end).collect();
        let total: usize = segment.iter().map(|(_, (_, txs))| txs.len()).sum();
        if total == 0 {
            continue;
        }
        let mut counts: BTreeMap<PlayerId, u64> = BTreeMap::new();
        for (_, (_, txs)) in &segment {
            for tx in txs.iter() {
                *counts.entry(tx.issuer).or_default() += 1;
            }
        }
        for (p, r) in &era.qos {
            let share = Rational::new(counts.get(p).copied().unwrap_or(0), total as u64);
            if Some(share) != parse_ratio(r) {
                let ids = segment.iter().map(|(_, (id, _))| *id).take(1).collect();
                return Verdict::fail(
                    R_FAIRNESS,
                    format!("era starting at epoch {}: {p} has share {share}, entitled to {r}", era.start_epoch),
                    ids,
                );
            }
        }
    }
    Verdict::pass(R_FAIRNESS)
}

fn detection(trace: &Trace, v: &TraceView) -> Verdict {
    let mut bad = Vec::new();
    let mut who = BTreeSet::new();
    for r in trace.events() {
        let named: Vec<PlayerId> = match &r.event {
            TraceEvent::Detection { accused, .. } => accused.iter().map(|(p, _)| *p).collect(),
            TraceEvent::NewConfig { removed, reduced, .. } => removed.iter().chain(reduced).copied().collect(),
            _ => continue,
        };
        for p in named {
            if v.is_follower(p) && v.late.get(&p).is_none_or(|first| *first > r.id) {
                bad.push(r.id);
                who.insert(p);
            }
        }
    }
    if bad.is_empty() {
        Verdict::pass(DETECTION)
    } else {
        bad.dedup();
        Verdict::fail(DETECTION, format!("followers accused or sanctioned: {who:?}"), bad)
    }
}

fn progress(trace: &Trace, v: &TraceView) -> Verdict {
    let last = trace.records.last().map(|r: &TraceRecord| r.id).into_iter().collect();
    match v.end.as_deref() {
        Some("target_reached") => Verdict::pass(PROGRESS),
        Some(r) if r.starts_with("halted") => Verdict::pass(PROGRESS),
        Some(r) => Verdict::fail(PROGRESS, format!("run ended: {r}"), last),
        None => Verdict::fail(PROGRESS, "trace has no end record".into(), last),
    }
}

pub fn audit(trace: &Trace) -> AuditReport {
    let v = TraceView::new(trace);
    AuditReport {
        verdicts: vec![safety(&v), epoch_fairness(&v), r_fairness(&v), detection(trace, &v), progress(trace, &v)],
    }
}

/// Share of `player`'s transactions among the first `first` non-dummy
/// transactions of the agreed ledger, or `None` if fewer were committed.
pub fn committed_ratio(trace: &Trace, player: PlayerId, first: usize) -> Option<Rational> {
    let v = TraceView::new(trace);
    let ledger = v.ledger();
    let prefix: Vec<_> = ledger.values().flat_map(|(_, txs)| txs.iter()).filter(|t| !t.dummy).take(first).collect();
    if prefix.len() < first || first == 0 {
        return None;
    }
    let mine = prefix.iter().filter(|t| t.issuer == player).count();
    Some(Rational::new(mine as u64, first as u64))
}

/// The deviator's ratio over the first `first` committed transactions must
/// not exceed what it gets by following the protocol.
pub fn rational_outcome(deviated: &Trace, baseline: &Trace, player: PlayerId, first: usize) -> Verdict {
    const NAME: &str = "rationality";
    match (committed_ratio(deviated, player, first), committed_ratio(baseline, player, first)) {
        (Some(d), Some(b)) if d <= b => Verdict {
            name: NAME.into(),
            passed: true,
            detail: format!("{player}: deviating {d} vs honest {b}"),
            counterexample: Vec::new(),
        },
        (Some(d), Some(b)) => Verdict::fail(NAME, format!("{player} gained: deviating {d} vs honest {b}"), vec![]),
        _ => Verdict::fail(NAME, format!("fewer than {first} transactions committed"), vec![]),
    }
}

/// Players removed by any reconfiguration in the trace.
pub fn removed_players(trace: &Trace) -> BTreeSet<PlayerId> {
    trace
        .events()
        .filter_map(|r| match &r.event {
            TraceEvent::NewConfig { removed, .. } => Some(removed.clone()),
            _ => None,
        })
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::DeviatorInfo;

    fn era(committee: &[u32], qos: &[&str], base: u64, start: Epoch) -> EraInfo {
        EraInfo {
            start_epoch: start,
            committee: committee.iter().map(|p| PlayerId(*p)).collect(),
            f: 0,
            qos: committee.iter().zip(qos).map(|(p, r)| (PlayerId(*p), r.to_string())).collect(),
            base,
        }
    }

    fn header(era: EraInfo, deviators: &[u32]) -> TraceEvent {
        TraceEvent::Header {
            scenario: "t".into(),
            seed: 0,
            n: era.committee.len() as u32,
            f: 0,
            mode: "direct".into(),
            delta: 0,
            era,
            deviators: deviators
                .iter()
                .map(|p| DeviatorInfo { player: PlayerId(*p), strategy: "crash".into(), byzantine: true })
                .collect(),
        }
    }

    fn commit(node: u32, epoch: Epoch, digest: &str, issuers: &[u32]) -> TraceEvent {
        TraceEvent::Commit {
            node: PlayerId(node),
            epoch,
            digest: digest.into(),
            proof: "quorum".into(),
            txs: issuers.iter().map(|i| TxSummary { issuer: PlayerId(*i), seq: 0, dummy: false }).collect(),
        }
    }

    fn trace(events: Vec<TraceEvent>) -> Trace {
        let mut t = Trace::default();
        for e in events {
            t.record(0, e);
        }
        t.record(0, TraceEvent::End { reason: "target_reached".into() });
        t
    }

    #[test]
    fn clean_trace_passes() {
        let t = trace(vec![
            header(era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 0), &[]),
            commit(1, 0, "a", &[1, 2, 3]),
            commit(2, 0, "a", &[1, 2, 3]),
        ]);
        let r = audit(&t);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn divergence_names_both_records() {
        let t = trace(vec![
            header(era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 0), &[]),
            commit(1, 0, "a", &[1, 2, 3]),
            commit(2, 0, "b", &[1, 2, 3]),
        ]);
        let v = audit(&t);
        let s = v.get(SAFETY).unwrap();
        assert!(!s.passed);
        assert_eq!(s.counterexample, vec![1, 2]);
        assert!(s.detail.contains("epoch 0"));
    }

    #[test]
    fn deviator_divergence_is_ignored() {
        let t = trace(vec![
            header(era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 0), &[3]),
            commit(1, 0, "a", &[1, 2, 3]),
            commit(3, 0, "b", &[1, 2, 3]),
        ]);
        assert!(audit(&t).get(SAFETY).unwrap().passed);
    }

    #[test]
    fn skewed_batch_fails_both_fairness_checks() {
        let t = trace(vec![
            header(era(&[1, 2, 3], &["2/5", "2/5", "1/5"], 5, 0), &[]),
            commit(1, 0, "a", &[1, 1, 2, 2, 3]),
            commit(1, 1, "b", &[1, 1, 2, 3, 3]),
        ]);
        let r = audit(&t);
        assert!(!r.get(EPOCH_FAIRNESS).unwrap().passed);
        assert_eq!(r.get(EPOCH_FAIRNESS).unwrap().counterexample, vec![2]);
        assert!(!r.get(R_FAIRNESS).unwrap().passed);
    }

    #[test]
    fn eras_split_the_ledger() {
        let t = trace(vec![
            header(era(&[1, 2, 3, 4], &["1/4", "1/4", "1/4", "1/4"], 4, 0), &[4]),
            commit(1, 0, "a", &[1, 2, 3, 4]),
            TraceEvent::NewConfig {
                config_id: 1,
                era: era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 1),
                closed: vec![0],
                removed: vec![PlayerId(4)],
                reduced: vec![],
                relays: vec![],
            },
            commit(1, 1, "b", &[1, 2, 3]),
        ]);
        assert!(audit(&t).passed());
    }

    #[test]
    fn sanctioning_a_follower_fails_detection() {
        let t = trace(vec![
            header(era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 0), &[3]),
            TraceEvent::Detection {
                instance: crate::types::InstanceId::new(0, crate::types::Round::One),
                accused: vec![(PlayerId(2), "non_delivery".into())],
            },
        ]);
        let d = audit(&t);
        assert!(!d.get(DETECTION).unwrap().passed);
        assert_eq!(d.get(DETECTION).unwrap().counterexample, vec![1]);
    }

    #[test]
    fn accusing_a_late_player_is_not_a_false_positive() {
        let inst = crate::types::InstanceId::new(0, crate::types::Round::One);
        let accuse = || TraceEvent::Detection { instance: inst, accused: vec![(PlayerId(2), "passive".into())] };
        let h = || header(era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 0), &[]);
        let late = || TraceEvent::Late { node: PlayerId(2), instance: inst };
        assert!(audit(&trace(vec![h(), late(), accuse()])).get(DETECTION).unwrap().passed);
        assert!(!audit(&trace(vec![h(), accuse(), late()])).get(DETECTION).unwrap().passed);
    }

    #[test]
    fn timeout_fails_progress() {
        let mut t = Trace::default();
        t.record(0, header(era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 0), &[]));
        t.record(0, TraceEvent::End { reason: "timeout".into() });
        assert!(!audit(&t).get(PROGRESS).unwrap().passed);
    }

    #[test]
    fn rationality_compares_prefix_shares() {
        let honest = trace(vec![
            header(era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 0), &[]),
            commit(1, 0, "a", &[1, 2, 3]),
            commit(1, 1, "b", &[1, 2, 3]),
        ]);
        let worse = trace(vec![
            header(era(&[1, 2, 3], &["1/3", "1/3", "1/3"], 3, 0), &[3]),
            commit(1, 0, "a", &[1, 2, 3]),
            commit(1, 1, "b", &[1, 2, 2]),
        ]);
        assert_eq!(committed_ratio(&honest, PlayerId(3), 6), Some(Rational::new(1, 3)));
        assert!(rational_outcome(&worse, &honest, PlayerId(3), 6).passed);
        assert!(!rational_outcome(&honest, &worse, PlayerId(3), 6).passed);
        assert!(!rational_outcome(&worse, &honest, PlayerId(3), 7).passed);
    }
}
