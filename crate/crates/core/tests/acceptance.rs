//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Runs without the libtest harness so the verdict lines are always printed.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairledger::crypto::{KeyRing, Scheme};
use fairledger::da2a::{detect, Da2aInstance, Dispute, Mode, RelayAnswers};
use fairledger::harness::audit::{self, removed_players, EPOCH_FAIRNESS, R_FAIRNESS, SAFETY};
use fairledger::harness::report::latencies;
use fairledger::harness::{corpus, run, RunReport, Scenario};
use fairledger::master::closing_state;
use fairledger::simnet::{TraceEvent, MS};
use fairledger::types::{
    epoch_digest, CommitteeHistory, Era, Identity, InstanceId, PlayerId, ProtocolMessage, QosVector, Round,
    SignedMessage, StallReport, StatusEntry, Transaction,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario(name: &str) -> Scenario {
    corpus::get(name).unwrap_or_else(|| panic!("bundled scenario {name}"))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1 ----

fn latency_exact() -> Outcome {
    let honest = run(&scenario("normal-direct")).map_err(|e| e.to_string())?;
    let lat = latencies(&honest.trace);
    check(lat.len() == 5 * 100, || format!("expected 500 samples, got {}", lat.len()))?;
    if let Some(((p, e), l)) = lat.iter().find(|(_, l)| **l != 3 * 20 * MS) {
        return Err(format!("normal mode: {p} epoch {e} took {l}us"));
    }
    let alert = run(&scenario("alert-byzantine-relay")).map_err(|e| e.to_string())?;
    let lagging: Vec<_> = latencies(&alert.trace).into_iter().filter(|((p, _), _)| *p == PlayerId(2)).collect();
    check(lagging.len() == 20, || format!("lagging node committed {} epochs", lagging.len()))?;
    if let Some(((_, e), l)) = lagging.iter().find(|(_, l)| *l != 4 * 20 * MS) {
        return Err(format!("alert mode: p2 epoch {e} took {l}us"));
    }
    Ok("normal mode 60ms on all 500 commits; byzantine-relay alert 80ms on all 20 of p2's commits".into())
}

// ---------------------------------------------------------------- 2 ----

fn qos_mitigation() -> Outcome {
    let rates = |name: &str| -> Result<RunReport, String> {
        let r = run(&scenario(name)).map_err(|e| e.to_string())?;
        Ok(RunReport::from_trace(&r.trace))
    };
    let fast = rates("qos-all-fast")?;
    let slow = rates("qos-slow")?;
    let unadjusted = rates("qos-slow-unadjusted")?;
    let mut detail = Vec::new();
    for p in [PlayerId(1), PlayerId(2)] {
        let (base, got) = (fast.rate(p), slow.rate(p));
        check((got - base).abs() <= 0.05 * base, || format!("{p}: {got:.3} tx/s adjusted vs {base:.3} all-fast"))?;
        detail.push(format!("{p} {got:.2} vs {base:.2} tx/s"));
    }
    // Without adjustment everyone is held to the slow player's pace.
    let slow_rate = unadjusted.rate(PlayerId(3));
    for p in [PlayerId(1), PlayerId(2)] {
        let r = unadjusted.rate(p);
        check((r - slow_rate).abs() <= 0.05 * slow_rate, || format!("unadjusted {p}: {r:.3} vs slow {slow_rate:.3}"))?;
        check(r < 0.6 * fast.rate(p), || format!("unadjusted {p} kept {r:.3} tx/s"))?;
    }
    Ok(format!("{}; unadjusted all at {slow_rate:.2} tx/s", detail.join(", ")))
}

// ---------------------------------------------------------------- 3 ----

fn players(n: u32) -> Vec<PlayerId> {
    (1..=n).map(PlayerId).collect()
}

struct DetectWorld {
    ring: KeyRing,
    n: u32,
    f: u32,
}

impl DetectWorld {
    fn new(n: u32, f: u32) -> Self {
        let ring = KeyRing::generate(Scheme::Keyed, 99, players(n).into_iter().map(Identity::Player));
        DetectWorld { ring, n, f }
    }

    /// The instance the master queries for a dispute: 2f+1 relays excluding both parties.
    fn instance(&self, r: PlayerId, o: PlayerId) -> Da2aInstance {
        Da2aInstance::new(InstanceId::new(7, Round::Two), players(self.n), Mode::Alert, self.f, 0).reinvestigate((r, o))
    }

    fn dispute(&self, inst: &Da2aInstance, r: PlayerId, o: PlayerId) -> Dispute {
        let body = ProtocolMessage::Stall(StallReport { instance: inst.id, missing: vec![o], generation: 0 });
        Dispute { recipient: r, origin: o, report: SignedMessage::sign(self.ring.key(r.into()), r.into(), body) }
    }

    fn answer(&self, inst: &Da2aInstance, relay: PlayerId, r: PlayerId, o: PlayerId, received: bool) -> SignedMessage {
        let body = ProtocolMessage::RelayAnswer { instance: inst.id, about: o, recipient: r, received };
        SignedMessage::sign(self.ring.key(relay.into()), relay.into(), body)
    }

    /// Runs detection for one dispute. `says` gives each relay's answer; `None` is silence.
    fn judge(
        &self,
        r: PlayerId,
        o: PlayerId,
        says: impl Fn(PlayerId) -> Option<bool>,
    ) -> Result<BTreeSet<PlayerId>, String> {
        let inst = self.instance(r, o);
        let d = self.dispute(&inst, r, o);
        let answers: RelayAnswers =
            [((r, o), inst.relays.iter().filter_map(|x| says(*x).map(|y| self.answer(&inst, *x, r, o, y))).collect())]
                .into();
        detect(&inst, &[d], &answers, &self.ring.pki).map(|s| s.players()).map_err(|e| e.to_string())
    }
}

fn subsets(items: &[PlayerId]) -> impl Iterator<Item = BTreeSet<PlayerId>> + '_ {
    (0u32..1 << items.len())
        .map(move |m| items.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, p)| *p).collect())
}

fn detection_exhaustive() -> Result<usize, String> {
    let w = DetectWorld::new(5, 1);
    let all = players(5);
    let mut cases = 0;
    for c in all.clone() {
        let others: Vec<PlayerId> = all.iter().copied().filter(|p| *p != c).collect();
        // Sender withholds from a victim set; relays forward whatever they got.
        for victims in subsets(&others) {
            for v in &victims {
                let inst = w.instance(*v, c);
                let delivered = inst.relays.iter().any(|x| !victims.contains(x));
                if delivered {
                    continue;
                }
                for silent in subsets(&inst.relays) {
                    cases += 1;
                    let got = w.judge(*v, c, |x| (!silent.contains(&x)).then_some(!victims.contains(&x)))?;
                    check(got == [c].into(), || format!("withholding {c} -> {v}: accused {got:?}"))?;
                }
            }
        }
        // Recipient claims a message it got never arrived; every relay saw it.
        for origin in &others {
            cases += 1;
            let got = w.judge(c, *origin, |_| Some(true))?;
            check(got == [c].into(), || format!("lying {c} about {origin}: accused {got:?}"))?;
        }
        // A byzantine relay cannot manufacture a dispute, and unsolicited
        // answers about any pair accuse nobody.
        for r in &others {
            for o in others.iter().filter(|o| *o != r) {
                let inst = w.instance(*r, *o);
                for received in [true, false] {
                    cases += 1;
                    let stray: RelayAnswers = [((*r, *o), vec![w.answer(&inst, c, *r, *o, received)])].into();
                    let got = detect(&inst, &[], &stray, &w.ring.pki).map_err(|e| e.to_string())?;
                    check(got.is_empty(), || format!("stray answer from {c} accused {:?}", got.players()))?;
                }
            }
        }
    }
    Ok(cases)
}

fn detection_randomized(runs: u64) -> Result<(u64, u64), String> {
    let (n, f) = (7u32, 2u32);
    let w = DetectWorld::new(n, f);
    let all = players(n);
    let mut disputes_total = 0;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=f as usize);
        let mut culprits = BTreeSet::new();
        while culprits.len() < k {
            culprits.insert(all[rng.gen_range(0..all.len())]);
        }
        // Per culprit: who it withholds from as a sender, and whom it lies about as a recipient.
        let mut withheld: BTreeMap<PlayerId, BTreeSet<PlayerId>> = BTreeMap::new();
        let mut lies: BTreeMap<PlayerId, BTreeSet<PlayerId>> = BTreeMap::new();
        for c in &culprits {
            withheld.insert(*c, all.iter().copied().filter(|p| p != c && rng.gen_bool(0.5)).collect());
            lies.insert(*c, all.iter().copied().filter(|p| p != c && rng.gen_bool(0.3)).collect());
        }
        let received = |relay: PlayerId, o: PlayerId| withheld.get(&o).is_none_or(|v| !v.contains(&relay));
        let mut disputes = Vec::new();
        for r in &all {
            for o in all.iter().filter(|o| *o != r) {
                let raised = if culprits.contains(r) {
                    lies[r].contains(o)
                } else {
                    let inst = w.instance(*r, *o);
                    !received(*r, *o) && inst.relays.iter().all(|x| culprits.contains(x) || !received(*x, *o))
                };
                if raised {
                    disputes.push((*r, *o));
                }
            }
        }
        for (r, o) in disputes {
            disputes_total += 1;
            let answers: Vec<(PlayerId, u8)> = all.iter().map(|x| (*x, rng.gen_range(0..3u8))).collect();
            let got = w.judge(r, o, |x| {
                if culprits.contains(&x) {
                    match answers.iter().find(|(p, _)| *p == x).map(|(_, a)| *a) {
                        Some(0) => Some(true),
                        Some(1) => Some(false),
                        _ => None,
                    }
                } else {
                    Some(received(x, o))
                }
            })?;
            if let Some(p) = got.iter().find(|p| !culprits.contains(p)) {
                return Err(format!("seed {seed}: dispute {r}<-{o} accused follower {p}, culprits {culprits:?}"));
            }
        }
    }
    Ok((runs, disputes_total))
}

fn detection_accuracy() -> Outcome {
    let cases = detection_exhaustive()?;
    let (runs, disputes) = detection_randomized(10_000)?;
    Ok(format!("{cases} exhaustive n=5 cases exact; {runs} random n=7 runs, {disputes} disputes, 0 false positives"))
}

// ---------------------------------------------------------------- 4 ----

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Held {
    Nothing,
    /// Every batch and every hash but the byzantine player's.
    Partial,
    Full,
}

/// Exhaustive state transfer at n=5, f=1 with p5 byzantine: every combination
/// of what the honest players hold at freeze time, what p5 reports, and which
/// round-3 messages reached whom. Whenever anyone could hold a quorum proof
/// the closing state must contain the epoch with the agreed digest.
fn closing_exhaustive() -> Result<u64, String> {
    let all = players(5);
    let ring = KeyRing::generate(Scheme::Keyed, 3, all.iter().map(|p| Identity::Player(*p)));
    let mut history = CommitteeHistory::default();
    history.push(Era { start_epoch: 0, committee: all.clone(), f: 1, qos: QosVector::uniform(all.clone()), base: 5 });
    let sign = |p: PlayerId, body| SignedMessage::sign(ring.key(p.into()), p.into(), body);
    let txs: Vec<Transaction> = all.iter().map(|p| Transaction::new(*p, 0, vec![p.0 as u8])).collect();
    let digest = epoch_digest(&txs);
    let r1: Vec<_> = txs
        .iter()
        .map(|t| sign(t.issuer, ProtocolMessage::Round1 { config: 0, epoch: 0, batch: vec![t.clone()] }))
        .collect();
    let r2: Vec<_> = all.iter().map(|p| sign(*p, ProtocolMessage::Round2 { config: 0, epoch: 0, digest })).collect();
    let entry = |held: Held| match held {
        Held::Nothing => None,
        Held::Partial => Some(StatusEntry { epoch: 0, batches: r1.clone(), hashes: r2[..4].to_vec() }),
        Held::Full => Some(StatusEntry { epoch: 0, batches: r1.clone(), hashes: r2.clone() }),
    };
    let byz_reports = [
        None,
        Some(StatusEntry { epoch: 0, batches: vec![r1[4].clone()], hashes: vec![r2[4].clone()] }),
        entry(Held::Full),
    ];
    let kinds = [Held::Nothing, Held::Partial, Held::Full];
    let mut patterns = 0u64;
    for code in 0..81u32 {
        let held: Vec<Held> = (0..4).map(|i| kinds[(code / 3u32.pow(i) % 3) as usize]).collect();
        for byz in &byz_reports {
            let entries: Vec<StatusEntry> = held.iter().filter_map(|h| entry(*h)).chain(byz.clone()).collect();
            let refs: Vec<&StatusEntry> = entries.iter().collect();
            let closing = closing_state(&refs, &ring.pki, &history);
            if let Some(c) = closing.iter().find(|c| c.epoch != 0 || c.digest != digest || c.txs != txs) {
                return Err(format!("closed a foreign epoch {} ({held:?})", c.epoch));
            }
            let closed = !closing.is_empty();
            // Round-3 senders: honest players holding every hash, plus p5 which always can.
            let senders: Vec<usize> = (0..4).filter(|i| held[*i] == Held::Full).chain([4]).collect();
            let combos = 1u64 << (4 * senders.len());
            for deliveries in 0..combos {
                patterns += 1;
                let mut counts = [0u32; 5];
                for (k, s) in senders.iter().enumerate() {
                    let mask = (deliveries >> (4 * k)) & 0xf;
                    counts[*s] += 1;
                    let others = (0..5).filter(|t| t != s);
                    for (bit, t) in others.enumerate() {
                        if mask >> bit & 1 == 1 {
                            counts[t] += 1;
                        }
                    }
                }
                let someone_committed = counts.iter().any(|c| *c >= 2);
                if someone_committed && !closed {
                    return Err(format!("epoch committed by some player but not closed: held {held:?}, byz {byz:?}"));
                }
            }
        }
    }
    Ok(patterns)
}

fn safety_catalog() -> Outcome {
    let patterns = closing_exhaustive()?;
    let mut names = Vec::new();
    for s in corpus::load_all().map_err(|e| e.to_string())? {
        if s.strategies.is_empty() && s.qos_requests.is_empty() {
            continue;
        }
        let r = run(&s).map_err(|e| e.to_string())?;
        let v = audit::audit(&r.trace);
        let safety = v.get(SAFETY).expect("safety verdict");
        check(safety.passed, || format!("{}: {} at records {:?}", s.name, safety.detail, safety.counterexample))?;
        names.push(s.name);
    }
    Ok(format!("{patterns} round-3 omission patterns close correctly; safe: {}", names.join(", ")))
}

// ---------------------------------------------------------------- 5 ----

fn fairness_corpus() -> Outcome {
    let mut epochs = 0;
    let all = corpus::load_all().map_err(|e| e.to_string())?;
    for s in &all {
        let r = run(s).map_err(|e| e.to_string())?;
        let v = audit::audit(&r.trace);
        for name in [EPOCH_FAIRNESS, R_FAIRNESS] {
            let x = v.get(name).expect("verdict");
            check(x.passed, || format!("{}: {name}: {} at records {:?}", s.name, x.detail, x.counterexample))?;
        }
        epochs += audit::TraceView::new(&r.trace).ledger().len();
    }
    Ok(format!("{} scenarios, {epochs} committed epochs, exact batch counts and era shares", all.len()))
}

// ---------------------------------------------------------------- 6 ----

fn rationality() -> Outcome {
    const FIRST: usize = 200;
    let mut lines = Vec::new();
    for s in corpus::load_all().map_err(|e| e.to_string())? {
        if s.strategies.len() != 1 || !s.qos_requests.is_empty() {
            continue;
        }
        let deviator = PlayerId(s.strategies[0].player);
        let mut s = s.clone();
        s.target_epochs = s.target_epochs.map(|t| t.max(60));
        let mut baseline = s.clone();
        baseline.strategies.clear();
        let dev = run(&s).map_err(|e| e.to_string())?;
        let base = run(&baseline).map_err(|e| e.to_string())?;
        let v = audit::rational_outcome(&dev.trace, &base.trace, deviator, FIRST);
        check(v.passed, || format!("{}: {}", s.name, v.detail))?;
        if let fairledger::adversary::Strategy::FrameAttempt { target } = &s.strategies[0].strategy {
            let removed = removed_players(&dev.trace);
            check(!removed.contains(target), || format!("{}: target {target} was removed", s.name))?;
        }
        lines.push(format!("{} {}", s.name, v.detail.split(": ").nth(1).unwrap_or_default()));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------- 7 ----

fn message_counts() -> Outcome {
    let n = 5u64;
    let mut detail = Vec::new();
    for (mode, r) in [("\"direct\"", 0u64), ("{ relayed = 1 }", 1), ("{ relayed = 2 }", 2), ("\"alert\"", 3)] {
        let text = format!("name = \"count\"\nn = 5\nf = 1\npipeline_window = 1\ntarget_epochs = 4\nmode = {mode}\n");
        let s = Scenario::from_toml(&text, "count").map_err(|e| e.to_string())?;
        let run = run(&s).map_err(|e| e.to_string())?;
        let mut per_instance: BTreeMap<InstanceId, u64> = BTreeMap::new();
        for rec in run.trace.events() {
            if let TraceEvent::Send { instance: Some(i), .. } = &rec.event {
                *per_instance.entry(*i).or_default() += 1;
            }
        }
        // Epochs 0..=2 have fully finished; the last one may still be in flight when the run stops.
        for e in 0..3 {
            for round in [Round::One, Round::Two, Round::Three] {
                let network = per_instance.get(&InstanceId::new(e, round)).copied().unwrap_or(0);
                // Every broadcaster (the sender, then each relay) also hands its copy to itself.
                let logical = network + (r + 1) * n;
                check(network == (r + 1) * n * (n - 1), || format!("{mode} {e}/{round:?}: {network} network sends"))?;
                check(logical == (r + 1) * n * n, || format!("{mode} {e}/{round:?}: {logical} logical sends"))?;
            }
        }
        detail.push(format!("r={r}: {}", (r + 1) * n * n));
    }
    Ok(format!("per instance at n=5: {}", detail.join(", ")))
}

// ---------------------------------------------------------------- 8 ----

fn determinism() -> Outcome {
    let mut bytes = 0;
    for s in corpus::load_all().map_err(|e| e.to_string())? {
        let a = run(&s).map_err(|e| e.to_string())?;
        let b = run(&s).map_err(|e| e.to_string())?;
        let (ta, tb) = (a.trace.to_ndjson(), b.trace.to_ndjson());
        check(ta == tb, || format!("{}: traces differ", s.name))?;
        let (ra, rb) = (RunReport::from_trace(&a.trace).to_json(), RunReport::from_trace(&b.trace).to_json());
        check(ra == rb, || format!("{}: reports differ", s.name))?;
        bytes += ta.len();
    }
    Ok(format!("every bundled scenario twice, {bytes} trace bytes identical"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("round-count latency", latency_exact),
        ("QoS mitigation", qos_mitigation),
        ("detection accuracy", detection_accuracy),
        ("safety under the adversary catalog", safety_catalog),
        ("epoch fairness", fairness_corpus),
        ("rationality stand-in", rationality),
        ("message-count accounting", message_counts),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({secs:.2}s) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.2}s) {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
