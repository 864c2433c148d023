//! Wires a scenario into nodes, adversaries and the master, and drives the
//! event loop until the target is met.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::adversary::{Adversary, Strategy};
use crate::crypto::KeyRing;
use crate::harness::scenario::{parse_ratio, Scenario, ScenarioError};
use crate::master::{era_info, Master, MasterParams};
use crate::sequencer::{Genesis, Node, NodeParams, Phase};
use crate::simnet::{DeviatorInfo, EventKind, Network, Output, SimTime, Trace, TraceEvent, MS};
use crate::types::{Identity, PlayerId, ProtocolMessage, SignedMessage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndReason {
    TargetReached,
    Halted(String),
    Timeout,
    Quiescent,
}

impl EndReason {
    pub fn label(&self) -> String {
        match self {
            EndReason::TargetReached => "target_reached".into(),
            EndReason::Halted(r) => format!("halted: {r}"),
            EndReason::Timeout => "timeout".into(),
            EndReason::Quiescent => "quiescent".into(),
        }
    }
}

pub struct Run {
    pub scenario: Scenario,
    pub trace: Trace,
    pub end: EndReason,
    pub end_time: SimTime,
    pub nodes: BTreeMap<PlayerId, Node>,
    pub master: Master,
}

struct World {
    net: Network,
    nodes: BTreeMap<PlayerId, Node>,
    adversaries: BTreeMap<PlayerId, Adversary>,
    master: Master,
}

impl World {
    fn apply(&mut self, owner: Identity, outs: Vec<Output>) {
        for o in outs {
            match o {
                Output::Send { to, msg } => self.send(owner, to, msg),
                Output::Timer { at, timer } => self.net.set_timer(owner, at, timer),
                Output::Trace(ev) => self.net.record(ev),
            }
        }
    }

    fn send(&mut self, from: Identity, to: Identity, msg: SignedMessage) {
        let msg = match from.player().and_then(|p| self.adversaries.get_mut(&p).map(|a| (p, a))) {
            Some((p, adv)) => {
                let epoch = self.nodes[&p].current_epoch();
                let kind = msg.body.kind().to_string();
                let result = adv.intercept(epoch, to, msg);
                if let Some(action) = result.action() {
                    self.net.record(TraceEvent::Tampered { from: p, to, kind, action: action.into() });
                }
                match result.message() {
                    Some(m) => m,
                    None => return,
                }
            }
            None => msg,
        };
        self.net.send(from, to, msg);
    }

    fn silenced(&self, p: PlayerId) -> bool {
        self.adversaries.get(&p).is_some_and(|a| a.crashed())
    }

    fn step(&mut self) -> bool {
        let Some(ev) = self.net.pop() else { return false };
        let now = ev.time;
        match ev.kind {
            EventKind::Deliver { from, to, msg } => {
                self.net.record(TraceEvent::Deliver { from, to, kind: msg.body.kind().to_string() });
                let outs = match to {
                    Identity::Player(p) if !self.silenced(p) => match self.nodes.get_mut(&p) {
                        Some(n) => n.on_message(now, msg),
                        None => Vec::new(),
                    },
                    Identity::Master => self.master.on_message(now, msg),
                    _ => Vec::new(),
                };
                self.apply(to, outs);
            }
            EventKind::Timer { owner, timer } => {
                let outs = match owner {
                    Identity::Player(p) if !self.silenced(p) => match self.nodes.get_mut(&p) {
                        Some(n) => n.on_timer(now, timer),
                        None => Vec::new(),
                    },
                    Identity::Master => self.master.on_timer(now, timer),
                    _ => Vec::new(),
                };
                self.apply(owner, outs);
            }
        }
        true
    }
}

/// Honest players still in the committee.
fn watched(s: &Scenario, nodes: &BTreeMap<PlayerId, Node>) -> Vec<PlayerId> {
    nodes.iter().filter(|(p, n)| s.strategy(**p).is_honest() && n.phase != Phase::Removed).map(|(p, _)| *p).collect()
}

fn target_reached(s: &Scenario, nodes: &BTreeMap<PlayerId, Node>) -> bool {
    let watched = watched(s, nodes);
    if watched.is_empty() {
        return false;
    }
    watched.iter().all(|p| {
        let n = &nodes[p];
        let epochs = s.target_epochs.is_none_or(|t| t == 0 || n.last_committed() >= Some(t - 1));
        let txs = s.target_transactions.is_none_or(|t| {
            n.ledger.entries.iter().flat_map(|e| &e.txs).filter(|tx| !tx.is_dummy()).count() as u64 >= t
        });
        epochs && txs
    })
}

pub fn run(scenario: &Scenario) -> Result<Run, ScenarioError> {
    scenario.validate()?;
    let s = scenario;
    let players = s.players();
    let ids = players.iter().map(|p| Identity::Player(*p)).chain([Identity::Master, Identity::Authority]);
    let ring = KeyRing::generate(s.crypto, s.seed, ids);
    let pki = Arc::new(ring.pki.clone());
    let qos = s.initial_qos()?;
    let genesis = Genesis { committee: players.clone(), f: s.f, qos, base: s.base()?, relays: s.initial_relays() };

    let mut nodes = BTreeMap::new();
    let mut adversaries = BTreeMap::new();
    for &p in &players {
        let params = NodeParams {
            pipeline_window: s.pipeline_window,
            delta: s.delta_ms * MS,
            compute_per_tx: s.compute_per_tx(p),
            auto_fill: s.auto_fill,
            ..NodeParams::default()
        };
        let key = ring.key(Identity::Player(p)).clone();
        let mut node = Node::new(p, key.clone(), pki.clone(), params, &genesis);
        let strategy = s.strategy(p);
        if !strategy.is_honest() {
            node.behavior = strategy.behavior();
            adversaries.insert(p, Adversary::new(p, key, strategy));
        }
        nodes.insert(p, node);
    }

    let params = MasterParams {
        delta: s.delta_ms * MS,
        residual_f: s.residual_f,
        punishment: s.punishment,
        alert_exit: s.alert_exit,
        normal_mode: s.mode.mode(),
    };
    let mut master = Master::new(ring.key(Identity::Master).clone(), pki.clone(), params, &genesis);
    for (i, r) in s.qos_requests.iter().enumerate() {
        let body = ProtocolMessage::QosRequest {
            request_id: i as u64 + 1,
            player: PlayerId(r.player),
            ratio: parse_ratio(&r.ratio).expect("validated"),
        };
        let msg = SignedMessage::sign(ring.key(Identity::Authority), Identity::Authority, body);
        master.schedule_request(r.at_ms * MS, msg);
    }

    let mut world = World { net: Network::new(s.sim_config().latency), nodes, adversaries, master };
    world.net.record(TraceEvent::Header {
        scenario: s.name.clone(),
        seed: s.seed,
        n: s.n,
        f: s.f,
        mode: s.mode.label(),
        delta: s.delta_ms * MS,
        era: era_info(&genesis.era()),
        deviators: s
            .strategies
            .iter()
            .filter(|a| a.strategy != Strategy::Honest)
            .map(|a| DeviatorInfo {
                player: PlayerId(a.player),
                strategy: a.strategy.name().into(),
                byzantine: a.strategy.is_byzantine(),
            })
            .collect(),
    });

    let outs = world.master.start(0);
    world.apply(Identity::Master, outs);
    for p in &players {
        let outs = world.nodes.get_mut(p).expect("node").start(0);
        world.apply(Identity::Player(*p), outs);
    }

    let max = s.max_sim_time_ms * MS;
    let end = loop {
        if target_reached(s, &world.nodes) {
            break EndReason::TargetReached;
        }
        if let Some(reason) = world.master.halted.clone() {
            break EndReason::Halted(reason);
        }
        match world.net.peek_time() {
            None => break EndReason::Quiescent,
            Some(t) if t > max => break EndReason::Timeout,
            Some(_) => {
                world.step();
            }
        }
    };
    let end_time = world.net.now();
    world.net.record(TraceEvent::End { reason: end.label() });
    Ok(Run { scenario: s.clone(), trace: world.net.trace, end, end_time, nodes: world.nodes, master: world.master })
}

/// Runs the scenario with a different seed.
pub fn run_with_seed(scenario: &Scenario, seed: u64) -> Result<Run, ScenarioError> {
    let mut s = scenario.clone();
    s.seed = seed;
    run(&s)
}
