//! Deterministic discrete-event simulator: FIFO pipes with seeded latency,
//! round-robin mock consensus, an online auditor and a catalog of scripted
//! misbehavior.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{Auditor, ClaimWindow, Observation, VerifyContext};
use crate::codec::{Decode, Writer};
use crate::crypto::{Digest, HashKind, Keypair, PublicKey};
use crate::ledger::{Block, Disposition, Genesis, Transaction, TxId};
use crate::node::{Node, NodeConfig, NodeEvent};
use crate::outqueue::QueueSummary;
use crate::owac::{Frame, DEFAULT_BATCH_SIZE, DEFAULT_GRACE_PERIOD};
use crate::proposal::SelectionPolicy;
use crate::report::{ReportKind, Rule, ViolationReport};

pub const SCENARIO_VERSION: u32 = 1;
const GENESIS_BALANCE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineBehavior {
    /// Drops a transaction received on a channel after confirming it.
    DropTx,
    /// Swaps two summarized queue entries.
    ReorderQueue,
    /// Leaves a gap in its channel indices.
    SkipChannelIndex,
    /// Sends one message twice.
    DuplicateMessage,
    /// Signs two different messages for one index.
    Equivocate,
    /// Signs a confirmation over the wrong hash.
    ForgeConfHash,
    /// Ignores flow control once.
    ExceedGrace,
    /// Proposes a selection with a gap in the queue prefix.
    NonPrefixProposal,
    /// Proposes a valid selection in a non-canonical order.
    ManipulatedOrdering,
    /// Adds its own transaction behind a foreign one before proposing.
    FrontRunInject,
    /// Stops processing a channel once it carries a blacklisted spender.
    SilentCensor,
    BadMessageSignature,
    WrongConnId,
    BadConfSignature,
    WrongConfConnId,
    ReplayConfirmation,
    ConfirmUnsent,
    AckRegression,
    BadAck,
    /// Forwards a transaction that fails validation.
    BreakRules,
}

impl ByzantineBehavior {
    pub const ALL: [ByzantineBehavior; 20] = [
        Self::DropTx,
        Self::ReorderQueue,
        Self::SkipChannelIndex,
        Self::DuplicateMessage,
        Self::Equivocate,
        Self::ForgeConfHash,
        Self::ExceedGrace,
        Self::NonPrefixProposal,
        Self::ManipulatedOrdering,
        Self::FrontRunInject,
        Self::SilentCensor,
        Self::BadMessageSignature,
        Self::WrongConnId,
        Self::BadConfSignature,
        Self::WrongConfConnId,
        Self::ReplayConfirmation,
        Self::ConfirmUnsent,
        Self::AckRegression,
        Self::BadAck,
        Self::BreakRules,
    ];

    /// The report an honest party files against this behavior. Injection
    /// is not detectable; its effect is measured statistically instead.
    pub fn expected_detection(self) -> Option<(Rule, ReportKind)> {
        use ReportKind::{Claim, Proof};
        Some(match self {
            Self::DropTx => (Rule::LostTx, Proof),
            Self::ReorderQueue => (Rule::ReorderedTx, Proof),
            Self::SkipChannelIndex => (Rule::SkippedMessage, Claim),
            Self::DuplicateMessage => (Rule::DuplicateMessage, Claim),
            Self::Equivocate => (Rule::ConflictingMessages, Proof),
            Self::ForgeConfHash => (Rule::IncorrectHashConfirmation, Claim),
            Self::ExceedGrace => (Rule::TooFarAhead, Proof),
            Self::NonPrefixProposal => (Rule::BadPrefix, Proof),
            Self::ManipulatedOrdering => (Rule::BadOrdering, Proof),
            Self::FrontRunInject => return None,
            Self::SilentCensor => (Rule::ChannelStall, Claim),
            Self::BadMessageSignature | Self::BadConfSignature => (Rule::InvalidSignature, Claim),
            Self::WrongConnId | Self::WrongConfConnId => (Rule::InvalidConnectionId, Claim),
            Self::ReplayConfirmation => (Rule::ConfirmationOutOfSequence, Claim),
            Self::ConfirmUnsent => (Rule::CannotConfirmUnsent, Claim),
            Self::AckRegression => (Rule::AcknowledgementOutOfSequence, Claim),
            Self::BadAck => (Rule::InvalidAcknowledgement, Claim),
            Self::BreakRules => (Rule::RulesViolated, Proof),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByzantineRole {
    pub node: usize,
    pub behavior: ByzantineBehavior,
    /// Peer the behavior is aimed at; any peer when absent.
    #[serde(default)]
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workload {
    pub txs: usize,
    pub accounts: usize,
    /// Time between consecutive submissions.
    pub spacing: u64,
    pub max_amount: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            txs: 100,
            accounts: 8,
            spacing: 10,
            max_amount: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestartFault {
    pub node: usize,
    pub tick: u64,
}

/// Message frames with these channel indices vanish on the pipe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossFault {
    pub from: usize,
    pub to: usize,
    pub indices: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub nodes: usize,
    /// Adjacency lists; full mesh when absent.
    pub topology: Option<Vec<Vec<usize>>>,
    pub hash: HashKind,
    pub grace_period: u64,
    pub batch_size: i64,
    pub policy: SelectionPolicy,
    pub tick_interval: u64,
    pub max_latency: u64,
    /// Consensus ticks during which the workload runs.
    pub ticks: u64,
    /// Extra ticks allowed for queues to drain.
    pub drain_ticks: u64,
    pub skip_empty_blocks: bool,
    pub workload: Workload,
    pub byzantine: Vec<ByzantineRole>,
    /// Account indices whose spends are censored.
    pub blacklist: Vec<usize>,
    /// Nodes that censor the blacklist accountably.
    pub censors: Vec<usize>,
    pub restarts: Vec<RestartFault>,
    pub losses: Vec<LossFault>,
    pub forgive_omissions: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            version: SCENARIO_VERSION,
            name: "honest".into(),
            seed: 1,
            nodes: 4,
            topology: None,
            hash: HashKind::default(),
            grace_period: DEFAULT_GRACE_PERIOD,
            batch_size: DEFAULT_BATCH_SIZE,
            policy: SelectionPolicy::default(),
            tick_interval: 100,
            max_latency: 10,
            ticks: 12,
            drain_ticks: 40,
            skip_empty_blocks: true,
            workload: Workload::default(),
            byzantine: Vec::new(),
            blacklist: Vec::new(),
            censors: Vec::new(),
            restarts: Vec::new(),
            losses: Vec::new(),
            forgive_omissions: false,
        }
    }
}

impl Scenario {
    /// The scenario used to demonstrate detection of `b`: four nodes, node 1
    /// misbehaves towards node 0.
    pub fn canonical(b: ByzantineBehavior) -> Self {
        let mut s = Scenario {
            name: format!("{b:?}"),
            seed: 7,
            workload: Workload {
                txs: 40,
                ..Workload::default()
            },
            byzantine: vec![ByzantineRole {
                node: 1,
                behavior: b,
                target: Some(0),
            }],
            ..Scenario::default()
        };
        match b {
            ByzantineBehavior::ExceedGrace => s.grace_period = 4,
            ByzantineBehavior::SilentCensor => {
                s.grace_period = 8;
                s.blacklist = vec![0];
                s.workload.txs = 60;
                s.ticks = 16;
            }
            ByzantineBehavior::FrontRunInject => s.byzantine[0].target = None,
            _ => {}
        }
        s
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.version != SCENARIO_VERSION {
            return bad(format!("unsupported scenario version {}", self.version));
        }
        if self.seed == 0 {
            return bad("seed must be nonzero".into());
        }
        if self.nodes < 2 {
            return bad("at least two nodes are required".into());
        }
        if self.grace_period == 0 || self.batch_size <= 0 {
            return bad("grace period and batch size must be positive".into());
        }
        if self.tick_interval == 0 || self.max_latency == 0 {
            return bad("tick interval and latency must be positive".into());
        }
        if self.workload.accounts < 2 || self.workload.max_amount == 0 {
            return bad("workload needs two accounts and a positive amount".into());
        }
        let in_range = |i: &usize| *i < self.nodes;
        if !self.byzantine.iter().all(|r| in_range(&r.node) && r.target.as_ref().map_or(true, in_range))
            || !self.censors.iter().all(in_range)
            || !self.restarts.iter().all(|r| in_range(&r.node))
            || !self.losses.iter().all(|l| in_range(&l.from) && in_range(&l.to))
        {
            return bad("node index out of range".into());
        }
        if !self.blacklist.iter().all(|a| *a < self.workload.accounts) {
            return bad("blacklisted account out of range".into());
        }
        let adj = self.adjacency();
        if adj.len() != self.nodes {
            return bad("topology must list every node".into());
        }
        for (i, ns) in adj.iter().enumerate() {
            for &j in ns {
                if j >= self.nodes || j == i || !adj[j].contains(&i) {
                    return bad(format!("topology edge {i}-{j} is invalid or one-way"));
                }
            }
        }
        let mut seen = vec![false; self.nodes];
        let mut todo = vec![0];
        seen[0] = true;
        while let Some(i) = todo.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    todo.push(j);
                }
            }
        }
        if seen.contains(&false) {
            return bad("topology is not connected".into());
        }
        Ok(())
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        match &self.topology {
            Some(t) => t.clone(),
            None => (0..self.nodes)
                .map(|i| (0..self.nodes).filter(|&j| j != i).collect())
                .collect(),
        }
    }

    pub fn node_key(i: usize) -> Keypair {
        Keypair::from_label(&format!("node{i}"))
    }

    pub fn account_key(i: usize) -> Keypair {
        Keypair::from_label(&format!("account{i}"))
    }

    pub fn auditor_key() -> Keypair {
        Keypair::from_label("auditor")
    }

    pub fn genesis(&self) -> Genesis {
        let balances = (0..self.workload.accounts)
            .map(|i| (Self::account_key(i).public(), GENESIS_BALANCE))
            .chain((0..self.nodes).map(|i| (Self::node_key(i).public(), GENESIS_BALANCE)))
            .collect();
        Genesis {
            hash: self.hash,
            balances,
        }
    }

    pub fn context(&self) -> VerifyContext {
        VerifyContext {
            genesis: self.genesis(),
            grace_period: self.grace_period,
            policy: self.policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// One line of the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Submit {
        time: u64,
        acceptor: usize,
        tx: String,
        accepted: bool,
        censored: bool,
    },
    Send {
        time: u64,
        from: usize,
        to: usize,
        index: i64,
        last_conf: i64,
    },
    Refused {
        time: u64,
        from: usize,
        to: usize,
        last_sent: i64,
    },
    Confirm {
        time: u64,
        from: usize,
        to: usize,
        index: i64,
        summary_seq: Option<u64>,
    },
    Commit {
        time: u64,
        height: u64,
        proposer: usize,
        hash: String,
        processed: usize,
        rejected: usize,
    },
    RejectProposal {
        time: u64,
        height: u64,
        proposer: usize,
    },
    Restart {
        time: u64,
        node: usize,
    },
    Injected {
        time: u64,
        node: usize,
        injected: String,
        target: String,
    },
    Ignored {
        time: u64,
        node: usize,
        from: usize,
        index: i64,
    },
    Report {
        time: u64,
        kind: &'static str,
        rule: &'static str,
        reporter: String,
        accused: String,
        evidence: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeEnd {
    pub node: usize,
    pub id: String,
    pub height: u64,
    pub tip: String,
    pub queue_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiptRecord {
    pub acceptor: usize,
    pub tx: TxId,
    pub censored: bool,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub scenario: Scenario,
    pub node_ids: Vec<PublicKey>,
    pub events: Vec<TraceEvent>,
    pub chain: Vec<Block>,
    /// Reports from honest nodes and the auditor.
    pub reports: Vec<ViolationReport>,
    pub receipts: Vec<ReceiptRecord>,
    pub injections: Vec<(TxId, TxId)>,
    pub end_states: Vec<NodeEnd>,
    pub messages_sent: u64,
    pub flagged: Vec<PublicKey>,
    /// Everything the auditor observed, for offline re-audit.
    pub transcript: Vec<Observation>,
}

impl Trace {
    pub fn byzantine_nodes(&self) -> BTreeSet<usize> {
        self.scenario.byzantine.iter().map(|r| r.node).collect()
    }

    pub fn honest_ids(&self) -> Vec<PublicKey> {
        let byz = self.byzantine_nodes();
        self.node_ids
            .iter()
            .enumerate()
            .filter(|(i, _)| !byz.contains(i))
            .map(|(_, k)| *k)
            .collect()
    }

    pub fn reports_against(&self, id: &PublicKey) -> Vec<&ViolationReport> {
        self.reports.iter().filter(|r| r.accused == *id).collect()
    }

    pub fn proofs(&self) -> impl Iterator<Item = &ViolationReport> {
        self.reports.iter().filter(|r| r.is_proof())
    }

    /// Line-delimited JSON of every event.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the event lines, committed blocks, reports and
    /// transcript. Two runs of one scenario agree on it bit for bit.
    pub fn digest(&self) -> Digest {
        let mut w = Writer::new();
        w.bytes(self.to_json_lines().as_bytes())
            .list(&self.chain)
            .list(&self.reports)
            .list(&self.transcript);
        HashKind::Sha256.hash(&w.finish())
    }

    /// For each injection whose transaction and target landed in the same
    /// block, whether the injected one was processed first.
    pub fn front_run_outcomes(&self) -> Vec<bool> {
        let kind = self.scenario.hash;
        let mut pos: BTreeMap<TxId, (u64, usize)> = BTreeMap::new();
        for b in &self.chain {
            for (i, t) in b.txs.iter().enumerate() {
                if t.disposition == Disposition::Processed {
                    pos.insert(t.tx.id(kind), (b.height, i));
                }
            }
        }
        self.injections
            .iter()
            .filter_map(|(inj, target)| match (pos.get(inj), pos.get(target)) {
                (Some(a), Some(b)) if a.0 == b.0 => Some(a.1 < b.1),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Event {
    Submit(usize),
    Deliver {
        from: usize,
        to: usize,
        epoch: u64,
        frame: Frame,
    },
    Tick(u64),
}

struct Sim {
    sc: Scenario,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    ids: Vec<PublicKey>,
    index: BTreeMap<PublicKey, usize>,
    byz: BTreeSet<usize>,
    queue: BTreeMap<(u64, usize, u64), Event>,
    seq: u64,
    pipe_last: BTreeMap<(usize, usize), u64>,
    epochs: BTreeMap<(usize, usize), u64>,
    workload: Vec<(usize, Transaction)>,
    auditor: Auditor,
    claims: ClaimWindow,
    chain: Vec<Block>,
    reports: Vec<ViolationReport>,
    events: Vec<TraceEvent>,
    receipts: Vec<ReceiptRecord>,
    injections: Vec<(TxId, TxId)>,
    messages_sent: u64,
    in_flight: usize,
    transcript: Vec<Observation>,
}

/// Runs a scenario to completion.
pub fn run(sc: &Scenario) -> Result<Trace, SimError> {
    sc.validate()?;
    let mut sim = Sim::new(sc.clone());
    sim.main_loop();
    Ok(sim.finish())
}

impl Sim {
    fn new(sc: Scenario) -> Self {
        let genesis = sc.genesis();
        let adj = sc.adjacency();
        let ids: Vec<PublicKey> = (0..sc.nodes).map(|i| Scenario::node_key(i).public()).collect();
        let blacklist: BTreeSet<PublicKey> = sc
            .blacklist
            .iter()
            .map(|a| Scenario::account_key(*a).public())
            .collect();
        let mut nodes: Vec<Node> = (0..sc.nodes)
            .map(|i| {
                let cfg = NodeConfig {
                    grace_period: sc.grace_period,
                    batch_size: sc.batch_size,
                    policy: sc.policy,
                    forgive_omissions: sc.forgive_omissions,
                    blacklist: if sc.censors.contains(&i) {
                        blacklist.clone()
                    } else {
                        BTreeSet::new()
                    },
                    ..NodeConfig::default()
                };
                let peers: Vec<PublicKey> = adj[i].iter().map(|&j| ids[j]).collect();
                Node::new(Scenario::node_key(i), genesis.clone(), cfg, &peers)
            })
            .collect();
        for r in &sc.byzantine {
            nodes[r.node].set_fault(r.behavior, r.target.map(|t| ids[t]), blacklist.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let workload = generate_workload(&sc, &mut rng);
        let mut sim = Sim {
            index: ids.iter().enumerate().map(|(i, k)| (*k, i)).collect(),
            byz: sc.byzantine.iter().map(|r| r.node).collect(),
            auditor: Auditor::new(Scenario::auditor_key().public(), genesis),
            rng,
            nodes,
            ids,
            queue: BTreeMap::new(),
            seq: 0,
            pipe_last: BTreeMap::new(),
            epochs: BTreeMap::new(),
            workload,
            claims: ClaimWindow::default(),
            chain: Vec::new(),
            reports: Vec::new(),
            events: Vec::new(),
            receipts: Vec::new(),
            injections: Vec::new(),
            messages_sent: 0,
            in_flight: 0,
            transcript: Vec::new(),
            sc,
        };
        for j in 0..sim.workload.len() {
            let t = 1 + j as u64 * sim.sc.workload.spacing;
            let acceptor = sim.workload[j].0;
            sim.schedule(t, acceptor, Event::Submit(j));
        }
        let first = sim.sc.tick_interval;
        sim.schedule(first, usize::MAX, Event::Tick(0));
        sim
    }

    fn schedule(&mut self, time: u64, node: usize, e: Event) {
        self.seq += 1;
        self.queue.insert((time, node, self.seq), e);
    }

    fn epoch(&self, a: usize, b: usize) -> u64 {
        self.epochs.get(&(a.min(b), a.max(b))).copied().unwrap_or(0)
    }

    fn main_loop(&mut self) {
        while let Some(((time, _, _), event)) = self.queue.pop_first() {
            match event {
                Event::Submit(j) => self.submit(time, j),
                Event::Deliver {
                    from,
                    to,
                    epoch,
                    frame,
                } => {
                    self.in_flight -= 1;
                    if epoch == self.epoch(from, to) {
                        self.nodes[to].deliver(self.ids[from], frame);
                        self.drain(time, to);
                    }
                }
                Event::Tick(k) => self.tick(time, k),
            }
        }
    }

    fn submit(&mut self, time: u64, j: usize) {
        let (acceptor, tx) = self.workload[j].clone();
        let id = tx.id(self.sc.hash);
        let result = self.nodes[acceptor].accept_tx(tx);
        let censored = result.as_ref().is_ok_and(|r| r.censored());
        if result.is_ok() {
            self.receipts.push(ReceiptRecord {
                acceptor,
                tx: id,
                censored,
            });
        }
        self.events.push(TraceEvent::Submit {
            time,
            acceptor,
            tx: id.0.to_hex(),
            accepted: result.is_ok(),
            censored,
        });
        self.drain(time, acceptor);
    }

    /// Routes a node's outbox onto the pipes and records its events.
    fn drain(&mut self, time: u64, i: usize) {
        for e in self.nodes[i].take_events() {
            match e {
                NodeEvent::Refused { peer, last_sent } => self.events.push(TraceEvent::Refused {
                    time,
                    from: i,
                    to: self.index[&peer],
                    last_sent,
                }),
                NodeEvent::Injected { injected, target } => {
                    self.injections.push((injected, target));
                    self.events.push(TraceEvent::Injected {
                        time,
                        node: i,
                        injected: injected.0.to_hex(),
                        target: target.0.to_hex(),
                    });
                }
                NodeEvent::Ignored { peer, index } => self.events.push(TraceEvent::Ignored {
                    time,
                    node: i,
                    from: self.index[&peer],
                    index,
                }),
                NodeEvent::ConflictingCopy { .. } => {}
            }
        }
        for (peer, frame) in self.nodes[i].take_outbox() {
            let to = self.index[&peer];
            let (from_id, to_id) = (self.ids[i], self.ids[to]);
            match &frame {
                Frame::Message(m) => {
                    self.messages_sent += 1;
                    self.claims.record_message(from_id);
                    self.observe(Observation::Frame {
                        from: from_id,
                        to: to_id,
                        frame: frame.clone(),
                        disclosure: None,
                    });
                    self.events.push(TraceEvent::Send {
                        time,
                        from: i,
                        to,
                        index: m.index,
                        last_conf: m.sender_last_conf,
                    });
                    let lost = self
                        .sc
                        .losses
                        .iter()
                        .any(|l| l.from == i && l.to == to && l.indices.contains(&m.index));
                    if lost {
                        continue;
                    }
                }
                Frame::Confirmation(c) => {
                    let summary = QueueSummary::decode(&c.data_summary).ok();
                    let disclosure = summary
                        .as_ref()
                        .and_then(|s| self.nodes[i].disclosure(s.summary_seq));
                    self.observe(Observation::Frame {
                        from: from_id,
                        to: to_id,
                        frame: frame.clone(),
                        disclosure,
                    });
                    self.events.push(TraceEvent::Confirm {
                        time,
                        from: i,
                        to,
                        index: c.confirmed_index,
                        summary_seq: summary.map(|s| s.summary_seq),
                    });
                }
            }
            let latency = self.rng.gen_range(1..=self.sc.max_latency);
            let last = self.pipe_last.entry((i, to)).or_insert(0);
            let at = (time + latency).max(*last);
            *last = at;
            let epoch = self.epoch(i, to);
            self.in_flight += 1;
            self.schedule(
                at,
                to,
                Event::Deliver {
                    from: i,
                    to,
                    epoch,
                    frame,
                },
            );
        }
    }

    fn tick(&mut self, time: u64, k: u64) {
        let restarts: Vec<usize> = self
            .sc
            .restarts
            .iter()
            .filter(|r| r.tick == k)
            .map(|r| r.node)
            .collect();
        for i in restarts {
            self.nodes[i].restart();
            let peers: Vec<usize> = self.nodes[i].peers().map(|p| self.index[p]).collect();
            for j in peers {
                let e = self.epochs.entry((i.min(j), i.max(j))).or_insert(0);
                *e += 1;
                let e = *e;
                let (pi, pj) = (self.ids[i], self.ids[j]);
                self.nodes[i].reset_link(pj, e);
                self.nodes[j].reset_link(pi, e);
            }
            self.events.push(TraceEvent::Restart { time, node: i });
        }

        for i in 0..self.nodes.len() {
            self.nodes[i].tick();
            self.drain(time, i);
        }

        let n = self.nodes.len();
        let proposer = (k % n as u64) as usize;
        let sp = self.nodes[proposer].propose();
        self.drain(time, proposer);
        let empty = sp.proposal.processed.is_empty() && sp.proposal.rejected.is_empty();
        if !(empty && self.sc.skip_empty_blocks) {
            let mut accepted = true;
            for j in 0..n {
                if j != proposer && !self.byz.contains(&j) && self.nodes[j].vet_proposal(&sp).is_err() {
                    accepted = false;
                }
            }
            if accepted {
                let block = sp.to_block();
                for node in &mut self.nodes {
                    node.commit(&block).expect("every node follows the same chain");
                }
                self.observe(Observation::Commit(block.clone()));
                self.events.push(TraceEvent::Commit {
                    time,
                    height: block.height,
                    proposer,
                    hash: block.hash(self.sc.hash).to_hex(),
                    processed: block.processed().count(),
                    rejected: block.txs.len() - block.processed().count(),
                });
                self.chain.push(block);
            } else {
                self.events.push(TraceEvent::RejectProposal {
                    time,
                    height: sp.height,
                    proposer,
                });
            }
        }
        for i in 0..n {
            self.nodes[i].flush();
            self.drain(time, i);
        }
        self.collect_reports(time);

        let last_submit = self.workload.len().saturating_sub(1) as u64 * self.sc.workload.spacing;
        let submitted = last_submit < time;
        let quiet = submitted
            && self.in_flight == 0
            && self.nodes.iter().all(|n| n.outgoing().is_empty());
        let next = k + 1;
        if next < self.sc.ticks || (next < self.sc.ticks + self.sc.drain_ticks && !quiet) {
            self.schedule(time + self.sc.tick_interval, usize::MAX, Event::Tick(next));
        }
    }

    fn observe(&mut self, o: Observation) {
        self.auditor
            .observe(&o)
            .expect("auditor follows the committed chain");
        self.transcript.push(o);
    }

    fn collect_reports(&mut self, time: u64) {
        let mut fresh = Vec::new();
        for i in 0..self.nodes.len() {
            let reps = self.nodes[i].take_reports();
            if !self.byz.contains(&i) {
                fresh.extend(reps);
            }
        }
        fresh.extend(self.auditor.take_reports());
        for r in fresh {
            if !r.is_proof() {
                self.claims.record_claim(r.accused);
            }
            let rec = r.record(self.sc.hash);
            self.events.push(TraceEvent::Report {
                time,
                kind: rec.kind,
                rule: rec.rule,
                reporter: rec.reporter,
                accused: rec.accused,
                evidence: rec.evidence,
            });
            self.reports.push(r);
        }
    }

    fn finish(self) -> Trace {
        let end_states = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeEnd {
                node: i,
                id: n.id().to_hex(),
                height: n.view().height,
                tip: n.view().tip.to_hex(),
                queue_len: n.outgoing().len(),
            })
            .collect();
        Trace {
            flagged: self.claims.flagged(),
            scenario: self.sc,
            node_ids: self.ids,
            events: self.events,
            chain: self.chain,
            reports: self.reports,
            receipts: self.receipts,
            injections: self.injections,
            end_states,
            messages_sent: self.messages_sent,
            transcript: self.transcript,
        }
    }
}

/// Transfers between workload accounts with per-account consecutive nonces.
/// Each account submits through its home acceptor.
fn generate_workload(sc: &Scenario, rng: &mut ChaCha8Rng) -> Vec<(usize, Transaction)> {
    let w = &sc.workload;
    let keys: Vec<Keypair> = (0..w.accounts).map(Scenario::account_key).collect();
    let mut nonces = vec![0u64; w.accounts];
    let mut out = Vec::with_capacity(w.txs);
    for _ in 0..w.txs {
        let from = rng.gen_range(0..w.accounts);
        let mut to = rng.gen_range(0..w.accounts - 1);
        if to >= from {
            to += 1;
        }
        let amount = rng.gen_range(1..=w.max_amount);
        let tx = Transaction::transfer(&keys[from], keys[to].public(), amount, nonces[from]);
        nonces[from] += 1;
        out.push((from % sc.nodes, tx));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario {
            workload: Workload {
                txs: 30,
                ..Workload::default()
            },
            ..Scenario::default()
        }
    }

    #[test]
    fn honest_nodes_agree_and_stay_silent() {
        let t = run(&small()).unwrap();
        assert!(t.reports.is_empty(), "{:?}", t.reports.iter().map(|r| r.rule).collect::<Vec<_>>());
        let tips: BTreeSet<&String> = t.end_states.iter().map(|e| &e.tip).collect();
        assert_eq!(tips.len(), 1);
        assert!(t.end_states.iter().all(|e| e.queue_len == 0));
        let committed: usize = t.chain.iter().map(|b| b.txs.len()).sum();
        assert_eq!(committed, 30);
    }

    #[test]
    fn replay_is_byte_identical() {
        let a = run(&small()).unwrap().to_json_lines();
        let b = run(&small()).unwrap().to_json_lines();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 2;
        assert_ne!(run(&other).unwrap().to_json_lines(), a);
    }

    #[test]
    fn schema_violations_are_rejected() {
        let mut s = small();
        s.seed = 0;
        assert!(run(&s).is_err());
        let mut s = small();
        s.topology = Some(vec![vec![1], vec![0], vec![3], vec![2]]);
        assert!(matches!(s.validate(), Err(SimError::Invalid(m)) if m.contains("connected")));
        let mut s = small();
        s.byzantine.push(ByzantineRole {
            node: 9,
            behavior: ByzantineBehavior::DropTx,
            target: None,
        });
        assert!(s.validate().is_err());
        let json = r#"{"nodes": 3, "bogus": 1}"#;
        assert!(serde_json::from_str::<Scenario>(json).is_err());
    }

    #[test]
    fn ring_topology_relays_everything() {
        let mut s = small();
        s.nodes = 5;
        s.topology = Some((0..5).map(|i| vec![(i + 4) % 5, (i + 1) % 5]).collect());
        let t = run(&s).unwrap();
        assert!(t.reports.is_empty());
        let committed: usize = t.chain.iter().map(|b| b.txs.len()).sum();
        assert_eq!(committed, 30);
    }

    #[test]
    fn every_behavior_has_a_documented_detection() {
        let undetected: Vec<_> = ByzantineBehavior::ALL
            .into_iter()
            .filter(|b| b.expected_detection().is_none())
            .collect();
        assert_eq!(undetected, vec![ByzantineBehavior::FrontRunInject]);
        assert_eq!(
            ByzantineBehavior::Equivocate.expected_detection(),
            Some((Rule::ConflictingMessages, ReportKind::Proof))
        );
    }

    #[test]
    fn scenario_json_round_trips() {
        let s = Scenario::canonical(ByzantineBehavior::ExceedGrace);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&json).unwrap(), s);
    }
}
