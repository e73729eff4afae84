//! A full node: acceptor, outgoing queue, one channel pair per peer, commit
//! handling and proposer duty.
//!
//! Every transaction a node accepts or receives is appended to its outgoing
//! queue once and forwarded to every peer in queue order, unless it has
//! been committed first.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::{Arc, Mutex};

use crate::codec::{Decode, Encode};
use crate::crypto::{Digest, HashKind, Keypair, PublicKey, Signature};
use crate::ledger::{
    make_basic_check, AdminReport, ChainError, ChainView, Genesis, Reason, State, Transaction,
    TxId, TxKind,
};
use crate::outqueue::{leaf_hash, MembershipProof, MerkleQueue, PartialNode, PartialTree, QueueSnapshot, QueueSummary};
use crate::owac::{
    batch_policy, ChannelConfig, ChannelError, Confirmation, Frame, OwacMessage, OwacReceiver,
    OwacSender, Rules, SendOutcome, DEFAULT_BATCH_SIZE, DEFAULT_GRACE_PERIOD, OMITTED,
};
use crate::proposal::{build_proposal, order_selection, verify_proposal, Invalid, OrderedProposal, SelectionPolicy, SignedProposal};
use crate::report::{Evidence, Rule, ViolationReport};
use crate::simnet::ByzantineBehavior;

pub type Address = PublicKey;

/// Consensus ticks without confirmation progress before a stall is claimed.
pub const STALL_TICKS: u32 = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub grace_period: u64,
    pub batch_size: i64,
    pub policy: SelectionPolicy,
    /// Committed blocks after which channel logs may be discarded.
    pub retention_blocks: u64,
    /// File omission reports for skipped indices instead of claiming.
    pub forgive_omissions: bool,
    /// Spending addresses this node censors (accountably).
    pub blacklist: BTreeSet<Address>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            grace_period: DEFAULT_GRACE_PERIOD,
            batch_size: DEFAULT_BATCH_SIZE,
            policy: SelectionPolicy::default(),
            retention_blocks: 4,
            forgive_omissions: false,
            blacklist: BTreeSet::new(),
        }
    }
}

/// Receipt returned to a client: the transaction with the acceptor's
/// signed receipt attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub tx: Transaction,
}

impl Receipt {
    pub fn tx_id(&self, kind: HashKind) -> TxId {
        self.tx.id(kind)
    }

    pub fn verify(&self) -> bool {
        self.tx.receipt.is_some() && self.tx.receipt_valid()
    }

    pub fn censored(&self) -> bool {
        self.tx.censorship.is_some()
    }
}

/// Digests of transaction encodings that already passed the validity
/// check, shared by all of a node's incoming channels.
pub type CheckedCache = Arc<Mutex<HashSet<Digest>>>;

/// Channel rules: gossip-level validity plus strictly increasing acceptor
/// sequence numbers per acceptor.
#[derive(Debug, Clone, Default)]
pub struct NodeRules {
    last_seq: HashMap<PublicKey, (u64, i64)>,
    checked: CheckedCache,
}

impl NodeRules {
    pub fn with_cache(checked: CheckedCache) -> Self {
        Self {
            last_seq: HashMap::new(),
            checked,
        }
    }
}

impl Rules for NodeRules {
    fn check(&mut self, msgs: &BTreeMap<i64, OwacMessage>, index: i64) -> Result<(), Vec<i64>> {
        let value = &msgs[&index].value;
        let Ok(tx) = Transaction::decode(value) else {
            return Err(vec![index]);
        };
        let digest = HashKind::Sha256.hash(value);
        let known = self.checked.lock().expect("cache lock").contains(&digest);
        if !known {
            if make_basic_check(&tx).is_err() {
                return Err(vec![index]);
            }
            self.checked.lock().expect("cache lock").insert(digest);
        }
        if let Some(r) = &tx.receipt {
            if let Some(&(seq, at)) = self.last_seq.get(&r.acceptor) {
                if r.seq <= seq {
                    return Err(vec![at, index]);
                }
            }
            self.last_seq.insert(r.acceptor, (r.seq, index));
        }
        Ok(())
    }
}

/// Stateless form of [`NodeRules`] for proof verification: one message
/// carrying an invalid transaction, or two (in index order) whose receipts
/// from the same acceptor do not increase.
pub fn rules_breach_evident(msgs: &[&OwacMessage]) -> bool {
    let decode = |m: &OwacMessage| {
        Transaction::decode(&m.value)
            .ok()
            .filter(|t| make_basic_check(t).is_ok())
    };
    match msgs {
        [m] => decode(m).is_none(),
        [a, b] => match (decode(a), decode(b)) {
            (Some(ta), Some(tb)) => match (&ta.receipt, &tb.receipt) {
                (Some(ra), Some(rb)) => ra.acceptor == rb.acceptor && rb.seq <= ra.seq,
                _ => false,
            },
            _ => false,
        },
        _ => false,
    }
}

#[derive(Debug, Clone)]
struct PeerLink {
    sender: OwacSender,
    receiver: OwacReceiver<NodeRules>,
    pending: VecDeque<TxId>,
    refused: bool,
    /// Acknowledgement carried by the last message sent.
    last_ack_sent: i64,
    stall_mark: i64,
    stall_ticks: u32,
}

impl PeerLink {
    fn new(
        me: PublicKey,
        peer: PublicKey,
        session: u64,
        cfg: &NodeConfig,
        kind: HashKind,
        checked: &CheckedCache,
    ) -> Self {
        Self {
            sender: OwacSender::new(ChannelConfig::new(me, peer, session, cfg.grace_period, kind)),
            receiver: OwacReceiver::new(
                ChannelConfig::new(peer, me, session, cfg.grace_period, kind),
                NodeRules::with_cache(checked.clone()),
            ),
            pending: VecDeque::new(),
            refused: false,
            last_ack_sent: -1,
            stall_mark: -1,
            stall_ticks: 0,
        }
    }
}

/// Observable node activity, drained by the simulator for its trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    /// A send to `peer` was refused by flow control.
    Refused { peer: PublicKey, last_sent: i64 },
    /// A duplicate transaction arrived with different metadata; the first
    /// copy is kept.
    ConflictingCopy { id: TxId },
    /// A transaction was injected ahead of `target` (misbehaving proposer).
    Injected { injected: TxId, target: TxId },
    /// Message `index` from `peer` was silently dropped, and with it the
    /// rest of that channel (misbehaving receiver).
    Ignored { peer: PublicKey, index: i64 },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct FaultState {
    pub behavior: Option<ByzantineBehavior>,
    pub target: Option<PublicKey>,
    pub blacklist: BTreeSet<Address>,
    pub fired: u32,
    dropped: HashSet<TxId>,
    ignored: BTreeSet<PublicKey>,
}

impl FaultState {
    fn is(&self, b: ByzantineBehavior) -> bool {
        self.behavior == Some(b)
    }

    fn aims_at(&self, peer: &PublicKey) -> bool {
        self.target.map_or(true, |t| t == *peer)
    }

    /// True the first `limit` times it is asked while `b` is active.
    fn fire(&mut self, b: ByzantineBehavior, limit: u32) -> bool {
        if self.is(b) && self.fired < limit {
            self.fired += 1;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    key: Keypair,
    cfg: NodeConfig,
    kind: HashKind,
    genesis: Genesis,
    chain: Vec<crate::ledger::Block>,
    view: ChainView,
    accepted: Vec<TxId>,
    acceptor_view: State,
    next_acceptor_seq: u64,
    outgoing: MerkleQueue,
    store: HashMap<TxId, Transaction>,
    links: BTreeMap<PublicKey, PeerLink>,
    summary_seq: u64,
    summaries: BTreeMap<u64, (QueueSnapshot, QueueSummary)>,
    receipts: HashMap<TxId, Receipt>,
    session: u64,
    reports: Vec<ViolationReport>,
    events: Vec<NodeEvent>,
    outbox: Vec<(PublicKey, Frame)>,
    checked: CheckedCache,
    pub(crate) fault: FaultState,
}

impl Node {
    pub fn new(key: Keypair, genesis: Genesis, cfg: NodeConfig, peers: &[PublicKey]) -> Self {
        let kind = genesis.hash;
        let me = key.public();
        let checked = CheckedCache::default();
        let links = peers
            .iter()
            .filter(|p| **p != me)
            .map(|p| (*p, PeerLink::new(me, *p, 0, &cfg, kind, &checked)))
            .collect();
        Self {
            view: ChainView::genesis(&genesis),
            acceptor_view: genesis.state(),
            outgoing: MerkleQueue::new(kind),
            key,
            cfg,
            kind,
            genesis,
            chain: Vec::new(),
            accepted: Vec::new(),
            next_acceptor_seq: 0,
            store: HashMap::new(),
            links,
            summary_seq: 0,
            summaries: BTreeMap::new(),
            receipts: HashMap::new(),
            session: 0,
            reports: Vec::new(),
            events: Vec::new(),
            outbox: Vec::new(),
            checked,
            fault: FaultState::default(),
        }
    }

    pub fn id(&self) -> PublicKey {
        self.key.public()
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn chain(&self) -> &[crate::ledger::Block] {
        &self.chain
    }

    pub fn view(&self) -> &ChainView {
        &self.view
    }

    pub fn outgoing(&self) -> &MerkleQueue {
        &self.outgoing
    }

    pub fn accepted_queue(&self) -> &[TxId] {
        &self.accepted
    }

    pub fn peers(&self) -> impl Iterator<Item = &PublicKey> {
        self.links.keys()
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    /// Installs scripted misbehavior. Only the simulator does this.
    pub fn set_fault(
        &mut self,
        behavior: ByzantineBehavior,
        target: Option<PublicKey>,
        blacklist: BTreeSet<Address>,
    ) {
        self.fault = FaultState {
            behavior: Some(behavior),
            target,
            blacklist,
            ..FaultState::default()
        };
    }

    pub fn sender_state(&self, peer: &PublicKey) -> Option<&OwacSender> {
        self.links.get(peer).map(|l| &l.sender)
    }

    pub fn receiver_state(&self, peer: &PublicKey) -> Option<&OwacReceiver<NodeRules>> {
        self.links.get(peer).map(|l| &l.receiver)
    }

    pub fn take_outbox(&mut self) -> Vec<(PublicKey, Frame)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_reports(&mut self) -> Vec<ViolationReport> {
        std::mem::take(&mut self.reports)
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    // ----- client API -----

    /// Validates against committed state plus the accepted queue, issues a
    /// receipt and enqueues. Blacklisted spenders get a censorship mark but
    /// are still enqueued and forwarded.
    pub fn accept_tx(&mut self, mut tx: Transaction) -> Result<Receipt, Reason> {
        tx.receipt = None;
        tx.censorship = None;
        let id = tx.id(self.kind);
        if let Some(r) = self.receipts.get(&id) {
            return Ok(r.clone());
        }
        if self.view.committed.contains_key(&id) || self.store.contains_key(&id) {
            return Err(Reason::BadNonce);
        }
        tx.static_check()?;
        tx.check_state(&self.acceptor_view)?;
        let censored = tx
            .body
            .inputs
            .iter()
            .any(|i| self.cfg.blacklist.contains(&i.address));
        if censored {
            tx.attach_censorship(&self.key, b"blacklisted");
        } else {
            crate::ledger::apply_in_place(&tx, &mut self.acceptor_view);
        }
        tx.attach_receipt(&self.key, self.next_acceptor_seq);
        self.next_acceptor_seq += 1;
        let receipt = Receipt { tx: tx.clone() };
        self.receipts.insert(id, receipt.clone());
        self.accepted.push(id);
        self.enqueue(id, tx);
        self.flush();
        Ok(receipt)
    }

    pub fn query_receipt(&self, id: &TxId) -> Option<&Receipt> {
        self.receipts.get(id)
    }

    pub fn receipts(&self) -> impl Iterator<Item = (&TxId, &Receipt)> {
        self.receipts.iter()
    }

    /// Latest summary this node has issued.
    pub fn query_summary(&self) -> Option<&QueueSummary> {
        self.summaries.values().next_back().map(|(_, s)| s)
    }

    pub fn challenge(&self, summary_seq: u64, position: u64) -> Option<MembershipProof> {
        let (snap, _) = self.summaries.get(&summary_seq)?;
        snap.prove_membership(position).ok()
    }

    /// Full disclosure of the queue behind a retained summary.
    pub fn disclosure(&self, summary_seq: u64) -> Option<PartialTree> {
        self.summaries.get(&summary_seq).map(|(snap, _)| snap.disclose_all())
    }

    fn file_admin(&mut self, report: AdminReport) {
        let tx = Transaction::administrative(report, &self.key);
        // Administrative transactions move no tokens and always validate.
        let _ = self.accept_tx(tx);
    }

    fn enqueue(&mut self, id: TxId, tx: Transaction) {
        if self.outgoing.enqueue(tx.clone()).is_ok() {
            self.store.insert(id, tx);
            for link in self.links.values_mut() {
                link.pending.push_back(id);
            }
        }
    }

    // ----- channels -----

    pub fn deliver(&mut self, from: PublicKey, frame: Frame) {
        match frame {
            Frame::Message(m) => self.on_message(from, m),
            Frame::Confirmation(c) => self.on_confirmation(from, c),
        }
        self.confirm(false);
        self.flush();
    }

    fn on_confirmation(&mut self, from: PublicKey, c: Confirmation) {
        let Some(link) = self.links.get_mut(&from) else {
            return;
        };
        if let Err(rep) = link.sender.on_confirmation(&c) {
            self.reports.push(rep);
        }
    }

    fn on_message(&mut self, from: PublicKey, m: OwacMessage) {
        if self.silently_censors(&from, &m) {
            return;
        }
        let Some(link) = self.links.get_mut(&from) else {
            return;
        };
        let mut result = link.receiver.on_message(&m);
        if let Err(ChannelError::Violation(rep)) = &result {
            if rep.rule == Rule::SkippedMessage && self.cfg.forgive_omissions {
                if let Some((first, last)) = link.receiver.forgive_gap(m.index - 1) {
                    let report = AdminReport::Omission {
                        reporter: self.key.public(),
                        accused: from,
                        conn_id: link.receiver.config().conn_id.clone(),
                        first,
                        last,
                    };
                    result = link.receiver.on_message(&m);
                    self.file_admin(report);
                }
            }
        }
        match result {
            Ok(value) => self.process_value(value),
            Err(ChannelError::Frozen) => {}
            Err(ChannelError::Violation(rep)) => self.reports.push(*rep),
        }
    }

    fn silently_censors(&mut self, from: &PublicKey, m: &OwacMessage) -> bool {
        if !self.fault.is(ByzantineBehavior::SilentCensor) {
            return false;
        }
        if self.fault.ignored.contains(from) {
            return true;
        }
        let hit = Transaction::decode(&m.value).is_ok_and(|tx| {
            tx.body
                .inputs
                .iter()
                .any(|i| self.fault.blacklist.contains(&i.address))
        });
        if hit {
            self.fault.ignored.insert(*from);
            self.events.push(NodeEvent::Ignored {
                peer: *from,
                index: m.index,
            });
        }
        hit
    }

    /// Places a value delivered on a channel into the outgoing queue.
    fn process_value(&mut self, value: Vec<u8>) {
        if value == OMITTED {
            return;
        }
        let Ok(tx) = Transaction::decode(&value) else {
            return;
        };
        let id = tx.id(self.kind);
        if self.view.committed.contains_key(&id) {
            return;
        }
        if let Some(existing) = self.store.get(&id) {
            if *existing != tx {
                self.events.push(NodeEvent::ConflictingCopy { id });
            }
            return;
        }
        if self.fault.dropped.contains(&id) || self.fault.fire(ByzantineBehavior::DropTx, 1) {
            self.fault.dropped.insert(id);
            return;
        }
        self.enqueue(id, tx);
    }

    /// Sends pending values on every channel until flow control refuses.
    pub fn flush(&mut self) {
        let peers: Vec<PublicKey> = self.links.keys().copied().collect();
        for peer in peers {
            self.flush_peer(peer);
        }
    }

    fn flush_peer(&mut self, peer: PublicKey) {
        loop {
            let link = self.links.get_mut(&peer).unwrap();
            while let Some(id) = link.pending.front() {
                if self.store.contains_key(id) {
                    break;
                }
                link.pending.pop_front();
            }
            let Some(id) = link.pending.front().copied() else {
                return;
            };
            let value = self.store[&id].encode();
            if self.fault.aims_at(&peer) && self.fault.fire(ByzantineBehavior::SkipChannelIndex, 1) {
                link.sender.last_sent += 1;
                link.sender.vals_sent.insert(link.sender.last_sent, OMITTED.to_vec());
            }
            match link.sender.send(&self.key, value.clone()) {
                SendOutcome::Sent(m) => {
                    link.pending.pop_front();
                    link.refused = false;
                    self.emit_message(peer, m);
                }
                SendOutcome::Refused => {
                    if self.fault.aims_at(&peer) && self.fault.fire(ByzantineBehavior::ExceedGrace, 1) {
                        let s = &mut link.sender;
                        s.last_sent += 1;
                        s.vals_sent.insert(s.last_sent, value.clone());
                        let m = OwacMessage::sign(&self.key, &s.cfg.conn_id, s.last_sent, value, s.last_conf);
                        link.pending.pop_front();
                        self.outbox.push((peer, Frame::Message(m)));
                        continue;
                    }
                    if !link.refused {
                        link.refused = true;
                        self.events.push(NodeEvent::Refused {
                            peer,
                            last_sent: link.sender.last_sent(),
                        });
                    }
                    return;
                }
            }
        }
    }

    /// Queues a message frame, applying sender-side scripted faults.
    fn emit_message(&mut self, peer: PublicKey, m: OwacMessage) {
        use ByzantineBehavior as B;
        let key = &self.key;
        let aimed = self.fault.aims_at(&peer);
        let prev_ack = {
            let link = self.links.get_mut(&peer).unwrap();
            std::mem::replace(&mut link.last_ack_sent, m.sender_last_conf)
        };
        let resign = |conn: &[u8], index: i64, value: &[u8], ack: i64| {
            OwacMessage::sign(key, conn, index, value.to_vec(), ack)
        };
        let mut frames = Vec::new();
        if aimed && self.fault.fire(B::BadMessageSignature, 1) {
            let mut bad = m.clone();
            bad.signature.0[0] ^= 0x01;
            frames.push(bad);
        }
        if aimed && self.fault.fire(B::WrongConnId, 1) {
            frames.push(resign(b"not-this-channel", m.index, &m.value, m.sender_last_conf));
        }
        if aimed && prev_ack >= 0 && self.fault.fire(B::AckRegression, 1) {
            frames.push(resign(&m.conn_id, m.index, &m.value, -1));
        }
        if aimed && self.fault.fire(B::BadAck, 1) {
            frames.push(resign(&m.conn_id, m.index, &m.value, m.sender_last_conf + 1000));
        }
        frames.push(m.clone());
        if aimed && self.fault.fire(B::DuplicateMessage, 1) {
            frames.push(m.clone());
        }
        if aimed && self.fault.fire(B::Equivocate, 1) {
            frames.push(resign(&m.conn_id, m.index, b"equivocation", m.sender_last_conf));
        }
        if aimed && self.fault.fire(B::BreakRules, 1) {
            let link = self.links.get_mut(&peer).unwrap();
            let mut bogus = Transaction::transfer(&self.key, self.key.public(), 1, u64::MAX);
            bogus.signatures[0] = Signature([0x11; 64]);
            if let SendOutcome::Sent(extra) = link.sender.send(&self.key, bogus.encode()) {
                frames.push(extra);
            }
        }
        self.outbox
            .extend(frames.into_iter().map(|f| (peer, Frame::Message(f))));
    }

    /// Runs the confirmation policy on every incoming channel. `event` marks
    /// a consensus tick.
    pub fn confirm(&mut self, event: bool) {
        let Node {
            key,
            links,
            outgoing,
            summary_seq,
            summaries,
            view,
            cfg,
            fault,
            outbox,
            ..
        } = self;
        for (peer, link) in links.iter_mut() {
            Self::reorder_fault(fault, outgoing, summaries);
            let summarize = || {
                let seq = *summary_seq;
                *summary_seq += 1;
                let s = outgoing.summarize(key, view.height, view.tip, seq);
                summaries.insert(seq, (outgoing.snapshot(), s.clone()));
                s.encode()
            };
            let Some(c) = link
                .receiver
                .maybe_confirm(key, batch_policy(cfg.batch_size, event), summarize)
            else {
                continue;
            };
            outbox.extend(
                confirmation_faults(fault, key, peer, link.receiver.config().hash, c)
                    .into_iter()
                    .map(|c| (*peer, Frame::Confirmation(c))),
            );
        }
    }

    /// Consensus tick: confirm everything outstanding, watch for stalled
    /// channels, and run scheduled queue faults.
    pub fn tick(&mut self) {
        self.confirm(true);
        for (peer, link) in self.links.iter_mut() {
            let s = &link.sender;
            if s.last_sent() > s.last_conf() && s.last_conf() == link.stall_mark {
                link.stall_ticks += 1;
                if link.stall_ticks == STALL_TICKS {
                    self.reports.push(ViolationReport::claim(
                        Rule::ChannelStall,
                        self.key.public(),
                        *peer,
                        Vec::new(),
                    ));
                }
            } else {
                link.stall_mark = s.last_conf();
                link.stall_ticks = 0;
            }
        }
        self.flush();
    }

/// Swaps the two oldest queue entries once both appear in the latest
    /// summary, so the next summary contradicts it.
    fn reorder_fault(
        fault: &mut FaultState,
        outgoing: &mut MerkleQueue,
        summaries: &BTreeMap<u64, (QueueSnapshot, QueueSummary)>,
    ) {
        if !fault.is(ByzantineBehavior::ReorderQueue) || fault.fired >= 3 {
            return;
        }
        let Some((snap, _)) = summaries.values().next_back() else {
            return;
        };
        let kind = outgoing.hash_kind();
        let summarized: HashSet<TxId> = snap
            .entries()
            .iter()
            .map(|(_, t)| t.id(kind))
            .collect();
        let current: Vec<(u64, TxId)> = outgoing.ids().take(2).collect();
        if current.len() == 2 && current.iter().all(|(_, id)| summarized.contains(id)) {
            fault.fired += 1;
            let _ = outgoing.swap_positions(current[0].0, current[1].0);
        }
    }

    // ----- consensus -----

    pub fn propose(&mut self) -> SignedProposal {
        use ByzantineBehavior as B;
        if self.fault.is(B::FrontRunInject) {
            self.inject_front_run();
        }
        let snap = self.outgoing.snapshot();
        let mut p = build_proposal(&snap, self.cfg.policy, &self.view.tip, &self.view.state);
        if snap.len() >= 3 && self.fault.fire(B::NonPrefixProposal, 1) {
            p = skip_second_position(&snap, self.cfg.policy, &self.view.tip, &self.view.state);
        }
        if p.processed.len() >= 2 && self.fault.fire(B::ManipulatedOrdering, 1) {
            let last = p.processed.len() - 1;
            p.processed.swap(0, last);
        }
        SignedProposal::sign(&self.key, self.view.height + 1, self.view.tip, p)
    }

    /// Adds a transaction from this node's own account behind the oldest
    /// foreign transaction it can see.
    fn inject_front_run(&mut self) {
        let me = self.key.public();
        let target = self.outgoing.ids().map(|(_, id)| id).find(|id| {
            let tx = &self.store[id];
            matches!(tx.body.kind, TxKind::Send) && tx.body.inputs.iter().all(|i| i.address != me)
        });
        let Some(target) = target else {
            return;
        };
        let nonce = self.acceptor_view.account(&me).next_nonce;
        let tx = Transaction::transfer(&self.key, me, 1, nonce);
        if let Ok(r) = self.accept_tx(tx) {
            self.events.push(NodeEvent::Injected {
                injected: r.tx_id(self.kind),
                target,
            });
        }
    }

    /// Verifies a proposal for the next height. A proposal that fails the
    /// deterministic checks yields a proof against its proposer.
    pub fn vet_proposal(&mut self, sp: &SignedProposal) -> Result<(), Option<Invalid>> {
        if !sp.verify_signature()
            || sp.height != self.view.height + 1
            || sp.prev_hash != self.view.tip
        {
            return Err(None);
        }
        let p = &sp.proposal;
        if let Err(invalid) = verify_proposal(
            p,
            self.kind,
            &sp.prev_hash,
            &p.outqueue_root,
            self.cfg.policy,
            &self.view.state,
        ) {
            let rule = match invalid {
                Invalid::BadOrdering => Rule::BadOrdering,
                _ => Rule::BadPrefix,
            };
            let mut evidence = vec![Evidence::Proposal(sp.clone())];
            evidence.extend(self.chain.iter().cloned().map(Evidence::Block));
            self.reports.push(ViolationReport::proof(
                rule,
                self.key.public(),
                sp.proposer,
                evidence,
            ));
            return Err(Some(invalid));
        }
        Ok(())
    }

    /// Applies a committed block.
    pub fn commit(&mut self, block: &crate::ledger::Block) -> Result<(), ChainError> {
        self.view.extend(self.kind, block)?;
        self.chain.push(block.clone());
        let mut committed = HashSet::new();
        {
            let mut checked = self.checked.lock().expect("cache lock");
            for t in &block.txs {
                checked.remove(&HashKind::Sha256.hash(&t.tx.encode()));
            }
        }
        for t in &block.txs {
            let id = t.tx.id(self.kind);
            self.outgoing.remove(&id);
            self.store.remove(&id);
            committed.insert(id);
        }
        self.accepted.retain(|id| !committed.contains(id));
        self.rebuild_acceptor_view();
        for t in block.processed() {
            if let TxKind::Administrative(AdminReport::Omission {
                reporter,
                accused,
                conn_id,
                first,
                last,
            }) = &t.body.kind
            {
                if *reporter == self.key.public() {
                    if let Some(link) = self.links.get_mut(accused) {
                        if link.receiver.config().conn_id == *conn_id {
                            link.receiver.release_gap((*first, *last));
                        }
                    }
                }
                if *accused == self.key.public() {
                    if let Some(link) = self.links.get_mut(reporter) {
                        if link.sender.config().conn_id == *conn_id {
                            link.sender.apply_omission(*first, *last);
                        }
                    }
                }
            }
        }
        let horizon = self.cfg.retention_blocks;
        for link in self.links.values_mut() {
            link.receiver.on_commit(block.height, horizon);
            let keep = link.sender.last_conf();
            link.sender.retain_from(keep);
        }
        let height = block.height;
        self.summaries
            .retain(|_, (_, s)| s.block_height + horizon >= height);
        Ok(())
    }

    fn rebuild_acceptor_view(&mut self) {
        let mut state = self.view.state.clone();
        for id in &self.accepted {
            let tx = &self.store[id];
            if tx.check_state(&state).is_ok() {
                crate::ledger::apply_in_place(tx, &mut state);
            }
        }
        self.acceptor_view = state;
    }

    // ----- restarts -----

    /// Records an outage: a new session and an administrative report.
    pub fn restart(&mut self) {
        self.session += 1;
        self.file_admin(AdminReport::Outage {
            node: self.key.public(),
            session: self.session,
        });
    }

    /// Replaces both channels with `peer` by fresh ones for `epoch` and
    /// reschedules the whole outgoing queue on the new sending channel.
    pub fn reset_link(&mut self, peer: PublicKey, epoch: u64) {
        let me = self.key.public();
        let mut link = PeerLink::new(me, peer, epoch, &self.cfg, self.kind, &self.checked);
        link.pending = self.outgoing.ids().map(|(_, id)| id).collect();
        self.links.insert(peer, link);
        // Frames of the old session were lost with it.
        self.outbox.retain(|(to, _)| *to != peer);
    }

    pub fn genesis(&self) -> &Genesis {
        &self.genesis
    }

    pub fn hash_kind(&self) -> HashKind {
        self.kind
    }
}

fn confirmation_faults(
    fault: &mut FaultState,
    key: &Keypair,
    peer: &PublicKey,
    kind: HashKind,
    c: Confirmation,
) -> Vec<Confirmation> {
    use ByzantineBehavior as B;
    if !fault.aims_at(peer) {
        return vec![c];
    }
    let resign = |index: i64, hash: Digest| {
        Confirmation::sign(key, &c.conn_id, index, hash, c.data_summary.clone())
    };
    if fault.fire(B::ForgeConfHash, 1) {
        return vec![resign(c.confirmed_index, kind.hash(b"forged"))];
    }
    if fault.fire(B::BadConfSignature, 1) {
        let mut bad = c.clone();
        bad.signature.0[0] ^= 0x01;
        return vec![bad, c];
    }
    if fault.fire(B::WrongConfConnId, 1) {
        let other = Confirmation::sign(key, b"not-this-channel", c.confirmed_index, c.conf_hash, c.data_summary.clone());
        return vec![other, c];
    }
    if fault.fire(B::ReplayConfirmation, 1) {
        return vec![c.clone(), c];
    }
    if fault.fire(B::ConfirmUnsent, 1) {
        return vec![resign(c.confirmed_index + 100, c.conf_hash), c];
    }
    vec![c]
}

/// A proposal over positions {0, 2, 3, ...}: the second queue entry is
/// withheld behind a pruned digest.
fn skip_second_position(
    snap: &QueueSnapshot,
    policy: SelectionPolicy,
    prev: &Digest,
    state: &State,
) -> OrderedProposal {
    let kind = snap.hash_kind();
    let n = match policy {
        SelectionPolicy::FixedCount(n) => (n as usize).min(snap.len()),
        SelectionPolicy::MaxBytes(_) => snap.len(),
    };
    let shown = (n + 1).min(snap.len());
    let entries = snap.first(shown);
    let skipped = entries[1].0;
    let full = snap.disclose_prefix(shown).expect("in range");
    let nodes = full
        .nodes
        .into_iter()
        .map(|node| match node {
            PartialNode::Leaf {
                position,
                item: crate::outqueue::LeafItem::Tx(tx),
            } if position == skipped => PartialNode::Pruned(leaf_hash(kind, position, &tx)),
            other => other,
        })
        .collect();
    let chosen = entries
        .into_iter()
        .filter(|(p, _)| *p != skipped)
        .map(|(_, t)| t)
        .collect();
    let (processed, rejected) = order_selection(chosen, prev, state);
    OrderedProposal {
        processed,
        rejected,
        disclosure: PartialTree { nodes },
        outqueue_root: snap.root(),
    }
}
