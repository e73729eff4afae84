//! Third-party checks: proof verification from evidence alone, summary
//! comparison, channel transcript audits and claim tallies.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{Digest, HashKind, PublicKey};
use crate::ledger::{Block, ChainView, Genesis, GenesisFile, Transaction, TxId};
use crate::outqueue::{PartialTree, QueueSummary};
use crate::owac::{conn_parties, Confirmation, Frame, OwacMessage, OMITTED};
use crate::proposal::{verify_proposal, Invalid, SelectionPolicy};
use crate::report::{Evidence, Rule, ViolationReport};

/// Public parameters a verifier needs besides the evidence itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyContext {
    pub genesis: Genesis,
    pub grace_period: u64,
    pub policy: SelectionPolicy,
}

impl VerifyContext {
    pub fn hash(&self) -> HashKind {
        self.genesis.hash
    }
}

/// Serializable [`VerifyContext`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextFile {
    pub genesis: GenesisFile,
    pub grace_period: u64,
    pub policy: SelectionPolicy,
}

impl From<&VerifyContext> for ContextFile {
    fn from(c: &VerifyContext) -> Self {
        Self {
            genesis: GenesisFile::from(&c.genesis),
            grace_period: c.grace_period,
            policy: c.policy,
        }
    }
}

impl TryFrom<&ContextFile> for VerifyContext {
    type Error = String;

    fn try_from(f: &ContextFile) -> Result<Self, Self::Error> {
        if f.grace_period == 0 {
            return Err("grace period must be positive".into());
        }
        Ok(Self {
            genesis: Genesis::try_from(&f.genesis)?,
            grace_period: f.grace_period,
            policy: f.policy,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("summary signature or signer is wrong")]
    BadSummary,
    #[error("summaries are not in sequence")]
    OutOfOrder,
    #[error("disclosure does not match the summary root or is partial")]
    BadDisclosure,
    #[error("blocks do not link the two summaries")]
    BadChain,
    #[error("confirmation or messages do not verify")]
    BadTranscript,
}

/// Checks a proof using only its evidence and the public context.
pub fn verify_proof(report: &ViolationReport, ctx: &VerifyContext) -> bool {
    if !report.is_proof() {
        return false;
    }
    match report.rule {
        Rule::ConflictingMessages | Rule::TooFarAhead | Rule::RulesViolated => {
            crate::owac::verify_proof(report, ctx.grace_period, &crate::node::rules_breach_evident)
        }
        Rule::LostTx | Rule::ReorderedTx => match report.evidence.first() {
            Some(Evidence::Summary(_)) => verify_summary_proof(report, ctx.hash()),
            _ if report.rule == Rule::LostTx => verify_channel_loss(report, ctx),
            _ => false,
        },
        Rule::BadPrefix | Rule::BadOrdering => verify_proposal_proof(report, ctx),
        _ => false,
    }
}

/// Complete disclosure of `s`: its transactions in position order.
fn disclosed(kind: HashKind, s: &QueueSummary, d: &PartialTree) -> Result<Vec<Transaction>, AuditError> {
    let r = d.recombine(kind, &[]).map_err(|_| AuditError::BadDisclosure)?;
    if r.root != s.root || !r.complete {
        return Err(AuditError::BadDisclosure);
    }
    Ok(r.leaves.into_iter().map(|(_, t)| t).collect())
}

/// Checks that `blocks` are heights `from+1..` and hash-link `from_hash` to
/// `to_hash`, using block hashes only.
fn blocks_link(kind: HashKind, from_hash: &Digest, to_hash: &Digest, blocks: &[&Block]) -> bool {
    let mut tip = *from_hash;
    for b in blocks {
        if b.prev_hash != tip {
            return false;
        }
        tip = b.hash(kind);
    }
    tip == *to_hash
}

/// Compares two summaries of the same node. `blocks` are the blocks
/// committed between their chain positions. Returns the broken queue rule,
/// if any, after validating every artifact.
pub fn compare_summaries(
    kind: HashKind,
    (s1, d1): (&QueueSummary, &PartialTree),
    (s2, d2): (&QueueSummary, &PartialTree),
    blocks: &[&Block],
) -> Result<Option<Rule>, AuditError> {
    if s1.node_id != s2.node_id {
        return Err(AuditError::BadSummary);
    }
    if s1.summary_seq >= s2.summary_seq || s1.block_height > s2.block_height {
        return Err(AuditError::OutOfOrder);
    }
    let span = s2.block_height - s1.block_height;
    if blocks.len() as u64 != span
        || blocks
            .iter()
            .enumerate()
            .any(|(i, b)| b.height != s1.block_height + 1 + i as u64)
        || !blocks_link(kind, &s1.block_hash, &s2.block_hash, blocks)
    {
        return Err(AuditError::BadChain);
    }
    let before = disclosed(kind, s1, d1)?;
    let after = disclosed(kind, s2, d2)?;
    if !s1.verify_signature() || !s2.verify_signature() {
        return Err(AuditError::BadSummary);
    }
    let committed: HashSet<TxId> = blocks
        .iter()
        .flat_map(|b| b.txs.iter().map(|t| t.tx.id(kind)))
        .collect();
    let after_ids: Vec<TxId> = after.iter().map(|t| t.id(kind)).collect();
    let after_set: HashSet<TxId> = after_ids.iter().copied().collect();
    let before_ids: Vec<TxId> = before.iter().map(|t| t.id(kind)).collect();
    if before_ids
        .iter()
        .any(|id| !after_set.contains(id) && !committed.contains(id))
    {
        return Ok(Some(Rule::LostTx));
    }
    let before_set: HashSet<TxId> = before_ids.iter().copied().collect();
    let kept_before = before_ids.iter().filter(|id| after_set.contains(id));
    let kept_after = after_ids.iter().filter(|id| before_set.contains(id));
    if !kept_before.eq(kept_after) {
        return Ok(Some(Rule::ReorderedTx));
    }
    Ok(None)
}

fn verify_summary_proof(report: &ViolationReport, kind: HashKind) -> bool {
    let [Evidence::Summary(s1), Evidence::Disclosure(d1), Evidence::Summary(s2), Evidence::Disclosure(d2), rest @ ..] =
        report.evidence.as_slice()
    else {
        return false;
    };
    let Some(blocks) = rest
        .iter()
        .map(|e| match e {
            Evidence::Block(b) => Some(b),
            _ => None,
        })
        .collect::<Option<Vec<&Block>>>()
    else {
        return false;
    };
    s1.node_id == report.accused
        && compare_summaries(kind, (s1, d1), (s2, d2), &blocks) == Ok(Some(report.rule))
}

/// Replays `blocks` from genesis after checking they hash-link to `tip`.
fn replay_to(genesis: &Genesis, blocks: &[Block], height: u64, tip: &Digest) -> Option<ChainView> {
    let refs: Vec<&Block> = blocks.iter().collect();
    if blocks.len() as u64 != height || !blocks_link(genesis.hash, &genesis.hash.zero(), tip, &refs) {
        return None;
    }
    ChainView::replay(genesis, blocks).ok()
}

/// Validates a confirmed channel segment `start..=c` and the full
/// disclosure of the summary carried by `c`. Returns the summary and the
/// ids in the disclosed queue.
fn confirmed_segment(
    kind: HashKind,
    accused: &PublicKey,
    start: Option<&Confirmation>,
    msgs: &[OwacMessage],
    c: &Confirmation,
    disclosure: &PartialTree,
) -> Result<(QueueSummary, HashSet<TxId>), AuditError> {
    let (first, h0) = match start {
        Some(c0) => {
            if c0.conn_id != c.conn_id || c0.confirmed_index >= c.confirmed_index {
                return Err(AuditError::BadTranscript);
            }
            (c0.confirmed_index + 1, c0.conf_hash)
        }
        None => (0, kind.zero()),
    };
    let indices_ok = msgs.len() as i64 == c.confirmed_index - first + 1
        && msgs
            .iter()
            .enumerate()
            .all(|(i, m)| m.index == first + i as i64 && m.conn_id == c.conn_id);
    if !indices_ok {
        return Err(AuditError::BadTranscript);
    }
    if kind.chain_fold(h0, msgs.iter().map(|m| m.value.as_slice())) != c.conf_hash {
        return Err(AuditError::BadTranscript);
    }
    let s = QueueSummary::decode(&c.data_summary).map_err(|_| AuditError::BadSummary)?;
    if s.node_id != *accused {
        return Err(AuditError::BadSummary);
    }
    let (sender, receiver, _) = conn_parties(&c.conn_id).ok_or(AuditError::BadTranscript)?;
    if receiver != *accused {
        return Err(AuditError::BadTranscript);
    }
    let queued = disclosed(kind, &s, disclosure)?
        .iter()
        .map(|t| t.id(kind))
        .collect();
    if !c.verify(accused)
        || start.is_some_and(|c0| !c0.verify(accused))
        || !s.verify_signature()
        || !msgs.iter().all(|m| m.verify(&sender))
    {
        return Err(AuditError::BadTranscript);
    }
    Ok((s, queued))
}

/// First confirmed transaction that is neither queued nor committed. An
/// honest receiver folds only values that passed its validity rules, so
/// validity is not rechecked here.
fn first_lost(
    kind: HashKind,
    msgs: &[OwacMessage],
    queued: &HashSet<TxId>,
    committed: impl Fn(&TxId) -> bool,
) -> Option<TxId> {
    msgs.iter()
        .filter(|m| m.value != OMITTED)
        .filter_map(|m| Transaction::decode(&m.value).ok())
        .map(|tx| tx.id(kind))
        .find(|id| !queued.contains(id) && !committed(id))
}

/// A channel receiver confirmed values whose transactions are neither in
/// the queue it summarized with that confirmation nor committed by the
/// summary's block. `blocks` is the chain from genesis to that block.
/// Returns the first such transaction.
pub fn channel_loss(
    genesis: &Genesis,
    accused: &PublicKey,
    start: Option<&Confirmation>,
    msgs: &[OwacMessage],
    c: &Confirmation,
    disclosure: &PartialTree,
    blocks: &[Block],
) -> Result<Option<TxId>, AuditError> {
    let kind = genesis.hash;
    let (s, queued) = confirmed_segment(kind, accused, start, msgs, c, disclosure)?;
    let view = replay_to(genesis, blocks, s.block_height, &s.block_hash).ok_or(AuditError::BadChain)?;
    Ok(first_lost(kind, msgs, &queued, |id| view.committed.contains_key(id)))
}

fn verify_channel_loss(report: &ViolationReport, ctx: &VerifyContext) -> bool {
    let ev = report.evidence.as_slice();
    let (start, rest) = match ev {
        [Evidence::Confirmation(c0), rest @ ..] => (Some(c0), rest),
        _ => (None, ev),
    };
    let msgs: Vec<OwacMessage> = rest
        .iter()
        .map_while(|e| match e {
            Evidence::Message(m) => Some(m.clone()),
            _ => None,
        })
        .collect();
    let [Evidence::Confirmation(c), Evidence::Disclosure(d), tail @ ..] = &rest[msgs.len()..] else {
        return false;
    };
    let Some(blocks) = tail
        .iter()
        .map(|e| match e {
            Evidence::Block(b) => Some(b.clone()),
            _ => None,
        })
        .collect::<Option<Vec<Block>>>()
    else {
        return false;
    };
    matches!(
        channel_loss(&ctx.genesis, &report.accused, start, &msgs, c, d, &blocks),
        Ok(Some(_))
    )
}

fn verify_proposal_proof(report: &ViolationReport, ctx: &VerifyContext) -> bool {
    let [Evidence::Proposal(sp), rest @ ..] = report.evidence.as_slice() else {
        return false;
    };
    let Some(blocks) = rest
        .iter()
        .map(|e| match e {
            Evidence::Block(b) => Some(b.clone()),
            _ => None,
        })
        .collect::<Option<Vec<Block>>>()
    else {
        return false;
    };
    if sp.proposer != report.accused || sp.height == 0 || !sp.verify_signature() {
        return false;
    }
    let Some(view) = replay_to(&ctx.genesis, &blocks, sp.height - 1, &sp.prev_hash) else {
        return false;
    };
    let p = &sp.proposal;
    let found = match verify_proposal(p, ctx.hash(), &sp.prev_hash, &p.outqueue_root, ctx.policy, &view.state) {
        Ok(()) => return false,
        Err(Invalid::BadOrdering) => Rule::BadOrdering,
        Err(_) => Rule::BadPrefix,
    };
    found == report.rule
}

/// One wire frame or committed block, in the order the auditor saw it. A
/// confirmation carries the disclosure its summary was challenged for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observation {
    Frame {
        from: PublicKey,
        to: PublicKey,
        frame: Frame,
        disclosure: Option<PartialTree>,
    },
    Commit(Block),
}

impl Encode for Observation {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Observation::Frame {
                from,
                to,
                frame,
                disclosure,
            } => w.u8(0).value(from).value(to).value(frame).option(disclosure.as_ref()),
            Observation::Commit(b) => w.u8(1).value(b),
        };
    }
}

impl Decode for Observation {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            0 => Observation::Frame {
                from: r.value()?,
                to: r.value()?,
                frame: r.value()?,
                disclosure: r.option()?,
            },
            1 => Observation::Commit(r.value()?),
            tag => return Err(DecodeError::BadTag { what: "observation", tag }),
        })
    }
}

/// Claim counts per accused node and rule.
pub fn tally_claims(reports: &[ViolationReport]) -> BTreeMap<(PublicKey, Rule), u64> {
    let mut out = BTreeMap::new();
    for r in reports.iter().filter(|r| !r.is_proof()) {
        *out.entry((r.accused, r.rule)).or_insert(0) += 1;
    }
    out
}

/// Sliding-window claim rate: claims against a node per message it sent,
/// over its last `window` messages.
#[derive(Debug, Clone)]
pub struct ClaimWindow {
    pub window: u64,
    pub threshold: f64,
    sent: BTreeMap<PublicKey, u64>,
    stamps: BTreeMap<PublicKey, VecDeque<u64>>,
}

impl Default for ClaimWindow {
    fn default() -> Self {
        Self::new(1000, 0.01)
    }
}

impl ClaimWindow {
    pub fn new(window: u64, threshold: f64) -> Self {
        Self {
            window,
            threshold,
            sent: BTreeMap::new(),
            stamps: BTreeMap::new(),
        }
    }

    pub fn record_message(&mut self, sender: PublicKey) {
        *self.sent.entry(sender).or_insert(0) += 1;
    }

    pub fn record_claim(&mut self, accused: PublicKey) {
        let at = self.sent.get(&accused).copied().unwrap_or(0);
        self.stamps.entry(accused).or_default().push_back(at);
    }

    pub fn rate(&self, node: &PublicKey) -> f64 {
        let sent = self.sent.get(node).copied().unwrap_or(0);
        let floor = sent.saturating_sub(self.window);
        let claims = self
            .stamps
            .get(node)
            .map_or(0, |s| s.iter().filter(|&&at| at >= floor).count());
        claims as f64 / sent.clamp(1, self.window) as f64
    }

    pub fn flagged(&self) -> Vec<PublicKey> {
        self.stamps
            .keys()
            .filter(|n| self.rate(n) > self.threshold)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone)]
struct ChannelLog {
    sender: PublicKey,
    receiver: PublicKey,
    msgs: BTreeMap<i64, OwacMessage>,
    last: Option<Confirmation>,
}

/// Online auditor fed with every frame on the wire and every committed
/// block. It challenges each summary for a full disclosure, compares it
/// with the node's previous one and checks each confirmed channel segment.
#[derive(Debug, Clone)]
pub struct Auditor {
    id: PublicKey,
    genesis: Genesis,
    view: ChainView,
    chain: Vec<Block>,
    latest: BTreeMap<PublicKey, (QueueSummary, PartialTree)>,
    channels: BTreeMap<Vec<u8>, ChannelLog>,
    proved: BTreeSet<(PublicKey, Rule)>,
    reports: Vec<ViolationReport>,
}

impl Auditor {
    pub fn new(id: PublicKey, genesis: Genesis) -> Self {
        Self {
            id,
            view: ChainView::genesis(&genesis),
            chain: Vec::new(),
            genesis,
            latest: BTreeMap::new(),
            channels: BTreeMap::new(),
            proved: BTreeSet::new(),
            reports: Vec::new(),
        }
    }

    pub fn id(&self) -> PublicKey {
        self.id
    }

    pub fn take_reports(&mut self) -> Vec<ViolationReport> {
        std::mem::take(&mut self.reports)
    }

    /// Follows the committed chain.
    pub fn observe_commit(&mut self, block: &Block) -> Result<(), crate::ledger::ChainError> {
        self.view.extend(self.genesis.hash, block)?;
        self.chain.push(block.clone());
        Ok(())
    }

    pub fn observe(&mut self, o: &Observation) -> Result<(), crate::ledger::ChainError> {
        match o {
            Observation::Frame {
                from,
                to,
                frame: Frame::Message(m),
                ..
            } => self.observe_message(*from, *to, m),
            Observation::Frame {
                from,
                to,
                frame: Frame::Confirmation(c),
                disclosure,
            } => self.observe_confirmation(*to, *from, c, disclosure.as_ref()),
            Observation::Commit(b) => self.observe_commit(b)?,
        }
        Ok(())
    }

    /// Audits a stored transcript from scratch.
    pub fn replay(
        id: PublicKey,
        genesis: Genesis,
        transcript: &[Observation],
    ) -> Result<Vec<ViolationReport>, crate::ledger::ChainError> {
        let mut a = Self::new(id, genesis);
        for o in transcript {
            a.observe(o)?;
        }
        Ok(a.reports)
    }

    fn log(&mut self, m_conn: &[u8], sender: PublicKey, receiver: PublicKey) -> &mut ChannelLog {
        self.channels
            .entry(m_conn.to_vec())
            .or_insert_with(|| ChannelLog {
                sender,
                receiver,
                msgs: BTreeMap::new(),
                last: None,
            })
    }

    /// Records a message as sent. The first validly signed copy of each
    /// index is kept; a different second copy proves equivocation.
    pub fn observe_message(&mut self, sender: PublicKey, receiver: PublicKey, m: &OwacMessage) {
        if !m.verify(&sender) {
            return;
        }
        let log = self.log(&m.conn_id, sender, receiver);
        if log.sender != sender || log.receiver != receiver {
            return;
        }
        let floor = log.last.as_ref().map_or(-1, |c| c.confirmed_index);
        if m.index <= floor {
            return;
        }
        let first = log.msgs.entry(m.index).or_insert_with(|| m.clone()).clone();
        if first != *m {
            self.prove(
                Rule::ConflictingMessages,
                sender,
                vec![Evidence::Message(first), Evidence::Message(m.clone())],
            );
        }
    }

    fn prove(&mut self, rule: Rule, accused: PublicKey, evidence: Vec<Evidence>) {
        if self.proved.insert((accused, rule)) {
            self.reports
                .push(ViolationReport::proof(rule, self.id, accused, evidence));
        }
    }

    /// Processes a confirmation sent by `receiver` on the channel from
    /// `sender`, with the disclosure obtained by challenging its summary.
    pub fn observe_confirmation(
        &mut self,
        sender: PublicKey,
        receiver: PublicKey,
        c: &Confirmation,
        disclosure: Option<&PartialTree>,
    ) {
        let chain = std::mem::take(&mut self.chain);
        self.check_confirmation(sender, receiver, c, disclosure, &chain);
        self.chain = chain;
    }

    fn check_confirmation(
        &mut self,
        sender: PublicKey,
        receiver: PublicKey,
        c: &Confirmation,
        disclosure: Option<&PartialTree>,
        chain: &[Block],
    ) {
        let kind = self.genesis.hash;
        if !c.verify(&receiver) {
            return;
        }
        let Ok(s) = QueueSummary::decode(&c.data_summary) else {
            return;
        };
        let Some(d) = disclosure else {
            return;
        };
        if s.node_id != receiver || !s.verify_signature() || disclosed(kind, &s, d).is_err() {
            return;
        }
        if s.block_height as usize > chain.len() {
            return;
        }

        let newer = self
            .latest
            .get(&receiver)
            .map_or(true, |(prev, _)| prev.summary_seq < s.summary_seq);
        if newer {
            if let Some((prev, pd)) = self.latest.get(&receiver).cloned() {
                let blocks: Vec<&Block> = chain[prev.block_height as usize..s.block_height as usize]
                    .iter()
                    .collect();
                if let Ok(Some(rule)) = compare_summaries(kind, (&prev, &pd), (&s, d), &blocks) {
                    let mut ev = vec![
                        Evidence::Summary(prev),
                        Evidence::Disclosure(pd),
                        Evidence::Summary(s.clone()),
                        Evidence::Disclosure(d.clone()),
                    ];
                    ev.extend(blocks.into_iter().cloned().map(Evidence::Block));
                    self.prove(rule, receiver, ev);
                }
            }
            self.latest.insert(receiver, (s.clone(), d.clone()));
        }

        let view = &self.view;
        let Some(log) = self.channels.get_mut(&c.conn_id) else {
            return;
        };
        if log.receiver != receiver || log.sender != sender {
            return;
        }
        let first = log.last.as_ref().map_or(0, |c0| c0.confirmed_index + 1);
        if c.confirmed_index < first {
            return;
        }
        let Some(msgs) = (first..=c.confirmed_index)
            .map(|i| log.msgs.get(&i).cloned())
            .collect::<Option<Vec<OwacMessage>>>()
        else {
            return;
        };
        let start = log.last.clone();
        let Ok((s, queued)) = confirmed_segment(kind, &receiver, start.as_ref(), &msgs, c, d) else {
            return;
        };
        log.msgs = log.msgs.split_off(&(c.confirmed_index + 1));
        log.last = Some(c.clone());
        let committed = |id: &TxId| view.committed.get(id).is_some_and(|h| *h <= s.block_height);
        if first_lost(kind, &msgs, &queued, committed).is_some() {
            let blocks = &chain[..s.block_height as usize];
            let mut ev: Vec<Evidence> = start.into_iter().map(Evidence::Confirmation).collect();
            ev.extend(msgs.into_iter().map(Evidence::Message));
            ev.push(Evidence::Confirmation(c.clone()));
            ev.push(Evidence::Disclosure(d.clone()));
            ev.extend(blocks.iter().cloned().map(Evidence::Block));
            self.prove(Rule::LostTx, receiver, ev);
        }
    }
}
