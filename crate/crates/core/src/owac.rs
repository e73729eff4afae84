//! One-way accountable channel.
//!
//! A sender streams signed, indexed values; the receiver folds them into a
//! cumulative hash and periodically returns signed confirmations carrying
//! that hash and a summary of its own state. The sender stops once
//! `grace_period + 1` values are unconfirmed. Every deviation either side
//! can observe is reported as a claim or, when the signed messages alone
//! establish it, as a proof.
//!
//! Handlers are all-or-nothing: on a report the endpoint state is unchanged,
//! except that a receiver freezes after any proof.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{verify, Digest, HashKind, Keypair, PublicKey, Signature};
use crate::report::{Evidence, Rule, ViolationReport};

pub const FRAME_MESSAGE: u8 = 0x01;
pub const FRAME_CONFIRMATION: u8 = 0x02;

/// Value folded in place of indices whose loss was reported on-chain.
pub const OMITTED: &[u8] = b"";

pub const DEFAULT_GRACE_PERIOD: u64 = 64;
pub const DEFAULT_BATCH_SIZE: i64 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelConfig {
    pub grace_period: u64,
    pub conn_id: Vec<u8>,
    pub sender: PublicKey,
    pub receiver: PublicKey,
    pub hash: HashKind,
}

impl ChannelConfig {
    pub fn new(
        sender: PublicKey,
        receiver: PublicKey,
        session: u64,
        grace_period: u64,
        hash: HashKind,
    ) -> Self {
        assert!(grace_period > 0, "grace period must be positive");
        Self {
            grace_period,
            conn_id: conn_id(&sender, &receiver, session),
            sender,
            receiver,
            hash,
        }
    }
}

/// Connection id unique per (sender, receiver, session).
pub fn conn_id(sender: &PublicKey, receiver: &PublicKey, session: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(&sender.0).raw(&receiver.0).u64(session);
    w.finish()
}

/// Inverse of [`conn_id`].
pub fn conn_parties(conn_id: &[u8]) -> Option<(PublicKey, PublicKey, u64)> {
    if conn_id.len() != 72 {
        return None;
    }
    let key = |r: std::ops::Range<usize>| PublicKey(conn_id[r].try_into().expect("32 bytes"));
    let session = u64::from_be_bytes(conn_id[64..].try_into().expect("8 bytes"));
    Some((key(0..32), key(32..64), session))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OwacMessage {
    pub conn_id: Vec<u8>,
    pub index: i64,
    pub value: Vec<u8>,
    pub sender_last_conf: i64,
    pub signature: Signature,
}

impl OwacMessage {
    fn payload(conn_id: &[u8], index: i64, value: &[u8], last_conf: i64) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(FRAME_MESSAGE)
            .bytes(conn_id)
            .i64(index)
            .bytes(value)
            .i64(last_conf);
        w.finish()
    }

    pub fn sign(key: &Keypair, conn_id: &[u8], index: i64, value: Vec<u8>, last_conf: i64) -> Self {
        let signature = key.sign(&Self::payload(conn_id, index, &value, last_conf));
        Self {
            conn_id: conn_id.to_vec(),
            index,
            value,
            sender_last_conf: last_conf,
            signature,
        }
    }

    pub fn verify(&self, sender: &PublicKey) -> bool {
        verify(
            sender,
            &Self::payload(&self.conn_id, self.index, &self.value, self.sender_last_conf),
            &self.signature,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Confirmation {
    pub conn_id: Vec<u8>,
    pub confirmed_index: i64,
    pub conf_hash: Digest,
    pub data_summary: Vec<u8>,
    pub signature: Signature,
}

impl Confirmation {
    fn payload(conn_id: &[u8], index: i64, hash: &Digest, summary: &[u8]) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(FRAME_CONFIRMATION)
            .bytes(conn_id)
            .i64(index)
            .value(hash)
            .bytes(summary);
        w.finish()
    }

    pub fn sign(key: &Keypair, conn_id: &[u8], index: i64, hash: Digest, summary: Vec<u8>) -> Self {
        let signature = key.sign(&Self::payload(conn_id, index, &hash, &summary));
        Self {
            conn_id: conn_id.to_vec(),
            confirmed_index: index,
            conf_hash: hash,
            data_summary: summary,
            signature,
        }
    }

    pub fn verify(&self, receiver: &PublicKey) -> bool {
        verify(
            receiver,
            &Self::payload(
                &self.conn_id,
                self.confirmed_index,
                &self.conf_hash,
                &self.data_summary,
            ),
            &self.signature,
        )
    }
}

/// Wire frame: one tag byte, then the canonical encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Message(OwacMessage),
    Confirmation(Confirmation),
}

impl Encode for Frame {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Frame::Message(m) => w.u8(FRAME_MESSAGE).value(m),
            Frame::Confirmation(c) => w.u8(FRAME_CONFIRMATION).value(c),
        };
    }
}

impl Decode for Frame {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            FRAME_MESSAGE => Ok(Frame::Message(r.value()?)),
            FRAME_CONFIRMATION => Ok(Frame::Confirmation(r.value()?)),
            tag => Err(DecodeError::BadTag { what: "frame", tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SendOutcome {
    Sent(OwacMessage),
    /// Too many values unconfirmed; retry once confirmations catch up.
    Refused,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("channel is frozen after a proven violation")]
    Frozen,
    #[error("{} reported: {}", .0.kind.as_str(), .0.rule)]
    Violation(Box<ViolationReport>),
}

impl ChannelError {
    pub fn report(&self) -> Option<&ViolationReport> {
        match self {
            ChannelError::Violation(r) => Some(r),
            ChannelError::Frozen => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OwacSender {
    pub(crate) cfg: ChannelConfig,
    pub(crate) vals_sent: BTreeMap<i64, Vec<u8>>,
    pub(crate) last_sent: i64,
    pub(crate) last_conf: i64,
    pub(crate) hash_cache: BTreeMap<i64, Digest>,
    pub(crate) confirmations: BTreeMap<i64, Confirmation>,
}

impl OwacSender {
    pub fn new(cfg: ChannelConfig) -> Self {
        let zero = cfg.hash.zero();
        Self {
            cfg,
            vals_sent: BTreeMap::new(),
            last_sent: -1,
            last_conf: -1,
            hash_cache: BTreeMap::from([(-1, zero)]),
            confirmations: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn last_sent(&self) -> i64 {
        self.last_sent
    }

    pub fn last_conf(&self) -> i64 {
        self.last_conf
    }

    pub fn can_send(&self) -> bool {
        self.last_sent <= self.last_conf + self.cfg.grace_period as i64
    }

    pub fn confirmation(&self, index: i64) -> Option<&Confirmation> {
        self.confirmations.get(&index)
    }

    /// Cached fold of the first `k + 1` values, once confirmed.
    pub fn hash_at(&self, k: i64) -> Option<Digest> {
        self.hash_cache.get(&k).copied()
    }

    pub fn send(&mut self, key: &Keypair, v: Vec<u8>) -> SendOutcome {
        if !self.can_send() {
            return SendOutcome::Refused;
        }
        self.last_sent += 1;
        let m = OwacMessage::sign(key, &self.cfg.conn_id, self.last_sent, v.clone(), self.last_conf);
        self.vals_sent.insert(self.last_sent, v);
        SendOutcome::Sent(m)
    }

    fn claim(&self, rule: Rule, c: &Confirmation) -> ViolationReport {
        ViolationReport::claim(
            rule,
            self.cfg.sender,
            self.cfg.receiver,
            vec![Evidence::Confirmation(c.clone())],
        )
    }

    pub fn on_confirmation(&mut self, c: &Confirmation) -> Result<(), ViolationReport> {
        if !c.verify(&self.cfg.receiver) {
            return Err(self.claim(Rule::InvalidSignature, c));
        }
        if c.conn_id != self.cfg.conn_id {
            return Err(self.claim(Rule::InvalidConnectionId, c));
        }
        let k = c.confirmed_index;
        if k <= self.last_conf {
            return Err(self.claim(Rule::ConfirmationOutOfSequence, c));
        }
        if k > self.last_sent {
            return Err(self.claim(Rule::CannotConfirmUnsent, c));
        }
        let mut h = self.hash_cache[&self.last_conf];
        for j in self.last_conf + 1..=k {
            h = self.cfg.hash.chain(&h, &self.vals_sent[&j]);
        }
        // The cached fold is correct whatever the peer claimed, so it is kept.
        self.hash_cache.insert(k, h);
        if c.conf_hash != h {
            return Err(self.claim(Rule::IncorrectHashConfirmation, c));
        }
        self.last_conf = k;
        self.confirmations.insert(k, c.clone());
        Ok(())
    }

    /// Values sent but not yet confirmed, in index order.
    pub fn unconfirmed(&self) -> impl Iterator<Item = (i64, &[u8])> + '_ {
        self.vals_sent
            .range(self.last_conf + 1..)
            .map(|(i, v)| (*i, v.as_slice()))
    }

    /// Substitutes the placeholder for `first..=last` after the receiver's
    /// omission report commits. Returns the values that were replaced.
    pub fn apply_omission(&mut self, first: i64, last: i64) -> Vec<Vec<u8>> {
        if first <= self.last_conf || last > self.last_sent || first > last {
            return Vec::new();
        }
        let lost = (first..=last)
            .filter_map(|i| self.vals_sent.insert(i, OMITTED.to_vec()))
            .collect();
        self.hash_cache.retain(|k, _| *k <= self.last_conf);
        lost
    }

    /// Forgets values and confirmations strictly below `index`; the fold at
    /// `last_conf` is always kept.
    pub fn retain_from(&mut self, index: i64) {
        let index = index.min(self.last_conf);
        self.vals_sent = self.vals_sent.split_off(&index);
        self.confirmations = self.confirmations.split_off(&index);
        let keep = self.last_conf;
        self.hash_cache.retain(|k, _| *k >= keep);
    }
}

/// Validity rules the receiver enforces on each new message.
///
/// `check` sees the message log with the new message already at `index`.
/// On rejection it returns the indices of the messages that together show
/// the breach, and must leave its own state unchanged.
pub trait Rules {
    fn check(&mut self, msgs: &BTreeMap<i64, OwacMessage>, index: i64) -> Result<(), Vec<i64>>;
}

/// Accepts every value.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl Rules for AcceptAll {
    fn check(&mut self, _: &BTreeMap<i64, OwacMessage>, _: i64) -> Result<(), Vec<i64>> {
        Ok(())
    }
}

/// Confirmation policy: `(last_ackd, last_conf, last_rcvd) -> send?`.
pub fn batch_policy(batch_size: i64, event: bool) -> impl Fn(i64, i64, i64) -> bool {
    move |_ackd, conf, rcvd| rcvd > conf && (event || rcvd - conf >= batch_size)
}

#[derive(Debug, Clone)]
pub struct OwacReceiver<R> {
    pub(crate) cfg: ChannelConfig,
    pub(crate) msgs: BTreeMap<i64, OwacMessage>,
    pub(crate) last_rcvd: i64,
    pub(crate) last_conf: i64,
    pub(crate) last_ackd: i64,
    pub(crate) seq_hash: Digest,
    pub(crate) pending_confs: BTreeSet<i64>,
    pub(crate) rules: R,
    frozen: bool,
    held: Option<(i64, i64)>,
    retention: VecDeque<(u64, i64)>,
}

impl<R: Rules> OwacReceiver<R> {
    pub fn new(cfg: ChannelConfig, rules: R) -> Self {
        let zero = cfg.hash.zero();
        Self {
            cfg,
            msgs: BTreeMap::new(),
            last_rcvd: -1,
            last_conf: -1,
            last_ackd: -1,
            seq_hash: zero,
            pending_confs: BTreeSet::new(),
            rules,
            frozen: false,
            held: None,
            retention: VecDeque::new(),
        }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn last_rcvd(&self) -> i64 {
        self.last_rcvd
    }

    pub fn last_conf(&self) -> i64 {
        self.last_conf
    }

    pub fn last_ackd(&self) -> i64 {
        self.last_ackd
    }

    pub fn seq_hash(&self) -> Digest {
        self.seq_hash
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn message(&self, index: i64) -> Option<&OwacMessage> {
        self.msgs.get(&index)
    }

    /// The gap whose omission report has not yet committed, if any.
    pub fn held_gap(&self) -> Option<(i64, i64)> {
        self.held
    }

    fn claim(&self, rule: Rule, m: &OwacMessage) -> ChannelError {
        ChannelError::Violation(Box::new(ViolationReport::claim(
            rule,
            self.cfg.receiver,
            self.cfg.sender,
            vec![Evidence::Message(m.clone())],
        )))
    }

    fn prove(&mut self, rule: Rule, evidence: Vec<OwacMessage>) -> ChannelError {
        self.frozen = true;
        ChannelError::Violation(Box::new(ViolationReport::proof(
            rule,
            self.cfg.receiver,
            self.cfg.sender,
            evidence.into_iter().map(Evidence::Message).collect(),
        )))
    }

    /// Checks `m` and, if it passes, folds it in. Returns the value for the
    /// caller to process.
    pub fn on_message(&mut self, m: &OwacMessage) -> Result<Vec<u8>, ChannelError> {
        if self.frozen {
            return Err(ChannelError::Frozen);
        }
        if !m.verify(&self.cfg.sender) {
            return Err(self.claim(Rule::InvalidSignature, m));
        }
        if m.conn_id != self.cfg.conn_id {
            return Err(self.claim(Rule::InvalidConnectionId, m));
        }

        let k = m.sender_last_conf;
        if k < self.last_ackd {
            return Err(self.claim(Rule::AcknowledgementOutOfSequence, m));
        }
        // One acknowledgement may cover several confirmations; those below
        // it are retired with it.
        let retire_through = (k > self.last_ackd).then_some(k);
        if let Some(k) = retire_through {
            if !self.pending_confs.contains(&k) {
                return Err(self.claim(Rule::InvalidAcknowledgement, m));
            }
        }

        let i = m.index;
        if i > self.last_rcvd + 1 {
            return Err(self.claim(Rule::SkippedMessage, m));
        }
        if i < self.last_rcvd + 1 {
            return Err(match self.msgs.get(&i) {
                Some(stored) if stored != m => {
                    let stored = stored.clone();
                    self.prove(Rule::ConflictingMessages, vec![m.clone(), stored])
                }
                _ => self.claim(Rule::DuplicateMessage, m),
            });
        }

        // The sender's own message shows how far ahead of its confirmations
        // it ran; an honest sender never exceeds grace_period + 1.
        if i as i128 > k as i128 + self.cfg.grace_period as i128 + 1 {
            return Err(self.prove(Rule::TooFarAhead, vec![m.clone()]));
        }

        self.msgs.insert(i, m.clone());
        if let Err(witnesses) = self.rules.check(&self.msgs, i) {
            let evidence: Option<Vec<_>> =
                witnesses.iter().map(|w| self.msgs.get(w).cloned()).collect();
            self.msgs.remove(&i);
            return Err(match evidence {
                Some(ev) if !ev.is_empty() => self.prove(Rule::RulesViolated, ev),
                // A witness has aged out of the log: only a claim remains.
                _ => self.claim(Rule::RulesViolated, m),
            });
        }

        if let Some(k) = retire_through {
            self.pending_confs = self.pending_confs.split_off(&(k + 1));
            self.last_ackd = k;
        }
        self.last_rcvd = i;
        self.seq_hash = self.cfg.hash.chain(&self.seq_hash, &m.value);
        Ok(m.value.clone())
    }

    /// Emits a confirmation when `policy(last_ackd, last_conf, last_rcvd)`
    /// says so. Nothing is emitted while frozen or while a gap is held.
    pub fn maybe_confirm(
        &mut self,
        key: &Keypair,
        policy: impl FnOnce(i64, i64, i64) -> bool,
        summarize: impl FnOnce() -> Vec<u8>,
    ) -> Option<Confirmation> {
        if self.frozen || self.held.is_some() {
            return None;
        }
        if !policy(self.last_ackd, self.last_conf, self.last_rcvd) {
            return None;
        }
        let c = Confirmation::sign(
            key,
            &self.cfg.conn_id,
            self.last_rcvd,
            self.seq_hash,
            summarize(),
        );
        self.last_conf = self.last_rcvd;
        self.pending_confs.insert(self.last_rcvd);
        Some(c)
    }

    /// Skips past indices `last_rcvd + 1 ..= through`, folding the placeholder
    /// for each, and holds confirmations until [`Self::release_gap`].
    pub fn forgive_gap(&mut self, through: i64) -> Option<(i64, i64)> {
        if through <= self.last_rcvd || self.held.is_some() {
            return None;
        }
        let gap = (self.last_rcvd + 1, through);
        for _ in gap.0..=gap.1 {
            self.seq_hash = self.cfg.hash.chain(&self.seq_hash, OMITTED);
        }
        self.last_rcvd = through;
        self.held = Some(gap);
        Some(gap)
    }

    pub fn release_gap(&mut self, gap: (i64, i64)) -> bool {
        if self.held == Some(gap) {
            self.held = None;
            true
        } else {
            false
        }
    }

    /// Records the receive position at a committed height and forgets
    /// messages covered by a block at least `horizon` blocks old.
    pub fn on_commit(&mut self, height: u64, horizon: u64) {
        self.retention.push_back((height, self.last_rcvd));
        while let Some(&(h, idx)) = self.retention.front() {
            if height < h + horizon {
                break;
            }
            self.retention.pop_front();
            self.msgs = self.msgs.split_off(&(idx + 1));
        }
    }

    pub fn rules(&self) -> &R {
        &self.rules
    }
}

/// Checks a channel proof from its evidence alone: the accused's signatures,
/// the channel grace period, and `breach`, which decides whether the given
/// messages (in index order) break the validity rules.
pub fn verify_proof(
    report: &ViolationReport,
    grace_period: u64,
    breach: &dyn Fn(&[&OwacMessage]) -> bool,
) -> bool {
    if !report.is_proof() {
        return false;
    }
    let msgs: Option<Vec<&OwacMessage>> = report
        .evidence
        .iter()
        .map(|e| match e {
            Evidence::Message(m) => Some(m),
            _ => None,
        })
        .collect();
    let Some(msgs) = msgs else {
        return false;
    };
    if msgs.is_empty() || !msgs.iter().all(|m| m.verify(&report.accused)) {
        return false;
    }
    if msgs.iter().any(|m| m.conn_id != msgs[0].conn_id) {
        return false;
    }
    match report.rule {
        Rule::ConflictingMessages => {
            msgs.len() == 2 && msgs[0].index == msgs[1].index && msgs[0] != msgs[1]
        }
        Rule::TooFarAhead => {
            msgs.len() == 1
                && msgs[0].index as i128
                    > msgs[0].sender_last_conf as i128 + grace_period as i128 + 1
        }
        Rule::RulesViolated => {
            msgs.windows(2).all(|w| w[0].index < w[1].index) && breach(&msgs)
        }
        _ => false,
    }
}

impl Encode for OwacMessage {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(&self.conn_id)
            .i64(self.index)
            .bytes(&self.value)
            .i64(self.sender_last_conf)
            .value(&self.signature);
    }
}

impl Decode for OwacMessage {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            conn_id: r.bytes()?,
            index: r.i64()?,
            value: r.bytes()?,
            sender_last_conf: r.i64()?,
            signature: r.value()?,
        })
    }
}

impl Encode for Confirmation {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(&self.conn_id)
            .i64(self.confirmed_index)
            .value(&self.conf_hash)
            .bytes(&self.data_summary)
            .value(&self.signature);
    }
}

impl Decode for Confirmation {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            conn_id: r.bytes()?,
            confirmed_index: r.i64()?,
            conf_hash: r.value()?,
            data_summary: r.bytes()?,
            signature: r.value()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::ReportKind;
    use proptest::prelude::*;

    const KIND: HashKind = HashKind::Ripemd160;

    struct Pair {
        s_key: Keypair,
        r_key: Keypair,
        sender: OwacSender,
        receiver: OwacReceiver<AcceptAll>,
    }

    fn pair(gp: u64) -> Pair {
        let s_key = Keypair::from_label("sender");
        let r_key = Keypair::from_label("receiver");
        let cfg = ChannelConfig::new(s_key.public(), r_key.public(), 0, gp, KIND);
        Pair {
            sender: OwacSender::new(cfg.clone()),
            receiver: OwacReceiver::new(cfg, AcceptAll),
            s_key,
            r_key,
        }
    }

    fn sent(o: SendOutcome) -> OwacMessage {
        match o {
            SendOutcome::Sent(m) => m,
            SendOutcome::Refused => panic!("refused"),
        }
    }

    fn oracle_fold(values: &[&[u8]]) -> Digest {
        let mut h = KIND.zero();
        for v in values {
            let mut pre = h.as_bytes().to_vec();
            pre.extend_from_slice(v);
            h = KIND.hash(&pre);
        }
        h
    }

    fn confirm_now(p: &mut Pair) -> Option<Confirmation> {
        let key = p.r_key.clone();
        p.receiver.maybe_confirm(&key, batch_policy(DEFAULT_BATCH_SIZE, true), Vec::new)
    }

    #[test]
    fn first_send_has_index_zero() {
        let mut p = pair(2);
        let m = sent(p.sender.send(&p.s_key, b"a".to_vec()));
        assert_eq!((m.index, m.sender_last_conf), (0, -1));
    }

    #[test]
    fn grace_boundary() {
        let mut p = pair(2);
        for _ in 0..2 {
            sent(p.sender.send(&p.s_key, b"v".to_vec()));
        }
        assert_eq!(p.sender.last_sent(), 1);
        let m = sent(p.sender.send(&p.s_key, b"v".to_vec()));
        assert_eq!(m.index, 2);
        assert_eq!(p.sender.send(&p.s_key, b"v".to_vec()), SendOutcome::Refused);
        assert_eq!(p.sender.last_sent(), 2);
    }

    #[test]
    fn in_order_messages_fold_like_oracle() {
        let mut p = pair(8);
        let vals: [&[u8]; 3] = [b"x", b"y", b"z"];
        for v in vals {
            let m = sent(p.sender.send(&p.s_key, v.to_vec()));
            assert_eq!(p.receiver.on_message(&m).unwrap(), v.to_vec());
        }
        assert_eq!(p.receiver.seq_hash(), oracle_fold(&vals));
    }

    #[test]
    fn full_confirmation_round_trip() {
        let mut p = pair(8);
        for i in 0..5u8 {
            let m = sent(p.sender.send(&p.s_key, vec![i]));
            p.receiver.on_message(&m).unwrap();
        }
        let c = confirm_now(&mut p).unwrap();
        assert_eq!(p.sender.on_confirmation(&c), Ok(()));
        assert_eq!(p.sender.last_conf(), p.sender.last_sent());
        assert!(confirm_now(&mut p).is_none());
    }

    #[test]
    fn duplicate_confirmation_is_out_of_sequence() {
        let mut p = pair(8);
        let m = sent(p.sender.send(&p.s_key, b"a".to_vec()));
        p.receiver.on_message(&m).unwrap();
        let c = confirm_now(&mut p).unwrap();
        p.sender.on_confirmation(&c).unwrap();
        let err = p.sender.on_confirmation(&c).unwrap_err();
        assert_eq!(err.rule, Rule::ConfirmationOutOfSequence);
        assert_eq!(err.kind, ReportKind::Claim);
    }

    #[test]
    fn reordered_fold_is_incorrect_hash() {
        let mut p = pair(8);
        for v in [b"a", b"b"] {
            sent(p.sender.send(&p.s_key, v.to_vec()));
        }
        let forged = oracle_fold(&[b"b", b"a"]);
        assert_ne!(forged, oracle_fold(&[b"a", b"b"]));
        let c = Confirmation::sign(&p.r_key, &p.sender.cfg.conn_id, 1, forged, vec![]);
        let before = (p.sender.last_conf(), p.sender.confirmations.len());
        let err = p.sender.on_confirmation(&c).unwrap_err();
        assert_eq!(err.rule, Rule::IncorrectHashConfirmation);
        assert_eq!((p.sender.last_conf(), p.sender.confirmations.len()), before);
    }

    #[test]
    fn confirm_unsent_is_claimed() {
        let mut p = pair(8);
        sent(p.sender.send(&p.s_key, b"a".to_vec()));
        let c = Confirmation::sign(&p.r_key, &p.sender.cfg.conn_id, 3, KIND.zero(), vec![]);
        assert_eq!(p.sender.on_confirmation(&c).unwrap_err().rule, Rule::CannotConfirmUnsent);
    }

    #[test]
    fn conflicting_messages_proof_verifies_standalone() {
        let mut p = pair(8);
        let m0 = sent(p.sender.send(&p.s_key, b"a".to_vec()));
        let m1 = sent(p.sender.send(&p.s_key, b"b".to_vec()));
        p.receiver.on_message(&m0).unwrap();
        p.receiver.on_message(&m1).unwrap();
        let evil = OwacMessage::sign(&p.s_key, &m1.conn_id, 1, b"c".to_vec(), -1);
        let err = p.receiver.on_message(&evil).unwrap_err();
        let rep = err.report().unwrap().clone();
        assert_eq!(rep.rule, Rule::ConflictingMessages);
        assert!(verify_proof(&rep, 8, &|_| false));
        assert!(p.receiver.is_frozen());
        assert_eq!(p.receiver.on_message(&m1), Err(ChannelError::Frozen));

        let mut tampered = rep.clone();
        if let Evidence::Message(m) = &mut tampered.evidence[0] {
            m.signature.0[0] ^= 1;
        }
        assert!(!verify_proof(&tampered, 8, &|_| false));
    }

    #[test]
    fn exact_duplicate_is_claim() {
        let mut p = pair(8);
        let m0 = sent(p.sender.send(&p.s_key, b"a".to_vec()));
        p.receiver.on_message(&m0).unwrap();
        let err = p.receiver.on_message(&m0).unwrap_err();
        assert_eq!(err.report().unwrap().rule, Rule::DuplicateMessage);
        assert!(!p.receiver.is_frozen());
    }

    #[test]
    fn skipped_index_is_claim() {
        let mut p = pair(8);
        for _ in 0..2 {
            let m = sent(p.sender.send(&p.s_key, b"a".to_vec()));
            p.receiver.on_message(&m).unwrap();
        }
        let m5 = OwacMessage::sign(&p.s_key, &p.sender.cfg.conn_id, 5, b"z".to_vec(), -1);
        let hash = p.receiver.seq_hash();
        let rep = p.receiver.on_message(&m5).unwrap_err();
        assert_eq!(rep.report().unwrap().rule, Rule::SkippedMessage);
        assert_eq!(p.receiver.last_rcvd(), 1);
        assert_eq!(p.receiver.seq_hash(), hash);
    }

    #[test]
    fn too_far_ahead_boundary() {
        let gp = 3;
        let p = pair(gp);
        let conn = p.sender.cfg.conn_id.clone();
        // Index exactly grace_period + 1 past the acknowledgement is what an
        // honest sender can reach; one more is provable.
        let at = OwacMessage::sign(&p.s_key, &conn, gp as i64, b"v".to_vec(), -1);
        let past = OwacMessage::sign(&p.s_key, &conn, gp as i64 + 1, b"v".to_vec(), -1);
        let mk = |m: &OwacMessage| {
            ViolationReport::proof(
                Rule::TooFarAhead,
                p.r_key.public(),
                p.s_key.public(),
                vec![Evidence::Message(m.clone())],
            )
        };
        assert!(!verify_proof(&mk(&at), gp, &|_| false));
        assert!(verify_proof(&mk(&past), gp, &|_| false));
    }

    #[test]
    fn receiver_detects_too_far_ahead() {
        let mut p = pair(2);
        let conn = p.sender.cfg.conn_id.clone();
        for i in 0..=3 {
            let m = OwacMessage::sign(&p.s_key, &conn, i, vec![i as u8], -1);
            let r = p.receiver.on_message(&m);
            if i < 3 {
                r.unwrap();
            } else {
                let rep = r.unwrap_err().report().unwrap().clone();
                assert_eq!(rep.rule, Rule::TooFarAhead);
                assert!(verify_proof(&rep, 2, &|_| false));
            }
        }
    }

    #[test]
    fn ack_rules() {
        let mut p = pair(8);
        let m0 = sent(p.sender.send(&p.s_key, b"a".to_vec()));
        p.receiver.on_message(&m0).unwrap();
        let c = confirm_now(&mut p).unwrap();
        p.sender.on_confirmation(&c).unwrap();
        // Acknowledging a confirmation that was never issued.
        let bad = OwacMessage::sign(&p.s_key, &m0.conn_id, 1, b"b".to_vec(), 7);
        assert_eq!(
            p.receiver.on_message(&bad).unwrap_err().report().unwrap().rule,
            Rule::InvalidAcknowledgement
        );
        let m1 = sent(p.sender.send(&p.s_key, b"b".to_vec()));
        assert_eq!(m1.sender_last_conf, 0);
        p.receiver.on_message(&m1).unwrap();
        assert_eq!(p.receiver.last_ackd(), 0);
        let regress = OwacMessage::sign(&p.s_key, &m0.conn_id, 2, b"c".to_vec(), -1);
        assert_eq!(
            p.receiver.on_message(&regress).unwrap_err().report().unwrap().rule,
            Rule::AcknowledgementOutOfSequence
        );
    }

    #[test]
    fn one_ack_may_cover_two_confirmations() {
        let mut p = pair(8);
        let mut confs = Vec::new();
        for i in 0..2u8 {
            let m = sent(p.sender.send(&p.s_key, vec![i]));
            p.receiver.on_message(&m).unwrap();
            confs.push(confirm_now(&mut p).unwrap());
        }
        for c in &confs {
            p.sender.on_confirmation(c).unwrap();
        }
        let m = sent(p.sender.send(&p.s_key, vec![9]));
        assert_eq!(m.sender_last_conf, 1);
        p.receiver.on_message(&m).unwrap();
        assert_eq!(p.receiver.last_ackd(), 1);
    }

    #[test]
    fn wrong_conn_id_and_bad_signature() {
        let mut p = pair(8);
        let other = OwacMessage::sign(&p.s_key, b"elsewhere", 0, b"a".to_vec(), -1);
        assert_eq!(
            p.receiver.on_message(&other).unwrap_err().report().unwrap().rule,
            Rule::InvalidConnectionId
        );
        let mut m = sent(p.sender.send(&p.s_key, b"a".to_vec()));
        m.value.push(0);
        assert_eq!(
            p.receiver.on_message(&m).unwrap_err().report().unwrap().rule,
            Rule::InvalidSignature
        );
    }

    struct EvenOnly;
    impl Rules for EvenOnly {
        fn check(&mut self, msgs: &BTreeMap<i64, OwacMessage>, index: i64) -> Result<(), Vec<i64>> {
            if msgs[&index].value[0] % 2 == 0 {
                Ok(())
            } else {
                Err(vec![index])
            }
        }
    }

    #[test]
    fn rules_violation_is_proof_and_state_is_untouched() {
        let s_key = Keypair::from_label("sender");
        let r_key = Keypair::from_label("receiver");
        let cfg = ChannelConfig::new(s_key.public(), r_key.public(), 0, 4, KIND);
        let mut sender = OwacSender::new(cfg.clone());
        let mut receiver = OwacReceiver::new(cfg, EvenOnly);
        receiver.on_message(&sent(sender.send(&s_key, vec![2]))).unwrap();
        let before = (receiver.last_rcvd(), receiver.seq_hash(), receiver.msgs.len());
        let rep = receiver
            .on_message(&sent(sender.send(&s_key, vec![3])))
            .unwrap_err()
            .report()
            .unwrap()
            .clone();
        assert_eq!(rep.rule, Rule::RulesViolated);
        assert_eq!((receiver.last_rcvd(), receiver.seq_hash(), receiver.msgs.len()), before);
        let odd = |ms: &[&OwacMessage]| ms.iter().any(|m| m.value[0] % 2 == 1);
        assert!(verify_proof(&rep, 4, &odd));
    }

    #[test]
    fn omission_gap_is_folded_with_placeholders() {
        let mut p = pair(8);
        let msgs: Vec<_> = (0..4u8)
            .map(|i| sent(p.sender.send(&p.s_key, vec![i])))
            .collect();
        p.receiver.on_message(&msgs[0]).unwrap();
        assert_eq!(p.receiver.forgive_gap(2), Some((1, 2)));
        p.receiver.on_message(&msgs[3]).unwrap();
        assert!(confirm_now(&mut p).is_none(), "held until the report commits");
        assert!(p.receiver.release_gap((1, 2)));
        let c = confirm_now(&mut p).unwrap();
        assert_eq!(p.sender.apply_omission(1, 2), vec![vec![1], vec![2]]);
        p.sender.on_confirmation(&c).unwrap();
        assert_eq!(p.sender.last_conf(), 3);
    }

    #[test]
    fn frame_codec_round_trip() {
        let p = pair(4);
        let m = OwacMessage::sign(&p.s_key, b"c", -1, b"v".to_vec(), -1);
        let f = Frame::Message(m);
        let bytes = f.encode();
        assert_eq!(bytes[0], FRAME_MESSAGE);
        assert_eq!(Frame::decode(&bytes).unwrap(), f);
    }

    #[derive(Debug, Clone)]
    enum Step {
        Send(u8),
        Deliver,
        Confirm,
        DeliverConf,
    }

    fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            4 => any::<u8>().prop_map(Step::Send),
            3 => Just(Step::Deliver),
            1 => Just(Step::Confirm),
            2 => Just(Step::DeliverConf),
        ]
    }

    proptest! {
        /// Honest endpoints over FIFO pipes never report, stay within the
        /// flow-control bound, and agree on the fold at each confirmation.
        #[test]
        fn honest_schedules_are_silent(gp in 1u64..6, steps in prop::collection::vec(step(), 1..120)) {
            let mut p = pair(gp);
            let mut to_r: VecDeque<OwacMessage> = VecDeque::new();
            let mut to_s: VecDeque<Confirmation> = VecDeque::new();
            let mut all: Vec<Vec<u8>> = Vec::new();
            for s in steps {
                match s {
                    Step::Send(v) => {
                        let refuse = p.sender.last_sent() > p.sender.last_conf() + gp as i64;
                        match p.sender.send(&p.s_key, vec![v]) {
                            SendOutcome::Sent(m) => { prop_assert!(!refuse); all.push(vec![v]); to_r.push_back(m); }
                            SendOutcome::Refused => prop_assert!(refuse),
                        }
                        prop_assert!(p.sender.last_sent() - p.sender.last_conf() <= gp as i64 + 1);
                    }
                    Step::Deliver => if let Some(m) = to_r.pop_front() {
                        prop_assert!(p.receiver.on_message(&m).is_ok());
                    },
                    Step::Confirm => if let Some(c) = confirm_now(&mut p) {
                        to_s.push_back(c);
                    },
                    Step::DeliverConf => if let Some(c) = to_s.pop_front() {
                        let k = c.confirmed_index;
                        prop_assert!(p.sender.on_confirmation(&c).is_ok());
                        let refs: Vec<&[u8]> = all[..=k as usize].iter().map(|v| v.as_slice()).collect();
                        prop_assert_eq!(p.sender.hash_at(k).unwrap(), oracle_fold(&refs));
                    },
                }
            }
        }
    }
}
