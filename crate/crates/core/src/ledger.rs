//! Accounts, transactions, acceptor receipts, censorship marks and blocks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{verify, Digest, HashKind, Keypair, PublicKey, Signature};
use crate::outqueue::PartialTree;

pub type Address = PublicKey;

// Signature domains. Each signed payload starts with one of these bytes so a
// signature over one kind of object never verifies as another.
const DOMAIN_TX: u8 = 0x10;
const DOMAIN_RECEIPT: u8 = 0x11;
const DOMAIN_CENSOR: u8 = 0x12;
const DOMAIN_BLOCK: u8 = 0x13;

/// Validation failure codes. The numeric values are part of the wire contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Reason {
    BadSignature = 1,
    InsufficientBalance = 2,
    BadNonce = 3,
    Malformed = 4,
    BadReceipt = 5,
    Censored = 6,
}

impl Reason {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => Reason::BadSignature,
            2 => Reason::InsufficientBalance,
            3 => Reason::BadNonce,
            4 => Reason::Malformed,
            5 => Reason::BadReceipt,
            6 => Reason::Censored,
            _ => return None,
        })
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Encode for Reason {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(self.code());
    }
}

impl Decode for Reason {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        Reason::from_code(tag).ok_or(DecodeError::BadTag { what: "reason", tag })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Account {
    pub balance: u64,
    pub next_nonce: u64,
}

/// Account map. Absent accounts have zero balance and nonce.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct State {
    accounts: BTreeMap<Address, Account>,
}

impl State {
    pub fn from_balances<I: IntoIterator<Item = (Address, u64)>>(balances: I) -> Self {
        let accounts = balances
            .into_iter()
            .map(|(a, balance)| (a, Account { balance, next_nonce: 0 }))
            .collect();
        Self { accounts }
    }

    pub fn account(&self, address: &Address) -> Account {
        self.accounts.get(address).copied().unwrap_or_default()
    }

    pub fn set(&mut self, address: Address, account: Account) {
        self.accounts.insert(address, account);
    }

    pub fn total_balance(&self) -> u128 {
        self.accounts.values().map(|a| a.balance as u128).sum()
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&Address, &Account)> {
        self.accounts.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TxInput {
    pub address: Address,
    pub amount: u64,
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TxOutput {
    pub address: Address,
    pub amount: u64,
}

/// Payload of an administrative transaction. Moves no tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AdminReport {
    /// A restarted node reports that its channel sessions were reset.
    Outage { node: PublicKey, session: u64 },
    /// A receiver reports that indices `first..=last` on `conn_id` never arrived.
    Omission {
        reporter: PublicKey,
        accused: PublicKey,
        conn_id: Vec<u8>,
        first: i64,
        last: i64,
    },
}

impl AdminReport {
    pub fn signer(&self) -> PublicKey {
        match self {
            AdminReport::Outage { node, .. } => *node,
            AdminReport::Omission { reporter, .. } => *reporter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TxKind {
    Send,
    Administrative(AdminReport),
}

/// The signed part of a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TxBody {
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
    pub kind: TxKind,
}

impl TxBody {
    /// Keys whose signatures the body needs, in signature order.
    pub fn signers(&self) -> Vec<PublicKey> {
        match &self.kind {
            TxKind::Send => self.inputs.iter().map(|i| i.address).collect(),
            TxKind::Administrative(report) => vec![report.signer()],
        }
    }

    fn signing_payload(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(DOMAIN_TX).value(self);
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AcceptorReceipt {
    pub acceptor: PublicKey,
    pub seq: u64,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CensorshipMark {
    pub censor: PublicKey,
    pub reason: Vec<u8>,
    pub signature: Signature,
}

/// Identity of a transaction: digest of its body and input signatures.
/// Receipts and censorship marks are metadata and do not change it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(pub Digest);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub body: TxBody,
    pub signatures: Vec<Signature>,
    pub receipt: Option<AcceptorReceipt>,
    pub censorship: Option<CensorshipMark>,
}

impl Transaction {
    /// Signs `body` with one key per signer, in [`TxBody::signers`] order.
    pub fn signed(body: TxBody, keys: &[&Keypair]) -> Self {
        let payload = body.signing_payload();
        let signatures = keys.iter().map(|k| k.sign(&payload)).collect();
        Self {
            body,
            signatures,
            receipt: None,
            censorship: None,
        }
    }

    /// Single-input, single-output transfer.
    pub fn transfer(from: &Keypair, to: Address, amount: u64, nonce: u64) -> Self {
        let body = TxBody {
            inputs: vec![TxInput {
                address: from.public(),
                amount,
                nonce,
            }],
            outputs: vec![TxOutput { address: to, amount }],
            kind: TxKind::Send,
        };
        Self::signed(body, &[from])
    }

    pub fn administrative(report: AdminReport, signer: &Keypair) -> Self {
        let body = TxBody {
            inputs: Vec::new(),
            outputs: Vec::new(),
            kind: TxKind::Administrative(report),
        };
        Self::signed(body, &[signer])
    }

    fn core_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.value(&self.body).list(&self.signatures);
        w.finish()
    }

    pub fn id(&self, kind: HashKind) -> TxId {
        TxId(kind.hash(&self.core_bytes()))
    }

    fn receipt_payload(&self, acceptor: &PublicKey, seq: u64) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(DOMAIN_RECEIPT)
            .raw(&self.core_bytes())
            .value(acceptor)
            .u64(seq);
        w.finish()
    }

    fn censor_payload(&self, reason: &[u8]) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(DOMAIN_CENSOR).raw(&self.core_bytes()).bytes(reason);
        w.finish()
    }

    pub fn attach_receipt(&mut self, acceptor: &Keypair, seq: u64) {
        let signature = acceptor.sign(&self.receipt_payload(&acceptor.public(), seq));
        self.receipt = Some(AcceptorReceipt {
            acceptor: acceptor.public(),
            seq,
            signature,
        });
    }

    pub fn attach_censorship(&mut self, censor: &Keypair, reason: &[u8]) {
        let signature = censor.sign(&self.censor_payload(reason));
        self.censorship = Some(CensorshipMark {
            censor: censor.public(),
            reason: reason.to_vec(),
            signature,
        });
    }

    pub fn receipt_valid(&self) -> bool {
        self.receipt.as_ref().map_or(true, |r| {
            verify(&r.acceptor, &self.receipt_payload(&r.acceptor, r.seq), &r.signature)
        })
    }

    pub fn censorship_valid(&self) -> bool {
        self.censorship.as_ref().map_or(true, |c| {
            verify(&c.censor, &self.censor_payload(&c.reason), &c.signature)
        })
    }

    /// Checks that do not depend on any account state: shape, conservation
    /// and input signatures.
    pub fn static_check(&self) -> Result<(), Reason> {
        let body = &self.body;
        match &body.kind {
            TxKind::Send => {
                if body.inputs.is_empty() {
                    return Err(Reason::Malformed);
                }
                let distinct: BTreeSet<_> = body.inputs.iter().map(|i| i.address).collect();
                if distinct.len() != body.inputs.len() {
                    return Err(Reason::Malformed);
                }
                let total_in = checked_sum(body.inputs.iter().map(|i| i.amount));
                let total_out = checked_sum(body.outputs.iter().map(|o| o.amount));
                // Fee policy is zero: inputs must exactly cover outputs.
                match (total_in, total_out) {
                    (Some(a), Some(b)) if a == b => {}
                    _ => return Err(Reason::Malformed),
                }
            }
            TxKind::Administrative(_) => {
                if !body.inputs.is_empty() || !body.outputs.is_empty() {
                    return Err(Reason::Malformed);
                }
            }
        }
        let signers = body.signers();
        if signers.len() != self.signatures.len() {
            return Err(Reason::Malformed);
        }
        let payload = body.signing_payload();
        if signers
            .iter()
            .zip(&self.signatures)
            .any(|(k, s)| !verify(k, &payload, s))
        {
            return Err(Reason::BadSignature);
        }
        Ok(())
    }

    /// Checks that need the account state. Assumes `static_check` passed.
    pub fn check_state(&self, state: &State) -> Result<(), Reason> {
        if self.censorship.is_some() {
            return Err(Reason::Censored);
        }
        for input in &self.body.inputs {
            if state.account(&input.address).next_nonce != input.nonce {
                return Err(Reason::BadNonce);
            }
        }
        for input in &self.body.inputs {
            if state.account(&input.address).balance < input.amount {
                return Err(Reason::InsufficientBalance);
            }
        }
        Ok(())
    }
}

fn checked_sum<I: Iterator<Item = u64>>(mut it: I) -> Option<u64> {
    it.try_fold(0u64, |acc, v| acc.checked_add(v))
}

/// Full validation against an account map.
pub fn validate_against_state(tx: &Transaction, state: &State) -> Result<(), Reason> {
    tx.static_check()?;
    tx.check_state(state)
}

/// Gossip-level validation: never consults balances or nonces.
pub fn make_basic_check(tx: &Transaction) -> Result<(), Reason> {
    tx.static_check()?;
    if !tx.receipt_valid() || !tx.censorship_valid() {
        return Err(Reason::BadReceipt);
    }
    Ok(())
}

/// Applies a transaction that passed [`Transaction::check_state`].
///
/// Panics if the transaction is not valid against `state`.
pub fn apply_in_place(tx: &Transaction, state: &mut State) {
    assert_eq!(tx.check_state(state), Ok(()), "apply on invalid transaction");
    for input in &tx.body.inputs {
        let mut acct = state.account(&input.address);
        acct.balance -= input.amount;
        acct.next_nonce += 1;
        state.set(input.address, acct);
    }
    for output in &tx.body.outputs {
        let mut acct = state.account(&output.address);
        acct.balance = acct
            .balance
            .checked_add(output.amount)
            .expect("balance overflow");
        state.set(output.address, acct);
    }
}

pub fn apply(tx: &Transaction, state: &State) -> State {
    let mut next = state.clone();
    apply_in_place(tx, &mut next);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Disposition {
    Processed,
    Rejected(Reason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTx {
    pub tx: Transaction,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub proposer: PublicKey,
    pub txs: Vec<BlockTx>,
    pub outqueue_root: Digest,
    pub disclosure: PartialTree,
}

impl Block {
    /// Hash of the header. The header commits to the transaction list and the
    /// disclosure through their digests.
    pub fn hash(&self, kind: HashKind) -> Digest {
        let mut w = Writer::new();
        w.u8(DOMAIN_BLOCK)
            .u64(self.height)
            .value(&self.prev_hash)
            .value(&self.proposer)
            .value(&kind.hash_value(&TxList(&self.txs)))
            .value(&self.outqueue_root)
            .value(&kind.hash_value(&self.disclosure));
        kind.hash(&w.finish())
    }

    pub fn processed(&self) -> impl Iterator<Item = &Transaction> {
        self.txs
            .iter()
            .filter(|t| t.disposition == Disposition::Processed)
            .map(|t| &t.tx)
    }
}

struct TxList<'a>(&'a [BlockTx]);

impl Encode for TxList<'_> {
    fn encode_to(&self, w: &mut Writer) {
        w.list(self.0);
    }
}

/// Initial ledger configuration shared by every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Genesis {
    pub hash: HashKind,
    pub balances: Vec<(Address, u64)>,
}

impl Genesis {
    pub fn state(&self) -> State {
        State::from_balances(self.balances.iter().copied())
    }
}

/// Result of replaying a chain segment from genesis.
#[derive(Debug, Clone)]
pub struct ChainView {
    pub state: State,
    pub tip: Digest,
    pub height: u64,
    pub committed: BTreeMap<TxId, u64>,
}

impl ChainView {
    pub fn genesis(genesis: &Genesis) -> Self {
        Self {
            state: genesis.state(),
            tip: genesis.hash.zero(),
            height: 0,
            committed: BTreeMap::new(),
        }
    }

    /// Extends the view by one block. Fails if the block does not link to the
    /// tip or a processed transaction is not executable.
    pub fn extend(&mut self, kind: HashKind, block: &Block) -> Result<(), ChainError> {
        if block.height != self.height + 1 || block.prev_hash != self.tip {
            return Err(ChainError::Mismatch);
        }
        let mut state = self.state.clone();
        for t in block.processed() {
            validate_against_state(t, &state).map_err(|_| ChainError::InvalidTx)?;
            apply_in_place(t, &mut state);
        }
        for t in &block.txs {
            self.committed.insert(t.tx.id(kind), block.height);
        }
        self.state = state;
        self.tip = block.hash(kind);
        self.height = block.height;
        Ok(())
    }

    /// Replays `blocks` (which must start at height 1) from genesis.
    pub fn replay(genesis: &Genesis, blocks: &[Block]) -> Result<Self, ChainError> {
        let mut view = Self::genesis(genesis);
        for b in blocks {
            view.extend(genesis.hash, b)?;
        }
        Ok(view)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("block does not extend the chain")]
    Mismatch,
    #[error("block contains a processed transaction that does not execute")]
    InvalidTx,
}

// ---------------------------------------------------------------------------
// Encoding

impl Encode for TxInput {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.address).u64(self.amount).u64(self.nonce);
    }
}

impl Decode for TxInput {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            address: r.value()?,
            amount: r.u64()?,
            nonce: r.u64()?,
        })
    }
}

impl Encode for TxOutput {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.address).u64(self.amount);
    }
}

impl Decode for TxOutput {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            address: r.value()?,
            amount: r.u64()?,
        })
    }
}

impl Encode for AdminReport {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            AdminReport::Outage { node, session } => {
                w.u8(0).value(node).u64(*session);
            }
            AdminReport::Omission {
                reporter,
                accused,
                conn_id,
                first,
                last,
            } => {
                w.u8(1)
                    .value(reporter)
                    .value(accused)
                    .bytes(conn_id)
                    .i64(*first)
                    .i64(*last);
            }
        }
    }
}

impl Decode for AdminReport {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(AdminReport::Outage {
                node: r.value()?,
                session: r.u64()?,
            }),
            1 => Ok(AdminReport::Omission {
                reporter: r.value()?,
                accused: r.value()?,
                conn_id: r.bytes()?,
                first: r.i64()?,
                last: r.i64()?,
            }),
            tag => Err(DecodeError::BadTag { what: "admin report", tag }),
        }
    }
}

impl Encode for TxKind {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            TxKind::Send => {
                w.u8(0);
            }
            TxKind::Administrative(report) => {
                w.u8(1).value(report);
            }
        }
    }
}

impl Decode for TxKind {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(TxKind::Send),
            1 => Ok(TxKind::Administrative(r.value()?)),
            tag => Err(DecodeError::BadTag { what: "tx kind", tag }),
        }
    }
}

impl Encode for TxBody {
    fn encode_to(&self, w: &mut Writer) {
        w.list(&self.inputs).list(&self.outputs).value(&self.kind);
    }
}

impl Decode for TxBody {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            inputs: r.list()?,
            outputs: r.list()?,
            kind: r.value()?,
        })
    }
}

impl Encode for AcceptorReceipt {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.acceptor).u64(self.seq).value(&self.signature);
    }
}

impl Decode for AcceptorReceipt {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            acceptor: r.value()?,
            seq: r.u64()?,
            signature: r.value()?,
        })
    }
}

impl Encode for CensorshipMark {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.censor)
            .bytes(&self.reason)
            .value(&self.signature);
    }
}

impl Decode for CensorshipMark {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            censor: r.value()?,
            reason: r.bytes()?,
            signature: r.value()?,
        })
    }
}

impl Encode for Transaction {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.body)
            .list(&self.signatures)
            .option(self.receipt.as_ref())
            .option(self.censorship.as_ref());
    }
}

impl Decode for Transaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            body: r.value()?,
            signatures: r.list()?,
            receipt: r.option()?,
            censorship: r.option()?,
        })
    }
}

impl Encode for Disposition {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Disposition::Processed => {
                w.u8(0);
            }
            Disposition::Rejected(reason) => {
                w.u8(1).value(reason);
            }
        }
    }
}

impl Decode for Disposition {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(Disposition::Processed),
            1 => Ok(Disposition::Rejected(r.value()?)),
            tag => Err(DecodeError::BadTag { what: "disposition", tag }),
        }
    }
}

impl Encode for BlockTx {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.tx).value(&self.disposition);
    }
}

impl Decode for BlockTx {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            tx: r.value()?,
            disposition: r.value()?,
        })
    }
}

impl Encode for Block {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.height)
            .value(&self.prev_hash)
            .value(&self.proposer)
            .list(&self.txs)
            .value(&self.outqueue_root)
            .value(&self.disclosure);
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: r.u64()?,
            prev_hash: r.value()?,
            proposer: r.value()?,
            txs: r.list()?,
            outqueue_root: r.value()?,
            disclosure: r.value()?,
        })
    }
}

/// Serializable form of [`Genesis`] for scenario and proof files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenesisFile {
    pub hash: HashKind,
    /// `(hex public key, balance)` pairs.
    pub balances: Vec<(String, u64)>,
}

impl From<&Genesis> for GenesisFile {
    fn from(g: &Genesis) -> Self {
        Self {
            hash: g.hash,
            balances: g.balances.iter().map(|(a, b)| (a.to_hex(), *b)).collect(),
        }
    }
}

impl TryFrom<&GenesisFile> for Genesis {
    type Error = String;

    fn try_from(f: &GenesisFile) -> Result<Self, Self::Error> {
        let balances = f
            .balances
            .iter()
            .map(|(a, b)| {
                PublicKey::from_hex(a)
                    .map(|k| (k, *b))
                    .ok_or_else(|| format!("bad address {a}"))
            })
            .collect::<Result<_, _>>()?;
        Ok(Genesis {
            hash: f.hash,
            balances,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys() -> (Keypair, Keypair) {
        (Keypair::from_label("alice"), Keypair::from_label("bob"))
    }

    #[test]
    fn exact_balance_spend_is_valid() {
        let (a, b) = keys();
        let state = State::from_balances([(a.public(), 5)]);
        let tx = Transaction::transfer(&a, b.public(), 5, 0);
        assert_eq!(validate_against_state(&tx, &state), Ok(()));
    }

    #[test]
    fn nonce_one_ahead_is_bad_nonce() {
        let (a, b) = keys();
        let state = State::from_balances([(a.public(), 5)]);
        let tx = Transaction::transfer(&a, b.public(), 1, 1);
        assert_eq!(validate_against_state(&tx, &state), Err(Reason::BadNonce));
    }

    #[test]
    fn overspend_is_insufficient_balance() {
        let (a, b) = keys();
        let state = State::from_balances([(a.public(), 5)]);
        let tx = Transaction::transfer(&a, b.public(), 6, 0);
        assert_eq!(
            validate_against_state(&tx, &state),
            Err(Reason::InsufficientBalance)
        );
    }

    #[test]
    fn basic_check_ignores_balance() {
        let (a, b) = keys();
        let tx = Transaction::transfer(&a, b.public(), 1_000_000, 7);
        assert_eq!(make_basic_check(&tx), Ok(()));
    }

    #[test]
    fn corrupted_receipt_is_bad_receipt() {
        let (a, b) = keys();
        let acceptor = Keypair::from_label("node-0");
        let mut tx = Transaction::transfer(&a, b.public(), 1, 0);
        tx.attach_receipt(&acceptor, 3);
        assert_eq!(make_basic_check(&tx), Ok(()));
        tx.receipt.as_mut().unwrap().signature.0[5] ^= 1;
        assert_eq!(make_basic_check(&tx), Err(Reason::BadReceipt));
    }

    #[test]
    fn receipt_covers_sequence_number() {
        let (a, b) = keys();
        let acceptor = Keypair::from_label("node-0");
        let mut tx = Transaction::transfer(&a, b.public(), 1, 0);
        tx.attach_receipt(&acceptor, 3);
        tx.receipt.as_mut().unwrap().seq = 4;
        assert!(!tx.receipt_valid());
    }

    #[test]
    fn censored_tx_fails_state_check_but_passes_gossip() {
        let (a, b) = keys();
        let censor = Keypair::from_label("node-0");
        let state = State::from_balances([(a.public(), 5)]);
        let mut tx = Transaction::transfer(&a, b.public(), 1, 0);
        tx.attach_censorship(&censor, b"sanctioned");
        assert_eq!(make_basic_check(&tx), Ok(()));
        assert_eq!(validate_against_state(&tx, &state), Err(Reason::Censored));
    }

    #[test]
    fn metadata_does_not_change_identity() {
        let (a, b) = keys();
        let acceptor = Keypair::from_label("node-0");
        let plain = Transaction::transfer(&a, b.public(), 1, 0);
        let mut marked = plain.clone();
        marked.attach_receipt(&acceptor, 0);
        marked.attach_censorship(&acceptor, b"r");
        assert_eq!(plain.id(HashKind::Ripemd160), marked.id(HashKind::Ripemd160));
    }

    #[test]
    fn unbalanced_outputs_are_malformed() {
        let (a, b) = keys();
        let body = TxBody {
            inputs: vec![TxInput { address: a.public(), amount: 3, nonce: 0 }],
            outputs: vec![TxOutput { address: b.public(), amount: 2 }],
            kind: TxKind::Send,
        };
        let tx = Transaction::signed(body, &[&a]);
        assert_eq!(tx.static_check(), Err(Reason::Malformed));
    }

    #[test]
    fn zero_amount_self_send_only_bumps_nonce() {
        let (a, _) = keys();
        let state = State::from_balances([(a.public(), 9)]);
        let tx = Transaction::transfer(&a, a.public(), 0, 0);
        let next = apply(&tx, &state);
        assert_eq!(next.account(&a.public()), Account { balance: 9, next_nonce: 1 });
    }

    #[test]
    fn dependent_chain_advances_nonce_by_length() {
        let (a, b) = keys();
        let mut state = State::from_balances([(a.public(), 100)]);
        let k = 7;
        for n in 0..k {
            let tx = Transaction::transfer(&a, b.public(), 3, n);
            validate_against_state(&tx, &state).unwrap();
            apply_in_place(&tx, &mut state);
        }
        assert_eq!(state.account(&a.public()).next_nonce, k);
        assert_eq!(state.account(&a.public()).balance, 100 - 3 * k);
        assert_eq!(state.total_balance(), 100);
    }

    #[test]
    fn administrative_tx_validates_without_tokens() {
        let node = Keypair::from_label("node-1");
        let tx = Transaction::administrative(
            AdminReport::Outage { node: node.public(), session: 2 },
            &node,
        );
        assert_eq!(validate_against_state(&tx, &State::default()), Ok(()));
        let forged = Transaction::administrative(
            AdminReport::Outage { node: node.public(), session: 2 },
            &Keypair::from_label("other"),
        );
        assert_eq!(forged.static_check(), Err(Reason::BadSignature));
    }

    #[test]
    fn transaction_codec_round_trip() {
        let (a, b) = keys();
        let acceptor = Keypair::from_label("node-0");
        let mut tx = Transaction::transfer(&a, b.public(), 4, 2);
        tx.attach_receipt(&acceptor, 11);
        let bytes = tx.encode();
        assert_eq!(Transaction::decode(&bytes).unwrap(), tx);
    }

    #[test]
    fn reason_codes_are_stable() {
        let codes: Vec<u8> = [
            Reason::BadSignature,
            Reason::InsufficientBalance,
            Reason::BadNonce,
            Reason::Malformed,
            Reason::BadReceipt,
            Reason::Censored,
        ]
        .iter()
        .map(|r| r.code())
        .collect();
        assert_eq!(codes, vec![1, 2, 3, 4, 5, 6]);
    }
}
