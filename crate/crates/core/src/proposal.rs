//! Block proposals: which transactions go in and in what order.
//!
//! A proposer has no discretion. It takes a prefix of its outgoing queue
//! fixed by the selection policy, proves it is a prefix, and orders it by
//! a Fisher–Yates shuffle seeded from the previous block hash and the first
//! selected transaction. Transactions that cannot run yet are deferred
//! across passes until a pass makes no progress.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{verify, Digest, HashKind, Keypair, PublicKey, Signature};
use crate::ledger::{apply_in_place, Block, BlockTx, Disposition, Reason, State, Transaction};
use crate::outqueue::{PartialTree, QueueSnapshot};

const DOMAIN_PROPOSAL: u8 = 0x14;

/// Replaces a zero seed; xorshift has zero as a fixed point.
pub const ZERO_SEED_SUBSTITUTE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectionPolicy {
    FixedCount(u64),
    MaxBytes(u64),
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::FixedCount(128)
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPolicy::FixedCount(n) => write!(f, "fixed:{n}"),
            SelectionPolicy::MaxBytes(b) => write!(f, "bytes:{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("policy must be fixed:N or bytes:N, got {0:?}")]
pub struct PolicyParseError(String);

impl FromStr for SelectionPolicy {
    type Err = PolicyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PolicyParseError(s.to_string());
        let (mode, n) = s.split_once(':').ok_or_else(err)?;
        let n: u64 = n.parse().map_err(|_| err())?;
        match mode {
            "fixed" => Ok(SelectionPolicy::FixedCount(n)),
            "bytes" => Ok(SelectionPolicy::MaxBytes(n)),
            _ => Err(err()),
        }
    }
}

impl TryFrom<String> for SelectionPolicy {
    type Error = PolicyParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SelectionPolicy> for String {
    fn from(p: SelectionPolicy) -> String {
        p.to_string()
    }
}

fn encoded_len(tx: &Transaction) -> u64 {
    tx.encode().len() as u64
}

/// Queue prefix the policy selects, in position order.
pub fn select_prefix(snap: &QueueSnapshot, policy: SelectionPolicy) -> Vec<(u64, Transaction)> {
    match policy {
        SelectionPolicy::FixedCount(n) => snap.first(n.min(usize::MAX as u64) as usize),
        SelectionPolicy::MaxBytes(b) => {
            let mut total = 0u64;
            snap.entries()
                .into_iter()
                .take_while(|(_, tx)| {
                    total += encoded_len(tx);
                    total <= b
                })
                .collect()
        }
    }
}

/// XOR of the two byte strings over their common length, folded to 64 bits
/// by XOR of big-endian 8-byte words (last word zero-padded).
pub fn derive_seed(prev_block_hash: &Digest, first_acceptor_sig: &Signature) -> u64 {
    let a = prev_block_hash.as_bytes();
    let b = first_acceptor_sig.as_bytes();
    let x: Vec<u8> = a.iter().zip(b).map(|(p, q)| p ^ q).collect();
    let fold = x.chunks(8).fold(0u64, |acc, chunk| {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        acc ^ u64::from_be_bytes(word)
    });
    if fold == 0 {
        ZERO_SEED_SUBSTITUTE
    } else {
        fold
    }
}

/// Signature that seeds the ordering: the acceptor receipt if present,
/// otherwise the first input signature.
pub fn seed_signature(tx: &Transaction) -> Signature {
    tx.receipt
        .as_ref()
        .map(|r| r.signature)
        .or_else(|| tx.signatures.first().copied())
        .unwrap_or(Signature([0; 64]))
}

/// One xorshift64 step with shifts (13, 7, 17).
pub fn prng_next(state: u64) -> u64 {
    assert_ne!(state, 0, "xorshift state must be nonzero");
    let mut s = state;
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    s
}

/// Fisher–Yates from the back, drawing `j = next % (i + 1)`.
pub fn permute<T>(items: &mut [T], seed: u64) {
    let mut state = seed;
    for i in (1..items.len()).rev() {
        state = prng_next(state);
        let j = (state % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Runs passes over `permuted`, emitting every transaction that executes
/// against the working state. Nonce and balance failures defer; the
/// deferred set keeps permutation order. Static failures and censorship
/// reject at once. Whatever is left when a pass emits nothing is rejected
/// with its reason against the final working state.
pub fn order_with_deferral(
    permuted: &[Transaction],
    state: &State,
) -> (Vec<Transaction>, Vec<(Transaction, Reason)>) {
    let mut working = state.clone();
    let mut processed = Vec::new();
    let mut rejected = Vec::new();
    let mut deferred: Vec<&Transaction> = Vec::new();
    for tx in permuted {
        match tx.static_check() {
            Ok(()) => deferred.push(tx),
            Err(reason) => rejected.push((tx.clone(), reason)),
        }
    }
    loop {
        let mut emitted = false;
        let mut next = Vec::with_capacity(deferred.len());
        for tx in deferred {
            match tx.check_state(&working) {
                Ok(()) => {
                    apply_in_place(tx, &mut working);
                    processed.push(tx.clone());
                    emitted = true;
                }
                Err(Reason::Censored) => rejected.push((tx.clone(), Reason::Censored)),
                Err(_) => next.push(tx),
            }
        }
        deferred = next;
        if !emitted || deferred.is_empty() {
            break;
        }
    }
    for tx in deferred {
        let reason = tx.check_state(&working).expect_err("left over after a silent pass");
        rejected.push((tx.clone(), reason));
    }
    (processed, rejected)
}

/// Seeds, shuffles and orders an already selected prefix.
pub fn order_selection(
    selected: Vec<Transaction>,
    prev_block_hash: &Digest,
    state: &State,
) -> (Vec<Transaction>, Vec<(Transaction, Reason)>) {
    let Some(first) = selected.first() else {
        return (Vec::new(), Vec::new());
    };
    let seed = derive_seed(prev_block_hash, &seed_signature(first));
    let mut txs = selected;
    permute(&mut txs, seed);
    order_with_deferral(&txs, state)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedProposal {
    pub processed: Vec<Transaction>,
    pub rejected: Vec<(Transaction, Reason)>,
    pub disclosure: PartialTree,
    pub outqueue_root: Digest,
}

impl OrderedProposal {
    /// Transactions in block order: processed, then rejected.
    pub fn block_txs(&self) -> Vec<BlockTx> {
        self.processed
            .iter()
            .map(|t| BlockTx {
                tx: t.clone(),
                disposition: Disposition::Processed,
            })
            .chain(self.rejected.iter().map(|(t, r)| BlockTx {
                tx: t.clone(),
                disposition: Disposition::Rejected(*r),
            }))
            .collect()
    }

    fn plain_txs(&self) -> Vec<Transaction> {
        self.processed
            .iter()
            .cloned()
            .chain(self.rejected.iter().map(|(t, _)| t.clone()))
            .collect()
    }

    /// Disclosure with leaves that appear in the block replaced by indexes.
    pub fn compact_disclosure(&self) -> PartialTree {
        self.disclosure
            .with_block_indexes(HashKind::default(), &self.plain_txs())
    }
}

pub fn build_proposal(
    snap: &QueueSnapshot,
    policy: SelectionPolicy,
    prev_block_hash: &Digest,
    state: &State,
) -> OrderedProposal {
    let selected = select_prefix(snap, policy);
    let k = selected.len();
    let shown = match policy {
        // The next entry proves the byte bound was reached.
        SelectionPolicy::MaxBytes(_) if k < snap.len() => k + 1,
        _ => k,
    };
    let disclosure = snap.disclose_prefix(shown).expect("prefix within queue");
    let (processed, rejected) = order_selection(
        selected.into_iter().map(|(_, t)| t).collect(),
        prev_block_hash,
        state,
    );
    OrderedProposal {
        processed,
        rejected,
        disclosure,
        outqueue_root: snap.root(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum Invalid {
    #[error("disclosure does not match the claimed root")]
    BadRoot,
    #[error("disclosed transactions are not a queue prefix")]
    BadPrefix,
    #[error("selection size does not follow the policy")]
    BadSelectionSize,
    #[error("ordering differs from the deterministic recomputation")]
    BadOrdering,
}

/// Recomputes every step of [`build_proposal`] from the disclosure.
pub fn verify_proposal(
    p: &OrderedProposal,
    kind: HashKind,
    prev_block_hash: &Digest,
    claimed_root: &Digest,
    policy: SelectionPolicy,
    state: &State,
) -> Result<(), Invalid> {
    let r = p
        .disclosure
        .recombine(kind, &[])
        .map_err(|_| Invalid::BadPrefix)?;
    if r.root != *claimed_root {
        return Err(Invalid::BadRoot);
    }
    if !r.is_prefix {
        return Err(Invalid::BadPrefix);
    }
    let leaves: Vec<Transaction> = r.leaves.into_iter().map(|(_, t)| t).collect();
    let selected = match policy {
        SelectionPolicy::FixedCount(n) => {
            let len = leaves.len() as u64;
            if len > n || (len < n && !r.complete) {
                return Err(Invalid::BadSelectionSize);
            }
            leaves
        }
        SelectionPolicy::MaxBytes(b) => {
            let mut total = 0u64;
            let fit = leaves
                .iter()
                .take_while(|t| {
                    total += encoded_len(t);
                    total <= b
                })
                .count();
            let ok = if r.complete {
                fit == leaves.len()
            } else {
                fit + 1 == leaves.len()
            };
            if !ok {
                return Err(Invalid::BadSelectionSize);
            }
            let mut leaves = leaves;
            leaves.truncate(fit);
            leaves
        }
    };
    let (processed, rejected) = order_selection(selected, prev_block_hash, state);
    if processed != p.processed || rejected != p.rejected {
        return Err(Invalid::BadOrdering);
    }
    Ok(())
}

/// A proposal bound to its chain position and signed by its proposer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedProposal {
    pub height: u64,
    pub prev_hash: Digest,
    pub proposer: PublicKey,
    pub proposal: OrderedProposal,
    pub signature: Signature,
}

impl SignedProposal {
    fn payload(height: u64, prev: &Digest, proposer: &PublicKey, p: &OrderedProposal) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(DOMAIN_PROPOSAL)
            .u64(height)
            .value(prev)
            .value(proposer)
            .value(p);
        w.finish()
    }

    pub fn sign(key: &Keypair, height: u64, prev_hash: Digest, proposal: OrderedProposal) -> Self {
        let proposer = key.public();
        let signature = key.sign(&Self::payload(height, &prev_hash, &proposer, &proposal));
        Self {
            height,
            prev_hash,
            proposer,
            proposal,
            signature,
        }
    }

    pub fn verify_signature(&self) -> bool {
        verify(
            &self.proposer,
            &Self::payload(self.height, &self.prev_hash, &self.proposer, &self.proposal),
            &self.signature,
        )
    }

    pub fn to_block(&self) -> Block {
        Block {
            height: self.height,
            prev_hash: self.prev_hash,
            proposer: self.proposer,
            txs: self.proposal.block_txs(),
            outqueue_root: self.proposal.outqueue_root,
            disclosure: self.proposal.compact_disclosure(),
        }
    }
}

impl Encode for SelectionPolicy {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            SelectionPolicy::FixedCount(n) => w.u8(0).u64(*n),
            SelectionPolicy::MaxBytes(b) => w.u8(1).u64(*b),
        };
    }
}

impl Decode for SelectionPolicy {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(SelectionPolicy::FixedCount(r.u64()?)),
            1 => Ok(SelectionPolicy::MaxBytes(r.u64()?)),
            tag => Err(DecodeError::BadTag { what: "policy", tag }),
        }
    }
}

struct Rejection<'a>(&'a Transaction, Reason);

impl Encode for Rejection<'_> {
    fn encode_to(&self, w: &mut Writer) {
        w.value(self.0).value(&self.1);
    }
}

impl Encode for OrderedProposal {
    fn encode_to(&self, w: &mut Writer) {
        let rejected: Vec<_> = self.rejected.iter().map(|(t, r)| Rejection(t, *r)).collect();
        w.list(&self.processed)
            .list(&rejected)
            .value(&self.compact_disclosure())
            .value(&self.outqueue_root);
    }
}

impl Decode for OrderedProposal {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let processed: Vec<Transaction> = r.list()?;
        let n = r.u32()? as usize;
        if n > r.remaining() {
            return Err(DecodeError::BadLength { what: "list", len: n });
        }
        let mut rejected = Vec::with_capacity(n);
        for _ in 0..n {
            let tx: Transaction = r.value()?;
            let reason: Reason = r.value()?;
            rejected.push((tx, reason));
        }
        let compact: PartialTree = r.value()?;
        let outqueue_root = r.value()?;
        let all: Vec<Transaction> = processed
            .iter()
            .cloned()
            .chain(rejected.iter().map(|(t, _)| t.clone()))
            .collect();
        let disclosure = compact.resolve(&all).ok_or(DecodeError::BadLength {
            what: "block index",
            len: all.len(),
        })?;
        Ok(Self {
            processed,
            rejected,
            disclosure,
            outqueue_root,
        })
    }
}

impl Encode for SignedProposal {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.height)
            .value(&self.prev_hash)
            .value(&self.proposer)
            .value(&self.proposal)
            .value(&self.signature);
    }
}

impl Decode for SignedProposal {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            height: r.u64()?,
            prev_hash: r.value()?,
            proposer: r.value()?,
            proposal: r.value()?,
            signature: r.value()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outqueue::{MerkleQueue, PartialNode};
    use proptest::prelude::*;

    const KIND: HashKind = HashKind::Ripemd160;

    fn keys(n: usize) -> Vec<Keypair> {
        (0..n).map(|i| Keypair::from_label(&format!("acct{i}"))).collect()
    }

    fn funded(ks: &[Keypair]) -> State {
        State::from_balances(ks.iter().map(|k| (k.public(), 1_000)))
    }

    #[test]
    fn xorshift_known_step() {
        // s = 1: s ^= s<<13 -> 0x2001; s ^= s>>7 -> 0x2041; s ^= s<<17 -> 0x40822041.
        assert_eq!(prng_next(1), 0x4082_2041);
    }

    #[test]
    #[should_panic(expected = "nonzero")]
    fn xorshift_rejects_zero() {
        prng_next(0);
    }

    #[test]
    fn xorshift_no_repeat_in_a_million_steps() {
        let mut seen = std::collections::HashSet::with_capacity(1 << 20);
        let mut s = 1u64;
        for _ in 0..1_000_000 {
            s = prng_next(s);
            assert!(seen.insert(s));
        }
    }

    #[test]
    fn identical_inputs_fold_to_substitute() {
        let d = KIND.hash(b"x");
        let mut sig = [0u8; 64];
        sig[..20].copy_from_slice(d.as_bytes());
        assert_eq!(derive_seed(&d, &Signature(sig)), ZERO_SEED_SUBSTITUTE);
    }

    fn seed_oracle(a: &[u8], b: &[u8]) -> u64 {
        let n = a.len().min(b.len());
        let mut acc = 0u64;
        for i in 0..n {
            let byte = (a[i] ^ b[i]) as u64;
            acc ^= byte << (56 - 8 * (i % 8));
        }
        if acc == 0 {
            ZERO_SEED_SUBSTITUTE
        } else {
            acc
        }
    }

    proptest! {
        #[test]
        fn seed_matches_oracle(h in prop::array::uniform20(any::<u8>()), s in prop::collection::vec(any::<u8>(), 64)) {
            let d = Digest::from_slice(&h).unwrap();
            let sig = Signature(s.clone().try_into().unwrap());
            prop_assert_eq!(derive_seed(&d, &sig), seed_oracle(&h, &s));
        }

        #[test]
        fn seed_bit_flip_is_linear(h in prop::array::uniform20(any::<u8>()), bit in 0usize..160) {
            let sig = Signature([0x5a; 64]);
            let mut h2 = h;
            h2[bit / 8] ^= 0x80 >> (bit % 8);
            let a = derive_seed(&Digest::from_slice(&h).unwrap(), &sig);
            let b = derive_seed(&Digest::from_slice(&h2).unwrap(), &sig);
            prop_assume!(a != ZERO_SEED_SUBSTITUTE && b != ZERO_SEED_SUBSTITUTE);
            let byte = bit / 8;
            let expected = 1u64 << (63 - (8 * (byte % 8) + bit % 8));
            prop_assert_eq!(a ^ b, expected);
        }

        #[test]
        fn permute_is_a_permutation(seed in 1u64.., n in 0usize..40) {
            let mut v: Vec<usize> = (0..n).collect();
            permute(&mut v, seed);
            let mut sorted = v.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_element_unchanged_and_deterministic() {
        let mut one = vec![7];
        permute(&mut one, 99);
        assert_eq!(one, vec![7]);
        let (mut a, mut b): (Vec<u32>, Vec<u32>) = ((0..10).collect(), (0..10).collect());
        permute(&mut a, 12345);
        permute(&mut b, 12345);
        assert_eq!(a, b);
    }

    #[test]
    fn four_item_permutations_are_uniform() {
        let mut counts = std::collections::HashMap::new();
        let trials = 10_000u64;
        for seed in 1..=trials {
            let mut v = [0u8, 1, 2, 3];
            // Spread consecutive seeds through one generator step first.
            permute(&mut v, prng_next(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1));
            *counts.entry(v).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 24);
        let expected = trials as f64 / 24.0;
        let sigma = (trials as f64 * (1.0 / 24.0) * (23.0 / 24.0)).sqrt();
        for c in counts.values() {
            assert!((*c as f64 - expected).abs() < 5.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn dependent_chain_sorts_for_every_permutation() {
        let ks = keys(2);
        let state = funded(&ks);
        let chain: Vec<_> = (0..3)
            .map(|n| Transaction::transfer(&ks[0], ks[1].public(), 1, n))
            .collect();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for p in perms {
            let input: Vec<_> = p.iter().map(|&i| chain[i].clone()).collect();
            let (processed, rejected) = order_with_deferral(&input, &state);
            assert_eq!(processed, chain);
            assert!(rejected.is_empty());
        }
    }

    #[test]
    fn unorderable_nonce_is_rejected() {
        let ks = keys(2);
        let mut state = funded(&ks);
        let mut acct = state.account(&ks[0].public());
        acct.next_nonce = 3;
        state.set(ks[0].public(), acct);
        let tx = Transaction::transfer(&ks[0], ks[1].public(), 1, 5);
        let (processed, rejected) = order_with_deferral(&[tx.clone()], &state);
        assert!(processed.is_empty());
        assert_eq!(rejected, vec![(tx, Reason::BadNonce)]);
    }

    #[test]
    fn credit_later_in_pass_rescues_spend() {
        let ks = keys(2);
        let state = State::from_balances([(ks[0].public(), 10)]);
        let spend = Transaction::transfer(&ks[1], ks[0].public(), 5, 0);
        let credit = Transaction::transfer(&ks[0], ks[1].public(), 5, 0);
        let (processed, rejected) = order_with_deferral(&[spend.clone(), credit.clone()], &state);
        assert_eq!(processed, vec![credit, spend]);
        assert!(rejected.is_empty());
    }

    #[test]
    fn censored_rejected_immediately() {
        let ks = keys(2);
        let state = funded(&ks);
        let mut tx = Transaction::transfer(&ks[0], ks[1].public(), 1, 0);
        tx.attach_censorship(&ks[1], b"blacklisted");
        let (processed, rejected) = order_with_deferral(&[tx.clone()], &state);
        assert!(processed.is_empty());
        assert_eq!(rejected, vec![(tx, Reason::Censored)]);
    }

    fn queue_of(ks: &[Keypair], n: u64) -> MerkleQueue {
        let mut q = MerkleQueue::new(KIND);
        for i in 0..n {
            let k = &ks[(i % ks.len() as u64) as usize];
            let tx = Transaction::transfer(k, ks[0].public(), 1, i / ks.len() as u64);
            q.enqueue(tx).unwrap();
        }
        q
    }

    #[test]
    fn fixed_and_byte_prefixes() {
        let ks = keys(3);
        let snap = queue_of(&ks, 5).snapshot();
        let sel = select_prefix(&snap, SelectionPolicy::FixedCount(3));
        assert_eq!(sel.iter().map(|(p, _)| *p).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(select_prefix(&snap, SelectionPolicy::MaxBytes(0)).is_empty());
        for b in [0u64, 100, 250, 500, 800, 2000, 10_000] {
            let got = select_prefix(&snap, SelectionPolicy::MaxBytes(b)).len();
            // Oracle: largest k whose first k encodings fit.
            let entries = snap.entries();
            let best = (0..=entries.len())
                .filter(|&k| entries[..k].iter().map(|(_, t)| t.encode().len() as u64).sum::<u64>() <= b)
                .max()
                .unwrap();
            assert_eq!(got, best, "b={b}");
        }
    }

    #[test]
    fn honest_build_verifies_under_both_policies() {
        let ks = keys(3);
        let state = funded(&ks);
        let snap = queue_of(&ks, 9).snapshot();
        let prev = KIND.hash(b"prev");
        for policy in [
            SelectionPolicy::FixedCount(4),
            SelectionPolicy::FixedCount(50),
            SelectionPolicy::MaxBytes(700),
            SelectionPolicy::MaxBytes(100_000),
            SelectionPolicy::MaxBytes(0),
        ] {
            let p = build_proposal(&snap, policy, &prev, &state);
            assert_eq!(
                verify_proposal(&p, KIND, &prev, &snap.root(), policy, &state),
                Ok(()),
                "{policy}"
            );
            assert_eq!(build_proposal(&snap, policy, &prev, &state), p);
        }
    }

    #[test]
    fn swapped_processed_is_bad_ordering() {
        let ks = keys(3);
        let state = funded(&ks);
        let snap = queue_of(&ks, 6).snapshot();
        let prev = KIND.hash(b"prev");
        let policy = SelectionPolicy::FixedCount(6);
        let mut p = build_proposal(&snap, policy, &prev, &state);
        let i = (1..p.processed.len())
            .find(|&i| p.processed[i].body.inputs[0].address != p.processed[0].body.inputs[0].address)
            .unwrap();
        p.processed.swap(0, i);
        assert_eq!(
            verify_proposal(&p, KIND, &prev, &snap.root(), policy, &state),
            Err(Invalid::BadOrdering)
        );
    }

    #[test]
    fn skipping_a_position_is_bad_prefix() {
        let ks = keys(3);
        let state = funded(&ks);
        let snap = queue_of(&ks, 4).snapshot();
        let prev = KIND.hash(b"prev");
        let full = snap.disclose_all();
        // Withhold position 2 while disclosing 0, 1 and 3.
        let nodes = full
            .nodes
            .iter()
            .map(|n| match n {
                PartialNode::Leaf { position: 2, item: crate::outqueue::LeafItem::Tx(tx) } => {
                    PartialNode::Pruned(crate::outqueue::leaf_hash(KIND, 2, tx))
                }
                other => other.clone(),
            })
            .collect();
        let disclosure = PartialTree { nodes };
        let chosen: Vec<_> = snap
            .entries()
            .into_iter()
            .filter(|(p, _)| *p != 2)
            .map(|(_, t)| t)
            .collect();
        let (processed, rejected) = order_selection(chosen, &prev, &state);
        let p = OrderedProposal {
            processed,
            rejected,
            disclosure,
            outqueue_root: snap.root(),
        };
        assert_eq!(
            verify_proposal(&p, KIND, &prev, &snap.root(), SelectionPolicy::FixedCount(3), &state),
            Err(Invalid::BadPrefix)
        );
    }

    #[test]
    fn short_fixed_selection_needs_complete_disclosure() {
        let ks = keys(2);
        let state = funded(&ks);
        let snap = queue_of(&ks, 6).snapshot();
        let prev = KIND.hash(b"prev");
        // Honest for FixedCount(3), but claimed under FixedCount(5).
        let p = build_proposal(&snap, SelectionPolicy::FixedCount(3), &prev, &state);
        assert_eq!(
            verify_proposal(&p, KIND, &prev, &snap.root(), SelectionPolicy::FixedCount(5), &state),
            Err(Invalid::BadSelectionSize)
        );
        assert_eq!(
            verify_proposal(&p, KIND, &prev, &KIND.hash(b"other"), SelectionPolicy::FixedCount(3), &state),
            Err(Invalid::BadRoot)
        );
    }

    #[test]
    fn signed_proposal_codec_round_trip() {
        let ks = keys(3);
        let state = funded(&ks);
        let snap = queue_of(&ks, 7).snapshot();
        let prev = KIND.hash(b"prev");
        let p = build_proposal(&snap, SelectionPolicy::MaxBytes(900), &prev, &state);
        let sp = SignedProposal::sign(&ks[0], 3, prev, p);
        assert!(sp.verify_signature());
        let back = SignedProposal::decode(&sp.encode()).unwrap();
        assert_eq!(back, sp);
        assert!(back.verify_signature());
    }

    #[test]
    fn policy_strings() {
        assert_eq!("fixed:128".parse(), Ok(SelectionPolicy::FixedCount(128)));
        assert_eq!("bytes:4096".parse(), Ok(SelectionPolicy::MaxBytes(4096)));
        assert!("fixed".parse::<SelectionPolicy>().is_err());
        assert_eq!(SelectionPolicy::default().to_string(), "fixed:128");
    }
}
