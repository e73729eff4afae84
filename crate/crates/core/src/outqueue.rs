//! Authenticated outgoing queue.
//!
//! The queue is a Merkle AVL+ tree: values live only in leaves, keyed by
//! queue position, and every inner node hashes its two children:
//!
//! ```text
//! leaf  = H(0x00 ‖ encode(position) ‖ encode(tx))
//! inner = H(0x01 ‖ left ‖ right)
//! empty = zero digest
//! ```
//!
//! Nodes are immutable and shared through `Arc`, so taking a snapshot is a
//! pointer copy and later mutations never disturb it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{verify, Digest, HashKind, Keypair, PublicKey, Signature};
use crate::ledger::{Block, Transaction, TxId};

const LEAF_TAG: u8 = 0x00;
const INNER_TAG: u8 = 0x01;
const DOMAIN_SUMMARY: u8 = 0x30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("position {0} is not in the queue")]
    Absent(u64),
    #[error("prefix of {requested} requested from a queue of {len}")]
    Range { requested: usize, len: usize },
}

#[derive(Debug)]
enum Node {
    Leaf {
        position: u64,
        tx: Arc<Transaction>,
        hash: Digest,
    },
    Inner {
        height: u32,
        size: usize,
        min: u64,
        left: Arc<Node>,
        right: Arc<Node>,
        hash: Digest,
    },
}

impl Node {
    fn hash(&self) -> Digest {
        match self {
            Node::Leaf { hash, .. } | Node::Inner { hash, .. } => *hash,
        }
    }

    /// Levels below and including this node; a leaf has height 1.
    fn height(&self) -> u32 {
        match self {
            Node::Leaf { .. } => 1,
            Node::Inner { height, .. } => *height,
        }
    }

    fn size(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Inner { size, .. } => *size,
        }
    }

    fn min(&self) -> u64 {
        match self {
            Node::Leaf { position, .. } => *position,
            Node::Inner { min, .. } => *min,
        }
    }

    fn children(&self) -> (&Arc<Node>, &Arc<Node>) {
        match self {
            Node::Inner { left, right, .. } => (left, right),
            Node::Leaf { .. } => unreachable!("leaf has no children"),
        }
    }
}

pub fn leaf_hash(kind: HashKind, position: u64, tx: &Transaction) -> Digest {
    let mut w = Writer::new();
    w.u8(LEAF_TAG).u64(position).value(tx);
    kind.hash(&w.finish())
}

pub fn inner_hash(kind: HashKind, left: &Digest, right: &Digest) -> Digest {
    kind.hash_parts(&[&[INNER_TAG], left.as_bytes(), right.as_bytes()])
}

fn leaf(kind: HashKind, position: u64, tx: Arc<Transaction>) -> Arc<Node> {
    let hash = leaf_hash(kind, position, &tx);
    Arc::new(Node::Leaf { position, tx, hash })
}

fn inner(kind: HashKind, left: Arc<Node>, right: Arc<Node>) -> Arc<Node> {
    Arc::new(Node::Inner {
        height: 1 + left.height().max(right.height()),
        size: left.size() + right.size(),
        min: left.min(),
        hash: inner_hash(kind, &left.hash(), &right.hash()),
        left,
        right,
    })
}

/// Joins two subtrees whose heights differ by at most two, rotating as needed.
fn balanced(kind: HashKind, left: Arc<Node>, right: Arc<Node>) -> Arc<Node> {
    let (hl, hr) = (left.height(), right.height());
    if hl > hr + 1 {
        let (ll, lr) = left.children();
        if ll.height() >= lr.height() {
            inner(kind, ll.clone(), inner(kind, lr.clone(), right))
        } else {
            let (lrl, lrr) = lr.children();
            inner(
                kind,
                inner(kind, ll.clone(), lrl.clone()),
                inner(kind, lrr.clone(), right),
            )
        }
    } else if hr > hl + 1 {
        let (rl, rr) = right.children();
        if rr.height() >= rl.height() {
            inner(kind, inner(kind, left, rl.clone()), rr.clone())
        } else {
            let (rll, rlr) = rl.children();
            inner(
                kind,
                inner(kind, left, rll.clone()),
                inner(kind, rlr.clone(), rr.clone()),
            )
        }
    } else {
        inner(kind, left, right)
    }
}

fn insert(kind: HashKind, node: &Arc<Node>, position: u64, tx: Arc<Transaction>) -> Arc<Node> {
    match &**node {
        Node::Leaf { position: p, .. } => {
            let fresh = leaf(kind, position, tx);
            if position < *p {
                inner(kind, fresh, node.clone())
            } else {
                inner(kind, node.clone(), fresh)
            }
        }
        Node::Inner { left, right, .. } => {
            if position < right.min() {
                balanced(kind, insert(kind, left, position, tx), right.clone())
            } else {
                balanced(kind, left.clone(), insert(kind, right, position, tx))
            }
        }
    }
}

/// Removes `position`; `None` when the subtree becomes empty.
fn remove(kind: HashKind, node: &Arc<Node>, position: u64) -> Option<Arc<Node>> {
    match &**node {
        Node::Leaf { position: p, .. } => {
            if *p == position {
                None
            } else {
                Some(node.clone())
            }
        }
        Node::Inner { left, right, .. } => {
            if position < right.min() {
                match remove(kind, left, position) {
                    None => Some(right.clone()),
                    Some(l) => Some(balanced(kind, l, right.clone())),
                }
            } else {
                match remove(kind, right, position) {
                    None => Some(left.clone()),
                    Some(r) => Some(balanced(kind, left.clone(), r)),
                }
            }
        }
    }
}

fn collect_leaves<'a>(node: &'a Node, out: &mut Vec<(u64, &'a Arc<Transaction>)>, limit: usize) {
    if out.len() >= limit {
        return;
    }
    match node {
        Node::Leaf { position, tx, .. } => out.push((*position, tx)),
        Node::Inner { left, right, .. } => {
            collect_leaves(left, out, limit);
            collect_leaves(right, out, limit);
        }
    }
}

/// Immutable point-in-time view of a queue.
#[derive(Debug, Clone)]
pub struct QueueSnapshot {
    kind: HashKind,
    root: Option<Arc<Node>>,
}

impl QueueSnapshot {
    pub fn hash_kind(&self) -> HashKind {
        self.kind
    }

    pub fn root(&self) -> Digest {
        self.root
            .as_ref()
            .map_or_else(|| self.kind.zero(), |n| n.hash())
    }

    pub fn len(&self) -> usize {
        self.root.as_ref().map_or(0, |n| n.size())
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    /// Levels in the tree: 0 when empty, 1 for a single leaf.
    pub fn height(&self) -> u32 {
        self.root.as_ref().map_or(0, |n| n.height())
    }

    /// The first `k` entries in position order.
    pub fn first(&self, k: usize) -> Vec<(u64, Transaction)> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            collect_leaves(root, &mut out, k);
        }
        out.into_iter().map(|(p, t)| (p, (**t).clone())).collect()
    }

    pub fn entries(&self) -> Vec<(u64, Transaction)> {
        self.first(usize::MAX)
    }

    pub fn prove_membership(&self, position: u64) -> Result<MembershipProof, QueueError> {
        let mut node = self.root.as_ref().ok_or(QueueError::Absent(position))?;
        let mut path = Vec::new();
        loop {
            match &**node {
                Node::Leaf { position: p, tx, .. } => {
                    if *p != position {
                        return Err(QueueError::Absent(position));
                    }
                    path.reverse();
                    return Ok(MembershipProof {
                        position,
                        tx: (**tx).clone(),
                        path,
                    });
                }
                Node::Inner { left, right, .. } => {
                    if position < right.min() {
                        path.push(PathStep::Right(right.hash()));
                        node = left;
                    } else {
                        path.push(PathStep::Left(left.hash()));
                        node = right;
                    }
                }
            }
        }
    }

    /// Disclosure of the first `k` leaves plus the digests needed to tie them
    /// to the root.
    pub fn disclose_prefix(&self, k: usize) -> Result<PartialTree, QueueError> {
        let len = self.len();
        if k > len {
            return Err(QueueError::Range { requested: k, len });
        }
        let mut nodes = Vec::new();
        if let Some(root) = &self.root {
            let mut remaining = k;
            disclose(root, &mut remaining, &mut nodes);
        }
        Ok(PartialTree { nodes })
    }

    /// Full disclosure of every leaf.
    pub fn disclose_all(&self) -> PartialTree {
        self.disclose_prefix(self.len()).expect("full prefix is in range")
    }

    /// Disclosure of exactly the leaves at `positions`; absent positions are
    /// ignored. Used to exhibit arbitrary subsets, prefix or not.
    pub fn disclose_positions(&self, positions: &BTreeSet<u64>) -> PartialTree {
        let mut nodes = Vec::new();
        if let Some(root) = &self.root {
            disclose_set(root, positions, &mut nodes);
        }
        PartialTree { nodes }
    }
}

fn max_position(node: &Node) -> u64 {
    match node {
        Node::Leaf { position, .. } => *position,
        Node::Inner { right, .. } => max_position(right),
    }
}

fn disclose_set(node: &Node, positions: &BTreeSet<u64>, out: &mut Vec<PartialNode>) {
    let wanted = |n: &Node| positions.range(n.min()..=max_position(n)).next().is_some();
    if !wanted(node) {
        out.push(PartialNode::Pruned(node.hash()));
        return;
    }
    match node {
        Node::Leaf { position, tx, .. } => out.push(PartialNode::Leaf {
            position: *position,
            item: LeafItem::Tx((**tx).clone()),
        }),
        Node::Inner { left, right, .. } => {
            if wanted(right) {
                out.push(PartialNode::Inner);
                disclose_set(left, positions, out);
                disclose_set(right, positions, out);
            } else {
                out.push(PartialNode::InnerPrunedRight(right.hash()));
                disclose_set(left, positions, out);
            }
        }
    }
}

fn disclose(node: &Node, remaining: &mut usize, out: &mut Vec<PartialNode>) {
    if *remaining == 0 {
        out.push(PartialNode::Pruned(node.hash()));
        return;
    }
    match node {
        Node::Leaf { position, tx, .. } => {
            out.push(PartialNode::Leaf {
                position: *position,
                item: LeafItem::Tx((**tx).clone()),
            });
            *remaining -= 1;
        }
        Node::Inner { left, right, .. } => {
            if *remaining <= left.size() {
                out.push(PartialNode::InnerPrunedRight(right.hash()));
                disclose(left, remaining, out);
            } else {
                out.push(PartialNode::Inner);
                disclose(left, remaining, out);
                disclose(right, remaining, out);
            }
        }
    }
}

/// Merkle-authenticated map from queue position to transaction.
#[derive(Debug, Clone)]
pub struct MerkleQueue {
    kind: HashKind,
    root: Option<Arc<Node>>,
    next_position: u64,
    by_tx: HashMap<TxId, u64>,
    order: BTreeMap<u64, TxId>,
    last_summary_seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Duplicate;

impl MerkleQueue {
    pub fn new(kind: HashKind) -> Self {
        Self {
            kind,
            root: None,
            next_position: 0,
            by_tx: HashMap::new(),
            order: BTreeMap::new(),
            last_summary_seq: None,
        }
    }

    pub fn hash_kind(&self) -> HashKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn next_position(&self) -> u64 {
        self.next_position
    }

    pub fn contains(&self, id: &TxId) -> bool {
        self.by_tx.contains_key(id)
    }

    pub fn position_of(&self, id: &TxId) -> Option<u64> {
        self.by_tx.get(id).copied()
    }

    pub fn root(&self) -> Digest {
        self.snapshot().root()
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            kind: self.kind,
            root: self.root.clone(),
        }
    }

    /// Ids in position order.
    pub fn ids(&self) -> impl Iterator<Item = (u64, TxId)> + '_ {
        self.order.iter().map(|(p, id)| (*p, *id))
    }

    /// Appends `tx` at the next position. Positions are never reused.
    pub fn enqueue(&mut self, tx: Transaction) -> Result<u64, Duplicate> {
        let id = tx.id(self.kind);
        if self.by_tx.contains_key(&id) {
            return Err(Duplicate);
        }
        let position = self.next_position;
        self.insert_at(position, id, Arc::new(tx));
        self.next_position += 1;
        Ok(position)
    }

    fn insert_at(&mut self, position: u64, id: TxId, tx: Arc<Transaction>) {
        self.root = Some(match &self.root {
            None => leaf(self.kind, position, tx),
            Some(root) => insert(self.kind, root, position, tx),
        });
        self.by_tx.insert(id, position);
        self.order.insert(position, id);
    }

    pub fn remove(&mut self, id: &TxId) -> Option<u64> {
        let position = self.by_tx.remove(id)?;
        self.order.remove(&position);
        let root = self.root.as_ref().expect("indexed entry implies non-empty tree");
        self.root = remove(self.kind, root, position);
        Some(position)
    }

    /// Removes exactly the transactions included in `block`, whatever their
    /// disposition. Transactions merely invalidated by the block stay queued.
    pub fn remove_committed(&mut self, block: &Block) -> usize {
        block
            .txs
            .iter()
            .filter(|t| self.remove(&t.tx.id(self.kind)).is_some())
            .count()
    }

    /// Swaps the transactions stored at two positions. Only misbehaving nodes
    /// do this; it exists so audits can be exercised against it.
    pub fn swap_positions(&mut self, a: u64, b: u64) -> Result<(), QueueError> {
        let snap = self.snapshot();
        let ta = snap.prove_membership(a)?.tx;
        let tb = snap.prove_membership(b)?.tx;
        let (ia, ib) = (ta.id(self.kind), tb.id(self.kind));
        self.remove(&ia);
        self.remove(&ib);
        self.insert_at(a, ib, Arc::new(tb));
        self.insert_at(b, ia, Arc::new(ta));
        Ok(())
    }

    /// Signed snapshot of the current root and committed-block reference.
    ///
    /// Panics if `seq` does not exceed every previously issued sequence number.
    pub fn summarize(
        &mut self,
        key: &Keypair,
        block_height: u64,
        block_hash: Digest,
        seq: u64,
    ) -> QueueSummary {
        assert!(
            self.last_summary_seq.map_or(true, |last| seq > last),
            "summary sequence numbers must increase"
        );
        self.last_summary_seq = Some(seq);
        QueueSummary::sign(key, self.root(), block_height, block_hash, seq)
    }

    /// Checks AVL balance, cached sizes and hashes, and that the side indexes
    /// match the tree. Used by tests.
    pub fn check_structure(&self) -> Result<(), String> {
        if let Some(root) = &self.root {
            check_node(self.kind, root)?;
        }
        let leaves = self.snapshot().entries();
        if leaves.len() != self.order.len() || leaves.len() != self.by_tx.len() {
            return Err("index size mismatch".into());
        }
        for ((p, tx), (op, oid)) in leaves.iter().zip(self.order.iter()) {
            let id = tx.id(self.kind);
            if p != op || id != *oid || self.by_tx.get(&id) != Some(p) {
                return Err(format!("index mismatch at position {p}"));
            }
        }
        Ok(())
    }
}

fn check_node(kind: HashKind, node: &Node) -> Result<(u32, usize, u64, u64), String> {
    match node {
        Node::Leaf { position, tx, hash } => {
            if *hash != leaf_hash(kind, *position, tx) {
                return Err(format!("stale leaf hash at {position}"));
            }
            Ok((1, 1, *position, *position))
        }
        Node::Inner {
            height,
            size,
            min,
            left,
            right,
            hash,
        } => {
            let (hl, sl, minl, maxl) = check_node(kind, left)?;
            let (hr, sr, minr, maxr) = check_node(kind, right)?;
            if hl.abs_diff(hr) > 1 {
                return Err(format!("unbalanced node at {min}"));
            }
            if maxl >= minr {
                return Err(format!("keys out of order at {min}"));
            }
            if *height != 1 + hl.max(hr) || *size != sl + sr || *min != minl {
                return Err(format!("stale metadata at {min}"));
            }
            if *hash != inner_hash(kind, &left.hash(), &right.hash()) {
                return Err(format!("stale inner hash at {min}"));
            }
            Ok((*height, *size, minl, maxr))
        }
    }
}

/// Sibling digest on the path from a leaf to the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathStep {
    Left(Digest),
    Right(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipProof {
    pub position: u64,
    pub tx: Transaction,
    /// Siblings ordered from the leaf upward.
    pub path: Vec<PathStep>,
}

pub fn verify_membership(kind: HashKind, root: &Digest, proof: &MembershipProof) -> bool {
    let mut h = leaf_hash(kind, proof.position, &proof.tx);
    for step in &proof.path {
        h = match step {
            PathStep::Left(sib) => inner_hash(kind, sib, &h),
            PathStep::Right(sib) => inner_hash(kind, &h, sib),
        };
    }
    h == *root
}

/// A disclosed leaf holds the transaction itself or, inside a block, its index
/// in the block's transaction list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeafItem {
    Tx(Transaction),
    BlockIndex(u32),
}

/// One entry of a pre-order partial tree listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartialNode {
    Leaf { position: u64, item: LeafItem },
    /// Subtree withheld; only its root digest is given.
    Pruned(Digest),
    /// Inner node; both children follow.
    Inner,
    /// Inner node whose right subtree is withheld; only the left child follows.
    InnerPrunedRight(Digest),
}

/// Partial Merkle tree: disclosed leaves plus digests of withheld subtrees.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartialTree {
    pub nodes: Vec<PartialNode>,
}

/// What a partial tree proves once recombined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recombined {
    pub root: Digest,
    pub leaves: Vec<(u64, Transaction)>,
    /// Every disclosed leaf lies to the left of every withheld subtree.
    pub is_prefix: bool,
    /// Nothing was withheld.
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PartialTreeError {
    #[error("partial tree listing is truncated or has trailing nodes")]
    Shape,
    #[error("leaf refers to a block index that cannot be resolved")]
    Unresolved,
}

struct SubtreeInfo {
    hash: Digest,
    leaves: usize,
    pruned: bool,
}

impl PartialTree {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Recomputes the root and collects leaves. Block-index leaves are looked
    /// up in `block_txs`.
    pub fn recombine(
        &self,
        kind: HashKind,
        block_txs: &[Transaction],
    ) -> Result<Recombined, PartialTreeError> {
        if self.nodes.is_empty() {
            return Ok(Recombined {
                root: kind.zero(),
                leaves: Vec::new(),
                is_prefix: true,
                complete: true,
            });
        }
        let mut cursor = 0;
        let mut leaves = Vec::new();
        let mut is_prefix = true;
        let info = self.walk(kind, block_txs, &mut cursor, &mut leaves, &mut is_prefix)?;
        if cursor != self.nodes.len() {
            return Err(PartialTreeError::Shape);
        }
        if leaves.windows(2).any(|w| w[0].0 >= w[1].0) {
            is_prefix = false;
        }
        Ok(Recombined {
            root: info.hash,
            leaves,
            is_prefix,
            complete: !info.pruned,
        })
    }

    fn walk(
        &self,
        kind: HashKind,
        block_txs: &[Transaction],
        cursor: &mut usize,
        leaves: &mut Vec<(u64, Transaction)>,
        is_prefix: &mut bool,
    ) -> Result<SubtreeInfo, PartialTreeError> {
        let node = self.nodes.get(*cursor).ok_or(PartialTreeError::Shape)?;
        *cursor += 1;
        match node {
            PartialNode::Leaf { position, item } => {
                let tx = match item {
                    LeafItem::Tx(tx) => tx.clone(),
                    LeafItem::BlockIndex(i) => block_txs
                        .get(*i as usize)
                        .cloned()
                        .ok_or(PartialTreeError::Unresolved)?,
                };
                let hash = leaf_hash(kind, *position, &tx);
                leaves.push((*position, tx));
                Ok(SubtreeInfo {
                    hash,
                    leaves: 1,
                    pruned: false,
                })
            }
            PartialNode::Pruned(d) => Ok(SubtreeInfo {
                hash: *d,
                leaves: 0,
                pruned: true,
            }),
            PartialNode::Inner => {
                let l = self.walk(kind, block_txs, cursor, leaves, is_prefix)?;
                let r = self.walk(kind, block_txs, cursor, leaves, is_prefix)?;
                if l.pruned && r.leaves > 0 {
                    *is_prefix = false;
                }
                Ok(SubtreeInfo {
                    hash: inner_hash(kind, &l.hash, &r.hash),
                    leaves: l.leaves + r.leaves,
                    pruned: l.pruned || r.pruned,
                })
            }
            PartialNode::InnerPrunedRight(right) => {
                let l = self.walk(kind, block_txs, cursor, leaves, is_prefix)?;
                Ok(SubtreeInfo {
                    hash: inner_hash(kind, &l.hash, right),
                    leaves: l.leaves,
                    pruned: true,
                })
            }
        }
    }

    /// Replaces disclosed transactions with their index in `block_txs`
    /// wherever one is found.
    pub fn with_block_indexes(&self, kind: HashKind, block_txs: &[Transaction]) -> PartialTree {
        let index: HashMap<TxId, u32> = block_txs
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id(kind), i as u32))
            .collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                PartialNode::Leaf {
                    position,
                    item: LeafItem::Tx(tx),
                } => match index.get(&tx.id(kind)) {
                    Some(i) if block_txs[*i as usize] == *tx => PartialNode::Leaf {
                        position: *position,
                        item: LeafItem::BlockIndex(*i),
                    },
                    _ => n.clone(),
                },
                other => other.clone(),
            })
            .collect();
        PartialTree { nodes }
    }

    /// Inverse of [`Self::with_block_indexes`]; `None` if an index is out of range.
    pub fn resolve(&self, block_txs: &[Transaction]) -> Option<PartialTree> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                PartialNode::Leaf {
                    position,
                    item: LeafItem::BlockIndex(i),
                } => block_txs.get(*i as usize).map(|tx| PartialNode::Leaf {
                    position: *position,
                    item: LeafItem::Tx(tx.clone()),
                }),
                other => Some(other.clone()),
            })
            .collect::<Option<Vec<_>>>()?;
        Some(PartialTree { nodes })
    }
}

/// Accepts iff `pt` recombines to `root`, its leaves are the leftmost leaves
/// of the tree in strictly increasing position order, and they equal
/// `expected` in order.
pub fn verify_prefix(
    kind: HashKind,
    root: &Digest,
    pt: &PartialTree,
    expected: &[Transaction],
) -> bool {
    let Ok(r) = pt.recombine(kind, &[]) else {
        return false;
    };
    r.root == *root
        && r.is_prefix
        && r.leaves.len() == expected.len()
        && r.leaves.iter().map(|(_, t)| t).eq(expected.iter())
}

/// Signed snapshot reference a node attaches to its confirmations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueSummary {
    pub root: Digest,
    pub block_height: u64,
    pub block_hash: Digest,
    pub summary_seq: u64,
    pub node_id: PublicKey,
    pub signature: Signature,
}

impl QueueSummary {
    fn payload(
        root: &Digest,
        block_height: u64,
        block_hash: &Digest,
        seq: u64,
        node: &PublicKey,
    ) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(DOMAIN_SUMMARY)
            .value(root)
            .u64(block_height)
            .value(block_hash)
            .u64(seq)
            .value(node);
        w.finish()
    }

    pub fn sign(
        key: &Keypair,
        root: Digest,
        block_height: u64,
        block_hash: Digest,
        summary_seq: u64,
    ) -> Self {
        let node_id = key.public();
        let signature = key.sign(&Self::payload(
            &root,
            block_height,
            &block_hash,
            summary_seq,
            &node_id,
        ));
        Self {
            root,
            block_height,
            block_hash,
            summary_seq,
            node_id,
            signature,
        }
    }

    pub fn verify_signature(&self) -> bool {
        verify(
            &self.node_id,
            &Self::payload(
                &self.root,
                self.block_height,
                &self.block_hash,
                self.summary_seq,
                &self.node_id,
            ),
            &self.signature,
        )
    }
}

// ---------------------------------------------------------------------------
// Encoding

impl Encode for PathStep {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            PathStep::Left(d) => w.u8(0).value(d),
            PathStep::Right(d) => w.u8(1).value(d),
        };
    }
}

impl Decode for PathStep {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(PathStep::Left(r.value()?)),
            1 => Ok(PathStep::Right(r.value()?)),
            tag => Err(DecodeError::BadTag { what: "path step", tag }),
        }
    }
}

impl Encode for MembershipProof {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.position).value(&self.tx).list(&self.path);
    }
}

impl Decode for MembershipProof {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            position: r.u64()?,
            tx: r.value()?,
            path: r.list()?,
        })
    }
}

impl Encode for PartialNode {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            PartialNode::Leaf { position, item } => {
                w.u8(0).u64(*position);
                match item {
                    LeafItem::Tx(tx) => w.u8(0).value(tx),
                    LeafItem::BlockIndex(i) => w.u8(1).u64(*i as u64),
                };
            }
            PartialNode::Pruned(d) => {
                w.u8(1).value(d);
            }
            PartialNode::Inner => {
                w.u8(2);
            }
            PartialNode::InnerPrunedRight(d) => {
                w.u8(3).value(d);
            }
        }
    }
}

impl Decode for PartialNode {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => {
                let position = r.u64()?;
                let item = match r.u8()? {
                    0 => LeafItem::Tx(r.value()?),
                    1 => {
                        let i = r.u64()?;
                        let i = u32::try_from(i).map_err(|_| DecodeError::BadLength {
                            what: "block index",
                            len: i as usize,
                        })?;
                        LeafItem::BlockIndex(i)
                    }
                    tag => return Err(DecodeError::BadTag { what: "leaf item", tag }),
                };
                Ok(PartialNode::Leaf { position, item })
            }
            1 => Ok(PartialNode::Pruned(r.value()?)),
            2 => Ok(PartialNode::Inner),
            3 => Ok(PartialNode::InnerPrunedRight(r.value()?)),
            tag => Err(DecodeError::BadTag { what: "partial node", tag }),
        }
    }
}

impl Encode for PartialTree {
    fn encode_to(&self, w: &mut Writer) {
        w.list(&self.nodes);
    }
}

impl Decode for PartialTree {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { nodes: r.list()? })
    }
}

impl Encode for QueueSummary {
    fn encode_to(&self, w: &mut Writer) {
        w.value(&self.root)
            .u64(self.block_height)
            .value(&self.block_hash)
            .u64(self.summary_seq)
            .value(&self.node_id)
            .value(&self.signature);
    }
}

impl Decode for QueueSummary {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            root: r.value()?,
            block_height: r.u64()?,
            block_hash: r.value()?,
            summary_seq: r.u64()?,
            node_id: r.value()?,
            signature: r.value()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Disposition, BlockTx};

    const KIND: HashKind = HashKind::Ripemd160;

    fn txs(n: usize) -> Vec<Transaction> {
        let a = Keypair::from_label("alice");
        let b = Keypair::from_label("bob");
        (0..n as u64)
            .map(|i| Transaction::transfer(&a, b.public(), 1, i))
            .collect()
    }

    fn queue(n: usize) -> MerkleQueue {
        let mut q = MerkleQueue::new(KIND);
        for tx in txs(n) {
            q.enqueue(tx).unwrap();
        }
        q
    }

    #[test]
    fn empty_root_is_zero() {
        assert_eq!(MerkleQueue::new(KIND).root(), KIND.zero());
    }

    #[test]
    fn single_entry_root_is_leaf_digest() {
        let tx = txs(1).remove(0);
        let mut q = MerkleQueue::new(KIND);
        q.enqueue(tx.clone()).unwrap();
        assert_eq!(q.root(), leaf_hash(KIND, 0, &tx));
    }

    #[test]
    fn duplicate_enqueue_leaves_root_unchanged() {
        let tx = txs(1).remove(0);
        let mut q = MerkleQueue::new(KIND);
        q.enqueue(tx.clone()).unwrap();
        let root = q.root();
        assert_eq!(q.enqueue(tx), Err(Duplicate));
        assert_eq!(q.root(), root);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn thousand_enqueues_respect_avl_height_bound() {
        let q = queue(1000);
        q.check_structure().unwrap();
        let bound = 1.44 * (1001f64).log2() + 2.0;
        assert!((q.snapshot().height() as f64) <= bound);
    }

    #[test]
    fn remove_committed_drops_only_included() {
        let all = txs(5);
        let mut q = MerkleQueue::new(KIND);
        for tx in &all {
            q.enqueue(tx.clone()).unwrap();
        }
        let block = Block {
            height: 1,
            prev_hash: KIND.zero(),
            proposer: Keypair::from_label("p").public(),
            txs: [0, 2, 4]
                .iter()
                .map(|&i| BlockTx {
                    tx: all[i].clone(),
                    disposition: Disposition::Processed,
                })
                .collect(),
            outqueue_root: KIND.zero(),
            disclosure: PartialTree::default(),
        };
        assert_eq!(q.remove_committed(&block), 3);
        assert_eq!(q.len(), 2);
        q.check_structure().unwrap();
        let snap = q.snapshot();
        assert!(snap.prove_membership(0).is_err());
        assert!(snap.prove_membership(1).is_ok());
        assert_eq!(q.next_position(), 5);
    }

    #[test]
    fn summary_changes_after_enqueue() {
        let key = Keypair::from_label("node");
        let mut q = queue(3);
        let s1 = q.summarize(&key, 0, KIND.zero(), 1);
        let s2 = q.summarize(&key, 0, KIND.zero(), 2);
        assert_eq!(s1.root, s2.root);
        assert!(s2.summary_seq > s1.summary_seq);
        q.enqueue(txs(4).pop().unwrap()).unwrap();
        let s3 = q.summarize(&key, 0, KIND.zero(), 3);
        assert_ne!(s3.root, s2.root);
        assert!(s3.verify_signature());
    }

    #[test]
    #[should_panic(expected = "summary sequence numbers must increase")]
    fn non_monotone_summary_seq_panics() {
        let key = Keypair::from_label("node");
        let mut q = queue(1);
        q.summarize(&key, 0, KIND.zero(), 5);
        q.summarize(&key, 0, KIND.zero(), 5);
    }

    #[test]
    fn summary_matches_rebuild_from_dump() {
        let mut q = queue(10);
        let all = txs(10);
        q.remove(&all[3].id(KIND));
        let s = q.summarize(&Keypair::from_label("n"), 0, KIND.zero(), 0);
        // Rebuild by replaying the same operations on a fresh queue.
        let mut fresh = MerkleQueue::new(KIND);
        for tx in &all {
            fresh.enqueue(tx.clone()).unwrap();
        }
        fresh.remove(&all[3].id(KIND));
        assert_eq!(fresh.root(), s.root);
        // And the full dump recombines to the summarized root.
        let r = q.snapshot().disclose_all().recombine(KIND, &[]).unwrap();
        assert_eq!(r.root, s.root);
        assert_eq!(r.leaves.len(), 9);
    }

    #[test]
    fn membership_proofs_for_every_position() {
        let q = queue(64);
        let snap = q.snapshot();
        let root = snap.root();
        for p in 0..64 {
            let proof = snap.prove_membership(p).unwrap();
            assert!(verify_membership(KIND, &root, &proof));
            assert!(proof.path.len() as u32 <= snap.height());
        }
    }

    #[test]
    fn membership_proof_bound_to_root() {
        let mut q = queue(8);
        let old = q.snapshot();
        q.enqueue(txs(9).pop().unwrap()).unwrap();
        let proof = old.prove_membership(2).unwrap();
        assert!(!verify_membership(KIND, &q.root(), &proof));
        assert_eq!(old.prove_membership(99), Err(QueueError::Absent(99)));
    }

    #[test]
    fn full_disclosure_verifies() {
        let q = queue(13);
        let snap = q.snapshot();
        let pt = snap.disclose_prefix(13).unwrap();
        let expected: Vec<_> = snap.entries().into_iter().map(|(_, t)| t).collect();
        assert!(verify_prefix(KIND, &snap.root(), &pt, &expected));
        assert!(pt.recombine(KIND, &[]).unwrap().complete);
    }

    #[test]
    fn swapped_expected_tx_fails_prefix_check() {
        let q = queue(10);
        let snap = q.snapshot();
        let pt = snap.disclose_prefix(4).unwrap();
        let mut expected: Vec<_> = snap.first(4).into_iter().map(|(_, t)| t).collect();
        assert!(verify_prefix(KIND, &snap.root(), &pt, &expected));
        expected.swap(1, 2);
        assert!(!verify_prefix(KIND, &snap.root(), &pt, &expected));
    }

    #[test]
    fn prefix_sweep_verifies_within_size_bound() {
        let q = queue(32);
        let snap = q.snapshot();
        for k in 0..=32 {
            let pt = snap.disclose_prefix(k).unwrap();
            let expected: Vec<_> = snap.first(k).into_iter().map(|(_, t)| t).collect();
            assert!(verify_prefix(KIND, &snap.root(), &pt, &expected), "k={k}");
            assert!(pt.node_count() <= 3 * k + snap.height() as usize, "k={k}");
        }
        assert_eq!(
            snap.disclose_prefix(33),
            Err(QueueError::Range { requested: 33, len: 32 })
        );
    }

    #[test]
    fn position_disclosure_agrees_with_prefix_disclosure() {
        let snap = queue(11).snapshot();
        let positions: Vec<u64> = snap.entries().iter().map(|(p, _)| *p).collect();
        for k in 0..=positions.len() {
            let set: BTreeSet<u64> = positions[..k].iter().copied().collect();
            assert_eq!(snap.disclose_positions(&set), snap.disclose_prefix(k).unwrap(), "k={k}");
        }
        let gap: BTreeSet<u64> = [positions[0], positions[2]].into();
        let r = snap.disclose_positions(&gap).recombine(KIND, &[]).unwrap();
        assert_eq!(r.root, snap.root());
        assert!(!r.is_prefix);
    }

    #[test]
    fn block_index_substitution_round_trips() {
        let q = queue(6);
        let snap = q.snapshot();
        let pt = snap.disclose_prefix(3).unwrap();
        let mut block_txs: Vec<_> = snap.first(3).into_iter().map(|(_, t)| t).collect();
        block_txs.reverse();
        let compact = pt.with_block_indexes(KIND, &block_txs);
        assert!(compact.encode().len() < pt.encode().len());
        let r = compact.recombine(KIND, &block_txs).unwrap();
        assert_eq!(r.root, snap.root());
        assert!(matches!(
            compact.recombine(KIND, &[]),
            Err(PartialTreeError::Unresolved)
        ));
    }

    #[test]
    fn partial_tree_codec_round_trip() {
        let pt = queue(9).snapshot().disclose_prefix(4).unwrap();
        assert_eq!(PartialTree::decode(&pt.encode()).unwrap(), pt);
    }

    #[test]
    fn swap_positions_changes_root_but_keeps_structure() {
        let mut q = queue(6);
        let before = q.root();
        q.swap_positions(1, 4).unwrap();
        q.check_structure().unwrap();
        assert_ne!(q.root(), before);
        assert_eq!(q.len(), 6);
    }
}
