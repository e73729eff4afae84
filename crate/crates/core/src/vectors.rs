//! Golden vectors for the wire codec, hashes, signatures and ordering.
//! Every value is a pure function of fixed labelled keys, so a fresh
//! generation must reproduce the committed file byte for byte.

use serde::{Deserialize, Serialize};

use crate::codec::Encode;
use crate::crypto::{Digest, HashKind, Keypair};
use crate::ledger::{Genesis, Transaction};
use crate::outqueue::{inner_hash, leaf_hash, MerkleQueue, QueueSummary};
use crate::owac::{conn_id, Confirmation, Frame, OwacMessage};
use crate::proposal::{build_proposal, derive_seed, permute, prng_next, seed_signature, SelectionPolicy};
use crate::simnet::{run, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vector {
    pub name: String,
    /// What was encoded or hashed, in words.
    pub input: String,
    pub output: String,
}

fn v(name: &str, input: impl Into<String>, output: impl Into<String>) -> Vector {
    Vector {
        name: name.to_string(),
        input: input.into(),
        output: output.into(),
    }
}

fn sample_tx() -> Transaction {
    let alice = Keypair::from_label("alice");
    let bob = Keypair::from_label("bob");
    let mut tx = Transaction::transfer(&alice, bob.public(), 5, 0);
    tx.attach_receipt(&Keypair::from_label("acceptor"), 3);
    tx
}

/// All vectors in a fixed order.
pub fn generate() -> Vec<Vector> {
    let mut out = Vec::new();
    let alice = Keypair::from_label("alice");
    let bob = Keypair::from_label("bob");
    out.push(v("pubkey/alice", "Keypair::from_label(\"alice\")", alice.public().to_hex()));
    out.push(v("pubkey/bob", "Keypair::from_label(\"bob\")", bob.public().to_hex()));

    for kind in [HashKind::Ripemd160, HashKind::Sha256] {
        let tag = match kind {
            HashKind::Ripemd160 => "ripemd160",
            HashKind::Sha256 => "sha256",
        };
        out.push(v(&format!("{tag}/empty"), "\"\"", kind.hash(b"").to_hex()));
        out.push(v(&format!("{tag}/abc"), "\"abc\"", kind.hash(b"abc").to_hex()));
        let folded = kind.chain_fold(kind.zero(), [&b"a"[..], b"b", b"c"]);
        out.push(v(&format!("{tag}/chain_fold"), "zero, [\"a\", \"b\", \"c\"]", folded.to_hex()));
        let tx = sample_tx();
        out.push(v(&format!("{tag}/tx_id"), "alice->bob 5 nonce 0", tx.id(kind).0.to_hex()));
        let l0 = leaf_hash(kind, 0, &tx);
        let l1 = leaf_hash(kind, 1, &tx);
        out.push(v(&format!("{tag}/leaf"), "position 0, sample tx", l0.to_hex()));
        out.push(v(&format!("{tag}/inner"), "leaf 0, leaf 1", inner_hash(kind, &l0, &l1).to_hex()));
        let mut q = MerkleQueue::new(kind);
        for n in 0..3 {
            q.enqueue(Transaction::transfer(&alice, bob.public(), 1, n))
                .expect("distinct nonces");
        }
        out.push(v(&format!("{tag}/queue_root"), "alice->bob 1 nonces 0..3", q.root().to_hex()));
    }

    let tx = sample_tx();
    out.push(v("tx/encoding", "alice->bob 5 nonce 0, receipt seq 3", hex::encode(tx.encode())));

    let cid = conn_id(&alice.public(), &bob.public(), 0);
    out.push(v("conn_id", "alice, bob, session 0", hex::encode(&cid)));
    let m = OwacMessage::sign(&alice, &cid, 0, b"hello".to_vec(), -1);
    out.push(v("frame/message", "index 0, \"hello\", last_conf -1", hex::encode(Frame::Message(m).encode())));
    let h = HashKind::Ripemd160.chain(&HashKind::Ripemd160.zero(), b"hello");
    let summary = QueueSummary::sign(&bob, HashKind::Ripemd160.zero(), 0, HashKind::Ripemd160.zero(), 0);
    out.push(v("summary", "empty root, height 0, seq 0", hex::encode(summary.encode())));
    let c = Confirmation::sign(&bob, &cid, 0, h, summary.encode());
    out.push(v(
        "frame/confirmation",
        "index 0, H(zero ‖ \"hello\"), summary above",
        hex::encode(Frame::Confirmation(c).encode()),
    ));

    let mut state = 1u64;
    let draws: Vec<String> = (0..4)
        .map(|_| {
            state = prng_next(state);
            format!("{state:016x}")
        })
        .collect();
    out.push(v("prng", "xorshift64 from 1, four draws", draws.join(",")));
    let mut items: Vec<u8> = (0..8).collect();
    permute(&mut items, 42);
    out.push(v("permute", "0..8, seed 42", hex::encode(&items)));
    let prev = Digest::from_slice(&[0x11; 20]).expect("20-byte digest");
    let seed = derive_seed(&prev, &seed_signature(&tx));
    out.push(v("seed", "prev 0x11 * 20, receipt signature of sample tx", format!("{seed:016x}")));

    let carol = Keypair::from_label("carol");
    let genesis = Genesis {
        hash: HashKind::Ripemd160,
        balances: vec![(alice.public(), 100), (carol.public(), 100)],
    };
    let mut q = MerkleQueue::new(HashKind::Ripemd160);
    for n in 0..3 {
        let mut t = Transaction::transfer(&alice, bob.public(), 10, n);
        t.attach_receipt(&carol, n);
        q.enqueue(t).expect("distinct nonces");
        let mut t = Transaction::transfer(&carol, bob.public(), 10, n);
        t.attach_receipt(&alice, n);
        q.enqueue(t).expect("distinct nonces");
    }
    let proposal = build_proposal(&q.snapshot(), SelectionPolicy::FixedCount(6), &prev, &genesis.state());
    out.push(v("proposal", "six receipted transfers, fixed:6", hex::encode(proposal.encode())));

    let trace = run(&Scenario::default()).expect("default scenario is valid");
    out.push(v("simnet/default", "Scenario::default()", trace.digest().to_hex()));
    out
}

pub fn to_json(vectors: &[Vector]) -> String {
    let mut s = serde_json::to_string_pretty(vectors).expect("vectors serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_repeatable() {
        assert_eq!(generate(), generate());
    }

    #[test]
    fn known_hash_outputs() {
        let all = generate();
        let get = |n: &str| all.iter().find(|x| x.name == n).unwrap().output.clone();
        // Published test vectors for the two hash functions.
        assert_eq!(get("ripemd160/empty"), "9c1185a5c5e9fc54612808977ee8f548b2258d31");
        assert_eq!(get("ripemd160/abc"), "8eb208f7e05d987a9b044a8e98c6b087f15a0bfc");
        assert_eq!(
            get("sha256/abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
