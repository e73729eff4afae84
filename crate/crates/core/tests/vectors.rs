//! The committed golden vectors must match a fresh generation exactly.

use fairledger::vectors::{generate, to_json, Vector};

const GOLDEN: &str = include_str!("../testdata/vectors.json");

#[test]
fn golden_vectors_match() {
    let golden: Vec<Vector> = serde_json::from_str(GOLDEN).expect("golden file parses");
    let fresh = generate();
    assert_eq!(golden.len(), fresh.len(), "vector count changed");
    for (g, f) in golden.iter().zip(&fresh) {
        assert_eq!(g, f, "vector {} changed", g.name);
    }
    assert_eq!(to_json(&fresh), GOLDEN);
}
