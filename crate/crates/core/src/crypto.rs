//! Hashing, signatures and the cumulative sequence hash.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use ripemd::Ripemd160;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};

const MAX_DIGEST: usize = 32;

/// Hash function used for every digest in a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashKind {
    #[default]
    Ripemd160,
    Sha256,
}

impl HashKind {
    pub fn output_len(self) -> usize {
        match self {
            HashKind::Ripemd160 => 20,
            HashKind::Sha256 => 32,
        }
    }

    /// The all-zero digest: initial sequence hash, empty-queue root, genesis parent.
    pub fn zero(self) -> Digest {
        Digest {
            len: self.output_len() as u8,
            bytes: [0; MAX_DIGEST],
        }
    }

    /// Hashes the concatenation of `parts`.
    pub fn hash_parts(self, parts: &[&[u8]]) -> Digest {
        let mut bytes = [0u8; MAX_DIGEST];
        match self {
            HashKind::Ripemd160 => {
                let mut h = Ripemd160::new();
                for p in parts {
                    h.update(p);
                }
                bytes[..20].copy_from_slice(h.finalize().as_slice());
            }
            HashKind::Sha256 => {
                let mut h = Sha256::new();
                for p in parts {
                    h.update(p);
                }
                bytes.copy_from_slice(h.finalize().as_slice());
            }
        }
        Digest {
            len: self.output_len() as u8,
            bytes,
        }
    }

    pub fn hash(self, data: &[u8]) -> Digest {
        self.hash_parts(&[data])
    }

    /// Digest of the canonical encoding of `value`.
    pub fn hash_value<T: Encode + ?Sized>(self, value: &T) -> Digest {
        self.hash(&value.encode())
    }

    /// `H(prev ‖ value)`: one step of the cumulative sequence hash.
    pub fn chain(self, prev: &Digest, value: &[u8]) -> Digest {
        self.hash_parts(&[prev.as_bytes(), value])
    }

    /// Folds [`HashKind::chain`] over `values` starting from `start`.
    pub fn chain_fold<'a, I>(self, start: Digest, values: I) -> Digest
    where
        I: IntoIterator<Item = &'a [u8]>,
    {
        values
            .into_iter()
            .fold(start, |acc, v| self.chain(&acc, v))
    }
}

/// Fixed-length hash output (20 bytes for RIPEMD-160, 32 for SHA-256).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest {
    len: u8,
    bytes: [u8; MAX_DIGEST],
}

impl Digest {
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        if bytes.is_empty() || bytes.len() > MAX_DIGEST {
            return None;
        }
        let mut buf = [0u8; MAX_DIGEST];
        buf[..bytes.len()].copy_from_slice(bytes);
        Some(Self {
            len: bytes.len() as u8,
            bytes: buf,
        })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }

    pub fn is_zero(&self) -> bool {
        self.as_bytes().iter().all(|b| *b == 0)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Encode for Digest {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(self.as_bytes());
    }
}

impl Decode for Digest {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let bytes = r.bytes()?;
        match bytes.len() {
            20 | 32 => Ok(Digest::from_slice(&bytes).unwrap()),
            len => Err(DecodeError::BadLength { what: "digest", len }),
        }
    }
}

/// Ed25519 public key; doubles as node identity and account address.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First four bytes in hex, for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.short())
    }
}

impl Encode for PublicKey {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(&self.0);
    }
}

impl Decode for PublicKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self(r.fixed::<32>("public key")?))
    }
}

/// Detached Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

impl Encode for Signature {
    fn encode_to(&self, w: &mut Writer) {
        w.bytes(&self.0);
    }
}

impl Decode for Signature {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self(r.fixed::<64>("signature")?))
    }
}

/// Signing key plus its public identity.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
    public: PublicKey,
}

impl Keypair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        let public = PublicKey(signing.verifying_key().to_bytes());
        Self { signing, public }
    }

    /// Deterministic key derived from a label, for tests and simulations.
    pub fn from_label(label: &str) -> Self {
        let d = HashKind::Sha256.hash(label.as_bytes());
        Self::from_seed(d.as_bytes().try_into().unwrap())
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair").field("public", &self.public).finish()
    }
}

/// Entries kept by the verification cache before it is cleared.
const VERIFIED_CAPACITY: usize = 1 << 18;

/// SHA-256 of (key, signature, message) for every triple that verified.
/// Only successes are cached, and the key covers all three inputs, so a hit
/// is exactly as sound as re-running the check.
fn verified() -> &'static Mutex<HashSet<[u8; 32]>> {
    static CACHE: OnceLock<Mutex<HashSet<[u8; 32]>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Strict Ed25519 verification; malformed keys or signatures yield `false`.
pub fn verify(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let mut h = Sha256::new();
    h.update(public.0);
    h.update(signature.0);
    h.update(message);
    let tag: [u8; 32] = h.finalize().into();
    if verified().lock().expect("cache lock").contains(&tag) {
        return true;
    }
    if !verify_uncached(public, message, signature) {
        return false;
    }
    let mut cache = verified().lock().expect("cache lock");
    if cache.len() >= VERIFIED_CAPACITY {
        cache.clear();
    }
    cache.insert(tag);
    true
}

fn verify_uncached(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify_strict(message, &sig).is_ok()
}
