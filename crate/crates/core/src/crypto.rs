//! Message identifiers and shard authentication.
//!
//! Message ids are keccak-256 digests of the message value. Shard signatures
//! go through the [`SignatureScheme`] trait; the bundled [`MacScheme`] is a
//! keyed BLAKE3 MAC backed by a registry of per-peer verification keys that
//! the simulator fills once at setup. That is enough when the adversary is a
//! protocol participant holding only its own key, and can be swapped for a
//! real signature scheme without touching the protocol code.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use sha3::{Digest as _, Keccak256};
use thiserror::Error;

/// Peer identifier (8 bytes on the wire).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PeerId(pub u64);

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 32-byte keccak-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First eight hex digits, for logs and CSV columns.
    pub fn short(&self) -> String {
        self.to_hex()[..8].to_string()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// keccak-256 of `data`.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Keccak256::digest(data).into())
}

/// Computes message ids. Lets a host memoize ids of values it already knows.
pub trait MessageHasher: Send + Sync {
    fn digest(&self, value: &[u8]) -> Digest;

    /// Whether `value` hashes to `id`.
    fn matches(&self, value: &[u8], id: &Digest) -> bool {
        self.digest(value) == *id
    }
}

/// Plain keccak-256.
#[derive(Debug, Clone, Copy, Default)]
pub struct Keccak;

impl MessageHasher for Keccak {
    fn digest(&self, value: &[u8]) -> Digest {
        hash(value)
    }
}

type Registered = (Arc<[u8]>, Digest);

/// keccak-256 with an exact cache: a value byte-equal to a registered one
/// gets the registered digest, anything else is hashed. A value checked
/// against a registered id only needs a byte comparison, since any other
/// preimage would be a keccak collision.
#[derive(Debug, Default)]
pub struct KnownValues {
    by_len: HashMap<usize, Vec<Registered>>,
    by_id: HashMap<Digest, Arc<[u8]>>,
}

impl KnownValues {
    pub fn new() -> KnownValues {
        KnownValues::default()
    }

    pub fn register(&mut self, value: Arc<[u8]>) -> Digest {
        let d = hash(&value);
        self.by_id.insert(d, value.clone());
        self.by_len.entry(value.len()).or_default().push((value, d));
        d
    }
}

impl MessageHasher for KnownValues {
    fn digest(&self, value: &[u8]) -> Digest {
        if let Some(known) = self.by_len.get(&value.len()) {
            for (v, d) in known {
                if v[..] == *value {
                    return *d;
                }
            }
        }
        hash(value)
    }

    fn matches(&self, value: &[u8], id: &Digest) -> bool {
        match self.by_id.get(id) {
            Some(v) => v[..] == *value,
            None => hash(value) == *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("no verification key registered for peer {0}")]
    UnknownPeer(PeerId),
}

/// Opaque signature bytes.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: String = self.0.iter().take(4).map(|b| format!("{b:02x}")).collect();
        write!(f, "Signature({head}..)")
    }
}

/// Signing material for one peer.
#[derive(Clone)]
pub struct KeyPair {
    pub peer_id: PeerId,
    secret: [u8; 32],
    public: [u8; 32],
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("peer_id", &self.peer_id)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    /// Deterministic key material for `peer_id` derived from `seed`.
    pub fn derive(peer_id: PeerId, seed: u64) -> KeyPair {
        let mut material = [0u8; 16];
        material[..8].copy_from_slice(&seed.to_be_bytes());
        material[8..].copy_from_slice(&peer_id.0.to_be_bytes());
        let secret = blake3::derive_key("gg-core 2024 shard mac key", &material);
        // For the MAC stand-in the verification key equals the signing key;
        // it is held by the registry, never by other peers' protocol code.
        KeyPair {
            peer_id,
            secret,
            public: secret,
        }
    }

    pub fn public(&self) -> &[u8; 32] {
        &self.public
    }
}

/// Pluggable sign/verify.
pub trait SignatureScheme: Send + Sync {
    fn sign(&self, signer: &KeyPair, data: &[u8]) -> Signature;

    /// `Ok(true)` iff `sig` was produced by `claimed` over exactly `data`.
    fn verify(&self, claimed: PeerId, data: &[u8], sig: &Signature) -> Result<bool, CryptoError>;
}

/// Verification keys by peer. Written at setup, read-only afterwards.
#[derive(Debug, Default, Clone)]
pub struct KeyRegistry {
    keys: HashMap<PeerId, [u8; 32]>,
}

impl KeyRegistry {
    pub fn new() -> KeyRegistry {
        KeyRegistry::default()
    }

    pub fn register(&mut self, pair: &KeyPair) {
        self.keys.insert(pair.peer_id, pair.public);
    }

    pub fn get(&self, peer: PeerId) -> Option<&[u8; 32]> {
        self.keys.get(&peer)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Keyed BLAKE3 MAC standing in for a public-key signature scheme.
#[derive(Debug, Clone)]
pub struct MacScheme {
    registry: Arc<KeyRegistry>,
}

impl MacScheme {
    pub fn new(registry: Arc<KeyRegistry>) -> MacScheme {
        MacScheme { registry }
    }
}

impl SignatureScheme for MacScheme {
    fn sign(&self, signer: &KeyPair, data: &[u8]) -> Signature {
        Signature(blake3::keyed_hash(&signer.secret, data).as_bytes().to_vec())
    }

    fn verify(&self, claimed: PeerId, data: &[u8], sig: &Signature) -> Result<bool, CryptoError> {
        let key = self
            .registry
            .get(claimed)
            .ok_or(CryptoError::UnknownPeer(claimed))?;
        let Ok(tag) = <[u8; 32]>::try_from(sig.as_bytes()) else {
            return Ok(false);
        };
        // blake3::Hash equality is constant-time
        Ok(blake3::keyed_hash(key, data) == blake3::Hash::from(tag))
    }
}

/// Keys for peers `0..n` plus a scheme that verifies all of them.
pub fn setup_keys(n: usize, seed: u64) -> (Vec<KeyPair>, Arc<dyn SignatureScheme>) {
    let pairs: Vec<KeyPair> = (0..n as u64)
        .map(|i| KeyPair::derive(PeerId(i), seed))
        .collect();
    let mut registry = KeyRegistry::new();
    for p in &pairs {
        registry.register(p);
    }
    (pairs, Arc::new(MacScheme::new(Arc::new(registry))))
}
