//! Random linear network coding over GF(2^8).
//!
//! A value is split into `k` equal-length fragments (the last one zero
//! padded); every shard carries a dense coefficient vector of length `k` and
//! the matching byte-wise linear combination of the fragments. Any `k` shards
//! with linearly independent coefficient rows reconstruct the value.
//!
//! The codec is honest-agnostic: it never checks a decoded value against its
//! message id. That is the protocol layer's job.

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::crypto::{hash, Digest, PeerId, Signature};
use crate::gf256::{mul_add_slice, mul_table, scale_slice, Gf256, Matrix};

/// Largest supported fragmentation parameter; `k` travels as a `u16`.
pub const MAX_K: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("bad parameters: {0}")]
    BadParameters(String),
    #[error("shards belong to different messages")]
    MixedMessages,
    #[error("coefficient rank {rank} is below k = {k}")]
    InsufficientRank { rank: usize, k: usize },
    #[error("malformed shard: {0}")]
    Malformed(String),
}

/// One coded fragment of a message.
#[derive(Clone, PartialEq, Eq)]
pub struct Shard {
    pub msg_id: Digest,
    /// Peer that produced this combination (publisher or recoder).
    pub creator: PeerId,
    pub original_len: u64,
    pub coeffs: Vec<u8>,
    pub payload: Arc<[u8]>,
    pub signature: Signature,
}

impl std::fmt::Debug for Shard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Shard")
            .field("msg_id", &self.msg_id)
            .field("creator", &self.creator)
            .field("coeffs", &self.coeffs)
            .field("payload_len", &self.payload.len())
            .finish()
    }
}

impl Shard {
    pub fn k(&self) -> usize {
        self.coeffs.len()
    }

    /// Size of the bit-exact wire encoding.
    pub fn wire_len(&self) -> usize {
        32 + 8 + 2 + 8 + self.coeffs.len() + 4 + self.payload.len() + 2 + self.signature.len()
    }

    fn write_unsigned(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.msg_id.as_bytes());
        out.extend_from_slice(&self.creator.0.to_be_bytes());
        out.extend_from_slice(&(self.coeffs.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.original_len.to_be_bytes());
        out.extend_from_slice(&self.coeffs);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Digest of every field except the signature. This is what gets signed.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut header = Vec::with_capacity(58 + self.coeffs.len());
        header.extend_from_slice(self.msg_id.as_bytes());
        header.extend_from_slice(&self.creator.0.to_be_bytes());
        header.extend_from_slice(&(self.coeffs.len() as u16).to_be_bytes());
        header.extend_from_slice(&self.original_len.to_be_bytes());
        header.extend_from_slice(&self.coeffs);
        header.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        let mut h = blake3::Hasher::new();
        h.update(&header);
        h.update(&self.payload);
        *h.finalize().as_bytes()
    }

    /// msgId ‖ creator ‖ k ‖ originalLength ‖ coeffs ‖ payloadLen ‖ payload ‖
    /// sigLen ‖ signature, all lengths big-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_unsigned(&mut out);
        out.extend_from_slice(&(self.signature.len() as u16).to_be_bytes());
        out.extend_from_slice(self.signature.as_bytes());
        out
    }

    /// Parses one shard; returns it with the number of bytes consumed.
    pub fn from_bytes(buf: &[u8]) -> Result<(Shard, usize), CodecError> {
        let mut r = Reader::new(buf);
        let msg_id = Digest(r.array::<32>()?);
        let creator = PeerId(u64::from_be_bytes(r.array::<8>()?));
        let k = u16::from_be_bytes(r.array::<2>()?) as usize;
        let original_len = u64::from_be_bytes(r.array::<8>()?);
        let coeffs = r.take(k)?.to_vec();
        let payload_len = u32::from_be_bytes(r.array::<4>()?) as usize;
        let payload: Arc<[u8]> = r.take(payload_len)?.into();
        let sig_len = u16::from_be_bytes(r.array::<2>()?) as usize;
        let signature = Signature(r.take(sig_len)?.to_vec());
        Ok((
            Shard {
                msg_id,
                creator,
                original_len,
                coeffs,
                payload,
                signature,
            },
            r.pos,
        ))
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                CodecError::Malformed(format!(
                    "need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
}

/// A value prepared for encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMessage {
    pub id: Digest,
    pub value: Vec<u8>,
    pub original_len: usize,
    pub k: usize,
}

impl SourceMessage {
    pub fn new(value: Vec<u8>, k: usize) -> Result<SourceMessage, CodecError> {
        if k == 0 || k > MAX_K {
            return Err(CodecError::BadParameters(format!("k = {k} out of range")));
        }
        if value.is_empty() {
            return Err(CodecError::BadParameters("empty value".into()));
        }
        Ok(SourceMessage {
            id: hash(&value),
            original_len: value.len(),
            value,
            k,
        })
    }

    /// Like [`SourceMessage::new`] for a caller that already knows the id.
    pub fn with_id(value: Vec<u8>, k: usize, id: Digest) -> Result<SourceMessage, CodecError> {
        if k == 0 || k > MAX_K {
            return Err(CodecError::BadParameters(format!("k = {k} out of range")));
        }
        if value.is_empty() {
            return Err(CodecError::BadParameters("empty value".into()));
        }
        Ok(SourceMessage {
            id,
            original_len: value.len(),
            value,
            k,
        })
    }

    pub fn fragment_len(&self) -> usize {
        fragment_len(self.original_len, self.k)
    }

    /// The value zero-padded to `k * fragment_len` bytes.
    fn padded(&self) -> Vec<u8> {
        let mut v = self.value.clone();
        v.resize(self.k * self.fragment_len(), 0);
        v
    }
}

/// `ceil(len / k)`.
pub fn fragment_len(len: usize, k: usize) -> usize {
    len.div_ceil(k)
}

fn random_nonzero_vector<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<u8> {
    let mut c = vec![0u8; k];
    loop {
        rng.fill(c.as_mut_slice());
        if c.iter().any(|&b| b != 0) {
            return c;
        }
    }
}

/// Encodes `value` into `n` shards with uniform random coefficient vectors.
pub fn encode<R: Rng + ?Sized>(
    value: &[u8],
    k: usize,
    n: usize,
    creator: PeerId,
    rng: &mut R,
) -> Result<Vec<Shard>, CodecError> {
    if n < k {
        return Err(CodecError::BadParameters(format!("n = {n} < k = {k}")));
    }
    let src = SourceMessage::new(value.to_vec(), k)?;
    encode_source(&src, n, creator, rng)
}

/// Same as [`encode`] for an already prepared message.
pub fn encode_source<R: Rng + ?Sized>(
    src: &SourceMessage,
    n: usize,
    creator: PeerId,
    rng: &mut R,
) -> Result<Vec<Shard>, CodecError> {
    if n < src.k {
        return Err(CodecError::BadParameters(format!(
            "n = {n} < k = {}",
            src.k
        )));
    }
    let flen = src.fragment_len();
    let padded = src.padded();
    let mut shards = Vec::with_capacity(n);
    for _ in 0..n {
        let coeffs = random_nonzero_vector(src.k, rng);
        let mut payload = vec![0u8; flen];
        for (j, &c) in coeffs.iter().enumerate() {
            mul_add_slice(&mut payload, &padded[j * flen..(j + 1) * flen], Gf256(c));
        }
        shards.push(Shard {
            msg_id: src.id,
            creator,
            original_len: src.original_len as u64,
            coeffs,
            payload: payload.into(),
            signature: Signature::default(),
        });
    }
    Ok(shards)
}

fn check_same_message<'a, I>(shards: I) -> Result<(Digest, usize, usize, u64), CodecError>
where
    I: IntoIterator<Item = &'a Shard>,
{
    let mut it = shards.into_iter();
    let first = it
        .next()
        .ok_or_else(|| CodecError::BadParameters("no shards".into()))?;
    for s in it {
        if s.msg_id != first.msg_id {
            return Err(CodecError::MixedMessages);
        }
        if s.k() != first.k() || s.payload.len() != first.payload.len() {
            return Err(CodecError::Malformed(
                "shards of one message disagree on k or payload length".into(),
            ));
        }
    }
    Ok((
        first.msg_id,
        first.k(),
        first.payload.len(),
        first.original_len,
    ))
}

/// Random linear combination of `shards` with explicit weights.
pub fn combine(shards: &[&Shard], weights: &[u8], creator: PeerId) -> Result<Shard, CodecError> {
    let (msg_id, k, plen, original_len) = check_same_message(shards.iter().copied())?;
    if weights.len() != shards.len() {
        return Err(CodecError::BadParameters("one weight per shard".into()));
    }
    let mut coeffs = vec![0u8; k];
    let mut payload = vec![0u8; plen];
    for (s, &w) in shards.iter().zip(weights) {
        mul_add_slice(&mut coeffs, &s.coeffs, Gf256(w));
        mul_add_slice(&mut payload, &s.payload, Gf256(w));
    }
    Ok(Shard {
        msg_id,
        creator,
        original_len,
        coeffs,
        payload: payload.into(),
        signature: Signature::default(),
    })
}

/// Fresh random combination of `shards`, resampled until its coefficient
/// vector is nonzero.
pub fn recode<R: Rng + ?Sized>(
    shards: &[&Shard],
    creator: PeerId,
    rng: &mut R,
) -> Result<Shard, CodecError> {
    let (_, k, _, _) = check_same_message(shards.iter().copied())?;
    if shards.iter().all(|s| s.coeffs.iter().all(|&c| c == 0)) {
        return Err(CodecError::InsufficientRank { rank: 0, k });
    }
    // Pick weights on the coefficient rows first, so the payload work is
    // done once.
    let mut weights = vec![0u8; shards.len()];
    loop {
        rng.fill(weights.as_mut_slice());
        let mut coeffs = vec![0u8; k];
        for (s, &w) in shards.iter().zip(&weights) {
            mul_add_slice(&mut coeffs, &s.coeffs, Gf256(w));
        }
        if coeffs.iter().any(|&c| c != 0) {
            break;
        }
    }
    combine(shards, &weights, creator)
}

/// Incrementally maintained reduced echelon basis of coefficient rows.
#[derive(Debug, Clone)]
pub struct Basis {
    k: usize,
    // rows[i] has a leading one at pivots[i]; no other row has a nonzero
    // entry in that column
    rows: Vec<Vec<u8>>,
    pivots: Vec<usize>,
}

impl Basis {
    pub fn new(k: usize) -> Basis {
        Basis {
            k,
            rows: Vec::new(),
            pivots: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.k
    }

    fn reduce(&self, coeffs: &[u8]) -> Vec<u8> {
        let mut v = coeffs.to_vec();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            let f = v[p];
            if f != 0 {
                mul_add_slice(&mut v, row, Gf256(f));
            }
        }
        v
    }

    /// Whether `coeffs` lies outside the current span.
    pub fn is_innovative(&self, coeffs: &[u8]) -> bool {
        coeffs.len() == self.k && self.reduce(coeffs).iter().any(|&c| c != 0)
    }

    /// Whether every row of `other` lies in this span.
    pub fn spans(&self, other: &Basis) -> bool {
        other.rows.iter().all(|r| !self.is_innovative(r))
    }

    /// Adds `coeffs` if it increases the rank; returns whether it did.
    pub fn insert(&mut self, coeffs: &[u8]) -> bool {
        if coeffs.len() != self.k {
            return false;
        }
        let mut v = self.reduce(coeffs);
        let Some(p) = v.iter().position(|&c| c != 0) else {
            return false;
        };
        let lead_inv = Gf256(v[p]).inv().expect("nonzero pivot");
        scale_slice(&mut v, lead_inv);
        for row in &mut self.rows {
            let f = row[p];
            if f != 0 {
                mul_add_slice(row, &v, Gf256(f));
            }
        }
        self.rows.push(v);
        self.pivots.push(p);
        true
    }
}

/// True iff adding `candidate` raises the rank of `existing`.
pub fn is_innovative(existing: &[&Shard], candidate: &Shard) -> bool {
    let mut basis = Basis::new(candidate.k());
    for s in existing {
        basis.insert(&s.coeffs);
    }
    basis.is_innovative(&candidate.coeffs)
}

/// Indices of a maximal independent subset of `shards`, chosen greedily in
/// order.
pub fn independent_subset(shards: &[&Shard], k: usize) -> Vec<usize> {
    let mut basis = Basis::new(k);
    let mut picked = Vec::with_capacity(k);
    for (i, s) in shards.iter().enumerate() {
        if basis.is_full() {
            break;
        }
        if basis.insert(&s.coeffs) {
            picked.push(i);
        }
    }
    picked
}

pub const FINGERPRINT_LEN: usize = 64;

/// GF-linear digest of a payload: `sum_b beta^b * block_b` over 64-byte
/// blocks, evaluated by Horner's rule. Being linear it commutes with coding,
/// so a clean shard's fingerprint is its coefficients applied to the
/// fragment fingerprints. With `beta` nonzero a single corrupted byte
/// always shows.
pub fn fingerprint(payload: &[u8], beta: Gf256) -> [u8; FINGERPRINT_LEN] {
    let table = mul_table(beta);
    let mut acc = [0u8; FINGERPRINT_LEN];
    for block in payload.chunks(FINGERPRINT_LEN).rev() {
        for (a, &b) in acc.iter_mut().zip(block) {
            *a = table[*a as usize] ^ b;
        }
        for a in acc.iter_mut().skip(block.len()) {
            *a = table[*a as usize];
        }
    }
    acc
}

/// Whether `shard` carries exactly the combination of `value`'s fragments
/// that its coefficients claim. For a known-good `value` this is the same
/// verdict as decoding with the shard swapped in for a row it covers.
pub fn is_consistent(value: &[u8], shard: &Shard) -> bool {
    let k = shard.k();
    if k == 0 || shard.original_len != value.len() as u64 {
        return false;
    }
    let flen = fragment_len(value.len(), k);
    if shard.payload.len() != flen {
        return false;
    }
    let mut expect = vec![0u8; flen];
    for (j, &c) in shard.coeffs.iter().enumerate() {
        let start = (j * flen).min(value.len());
        let end = ((j + 1) * flen).min(value.len());
        let frag = &value[start..end];
        mul_add_slice(&mut expect[..frag.len()], frag, Gf256(c));
    }
    expect[..] == shard.payload[..]
}

/// Reconstructs the value from any shards whose coefficient rank is `k`.
/// Dependent rows are ignored.
pub fn decode(shards: &[&Shard], k: usize, original_len: usize) -> Result<Vec<u8>, CodecError> {
    if k == 0 {
        return Err(CodecError::BadParameters("k = 0".into()));
    }
    if shards.is_empty() {
        return Err(CodecError::InsufficientRank { rank: 0, k });
    }
    let (_, shard_k, plen, _) = check_same_message(shards.iter().copied())?;
    if shard_k != k {
        return Err(CodecError::BadParameters(format!(
            "shards carry k = {shard_k}, expected {k}"
        )));
    }
    if original_len > k * plen {
        return Err(CodecError::BadParameters(format!(
            "original length {original_len} exceeds {k} x {plen}"
        )));
    }
    let picked = independent_subset(shards, k);
    if picked.len() < k {
        return Err(CodecError::InsufficientRank {
            rank: picked.len(),
            k,
        });
    }
    let a = Matrix::from_rows(picked.iter().map(|&i| &shards[i].coeffs))
        .map_err(|e| CodecError::Malformed(e.to_string()))?;
    let inv = a
        .inverse()
        .map_err(|_| CodecError::InsufficientRank { rank: k - 1, k })?;
    // fragment i = sum_j inv[i][j] * payload_j, written straight into the
    // padded value
    let mut value = vec![0u8; k * plen];
    for (i, frag) in value.chunks_mut(plen).enumerate() {
        for (j, &s) in picked.iter().enumerate() {
            mul_add_slice(frag, &shards[s].payload, inv.get(i, j));
        }
    }
    value.truncate(original_len);
    Ok(value)
}
