use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Body, Envelope, Kind, ProtocolParams};
use crate::crypto::{Digest, KeyPair, MessageHasher, PeerId, SignatureScheme};
use crate::gf256::{self, solve, Gf256, Matrix};
use crate::rlnc::{self, Basis, CodecError, Shard, SourceMessage, FINGERPRINT_LEN};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("message {0:?} is unknown to this node")]
    UnknownMessage(Digest),
    #[error("message {0:?} has not been decoded")]
    NotDecoded(Digest),
    #[error("message {0:?} was already published")]
    Duplicate(Digest),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// A shard waiting for the uplink.
#[derive(Debug, Clone)]
pub(crate) struct Queued {
    pub to: PeerId,
    pub msg_id: Digest,
    /// A fixed shard, or `None` to recode from current holdings at send
    /// time.
    pub shard: Option<Shard>,
    /// Answer to an explicit IWANT; exempt from the do-not-send-to-publisher
    /// guard.
    pub requested: bool,
}

#[derive(Debug, Clone)]
pub struct HeldShard {
    pub from: PeerId,
    pub shard: Shard,
    fp: OnceCell<[u8; FINGERPRINT_LEN]>,
}

impl HeldShard {
    pub fn new(from: PeerId, shard: Shard) -> HeldShard {
        HeldShard {
            from,
            shard,
            fp: OnceCell::new(),
        }
    }

    fn fingerprint(&self, beta: Gf256) -> &[u8; FINGERPRINT_LEN] {
        self.fp
            .get_or_init(|| rlnc::fingerprint(&self.shard.payload, beta))
    }
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub value: Arc<[u8]>,
    /// The `k` shards the value was reconstructed from.
    pub shards: Vec<Shard>,
    pub at: Duration,
}

/// Everything a node tracks for one message id.
#[derive(Debug, Clone, Default)]
pub struct MsgState {
    pub publisher: Option<PeerId>,
    pub shard_set: Vec<HeldShard>,
    pub(crate) basis: Option<Basis>,
    pub decoded: Option<Decoded>,
    /// Peers known to hold the message.
    pub is_done: BTreeSet<PeerId>,
    pub done_sent: BTreeSet<PeerId>,
    pub i_want: Option<PeerId>,
    pub recodes: usize,
    pub(crate) dirty: bool,
    /// Some full-rank subset of the shard set decoded to the wrong hash.
    pub pollution_seen: bool,
    pub is_polluted: bool,
    /// Index into `shard_set` of the first shard that arrived after the
    /// node last isolated itself.
    pub(crate) isolated_from: usize,
    pub polluted_sent: BTreeSet<PeerId>,
    pub mal_shards: Vec<HeldShard>,
    pub mal_peers: BTreeSet<PeerId>,
    pub qua_peers: BTreeSet<PeerId>,
    pub qua_shards: Vec<HeldShard>,
    /// Peers that ever announced POLLUTED for this message. Never accused.
    pub self_reported: BTreeSet<PeerId>,
    pub(crate) alerted: BTreeSet<(PeerId, PeerId)>,
    pub(crate) discovery_done: bool,
    /// Arrival of the latest shard found inconsistent after decoding.
    pub(crate) suspect_at: Option<Duration>,
    /// Fragment fingerprints of candidate decodings that hashed wrong.
    pub(crate) failed_candidates: HashSet<Vec<u8>>,
    /// Per neighbor, the span it is known to hold: shards sent to it and
    /// shards received from it.
    pub(crate) known: BTreeMap<PeerId, Basis>,
    recode_cache: Option<(RecodeKey, Shard)>,
}

/// What a cached recode was drawn from.
type RecodeKey = (usize, bool, usize);

impl MsgState {
    fn recode_key(&self) -> RecodeKey {
        (
            self.shard_set.len(),
            self.decoded.is_some(),
            self.mal_peers.len(),
        )
    }
}

impl MsgState {
    pub fn rank(&self) -> usize {
        self.basis.as_ref().map_or(0, Basis::rank)
    }

    pub fn is_decoded(&self) -> bool {
        self.decoded.is_some()
    }
}

/// Counters a node keeps about its own traffic and decisions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub shards_received: u64,
    pub shard_bytes_received: u64,
    /// Shards that could not help: not innovative, or arriving after decode.
    pub redundant_shards: u64,
    pub redundant_bytes: u64,
    pub bad_signatures: u64,
    pub shards_created: u64,
    pub sends_suppressed: u64,
    pub decode_attempts: u64,
    pub failed_decodes: u64,
    pub polluted_episodes: u64,
    pub alerts_sent: u64,
    pub alerts_received: u64,
    pub bogus_alerts: u64,
    pub verified_accusations: u64,
    pub unverified_accusations: u64,
    pub quarantines: u64,
    pub releases: u64,
    pub audits_sent: u64,
}

pub struct Node {
    pub(crate) id: PeerId,
    pub(crate) keys: KeyPair,
    pub(crate) scheme: Arc<dyn SignatureScheme>,
    pub(crate) hasher: Arc<dyn MessageHasher>,
    pub(crate) params: ProtocolParams,
    pub(crate) neighbors: Vec<PeerId>,
    pub(crate) mesh: Vec<PeerId>,
    pub(crate) rng: ChaCha8Rng,
    /// Secret evaluation point of this node's payload fingerprints.
    pub(crate) fp_base: Gf256,
    /// Forward to every mesh neighbor, useful or not.
    pub(crate) indiscriminate: bool,
    pub(crate) msg_buffer: Vec<(Digest, Vec<u8>)>,
    pub(crate) msgs: BTreeMap<Digest, MsgState>,
    pub(crate) send_buffer: VecDeque<Queued>,
    pub(crate) last_heartbeat: Duration,
    pub(crate) deliveries: Vec<(Digest, Duration)>,
    pub(crate) mal_log: Vec<(Digest, PeerId, Duration)>,
    pub(crate) stats: NodeStats,
    /// Time of the input being processed.
    pub(crate) now: Duration,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node")
            .field("id", &self.id)
            .field("messages", &self.msgs.len())
            .field("queued", &self.send_buffer.len())
            .finish_non_exhaustive()
    }
}

impl Node {
    pub fn new(
        keys: KeyPair,
        scheme: Arc<dyn SignatureScheme>,
        hasher: Arc<dyn MessageHasher>,
        params: ProtocolParams,
        neighbors: Vec<PeerId>,
        mesh: Vec<PeerId>,
        seed: u64,
    ) -> Node {
        debug_assert!(mesh.iter().all(|m| neighbors.contains(m)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fp_base = Gf256::random_nonzero(&mut rng);
        Node {
            id: keys.peer_id,
            keys,
            scheme,
            hasher,
            params,
            neighbors,
            mesh,
            rng,
            fp_base,
            indiscriminate: false,
            msg_buffer: Vec::new(),
            msgs: BTreeMap::new(),
            send_buffer: VecDeque::new(),
            last_heartbeat: Duration::ZERO,
            deliveries: Vec::new(),
            mal_log: Vec::new(),
            stats: NodeStats::default(),
            now: Duration::ZERO,
        }
    }

    pub fn id(&self) -> PeerId {
        self.id
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn neighbors(&self) -> &[PeerId] {
        &self.neighbors
    }

    pub fn mesh(&self) -> &[PeerId] {
        &self.mesh
    }

    pub fn state(&self, m: &Digest) -> Option<&MsgState> {
        self.msgs.get(m)
    }

    pub fn messages(&self) -> impl Iterator<Item = (&Digest, &MsgState)> {
        self.msgs.iter()
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    /// Every (message, accused, time) this node ever put into malPeers.
    pub fn mal_log(&self) -> &[(Digest, PeerId, Duration)] {
        &self.mal_log
    }

    /// Deliveries since the last call.
    pub fn take_deliveries(&mut self) -> Vec<(Digest, Duration)> {
        std::mem::take(&mut self.deliveries)
    }

    pub fn queued_shards(&self) -> usize {
        self.send_buffer.len()
    }

    /// Forwards to every mesh neighbor, including the sender, without
    /// checking whether the shard can help. Adversary behaviour.
    pub fn set_indiscriminate(&mut self, on: bool) {
        self.indiscriminate = on;
    }

    /// Records who published `m`; shards are never sent back to them.
    pub fn note_publisher(&mut self, m: Digest, publisher: PeerId) {
        self.msgs.entry(m).or_default().publisher = Some(publisher);
    }

    pub(crate) fn sign(&self, mut shard: Shard) -> Shard {
        shard.creator = self.id;
        shard.signature = self.scheme.sign(&self.keys, &shard.content_digest());
        shard
    }

    pub(crate) fn verify(&self, claimed: PeerId, shard: &Shard) -> bool {
        matches!(
            self.scheme
                .verify(claimed, &shard.content_digest(), &shard.signature),
            Ok(true)
        )
    }

    /// Stages `value` for publication and returns its id.
    pub fn publish(&mut self, value: Vec<u8>) -> Result<Digest, ProtocolError> {
        if value.is_empty() {
            return Err(CodecError::BadParameters("empty value".into()).into());
        }
        let id = self.hasher.digest(&value);
        if self.msgs.get(&id).is_some_and(MsgState::is_decoded)
            || self.msg_buffer.iter().any(|(m, _)| *m == id)
        {
            return Err(ProtocolError::Duplicate(id));
        }
        self.msg_buffer.push((id, value));
        Ok(id)
    }

    /// Encodes every staged value into `k * p` signed shards and queues
    /// them round-robin over all neighbors.
    pub fn generate_shards(&mut self, now: Duration) -> Result<(), ProtocolError> {
        let k = self.params.k;
        let p = self
            .params
            .publish_multiplier
            .unwrap_or(self.neighbors.len())
            .max(1);
        for (id, value) in std::mem::take(&mut self.msg_buffer) {
            let src = SourceMessage::with_id(value, k, id)?;
            let shards: Vec<Shard> = rlnc::encode_source(&src, k * p, self.id, &mut self.rng)?
                .into_iter()
                .map(|s| self.sign(s))
                .collect();
            let mut basis = Basis::new(k);
            let mut own: Vec<Shard> = shards
                .iter()
                .filter(|s| basis.insert(&s.coeffs))
                .cloned()
                .collect();
            while !basis.is_full() {
                let extra = rlnc::encode_source(&src, k, self.id, &mut self.rng)?;
                for s in extra {
                    if basis.insert(&s.coeffs) {
                        own.push(self.sign(s));
                    }
                }
            }
            own.truncate(k);
            if !self.neighbors.is_empty() {
                for (i, s) in shards.into_iter().enumerate() {
                    let to = self.neighbors[i % self.neighbors.len()];
                    self.send_buffer.push_back(Queued {
                        to,
                        msg_id: id,
                        shard: Some(s),
                        requested: false,
                    });
                }
            }
            self.stats.shards_created += (k * p) as u64;
            let st = self.msgs.entry(id).or_default();
            st.publisher = Some(self.id);
            st.basis = Some(basis);
            st.decoded = Some(Decoded {
                value: src.value.into(),
                shards: own,
                at: now,
            });
            self.deliveries.push((id, now));
        }
        Ok(())
    }

    /// Pops the next queued shard whose send guards hold. Entries for peers
    /// that already have the message, or for its publisher, are dropped;
    /// entries for a message this node considers polluted stay frozen.
    pub fn next_shard(&mut self) -> Option<Envelope> {
        self.next_shard_where(|_| true)
    }

    /// Like [`next_shard`](Self::next_shard), skipping (and keeping)
    /// entries for peers where `ready` is false.
    ///
    /// Among sendable entries the one whose peer is known to hold the
    /// fewest dimensions of its message goes first, oldest on ties. Under
    /// load this keeps a slow uplink from spending itself on messages its
    /// peers are about to finish anyway.
    pub fn next_shard_where(&mut self, ready: impl Fn(PeerId) -> bool) -> Option<Envelope> {
        loop {
            let mut best: Option<(usize, usize)> = None;
            let mut i = 0;
            while i < self.send_buffer.len() {
                let q = &self.send_buffer[i];
                let Some(st) = self.msgs.get(&q.msg_id) else {
                    self.send_buffer.remove(i);
                    continue;
                };
                if st.is_done.contains(&q.to) || (!q.requested && st.publisher == Some(q.to)) {
                    self.send_buffer.remove(i);
                    self.stats.sends_suppressed += 1;
                    continue;
                }
                if !st.is_polluted && ready(q.to) {
                    let rank = st.known.get(&q.to).map_or(0, Basis::rank);
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
                i += 1;
            }
            let (_, i) = best?;
            let q = self.send_buffer.remove(i).expect("index in range");
            match self.materialize(q) {
                Some(env) => return Some(env),
                None => self.stats.sends_suppressed += 1,
            }
        }
    }

    /// Turns a queue entry into a concrete shard. Unrequested sends the
    /// peer provably cannot use are skipped: everything we could combine
    /// already lies in the span it holds. Peers that reported pollution
    /// hold spans with bad payloads and are not filtered.
    fn materialize(&mut self, q: Queued) -> Option<Envelope> {
        let k = self.params.k;
        let m = q.msg_id;
        let st = self.msgs.get(&m)?;
        let filtered = !self.indiscriminate && !q.requested && !st.self_reported.contains(&q.to);
        let known = st.known.get(&q.to);
        let useful = |c: &[u8]| known.is_none_or(|b| b.is_innovative(c));
        if filtered {
            let ours = if st.decoded.is_some() {
                None
            } else {
                st.basis.as_ref()
            };
            if let (Some(kn), Some(ours)) = (known, ours) {
                if kn.spans(ours) {
                    return None;
                }
            }
            if known.is_some_and(Basis::is_full) {
                return None;
            }
        }
        let shard = match q.shard {
            Some(s) => s,
            None => match &st.recode_cache {
                Some((key, s)) if *key == st.recode_key() && useful(&s.coeffs) => s.clone(),
                _ => {
                    let s = self.recode_now(m)?;
                    let st = self.msgs.get_mut(&m).expect("known message");
                    st.recode_cache = Some((st.recode_key(), s.clone()));
                    s
                }
            },
        };
        let st = self.msgs.get_mut(&m).expect("known message");
        let innovative = st
            .known
            .entry(q.to)
            .or_insert_with(|| Basis::new(k))
            .insert(&shard.coeffs);
        if filtered && !innovative {
            return None;
        }
        Some(Envelope::shard(self.id, q.to, shard))
    }

    /// A fresh signed recode: from the decoding set once decoded, otherwise
    /// from every held shard not sent by a known polluter.
    fn recode_now(&mut self, m: Digest) -> Option<Shard> {
        let st = self.msgs.get(&m)?;
        let held: Vec<&Shard> = match &st.decoded {
            Some(dec) => dec.shards.iter().collect(),
            None => st
                .shard_set
                .iter()
                .filter(|h| !st.mal_peers.contains(&h.from))
                .map(|h| &h.shard)
                .collect(),
        };
        let fresh = rlnc::recode(&held, self.id, &mut self.rng).ok()?;
        self.stats.shards_created += 1;
        Some(self.sign(fresh))
    }

    /// All currently sendable shards at once.
    pub fn flush_send_buffer(&mut self) -> Vec<Envelope> {
        std::iter::from_fn(|| self.next_shard()).collect()
    }

    /// Dispatches one incoming envelope, then runs enabled internal actions.
    pub fn receive(&mut self, env: Envelope, now: Duration) -> Vec<Envelope> {
        self.now = now;
        let mut out = Vec::new();
        let (from, m) = (env.from, env.msg_id);
        match env.body {
            Body::Shard(shard) if env.kind == Kind::Shard => self.receive_shard(from, shard),
            Body::Alert(alert) if env.kind == Kind::Alert => {
                out.extend(self.receive_alert(from, alert))
            }
            Body::Empty => match env.kind {
                Kind::IDontWant => self.receive_done(from, m),
                Kind::IHave => self.receive_ihave(from, m),
                Kind::IWant => self.receive_iwant(from, m),
                Kind::Polluted => self.receive_polluted(from, m),
                _ => {}
            },
            _ => {}
        }
        out.extend(self.step(now));
        out
    }

    pub fn receive_shard(&mut self, from: PeerId, shard: Shard) {
        let m = shard.msg_id;
        let bytes = shard.payload.len() as u64;
        self.stats.shards_received += 1;
        self.stats.shard_bytes_received += bytes;
        if shard.k() != self.params.k || !self.verify(from, &shard) {
            self.stats.bad_signatures += 1;
            return;
        }
        let cap = self.params.polluted_store_cap;
        let k = self.params.k;
        let st = self.msgs.entry(m).or_default();
        st.known
            .entry(from)
            .or_insert_with(|| Basis::new(k))
            .insert(&shard.coeffs);
        if st.mal_peers.contains(&from) {
            return;
        }
        if st.qua_peers.contains(&from) {
            if st.is_polluted {
                // a last resort for the clean-set search when every
                // neighbor is under quarantine
                st.shard_set.push(HeldShard::new(from, shard.clone()));
                st.dirty = true;
            }
            st.qua_shards.push(HeldShard::new(from, shard));
            return;
        }
        if let Some(dec) = &st.decoded {
            self.stats.redundant_shards += 1;
            self.stats.redundant_bytes += bytes;
            if !rlnc::is_consistent(&dec.value, &shard) {
                // judged after the grace period like any other suspect
                st.shard_set.push(HeldShard::new(from, shard));
                st.pollution_seen = true;
                st.discovery_done = false;
                st.suspect_at = Some(self.now);
            }
            return;
        }
        let basis = st.basis.get_or_insert_with(|| Basis::new(shard.k()));
        let innovative = basis.insert(&shard.coeffs);
        if st.is_polluted {
            if !innovative {
                self.stats.redundant_shards += 1;
                self.stats.redundant_bytes += bytes;
            }
            // keep everything: the clean decoding set has to be found among
            // these
            if st.shard_set.len() >= cap {
                st.shard_set.remove(0);
                st.isolated_from = st.isolated_from.saturating_sub(1);
            }
            st.shard_set.push(HeldShard::new(from, shard));
            st.dirty = true;
            return;
        }
        if !innovative {
            self.stats.redundant_shards += 1;
            self.stats.redundant_bytes += bytes;
            return;
        }
        st.shard_set.push(HeldShard::new(from, shard));
        st.dirty = true;
        let rank = st.rank();
        if self.params.forwards_at(rank) && st.recodes < self.params.recode_cap {
            self.forward(m, from);
        }
    }

    fn forward(&mut self, m: Digest, from: PeerId) {
        self.msgs.get_mut(&m).expect("known message").recodes += 1;
        for &v in &self.mesh {
            if v != from || self.indiscriminate {
                self.send_buffer.push_back(Queued {
                    to: v,
                    msg_id: m,
                    shard: None,
                    requested: false,
                });
            }
        }
    }

    /// Tries to reconstruct `m` from the held shards. A full-rank set that
    /// hashes wrong means pollution: the node isolates itself and from then
    /// on looks for a clean decoding set among everything it holds.
    pub fn decode_msg(&mut self, m: Digest, now: Duration) -> Vec<Envelope> {
        let mut out = Vec::new();
        let k = self.params.k;
        let Some(st) = self.msgs.get_mut(&m) else {
            return out;
        };
        if st.decoded.is_some() || !st.dirty {
            return out;
        }
        st.dirty = false;
        let usable: Vec<usize> = (0..st.shard_set.len())
            .filter(|&i| !st.mal_peers.contains(&st.shard_set[i].from))
            .collect();
        let refs: Vec<&Shard> = usable.iter().map(|&i| &st.shard_set[i].shard).collect();
        let picked = rlnc::independent_subset(&refs, k);
        if picked.len() < k {
            return out;
        }
        let original_len = refs[0].original_len as usize;

        let mut found = None;
        if !st.is_polluted {
            let set: Vec<&Shard> = picked.iter().map(|&j| refs[j]).collect();
            self.stats.decode_attempts += 1;
            match rlnc::decode(&set, k, original_len) {
                Ok(v) if self.hasher.matches(&v, &m) => {
                    found = Some((v, picked.iter().map(|&j| usable[j]).collect::<Vec<_>>()))
                }
                _ => {
                    self.stats.failed_decodes += 1;
                    st.pollution_seen = true;
                    out.extend(self.self_isolate(m));
                }
            }
        }
        if found.is_none() {
            found = self.search_clean_set(m, &usable, original_len);
        }
        if let Some((value, picked)) = found {
            let st = self.msgs.get_mut(&m).expect("known");
            st.is_polluted = false;
            st.decoded = Some(Decoded {
                value: value.into(),
                shards: picked
                    .iter()
                    .map(|&i| st.shard_set[i].shard.clone())
                    .collect(),
                at: now,
            });
            self.deliveries.push((m, now));
        }
        out
    }

    /// Scores candidate decoding sets by how many held shards agree with
    /// them in fingerprint space, then fully decodes the best few. Clean
    /// shards all agree with the true value, so once a handful are held it
    /// wins the vote; the hash check has the final word.
    fn search_clean_set(
        &mut self,
        m: Digest,
        usable: &[usize],
        original_len: usize,
    ) -> Option<(Vec<u8>, Vec<usize>)> {
        const DECODES_PER_STEP: usize = 2;
        let k = self.params.k;
        let beta = self.fp_base;
        let st = self.msgs.get_mut(&m)?;
        let held: Vec<&HeldShard> = usable.iter().map(|&i| &st.shard_set[i]).collect();
        let fps: Vec<&[u8; FINGERPRINT_LEN]> = held.iter().map(|h| h.fingerprint(beta)).collect();
        let n = held.len();
        let suspect = |j: usize| {
            st.qua_peers.contains(&held[j].from) || st.self_reported.contains(&held[j].from)
        };
        let fresh = |j: usize| usable[j] >= st.isolated_from;
        let newest: Vec<usize> = (0..n).rev().collect();
        let mut orders: Vec<Vec<usize>> = vec![
            newest
                .iter()
                .copied()
                .filter(|&j| fresh(j) && !suspect(j))
                .collect(),
            newest.iter().copied().filter(|&j| !suspect(j)).collect(),
            newest.iter().copied().filter(|&j| fresh(j)).collect(),
            newest.clone(),
        ];
        while orders.len() < self.params.search_samples.max(orders.len()) {
            let mut o = newest.clone();
            o.shuffle(&mut self.rng);
            orders.push(o);
        }

        let mut seen: HashSet<Vec<u8>> = HashSet::new();
        let mut scored: Vec<(usize, Vec<usize>, Vec<u8>)> = Vec::new();
        for order in &orders {
            let refs: Vec<&Shard> = order.iter().map(|&j| &held[j].shard).collect();
            let picked: Vec<usize> = rlnc::independent_subset(&refs, k)
                .into_iter()
                .map(|x| order[x])
                .collect();
            if picked.len() < k {
                continue;
            }
            let a = Matrix::from_rows(picked.iter().map(|&j| &held[j].shard.coeffs)).ok()?;
            let b = Matrix::from_rows(picked.iter().map(|&j| &fps[j][..])).ok()?;
            let Ok(f) = solve(&a, &b) else {
                continue;
            };
            let key = f.entries().to_vec();
            if st.failed_candidates.contains(&key) || !seen.insert(key.clone()) {
                continue;
            }
            let support = (0..n)
                .filter(|&j| {
                    let mut p = [0u8; FINGERPRINT_LEN];
                    for (r, &c) in held[j].shard.coeffs.iter().enumerate() {
                        if c == 0 {
                            continue;
                        }
                        for (x, &y) in p.iter_mut().zip(f.row(r)) {
                            *x ^= gf256::mul(Gf256(c), Gf256(y)).value();
                        }
                    }
                    p == *fps[j]
                })
                .count();
            scored.push((support, picked, key));
        }
        // stable: among equal support the structured orders come first
        scored.sort_by_key(|x| std::cmp::Reverse(x.0));

        for (_, picked, key) in scored.into_iter().take(DECODES_PER_STEP) {
            self.stats.decode_attempts += 1;
            let set: Vec<&Shard> = picked.iter().map(|&j| &held[j].shard).collect();
            if let Ok(v) = rlnc::decode(&set, k, original_len) {
                if self.hasher.matches(&v, &m) {
                    return Some((v, picked.iter().map(|&j| usable[j]).collect()));
                }
            }
            self.stats.failed_decodes += 1;
            st.failed_candidates.insert(key);
        }
        None
    }

    /// The decoded value of `m`.
    pub fn deliver(&self, m: &Digest) -> Result<Arc<[u8]>, ProtocolError> {
        let st = self.msgs.get(m).ok_or(ProtocolError::UnknownMessage(*m))?;
        st.decoded
            .as_ref()
            .map(|d| d.value.clone())
            .ok_or(ProtocolError::NotDecoded(*m))
    }

    /// IDONTWANT to every mesh neighbor not yet told about a decoded message.
    pub fn send_done(&mut self) -> Vec<Envelope> {
        let mut out = Vec::new();
        for (m, st) in self.msgs.iter_mut() {
            if st.decoded.is_none() {
                continue;
            }
            for &v in &self.mesh {
                if st.done_sent.insert(v) {
                    out.push(Envelope::control(Kind::IDontWant, self.id, v, *m));
                }
            }
        }
        out
    }

    pub fn receive_done(&mut self, from: PeerId, m: Digest) {
        self.msgs.entry(m).or_default().is_done.insert(from);
    }

    pub fn receive_ihave(&mut self, from: PeerId, m: Digest) {
        let st = self.msgs.entry(m).or_default();
        st.is_done.insert(from);
        if st.decoded.is_none() && !st.mal_peers.contains(&from) {
            st.i_want = Some(from);
        }
    }

    pub fn send_iwant(&mut self) -> Vec<Envelope> {
        let mut out = Vec::new();
        for (m, st) in self.msgs.iter_mut() {
            if let Some(q) = st.i_want.take() {
                if st.decoded.is_none() {
                    out.push(Envelope::control(Kind::IWant, self.id, q, *m));
                }
            }
        }
        out
    }

    /// Answers a pull request with a fresh recoding of the decoding set.
    pub fn receive_iwant(&mut self, from: PeerId, m: Digest) {
        let Some(st) = self.msgs.get_mut(&m) else {
            return;
        };
        if st.decoded.is_none() || st.mal_peers.contains(&from) {
            return;
        }
        // the requester says it lacks the message, whatever we assumed
        st.is_done.remove(&from);
        self.send_buffer.push_back(Queued {
            to: from,
            msg_id: m,
            shard: None,
            requested: true,
        });
    }

    /// Periodic gossip: IHAVE for decoded messages to neighbors that may
    /// lack them, plus audits of quarantined peers.
    pub fn heartbeat(&mut self, now: Duration) -> Vec<Envelope> {
        self.now = now;
        let mut out = Vec::new();
        if now.saturating_sub(self.last_heartbeat) < self.params.heartbeat {
            return out;
        }
        self.last_heartbeat = now;
        for (m, st) in &self.msgs {
            if st.decoded.is_none() {
                continue;
            }
            for &v in &self.neighbors {
                if !st.is_done.contains(&v) {
                    out.push(Envelope::control(Kind::IHave, self.id, v, *m));
                }
            }
        }
        out.extend(self.audit_quarantined());
        out.extend(self.step(now));
        out
    }

    /// Runs every enabled internal and output action once.
    pub fn step(&mut self, now: Duration) -> Vec<Envelope> {
        self.now = now;
        let mut out = Vec::new();
        let dirty: Vec<Digest> = self
            .msgs
            .iter()
            .filter(|(_, st)| st.dirty && st.decoded.is_none())
            .map(|(m, _)| *m)
            .collect();
        for m in dirty {
            out.extend(self.decode_msg(m, now));
        }
        self.check_shards();
        out.extend(self.send_done());
        out.extend(self.send_polluted());
        out.extend(self.send_iwant());
        self.pollution_discovery(now);
        out.extend(self.send_alert());
        out
    }
}
