//! Reference Gossipsub with IDONTWANT, run against the same simulator.
//!
//! Full messages are pushed eagerly over a static mesh. On first receipt a
//! node validates the id, delivers, sends IDONTWANT to its mesh and forwards
//! to every mesh peer except the sender and those that already said they
//! have it. Heartbeats gossip recent ids with IHAVE to non-mesh neighbors;
//! IWANT pulls the full message.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use crate::crypto::{Digest, MessageHasher, PeerId};
use crate::protocol::{Body, Envelope, Kind};

#[derive(Debug, Clone, PartialEq)]
pub struct GossipsubParams {
    pub heartbeat: Duration,
    /// Heartbeats an id stays eligible for IHAVE gossip.
    pub history_gossip: u32,
}

impl Default for GossipsubParams {
    fn default() -> Self {
        GossipsubParams {
            heartbeat: Duration::from_secs(1),
            history_gossip: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GossipsubStats {
    pub full_received: u64,
    pub duplicate_full: u64,
    pub duplicate_bytes: u64,
    pub invalid: u64,
    pub sends_suppressed: u64,
}

#[derive(Debug, Default)]
struct Seen {
    value: Option<Arc<[u8]>>,
    first_seen: Duration,
    /// Peers that told us they have it.
    have: BTreeSet<PeerId>,
    /// When we last pulled it with IWANT; one pull in flight at a time.
    requested_at: Option<Duration>,
}

pub struct GossipsubNode {
    id: PeerId,
    hasher: Arc<dyn MessageHasher>,
    params: GossipsubParams,
    neighbors: Vec<PeerId>,
    mesh: Vec<PeerId>,
    msgs: BTreeMap<Digest, Seen>,
    queue: VecDeque<Envelope>,
    last_heartbeat: Duration,
    deliveries: Vec<(Digest, Duration)>,
    stats: GossipsubStats,
}

impl std::fmt::Debug for GossipsubNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GossipsubNode")
            .field("id", &self.id)
            .field("messages", &self.msgs.len())
            .finish_non_exhaustive()
    }
}

impl GossipsubNode {
    pub fn new(
        id: PeerId,
        hasher: Arc<dyn MessageHasher>,
        params: GossipsubParams,
        neighbors: Vec<PeerId>,
        mesh: Vec<PeerId>,
    ) -> GossipsubNode {
        GossipsubNode {
            id,
            hasher,
            params,
            neighbors,
            mesh,
            msgs: BTreeMap::new(),
            queue: VecDeque::new(),
            last_heartbeat: Duration::ZERO,
            deliveries: Vec::new(),
            stats: GossipsubStats::default(),
        }
    }

    pub fn id(&self) -> PeerId {
        self.id
    }

    pub fn stats(&self) -> &GossipsubStats {
        &self.stats
    }

    pub fn take_deliveries(&mut self) -> Vec<(Digest, Duration)> {
        std::mem::take(&mut self.deliveries)
    }

    pub fn has(&self, m: &Digest) -> bool {
        self.msgs.get(m).is_some_and(|s| s.value.is_some())
    }

    pub fn value(&self, m: &Digest) -> Option<Arc<[u8]>> {
        self.msgs.get(m).and_then(|s| s.value.clone())
    }

    fn accept(
        &mut self,
        m: Digest,
        value: Arc<[u8]>,
        except: Option<PeerId>,
        now: Duration,
    ) -> Vec<Envelope> {
        let seen = self.msgs.entry(m).or_default();
        seen.value = Some(value.clone());
        seen.first_seen = now;
        if let Some(p) = except {
            seen.have.insert(p);
        }
        self.deliveries.push((m, now));
        let mut control = Vec::new();
        for &v in &self.mesh {
            if Some(v) == except {
                continue;
            }
            if except.is_some() {
                control.push(Envelope::control(Kind::IDontWant, self.id, v, m));
            }
            self.queue
                .push_back(Envelope::full_msg(self.id, v, m, value.clone()));
        }
        control
    }

    /// Publishes `value` to the whole mesh and returns its id.
    pub fn publish(&mut self, value: Vec<u8>, now: Duration) -> Digest {
        let m = self.hasher.digest(&value);
        if !self.has(&m) {
            self.accept(m, value.into(), None, now);
        }
        m
    }

    /// Next queued FULLMSG whose recipient has not since said it has the
    /// message.
    pub fn next_full(&mut self) -> Option<Envelope> {
        self.next_full_where(|_| true)
    }

    /// Like [`next_full`](Self::next_full), skipping (and keeping) entries
    /// for peers where `ready` is false.
    pub fn next_full_where(&mut self, ready: impl Fn(PeerId) -> bool) -> Option<Envelope> {
        let mut i = 0;
        while i < self.queue.len() {
            let e = &self.queue[i];
            let have = self
                .msgs
                .get(&e.msg_id)
                .is_some_and(|s| s.have.contains(&e.to));
            if have {
                self.queue.remove(i);
                self.stats.sends_suppressed += 1;
                continue;
            }
            if !ready(e.to) {
                i += 1;
                continue;
            }
            return self.queue.remove(i);
        }
        None
    }

    pub fn receive(&mut self, env: Envelope, now: Duration) -> Vec<Envelope> {
        let (from, m) = (env.from, env.msg_id);
        match (env.kind, env.body) {
            (Kind::FullMsg, Body::FullMsg { value, .. }) => self.receive_full(from, m, value, now),
            (Kind::IDontWant, _) => {
                self.msgs.entry(m).or_default().have.insert(from);
                Vec::new()
            }
            (Kind::IHave, _) => self.receive_ihave(from, m, now),
            (Kind::IWant, _) => {
                self.receive_iwant(from, m);
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn receive_full(
        &mut self,
        from: PeerId,
        m: Digest,
        value: Arc<[u8]>,
        now: Duration,
    ) -> Vec<Envelope> {
        self.stats.full_received += 1;
        if self.has(&m) {
            self.stats.duplicate_full += 1;
            self.stats.duplicate_bytes += value.len() as u64;
            self.msgs.entry(m).or_default().have.insert(from);
            return Vec::new();
        }
        if !self.hasher.matches(&value, &m) {
            self.stats.invalid += 1;
            return Vec::new();
        }
        self.accept(m, value, Some(from), now)
    }

    fn receive_ihave(&mut self, from: PeerId, m: Digest, now: Duration) -> Vec<Envelope> {
        let (id, retry) = (self.id, self.params.heartbeat);
        let seen = self.msgs.entry(m).or_default();
        seen.have.insert(from);
        let idle = seen
            .requested_at
            .is_none_or(|t| now.saturating_sub(t) >= retry);
        if seen.value.is_none() && idle {
            seen.requested_at = Some(now);
            return vec![Envelope::control(Kind::IWant, id, from, m)];
        }
        Vec::new()
    }

    fn receive_iwant(&mut self, from: PeerId, m: Digest) {
        if let Some(seen) = self.msgs.get_mut(&m) {
            if let Some(v) = &seen.value {
                seen.have.remove(&from);
                self.queue
                    .push_back(Envelope::full_msg(self.id, from, m, v.clone()));
            }
        }
    }

    /// IHAVE for recently seen ids to non-mesh neighbors not known to have
    /// them.
    pub fn heartbeat(&mut self, now: Duration) -> Vec<Envelope> {
        let mut out = Vec::new();
        if now.saturating_sub(self.last_heartbeat) < self.params.heartbeat {
            return out;
        }
        self.last_heartbeat = now;
        let window = self.params.heartbeat * self.params.history_gossip;
        for (m, seen) in &self.msgs {
            if seen.value.is_none() || now.saturating_sub(seen.first_seen) > window {
                continue;
            }
            for &v in &self.neighbors {
                if !self.mesh.contains(&v) && !seen.have.contains(&v) {
                    out.push(Envelope::control(Kind::IHave, self.id, v, *m));
                }
            }
        }
        out
    }
}
