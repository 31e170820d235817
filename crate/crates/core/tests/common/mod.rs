#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use gg_core::crypto::{setup_keys, Keccak, KeyPair, MessageHasher, PeerId, SignatureScheme};
use gg_core::protocol::{Envelope, Kind, Node, ProtocolParams};
use gg_core::rlnc::{self, Shard, SourceMessage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const K: usize = 8;

pub fn ms(x: u64) -> Duration {
    Duration::from_millis(x)
}

pub fn value(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen()).collect()
}

/// Keys for peers `0..n` and the hooks a node needs.
pub struct Fixture {
    pub keys: Vec<KeyPair>,
    pub scheme: Arc<dyn SignatureScheme>,
    pub hasher: Arc<dyn MessageHasher>,
}

impl Fixture {
    pub fn new(n: usize) -> Fixture {
        let (keys, scheme) = setup_keys(n, 7);
        Fixture {
            keys,
            scheme,
            hasher: Arc::new(Keccak),
        }
    }

    pub fn node(&self, id: u64, params: ProtocolParams, neighbors: &[u64], mesh: &[u64]) -> Node {
        Node::new(
            self.keys[id as usize].clone(),
            self.scheme.clone(),
            self.hasher.clone(),
            params,
            neighbors.iter().map(|&v| PeerId(v)).collect(),
            mesh.iter().map(|&v| PeerId(v)).collect(),
            1000 + id,
        )
    }

    pub fn sign(&self, mut shard: Shard, by: u64) -> Shard {
        shard.creator = PeerId(by);
        shard.signature = self
            .scheme
            .sign(&self.keys[by as usize], &shard.content_digest());
        shard
    }

    /// `n` coded shards of `value`, signed by `by`.
    pub fn shards(&self, value: &[u8], k: usize, n: usize, by: u64, seed: u64) -> Vec<Shard> {
        let src = SourceMessage::new(value.to_vec(), k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rlnc::encode_source(&src, n.max(k), PeerId(by), &mut rng)
            .unwrap()
            .into_iter()
            .take(n)
            .map(|s| self.sign(s, by))
            .collect()
    }

    /// `shard` with a damaged payload, re-signed by `by`.
    pub fn corrupt(&self, shard: &Shard, by: u64) -> Shard {
        let mut s = shard.clone();
        let mut p = s.payload.to_vec();
        p[0] ^= 0x5a;
        let last = p.len() - 1;
        p[last] ^= 0x11;
        s.payload = p.into();
        self.sign(s, by)
    }
}

/// Delivers envelopes between `nodes` (indexed by peer id) in FIFO order
/// until nothing is left to send, advancing `now` by `hop` per delivery.
/// Returns (kind, from, to) of everything delivered.
pub fn pump(
    nodes: &mut [Node],
    start: Vec<Envelope>,
    now: &mut Duration,
    hop: Duration,
) -> Vec<(Kind, u64, u64)> {
    let mut queue: VecDeque<Envelope> = start.into();
    let mut log = Vec::new();
    loop {
        for n in nodes.iter_mut() {
            queue.extend(n.flush_send_buffer());
        }
        let Some(env) = queue.pop_front() else {
            return log;
        };
        *now += hop;
        log.push((env.kind, env.from.0, env.to.0));
        let to = env.to.0 as usize;
        let out = nodes[to].receive(env, *now);
        queue.extend(out);
    }
}

/// Alternates [`pump`] with a heartbeat on every node until `done` holds
/// or `rounds` heartbeats have passed.
pub fn settle(
    nodes: &mut [Node],
    now: &mut Duration,
    rounds: usize,
    done: impl Fn(&[Node]) -> bool,
) -> Vec<(Kind, u64, u64)> {
    let mut log = pump(nodes, Vec::new(), now, ms(1));
    for _ in 0..rounds {
        if done(nodes) {
            break;
        }
        *now += Duration::from_secs(1);
        let t = *now;
        let beats: Vec<Envelope> = nodes.iter_mut().flat_map(|n| n.heartbeat(t)).collect();
        log.extend(pump(nodes, beats, now, ms(1)));
    }
    log
}
