use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::metrics::{Counters, MessageMetrics, RunMetrics};
use super::scenario::{Protocol, Scenario, ScenarioError};
use super::topology::{build_topology, inject_adversary, rng_for, stream, Topology, TopologyError};
use crate::baseline::{GossipsubNode, GossipsubParams};
use crate::crypto::{
    setup_keys, Digest, KeyPair, KnownValues, MessageHasher, PeerId, SignatureScheme,
};
use crate::protocol::{Body, Envelope, Kind, Node};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum SimNode {
    Optimum(Node),
    Gossipsub(GossipsubNode),
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
enum Event {
    Publish(usize),
    Arrive(Envelope),
    /// An uplink or one of its links may have freed up.
    Wake(usize),
    Heartbeat(usize),
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Debug)]
struct Published {
    id: Digest,
    value: Arc<[u8]>,
    publisher: PeerId,
    at: u64,
}

fn nanos(d: Duration) -> u64 {
    d.as_nanos() as u64
}

fn node_seed(seed: u64, v: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (v as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// One discrete-event run. Single threaded and fully determined by the
/// scenario.
pub struct Simulation {
    scenario: Scenario,
    topology: Topology,
    byzantine: Vec<bool>,
    nodes: Vec<SimNode>,
    keys: Vec<KeyPair>,
    scheme: Arc<dyn SignatureScheme>,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now: u64,
    control: Vec<VecDeque<Envelope>>,
    uplink_until: Vec<u64>,
    /// Per sender, when each outgoing link drains.
    link_until: Vec<HashMap<usize, u64>>,
    messages: Vec<Published>,
    index_of: HashMap<Digest, usize>,
    delivered_at: Vec<Vec<Option<u64>>>,
    counters: Counters,
    uplink_bytes: Vec<u64>,
    finished: bool,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("protocol", &self.scenario.protocol)
            .field("nodes", &self.nodes.len())
            .field("now_ns", &self.now)
            .finish_non_exhaustive()
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Simulation, SimError> {
        scenario.validate()?;
        let topology = build_topology(scenario)?;
        let byz = inject_adversary(&topology, scenario);
        Ok(Simulation::with_parts(scenario, topology, byz))
    }

    /// A run over a given topology and adversary set.
    pub fn with_parts(
        scenario: &Scenario,
        topology: Topology,
        byz: BTreeSet<PeerId>,
    ) -> Simulation {
        let n = topology.n;
        let (keys, scheme) = setup_keys(n, scenario.seed);

        let mut vrng = rng_for(scenario.seed, stream::VALUES);
        let mut known = KnownValues::new();
        let interval = nanos(scenario.publish_interval());
        let mut messages = Vec::new();
        for i in 0..scenario.publish_count {
            let mut value = vec![0u8; scenario.message_bytes];
            vrng.fill_bytes(&mut value);
            let tag = (i as u64).to_be_bytes();
            let t = tag.len().min(value.len());
            value[..t].copy_from_slice(&tag[tag.len() - t..]);
            let value: Arc<[u8]> = value.into();
            let id = known.register(value.clone());
            messages.push(Published {
                id,
                value,
                publisher: topology.publisher,
                at: i as u64 * interval,
            });
        }
        let hasher: Arc<dyn MessageHasher> = Arc::new(known);

        let params = scenario.protocol_params();
        let mut nodes: Vec<SimNode> = (0..n)
            .map(|v| {
                let nbrs = topology.adjacency[v].clone();
                let mesh = topology.mesh[v].clone();
                match scenario.protocol {
                    Protocol::Optimum => SimNode::Optimum(Node::new(
                        keys[v].clone(),
                        scheme.clone(),
                        hasher.clone(),
                        params.clone(),
                        nbrs,
                        mesh,
                        node_seed(scenario.seed, v),
                    )),
                    Protocol::Gossipsub => SimNode::Gossipsub(GossipsubNode::new(
                        PeerId(v as u64),
                        hasher.clone(),
                        GossipsubParams {
                            heartbeat: scenario.heartbeat,
                            ..GossipsubParams::default()
                        },
                        nbrs,
                        mesh,
                    )),
                }
            })
            .collect();
        for p in &byz {
            if let SimNode::Optimum(node) = &mut nodes[p.0 as usize] {
                node.set_indiscriminate(true);
            }
        }

        let index_of = messages
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id, i))
            .collect();
        let delivered_at = vec![vec![None; n]; messages.len()];
        let byzantine = (0..n).map(|v| byz.contains(&PeerId(v as u64))).collect();
        Simulation {
            scenario: scenario.clone(),
            topology,
            byzantine,
            nodes,
            keys,
            scheme,
            rng: rng_for(scenario.seed, stream::ENGINE),
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0,
            control: vec![VecDeque::new(); n],
            uplink_until: vec![0; n],
            link_until: vec![HashMap::new(); n],
            messages,
            index_of,
            delivered_at,
            counters: Counters::default(),
            uplink_bytes: vec![0; n],
            finished: false,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn is_byzantine(&self, v: PeerId) -> bool {
        self.byzantine[v.0 as usize]
    }

    pub fn byzantine(&self) -> Vec<PeerId> {
        (0..self.byzantine.len())
            .filter(|&v| self.byzantine[v])
            .map(|v| PeerId(v as u64))
            .collect()
    }

    pub fn message_ids(&self) -> Vec<Digest> {
        self.messages.iter().map(|m| m.id).collect()
    }

    pub fn node(&self, v: PeerId) -> &SimNode {
        &self.nodes[v.0 as usize]
    }

    pub fn optimum_node(&self, v: PeerId) -> Option<&Node> {
        match &self.nodes[v.0 as usize] {
            SimNode::Optimum(n) => Some(n),
            SimNode::Gossipsub(_) => None,
        }
    }

    /// Bytes each node pushed through its uplink.
    pub fn uplink_bytes(&self) -> &[u64] {
        &self.uplink_bytes
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled {
            at,
            seq: self.seq,
            event,
        }));
    }

    fn heartbeat_gap(&mut self) -> u64 {
        let half = nanos(self.scenario.heartbeat) / 2;
        let jitter: f64 = self.rng.gen_range(0.9..1.1);
        (half as f64 * jitter) as u64
    }

    /// Runs the event loop to the horizon.
    pub fn run(&mut self) -> RunMetrics {
        if !self.finished {
            for i in 0..self.messages.len() {
                self.schedule(self.messages[i].at, Event::Publish(i));
            }
            let half = nanos(self.scenario.heartbeat) / 2;
            for v in 0..self.nodes.len() {
                let first = self.rng.gen_range(0..half.max(1));
                self.schedule(first, Event::Heartbeat(v));
            }
            let horizon = nanos(self.scenario.horizon);
            while self.heap.peek().is_some_and(|Reverse(ev)| ev.at <= horizon) {
                let Reverse(ev) = self.heap.pop().expect("peeked");
                self.now = ev.at;
                self.handle(ev.event);
            }
            self.finished = true;
        }
        self.metrics()
    }

    fn handle(&mut self, event: Event) {
        let now = Duration::from_nanos(self.now);
        match event {
            Event::Publish(i) => {
                let (id, value, p) = {
                    let m = &self.messages[i];
                    (m.id, m.value.clone(), m.publisher.0 as usize)
                };
                for (v, node) in self.nodes.iter_mut().enumerate() {
                    // polluters have no reason to spare the publisher
                    if let (SimNode::Optimum(n), false) = (node, self.byzantine[v]) {
                        n.note_publisher(id, PeerId(p as u64));
                    }
                }
                match &mut self.nodes[p] {
                    SimNode::Optimum(n) => {
                        n.publish(value.to_vec()).expect("fresh message");
                        n.generate_shards(now).expect("valid parameters");
                    }
                    SimNode::Gossipsub(g) => {
                        g.publish(value.to_vec(), now);
                    }
                }
                self.after(p, Vec::new());
            }
            Event::Arrive(env) => {
                self.counters.arrived += 1;
                let to = env.to.0 as usize;
                // polluters ignore IDONTWANT and keep pushing
                if self.byzantine[to] && env.kind == Kind::IDontWant {
                    return;
                }
                let outs = match &mut self.nodes[to] {
                    SimNode::Optimum(n) => n.receive(env, now),
                    SimNode::Gossipsub(g) => g.receive(env, now),
                };
                self.after(to, outs);
            }
            Event::Wake(v) => self.try_send(v),
            Event::Heartbeat(v) => {
                let outs = match &mut self.nodes[v] {
                    SimNode::Optimum(n) => n.heartbeat(now),
                    SimNode::Gossipsub(g) => g.heartbeat(now),
                };
                self.after(v, outs);
                let gap = self.heartbeat_gap();
                self.schedule(self.now + gap, Event::Heartbeat(v));
            }
        }
    }

    fn after(&mut self, v: usize, outs: Vec<Envelope>) {
        self.control[v].extend(outs);
        let delivered = match &mut self.nodes[v] {
            SimNode::Optimum(n) => n.take_deliveries(),
            SimNode::Gossipsub(g) => g.take_deliveries(),
        };
        for (m, t) in delivered {
            let Some(&i) = self.index_of.get(&m) else {
                continue;
            };
            if self.delivered_at[i][v].is_some() {
                continue;
            }
            self.delivered_at[i][v] = Some(nanos(t));
            let value = match &self.nodes[v] {
                SimNode::Optimum(n) => n.deliver(&m).ok(),
                SimNode::Gossipsub(g) => g.value(&m),
            };
            if value.as_deref() != Some(&self.messages[i].value[..]) {
                self.counters.wrong_deliveries += 1;
            }
        }
        self.try_send(v);
    }

    /// Starts the next transmission on `v`'s uplink, if it is idle. The
    /// uplink is held for `size / up(v)`; the envelope then drains through
    /// the per-link FIFO at `min(up(v), down(to))`. Data is only pulled for
    /// links that have drained, so send guards are evaluated late.
    fn try_send(&mut self, v: usize) {
        let now = self.now;
        if self.uplink_until[v] > now {
            return;
        }
        let links = &self.link_until[v];
        let ready = |p: PeerId| links.get(&(p.0 as usize)).is_none_or(|&t| t <= now);
        let next = match self.control[v].pop_front() {
            Some(e) => Some(e),
            None => match &mut self.nodes[v] {
                SimNode::Optimum(n) => n.next_shard_where(ready),
                SimNode::Gossipsub(g) => g.next_full_where(ready),
            },
        };
        let Some(mut env) = next else {
            return;
        };
        if self.byzantine[v]
            && env.kind == Kind::Shard
            && self.rng.gen_bool(self.scenario.pollution_prob)
        {
            self.corrupt(v, &mut env);
        }
        let bytes = env.wire_len() as u64;
        let to = env.to.0 as usize;
        let up = self.topology.up_bps[v];
        let rate = up.min(self.topology.down_bps[to]);
        let hold = (bytes as f64 * 8.0 / up * 1e9).ceil() as u64;
        let drain = (bytes as f64 * 8.0 / rate * 1e9).ceil() as u64;
        *self.counters.bytes_by_kind.entry(env.kind).or_default() += bytes;
        *self.counters.envelopes_by_kind.entry(env.kind).or_default() += 1;
        self.uplink_bytes[v] += bytes;
        self.uplink_until[v] = now + hold;
        self.schedule(now + hold, Event::Wake(v));
        let link = self.link_until[v].entry(to).or_insert(0);
        let done = (*link).max(now) + drain;
        *link = done;
        if done > now + hold {
            self.schedule(done, Event::Wake(v));
        }
        if self.scenario.loss_prob > 0.0 && self.rng.gen_bool(self.scenario.loss_prob) {
            self.counters.dropped += 1;
            return;
        }
        let lat = self.topology.latency_us(env.from, env.to) * 1000;
        self.schedule(done + lat, Event::Arrive(env));
    }

    /// Flips payload bytes and re-signs with the polluter's own key.
    fn corrupt(&mut self, v: usize, env: &mut Envelope) {
        let Body::Shard(s) = &mut env.body else {
            return;
        };
        let mut p = s.payload.to_vec();
        if p.is_empty() {
            return;
        }
        for _ in 0..32.min(p.len()) {
            let i = self.rng.gen_range(0..p.len());
            p[i] ^= self.rng.gen_range(1..=255u8);
        }
        s.payload = p.into();
        s.signature = self.scheme.sign(&self.keys[v], &s.content_digest());
        self.counters.corrupted += 1;
    }

    fn metrics(&self) -> RunMetrics {
        let correct: Vec<bool> = self.byzantine.iter().map(|b| !b).collect();
        let correct_n = correct.iter().filter(|&&c| c).count();
        let need = ((self.scenario.delivery_quorum * correct_n as f64) - 1e-9).ceil() as usize;
        let horizon = nanos(self.scenario.horizon);
        let messages = self
            .messages
            .iter()
            .enumerate()
            .filter(|(_, m)| m.at <= horizon)
            .map(|(i, m)| {
                let latency: Vec<Option<Duration>> = self.delivered_at[i]
                    .iter()
                    .map(|t| t.map(|t| Duration::from_nanos(t - m.at)))
                    .collect();
                let mut lats: Vec<Duration> = latency
                    .iter()
                    .zip(&correct)
                    .filter_map(|(l, &c)| if c { *l } else { None })
                    .collect();
                lats.sort();
                let time_to_quorum = if need == 0 {
                    Some(Duration::ZERO)
                } else {
                    lats.get(need - 1).copied()
                };
                MessageMetrics {
                    index: i,
                    id: m.id,
                    publisher: m.publisher,
                    publish_at: Duration::from_nanos(m.at),
                    latency,
                    time_to_quorum,
                }
            })
            .collect();

        let mut counters = self.counters.clone();
        counters.in_flight = self
            .heap
            .iter()
            .filter(|Reverse(ev)| matches!(ev.event, Event::Arrive(_)))
            .count() as u64;
        for node in &self.nodes {
            match node {
                SimNode::Optimum(n) => {
                    let s = n.stats();
                    counters.redundant_bytes += s.redundant_bytes;
                    counters.alerts += s.alerts_sent;
                    counters.bogus_alerts += s.bogus_alerts;
                    counters.unverified_accusations += s.unverified_accusations;
                    counters.polluted_episodes += s.polluted_episodes;
                    counters.quarantines += s.quarantines;
                    counters.releases += s.releases;
                }
                SimNode::Gossipsub(g) => counters.redundant_bytes += g.stats().duplicate_bytes,
            }
        }

        RunMetrics {
            protocol: self.scenario.protocol,
            seed: self.scenario.seed,
            axis: "none".into(),
            axis_value: String::new(),
            nodes: self.nodes.len(),
            message_bytes: self.scenario.message_bytes,
            publish_rate: self.scenario.publish_rate,
            byzantine_fraction: self.scenario.byzantine_fraction,
            deadline: self.scenario.deadline(),
            correct,
            messages,
            counters,
            topology_digest: self.topology.digest(),
        }
    }
}

/// Builds and runs `scenario` to its horizon.
pub fn run(scenario: &Scenario) -> Result<RunMetrics, SimError> {
    Ok(Simulation::new(scenario)?.run())
}
