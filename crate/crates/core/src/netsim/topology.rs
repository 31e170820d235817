use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::scenario::{LatencyModel, Scenario};
use crate::crypto::{hash, Digest, PeerId};

/// Upper end of the acceptable mesh degree range.
pub const MESH_DEGREE_HIGH: usize = 12;

/// Independent rng streams derived from one scenario seed.
pub(crate) mod stream {
    pub const TOPOLOGY: u64 = 1;
    pub const ADVERSARY: u64 = 2;
    pub const VALUES: u64 = 3;
    pub const ENGINE: u64 = 4;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("mesh degree {d} is infeasible with {n} nodes")]
    InfeasibleDegree { d: usize, n: usize },
    #[error("could not build a connected mesh after {0} attempts")]
    Disconnected(usize),
    #[error("latency matrix has {got} entries, expected {want}")]
    BadMatrix { got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n: usize,
    /// Sorted neighbor lists.
    pub adjacency: Vec<Vec<PeerId>>,
    /// Sorted mesh lists, each a subset of the adjacency list.
    pub mesh: Vec<Vec<PeerId>>,
    /// One-way delay in microseconds, row-major by (from, to).
    pub latency_us: Vec<u64>,
    pub up_bps: Vec<f64>,
    pub down_bps: Vec<f64>,
    pub publisher: PeerId,
}

fn connected(adj: &[BTreeSet<usize>]) -> bool {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                stack.push(u);
            }
        }
    }
    count == n
}

fn random_mesh(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<BTreeSet<usize>> {
    let lo = d.min(n - 1);
    let hi = MESH_DEGREE_HIGH.max(d).min(n - 1);
    let mut mesh = vec![BTreeSet::new(); n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &v in &order {
        while mesh[v].len() < lo {
            let open = |u: usize, cap: usize, mesh: &[BTreeSet<usize>]| {
                u != v && !mesh[v].contains(&u) && mesh[u].len() < cap
            };
            let mut cands: Vec<usize> = (0..n).filter(|&u| open(u, lo, &mesh)).collect();
            if cands.is_empty() {
                cands = (0..n).filter(|&u| open(u, hi, &mesh)).collect();
            }
            let Some(&u) = cands.choose(rng) else {
                break;
            };
            mesh[v].insert(u);
            mesh[u].insert(v);
        }
    }
    mesh
}

/// Seeded random topology for `scenario`.
pub fn build_topology(scenario: &Scenario) -> Result<Topology, TopologyError> {
    const ATTEMPTS: usize = 100;
    let n = scenario.nodes;
    let d = scenario.mesh_degree;
    if n < 2 || d == 0 || d >= n {
        return Err(TopologyError::InfeasibleDegree { d, n });
    }
    let mut rng = rng_for(scenario.seed, stream::TOPOLOGY);
    let mesh = (0..ATTEMPTS)
        .map(|_| random_mesh(n, d, &mut rng))
        .find(|m| connected(m))
        .ok_or(TopologyError::Disconnected(ATTEMPTS))?;

    // metadata links on top of the mesh, up to an average degree of 2D
    let mut adj = mesh.clone();
    let target_edges = (n * (2 * d).min(n - 1)).div_ceil(2);
    let mut edges: usize = adj.iter().map(BTreeSet::len).sum::<usize>() / 2;
    while edges < target_edges {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v && adj[u].insert(v) {
            adj[v].insert(u);
            edges += 1;
        }
    }

    let latency_us = match &scenario.latency {
        LatencyModel::Uniform { lo_ms, hi_ms } => {
            let mut l = vec![0u64; n * n];
            for u in 0..n {
                for v in u + 1..n {
                    let ms = if hi_ms > lo_ms {
                        rng.gen_range(*lo_ms..=*hi_ms)
                    } else {
                        *lo_ms
                    };
                    let us = (ms * 1000.0).round() as u64;
                    l[u * n + v] = us;
                    l[v * n + u] = us;
                }
            }
            l
        }
        LatencyModel::Matrix { ms, .. } => {
            if ms.len() != n * n {
                return Err(TopologyError::BadMatrix {
                    got: ms.len(),
                    want: n * n,
                });
            }
            ms.iter().map(|x| (x * 1000.0).round() as u64).collect()
        }
    };

    // bandwidth classes over a shuffled node order; cumulative rounding so
    // the counts add up to n
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut class_of = vec![0usize; n];
    let mut cum = 0.0;
    let mut start = 0;
    for (c, class) in scenario.bandwidth_classes.iter().enumerate() {
        cum += class.fraction;
        let end = if c + 1 == scenario.bandwidth_classes.len() {
            n
        } else {
            ((cum * n as f64).round() as usize).min(n)
        };
        for &v in &order[start..end.max(start)] {
            class_of[v] = c;
        }
        start = end.max(start);
    }
    let best = (0..scenario.bandwidth_classes.len())
        .max_by(|&a, &b| {
            let ca = &scenario.bandwidth_classes[a];
            let cb = &scenario.bandwidth_classes[b];
            (ca.up_bps.min(ca.down_bps))
                .total_cmp(&cb.up_bps.min(cb.down_bps))
                .then(b.cmp(&a))
        })
        .expect("at least one class");
    let publisher = rng.gen_range(0..n);
    if class_of[publisher] != best {
        if let Some(&swap) = order.iter().find(|&&v| class_of[v] == best) {
            class_of[swap] = class_of[publisher];
        }
        class_of[publisher] = best;
    }
    let up_bps = class_of
        .iter()
        .map(|&c| scenario.bandwidth_classes[c].up_bps)
        .collect();
    let down_bps = class_of
        .iter()
        .map(|&c| scenario.bandwidth_classes[c].down_bps)
        .collect();

    let ids = |s: &BTreeSet<usize>| s.iter().map(|&u| PeerId(u as u64)).collect::<Vec<_>>();
    Ok(Topology {
        n,
        adjacency: adj.iter().map(ids).collect(),
        mesh: mesh.iter().map(ids).collect(),
        latency_us,
        up_bps,
        down_bps,
        publisher: PeerId(publisher as u64),
    })
}

impl Topology {
    pub fn latency_us(&self, from: PeerId, to: PeerId) -> u64 {
        self.latency_us[from.0 as usize * self.n + to.0 as usize]
    }

    /// Canonical byte encoding, used for digests and equality checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.n as u64).to_be_bytes());
        out.extend_from_slice(&self.publisher.0.to_be_bytes());
        for lists in [&self.adjacency, &self.mesh] {
            for l in lists.iter() {
                out.extend_from_slice(&(l.len() as u32).to_be_bytes());
                for p in l {
                    out.extend_from_slice(&p.0.to_be_bytes());
                }
            }
        }
        for x in &self.latency_us {
            out.extend_from_slice(&x.to_be_bytes());
        }
        for x in self.up_bps.iter().chain(&self.down_bps) {
            out.extend_from_slice(&x.to_bits().to_be_bytes());
        }
        out
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }

    pub fn is_mesh_symmetric(&self) -> bool {
        self.mesh.iter().enumerate().all(|(v, l)| {
            l.iter()
                .all(|u| self.mesh[u.0 as usize].contains(&PeerId(v as u64)))
        })
    }
}

/// Seeded choice of polluting nodes; never the publisher.
pub fn inject_adversary(topology: &Topology, scenario: &Scenario) -> BTreeSet<PeerId> {
    let mut rng = rng_for(scenario.seed, stream::ADVERSARY);
    let n = topology.n;
    let count = ((scenario.byzantine_fraction * n as f64).round() as usize).min(n - 1);
    let mut cands: Vec<PeerId> = (0..n as u64)
        .map(PeerId)
        .filter(|&p| p != topology.publisher)
        .collect();
    cands.shuffle(&mut rng);
    cands.into_iter().take(count).collect()
}
