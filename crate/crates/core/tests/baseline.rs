use std::sync::Arc;
use std::time::Duration;

use gg_core::baseline::{GossipsubNode, GossipsubParams};
use gg_core::crypto::{hash, Keccak, PeerId};
use gg_core::protocol::{Envelope, Kind};

fn ms(x: u64) -> Duration {
    Duration::from_millis(x)
}

fn node(id: u64, neighbors: &[u64], mesh: &[u64]) -> GossipsubNode {
    GossipsubNode::new(
        PeerId(id),
        Arc::new(Keccak),
        GossipsubParams::default(),
        neighbors.iter().map(|&v| PeerId(v)).collect(),
        mesh.iter().map(|&v| PeerId(v)).collect(),
    )
}

fn drain(n: &mut GossipsubNode) -> Vec<Envelope> {
    std::iter::from_fn(|| n.next_full()).collect()
}

fn targets(envs: &[Envelope], kind: Kind) -> Vec<u64> {
    envs.iter()
        .filter(|e| e.kind == kind)
        .map(|e| e.to.0)
        .collect()
}

const MESH: [u64; 6] = [1, 2, 3, 4, 5, 6];
const ALL: [u64; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

#[test]
fn publish_pushes_to_whole_mesh() {
    let mut p = node(0, &ALL, &MESH);
    let m = p.publish(b"hello".to_vec(), ms(0));
    assert_eq!(m, hash(b"hello"));
    let out = drain(&mut p);
    assert_eq!(targets(&out, Kind::FullMsg), MESH.to_vec());
    assert!(p.has(&m));
    assert_eq!(p.take_deliveries(), vec![(m, ms(0))]);

    p.publish(b"hello".to_vec(), ms(1));
    assert!(drain(&mut p).is_empty());
}

#[test]
fn isolated_publisher_only_delivers_locally() {
    let mut p = node(0, &[], &[]);
    let m = p.publish(b"alone".to_vec(), ms(0));
    assert!(drain(&mut p).is_empty());
    assert_eq!(&p.value(&m).unwrap()[..], b"alone");
}

#[test]
fn first_receipt_forwards_to_rest_of_mesh() {
    let mut n = node(9, &ALL, &MESH);
    let v: Arc<[u8]> = Arc::from(&b"payload"[..]);
    let m = hash(&v);
    let ctl = n.receive(
        Envelope::full_msg(PeerId(3), PeerId(9), m, v.clone()),
        ms(10),
    );
    assert_eq!(targets(&ctl, Kind::IDontWant), vec![1, 2, 4, 5, 6]);
    n.receive(
        Envelope::control(Kind::IDontWant, PeerId(5), PeerId(9), m),
        ms(11),
    );
    let out = drain(&mut n);
    assert_eq!(targets(&out, Kind::FullMsg), vec![1, 2, 4, 6]);
    assert_eq!(n.stats().sends_suppressed, 1);

    let again = n.receive(
        Envelope::full_msg(PeerId(4), PeerId(9), m, v.clone()),
        ms(12),
    );
    assert!(again.is_empty());
    assert!(drain(&mut n).is_empty());
    assert_eq!(n.stats().duplicate_full, 1);
    assert_eq!(n.stats().duplicate_bytes, v.len() as u64);
}

#[test]
fn corrupted_value_is_dropped() {
    let mut n = node(9, &ALL, &MESH);
    let m = hash(b"real");
    let out = n.receive(
        Envelope::full_msg(PeerId(1), PeerId(9), m, Arc::from(&b"fake"[..])),
        ms(1),
    );
    assert!(out.is_empty());
    assert!(!n.has(&m));
    assert_eq!(n.stats().invalid, 1);
    assert!(n.take_deliveries().is_empty());
}

#[test]
fn iwant_for_unknown_id_is_ignored() {
    let mut n = node(9, &ALL, &MESH);
    let out = n.receive(
        Envelope::control(Kind::IWant, PeerId(7), PeerId(9), hash(b"?")),
        ms(1),
    );
    assert!(out.is_empty());
    assert!(drain(&mut n).is_empty());
}

#[test]
fn heartbeat_gossips_to_metadata_peers() {
    let mut p = node(0, &ALL, &MESH);
    let m = p.publish(b"gossip".to_vec(), ms(0));
    drain(&mut p);
    assert!(p.heartbeat(ms(500)).is_empty());
    let out = p.heartbeat(ms(1000));
    assert_eq!(targets(&out, Kind::IHave), vec![7, 8]);
    p.receive(
        Envelope::control(Kind::IDontWant, PeerId(7), PeerId(0), m),
        ms(1100),
    );
    p.receive(
        Envelope::control(Kind::IDontWant, PeerId(8), PeerId(0), m),
        ms(1100),
    );
    assert!(p.heartbeat(ms(2000)).is_empty());
    // ids age out of the gossip window
    let q = p.publish(b"old".to_vec(), ms(2000));
    assert!(p.heartbeat(ms(6000)).iter().all(|e| e.msg_id != q));
}

#[test]
fn ihave_pulls_once_per_heartbeat() {
    let mut n = node(8, &[0, 1], &[1]);
    let m = hash(b"pulled");
    let want = n.receive(
        Envelope::control(Kind::IHave, PeerId(0), PeerId(8), m),
        ms(0),
    );
    assert_eq!(targets(&want, Kind::IWant), vec![0]);
    let again = n.receive(
        Envelope::control(Kind::IHave, PeerId(0), PeerId(8), m),
        ms(10),
    );
    assert!(again.is_empty());
    let retry = n.receive(
        Envelope::control(Kind::IHave, PeerId(0), PeerId(8), m),
        ms(1000),
    );
    assert_eq!(targets(&retry, Kind::IWant), vec![0]);
}

#[test]
fn partitioned_node_heals_through_gossip() {
    // 0 - 1 mesh, 2 only a metadata neighbor of 1
    let mut nodes = [
        node(0, &[1], &[1]),
        node(1, &[0, 2], &[0]),
        node(2, &[1], &[]),
    ];
    let m = nodes[0].publish(b"heal me".to_vec(), ms(0));
    let mut queue: Vec<Envelope> = Vec::new();
    let mut now = ms(0);
    for round in 0..4 {
        if round > 0 {
            now = ms(1000 * round);
            let t = now;
            queue.extend(nodes.iter_mut().flat_map(|n| n.heartbeat(t)));
        }
        loop {
            for n in nodes.iter_mut() {
                queue.extend(drain(n));
            }
            if queue.is_empty() {
                break;
            }
            now += ms(1);
            let env = queue.remove(0);
            let to = env.to.0 as usize;
            let out = nodes[to].receive(env, now);
            queue.extend(out);
        }
    }
    assert!(nodes.iter().all(|n| n.has(&m)));
}

#[test]
fn cycle_produces_duplicates() {
    // triangle: every node is in every mesh
    let mut nodes: Vec<_> = (0..3u64)
        .map(|i| {
            let others: Vec<u64> = (0..3).filter(|&j| j != i).collect();
            node(i, &others, &others)
        })
        .collect();
    nodes[0].publish(b"loop".to_vec(), ms(0));
    // deliver both of 0's sends before anyone forwards
    let first: Vec<Envelope> = drain(&mut nodes[0]);
    for e in first {
        let to = e.to.0 as usize;
        nodes[to].receive(e, ms(1));
    }
    let mut queue: Vec<Envelope> = Vec::new();
    for n in nodes.iter_mut() {
        queue.extend(drain(n));
    }
    for e in queue {
        let to = e.to.0 as usize;
        nodes[to].receive(e, ms(2));
    }
    let dup: u64 = nodes.iter().map(|n| n.stats().duplicate_bytes).sum();
    assert!(dup > 0);
}
