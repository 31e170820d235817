mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use common::{ms, value, Fixture, K};
use gg_core::crypto::{hash, Digest, PeerId};
use gg_core::protocol::{AlertMsg, Body, Envelope, Kind, Node, ProtocolParams};
use gg_core::rlnc::{self, Shard};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MESH: [u64; 5] = [0, 2, 3, 8, 9];
const LEN: usize = 4000;

fn victim(f: &Fixture) -> Node {
    f.node(1, ProtocolParams::new(K), &MESH, &MESH)
}

fn deliver(n: &mut Node, from: u64, s: &Shard, at: Duration) -> Vec<Envelope> {
    n.receive(Envelope::shard(PeerId(from), n.id(), s.clone()), at)
}

fn peers(set: &BTreeSet<PeerId>) -> Vec<u64> {
    set.iter().map(|p| p.0).collect()
}

fn alerts(out: &[Envelope]) -> Vec<&AlertMsg> {
    out.iter()
        .filter_map(|e| match &e.body {
            Body::Alert(a) => Some(a),
            _ => None,
        })
        .collect()
}

/// Feeds `k - 1` honest shards from peer 0, then `bad` (sender, shard)
/// pairs, then `extra` more honest shards. Returns the node, the message id
/// and every envelope it emitted.
fn polluted_run(f: &Fixture, bad: &[u64], extra: usize) -> (Node, Digest, Vec<Envelope>) {
    let v = value(LEN, 40);
    let m = hash(&v);
    let honest = f.shards(&v, K, K - 1 + extra + bad.len(), 0, 1);
    let mut n = victim(f);
    let mut out = Vec::new();
    let mut t = 0;
    let mut tick = || {
        t += 1;
        ms(t)
    };
    for s in &honest[..K - 1] {
        out.extend(deliver(&mut n, 0, s, tick()));
    }
    for (i, &b) in bad.iter().enumerate() {
        let c = f.corrupt(&honest[K - 1 + extra + i], b);
        out.extend(deliver(&mut n, b, &c, tick()));
    }
    for s in &honest[K - 1..K - 1 + extra] {
        out.extend(deliver(&mut n, 0, s, tick()));
    }
    (n, m, out)
}

fn after_grace(n: &mut Node, m: &Digest) -> Vec<Envelope> {
    let at = n.state(m).unwrap().decoded.as_ref().expect("decoded").at;
    n.step(at + n.params().accusation_grace + ms(1))
}

#[test]
fn corrupt_shard_isolates_and_gates_the_victim() {
    let f = Fixture::new(10);
    let (mut n, m, out) = polluted_run(&f, &[9], 0);
    let st = n.state(&m).unwrap();
    assert!(st.is_polluted);
    assert!(!st.is_decoded());
    let raised: Vec<u64> = out
        .iter()
        .filter(|e| e.kind == Kind::Polluted)
        .map(|e| e.to.0)
        .collect();
    assert_eq!(raised, MESH.to_vec());
    // queued forwards were purged and nothing new goes out
    assert_eq!(n.queued_shards(), 0);
    assert!(n.flush_send_buffer().is_empty());
    assert!(n.send_polluted().is_empty());
}

#[test]
fn single_polluter_is_singled_out() {
    let f = Fixture::new(10);
    let (mut n, m, _) = polluted_run(&f, &[9], 2);
    let st = n.state(&m).unwrap();
    assert!(st.is_decoded());
    assert!(!st.is_polluted);
    assert!(
        st.mal_peers.is_empty(),
        "no accusation inside the grace period"
    );
    let out = after_grace(&mut n, &m);
    let st = n.state(&m).unwrap();
    assert_eq!(peers(&st.mal_peers), vec![9]);
    assert_eq!(n.mal_log().len(), 1);
    let sent = alerts(&out);
    let to: Vec<u64> = out
        .iter()
        .filter(|e| e.kind == Kind::Alert)
        .map(|e| e.to.0)
        .collect();
    assert_eq!(to, vec![0, 2, 3, 8]);
    assert!(sent.iter().all(|a| a.accused == PeerId(9) && a.msg_id == m));
    assert!(!rlnc::is_consistent(
        &n.deliver(&m).unwrap(),
        &sent[0].evidence
    ));
}

#[test]
fn two_polluters_are_both_flagged() {
    let f = Fixture::new(10);
    let (mut n, m, _) = polluted_run(&f, &[8, 9], 3);
    assert!(n.state(&m).unwrap().is_decoded());
    after_grace(&mut n, &m);
    assert_eq!(peers(&n.state(&m).unwrap().mal_peers), vec![8, 9]);
}

#[test]
fn clean_decode_accuses_nobody() {
    let f = Fixture::new(10);
    let v = value(LEN, 41);
    let m = hash(&v);
    let mut n = victim(&f);
    for s in f.shards(&v, K, K + 2, 0, 2).iter() {
        deliver(&mut n, 0, s, ms(1));
    }
    let out = n.step(ms(60_000));
    let st = n.state(&m).unwrap();
    assert!(st.is_decoded() && !st.pollution_seen);
    assert!(st.mal_peers.is_empty() && alerts(&out).is_empty());
}

fn decoded_peer(f: &Fixture, id: u64, v: &[u8]) -> Node {
    let mut n = f.node(id, ProtocolParams::new(K), &[0, 1, 3, 9], &[0, 1, 3, 9]);
    for s in f.shards(v, K, K, 0, 1) {
        deliver(&mut n, 0, &s, ms(1));
    }
    assert!(n.deliver(&hash(v)).is_ok());
    n
}

fn real_alert(f: &Fixture) -> (AlertMsg, Vec<u8>) {
    let (mut n, m, _) = polluted_run(f, &[9], 2);
    let out = after_grace(&mut n, &m);
    (alerts(&out)[0].clone(), n.deliver(&m).unwrap().to_vec())
}

#[test]
fn verified_alert_blacklists_without_touching_shard_set() {
    let f = Fixture::new(10);
    let (alert, v) = real_alert(&f);
    let m = hash(&v);
    let mut peer = decoded_peer(&f, 2, &v);
    let held = peer.state(&m).unwrap().shard_set.len();
    peer.receive(Envelope::alert(PeerId(1), PeerId(2), alert), ms(5000));
    let st = peer.state(&m).unwrap();
    assert_eq!(peers(&st.mal_peers), vec![9]);
    assert_eq!(st.shard_set.len(), held);
    assert_eq!(peer.stats().verified_accusations, 1);
    // later shards from the accused are dropped on arrival
    let s = f.corrupt(&f.shards(&v, K, 1, 0, 9)[0], 9);
    peer.receive_shard(PeerId(9), s);
    assert_eq!(peer.state(&m).unwrap().shard_set.len(), held);
}

#[test]
fn undecoded_receiver_accepts_on_signature_alone() {
    let f = Fixture::new(10);
    let (alert, v) = real_alert(&f);
    let m = hash(&v);
    let mut peer = f.node(3, ProtocolParams::new(K), &[1, 9], &[1, 9]);
    peer.receive(Envelope::alert(PeerId(1), PeerId(3), alert), ms(10));
    assert_eq!(peers(&peer.state(&m).unwrap().mal_peers), vec![9]);
    assert_eq!(peer.stats().unverified_accusations, 1);
}

#[test]
fn forged_alert_is_bogus() {
    let f = Fixture::new(10);
    let (_, v) = real_alert(&f);
    let m = hash(&v);
    // the accuser fabricates a bad shard in 9's name with its own key
    let mut evidence = f.corrupt(&f.shards(&v, K, 1, 0, 3)[0], 1);
    evidence.creator = PeerId(9);
    let alert = AlertMsg {
        msg_id: m,
        accused: PeerId(9),
        evidence_sig: evidence.signature.clone(),
        evidence,
    };
    let mut peer = decoded_peer(&f, 2, &v);
    peer.receive(Envelope::alert(PeerId(1), PeerId(2), alert.clone()), ms(10));
    // evidence that is a valid combination accuses nobody
    let honest = f.shards(&v, K, 1, 3, 4).remove(0);
    let framed = AlertMsg {
        msg_id: m,
        accused: PeerId(3),
        evidence_sig: honest.signature.clone(),
        evidence: honest,
    };
    peer.receive(Envelope::alert(PeerId(1), PeerId(2), framed), ms(11));
    let st = peer.state(&m).unwrap();
    assert!(st.mal_peers.is_empty());
    assert_eq!(peer.stats().bogus_alerts, 2);
}

#[test]
fn alert_about_quarantined_peer_is_ignored() {
    let f = Fixture::new(10);
    let (alert, v) = real_alert(&f);
    let m = hash(&v);
    let mut peer = decoded_peer(&f, 2, &v);
    peer.receive_polluted(PeerId(9), m);
    peer.receive(Envelope::alert(PeerId(1), PeerId(2), alert), ms(10));
    let st = peer.state(&m).unwrap();
    assert!(st.mal_peers.is_empty());
    assert_eq!(peers(&st.qua_peers), vec![9]);
}

#[test]
fn polluted_is_idempotent_and_reintegrates_once() {
    let f = Fixture::new(10);
    let (mut n, m, _) = polluted_run(&f, &[9], 2);
    after_grace(&mut n, &m);
    n.receive_polluted(PeerId(9), m);
    n.receive_polluted(PeerId(9), m);
    let st = n.state(&m).unwrap();
    assert!(st.mal_peers.is_empty());
    assert_eq!(peers(&st.qua_peers), vec![9]);
    assert_eq!(n.stats().quarantines, 1);
}

#[test]
fn quarantined_shards_are_held_apart() {
    let f = Fixture::new(10);
    let v = value(LEN, 42);
    let m = hash(&v);
    let mut n = victim(&f);
    n.receive_polluted(PeerId(3), m);
    let s = f.shards(&v, K, 1, 3, 5).remove(0);
    deliver(&mut n, 3, &s, ms(1));
    let st = n.state(&m).unwrap();
    assert!(st.shard_set.is_empty());
    assert_eq!(st.qua_shards.len(), 1);
}

#[test]
fn audit_releases_a_recovered_peer() {
    let f = Fixture::new(10);
    let v = value(LEN, 43);
    let m = hash(&v);
    let mut n = decoded_peer(&f, 2, &v);
    n.receive_polluted(PeerId(3), m);
    let audit: Vec<_> = n
        .heartbeat(ms(2000))
        .into_iter()
        .filter(|e| e.kind == Kind::IWant)
        .map(|e| e.to.0)
        .collect();
    assert_eq!(audit, vec![3]);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = f.shards(&v, K, K, 0, 6);
    let refs: Vec<&Shard> = base.iter().collect();
    let fresh = f.sign(rlnc::recode(&refs, PeerId(3), &mut rng).unwrap(), 3);
    deliver(&mut n, 3, &fresh, ms(2100));
    let st = n.state(&m).unwrap();
    assert!(st.qua_peers.is_empty() && st.mal_peers.is_empty());
    assert_eq!(n.stats().releases, 1);
}

#[test]
fn audit_convicts_a_persistent_polluter() {
    let f = Fixture::new(10);
    let v = value(LEN, 44);
    let m = hash(&v);
    let mut n = decoded_peer(&f, 2, &v);
    n.receive_polluted(PeerId(3), m);
    let bad = f.corrupt(&f.shards(&v, K, 1, 0, 7)[0], 3);
    let out = deliver(&mut n, 3, &bad, ms(2100));
    let st = n.state(&m).unwrap();
    assert!(st.qua_peers.is_empty());
    assert_eq!(peers(&st.mal_peers), vec![3]);
    assert!(alerts(&out).iter().all(|a| a.accused == PeerId(3)));
    assert_eq!(alerts(&out).len(), 3);
}

#[test]
fn undecoded_relay_owns_up_after_alert() {
    let f = Fixture::new(10);
    let v = value(LEN, 45);
    let m = hash(&v);
    let honest = f.shards(&v, K, K, 0, 8);
    let mut n = victim(&f);
    deliver(&mut n, 0, &honest[0], ms(1));
    // a bad shard from 9 arrives early and gets mixed into forwards
    deliver(&mut n, 9, &f.corrupt(&honest[1], 9), ms(2));
    assert!(n.state(&m).unwrap().recodes > 0);
    let evidence = f.corrupt(&honest[2], 9);
    let alert = AlertMsg {
        msg_id: m,
        accused: PeerId(9),
        evidence_sig: evidence.signature.clone(),
        evidence,
    };
    let out = n.receive(Envelope::alert(PeerId(2), PeerId(1), alert), ms(3));
    let st = n.state(&m).unwrap();
    assert!(st.is_polluted);
    assert!(out.iter().any(|e| e.kind == Kind::Polluted));
    for s in &honest[1..] {
        deliver(&mut n, 0, s, ms(4));
    }
    assert_eq!(&n.deliver(&m).unwrap()[..], &v[..]);
    assert!(!n.state(&m).unwrap().is_polluted);
}
