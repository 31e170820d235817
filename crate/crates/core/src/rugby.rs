//! Pollution defence layered on the coded gossip node.
//!
//! A node whose full-rank shard set hashes wrong isolates itself: it stops
//! forwarding the message, drops what it had queued for it and tells its
//! mesh with POLLUTED. Receivers quarantine that peer and audit it once they
//! have decoded: the next shard it sends either releases or convicts it.
//! After decoding, a node tests
//! every other shard it held; senders of inconsistent ones land in malPeers
//! and are reported to the mesh with the offending signed shard as evidence.

use std::time::Duration;

use crate::crypto::{Digest, PeerId};
use crate::protocol::{AlertMsg, Envelope, HeldShard, Kind, Node};
use crate::rlnc::is_consistent;

impl Node {
    /// Enters the polluted state for `m` and announces it.
    pub fn self_isolate(&mut self, m: Digest) -> Vec<Envelope> {
        let Some(st) = self.msgs.get_mut(&m) else {
            return Vec::new();
        };
        if st.is_polluted {
            return Vec::new();
        }
        st.is_polluted = true;
        st.isolated_from = st.shard_set.len();
        st.polluted_sent.clear();
        self.stats.polluted_episodes += 1;
        // anything queued may be a combination of polluted shards
        self.send_buffer.retain(|q| q.msg_id != m);
        self.polluted_to_mesh(m)
    }

    fn polluted_to_mesh(&mut self, m: Digest) -> Vec<Envelope> {
        let st = self.msgs.get_mut(&m).expect("known message");
        let mut out = Vec::new();
        for &v in &self.mesh {
            if st.polluted_sent.insert(v) {
                out.push(Envelope::control(Kind::Polluted, self.id, v, m));
            }
        }
        out
    }

    /// POLLUTED to mesh neighbors not yet told during the current episode.
    pub fn send_polluted(&mut self) -> Vec<Envelope> {
        let polluted: Vec<Digest> = self
            .msgs
            .iter()
            .filter(|(_, st)| st.is_polluted)
            .map(|(m, _)| *m)
            .collect();
        polluted
            .into_iter()
            .flat_map(|m| self.polluted_to_mesh(m))
            .collect()
    }

    pub fn receive_polluted(&mut self, from: PeerId, m: Digest) {
        let st = self.msgs.entry(m).or_default();
        if !st.self_reported.insert(from) {
            // an honest node raises its hand once per message; a verdict
            // reached after that stands
            return;
        }
        st.mal_peers.remove(&from);
        if st.qua_peers.insert(from) {
            self.stats.quarantines += 1;
        }
    }

    /// After the grace period, tests every held shard outside the decoding
    /// set against the decoded value and flags the senders of bad ones.
    pub fn pollution_discovery(&mut self, now: Duration) {
        let grace = self.params.accusation_grace;
        for (m, st) in self.msgs.iter_mut() {
            let Some(dec) = &st.decoded else {
                continue;
            };
            let since = st.suspect_at.map_or(dec.at, |t| t.max(dec.at));
            if !st.pollution_seen || st.discovery_done || now < since + grace {
                continue;
            }
            st.discovery_done = true;
            let value = dec.value.clone();
            let (bad, good): (Vec<HeldShard>, Vec<HeldShard>) = std::mem::take(&mut st.shard_set)
                .into_iter()
                .partition(|h| h.from != self.id && !is_consistent(&value, &h.shard));
            st.shard_set = good;
            for h in bad {
                let from = h.from;
                if st.self_reported.contains(&from) || st.qua_peers.contains(&from) {
                    continue;
                }
                if st.mal_peers.insert(from) {
                    self.stats.verified_accusations += 1;
                    self.mal_log.push((*m, from, now));
                }
                st.mal_shards.push(h);
            }
        }
    }

    /// ALERT with evidence to every mesh neighbor except the accused.
    pub fn send_alert(&mut self) -> Vec<Envelope> {
        let mut out = Vec::new();
        for (m, st) in self.msgs.iter_mut() {
            for h in std::mem::take(&mut st.mal_shards) {
                let accused = h.from;
                for &v in &self.mesh {
                    if v == accused || !st.alerted.insert((accused, v)) {
                        continue;
                    }
                    out.push(Envelope::alert(
                        self.id,
                        v,
                        AlertMsg {
                            msg_id: *m,
                            accused,
                            evidence_sig: h.shard.signature.clone(),
                            evidence: h.shard.clone(),
                        },
                    ));
                    self.stats.alerts_sent += 1;
                }
            }
        }
        out
    }

    /// Accepts an accusation when the evidence carries the accused's valid
    /// signature and, if this node has decoded, really is inconsistent with
    /// the decoded value.
    pub fn receive_alert(&mut self, _from: PeerId, alert: AlertMsg) -> Vec<Envelope> {
        self.stats.alerts_received += 1;
        let accused = alert.accused;
        let m = alert.msg_id;
        let signed = matches!(
            self.scheme.verify(
                accused,
                &alert.evidence.content_digest(),
                &alert.evidence_sig
            ),
            Ok(true)
        );
        if accused == self.id || alert.evidence.msg_id != m || !signed {
            self.stats.bogus_alerts += 1;
            return Vec::new();
        }
        let st = self.msgs.entry(m).or_default();
        if st.self_reported.contains(&accused)
            || st.qua_peers.contains(&accused)
            || st.mal_peers.contains(&accused)
        {
            return Vec::new();
        }
        match &st.decoded {
            Some(dec) if is_consistent(&dec.value, &alert.evidence) => {
                self.stats.bogus_alerts += 1;
                return Vec::new();
            }
            Some(_) => self.stats.verified_accusations += 1,
            None => self.stats.unverified_accusations += 1,
        }
        st.mal_peers.insert(accused);
        self.mal_log.push((m, accused, self.now));
        // We may already have relayed combinations of the accused's shards.
        // Own up to it, then retry decoding without them.
        let relayed = st.decoded.is_none()
            && st.recodes > 0
            && st.shard_set.iter().any(|h| h.from == accused);
        if relayed {
            st.dirty = true;
            return self.self_isolate(m);
        }
        Vec::new()
    }

    /// Settles quarantined peers against the decoded value. Everything a
    /// quarantined peer sends was produced after it raised its hand, and an
    /// honest node only sends again once it has decoded, so a consistent
    /// shard releases it and an inconsistent one convicts it.
    pub fn check_shards(&mut self) {
        let now = self.now;
        for (m, st) in self.msgs.iter_mut() {
            let Some(dec) = &st.decoded else {
                continue;
            };
            for h in std::mem::take(&mut st.qua_shards) {
                if !st.qua_peers.contains(&h.from) {
                    continue;
                }
                if is_consistent(&dec.value, &h.shard) {
                    st.qua_peers.remove(&h.from);
                    self.stats.releases += 1;
                } else {
                    st.qua_peers.remove(&h.from);
                    if st.mal_peers.insert(h.from) {
                        self.stats.verified_accusations += 1;
                        self.mal_log.push((*m, h.from, now));
                    }
                    st.mal_shards.push(h);
                }
            }
        }
    }

    /// Pulls a shard from each quarantined peer of a decoded message, so a
    /// peer that has recovered gets a chance to prove it.
    pub(crate) fn audit_quarantined(&mut self) -> Vec<Envelope> {
        let mut out = Vec::new();
        for (m, st) in &self.msgs {
            if st.decoded.is_none() {
                continue;
            }
            for &q in &st.qua_peers {
                if !st.qua_shards.iter().any(|h| h.from == q) {
                    out.push(Envelope::control(Kind::IWant, self.id, q, *m));
                    self.stats.audits_sent += 1;
                }
            }
        }
        out
    }
}
