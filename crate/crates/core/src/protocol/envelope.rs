//! Typed wire messages exchanged between peers.
//!
//! Framing: kind (1) ‖ from (8) ‖ to (8) ‖ msgId (32) ‖ bodyLen (4) ‖ body,
//! big-endian. SHARD bodies use the shard wire layout; ALERT bodies are
//! accused (8) ‖ shard ‖ sigLen (2) ‖ signature; FULLMSG bodies are
//! originalLength (8) ‖ value. Control messages have empty bodies.

use std::sync::Arc;

use crate::crypto::{Digest, PeerId, Signature};
use crate::rlnc::{CodecError, Reader, Shard};

/// Fixed framing overhead in bytes.
pub const HEADER_LEN: usize = 1 + 8 + 8 + 32 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Shard,
    IDontWant,
    IHave,
    IWant,
    Alert,
    Polluted,
    FullMsg,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Shard,
        Kind::IDontWant,
        Kind::IHave,
        Kind::IWant,
        Kind::Alert,
        Kind::Polluted,
        Kind::FullMsg,
    ];

    pub fn code(self) -> u8 {
        match self {
            Kind::Shard => 1,
            Kind::IDontWant => 2,
            Kind::IHave => 3,
            Kind::IWant => 4,
            Kind::Alert => 5,
            Kind::Polluted => 6,
            Kind::FullMsg => 7,
        }
    }

    pub fn from_code(code: u8) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Shard => "SHARD",
            Kind::IDontWant => "IDONTWANT",
            Kind::IHave => "IHAVE",
            Kind::IWant => "IWANT",
            Kind::Alert => "ALERT",
            Kind::Polluted => "POLLUTED",
            Kind::FullMsg => "FULLMSG",
        }
    }

    /// Whether the envelope carries message data rather than metadata.
    pub fn is_data(self) -> bool {
        matches!(self, Kind::Shard | Kind::FullMsg)
    }
}

/// Accusation with evidence: a shard signed by the accused that fails the
/// decode witness test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlertMsg {
    pub msg_id: Digest,
    pub accused: PeerId,
    pub evidence: Shard,
    pub evidence_sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Empty,
    Shard(Shard),
    Alert(AlertMsg),
    FullMsg { original_len: u64, value: Arc<[u8]> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub kind: Kind,
    pub from: PeerId,
    pub to: PeerId,
    pub msg_id: Digest,
    pub body: Body,
}

impl Envelope {
    pub fn control(kind: Kind, from: PeerId, to: PeerId, msg_id: Digest) -> Envelope {
        debug_assert!(matches!(
            kind,
            Kind::IDontWant | Kind::IHave | Kind::IWant | Kind::Polluted
        ));
        Envelope {
            kind,
            from,
            to,
            msg_id,
            body: Body::Empty,
        }
    }

    pub fn shard(from: PeerId, to: PeerId, shard: Shard) -> Envelope {
        Envelope {
            kind: Kind::Shard,
            from,
            to,
            msg_id: shard.msg_id,
            body: Body::Shard(shard),
        }
    }

    pub fn alert(from: PeerId, to: PeerId, alert: AlertMsg) -> Envelope {
        Envelope {
            kind: Kind::Alert,
            from,
            to,
            msg_id: alert.msg_id,
            body: Body::Alert(alert),
        }
    }

    pub fn full_msg(from: PeerId, to: PeerId, msg_id: Digest, value: Arc<[u8]>) -> Envelope {
        Envelope {
            kind: Kind::FullMsg,
            from,
            to,
            msg_id,
            body: Body::FullMsg {
                original_len: value.len() as u64,
                value,
            },
        }
    }

    pub fn body_len(&self) -> usize {
        match &self.body {
            Body::Empty => 0,
            Body::Shard(s) => s.wire_len(),
            Body::Alert(a) => 8 + a.evidence.wire_len() + 2 + a.evidence_sig.len(),
            Body::FullMsg { value, .. } => 8 + value.len(),
        }
    }

    /// Bytes on the wire; what the simulator's bandwidth model charges.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.body_len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.push(self.kind.code());
        out.extend_from_slice(&self.from.0.to_be_bytes());
        out.extend_from_slice(&self.to.0.to_be_bytes());
        out.extend_from_slice(self.msg_id.as_bytes());
        out.extend_from_slice(&(self.body_len() as u32).to_be_bytes());
        match &self.body {
            Body::Empty => {}
            Body::Shard(s) => out.extend_from_slice(&s.to_bytes()),
            Body::Alert(a) => {
                out.extend_from_slice(&a.accused.0.to_be_bytes());
                out.extend_from_slice(&a.evidence.to_bytes());
                out.extend_from_slice(&(a.evidence_sig.len() as u16).to_be_bytes());
                out.extend_from_slice(a.evidence_sig.as_bytes());
            }
            Body::FullMsg {
                original_len,
                value,
            } => {
                out.extend_from_slice(&original_len.to_be_bytes());
                out.extend_from_slice(value);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Envelope, CodecError> {
        let mut r = Reader::new(buf);
        let code = r.array::<1>()?[0];
        let kind =
            Kind::from_code(code).ok_or_else(|| CodecError::Malformed(format!("kind {code}")))?;
        let from = PeerId(u64::from_be_bytes(r.array::<8>()?));
        let to = PeerId(u64::from_be_bytes(r.array::<8>()?));
        let msg_id = Digest(r.array::<32>()?);
        let body_len = u32::from_be_bytes(r.array::<4>()?) as usize;
        let body_bytes = r.take(body_len)?;
        if !r.rest().is_empty() {
            return Err(CodecError::Malformed("trailing bytes after body".into()));
        }
        let mut b = Reader::new(body_bytes);
        let body = match kind {
            Kind::IDontWant | Kind::IHave | Kind::IWant | Kind::Polluted => Body::Empty,
            Kind::Shard => {
                let (s, _) = Shard::from_bytes(b.rest())?;
                Body::Shard(s)
            }
            Kind::Alert => {
                let accused = PeerId(u64::from_be_bytes(b.array::<8>()?));
                let rest = b.rest();
                let (evidence, used) = Shard::from_bytes(rest)?;
                let mut t = Reader::new(&rest[used..]);
                let sig_len = u16::from_be_bytes(t.array::<2>()?) as usize;
                let evidence_sig = Signature(t.take(sig_len)?.to_vec());
                Body::Alert(AlertMsg {
                    msg_id,
                    accused,
                    evidence,
                    evidence_sig,
                })
            }
            Kind::FullMsg => {
                let original_len = u64::from_be_bytes(b.array::<8>()?);
                Body::FullMsg {
                    original_len,
                    value: b.rest().into(),
                }
            }
        };
        let env = Envelope {
            kind,
            from,
            to,
            msg_id,
            body,
        };
        if env.body_len() != body_len {
            return Err(CodecError::Malformed(format!(
                "{} body declares {body_len} bytes, parsed {}",
                kind.name(),
                env.body_len()
            )));
        }
        Ok(env)
    }
}
