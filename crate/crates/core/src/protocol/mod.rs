//! Coded gossip: the per-node state machine.
//!
//! A [`Node`] is driven entirely by its caller. Every input transition takes
//! the current time and returns the control envelopes it wants sent; shard
//! transmissions sit in the node's send buffer and are pulled one at a time
//! with [`Node::next_shard`] so that the send guards are evaluated when the
//! link is actually free.

mod envelope;
mod node;
mod params;

pub use envelope::{AlertMsg, Body, Envelope, Kind, HEADER_LEN};
pub use node::{Decoded, HeldShard, MsgState, Node, NodeStats, ProtocolError};
pub use params::{ParamError, ProtocolParams};
