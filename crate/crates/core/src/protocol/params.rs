use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid protocol parameters: {0}")]
pub struct ParamError(pub String);

/// Tunables of the coded gossip protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    /// Fragments per message.
    pub k: usize,
    /// Forwarding threshold: a relay starts recoding once its rank exceeds
    /// `r / k`.
    pub r: usize,
    /// The publisher emits `k * p` shards. `None` means one round per
    /// neighbor.
    pub publish_multiplier: Option<usize>,
    pub heartbeat: Duration,
    /// Upper bound on recoded shards a relay emits per message.
    pub recode_cap: usize,
    /// How long a decoded node waits before accusing senders of bad shards.
    /// Gives honest relays of polluted data time to report themselves.
    pub accusation_grace: Duration,
    /// Shards kept per message while searching for a clean decoding set.
    pub polluted_store_cap: usize,
    /// Candidate decoding sets scored per search step.
    pub search_samples: usize,
}

impl ProtocolParams {
    pub fn new(k: usize) -> ProtocolParams {
        let heartbeat = Duration::from_secs(1);
        ProtocolParams {
            k,
            r: k,
            publish_multiplier: None,
            heartbeat,
            recode_cap: 3 * k,
            accusation_grace: 2 * heartbeat,
            polluted_store_cap: 4 * k,
            search_samples: 32,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.k == 0 || self.k > crate::rlnc::MAX_K {
            return Err(ParamError(format!("k = {} out of range", self.k)));
        }
        if self.publish_multiplier == Some(0) {
            return Err(ParamError("publish multiplier must be positive".into()));
        }
        if self.heartbeat.is_zero() {
            return Err(ParamError("heartbeat must be positive".into()));
        }
        if self.polluted_store_cap < self.k {
            return Err(ParamError("polluted store cap below k".into()));
        }
        Ok(())
    }

    /// Whether holding `rank` innovative shards is enough to start forwarding.
    pub fn forwards_at(&self, rank: usize) -> bool {
        rank * self.k > self.r
    }
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams::new(8)
    }
}
