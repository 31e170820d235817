//! Deterministic discrete-event network simulator.
//!
//! Every node has one uplink shared by FIFO links to its peers. Sending
//! holds the uplink for `size / up(u)`; the envelope then drains through
//! the link at `min(up(u), down(v))` and arrives one latency later. Control
//! envelopes jump ahead of data, and data is pulled from the protocol only
//! when both the uplink and the target link are free, so send guards see
//! the latest state.

mod engine;
pub mod metrics;
pub mod scenario;
pub mod topology;

pub use engine::{run, SimError, SimNode, Simulation};
pub use metrics::{RunMetrics, SUMMARY_COLUMNS};
pub use scenario::{BandwidthClass, LatencyModel, Protocol, Scenario, ScenarioError};
pub use topology::{build_topology, inject_adversary, Topology, TopologyError};
