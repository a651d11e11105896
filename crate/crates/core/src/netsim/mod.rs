//! Peer-to-peer layer: wire messages, a seeded link simulator, the
//! virtual-time event queue, the per-node gossip and sync state machine and
//! a TCP transport for running nodes in real time.

pub mod link;
pub mod message;
pub mod node;
pub mod scheduler;
pub mod transport;

pub use link::{deliver, Delivery, LinkState, NetworkConditions};
pub use message::{Message, NodeId, Payload, StateSummary, CONSOLE_ID};
pub use node::{NodeEvent, Outbound, PeerConfig, PeerNode, SyncStatus};
pub use scheduler::EventQueue;
