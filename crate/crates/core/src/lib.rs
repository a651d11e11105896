//! Permissioned proof-of-authority ledger for distributing firewall rules
//! across a small set of hosts.

pub mod codec;
pub mod commander;
pub mod consensus;
pub mod console;
pub mod fixtures;
pub mod genesis;
pub mod harness;
pub mod identity;
pub mod ledger;
pub mod netsim;
pub mod rulestate;
