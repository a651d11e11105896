//! Direct model of the rule contract and state root layout, written
//! without the library's state code.

use std::collections::{BTreeMap, BTreeSet};

use blockfw_core::identity::Address;
use blockfw_core::rulestate::{
    Action, ChainState, FirewallRule, PortSpec, Protocol, SourceSpec, Transaction, TxKind,
};
use sha2::{Digest, Sha256};

/// Straightforward model of the contract, kept apart from the library.
#[derive(Default)]
pub struct Oracle {
    rules: Vec<[u8; 11]>,
    admins: BTreeSet<[u8; 20]>,
    nonces: BTreeMap<[u8; 20], u64>,
}

fn encode_rule(r: &FirewallRule) -> [u8; 11] {
    let mut e = [0u8; 11];
    e[0] = if r.action == Action::Deny { 0 } else { 1 };
    e[1] = match r.protocol {
        Protocol::Tcp => 0,
        Protocol::Udp => 1,
        Protocol::Any => 2,
    };
    if let PortSpec::Port(p) = r.port {
        e[2] = 1;
        e[3..5].copy_from_slice(&p.to_be_bytes());
    }
    if let SourceSpec::Prefix(p) = r.source {
        e[5] = 1;
        e[6..10].copy_from_slice(&p.addr().octets());
        e[10] = p.len();
    }
    e
}

fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

impl Oracle {
    pub fn genesis(admins: &[Address]) -> Self {
        Self {
            admins: admins.iter().map(|a| a.0).collect(),
            ..Self::default()
        }
    }

    pub fn apply(&mut self, tx: &Transaction) -> bool {
        let sender = tx.sender.0;
        let expected = self.nonces.get(&sender).copied().unwrap_or(0);
        if !tx.verify_signature() || !self.admins.contains(&sender) || tx.nonce != expected {
            return false;
        }
        match &tx.kind {
            TxKind::AddRule(r) => {
                let e = encode_rule(r);
                if !self.rules.contains(&e) {
                    self.rules.push(e);
                }
            }
            TxKind::RemoveRule(id) => {
                let before = self.rules.len();
                self.rules.retain(|e| digest(e) != id.0 .0);
                if self.rules.len() == before {
                    return false;
                }
            }
            TxKind::AddAdmin(a) => {
                self.admins.insert(a.0);
            }
            TxKind::RemoveAdmin(a) => {
                if !self.admins.contains(&a.0) || self.admins.len() == 1 {
                    return false;
                }
                self.admins.remove(&a.0);
            }
        }
        self.nonces.insert(sender, expected + 1);
        true
    }

    pub fn root(&self) -> [u8; 32] {
        let mut rules = self.rules.clone();
        rules.sort_by_key(|e| digest(e));
        let mut buf = Vec::new();
        buf.extend_from_slice(&(rules.len() as u32).to_be_bytes());
        rules.iter().for_each(|e| buf.extend_from_slice(e));
        buf.extend_from_slice(&(self.admins.len() as u32).to_be_bytes());
        self.admins.iter().for_each(|a| buf.extend_from_slice(a));
        buf.extend_from_slice(&(self.nonces.len() as u32).to_be_bytes());
        for (a, n) in &self.nonces {
            buf.extend_from_slice(a);
            buf.extend_from_slice(&n.to_be_bytes());
        }
        digest(&buf)
    }

    pub fn matches(&self, s: &ChainState) -> bool {
        s.rules().iter().map(encode_rule).collect::<Vec<_>>() == self.rules
            && s.admins().iter().map(|a| a.0).collect::<BTreeSet<_>>() == self.admins
            && s.nonces().iter().map(|(a, n)| (a.0, *n)).collect::<BTreeMap<_, _>>() == self.nonces
    }
}
