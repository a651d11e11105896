//! The rule contract: firewall rules, the administrator ACL and the signed
//! transactions that mutate them.
//!
//! Canonical encodings (all integers big-endian):
//!
//! ```text
//! rule  = action:u8 protocol:u8 port_tag:u8 port:u16 source_tag:u8 addr:[u8;4] prefix_len:u8
//! tx    = kind_tag:u8 body sender:[u8;20] nonce:u64 public_key:[u8;32] signature:[u8;64]
//! body  = rule (AddRule, tag 0) | rule_id:[u8;32] (RemoveRule, 1)
//!       | address:[u8;20] (AddAdmin, 2) | address:[u8;20] (RemoveAdmin, 3)
//! ```
//!
//! The signature covers everything before `public_key`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, DecodeError, Hash32, Reader};
use crate::genesis::GenesisConfig;
use crate::identity::{derive_address, verify, Address, KeyPair, PublicKey, Signature};
use crate::ledger::Chain;

pub const RULE_ENCODED_LEN: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Deny,
    Allow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[default]
    Tcp,
    Udp,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortSpec {
    Any,
    Port(u16),
}

/// IPv4 prefix with host bits cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ipv4Prefix {
    addr: Ipv4Addr,
    len: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceSpec {
    Any,
    Prefix(Ipv4Prefix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FirewallRule {
    pub action: Action,
    pub protocol: Protocol,
    pub port: PortSpec,
    pub source: SourceSpec,
}

/// Content hash of a rule's canonical encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub Hash32);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleParseError {
    #[error("prefix length {0} exceeds 32")]
    PrefixTooLong(u8),
    #[error("invalid source `{0}`, expected `any` or a.b.c.d/len")]
    BadSource(String),
    #[error("invalid protocol `{0}`")]
    BadProtocol(String),
    #[error("invalid rule `{0}`, expected `<deny|allow> <proto> <port|any> [from <source>]`")]
    BadRule(String),
}

impl Ipv4Prefix {
    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self, RuleParseError> {
        if len > 32 {
            return Err(RuleParseError::PrefixTooLong(len));
        }
        let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
        Ok(Self {
            addr: Ipv4Addr::from(u32::from(addr) & mask),
            len,
        })
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        let mask = if self.len == 0 {
            0
        } else {
            u32::MAX << (32 - self.len)
        };
        u32::from(ip) & mask == u32::from(self.addr)
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

impl FromStr for SourceSpec {
    type Err = RuleParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("any") {
            return Ok(SourceSpec::Any);
        }
        let bad = || RuleParseError::BadSource(s.to_string());
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => (a, l.parse::<u8>().map_err(|_| bad())?),
            None => (s, 32),
        };
        let addr = addr.parse::<Ipv4Addr>().map_err(|_| bad())?;
        Ipv4Prefix::new(addr, len).map(SourceSpec::Prefix)
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSpec::Any => f.write_str("any"),
            SourceSpec::Prefix(p) => p.fmt(f),
        }
    }
}

impl FromStr for Protocol {
    type Err = RuleParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            "any" => Ok(Protocol::Any),
            _ => Err(RuleParseError::BadProtocol(s.to_string())),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
            Protocol::Any => "any",
        })
    }
}

impl fmt::Display for PortSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortSpec::Any => f.write_str("any"),
            PortSpec::Port(p) => p.fmt(f),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Deny => "deny",
            Action::Allow => "allow",
        })
    }
}

impl FirewallRule {
    pub fn deny(protocol: Protocol, port: u16) -> Self {
        Self {
            action: Action::Deny,
            protocol,
            port: PortSpec::Port(port),
            source: SourceSpec::Any,
        }
    }

    pub fn from_source(mut self, source: SourceSpec) -> Self {
        self.source = source;
        self
    }

    pub fn encode(&self) -> [u8; RULE_ENCODED_LEN] {
        let mut out = [0u8; RULE_ENCODED_LEN];
        out[0] = match self.action {
            Action::Deny => 0,
            Action::Allow => 1,
        };
        out[1] = match self.protocol {
            Protocol::Tcp => 0,
            Protocol::Udp => 1,
            Protocol::Any => 2,
        };
        if let PortSpec::Port(p) = self.port {
            out[2] = 1;
            out[3..5].copy_from_slice(&p.to_be_bytes());
        }
        if let SourceSpec::Prefix(p) = self.source {
            out[5] = 1;
            out[6..10].copy_from_slice(&p.addr.octets());
            out[10] = p.len;
        }
        out
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let offset = r.position();
        let action = match r.u8()? {
            0 => Action::Deny,
            1 => Action::Allow,
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "action",
                    tag,
                    offset,
                })
            }
        };
        let protocol = match r.u8()? {
            0 => Protocol::Tcp,
            1 => Protocol::Udp,
            2 => Protocol::Any,
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "protocol",
                    tag,
                    offset: offset + 1,
                })
            }
        };
        let port_tag = r.u8()?;
        let port_value = r.u16()?;
        let port = match port_tag {
            0 if port_value == 0 => PortSpec::Any,
            0 => return Err(DecodeError::NonCanonical("any-port with nonzero value")),
            1 => PortSpec::Port(port_value),
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "port",
                    tag,
                    offset: offset + 2,
                })
            }
        };
        let source_tag = r.u8()?;
        let addr: [u8; 4] = r.array()?;
        let len = r.u8()?;
        let source = match source_tag {
            0 if addr == [0; 4] && len == 0 => SourceSpec::Any,
            0 => return Err(DecodeError::NonCanonical("any-source with nonzero value")),
            1 => {
                let prefix = Ipv4Prefix::new(Ipv4Addr::from(addr), len)
                    .map_err(|_| DecodeError::NonCanonical("prefix length above 32"))?;
                if prefix.addr.octets() != addr {
                    return Err(DecodeError::NonCanonical("prefix has host bits set"));
                }
                SourceSpec::Prefix(prefix)
            }
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "source",
                    tag,
                    offset: offset + 5,
                })
            }
        };
        Ok(Self {
            action,
            protocol,
            port,
            source,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let rule = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(rule)
    }

    pub fn id(&self) -> RuleId {
        RuleId(sha256(&self.encode()))
    }
}

impl fmt::Display for FirewallRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} from {}",
            self.action, self.protocol, self.port, self.source
        )
    }
}

impl FromStr for FirewallRule {
    type Err = RuleParseError;

    /// Accepts the display form; `from <source>` is optional.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RuleParseError::BadRule(s.to_string());
        let words: Vec<&str> = s.split_whitespace().collect();
        let (head, source) = match words[..] {
            [a, p, n] => ([a, p, n], SourceSpec::Any),
            [a, p, n, "from", src] => ([a, p, n], src.parse()?),
            _ => return Err(bad()),
        };
        let action = match head[0] {
            "deny" => Action::Deny,
            "allow" => Action::Allow,
            _ => return Err(bad()),
        };
        let port = match head[2] {
            "any" => PortSpec::Any,
            n => PortSpec::Port(n.parse().map_err(|_| bad())?),
        };
        Ok(FirewallRule {
            action,
            protocol: head[1].parse()?,
            port,
            source,
        })
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RuleId({})", self.0.short())
    }
}

impl FromStr for RuleId {
    type Err = crate::codec::HexLenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(RuleId)
    }
}

/// Serialized form used in JSON reports and the console.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
struct RuleRecord {
    rule_id: RuleId,
    action: Action,
    protocol: Protocol,
    port: Option<u16>,
    source: String,
}

impl Serialize for FirewallRule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RuleRecord {
            rule_id: self.id(),
            action: self.action,
            protocol: self.protocol,
            port: match self.port {
                PortSpec::Any => None,
                PortSpec::Port(p) => Some(p),
            },
            source: self.source.to_string(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FirewallRule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let record = RuleRecord::deserialize(deserializer)?;
        let rule = FirewallRule {
            action: record.action,
            protocol: record.protocol,
            port: record.port.map_or(PortSpec::Any, PortSpec::Port),
            source: record.source.parse().map_err(serde::de::Error::custom)?,
        };
        if rule.id() != record.rule_id {
            return Err(serde::de::Error::custom("rule_id does not match rule content"));
        }
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxKind {
    AddRule(FirewallRule),
    RemoveRule(RuleId),
    AddAdmin(Address),
    RemoveAdmin(Address),
}

impl TxKind {
    pub fn tag(&self) -> u8 {
        match self {
            TxKind::AddRule(_) => 0,
            TxKind::RemoveRule(_) => 1,
            TxKind::AddAdmin(_) => 2,
            TxKind::RemoveAdmin(_) => 3,
        }
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TxKind::AddRule(rule) => write!(f, "add-rule [{rule}]"),
            TxKind::RemoveRule(id) => write!(f, "remove-rule {}", id.0.short()),
            TxKind::AddAdmin(a) => write!(f, "add-admin {a}"),
            TxKind::RemoveAdmin(a) => write!(f, "remove-admin {a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub kind: TxKind,
    pub sender: Address,
    pub nonce: u64,
    /// Ed25519 has no key recovery, so the signer's key travels with the tx.
    pub public_key: PublicKey,
    pub signature: Signature,
}

fn encode_signed_part(kind: &TxKind, sender: &Address, nonce: u64, out: &mut Vec<u8>) {
    out.push(kind.tag());
    match kind {
        TxKind::AddRule(rule) => out.extend_from_slice(&rule.encode()),
        TxKind::RemoveRule(id) => out.extend_from_slice(id.0.as_bytes()),
        TxKind::AddAdmin(a) | TxKind::RemoveAdmin(a) => out.extend_from_slice(&a.0),
    }
    out.extend_from_slice(&sender.0);
    out.extend_from_slice(&nonce.to_be_bytes());
}

impl Transaction {
    pub fn signed(kind: TxKind, nonce: u64, key: &KeyPair) -> Self {
        let sender = key.address();
        let mut payload = Vec::with_capacity(64);
        encode_signed_part(&kind, &sender, nonce, &mut payload);
        Self {
            signature: key.sign(&payload),
            kind,
            sender,
            nonce,
            public_key: key.public_key(),
        }
    }

    /// Bytes covered by the signature: `(kind, sender, nonce)`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        encode_signed_part(&self.kind, &self.sender, self.nonce, &mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        encode_signed_part(&self.kind, &self.sender, self.nonce, out);
        out.extend_from_slice(&self.public_key.0);
        out.extend_from_slice(&self.signature.0);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(160);
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let offset = r.position();
        let kind = match r.u8()? {
            0 => TxKind::AddRule(FirewallRule::decode_from(r)?),
            1 => TxKind::RemoveRule(RuleId(Hash32(r.array()?))),
            2 => TxKind::AddAdmin(Address(r.array()?)),
            3 => TxKind::RemoveAdmin(Address(r.array()?)),
            tag => {
                return Err(DecodeError::InvalidTag {
                    what: "transaction kind",
                    tag,
                    offset,
                })
            }
        };
        Ok(Self {
            kind,
            sender: Address(r.array()?),
            nonce: r.u64()?,
            public_key: PublicKey(r.array()?),
            signature: Signature(r.array()?),
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tx = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(tx)
    }

    pub fn hash(&self) -> Hash32 {
        sha256(&self.encode())
    }

    /// Signature valid and the embedded key derives to `sender`.
    pub fn verify_signature(&self) -> bool {
        match derive_address(&self.public_key) {
            Ok(addr) if addr == self.sender => {
                verify(&self.signing_bytes(), &self.signature, &self.public_key)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum Rejection {
    #[error("signature does not verify for the sender address")]
    BadSignature,
    #[error("sender is not an administrator")]
    NotAdmin,
    #[error("bad nonce: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("no such rule")]
    UnknownRule,
    #[error("address is not an administrator")]
    UnknownAdmin,
    #[error("cannot remove the last administrator")]
    LastAdmin,
}

/// Materialized contract state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    rules: Vec<FirewallRule>,
    admins: BTreeSet<Address>,
    nonces: BTreeMap<Address, u64>,
}

impl ChainState {
    pub fn genesis<I: IntoIterator<Item = Address>>(admins: I) -> Self {
        let admins: BTreeSet<Address> = admins.into_iter().collect();
        assert!(!admins.is_empty(), "genesis admin set must be non-empty");
        Self {
            rules: Vec::new(),
            admins,
            nonces: BTreeMap::new(),
        }
    }

    /// Rules in insertion order.
    pub fn rules(&self) -> &[FirewallRule] {
        &self.rules
    }

    pub fn admins(&self) -> &BTreeSet<Address> {
        &self.admins
    }

    pub fn nonces(&self) -> &BTreeMap<Address, u64> {
        &self.nonces
    }

    pub fn is_admin(&self, address: &Address) -> bool {
        self.admins.contains(address)
    }

    pub fn next_nonce(&self, address: &Address) -> u64 {
        self.nonces.get(address).copied().unwrap_or(0)
    }

    pub fn contains_rule(&self, id: &RuleId) -> bool {
        self.rules.iter().any(|r| r.id() == *id)
    }

    /// Checks `tx` and returns the rejection it would produce, without mutating.
    pub fn check(&self, tx: &Transaction) -> Result<(), Rejection> {
        if !tx.verify_signature() {
            return Err(Rejection::BadSignature);
        }
        if !self.admins.contains(&tx.sender) {
            return Err(Rejection::NotAdmin);
        }
        let expected = self.next_nonce(&tx.sender);
        if tx.nonce != expected {
            return Err(Rejection::BadNonce {
                expected,
                got: tx.nonce,
            });
        }
        match &tx.kind {
            TxKind::AddRule(_) | TxKind::AddAdmin(_) => Ok(()),
            TxKind::RemoveRule(id) if self.contains_rule(id) => Ok(()),
            TxKind::RemoveRule(_) => Err(Rejection::UnknownRule),
            TxKind::RemoveAdmin(a) if !self.admins.contains(a) => Err(Rejection::UnknownAdmin),
            TxKind::RemoveAdmin(_) if self.admins.len() == 1 => Err(Rejection::LastAdmin),
            TxKind::RemoveAdmin(_) => Ok(()),
        }
    }

    /// Applies `tx` in place. On rejection the state is untouched.
    pub fn apply(&mut self, tx: &Transaction) -> Result<(), Rejection> {
        self.check(tx)?;
        match &tx.kind {
            TxKind::AddRule(rule) => {
                if !self.contains_rule(&rule.id()) {
                    self.rules.push(*rule);
                }
            }
            TxKind::RemoveRule(id) => self.rules.retain(|r| r.id() != *id),
            TxKind::AddAdmin(a) => {
                self.admins.insert(*a);
            }
            TxKind::RemoveAdmin(a) => {
                self.admins.remove(a);
            }
        }
        *self.nonces.entry(tx.sender).or_insert(0) += 1;
        Ok(())
    }
}

impl ChainState {
    /// `count:u32 rule*` in insertion order, then admins and nonces as in
    /// [`state_root`].
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.rules.len() as u32).to_be_bytes());
        for rule in &self.rules {
            out.extend_from_slice(&rule.encode());
        }
        out.extend_from_slice(&(self.admins.len() as u32).to_be_bytes());
        for a in &self.admins {
            out.extend_from_slice(&a.0);
        }
        out.extend_from_slice(&(self.nonces.len() as u32).to_be_bytes());
        for (a, n) in &self.nonces {
            out.extend_from_slice(&a.0);
            out.extend_from_slice(&n.to_be_bytes());
        }
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let n = r.len_prefix(r.remaining() / RULE_ENCODED_LEN)?;
        let mut rules: Vec<FirewallRule> = Vec::with_capacity(n);
        for _ in 0..n {
            let rule = FirewallRule::decode_from(r)?;
            if rules.contains(&rule) {
                return Err(DecodeError::NonCanonical("duplicate rule"));
            }
            rules.push(rule);
        }
        let n = r.len_prefix(r.remaining() / 20)?;
        if n == 0 {
            return Err(DecodeError::NonCanonical("empty admin set"));
        }
        let mut admins = BTreeSet::new();
        let mut last = None;
        for _ in 0..n {
            let a = Address(r.array()?);
            if last.is_some_and(|l| l >= a) {
                return Err(DecodeError::NonCanonical("admins not sorted"));
            }
            last = Some(a);
            admins.insert(a);
        }
        let n = r.len_prefix(r.remaining() / 28)?;
        let mut nonces = BTreeMap::new();
        let mut last = None;
        for _ in 0..n {
            let a = Address(r.array()?);
            if last.is_some_and(|l| l >= a) {
                return Err(DecodeError::NonCanonical("nonces not sorted"));
            }
            last = Some(a);
            nonces.insert(a, r.u64()?);
        }
        Ok(Self {
            rules,
            admins,
            nonces,
        })
    }
}

pub fn apply_transaction(state: &ChainState, tx: &Transaction) -> Result<ChainState, Rejection> {
    let mut next = state.clone();
    next.apply(tx)?;
    Ok(next)
}

/// SHA-256 over `count:u32 rule*` (sorted by rule id), `count:u32 address*`
/// (sorted) and `count:u32 (address nonce:u64)*` (sorted by address).
pub fn state_root(state: &ChainState) -> Hash32 {
    let mut rules: Vec<(RuleId, [u8; RULE_ENCODED_LEN])> =
        state.rules.iter().map(|r| (r.id(), r.encode())).collect();
    rules.sort_by_key(|a| a.0);
    let mut buf = Vec::with_capacity(16 + rules.len() * 11 + state.admins.len() * 20);
    buf.extend_from_slice(&(rules.len() as u32).to_be_bytes());
    for (_, enc) in &rules {
        buf.extend_from_slice(enc);
    }
    buf.extend_from_slice(&(state.admins.len() as u32).to_be_bytes());
    for a in &state.admins {
        buf.extend_from_slice(&a.0);
    }
    buf.extend_from_slice(&(state.nonces.len() as u32).to_be_bytes());
    for (a, n) in &state.nonces {
        buf.extend_from_slice(&a.0);
        buf.extend_from_slice(&n.to_be_bytes());
    }
    sha256(&buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("transaction {tx_index} in block {height} rejected during replay: {rejection}")]
pub struct StateDivergence {
    pub height: u64,
    pub tx_index: usize,
    pub rejection: Rejection,
}

/// Folds every transaction of `chain` over the genesis state.
pub fn replay(chain: &Chain, genesis: &GenesisConfig) -> Result<ChainState, StateDivergence> {
    let mut state = genesis.genesis_state();
    for block in chain.blocks().iter().skip(1) {
        for (tx_index, tx) in block.transactions.iter().enumerate() {
            state.apply(tx).map_err(|rejection| StateDivergence {
                height: block.header.height,
                tx_index,
                rejection,
            })?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::generate_keypair;

    fn key(b: u8) -> KeyPair {
        generate_keypair(&[b; 32]).unwrap()
    }

    #[test]
    fn rule_encoding_layout() {
        let rule = FirewallRule::deny(Protocol::Tcp, 22);
        assert_eq!(rule.encode(), [0, 0, 1, 0, 22, 0, 0, 0, 0, 0, 0]);
        let sourced = FirewallRule::deny(Protocol::Udp, 53)
            .from_source("10.1.2.3/8".parse().unwrap());
        assert_eq!(sourced.encode(), [0, 1, 1, 0, 53, 1, 10, 0, 0, 0, 8]);
        assert_eq!(sourced.to_string(), "deny udp 53 from 10.0.0.0/8");
        assert_eq!(FirewallRule::decode(&sourced.encode()).unwrap(), sourced);
        assert_eq!(sourced.to_string().parse::<FirewallRule>().unwrap(), sourced);
        assert_eq!("deny tcp 22".parse::<FirewallRule>().unwrap(), rule);
        assert!("deny tcp".parse::<FirewallRule>().is_err());
        assert!("drop tcp 22".parse::<FirewallRule>().is_err());
    }

    #[test]
    fn rule_decode_rejects_non_canonical() {
        assert!(FirewallRule::decode(&[0, 0, 0, 0, 22, 0, 0, 0, 0, 0, 0]).is_err());
        assert!(FirewallRule::decode(&[0, 0, 1, 0, 22, 1, 10, 0, 0, 1, 8]).is_err());
        assert!(FirewallRule::decode(&[0, 0, 1, 0, 22, 1, 10, 0, 0, 0, 33]).is_err());
        assert!(FirewallRule::decode(&[3, 0, 1, 0, 22, 0, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn rule_id_is_content_derived() {
        let a = FirewallRule::deny(Protocol::Tcp, 22);
        let b = FirewallRule::deny(Protocol::Tcp, 22);
        assert_eq!(a.id(), b.id());
        assert_ne!(a.id(), FirewallRule::deny(Protocol::Tcp, 23).id());
        assert_ne!(a.id(), FirewallRule::deny(Protocol::Udp, 22).id());
    }

    #[test]
    fn tx_encoding_tags_and_round_trip() {
        let k = key(1);
        let rule = FirewallRule::deny(Protocol::Tcp, 22);
        let kinds = [
            TxKind::AddRule(rule),
            TxKind::RemoveRule(rule.id()),
            TxKind::AddAdmin(key(2).address()),
            TxKind::RemoveAdmin(key(2).address()),
        ];
        for (tag, kind) in kinds.into_iter().enumerate() {
            let tx = Transaction::signed(kind, 7, &k);
            let bytes = tx.encode();
            assert_eq!(bytes[0] as usize, tag);
            assert!(tx.verify_signature());
            assert_eq!(Transaction::decode(&bytes).unwrap(), tx);
            let mut trailing = bytes.clone();
            trailing.push(0);
            assert!(Transaction::decode(&trailing).is_err());
        }
    }

    #[test]
    fn forged_sender_fails_verification() {
        let mut tx = Transaction::signed(TxKind::AddAdmin(key(3).address()), 0, &key(1));
        tx.sender = key(2).address();
        assert!(!tx.verify_signature());
    }

    #[test]
    fn non_admin_is_rejected_and_state_unchanged() {
        let admin = key(1);
        let outsider = key(9);
        let state = ChainState::genesis([admin.address()]);
        let tx = Transaction::signed(
            TxKind::AddRule(FirewallRule::deny(Protocol::Tcp, 22)),
            0,
            &outsider,
        );
        assert_eq!(apply_transaction(&state, &tx), Err(Rejection::NotAdmin));
        let mut copy = state.clone();
        assert!(copy.apply(&tx).is_err());
        assert_eq!(copy, state);
    }

    #[test]
    fn admin_delegation() {
        let a = key(1);
        let b = key(2);
        let s0 = ChainState::genesis([a.address()]);
        let s1 = apply_transaction(&s0, &Transaction::signed(TxKind::AddAdmin(b.address()), 0, &a))
            .unwrap();
        let rule = FirewallRule::deny(Protocol::Tcp, 80);
        let s2 =
            apply_transaction(&s1, &Transaction::signed(TxKind::AddRule(rule), 0, &b)).unwrap();
        assert_eq!(s2.rules(), &[rule]);
    }

    #[test]
    fn last_admin_guard() {
        let a = key(1);
        let s = ChainState::genesis([a.address()]);
        let tx = Transaction::signed(TxKind::RemoveAdmin(a.address()), 0, &a);
        assert_eq!(apply_transaction(&s, &tx), Err(Rejection::LastAdmin));
    }

    #[test]
    fn remove_other_admin_then_removed_admin_is_locked_out() {
        let a = key(1);
        let b = key(2);
        let mut s = ChainState::genesis([a.address(), b.address()]);
        s.apply(&Transaction::signed(TxKind::RemoveAdmin(a.address()), 0, &a))
            .unwrap();
        let tx = Transaction::signed(TxKind::AddRule(FirewallRule::deny(Protocol::Tcp, 1)), 1, &a);
        assert_eq!(s.check(&tx), Err(Rejection::NotAdmin));
        assert_eq!(
            s.check(&Transaction::signed(TxKind::RemoveAdmin(a.address()), 0, &b)),
            Err(Rejection::UnknownAdmin)
        );
    }

    #[test]
    fn rules_keep_insertion_order_and_add_is_idempotent() {
        let a = key(1);
        let mut s = ChainState::genesis([a.address()]);
        let r22 = FirewallRule::deny(Protocol::Tcp, 22);
        let r23 = FirewallRule::deny(Protocol::Tcp, 23);
        s.apply(&Transaction::signed(TxKind::AddRule(r22), 0, &a)).unwrap();
        s.apply(&Transaction::signed(TxKind::AddRule(r23), 1, &a)).unwrap();
        s.apply(&Transaction::signed(TxKind::AddRule(r22), 2, &a)).unwrap();
        assert_eq!(s.rules(), &[r22, r23]);
        assert_eq!(s.next_nonce(&a.address()), 3);
    }

    #[test]
    fn remove_unknown_rule() {
        let a = key(1);
        let s = ChainState::genesis([a.address()]);
        let tx = Transaction::signed(
            TxKind::RemoveRule(FirewallRule::deny(Protocol::Tcp, 22).id()),
            0,
            &a,
        );
        assert_eq!(s.check(&tx), Err(Rejection::UnknownRule));
    }

    #[test]
    fn resubmitted_tx_is_bad_nonce() {
        let a = key(1);
        let mut s = ChainState::genesis([a.address()]);
        let tx = Transaction::signed(TxKind::AddRule(FirewallRule::deny(Protocol::Tcp, 22)), 0, &a);
        s.apply(&tx).unwrap();
        assert_eq!(
            s.check(&tx),
            Err(Rejection::BadNonce {
                expected: 1,
                got: 0
            })
        );
    }

    #[test]
    fn state_root_ignores_insertion_order() {
        let a = key(1);
        let r22 = FirewallRule::deny(Protocol::Tcp, 22);
        let r23 = FirewallRule::deny(Protocol::Tcp, 23);
        let mut x = ChainState::genesis([a.address()]);
        x.apply(&Transaction::signed(TxKind::AddRule(r22), 0, &a)).unwrap();
        x.apply(&Transaction::signed(TxKind::AddRule(r23), 1, &a)).unwrap();
        let mut y = ChainState::genesis([a.address()]);
        y.apply(&Transaction::signed(TxKind::AddRule(r23), 0, &a)).unwrap();
        y.apply(&Transaction::signed(TxKind::AddRule(r22), 1, &a)).unwrap();
        assert_eq!(state_root(&x), state_root(&y));
    }

    #[test]
    fn add_then_remove_changes_root_through_nonces() {
        let a = key(1);
        let r = FirewallRule::deny(Protocol::Tcp, 22);
        let before = ChainState::genesis([a.address()]);
        let mut after = before.clone();
        after.apply(&Transaction::signed(TxKind::AddRule(r), 0, &a)).unwrap();
        after.apply(&Transaction::signed(TxKind::RemoveRule(r.id()), 1, &a)).unwrap();
        assert!(after.rules().is_empty());
        assert_ne!(state_root(&before), state_root(&after));
    }

    #[test]
    fn rule_json_round_trip() {
        let rule = FirewallRule::deny(Protocol::Any, 80).from_source("192.168.0.0/16".parse().unwrap());
        let json = serde_json::to_string(&rule).unwrap();
        let back: FirewallRule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rule);
    }
}
