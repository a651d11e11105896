//! Administrator console: builds, signs and submits transactions to a node
//! and reports chain and rule state.

use std::fmt;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::codec::Hash32;
use crate::identity::{Address, KeyPair};
use crate::netsim::message::{Message, Payload, StateSummary, CONSOLE_ID};
use crate::netsim::transport::ConsoleConnection;
use crate::rulestate::{
    FirewallRule, PortSpec, Protocol, Rejection, RuleId, SourceSpec, Transaction, TxKind,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_KEY_MISSING: i32 = 2;
pub const EXIT_UNREACHABLE: i32 = 3;
pub const EXIT_REJECTED: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum ConsoleError {
    #[error("{0}")]
    Usage(String),
    #[error("key file {0} not found or unreadable")]
    KeyMissing(PathBuf),
    #[error("node unreachable: {0}")]
    Unreachable(#[from] io::Error),
    #[error("unexpected reply from node: {0}")]
    Protocol(String),
    #[error("transaction {} rejected: {}", .tx_hash.short(), .reason.map(|r| r.to_string()).unwrap_or_else(|| "not included".into()))]
    Rejected {
        tx_hash: Hash32,
        reason: Option<Rejection>,
    },
}

impl ConsoleError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ConsoleError::Usage(_) | ConsoleError::Protocol(_) => EXIT_USAGE,
            ConsoleError::KeyMissing(_) => EXIT_KEY_MISSING,
            ConsoleError::Unreachable(_) => EXIT_UNREACHABLE,
            ConsoleError::Rejected { .. } => EXIT_REJECTED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnblockTarget {
    Port(u16),
    Rule(RuleId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsoleCommand {
    Block {
        port: u16,
        protocol: Protocol,
        source: SourceSpec,
    },
    Unblock(UnblockTarget),
    AdminAdd(Address),
    AdminRemove(Address),
    Rules,
    Status,
}

impl ConsoleCommand {
    pub fn needs_key(&self) -> bool {
        !matches!(self, ConsoleCommand::Rules | ConsoleCommand::Status)
    }
}

/// What the console needs from a node.
pub trait NodeClient {
    fn state(&mut self) -> Result<StateSummary, ConsoleError>;
    /// Next usable nonce, counting the node's pending transactions.
    fn nonce(&mut self, address: &Address) -> Result<u64, ConsoleError>;
    fn submit(&mut self, tx: &Transaction) -> Result<(), ConsoleError>;
    fn wait(&mut self, d: Duration) {
        thread::sleep(d);
    }
}

pub struct TcpNodeClient {
    addr: SocketAddr,
    timeout: Duration,
    conn: Option<ConsoleConnection>,
}

impl TcpNodeClient {
    pub fn new(addr: SocketAddr, timeout: Duration) -> Self {
        Self {
            addr,
            timeout,
            conn: None,
        }
    }

    fn conn(&mut self) -> Result<&mut ConsoleConnection, ConsoleError> {
        if self.conn.is_none() {
            self.conn = Some(ConsoleConnection::connect(self.addr, self.timeout)?);
        }
        Ok(self.conn.as_mut().expect("connected"))
    }

    fn request(&mut self, payload: Payload) -> Result<Payload, ConsoleError> {
        let msg = Message::new(CONSOLE_ID, payload);
        let reply = self.conn()?.request(&msg);
        match reply {
            Ok(m) => Ok(m.payload),
            Err(e) => {
                self.conn = None;
                Err(e.into())
            }
        }
    }
}

impl NodeClient for TcpNodeClient {
    fn state(&mut self) -> Result<StateSummary, ConsoleError> {
        match self.request(Payload::GetState)? {
            Payload::StateReply(s) => Ok(*s),
            other => Err(ConsoleError::Protocol(other.kind_name().into())),
        }
    }

    fn nonce(&mut self, address: &Address) -> Result<u64, ConsoleError> {
        match self.request(Payload::GetNonce(*address))? {
            Payload::NonceReply { address: a, nonce } if a == *address => Ok(nonce),
            other => Err(ConsoleError::Protocol(other.kind_name().into())),
        }
    }

    fn submit(&mut self, tx: &Transaction) -> Result<(), ConsoleError> {
        let msg = Message::new(CONSOLE_ID, Payload::TxGossip(tx.clone()));
        self.conn()?.send(&msg)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConsoleOptions {
    /// Return right after gossiping instead of waiting for inclusion.
    pub no_wait: bool,
    pub poll: Duration,
}

impl Default for ConsoleOptions {
    fn default() -> Self {
        Self {
            no_wait: false,
            poll: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleView {
    pub id: String,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatusView {
    pub height: u64,
    pub head_hash: String,
    pub sealer: Option<String>,
    pub period: u64,
    pub wiggle: u64,
    pub admins: Vec<String>,
    pub rules: Vec<RuleView>,
}

impl From<&StateSummary> for StatusView {
    fn from(s: &StateSummary) -> Self {
        Self {
            height: s.height,
            head_hash: s.head_hash.to_hex(),
            sealer: s.sealer.map(|a| a.to_hex()),
            period: s.period,
            wiggle: s.wiggle,
            admins: s.state.admins().iter().map(Address::to_hex).collect(),
            rules: rule_views(s.state.rules()),
        }
    }
}

fn rule_views(rules: &[FirewallRule]) -> Vec<RuleView> {
    rules
        .iter()
        .map(|r| RuleView {
            id: r.id().to_string(),
            rule: r.to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Outcome {
    Submitted {
        tx_hash: String,
        nonce: u64,
        kind: String,
        /// Height at which the transaction was observed applied.
        included: Option<u64>,
    },
    Rules { rules: Vec<RuleView> },
    Status(StatusView),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Submitted {
                tx_hash,
                kind,
                included,
                ..
            } => {
                write!(f, "{tx_hash} {kind}")?;
                match included {
                    Some(h) => write!(f, " (included by height {h})"),
                    None => write!(f, " (submitted)"),
                }
            }
            Outcome::Rules { rules } => {
                if rules.is_empty() {
                    return writeln!(f, "no rules");
                }
                for r in rules {
                    writeln!(f, "{}  {}", &r.id[..16], r.rule)?;
                }
                Ok(())
            }
            Outcome::Status(s) => {
                writeln!(f, "height   {}", s.height)?;
                writeln!(f, "head     {}", s.head_hash)?;
                writeln!(f, "sealer   {}", s.sealer.as_deref().unwrap_or("-"))?;
                writeln!(f, "period   {} s (wiggle {} s)", s.period, s.wiggle)?;
                writeln!(f, "admins   {}", s.admins.len())?;
                for a in &s.admins {
                    writeln!(f, "  {a}")?;
                }
                writeln!(f, "rules    {}", s.rules.len())?;
                for r in &s.rules {
                    writeln!(f, "  {}  {}", &r.id[..16], r.rule)?;
                }
                Ok(())
            }
        }
    }
}

fn resolve_unblock(target: &UnblockTarget, state: &StateSummary) -> Result<RuleId, ConsoleError> {
    match target {
        UnblockTarget::Rule(id) => Ok(*id),
        UnblockTarget::Port(port) => {
            let matches: Vec<&FirewallRule> = state
                .state
                .rules()
                .iter()
                .filter(|r| r.port == PortSpec::Port(*port))
                .collect();
            match matches.as_slice() {
                [one] => Ok(one.id()),
                [] => Err(ConsoleError::Usage(format!("no rule for port {port}"))),
                _ => Err(ConsoleError::Usage(format!(
                    "{} rules match port {port}; unblock by rule id",
                    matches.len()
                ))),
            }
        }
    }
}

/// Runs one console command against `client`.
pub fn execute(
    command: &ConsoleCommand,
    key: Option<&KeyPair>,
    client: &mut dyn NodeClient,
    options: ConsoleOptions,
) -> Result<Outcome, ConsoleError> {
    let summary = client.state()?;
    let kind = match command {
        ConsoleCommand::Rules => {
            return Ok(Outcome::Rules {
                rules: rule_views(summary.state.rules()),
            })
        }
        ConsoleCommand::Status => return Ok(Outcome::Status(StatusView::from(&summary))),
        ConsoleCommand::Block {
            port,
            protocol,
            source,
        } => TxKind::AddRule(FirewallRule::deny(*protocol, *port).from_source(*source)),
        ConsoleCommand::Unblock(target) => TxKind::RemoveRule(resolve_unblock(target, &summary)?),
        ConsoleCommand::AdminAdd(a) => TxKind::AddAdmin(*a),
        ConsoleCommand::AdminRemove(a) => TxKind::RemoveAdmin(*a),
    };
    let key = key.ok_or_else(|| ConsoleError::Usage("command needs --key".into()))?;
    let address = key.address();
    let nonce = client.nonce(&address)?;
    let tx = Transaction::signed(kind, nonce, key);
    let tx_hash = tx.hash();
    client.submit(&tx)?;
    let submitted = |included| Outcome::Submitted {
        tx_hash: tx_hash.to_hex(),
        nonce,
        kind: tx.kind.to_string(),
        included,
    };
    if options.no_wait {
        return Ok(submitted(None));
    }

    // Rejections are inferred: a transaction not applied within three
    // periods plus the wiggle is reported as refused.
    let window = Duration::from_secs(3 * summary.period + summary.wiggle);
    let started = Instant::now();
    let mut waited = Duration::ZERO;
    loop {
        let now = client.state()?;
        if now.state.next_nonce(&address) > nonce {
            return Ok(submitted(Some(now.height)));
        }
        if waited >= window || started.elapsed() >= window * 2 {
            let mut probe = now.state.clone();
            let reason = probe.apply(&tx).err();
            return Err(ConsoleError::Rejected { tx_hash, reason });
        }
        client.wait(options.poll);
        waited += options.poll;
    }
}
