//! Firewall commander: derives the desired rule set from the local chain and
//! reconciles a pluggable firewall backend towards it on every refresh.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::{debug, warn};

use crate::codec::Hash32;
use crate::genesis::GenesisConfig;
use crate::ledger::Chain;
use crate::netsim::node::{Outbound, PeerNode, SyncStatus};
use crate::rulestate::{
    replay, Action, ChainState, FirewallRule, PortSpec, Protocol, RuleId, SourceSpec, TxKind,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capabilities {
    pub protocols: Vec<Protocol>,
    pub max_rules: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("injected backend failure")]
    Injected,
    #[error("backend rule limit {0} reached")]
    Capacity(usize),
    #[error("backend does not support {0}")]
    Unsupported(Protocol),
    #[error("malformed backend state at line {line}: {text}")]
    Malformed { line: usize, text: String },
    #[error("backend keeps rules it was asked to remove")]
    Stuck,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The only operations a firewall has to offer.
pub trait FirewallBackend {
    fn capabilities(&self) -> Capabilities;
    /// Rules as currently installed, in order.
    fn list(&mut self) -> Result<Vec<FirewallRule>, BackendError>;
    fn add(&mut self, rule: &FirewallRule) -> Result<(), BackendError>;
    fn remove(&mut self, rule: &FirewallRule) -> Result<(), BackendError>;
}

impl<B: FirewallBackend + ?Sized> FirewallBackend for Box<B> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn list(&mut self) -> Result<Vec<FirewallRule>, BackendError> {
        (**self).list()
    }
    fn add(&mut self, rule: &FirewallRule) -> Result<(), BackendError> {
        (**self).add(rule)
    }
    fn remove(&mut self, rule: &FirewallRule) -> Result<(), BackendError> {
        (**self).remove(rule)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReconcileReport {
    pub added: usize,
    pub removed: usize,
    pub unchanged: usize,
    /// Ids added in this pass, in order.
    pub added_ids: Vec<RuleId>,
    /// Set when a backend call failed; counts cover what completed.
    pub error: Option<String>,
}

impl ReconcileReport {
    pub fn is_noop(&self) -> bool {
        self.added == 0 && self.removed == 0 && self.error.is_none()
    }
}

/// Makes `backend` hold exactly `desired`, in order. Stale rules go first;
/// if the survivors are out of order the tail from the first misplaced rule
/// is removed and re-added. Stops at the first backend error.
pub fn reconcile(desired: &[FirewallRule], backend: &mut dyn FirewallBackend) -> ReconcileReport {
    let mut report = ReconcileReport::default();
    let run = |report: &mut ReconcileReport, backend: &mut dyn FirewallBackend| {
        let caps = backend.capabilities();
        if let Some(max) = caps.max_rules {
            if desired.len() > max {
                return Err(BackendError::Capacity(max));
            }
        }
        let wanted: BTreeSet<RuleId> = desired.iter().map(FirewallRule::id).collect();
        // Removal may take out every copy of a duplicated rule, so list
        // again until only wanted rules remain, each once.
        let mut kept = backend.list()?;
        for _ in 0..3 {
            let mut seen = BTreeSet::new();
            let doomed: Vec<FirewallRule> = kept
                .iter()
                .filter(|r| !wanted.contains(&r.id()) || !seen.insert(r.id()))
                .copied()
                .collect();
            if doomed.is_empty() {
                break;
            }
            for rule in &doomed {
                backend.remove(rule)?;
                report.removed += 1;
            }
            kept = backend.list()?;
        }
        let distinct: BTreeSet<RuleId> = kept.iter().map(FirewallRule::id).collect();
        if distinct.len() != kept.len() || !distinct.is_subset(&wanted) {
            return Err(BackendError::Stuck);
        }
        // Keep the common prefix; anything after it is re-added in order.
        let aligned = kept
            .iter()
            .zip(desired)
            .take_while(|(k, d)| k == d)
            .count();
        for rule in kept[aligned..].iter().rev() {
            backend.remove(rule)?;
            report.removed += 1;
        }
        report.unchanged = aligned;
        for rule in &desired[aligned..] {
            if !caps.protocols.contains(&rule.protocol) {
                return Err(BackendError::Unsupported(rule.protocol));
            }
            backend.add(rule)?;
            report.added += 1;
            report.added_ids.push(rule.id());
        }
        Ok(())
    };
    if let Err(e) = run(&mut report, backend) {
        report.error = Some(e.to_string());
    }
    report
}

/// In-memory backend with fault injection and an add log.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    rules: Vec<FirewallRule>,
    fail_next: u32,
    fail_after: Option<u32>,
    add_log: Vec<FirewallRule>,
    pub max_rules: Option<usize>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes the next `n` calls fail.
    pub fn fail_next(&mut self, n: u32) {
        self.fail_next = n;
    }

    /// Lets `n` calls succeed, then fails one.
    pub fn fail_after(&mut self, n: u32) {
        self.fail_after = Some(n);
    }

    /// Installs a rule behind the commander's back.
    pub fn inject_stale(&mut self, rule: FirewallRule) {
        self.rules.push(rule);
    }

    pub fn rules(&self) -> &[FirewallRule] {
        &self.rules
    }

    /// Every rule ever added through [`FirewallBackend::add`].
    pub fn add_log(&self) -> &[FirewallRule] {
        &self.add_log
    }

    fn gate(&mut self) -> Result<(), BackendError> {
        match self.fail_after {
            Some(0) => {
                self.fail_after = None;
                return Err(BackendError::Injected);
            }
            Some(n) => self.fail_after = Some(n - 1),
            None => {}
        }
        if self.fail_next > 0 {
            self.fail_next -= 1;
            return Err(BackendError::Injected);
        }
        Ok(())
    }
}

impl FirewallBackend for MockBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            protocols: vec![Protocol::Tcp, Protocol::Udp, Protocol::Any],
            max_rules: self.max_rules,
        }
    }

    fn list(&mut self) -> Result<Vec<FirewallRule>, BackendError> {
        self.gate()?;
        Ok(self.rules.clone())
    }

    fn add(&mut self, rule: &FirewallRule) -> Result<(), BackendError> {
        self.gate()?;
        self.add_log.push(*rule);
        if !self.rules.contains(rule) {
            self.rules.push(*rule);
        }
        Ok(())
    }

    fn remove(&mut self, rule: &FirewallRule) -> Result<(), BackendError> {
        self.gate()?;
        self.rules.retain(|r| r != rule);
        Ok(())
    }
}

/// Renders one rule as a firewall command line.
pub fn script_line(rule: &FirewallRule) -> String {
    let action = match rule.action {
        Action::Deny => "deny",
        Action::Allow => "allow",
    };
    let port = match rule.port {
        PortSpec::Any => "any".to_string(),
        PortSpec::Port(p) => p.to_string(),
    };
    let source = match rule.source {
        SourceSpec::Any => "any".to_string(),
        SourceSpec::Prefix(p) => p.to_string(),
    };
    format!("{action} proto {} port {port} from {source}", rule.protocol)
}

/// Parses a line written by [`ScriptBackend`]. Returns whether it is a
/// deletion and the rule.
pub fn parse_script_line(line: &str) -> Option<(bool, FirewallRule)> {
    let mut words: Vec<&str> = line.split_whitespace().collect();
    let delete = words.first() == Some(&"delete");
    if delete {
        words.remove(0);
    }
    let [action, "proto", proto, "port", port, "from", source] = words[..] else {
        return None;
    };
    let action = match action {
        "deny" => Action::Deny,
        "allow" => Action::Allow,
        _ => return None,
    };
    let port = match port {
        "any" => PortSpec::Any,
        p => PortSpec::Port(p.parse().ok()?),
    };
    let rule = FirewallRule {
        action,
        protocol: proto.parse().ok()?,
        port,
        source: source.parse().ok()?,
    };
    Some((delete, rule))
}

/// Appends one command per operation to a file an operator can feed to a
/// real firewall. Removals are written as `delete <rule>`.
#[derive(Debug, Clone)]
pub struct ScriptBackend {
    path: PathBuf,
}

impl ScriptBackend {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, line: &str) -> Result<(), BackendError> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(f, "{line}")?;
        Ok(())
    }
}

impl FirewallBackend for ScriptBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            protocols: vec![Protocol::Tcp, Protocol::Udp, Protocol::Any],
            max_rules: None,
        }
    }

    fn list(&mut self) -> Result<Vec<FirewallRule>, BackendError> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        let mut rules: Vec<FirewallRule> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (delete, rule) = parse_script_line(line).ok_or_else(|| BackendError::Malformed {
                line: i + 1,
                text: line.to_string(),
            })?;
            if delete {
                rules.retain(|r| *r != rule);
            } else if !rules.contains(&rule) {
                rules.push(rule);
            }
        }
        Ok(rules)
    }

    fn add(&mut self, rule: &FirewallRule) -> Result<(), BackendError> {
        self.append(&script_line(rule))
    }

    fn remove(&mut self, rule: &FirewallRule) -> Result<(), BackendError> {
        self.append(&format!("delete {}", script_line(rule)))
    }
}

/// A rule that became visible in the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub rule_id: RuleId,
    /// Block whose transaction introduced the rule.
    pub block_hash: Hash32,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TickOutcome {
    Reconciled(ReconcileReport),
    /// Local ledger is resyncing; the backend is left alone.
    Skipped,
    /// The ledger file no longer matches; a resync was started.
    CorruptionDetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommanderConfig {
    pub refresh_ms: u64,
    /// Every n-th tick does a byte-for-byte ledger check and a full replay.
    pub audit_every: u64,
}

impl Default for CommanderConfig {
    fn default() -> Self {
        Self {
            refresh_ms: 5_000,
            audit_every: 12,
        }
    }
}

#[derive(Debug, Clone)]
struct Tracked {
    height: u64,
    head_hash: Hash32,
    state: ChainState,
}

pub struct Commander<B> {
    backend: B,
    config: CommanderConfig,
    genesis: GenesisConfig,
    ticks: u64,
    tracked: Option<Tracked>,
    origins: BTreeMap<RuleId, Hash32>,
    deployments: Vec<Deployment>,
    pub audit_mismatches: u64,
    pub audits: u64,
}

impl<B: FirewallBackend> Commander<B> {
    pub fn new(backend: B, genesis: GenesisConfig, config: CommanderConfig) -> Self {
        assert!(config.refresh_ms >= 1000, "refresh period must be at least 1 s");
        Self {
            backend,
            config,
            genesis,
            ticks: 0,
            tracked: None,
            origins: BTreeMap::new(),
            deployments: Vec::new(),
            audit_mismatches: 0,
            audits: 0,
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    pub fn into_backend(self) -> B {
        self.backend
    }

    pub fn config(&self) -> CommanderConfig {
        self.config
    }

    pub fn deployments(&self) -> &[Deployment] {
        &self.deployments
    }

    fn record_origins(&mut self, chain: &Chain, from_height: u64) {
        for block in &chain.blocks()[from_height as usize..] {
            let hash = block.hash();
            for tx in &block.transactions {
                if let TxKind::AddRule(rule) = &tx.kind {
                    self.origins.insert(rule.id(), hash);
                }
            }
        }
    }

    /// Brings the tracked state up to the chain head, replaying from genesis
    /// after a reorganization.
    fn update_state(&mut self, chain: &Chain) -> ChainState {
        let resume = self
            .tracked
            .as_ref()
            .filter(|t| chain.hash_at(t.height) == Some(t.head_hash))
            .map(|t| (t.height + 1, t.state.clone()));
        let (from, mut state) = resume.unwrap_or((1, self.genesis.genesis_state()));
        self.record_origins(chain, from);
        for block in &chain.blocks()[from as usize..] {
            for tx in &block.transactions {
                if let Err(e) = state.apply(tx) {
                    warn!("commander: stored chain rejects a transaction ({e}); replaying");
                }
            }
        }
        self.tracked = Some(Tracked {
            height: chain.height(),
            head_hash: chain.head_hash(),
            state: state.clone(),
        });
        state
    }

    /// One refresh cycle against `peer`'s chain.
    pub fn tick(&mut self, peer: &mut PeerNode, now_ms: u64) -> (TickOutcome, Vec<Outbound>) {
        self.ticks += 1;
        let audit = self.ticks.is_multiple_of(self.config.audit_every);
        if peer.status() == SyncStatus::NeedsSync {
            return (TickOutcome::Skipped, Vec::new());
        }
        if let Err(mismatch) = peer.check_storage(audit) {
            let out = peer.enter_needs_sync(mismatch, now_ms);
            return (TickOutcome::CorruptionDetected, out);
        }
        let chain = peer.chain().clone();
        let mut state = self.update_state(&chain);
        if audit {
            self.audits += 1;
            match replay(&chain, &self.genesis) {
                Ok(full) if full == state => {}
                Ok(full) => {
                    self.audit_mismatches += 1;
                    warn!("commander: incremental state diverged from replay");
                    if let Some(t) = &mut self.tracked {
                        t.state = full.clone();
                    }
                    state = full;
                }
                Err(e) => warn!("commander: replay failed: {e}"),
            }
        }
        let desired: Vec<FirewallRule> = state
            .rules()
            .iter()
            .filter(|r| r.action == Action::Deny)
            .copied()
            .collect();
        let report = reconcile(&desired, &mut self.backend);
        for id in &report.added_ids {
            let block_hash = self.origins.get(id).copied().unwrap_or(Hash32::ZERO);
            self.deployments.push(Deployment {
                rule_id: *id,
                block_hash,
                at_ms: now_ms,
            });
        }
        if !report.is_noop() {
            debug!(
                "commander: +{} -{} ={} {:?}",
                report.added, report.removed, report.unchanged, report.error
            );
        }
        (TickOutcome::Reconciled(report), Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::NodeState;
    use crate::fixtures::TestNet;
    use crate::netsim::node::PeerConfig;

    fn deny(port: u16) -> FirewallRule {
        FirewallRule::deny(Protocol::Tcp, port)
    }

    #[test]
    fn reconcile_examples() {
        let mut b = MockBackend::new();
        let r = reconcile(&[deny(22), deny(23)], &mut b);
        assert_eq!((r.added, r.removed, r.unchanged), (2, 0, 0));
        assert_eq!(b.rules(), &[deny(22), deny(23)]);

        let r = reconcile(&[deny(22), deny(23)], &mut b);
        assert_eq!((r.added, r.removed, r.unchanged), (0, 0, 2));

        let mut b = MockBackend::new();
        for p in [1, 2, 3] {
            b.inject_stale(deny(p));
        }
        let r = reconcile(&[], &mut b);
        assert_eq!((r.added, r.removed), (0, 3));
        assert!(b.rules().is_empty());
    }

    #[test]
    fn reconcile_restores_order() {
        let mut b = MockBackend::new();
        b.inject_stale(deny(23));
        b.inject_stale(deny(22));
        let r = reconcile(&[deny(22), deny(23), deny(80)], &mut b);
        assert_eq!(b.rules(), &[deny(22), deny(23), deny(80)]);
        assert_eq!(r.error, None);
    }

    #[test]
    fn fault_injection_then_recovery() {
        let desired = [deny(22), deny(23)];
        let mut b = MockBackend::new();
        b.fail_next(1);
        let r = reconcile(&desired, &mut b);
        assert!(r.error.is_some());
        assert_eq!(r.added, 0);
        let r = reconcile(&desired, &mut b);
        assert_eq!((r.added, r.error), (2, None));
        assert_eq!(b.rules(), &desired);

        // A failure between adds keeps the partial progress.
        let mut b = MockBackend::new();
        b.fail_after(2);
        let r = reconcile(&desired, &mut b);
        assert_eq!(r.added, 1);
        assert!(r.error.is_some());
        assert_eq!(b.rules(), &desired[..1]);
        let r = reconcile(&desired, &mut b);
        assert_eq!((r.added, r.unchanged, r.error), (1, 1, None));
        assert_eq!(b.rules(), &desired);
    }

    #[test]
    fn capacity_is_enforced() {
        let mut b = MockBackend {
            max_rules: Some(1),
            ..MockBackend::default()
        };
        let r = reconcile(&[deny(22), deny(23)], &mut b);
        assert!(r.error.unwrap().contains("limit"));
    }

    #[test]
    fn script_lines_round_trip() {
        let rule = FirewallRule::deny(Protocol::Udp, 53).from_source("10.1.0.0/16".parse().unwrap());
        let line = script_line(&rule);
        assert_eq!(line, "deny proto udp port 53 from 10.1.0.0/16");
        assert_eq!(parse_script_line(&line), Some((false, rule)));
        assert_eq!(script_line(&deny(22)), "deny proto tcp port 22 from any");
        assert_eq!(
            parse_script_line("delete deny proto tcp port 22 from any"),
            Some((true, deny(22)))
        );
        assert_eq!(parse_script_line("deny tcp 22"), None);
    }

    #[test]
    fn script_backend_writes_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fw.rules");
        let mut b = ScriptBackend::new(&path);
        reconcile(&[deny(22), deny(23)], &mut b);
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "deny proto tcp port 22 from any\ndeny proto tcp port 23 from any\n"
        );
        let r = reconcile(&[deny(23)], &mut b);
        assert_eq!((r.added, r.removed), (0, 1));
        assert_eq!(b.list().unwrap(), vec![deny(23)]);

        let mut bad = ScriptBackend::new(dir.path().join("missing/dir/fw.rules"));
        assert!(reconcile(&[deny(22)], &mut bad).error.is_some());
    }

    #[test]
    fn commander_deploys_chain_rules_and_reverts_tampering() {
        let net = TestNet::new(3);
        let chain = net.build_chain(4, &[2, 3]);
        let node = NodeState::from_chain(net.genesis.clone(), None, chain.clone()).unwrap();
        let mut peer = PeerNode::in_memory(PeerConfig::new(0, vec![]), node);
        let mut cmd = Commander::new(MockBackend::new(), net.genesis.clone(), CommanderConfig::default());
        let (outcome, _) = cmd.tick(&mut peer, 1_000);
        assert!(matches!(outcome, TickOutcome::Reconciled(ref r) if r.added == 2));
        assert_eq!(cmd.backend().rules(), &[deny(1002), deny(1003)]);
        assert_eq!(cmd.deployments()[0].block_hash, chain.hash_at(2).unwrap());
        assert_eq!(cmd.deployments()[1].block_hash, chain.hash_at(3).unwrap());

        cmd.backend_mut().inject_stale(deny(8080));
        let (outcome, _) = cmd.tick(&mut peer, 6_000);
        assert!(matches!(outcome, TickOutcome::Reconciled(ref r) if r.removed == 1 && r.added == 0));
        let (outcome, _) = cmd.tick(&mut peer, 11_000);
        assert!(matches!(outcome, TickOutcome::Reconciled(ref r) if r.is_noop()));
    }

    #[test]
    fn audit_matches_incremental_state() {
        let net = TestNet::new(3);
        let chain = net.build_chain(30, &[2, 9, 17, 25]);
        let mut cmd = Commander::new(
            MockBackend::new(),
            net.genesis.clone(),
            CommanderConfig {
                refresh_ms: 1000,
                audit_every: 3,
            },
        );
        let node = NodeState::from_chain(net.genesis.clone(), None, chain).unwrap();
        let mut peer = PeerNode::in_memory(PeerConfig::new(0, vec![]), node);
        for t in 0..12 {
            cmd.tick(&mut peer, t * 1000);
        }
        assert_eq!(cmd.audits, 4);
        assert_eq!(cmd.audit_mismatches, 0);
        assert_eq!(cmd.backend().rules().len(), 4);
    }
}
