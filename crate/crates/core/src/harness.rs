//! Deterministic scenario runner. A scenario describes a roster of nodes,
//! network conditions and a timed script; the run happens in virtual time
//! and produces a [`MetricsReport`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Hash32;
use crate::commander::{Commander, CommanderConfig, Deployment, MockBackend};
use crate::consensus::seal_block;
use crate::genesis::GenesisConfig;
use crate::identity::{generate_keypair, Address, KeyPair};
use crate::ledger::{fork_choice, validate_chain, Block, Chain, ForkChoice};
use crate::netsim::link::{deliver, Delivery, LinkState, NetworkConditions, Transmission};
use crate::netsim::message::{Message, NodeId, Payload};
use crate::netsim::node::{NodeEvent, Outbound, PeerConfig, PeerNode};
use crate::netsim::scheduler::EventQueue;
use crate::rulestate::{replay, Action, FirewallRule, Transaction, TxKind};

pub const E1: &str = include_str!("../scenarios/e1.toml");
pub const E2: &str = include_str!("../scenarios/e2.toml");
pub const E3: &str = include_str!("../scenarios/e3.toml");

/// Returns a bundled scenario by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "e1" => Some(E1),
        "e2" => Some(E2),
        "e3" => Some(E3),
        _ => None,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("assertion failed: {first}")]
    Assertion {
        first: String,
        failures: Vec<String>,
        report: Box<MetricsReport>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Client,
    Admin,
    Attacker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub sealer: bool,
    /// Key seed byte; the seed is 32 copies of it.
    pub key_seed: u8,
    /// Whether other nodes accept this node as a peer.
    #[serde(default = "yes")]
    pub connected: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    #[serde(default = "one")]
    pub period: u64,
    #[serde(default)]
    pub wiggle: Option<u64>,
    #[serde(default = "thirty")]
    pub keepalive: u64,
    #[serde(default = "default_start")]
    pub start_unix: u64,
}

fn one() -> u64 {
    1
}
fn thirty() -> u64 {
    30
}
fn default_start() -> u64 {
    1_700_000_000
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            period: 1,
            wiggle: None,
            keepalive: 30,
            start_unix: default_start(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    #[serde(default = "five")]
    pub refresh_s: u64,
    #[serde(default = "five")]
    pub announce_s: u64,
    #[serde(default = "fifty")]
    pub seal_tick_ms: u64,
    #[serde(default = "twelve")]
    pub audit_every: u64,
    /// Time after the scripted duration during which no blocks are sealed
    /// and in-flight traffic drains. Defaults to two announce intervals.
    #[serde(default)]
    pub settle_s: Option<f64>,
}

fn five() -> u64 {
    5
}
fn fifty() -> u64 {
    50
}
fn twelve() -> u64 {
    12
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            refresh_s: 5,
            announce_s: 5,
            seal_tick_ms: 50,
            audit_every: 12,
            settle_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub from: String,
    pub to: String,
    pub conditions: NetworkConditions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptMode {
    /// Overwrite every byte with zero, keeping the length.
    Zero,
    /// Cut the file in half.
    Truncate,
    /// Flip one byte in the middle.
    Flip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "snake_case")]
pub enum ActionKind {
    /// Sign `tx` with `signer`'s key (default: the node's own) and hand it
    /// to `node` as a console would.
    Submit {
        node: String,
        #[serde(default)]
        signer: Option<String>,
        tx: String,
    },
    /// Seal a block with the node's own key on its head and gossip it.
    ForgeBlock { node: String },
    Stop { node: String },
    Start { node: String },
    CorruptLedger { node: String, mode: CorruptMode },
    SetConditions { conditions: NetworkConditions },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAction {
    pub at: f64,
    #[serde(flatten)]
    pub kind: ActionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Assertion {
    /// Every client backend holds each rule within `within_s` of the block
    /// that carried it being sealed.
    RulesDeployed { rules: Vec<String>, within_s: f64 },
    /// Every rule an admin submitted reached every client backend.
    AllDeployed,
    /// All running nodes end on the same head.
    HeadsConverged,
    /// Attacker transactions and blocks appear in no final chain.
    NoAttackerEffect,
    /// Every admin transaction appears exactly once in the canonical chain.
    TxsIncludedOnce,
    /// Once two nodes agreed on a block, neither later holds a different
    /// block at that height.
    NoRollback,
    /// Largest gap between consecutive canonical blocks, in periods.
    MaxStall { periods: f64 },
    /// `node` detected corruption and finished resyncing within `max_s`.
    Resynced { node: String, max_s: f64 },
    /// Every final chain validates and is sealed by genesis sealers only.
    AuthorizedSealers,
    /// Running client backends equal the replayed deny rules of their chain.
    BackendsMatchChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub chain: ChainSpec,
    #[serde(default)]
    pub timing: TimingSpec,
    #[serde(default)]
    pub network: NetworkConditions,
    #[serde(default)]
    pub links: Vec<LinkOverride>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub actions: Vec<ScriptedAction>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

/// A parsed `tx` string of a submit action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxTemplate {
    Block(FirewallRule),
    Unblock(FirewallRule),
    AdminAdd(String),
    AdminRemove(String),
}

impl TxTemplate {
    /// `block <proto> <port> [from <cidr>]`, `unblock <proto> <port> [from
    /// <cidr>]`, `admin add <node>` or `admin remove <node>`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::Invalid(format!("bad tx `{text}`"));
        let words: Vec<&str> = text.split_whitespace().collect();
        match words.as_slice() {
            ["block", rest @ ..] | ["unblock", rest @ ..] => {
                let rule: FirewallRule = format!("deny {}", rest.join(" "))
                    .parse()
                    .map_err(|_| bad())?;
                Ok(if words[0] == "block" {
                    TxTemplate::Block(rule)
                } else {
                    TxTemplate::Unblock(rule)
                })
            }
            ["admin", "add", who] => Ok(TxTemplate::AdminAdd(who.to_string())),
            ["admin", "remove", who] => Ok(TxTemplate::AdminRemove(who.to_string())),
            _ => Err(bad()),
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let mut s: Scenario = toml::from_str(text)?;
        s.validate()?;
        s.actions
            .sort_by(|a, b| a.at.partial_cmp(&b.at).expect("validated finite"));
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// A bundled name (`e1`, `e2`, `e3`) or a path.
    pub fn resolve(name_or_path: &str) -> Result<Self, HarnessError> {
        match bundled(name_or_path) {
            Some(text) => Self::from_toml_str(text),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    fn node_index(&self, name: &str) -> Result<usize, HarnessError> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| HarnessError::Invalid(format!("unknown node `{name}`")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::Invalid(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid("duration must be positive".into());
        }
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return invalid(format!("duplicate node `{}`", n.name));
            }
            if n.role == Role::Attacker && n.sealer {
                return invalid("an attacker cannot be a sealer".into());
            }
        }
        if !self.nodes.iter().any(|n| n.sealer) {
            return invalid("no sealer in roster".into());
        }
        if !self.nodes.iter().any(|n| n.role == Role::Admin) {
            return invalid("no admin in roster".into());
        }
        if self.timing.refresh_s < 1 || self.timing.announce_s < 1 || self.timing.seal_tick_ms < 1 {
            return invalid("timing values must be positive".into());
        }
        self.network
            .validate()
            .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        for l in &self.links {
            self.node_index(&l.from)?;
            self.node_index(&l.to)?;
            l.conditions
                .validate()
                .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        }
        for a in &self.actions {
            if !(a.at.is_finite() && a.at >= 0.0) {
                return invalid("action times must be non-negative".into());
            }
            match &a.kind {
                ActionKind::Submit { node, signer, tx } => {
                    self.node_index(node)?;
                    if let Some(s) = signer {
                        self.node_index(s)?;
                    }
                    match TxTemplate::parse(tx)? {
                        TxTemplate::AdminAdd(who) | TxTemplate::AdminRemove(who) => {
                            self.node_index(&who)?;
                        }
                        _ => {}
                    }
                }
                ActionKind::ForgeBlock { node }
                | ActionKind::Stop { node }
                | ActionKind::Start { node }
                | ActionKind::CorruptLedger { node, .. } => {
                    self.node_index(node)?;
                }
                ActionKind::SetConditions { conditions } => conditions
                    .validate()
                    .map_err(|e| HarnessError::Invalid(e.to_string()))?,
            }
        }
        for a in &self.assertions {
            if let Assertion::Resynced { node, .. } = a {
                self.node_index(node)?;
            }
            if let Assertion::RulesDeployed { rules, .. } = a {
                for r in rules {
                    r.parse::<FirewallRule>()
                        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    pub fn keypair(&self, index: usize) -> KeyPair {
        generate_keypair(&[self.nodes[index].key_seed; 32]).expect("32-byte seed")
    }

    pub fn genesis(&self) -> GenesisConfig {
        let sealers = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].sealer)
            .map(|i| self.keypair(i).public_key())
            .collect();
        let admins = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].role == Role::Admin)
            .map(|i| self.keypair(i).address())
            .collect();
        let mut g = GenesisConfig::new(&format!("blockfw-{}", self.name), sealers, admins);
        g.period = self.chain.period;
        g.wiggle = self.chain.wiggle;
        g.keepalive = self.chain.keepalive;
        g.timestamp = self.chain.start_unix;
        g
    }

    /// The same scenario with attacker nodes and their actions removed.
    pub fn without_attackers(&self) -> Scenario {
        let attackers: BTreeSet<&str> = self
            .nodes
            .iter()
            .filter(|n| n.role == Role::Attacker)
            .map(|n| n.name.as_str())
            .collect();
        let involves = |a: &ScriptedAction| match &a.kind {
            ActionKind::Submit { node, signer, .. } => {
                attackers.contains(node.as_str())
                    || signer.as_deref().is_some_and(|s| attackers.contains(s))
            }
            ActionKind::ForgeBlock { node }
            | ActionKind::Stop { node }
            | ActionKind::Start { node }
            | ActionKind::CorruptLedger { node, .. } => attackers.contains(node.as_str()),
            ActionKind::SetConditions { .. } => false,
        };
        let mut s = self.clone();
        s.nodes.retain(|n| n.role != Role::Attacker);
        s.actions.retain(|a| !involves(a));
        s.links
            .retain(|l| !attackers.contains(l.from.as_str()) && !attackers.contains(l.to.as_str()));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub seed: u64,
    pub metric: String,
    pub value: String,
    pub unit: String,
}

/// Structured per-run metrics, one row per metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    fn new(scenario: &str, seed: u64) -> Self {
        Self {
            scenario: scenario.to_string(),
            seed,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, metric: impl Into<String>, value: impl Into<String>, unit: &str) {
        self.rows.push(MetricRow {
            scenario: self.scenario.clone(),
            seed: self.seed,
            metric: metric.into(),
            value: value.into(),
            unit: unit.to_string(),
        });
    }

    fn push_secs(&mut self, metric: impl Into<String>, secs: f64) {
        self.push(metric, format!("{secs:.3}"), "s");
    }

    pub fn get(&self, metric: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .map(|r| r.value.as_str())
    }

    pub fn get_f64(&self, metric: &str) -> Option<f64> {
        self.get(metric)?.parse().ok()
    }

    /// Rows whose metric starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a MetricRow> {
        self.rows.iter().filter(move |r| r.metric.starts_with(prefix))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<MetricRow> = r.deserialize().collect::<Result<_, _>>()?;
        let (scenario, seed) = rows
            .first()
            .map(|r| (r.scenario.clone(), r.seed))
            .unwrap_or_default();
        Ok(Self {
            scenario,
            seed,
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricDiff {
    pub metric: String,
    pub a: Option<String>,
    pub b: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("reports are for different scenarios: `{0}` vs `{1}`")]
pub struct ScenarioMismatch(pub String, pub String);

/// Metric-by-metric differences between two runs of the same scenario.
pub fn compare_runs(a: &MetricsReport, b: &MetricsReport) -> Result<Vec<MetricDiff>, ScenarioMismatch> {
    if a.scenario != b.scenario {
        return Err(ScenarioMismatch(a.scenario.clone(), b.scenario.clone()));
    }
    let index = |r: &MetricsReport| -> BTreeMap<String, String> {
        r.rows
            .iter()
            .map(|row| (row.metric.clone(), format!("{} {}", row.value, row.unit)))
            .collect()
    };
    let (ia, ib) = (index(a), index(b));
    let metrics: BTreeSet<&String> = ia.keys().chain(ib.keys()).collect();
    Ok(metrics
        .into_iter()
        .filter(|m| ia.get(*m) != ib.get(*m))
        .map(|m| MetricDiff {
            metric: m.clone(),
            a: ia.get(m).cloned(),
            b: ib.get(m).cloned(),
        })
        .collect())
}

#[derive(Debug)]
enum Event {
    Deliver { to: NodeId, msg: Message },
    SealTick { node: NodeId, epoch: u64 },
    AnnounceTick { node: NodeId, epoch: u64 },
    CommanderTick { node: NodeId, epoch: u64 },
    Action(usize),
    Sample,
}

const SAMPLE_EVERY_US: u64 = 250_000;

/// Timestamped record of something a node reported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedEvent {
    pub at_us: u64,
    pub node: NodeId,
    pub event: NodeEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub at_us: u64,
    pub node: NodeId,
    pub signer: NodeId,
    pub tx: Transaction,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub dropped: u64,
    pub bytes: u64,
    pub to_stopped: u64,
}

struct Slot {
    spec: NodeSpec,
    key: KeyPair,
    ledger: PathBuf,
    peer: Option<PeerNode>,
    commander: Option<Commander<MockBackend>>,
    parked_backend: Option<MockBackend>,
    deployments: Vec<Deployment>,
    held_blocks: BTreeSet<Hash32>,
    epoch: u64,
}

/// A scenario in progress.
pub struct Simulation {
    scenario: Scenario,
    seed: u64,
    genesis: GenesisConfig,
    _dir: tempfile::TempDir,
    queue: EventQueue<Event>,
    rng: ChaCha8Rng,
    /// Timer phases draw from their own stream so link randomness never
    /// shifts them.
    phase_rng: ChaCha8Rng,
    conditions: NetworkConditions,
    overrides: BTreeMap<(NodeId, NodeId), NetworkConditions>,
    links: BTreeMap<(NodeId, NodeId), LinkState>,
    slots: Vec<Slot>,
    peer_ids: Vec<NodeId>,
    seal_times: HashMap<Hash32, u64>,
    blocks: HashMap<Hash32, Block>,
    submissions: Vec<Submission>,
    failed_submissions: u64,
    forged: Vec<Hash32>,
    events: Vec<LoggedEvent>,
    nonces: BTreeMap<Address, u64>,
    stats: NetStats,
    agreed: BTreeMap<(NodeId, NodeId), u64>,
    rollbacks: Vec<String>,
    record_transmissions: bool,
    end_us: u64,
    settling: bool,
}

fn secs_to_us(s: f64) -> u64 {
    (s * 1_000_000.0).round() as u64
}

impl Simulation {
    pub fn new(scenario: Scenario, seed: u64) -> Result<Self, HarnessError> {
        scenario.validate()?;
        let dir = tempfile::tempdir()?;
        let genesis = scenario.genesis();
        let peer_ids: Vec<NodeId> = (0..scenario.nodes.len() as NodeId)
            .filter(|&i| scenario.nodes[i as usize].connected)
            .collect();
        let mut overrides = BTreeMap::new();
        for l in &scenario.links {
            let from = scenario.node_index(&l.from)? as NodeId;
            let to = scenario.node_index(&l.to)? as NodeId;
            overrides.insert((from, to), l.conditions);
        }
        let slots = scenario
            .nodes
            .iter()
            .enumerate()
            .map(|(i, spec)| Slot {
                spec: spec.clone(),
                key: scenario.keypair(i),
                ledger: dir.path().join(format!("{}.bfw", spec.name)),
                peer: None,
                commander: None,
                parked_backend: (spec.role == Role::Client).then(MockBackend::new),
                deployments: Vec::new(),
                held_blocks: BTreeSet::new(),
                epoch: 0,
            })
            .collect();
        let mut sim = Self {
            conditions: scenario.network,
            end_us: secs_to_us(scenario.duration_s),
            genesis,
            seed,
            _dir: dir,
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase_rng: {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(1);
                r
            },
            overrides,
            links: BTreeMap::new(),
            slots,
            peer_ids,
            seal_times: HashMap::new(),
            blocks: HashMap::new(),
            submissions: Vec::new(),
            failed_submissions: 0,
            forged: Vec::new(),
            events: Vec::new(),
            nonces: BTreeMap::new(),
            stats: NetStats::default(),
            agreed: BTreeMap::new(),
            rollbacks: Vec::new(),
            record_transmissions: false,
            settling: false,
            scenario,
        };
        let genesis_hash = sim.genesis.genesis_block().hash();
        sim.seal_times.insert(genesis_hash, 0);
        for i in 0..sim.slots.len() {
            sim.start_node(i as NodeId)?;
        }
        for (i, _) in sim.scenario.actions.iter().enumerate() {
            let at = secs_to_us(sim.scenario.actions[i].at);
            sim.queue.schedule(at, Event::Action(i));
        }
        sim.queue.schedule(0, Event::Sample);
        Ok(sim)
    }

    /// Keeps a log of every link transmission for bandwidth audits.
    pub fn record_transmissions(&mut self, on: bool) {
        self.record_transmissions = on;
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn genesis(&self) -> &GenesisConfig {
        &self.genesis
    }

    pub fn now_us(&self) -> u64 {
        self.queue.now()
    }

    fn now_ms(&self) -> u64 {
        self.genesis.timestamp * 1000 + self.queue.now() / 1000
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.slots
            .iter()
            .position(|s| s.spec.name == name)
            .map(|i| i as NodeId)
    }

    pub fn node(&self, name: &str) -> Option<&PeerNode> {
        self.slots[self.node_id(name)? as usize].peer.as_ref()
    }

    pub fn node_names(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.spec.name.clone()).collect()
    }

    /// Current backend rules of a client, running or not.
    pub fn backend_rules(&self, name: &str) -> Option<Vec<FirewallRule>> {
        let slot = &self.slots[self.node_id(name)? as usize];
        slot.commander
            .as_ref()
            .map(|c| c.backend())
            .or(slot.parked_backend.as_ref())
            .map(|b| b.rules().to_vec())
    }

    pub fn backend_add_log(&self, name: &str) -> Option<Vec<FirewallRule>> {
        let slot = &self.slots[self.node_id(name)? as usize];
        slot.commander
            .as_ref()
            .map(|c| c.backend())
            .or(slot.parked_backend.as_ref())
            .map(|b| b.add_log().to_vec())
    }

    pub fn deployments(&self, name: &str) -> Vec<Deployment> {
        let slot = &self.slots[self.node_id(name).expect("known node") as usize];
        let mut all = slot.deployments.clone();
        if let Some(c) = &slot.commander {
            all.extend_from_slice(c.deployments());
        }
        all
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn seal_time_us(&self, hash: &Hash32) -> Option<u64> {
        self.seal_times.get(hash).copied()
    }

    pub fn transmissions(&self) -> Vec<((NodeId, NodeId), Vec<Transmission>)> {
        self.links
            .iter()
            .map(|(k, v)| (*k, v.transmissions().to_vec()))
            .collect()
    }

    pub fn link_conditions(&self, from: NodeId, to: NodeId) -> NetworkConditions {
        self.overrides
            .get(&(from, to))
            .copied()
            .unwrap_or(self.conditions)
    }

    pub fn set_conditions(&mut self, conditions: NetworkConditions) {
        self.conditions = conditions;
    }

    fn start_node(&mut self, id: NodeId) -> Result<(), HarnessError> {
        let slot = &self.slots[id as usize];
        if slot.peer.is_some() {
            return Ok(());
        }
        let peers = if slot.spec.connected {
            self.peer_ids.iter().copied().filter(|&p| p != id).collect()
        } else {
            Vec::new()
        };
        let mut config = PeerConfig::new(id, peers);
        config.announce_interval_ms = self.scenario.timing.announce_s * 1000;
        let key = slot.key.clone();
        let peer = PeerNode::open(config, self.genesis.clone(), Some(key), &slot.ledger)?;
        let epoch = slot.epoch + 1;
        let timing = self.scenario.timing.clone();
        let announce_phase = self.phase_rng.gen_range(0..timing.announce_s * 1_000_000);
        let commander_phase = self.phase_rng.gen_range(0..timing.refresh_s * 1_000_000);
        let slot = &mut self.slots[id as usize];
        slot.epoch = epoch;
        slot.peer = Some(peer);
        if let Some(backend) = slot.parked_backend.take() {
            slot.commander = Some(Commander::new(
                backend,
                self.genesis.clone(),
                CommanderConfig {
                    refresh_ms: timing.refresh_s * 1000,
                    audit_every: timing.audit_every,
                },
            ));
            self.queue
                .schedule_in(commander_phase, Event::CommanderTick { node: id, epoch });
        }
        if slot.spec.sealer {
            let tick = timing.seal_tick_ms * 1000;
            let first = (self.queue.now() / tick + 1) * tick;
            self.queue.schedule(first, Event::SealTick { node: id, epoch });
        }
        self.queue
            .schedule_in(announce_phase, Event::AnnounceTick { node: id, epoch });
        let now = self.now_ms();
        let out = self.slots[id as usize].peer.as_mut().expect("started").start(now);
        self.after_node(id, out);
        Ok(())
    }

    fn stop_node(&mut self, id: NodeId) {
        let slot = &mut self.slots[id as usize];
        slot.peer = None;
        if let Some(c) = slot.commander.take() {
            slot.deployments.extend_from_slice(c.deployments());
            slot.parked_backend = Some(c.into_backend());
        }
    }

    fn dispatch(&mut self, from: NodeId, out: Vec<Outbound>) {
        let now = self.queue.now();
        for o in out {
            if o.to as usize >= self.slots.len() {
                continue;
            }
            let size = o.msg.encoded_len() + 4;
            let cond = self.link_conditions(from, o.to);
            let record = self.record_transmissions;
            let link = self.links.entry((from, o.to)).or_insert_with(|| {
                if record {
                    LinkState::with_log()
                } else {
                    LinkState::default()
                }
            });
            self.stats.sent += 1;
            self.stats.bytes += size as u64;
            match deliver(&cond, link, now, size, &mut self.rng) {
                Delivery::Dropped => self.stats.dropped += 1,
                Delivery::Scheduled { arrival_delay_us } => {
                    self.queue
                        .schedule(now + arrival_delay_us, Event::Deliver { to: o.to, msg: o.msg });
                }
            }
        }
    }

    fn after_node(&mut self, id: NodeId, out: Vec<Outbound>) {
        let now = self.queue.now();
        let events = match self.slots[id as usize].peer.as_mut() {
            Some(p) => p.drain_events(),
            None => Vec::new(),
        };
        for event in events {
            match &event {
                NodeEvent::Sealed { hash, .. } => {
                    self.seal_times.entry(*hash).or_insert(now);
                    let block = self.slots[id as usize].peer.as_ref().expect("running").chain().head().clone();
                    self.blocks.insert(*hash, block);
                    self.slots[id as usize].held_blocks.insert(*hash);
                }
                NodeEvent::Accepted { hash, .. } => {
                    let chain = self.slots[id as usize].peer.as_ref().expect("running").chain();
                    if let Some(b) = chain.blocks().iter().rev().find(|b| b.hash() == *hash) {
                        self.blocks.insert(*hash, b.clone());
                    }
                    self.slots[id as usize].held_blocks.insert(*hash);
                }
                NodeEvent::Adopted { .. } => {
                    let chain = self.slots[id as usize].peer.as_ref().expect("running").chain().clone();
                    for (b, h) in chain.blocks().iter().zip(chain.hashes()) {
                        self.blocks.entry(*h).or_insert_with(|| b.clone());
                        self.slots[id as usize].held_blocks.insert(*h);
                    }
                }
                _ => {}
            }
            self.events.push(LoggedEvent {
                at_us: now,
                node: id,
                event,
            });
        }
        self.dispatch(id, out);
    }

    fn submit(&mut self, node: NodeId, signer: NodeId, template: &TxTemplate) {
        let key = self.slots[signer as usize].key.clone();
        let kind = match template {
            TxTemplate::Block(rule) => TxKind::AddRule(*rule),
            TxTemplate::Unblock(rule) => TxKind::RemoveRule(rule.id()),
            TxTemplate::AdminAdd(who) => {
                TxKind::AddAdmin(self.slots[self.node_id(who).expect("validated") as usize].key.address())
            }
            TxTemplate::AdminRemove(who) => TxKind::RemoveAdmin(
                self.slots[self.node_id(who).expect("validated") as usize].key.address(),
            ),
        };
        let Some(peer) = self.slots[node as usize].peer.as_mut() else {
            self.failed_submissions += 1;
            return;
        };
        let address = key.address();
        let chain_nonce = peer.state().state().next_nonce(&address);
        let nonce = self
            .nonces
            .get(&address)
            .copied()
            .unwrap_or(0)
            .max(chain_nonce);
        self.nonces.insert(address, nonce + 1);
        let tx = Transaction::signed(kind, nonce, &key);
        let out = peer.submit(tx.clone());
        self.submissions.push(Submission {
            at_us: self.queue.now(),
            node,
            signer,
            tx,
        });
        self.after_node(node, out);
    }

    fn forge(&mut self, node: NodeId) {
        let key = self.slots[node as usize].key.clone();
        let Some(peer) = self.slots[node as usize].peer.as_ref() else {
            return;
        };
        let chain = peer.chain();
        let ts = (self.now_ms() / 1000).max(chain.head().header.timestamp + self.genesis.period);
        let block = seal_block(
            chain.head(),
            chain.head_hash(),
            Vec::new(),
            peer.state().state(),
            ts,
            &key,
            &self.genesis.schedule(),
        );
        let hash = block.hash();
        self.forged.push(hash);
        self.blocks.insert(hash, block.clone());
        let out: Vec<Outbound> = peer
            .config()
            .peers
            .iter()
            .map(|&to| Outbound {
                to,
                msg: Message::new(node, Payload::BlockGossip(block.clone())),
            })
            .collect();
        self.dispatch(node, out);
    }

    fn corrupt(&mut self, node: NodeId, mode: CorruptMode) -> Result<(), HarnessError> {
        let path = &self.slots[node as usize].ledger;
        let mut bytes = fs::read(path)?;
        match mode {
            CorruptMode::Zero => bytes.iter_mut().for_each(|b| *b = 0),
            CorruptMode::Truncate => bytes.truncate(bytes.len() / 2),
            CorruptMode::Flip => {
                let mid = bytes.len() / 2;
                bytes[mid] ^= 0xff;
            }
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    fn apply_action(&mut self, index: usize) -> Result<(), HarnessError> {
        let kind = self.scenario.actions[index].kind.clone();
        match kind {
            ActionKind::Submit { node, signer, tx } => {
                let node_id = self.node_id(&node).expect("validated");
                let signer_id = signer
                    .as_deref()
                    .map(|s| self.node_id(s).expect("validated"))
                    .unwrap_or(node_id);
                let template = TxTemplate::parse(&tx)?;
                self.submit(node_id, signer_id, &template);
            }
            ActionKind::ForgeBlock { node } => self.forge(self.node_id(&node).expect("validated")),
            ActionKind::Stop { node } => self.stop_node(self.node_id(&node).expect("validated")),
            ActionKind::Start { node } => self.start_node(self.node_id(&node).expect("validated"))?,
            ActionKind::CorruptLedger { node, mode } => {
                self.corrupt(self.node_id(&node).expect("validated"), mode)?
            }
            ActionKind::SetConditions { conditions } => self.conditions = conditions,
        }
        Ok(())
    }

    fn live(&self, node: NodeId, epoch: u64) -> bool {
        let slot = &self.slots[node as usize];
        slot.peer.is_some() && slot.epoch == epoch
    }

    fn step(&mut self, time: u64, event: Event) -> Result<(), HarnessError> {
        let now_ms = self.now_ms();
        match event {
            Event::Deliver { to, msg } => match self.slots[to as usize].peer.as_mut() {
                Some(peer) => {
                    let out = peer.handle(msg, now_ms);
                    self.after_node(to, out);
                }
                None => self.stats.to_stopped += 1,
            },
            Event::SealTick { node, epoch } => {
                if self.live(node, epoch) && !self.settling {
                    let out = self.slots[node as usize]
                        .peer
                        .as_mut()
                        .expect("live")
                        .on_seal_tick(now_ms);
                    self.after_node(node, out);
                    let tick = self.scenario.timing.seal_tick_ms * 1000;
                    self.queue.schedule(time + tick, Event::SealTick { node, epoch });
                }
            }
            Event::AnnounceTick { node, epoch } => {
                if self.live(node, epoch) {
                    let out = self.slots[node as usize]
                        .peer
                        .as_mut()
                        .expect("live")
                        .on_announce_tick(now_ms);
                    self.after_node(node, out);
                    let every = self.scenario.timing.announce_s * 1_000_000;
                    self.queue.schedule(time + every, Event::AnnounceTick { node, epoch });
                }
            }
            Event::CommanderTick { node, epoch } => {
                if self.live(node, epoch) {
                    let slot = &mut self.slots[node as usize];
                    let peer = slot.peer.as_mut().expect("live");
                    let commander = slot.commander.as_mut().expect("client");
                    let (_, out) = commander.tick(peer, now_ms);
                    self.after_node(node, out);
                    let every = self.scenario.timing.refresh_s * 1_000_000;
                    self.queue
                        .schedule(time + every, Event::CommanderTick { node, epoch });
                }
            }
            Event::Action(i) => self.apply_action(i)?,
            Event::Sample => {
                self.sample();
                self.queue.schedule(time + SAMPLE_EVERY_US, Event::Sample);
            }
        }
        Ok(())
    }

    fn sample(&mut self) {
        let now = self.queue.now();
        let chains: Vec<(NodeId, &Chain)> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.peer.as_ref().map(|p| (i as NodeId, p.chain())))
            .collect();
        for (a, &(i, ci)) in chains.iter().enumerate() {
            for &(j, cj) in &chains[a + 1..] {
                let agreed = self.agreed.entry((i, j)).or_insert(0);
                let h = (*agreed).min(ci.height()).min(cj.height());
                let common = (0..=ci.height().min(cj.height()))
                    .rev()
                    .find(|&k| ci.hash_at(k) == cj.hash_at(k))
                    .unwrap_or(0);
                if ci.hash_at(h) != cj.hash_at(h) {
                    self.rollbacks.push(format!(
                        "t={:.3}s nodes {i},{j} disagree at height {h} after agreeing up to {agreed}",
                        now as f64 / 1e6
                    ));
                    // Count the fork once, not at every sample until it heals.
                    *agreed = common;
                } else {
                    *agreed = (*agreed).max(common);
                }
            }
        }
    }

    /// Rollbacks seen by the agreement monitor.
    pub fn rollbacks(&self) -> &[String] {
        &self.rollbacks
    }

    /// Runs every event due at or before `t_s` seconds of virtual time,
    /// capped at the scripted duration.
    pub fn run_until(&mut self, t_s: f64) -> Result<(), HarnessError> {
        self.run_to(secs_to_us(t_s).min(self.end_us))
    }

    fn run_to(&mut self, until: u64) -> Result<(), HarnessError> {
        while let Some((time, event)) = self.queue.pop_until(until) {
            self.step(time, event)?;
        }
        self.queue.advance_to(until);
        Ok(())
    }

    /// Runs the scripted duration, then the settle window.
    pub fn run(&mut self) -> Result<(), HarnessError> {
        self.run_to(self.end_us)?;
        self.settling = true;
        let settle = self
            .scenario
            .timing
            .settle_s
            .unwrap_or(2.0 * self.scenario.timing.announce_s as f64);
        self.run_to(self.end_us + secs_to_us(settle))
    }

    fn running(&self) -> impl Iterator<Item = (NodeId, &Slot, &PeerNode)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.peer.as_ref().map(|p| (i as NodeId, s, p)))
    }

    /// The preferred chain among running nodes.
    pub fn canonical_chain(&self) -> Chain {
        let mut best: Option<&Chain> = None;
        for (_, _, p) in self.running() {
            best = match best {
                None => Some(p.chain()),
                Some(b) => match fork_choice(b, p.chain()) {
                    Ok(ForkChoice::Candidate) => Some(p.chain()),
                    _ => Some(b),
                },
            };
        }
        best.cloned()
            .unwrap_or_else(|| Chain::new(self.genesis.genesis_block()))
    }

    fn attacker_addresses(&self) -> BTreeSet<Address> {
        self.slots
            .iter()
            .filter(|s| s.spec.role == Role::Attacker)
            .map(|s| s.key.address())
            .collect()
    }

    /// First time each (client, rule) became visible, as latency from the
    /// seal of the carrying block, in microseconds.
    pub fn deployment_latencies(&self) -> BTreeMap<(String, FirewallRule), u64> {
        let mut rules_by_id = BTreeMap::new();
        for s in &self.submissions {
            if let TxKind::AddRule(rule) = s.tx.kind {
                rules_by_id.insert(rule.id(), rule);
            }
        }
        let mut out = BTreeMap::new();
        for slot in &self.slots {
            if slot.spec.role != Role::Client {
                continue;
            }
            for d in self.deployments(&slot.spec.name) {
                let Some(rule) = rules_by_id.get(&d.rule_id) else {
                    continue;
                };
                let Some(sealed) = self.seal_times.get(&d.block_hash) else {
                    continue;
                };
                let deployed_us = (d.at_ms - self.genesis.timestamp * 1000) * 1000;
                out.entry((slot.spec.name.clone(), *rule))
                    .or_insert(deployed_us.saturating_sub(*sealed));
            }
        }
        out
    }

    pub fn report(&self) -> MetricsReport {
        let mut r = MetricsReport::new(&self.scenario.name, self.seed);
        let latencies = self.deployment_latencies();
        let mut all: Vec<f64> = Vec::new();
        for ((node, rule), us) in &latencies {
            let secs = *us as f64 / 1e6;
            all.push(secs);
            r.push_secs(format!("deploy_latency.{node}.{}", rule_tag(rule)), secs);
        }
        all.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        r.push("deployments", all.len().to_string(), "count");
        if !all.is_empty() {
            r.push_secs("deploy_latency.median", median(&all));
            r.push_secs("deploy_latency.max", *all.last().expect("non-empty"));
        }

        let chain = self.canonical_chain();
        let times: Vec<u64> = chain
            .hashes()
            .iter()
            .skip(1)
            .filter_map(|h| self.seal_times.get(h).copied())
            .collect();
        let intervals: Vec<f64> = times
            .windows(2)
            .map(|w| w[1].saturating_sub(w[0]) as f64 / 1e6)
            .collect();
        r.push("blocks", chain.height().to_string(), "count");
        if !intervals.is_empty() {
            let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
            r.push_secs("block_interval.mean", mean);
            r.push_secs(
                "block_interval.max",
                intervals.iter().cloned().fold(0.0, f64::max),
            );
        }
        let out_of_turn = chain.blocks()[1..].iter().filter(|b| !b.header.in_turn).count();
        r.push("blocks.out_of_turn", out_of_turn.to_string(), "count");

        r.push("messages.sent", self.stats.sent.to_string(), "count");
        r.push("messages.dropped", self.stats.dropped.to_string(), "count");
        r.push("messages.bytes", self.stats.bytes.to_string(), "bytes");
        r.push("submissions", self.submissions.len().to_string(), "count");

        let mut sync_start: BTreeMap<NodeId, u64> = BTreeMap::new();
        for e in &self.events {
            match e.event {
                NodeEvent::CorruptionDetected { .. } => {
                    r.push(
                        format!("corruption_detected.{}", self.slots[e.node as usize].spec.name),
                        format!("{:.3}", e.at_us as f64 / 1e6),
                        "s",
                    );
                }
                NodeEvent::SyncStarted { .. } => {
                    sync_start.insert(e.node, e.at_us);
                }
                NodeEvent::SyncCompleted { .. } => {
                    if let Some(start) = sync_start.remove(&e.node) {
                        r.push_secs(
                            format!("resync_duration.{}", self.slots[e.node as usize].spec.name),
                            (e.at_us - start) as f64 / 1e6,
                        );
                    }
                }
                _ => {}
            }
        }
        for (_, slot, peer) in self.running() {
            let name = &slot.spec.name;
            r.push(format!("head.{name}"), peer.chain().head_hash().to_hex(), "hash");
            r.push(format!("height.{name}"), peer.chain().height().to_string(), "count");
            r.push(
                format!("state_root.{name}"),
                crate::rulestate::state_root(peer.state().state()).to_hex(),
                "hash",
            );
        }
        let audits: u64 = self
            .slots
            .iter()
            .filter_map(|s| s.commander.as_ref())
            .map(|c| c.audit_mismatches)
            .sum();
        r.push("commander.audit_mismatches", audits.to_string(), "count");
        r.push("rollbacks", self.rollbacks.len().to_string(), "count");
        r
    }

    /// Evaluates the scenario's assertions; returns the failed predicates.
    pub fn check_assertions(&self) -> Vec<String> {
        let mut failures = Vec::new();
        for a in &self.scenario.assertions {
            if let Err(msg) = self.check(a) {
                failures.push(msg);
            }
        }
        failures
    }

    fn clients(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter().filter(|s| s.spec.role == Role::Client)
    }

    pub fn check(&self, assertion: &Assertion) -> Result<(), String> {
        match assertion {
            Assertion::RulesDeployed { rules, within_s } => {
                let latencies = self.deployment_latencies();
                for text in rules {
                    let rule: FirewallRule = text.parse().map_err(|e| format!("{e}"))?;
                    for c in self.clients() {
                        match latencies.get(&(c.spec.name.clone(), rule)) {
                            None => return Err(format!("rules_deployed: `{rule}` never reached {}", c.spec.name)),
                            Some(&us) if us as f64 / 1e6 > *within_s => {
                                return Err(format!(
                                    "rules_deployed: `{rule}` reached {} after {:.3} s (limit {within_s} s)",
                                    c.spec.name,
                                    us as f64 / 1e6
                                ))
                            }
                            Some(_) => {}
                        }
                    }
                }
                Ok(())
            }
            Assertion::AllDeployed => {
                let admins: BTreeSet<NodeId> = (0..self.slots.len() as NodeId)
                    .filter(|&i| self.slots[i as usize].spec.role == Role::Admin)
                    .collect();
                let latencies = self.deployment_latencies();
                for s in &self.submissions {
                    let TxKind::AddRule(rule) = s.tx.kind else {
                        continue;
                    };
                    if !admins.contains(&s.signer) || rule.action != Action::Deny {
                        continue;
                    }
                    for c in self.clients() {
                        if !latencies.contains_key(&(c.spec.name.clone(), rule)) {
                            return Err(format!("all_deployed: `{rule}` never reached {}", c.spec.name));
                        }
                    }
                }
                Ok(())
            }
            Assertion::HeadsConverged => {
                let heads: BTreeMap<Hash32, Vec<&str>> =
                    self.running().fold(BTreeMap::new(), |mut m, (_, s, p)| {
                        m.entry(p.chain().head_hash())
                            .or_default()
                            .push(s.spec.name.as_str());
                        m
                    });
                if heads.len() > 1 {
                    return Err(format!("heads_converged: {} distinct heads {heads:?}", heads.len()));
                }
                Ok(())
            }
            Assertion::NoAttackerEffect => {
                let attackers = self.attacker_addresses();
                for (_, s, p) in self.running() {
                    for b in p.chain().blocks() {
                        if attackers.contains(&b.header.sealer) {
                            return Err(format!("no_attacker_effect: {} holds an attacker block", s.spec.name));
                        }
                        if b.transactions.iter().any(|t| attackers.contains(&t.sender)) {
                            return Err(format!(
                                "no_attacker_effect: {} holds an attacker transaction",
                                s.spec.name
                            ));
                        }
                    }
                }
                Ok(())
            }
            Assertion::TxsIncludedOnce => {
                let chain = self.canonical_chain();
                let mut counts: HashMap<Hash32, usize> = HashMap::new();
                for b in chain.blocks() {
                    for t in &b.transactions {
                        *counts.entry(t.hash()).or_default() += 1;
                    }
                }
                for s in &self.submissions {
                    if self.slots[s.signer as usize].spec.role != Role::Admin {
                        continue;
                    }
                    let n = counts.get(&s.tx.hash()).copied().unwrap_or(0);
                    if n != 1 {
                        return Err(format!("txs_included_once: `{}` included {n} times", s.tx.kind));
                    }
                }
                Ok(())
            }
            Assertion::NoRollback => match self.rollbacks.first() {
                Some(r) => Err(format!("no_rollback: {r} ({} total)", self.rollbacks.len())),
                None => Ok(()),
            },
            Assertion::MaxStall { periods } => {
                let chain = self.canonical_chain();
                let mut last = 0u64;
                let limit = periods * self.genesis.period as f64;
                for h in chain.hashes().iter().skip(1) {
                    let Some(&t) = self.seal_times.get(h) else {
                        continue;
                    };
                    let gap = t.saturating_sub(last) as f64 / 1e6;
                    if gap > limit {
                        return Err(format!("max_stall: {gap:.3} s without a block (limit {limit} s)"));
                    }
                    last = t;
                }
                let tail = self.end_us.saturating_sub(last) as f64 / 1e6;
                if tail > limit {
                    return Err(format!("max_stall: chain idle for the final {tail:.3} s"));
                }
                Ok(())
            }
            Assertion::Resynced { node, max_s } => {
                let id = self.node_id(node).ok_or("unknown node")?;
                let mut detected = false;
                let mut start = None;
                let mut duration = None;
                for e in self.events.iter().filter(|e| e.node == id) {
                    match e.event {
                        NodeEvent::CorruptionDetected { .. } => detected = true,
                        NodeEvent::SyncStarted { .. } => start = Some(e.at_us),
                        NodeEvent::SyncCompleted { .. } => {
                            duration = start.map(|s| e.at_us - s);
                        }
                        _ => {}
                    }
                }
                if !detected {
                    return Err(format!("resynced: {node} never detected corruption"));
                }
                let d = duration.ok_or_else(|| format!("resynced: {node} never finished syncing"))?;
                let secs = d as f64 / 1e6;
                if !(secs > 0.0 && secs < *max_s) {
                    return Err(format!("resynced: {node} took {secs:.3} s (limit {max_s} s)"));
                }
                let canonical = self.canonical_chain();
                let mine = self.node(node).ok_or_else(|| format!("resynced: {node} not running"))?;
                if mine.chain().head_hash() != canonical.head_hash() {
                    return Err(format!("resynced: {node} head differs from the majority"));
                }
                Ok(())
            }
            Assertion::AuthorizedSealers => {
                let sealers = self.genesis.sealer_addresses();
                for (_, s, p) in self.running() {
                    validate_chain(p.chain(), &self.genesis)
                        .map_err(|e| format!("authorized_sealers: {} chain invalid: {e}", s.spec.name))?;
                    if p.chain().blocks()[1..]
                        .iter()
                        .any(|b| !sealers.contains(&b.header.sealer))
                    {
                        return Err(format!("authorized_sealers: {} has a foreign sealer", s.spec.name));
                    }
                }
                Ok(())
            }
            Assertion::BackendsMatchChain => {
                for c in self.clients() {
                    let (Some(peer), Some(cmd)) = (c.peer.as_ref(), c.commander.as_ref()) else {
                        continue;
                    };
                    let state = replay(peer.chain(), &self.genesis)
                        .map_err(|e| format!("backends_match_chain: {e}"))?;
                    let want: Vec<FirewallRule> = state
                        .rules()
                        .iter()
                        .filter(|r| r.action == Action::Deny)
                        .copied()
                        .collect();
                    if cmd.backend().rules() != want.as_slice() {
                        return Err(format!(
                            "backends_match_chain: {} backend {:?} != chain {:?}",
                            c.spec.name,
                            cmd.backend().rules(),
                            want
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Every rule a client backend ever received was carried by a block
    /// that client held.
    pub fn check_commander_provenance(&self) -> Result<(), String> {
        for c in self.clients() {
            for d in self.deployments(&c.spec.name) {
                if !c.held_blocks.contains(&d.block_hash) {
                    return Err(format!("{}: deployment from a block it never held", c.spec.name));
                }
                let block = self
                    .blocks
                    .get(&d.block_hash)
                    .ok_or_else(|| format!("{}: unknown origin block", c.spec.name))?;
                let carried = block.transactions.iter().any(|t| match &t.kind {
                    TxKind::AddRule(r) => r.id() == d.rule_id,
                    _ => false,
                });
                if !carried {
                    return Err(format!("{}: origin block lacks the rule", c.spec.name));
                }
            }
            let logged: BTreeSet<_> = self
                .backend_add_log(&c.spec.name)
                .unwrap_or_default()
                .iter()
                .map(FirewallRule::id)
                .collect();
            let deployed: BTreeSet<_> = self
                .deployments(&c.spec.name)
                .iter()
                .map(|d| d.rule_id)
                .collect();
            if !logged.is_subset(&deployed) {
                return Err(format!("{}: backend add without provenance", c.spec.name));
            }
        }
        Ok(())
    }

    /// Whether every running node's chain at `height` and below agrees.
    pub fn agree_up_to(&self, height: u64) -> bool {
        let mut reference: Option<&[Hash32]> = None;
        for (_, _, p) in self.running() {
            let hashes = p.chain().hashes();
            let n = (height as usize + 1).min(hashes.len());
            match reference {
                None => reference = Some(&hashes[..n]),
                Some(r) => {
                    let m = r.len().min(n);
                    if r[..m] != hashes[..m] {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn rule_tag(rule: &FirewallRule) -> String {
    rule.to_string()
        .trim_end_matches(" from any")
        .replace(' ', "-")
}

/// Runs a scenario to completion and checks its assertions.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> Result<MetricsReport, HarnessError> {
    let seed = seed.unwrap_or(scenario.seed);
    let mut sim = Simulation::new(scenario.clone(), seed)?;
    sim.run()?;
    let report = sim.report();
    let mut failures = sim.check_assertions();
    if let Err(e) = sim.check_commander_provenance() {
        failures.push(format!("commander_provenance: {e}"));
    }
    match failures.first() {
        None => Ok(report),
        Some(first) => Err(HarnessError::Assertion {
            first: first.clone(),
            failures: failures.clone(),
            report: Box::new(report),
        }),
    }
}
