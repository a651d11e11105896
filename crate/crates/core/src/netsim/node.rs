//! Sans-IO peer: consumes messages and timer ticks, returns the messages to
//! send. The same state machine runs under the simulator and the TCP
//! transport.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};

use crate::codec::Hash32;
use crate::consensus::{AcceptOutcome, ConsiderOutcome, NodeState, SealOutcome};
use crate::genesis::GenesisConfig;
use crate::identity::KeyPair;
use crate::ledger::{
    append_blocks, encode_ledger, encode_record, load_chain, persist_chain, validate_blocks,
    Block, Chain, LoadOutcome, LEDGER_MAGIC,
};
use crate::rulestate::Transaction;

use super::message::{Message, NodeId, Payload, StateSummary, CONSOLE_ID, MAX_CHAIN_RESPONSE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerConfig {
    pub id: NodeId,
    pub peers: Vec<NodeId>,
    pub announce_interval_ms: u64,
    /// Initial look-back when asking a peer for blocks.
    pub sync_lookback: u64,
}

impl PeerConfig {
    pub fn new(id: NodeId, peers: Vec<NodeId>) -> Self {
        Self {
            id,
            peers,
            announce_interval_ms: 5_000,
            sync_lookback: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncStatus {
    Synced,
    NeedsSync,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    Sealed {
        height: u64,
        hash: Hash32,
        txs: usize,
    },
    Accepted {
        height: u64,
        hash: Hash32,
        reorged: bool,
    },
    Adopted {
        height: u64,
        reorged: bool,
    },
    CorruptionDetected {
        offset: Option<u64>,
        salvaged: usize,
    },
    SyncStarted {
        at_ms: u64,
    },
    SyncCompleted {
        at_ms: u64,
        height: u64,
    },
    StorageError(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: NodeId,
    pub msg: Message,
}

#[derive(Debug)]
struct Storage {
    path: PathBuf,
    /// File offset just past block `i`'s record.
    record_ends: Vec<u64>,
}

impl Storage {
    fn rewrite(&mut self, chain: &Chain) -> io::Result<()> {
        persist_chain(chain, &self.path)?;
        self.record_ends = record_ends(chain.blocks());
        Ok(())
    }

    fn append(&mut self, block: &Block) -> io::Result<()> {
        let end = append_blocks(&self.path, std::slice::from_ref(block))?;
        self.record_ends.push(end);
        Ok(())
    }
}

fn record_ends(blocks: &[Block]) -> Vec<u64> {
    let mut ends = Vec::with_capacity(blocks.len());
    let mut offset = LEDGER_MAGIC.len() as u64;
    let mut buf = Vec::new();
    for b in blocks {
        buf.clear();
        encode_record(b, &mut buf);
        offset += buf.len() as u64;
        ends.push(offset);
    }
    ends
}

#[derive(Debug)]
struct SyncRequest {
    peer: NodeId,
    sent_at_ms: u64,
    lookback: u64,
    buffer: Vec<Block>,
}

/// Why a stored ledger was not accepted as-is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageMismatch {
    pub offset: Option<u64>,
}

pub struct PeerNode {
    config: PeerConfig,
    node: NodeState,
    storage: Option<Storage>,
    status: SyncStatus,
    request: Option<SyncRequest>,
    round_robin: usize,
    seen: HashSet<(u8, Hash32)>,
    local_txs: Vec<Transaction>,
    events: Vec<NodeEvent>,
    pub ignored_unknown: u64,
}

impl std::fmt::Debug for PeerNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeerNode")
            .field("id", &self.config.id)
            .field("height", &self.node.chain().height())
            .field("status", &self.status)
            .finish()
    }
}

impl PeerNode {
    /// A node without a ledger file.
    pub fn in_memory(config: PeerConfig, node: NodeState) -> Self {
        Self {
            config,
            node,
            storage: None,
            status: SyncStatus::Synced,
            request: None,
            round_robin: 0,
            seen: HashSet::new(),
            local_txs: Vec::new(),
            events: Vec::new(),
            ignored_unknown: 0,
        }
    }

    /// Opens (or creates) the ledger at `path`. A corrupt or invalid file
    /// keeps its longest valid prefix and leaves the node in `NeedsSync`.
    pub fn open(
        config: PeerConfig,
        genesis: GenesisConfig,
        sealer_key: Option<KeyPair>,
        path: &Path,
    ) -> io::Result<Self> {
        let fresh = NodeState::new(genesis.clone(), sealer_key.clone());
        let (node, mismatch) = match load_chain(path) {
            Err(e) if e.kind() == io::ErrorKind::NotFound => (fresh, None),
            Err(e) => return Err(e),
            Ok(LoadOutcome::Complete(chain)) => {
                salvage(chain.into_blocks(), None, &genesis, sealer_key, fresh)
            }
            Ok(LoadOutcome::CorruptAt { offset, prefix }) => {
                salvage(prefix, Some(offset), &genesis, sealer_key, fresh)
            }
        };
        let mut storage = Storage {
            path: path.to_path_buf(),
            record_ends: Vec::new(),
        };
        storage.rewrite(node.chain())?;
        let mut peer = Self::in_memory(config, node);
        peer.storage = Some(storage);
        if let Some(m) = mismatch {
            warn!(
                "node {}: ledger {} corrupt at {:?}, kept {} blocks",
                peer.config.id,
                path.display(),
                m.offset,
                peer.node.chain().len()
            );
            peer.events.push(NodeEvent::CorruptionDetected {
                offset: m.offset,
                salvaged: peer.node.chain().len(),
            });
            peer.status = SyncStatus::NeedsSync;
        }
        Ok(peer)
    }

    pub fn id(&self) -> NodeId {
        self.config.id
    }

    pub fn config(&self) -> &PeerConfig {
        &self.config
    }

    pub fn state(&self) -> &NodeState {
        &self.node
    }

    pub fn chain(&self) -> &Chain {
        self.node.chain()
    }

    pub fn status(&self) -> SyncStatus {
        self.status
    }

    pub fn ledger_path(&self) -> Option<&Path> {
        self.storage.as_ref().map(|s| s.path.as_path())
    }

    pub fn drain_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    fn broadcast(&self, payload: Payload, except: Option<NodeId>) -> Vec<Outbound> {
        self.config
            .peers
            .iter()
            .filter(|&&p| Some(p) != except)
            .map(|&to| Outbound {
                to,
                msg: Message::new(self.config.id, payload.clone()),
            })
            .collect()
    }

    fn send(&self, to: NodeId, payload: Payload) -> Outbound {
        Outbound {
            to,
            msg: Message::new(self.config.id, payload),
        }
    }

    /// Called once when the node comes up.
    pub fn start(&mut self, now_ms: u64) -> Vec<Outbound> {
        if self.status == SyncStatus::NeedsSync {
            self.events.push(NodeEvent::SyncStarted { at_ms: now_ms });
            return self.request_full_sync(now_ms);
        }
        Vec::new()
    }

    fn request_full_sync(&mut self, now_ms: u64) -> Vec<Outbound> {
        if self.config.peers.is_empty() {
            return Vec::new();
        }
        let peer = self.config.peers[self.round_robin % self.config.peers.len()];
        self.round_robin += 1;
        self.request = Some(SyncRequest {
            peer,
            sent_at_ms: now_ms,
            lookback: u64::MAX,
            buffer: Vec::new(),
        });
        debug!("node {}: full sync from {peer}", self.config.id);
        vec![self.send(peer, Payload::GetChain { from_height: 0 })]
    }

    /// A transaction submitted locally (by a console).
    pub fn submit(&mut self, tx: Transaction) -> Vec<Outbound> {
        self.seen.insert((0, tx.hash()));
        if !self.node.add_pending(tx.clone()) {
            return Vec::new();
        }
        self.local_txs.push(tx.clone());
        self.broadcast(Payload::TxGossip(tx), None)
    }

    pub fn on_seal_tick(&mut self, now_ms: u64) -> Vec<Outbound> {
        if self.status == SyncStatus::NeedsSync {
            return Vec::new();
        }
        match self.node.try_seal(now_ms) {
            SealOutcome::NotYet => Vec::new(),
            SealOutcome::Sealed(block) => {
                let hash = block.hash();
                self.seen.insert((1, hash));
                self.events.push(NodeEvent::Sealed {
                    height: block.header.height,
                    hash,
                    txs: block.transactions.len(),
                });
                self.store_append(&block);
                self.broadcast(Payload::BlockGossip(block), None)
            }
        }
    }

    pub fn on_announce_tick(&mut self, now_ms: u64) -> Vec<Outbound> {
        let mut out = self.broadcast(
            Payload::HeadAnnounce {
                height: self.node.chain().height(),
                head_hash: self.node.chain().head_hash(),
            },
            None,
        );
        let state = self.node.state();
        self.local_txs
            .retain(|tx| tx.nonce >= state.next_nonce(&tx.sender));
        for tx in self.local_txs.clone() {
            out.extend(self.broadcast(Payload::TxGossip(tx), None));
        }
        if self.request_expired(now_ms) {
            self.request = None;
        }
        if self.status == SyncStatus::NeedsSync && self.request.is_none() {
            out.extend(self.request_full_sync(now_ms));
        }
        out
    }

    fn request_expired(&self, now_ms: u64) -> bool {
        self.request
            .as_ref()
            .is_some_and(|r| now_ms >= r.sent_at_ms + self.config.announce_interval_ms)
    }

    /// Handles one message from `msg.sender`.
    pub fn handle(&mut self, msg: Message, now_ms: u64) -> Vec<Outbound> {
        let from = msg.sender;
        if from != CONSOLE_ID && !self.config.peers.contains(&from) {
            self.ignored_unknown += 1;
            return Vec::new();
        }
        match msg.payload {
            Payload::TxGossip(tx) => {
                if from == CONSOLE_ID {
                    return self.submit(tx);
                }
                if !self.seen.insert((0, tx.hash())) {
                    return Vec::new();
                }
                if self.node.add_pending(tx.clone()) {
                    self.broadcast(Payload::TxGossip(tx), Some(from))
                } else {
                    Vec::new()
                }
            }
            Payload::BlockGossip(block) => self.on_block(from, block, now_ms),
            Payload::HeadAnnounce { height, head_hash } => {
                let chain = self.node.chain();
                let differs = height > chain.height()
                    || (height == chain.height() && head_hash != chain.head_hash());
                if differs && self.status == SyncStatus::Synced {
                    self.request_from(from, now_ms)
                } else {
                    Vec::new()
                }
            }
            Payload::GetChain { from_height } => {
                let blocks = self.node.chain().blocks();
                let start = (from_height as usize).min(blocks.len());
                let end = (start + MAX_CHAIN_RESPONSE).min(blocks.len());
                vec![self.send(from, Payload::ChainResponse(blocks[start..end].to_vec()))]
            }
            Payload::ChainResponse(blocks) => self.on_chain_response(from, blocks, now_ms),
            Payload::GetNonce(address) => {
                let mut nonce = self.node.state().next_nonce(&address);
                for tx in self.node.mempool().iter() {
                    if tx.sender == address && tx.nonce >= nonce {
                        nonce = tx.nonce + 1;
                    }
                }
                vec![self.send(from, Payload::NonceReply { address, nonce })]
            }
            Payload::GetState => vec![self.send(from, Payload::StateReply(Box::new(self.summary())))],
            Payload::NonceReply { .. } | Payload::StateReply(_) => Vec::new(),
        }
    }

    pub fn summary(&self) -> StateSummary {
        let schedule = self.node.schedule();
        StateSummary {
            height: self.node.chain().height(),
            head_hash: self.node.chain().head_hash(),
            sealer: self.node.sealer_address(),
            period: schedule.period(),
            wiggle: schedule.wiggle(),
            state: self.node.state().clone(),
        }
    }

    fn on_block(&mut self, from: NodeId, block: Block, now_ms: u64) -> Vec<Outbound> {
        let hash = block.hash();
        if !self.seen.insert((1, hash)) {
            return Vec::new();
        }
        let height = block.header.height;
        match self.node.accept_block(block.clone(), now_ms) {
            AcceptOutcome::Accepted { reorged } => {
                self.events.push(NodeEvent::Accepted {
                    height,
                    hash,
                    reorged,
                });
                if reorged {
                    self.store_rewrite();
                } else {
                    self.store_append(&block);
                }
                self.broadcast(Payload::BlockGossip(block), Some(from))
            }
            AcceptOutcome::Ignored(reason) => {
                debug!("node {}: ignored block {height} from {from}: {reason:?}", self.config.id);
                Vec::new()
            }
        }
    }

    fn request_from(&mut self, peer: NodeId, now_ms: u64) -> Vec<Outbound> {
        if self.request.is_some() && !self.request_expired(now_ms) {
            return Vec::new();
        }
        let lookback = self.config.sync_lookback;
        self.request = Some(SyncRequest {
            peer,
            sent_at_ms: now_ms,
            lookback,
            buffer: Vec::new(),
        });
        let from_height = self.node.chain().height().saturating_sub(lookback);
        vec![self.send(peer, Payload::GetChain { from_height })]
    }

    fn on_chain_response(&mut self, from: NodeId, blocks: Vec<Block>, now_ms: u64) -> Vec<Outbound> {
        let Some(mut req) = self.request.take() else {
            return Vec::new();
        };
        if req.peer != from {
            self.request = Some(req);
            return Vec::new();
        }
        let Some(first) = blocks.first() else {
            return Vec::new();
        };
        if let Some(last) = req.buffer.last() {
            if first.header.height != last.header.height + 1 {
                return Vec::new();
            }
        } else if first.header.height > 0 {
            let parent = self.node.chain().hash_at(first.header.height - 1);
            if parent != Some(first.header.parent_hash) {
                // No common ancestor in this window; look further back.
                let lookback = req.lookback.saturating_mul(2);
                let from_height = self.node.chain().height().saturating_sub(lookback);
                self.request = Some(SyncRequest {
                    peer: from,
                    sent_at_ms: now_ms,
                    lookback,
                    buffer: Vec::new(),
                });
                return vec![self.send(from, Payload::GetChain { from_height })];
            }
        }
        let full = blocks.len() == MAX_CHAIN_RESPONSE;
        req.buffer.extend(blocks);
        if full {
            let next = req.buffer.last().expect("non-empty").header.height + 1;
            req.sent_at_ms = now_ms;
            self.request = Some(req);
            return vec![self.send(from, Payload::GetChain { from_height: next })];
        }
        let outcome = self.node.consider_chain(&req.buffer);
        let adopted = match outcome {
            ConsiderOutcome::Adopted { reorged } => {
                self.events.push(NodeEvent::Adopted {
                    height: self.node.chain().height(),
                    reorged,
                });
                self.store_rewrite();
                true
            }
            ConsiderOutcome::Kept => true,
            ConsiderOutcome::NoCommonAncestor => false,
            ConsiderOutcome::Invalid(err) => {
                warn!("node {}: chain from {from} invalid: {err}", self.config.id);
                false
            }
        };
        if adopted && self.status == SyncStatus::NeedsSync {
            self.status = SyncStatus::Synced;
            info!(
                "node {}: resynced to height {}",
                self.config.id,
                self.node.chain().height()
            );
            self.events.push(NodeEvent::SyncCompleted {
                at_ms: now_ms,
                height: self.node.chain().height(),
            });
        }
        Vec::new()
    }

    fn store_append(&mut self, block: &Block) {
        if let Some(storage) = &mut self.storage {
            if let Err(e) = storage.append(block) {
                self.events.push(NodeEvent::StorageError(e.to_string()));
            }
        }
    }

    fn store_rewrite(&mut self) {
        if let Some(storage) = &mut self.storage {
            if let Err(e) = storage.rewrite(self.node.chain()) {
                self.events.push(NodeEvent::StorageError(e.to_string()));
            }
        }
    }

    /// Compares the ledger file with the in-memory chain. The cheap check
    /// looks at the file length, magic and final record; `full` compares
    /// every byte.
    pub fn check_storage(&self, full: bool) -> Result<(), StorageMismatch> {
        let Some(storage) = &self.storage else {
            return Ok(());
        };
        let expected_len = *storage.record_ends.last().expect("genesis record");
        if full {
            let bytes = fs::read(&storage.path).map_err(|_| StorageMismatch { offset: None })?;
            let expected = encode_ledger(self.node.chain().blocks());
            return match bytes.iter().zip(&expected).position(|(a, b)| a != b) {
                Some(i) => Err(StorageMismatch {
                    offset: Some(i as u64),
                }),
                None if bytes.len() != expected.len() => Err(StorageMismatch {
                    offset: Some(bytes.len().min(expected.len()) as u64),
                }),
                None => Ok(()),
            };
        }
        use std::io::{Read, Seek, SeekFrom};
        let check = || -> io::Result<Option<u64>> {
            let mut file = fs::File::open(&storage.path)?;
            if file.metadata()?.len() != expected_len {
                return Ok(Some(0));
            }
            let mut magic = [0u8; 4];
            file.read_exact(&mut magic)?;
            if &magic != LEDGER_MAGIC {
                return Ok(Some(0));
            }
            let n = storage.record_ends.len();
            let start = if n >= 2 {
                storage.record_ends[n - 2]
            } else {
                LEDGER_MAGIC.len() as u64
            };
            file.seek(SeekFrom::Start(start))?;
            let mut record = vec![0u8; (expected_len - start) as usize];
            file.read_exact(&mut record)?;
            let mut expected = Vec::new();
            encode_record(self.node.chain().head(), &mut expected);
            Ok((record != expected).then_some(start))
        };
        match check() {
            Ok(None) => Ok(()),
            Ok(Some(offset)) => Err(StorageMismatch {
                offset: Some(offset),
            }),
            Err(_) => Err(StorageMismatch { offset: None }),
        }
    }

    /// Drops back to the longest stored prefix that still matches, rewrites
    /// the file and starts a full resync.
    pub fn enter_needs_sync(&mut self, mismatch: StorageMismatch, now_ms: u64) -> Vec<Outbound> {
        let Some(storage) = &self.storage else {
            return Vec::new();
        };
        let stored = fs::read(&storage.path)
            .map(|b| match crate::ledger::decode_ledger(&b) {
                LoadOutcome::Complete(c) => c.into_blocks(),
                LoadOutcome::CorruptAt { prefix, .. } => prefix,
            })
            .unwrap_or_default();
        let keep = stored
            .iter()
            .zip(self.node.chain().blocks())
            .take_while(|(a, b)| a == b)
            .count()
            .max(1);
        self.node.reset_to(keep);
        warn!(
            "node {}: ledger file diverged at {:?}, kept {keep} blocks",
            self.config.id, mismatch.offset
        );
        self.store_rewrite();
        self.events.push(NodeEvent::CorruptionDetected {
            offset: mismatch.offset,
            salvaged: keep,
        });
        self.events.push(NodeEvent::SyncStarted { at_ms: now_ms });
        self.status = SyncStatus::NeedsSync;
        self.request = None;
        self.request_full_sync(now_ms)
    }
}

fn salvage(
    blocks: Vec<Block>,
    offset: Option<u64>,
    genesis: &GenesisConfig,
    sealer_key: Option<KeyPair>,
    fresh: NodeState,
) -> (NodeState, Option<StorageMismatch>) {
    let keep = match validate_blocks(&blocks, genesis) {
        Ok(_) if offset.is_none() => blocks.len(),
        Ok(_) => blocks.len(),
        Err(e) => e.first_bad_height as usize,
    };
    let mismatch = (offset.is_some() || keep < blocks.len()).then(|| StorageMismatch {
        offset: offset.or(Some(keep as u64)),
    });
    if keep == 0 {
        return (fresh, Some(mismatch.unwrap_or(StorageMismatch { offset: Some(0) })));
    }
    let mut blocks = blocks;
    blocks.truncate(keep);
    let chain = Chain::from_blocks(blocks).expect("non-empty");
    match NodeState::from_chain(genesis.clone(), sealer_key, chain) {
        Ok(node) => (node, mismatch),
        Err(_) => (fresh, Some(StorageMismatch { offset: Some(0) })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::TestNet;

    fn peer(net: &TestNet, id: NodeId, n: u32, key: Option<usize>) -> PeerNode {
        let peers = (0..n).filter(|&p| p != id).collect();
        PeerNode::in_memory(
            PeerConfig::new(id, peers),
            NodeState::new(net.genesis.clone(), key.map(|k| net.sealers[k].clone())),
        )
    }

    /// Delivers everything instantly until quiet.
    fn flood(nodes: &mut [PeerNode], mut queue: Vec<Outbound>, now_ms: u64) -> usize {
        let mut sent = 0;
        while !queue.is_empty() {
            let mut next = Vec::new();
            for o in queue {
                sent += 1;
                next.extend(nodes[o.to as usize].handle(o.msg, now_ms));
            }
            queue = next;
        }
        sent
    }

    #[test]
    fn tx_reaches_every_mempool_once() {
        let net = TestNet::new(3);
        let mut nodes: Vec<PeerNode> = (0..4).map(|i| peer(&net, i, 4, None)).collect();
        let tx = net.deny_tx(22, 0);
        let out = nodes[0].submit(tx.clone());
        flood(&mut nodes, out, 0);
        for n in &nodes {
            assert_eq!(n.state().mempool().iter().filter(|t| **t == tx).count(), 1);
        }
        // A repeat is suppressed everywhere.
        let again = Outbound {
            to: 1,
            msg: Message::new(0, Payload::TxGossip(tx)),
        };
        assert_eq!(flood(&mut nodes, vec![again], 0), 1);
    }

    #[test]
    fn unknown_sender_is_ignored() {
        let net = TestNet::new(3);
        let mut node = peer(&net, 0, 3, None);
        let out = node.handle(Message::new(9, Payload::TxGossip(net.deny_tx(22, 0))), 0);
        assert!(out.is_empty());
        assert!(node.state().mempool().is_empty());
        assert_eq!(node.ignored_unknown, 1);
    }

    #[test]
    fn equal_heads_cause_no_chain_requests() {
        let net = TestNet::new(3);
        let mut nodes: Vec<PeerNode> = (0..3).map(|i| peer(&net, i, 3, None)).collect();
        let mut out = Vec::new();
        for n in &mut nodes {
            out.extend(n.on_announce_tick(0));
        }
        let mut kinds = Vec::new();
        for o in out {
            for r in nodes[o.to as usize].handle(o.msg, 0) {
                kinds.push(r.msg.payload.kind_name());
            }
        }
        assert!(kinds.is_empty(), "{kinds:?}");
    }

    fn lagging_sync_round_trips(behind: u64) -> usize {
        let net = TestNet::new(1);
        let chain = net.build_chain(behind, &[]);
        let mut ahead = peer(&net, 0, 2, None);
        ahead.node = NodeState::from_chain(net.genesis.clone(), None, chain.clone()).unwrap();
        let mut lagging = peer(&net, 1, 2, None);
        let now = u64::MAX / 2;
        let mut out = lagging.handle(
            Message::new(
                0,
                Payload::HeadAnnounce {
                    height: chain.height(),
                    head_hash: chain.head_hash(),
                },
            ),
            now,
        );
        let mut trips = 0;
        while let Some(req) = out.pop() {
            trips += 1;
            let resp = ahead.handle(req.msg, now);
            out = resp
                .into_iter()
                .flat_map(|r| lagging.handle(r.msg, now))
                .collect();
        }
        assert_eq!(lagging.chain(), &chain);
        trips
    }

    #[test]
    fn sync_round_trips_follow_the_cap() {
        assert_eq!(lagging_sync_round_trips(30), 1);
        assert_eq!(lagging_sync_round_trips(300), 2);
    }

    #[test]
    fn blanked_ledger_restarts_in_needs_sync() {
        let net = TestNet::new(3);
        let chain = net.build_chain(8, &[3]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bfw");
        persist_chain(&chain, &path).unwrap();
        let len = fs::metadata(&path).unwrap().len() as usize;
        fs::write(&path, vec![0u8; len]).unwrap();

        let cfg = PeerConfig::new(1, vec![0]);
        let mut node = PeerNode::open(cfg, net.genesis.clone(), None, &path).unwrap();
        assert_eq!(node.status(), SyncStatus::NeedsSync);
        assert_eq!(
            node.drain_events(),
            vec![NodeEvent::CorruptionDetected {
                offset: Some(0),
                salvaged: 1
            }]
        );
        let out = node.start(0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].msg.payload, Payload::GetChain { from_height: 0 });
        // Sealing is suspended while syncing.
        assert!(node.on_seal_tick(u64::MAX / 2).is_empty());

        let reply = Message::new(0, Payload::ChainResponse(chain.blocks().to_vec()));
        node.handle(reply, 1_000);
        assert_eq!(node.status(), SyncStatus::Synced);
        assert_eq!(node.chain(), &chain);
        assert_eq!(fs::read(&path).unwrap(), encode_ledger(chain.blocks()));
        assert!(node.check_storage(true).is_ok());
    }

    #[test]
    fn storage_checks_catch_tampering() {
        let net = TestNet::new(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bfw");
        let mut node =
            PeerNode::open(PeerConfig::new(0, vec![1]), net.genesis.clone(), Some(net.sealers[1].clone()), &path)
                .unwrap();
        let t0 = net.genesis.timestamp * 1000;
        node.submit(net.deny_tx(22, 0));
        assert_eq!(node.on_seal_tick(t0 + 1000).len(), 1);
        assert!(node.check_storage(false).is_ok());
        assert!(node.check_storage(true).is_ok());

        // Flip a byte inside the genesis record: only the full check sees it.
        let mut bytes = fs::read(&path).unwrap();
        bytes[10] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(node.check_storage(false).is_ok());
        let err = node.check_storage(true).unwrap_err();
        assert_eq!(err.offset, Some(10));
        let out = node.enter_needs_sync(err, t0 + 2000);
        assert_eq!(node.status(), SyncStatus::NeedsSync);
        assert_eq!(node.chain().len(), 1);
        assert_eq!(out[0].msg.payload, Payload::GetChain { from_height: 0 });

        // Zeroing the file trips the cheap check.
        fs::write(&path, vec![0u8; bytes.len()]).unwrap();
        assert!(node.check_storage(false).is_err());
    }

    #[test]
    fn reopen_keeps_valid_chain() {
        let net = TestNet::new(3);
        let chain = net.build_chain(5, &[2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bfw");
        persist_chain(&chain, &path).unwrap();
        let mut node = PeerNode::open(PeerConfig::new(0, vec![]), net.genesis.clone(), None, &path).unwrap();
        assert_eq!(node.status(), SyncStatus::Synced);
        assert_eq!(node.chain(), &chain);
        assert!(node.drain_events().is_empty());
    }

    #[test]
    fn console_nonce_counts_pending() {
        let net = TestNet::new(3);
        let mut node = peer(&net, 0, 2, None);
        node.submit(net.deny_tx(22, 0));
        let out = node.handle(Message::new(CONSOLE_ID, Payload::GetNonce(net.admin.address())), 0);
        assert_eq!(
            out[0].msg.payload,
            Payload::NonceReply {
                address: net.admin.address(),
                nonce: 1
            }
        );
        assert_eq!(out[0].to, CONSOLE_ID);
    }
}
