//! Clique-style proof-of-authority: a static sealer set takes turns by
//! height, with a delayed out-of-turn fallback when the scheduled sealer is
//! silent.

use std::collections::HashSet;

use crate::codec::{sha256, Hash32};
use crate::genesis::GenesisConfig;
use crate::identity::{Address, KeyPair, PublicKey};
use crate::ledger::{
    check_block, check_seal, compare_chains, encode_header, tx_root, validate_blocks, Block,
    BlockHeader, Chain, ForkChoice, InvalidChain, InvalidReason,
};
use crate::rulestate::{state_root, ChainState, Rejection, Transaction};

/// Blocks may not be stamped further than this into the future.
pub const MAX_FUTURE_DRIFT_MS: u64 = 5_000;
pub const MAX_TXS_PER_BLOCK: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealerSchedule {
    sealers: Vec<Address>,
    keys: Vec<Option<PublicKey>>,
    period: u64,
    wiggle: u64,
}

impl SealerSchedule {
    /// `period` and `wiggle` are in seconds.
    pub fn new(sealers: Vec<Address>, period: u64, wiggle: u64) -> Self {
        assert!(!sealers.is_empty(), "sealer set must be non-empty");
        assert!(period >= 1, "period must be at least one second");
        let keys = vec![None; sealers.len()];
        Self {
            sealers,
            keys,
            period,
            wiggle,
        }
    }

    pub fn from_genesis(genesis: &GenesisConfig) -> Self {
        let mut schedule = Self::new(
            genesis.sealer_addresses(),
            genesis.period,
            genesis.wiggle_secs(),
        );
        schedule.keys = genesis.sealers.iter().copied().map(Some).collect();
        schedule
    }

    pub fn sealers(&self) -> &[Address] {
        &self.sealers
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn wiggle(&self) -> u64 {
        self.wiggle
    }

    pub fn is_sealer(&self, address: &Address) -> bool {
        self.sealers.contains(address)
    }

    pub fn key_of(&self, address: &Address) -> Option<&PublicKey> {
        let idx = self.sealers.iter().position(|a| a == address)?;
        self.keys[idx].as_ref()
    }

    pub fn in_turn_sealer(&self, height: u64) -> Address {
        in_turn_sealer(height, self)
    }
}

/// `sealers[height mod |sealers|]`.
pub fn in_turn_sealer(height: u64, schedule: &SealerSchedule) -> Address {
    let n = schedule.sealers.len() as u64;
    schedule.sealers[(height % n) as usize]
}

/// Deterministic per-(sealer, height) delay in `0..period` milliseconds that
/// spreads competing out-of-turn sealers apart.
pub fn out_of_turn_jitter_ms(sealer: &Address, height: u64, period_secs: u64) -> u64 {
    let mut buf = [0u8; 28];
    buf[..20].copy_from_slice(&sealer.0);
    buf[20..].copy_from_slice(&height.to_be_bytes());
    let digest = sha256(&buf);
    let x = u64::from_be_bytes(digest.0[..8].try_into().unwrap());
    x % (period_secs * 1000)
}

/// Builds and seals a block on `parent` whose post-state is `post_state`.
pub fn seal_block(
    parent: &Block,
    parent_hash: Hash32,
    transactions: Vec<Transaction>,
    post_state: &ChainState,
    timestamp: u64,
    key: &KeyPair,
    schedule: &SealerSchedule,
) -> Block {
    let height = parent.header.height + 1;
    let sealer = key.address();
    let mut header = BlockHeader {
        height,
        parent_hash,
        state_root: state_root(post_state),
        tx_root: tx_root(&transactions),
        timestamp,
        sealer,
        in_turn: schedule.in_turn_sealer(height) == sealer,
        seal: crate::identity::Signature::ZERO,
    };
    header.seal = key.sign(&encode_header(&header));
    Block {
        header,
        transactions,
    }
}

/// Pending transactions in arrival order.
#[derive(Debug, Default, Clone)]
pub struct Mempool {
    txs: Vec<Transaction>,
    hashes: HashSet<Hash32>,
}

impl Mempool {
    pub fn insert(&mut self, tx: Transaction) -> bool {
        if !self.hashes.insert(tx.hash()) {
            return false;
        }
        self.txs.push(tx);
        true
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.txs.iter()
    }

    fn retain(&mut self, mut keep: impl FnMut(&Transaction) -> bool) {
        let hashes = &mut self.hashes;
        self.txs.retain(|tx| {
            let k = keep(tx);
            if !k {
                hashes.remove(&tx.hash());
            }
            k
        });
    }

    /// Greedy in-order selection against `state`. Transactions from a sender
    /// whose nonce is ahead are retried in later passes so out-of-order
    /// arrival still packs correctly. Returns the chosen transactions, the
    /// post-state and the hashes of transactions that can never apply.
    pub fn select(&self, state: &ChainState) -> (Vec<Transaction>, ChainState, Vec<Hash32>) {
        let mut post = state.clone();
        let mut chosen = Vec::new();
        let mut used = vec![false; self.txs.len()];
        let mut dead = Vec::new();
        loop {
            let mut progress = false;
            for (i, tx) in self.txs.iter().enumerate() {
                if used[i] || chosen.len() >= MAX_TXS_PER_BLOCK {
                    continue;
                }
                if post.apply(tx).is_ok() {
                    used[i] = true;
                    chosen.push(tx.clone());
                    progress = true;
                }
            }
            if !progress {
                break;
            }
        }
        for (i, tx) in self.txs.iter().enumerate() {
            if used[i] {
                continue;
            }
            match post.check(tx) {
                Err(Rejection::BadNonce { expected, got }) if got > expected => {}
                Err(_) => dead.push(tx.hash()),
                Ok(()) => {}
            }
        }
        (chosen, post, dead)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SealOutcome {
    Sealed(Block),
    NotYet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgnoreReason {
    Duplicate,
    TooEarly,
    /// Parent not on the local chain; the sender may be ahead of us.
    UnknownParent,
    StaleHeight,
    BadParent,
    BadSeal,
    UnauthorizedSealer,
    BadStateRoot,
    Invalid(InvalidReason),
}

impl From<InvalidReason> for IgnoreReason {
    fn from(reason: InvalidReason) -> Self {
        match reason {
            InvalidReason::BadSeal => IgnoreReason::BadSeal,
            InvalidReason::UnauthorizedSealer => IgnoreReason::UnauthorizedSealer,
            InvalidReason::StateRootMismatch => IgnoreReason::BadStateRoot,
            InvalidReason::BrokenLink | InvalidReason::BadHeight => IgnoreReason::BadParent,
            other => IgnoreReason::Invalid(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AcceptOutcome {
    /// `reorged` is true when the block replaced part of the local chain.
    Accepted { reorged: bool },
    Ignored(IgnoreReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsiderOutcome {
    Adopted { reorged: bool },
    Kept,
    NoCommonAncestor,
    Invalid(InvalidChain),
}

/// A node's consensus view: its chain, per-height states and mempool.
#[derive(Debug, Clone)]
pub struct NodeState {
    genesis: GenesisConfig,
    schedule: SealerSchedule,
    chain: Chain,
    /// `states[h]` is the post-state of block `h`.
    states: Vec<ChainState>,
    mempool: Mempool,
    sealer_key: Option<KeyPair>,
}

impl NodeState {
    pub fn new(genesis: GenesisConfig, sealer_key: Option<KeyPair>) -> Self {
        let chain = Chain::new(genesis.genesis_block());
        let states = vec![genesis.genesis_state()];
        Self {
            schedule: SealerSchedule::from_genesis(&genesis),
            genesis,
            chain,
            states,
            mempool: Mempool::default(),
            sealer_key,
        }
    }

    /// Starts from a stored chain after validating it.
    pub fn from_chain(
        genesis: GenesisConfig,
        sealer_key: Option<KeyPair>,
        chain: Chain,
    ) -> Result<Self, InvalidChain> {
        let mut node = Self::new(genesis, sealer_key);
        validate_blocks(chain.blocks(), &node.genesis)?;
        node.states = node.compute_states(chain.blocks())?;
        node.chain = chain;
        Ok(node)
    }

    fn compute_states(&self, blocks: &[Block]) -> Result<Vec<ChainState>, InvalidChain> {
        let mut states = vec![self.genesis.genesis_state()];
        for (i, pair) in blocks.windows(2).enumerate() {
            let next = check_block(
                &pair[0],
                &pair[0].hash(),
                &states[i],
                &pair[1],
                &self.schedule,
            )
            .map_err(|reason| InvalidChain {
                first_bad_height: i as u64 + 1,
                reason,
            })?;
            states.push(next);
        }
        Ok(states)
    }

    pub fn genesis(&self) -> &GenesisConfig {
        &self.genesis
    }

    pub fn schedule(&self) -> &SealerSchedule {
        &self.schedule
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn state(&self) -> &ChainState {
        self.states.last().expect("at least the genesis state")
    }

    pub fn state_at(&self, height: u64) -> Option<&ChainState> {
        self.states.get(height as usize)
    }

    pub fn mempool(&self) -> &Mempool {
        &self.mempool
    }

    pub fn sealer_address(&self) -> Option<Address> {
        self.sealer_key.as_ref().map(KeyPair::address)
    }

    /// Adds to the mempool unless already included or unsigned.
    pub fn add_pending(&mut self, tx: Transaction) -> bool {
        if !tx.verify_signature() {
            return false;
        }
        if tx.nonce < self.state().next_nonce(&tx.sender) {
            return false;
        }
        self.mempool.insert(tx)
    }

    /// Earliest virtual time (ms) at which this node could seal the next
    /// block, ignoring whether it has anything to include.
    pub fn seal_ready_at(&self) -> Option<(u64, bool)> {
        let me = self.sealer_address()?;
        if !self.schedule.is_sealer(&me) {
            return None;
        }
        let head = self.chain.head();
        let height = head.header.height + 1;
        let base = (head.header.timestamp + self.schedule.period) * 1000;
        if self.schedule.in_turn_sealer(height) == me {
            Some((base, true))
        } else {
            let delay = self.schedule.wiggle * 1000
                + out_of_turn_jitter_ms(&me, height, self.schedule.period);
            Some((base + delay, false))
        }
    }

    /// Seals a block if this node is allowed to at `now_ms` (unix milliseconds)
    /// and has either valid pending transactions or a due keepalive.
    pub fn try_seal(&mut self, now_ms: u64) -> SealOutcome {
        let Some((ready_at, _)) = self.seal_ready_at() else {
            return SealOutcome::NotYet;
        };
        if now_ms < ready_at {
            return SealOutcome::NotYet;
        }
        let (txs, post, dead) = self.mempool.select(self.state());
        if !dead.is_empty() {
            let dead: HashSet<Hash32> = dead.into_iter().collect();
            self.mempool.retain(|tx| !dead.contains(&tx.hash()));
        }
        let head = self.chain.head();
        let keepalive_due = now_ms >= (head.header.timestamp + self.genesis.keepalive) * 1000;
        if txs.is_empty() && !keepalive_due {
            return SealOutcome::NotYet;
        }
        let key = self.sealer_key.as_ref().expect("checked by seal_ready_at");
        let block = seal_block(
            head,
            self.chain.head_hash(),
            txs,
            &post,
            now_ms / 1000,
            key,
            &self.schedule,
        );
        self.append(block.clone(), post);
        SealOutcome::Sealed(block)
    }

    fn append(&mut self, block: Block, post: ChainState) {
        self.chain.push(block);
        self.states.push(post);
        self.prune_mempool();
    }

    fn prune_mempool(&mut self) {
        let state = self.states.last().expect("non-empty");
        self.mempool
            .retain(|tx| tx.nonce >= state.next_nonce(&tx.sender));
    }

    /// Replaces blocks above `keep_len` with `tail`, returning orphaned txs to
    /// the mempool.
    fn replace_tail(&mut self, keep_len: usize, tail: Vec<Block>, tail_states: Vec<ChainState>) {
        let orphaned = self.chain.truncate(keep_len);
        self.states.truncate(keep_len);
        for block in tail {
            self.chain.push(block);
        }
        self.states.extend(tail_states);
        let included: HashSet<Hash32> = self
            .chain
            .blocks()
            .iter()
            .skip(keep_len)
            .flat_map(|b| b.transactions.iter().map(Transaction::hash))
            .collect();
        for block in orphaned {
            for tx in block.transactions {
                if !included.contains(&tx.hash()) {
                    self.mempool.insert(tx);
                }
            }
        }
        self.prune_mempool();
    }

    /// Validates a gossiped block and extends, reorganizes or ignores.
    pub fn accept_block(&mut self, block: Block, now_ms: u64) -> AcceptOutcome {
        let hash = block.hash();
        let height = block.header.height;
        if self.chain.hash_at(height) == Some(hash) {
            return AcceptOutcome::Ignored(IgnoreReason::Duplicate);
        }
        if height == 0 {
            return AcceptOutcome::Ignored(IgnoreReason::BadParent);
        }
        if block.header.timestamp.saturating_mul(1000) > now_ms + MAX_FUTURE_DRIFT_MS {
            return AcceptOutcome::Ignored(IgnoreReason::TooEarly);
        }
        if let Err(reason) = check_seal(&block, &self.schedule) {
            return AcceptOutcome::Ignored(reason.into());
        }
        let parent_height = height - 1;
        if self.chain.hash_at(parent_height) != Some(block.header.parent_hash) {
            return AcceptOutcome::Ignored(IgnoreReason::UnknownParent);
        }
        let parent = self.chain.block(parent_height).expect("hash present");
        let post = match check_block(
            parent,
            &block.header.parent_hash,
            &self.states[parent_height as usize],
            &block,
            &self.schedule,
        ) {
            Ok(post) => post,
            Err(reason) => return AcceptOutcome::Ignored(reason.into()),
        };
        if parent_height == self.chain.height() {
            self.append(block, post);
            return AcceptOutcome::Accepted { reorged: false };
        }
        let mut candidate = self.chain.clone();
        candidate.truncate(height as usize);
        candidate.push(block.clone());
        match compare_chains(&candidate, &self.chain) {
            std::cmp::Ordering::Greater => {
                self.replace_tail(height as usize, vec![block], vec![post]);
                AcceptOutcome::Accepted { reorged: true }
            }
            _ => AcceptOutcome::Ignored(IgnoreReason::StaleHeight),
        }
    }

    /// Considers a contiguous run of blocks fetched from a peer. The first
    /// block must attach to the local chain (or be the genesis block).
    /// Invalid blocks truncate the run; the valid prefix still competes.
    pub fn consider_chain(&mut self, blocks: &[Block]) -> ConsiderOutcome {
        let Some(first) = blocks.first() else {
            return ConsiderOutcome::Kept;
        };
        let start = first.header.height;
        let (base_len, run) = if start == 0 {
            if first.hash() != self.chain.hash_at(0).expect("genesis") {
                return ConsiderOutcome::Invalid(InvalidChain {
                    first_bad_height: 0,
                    reason: InvalidReason::GenesisMismatch,
                });
            }
            (1usize, &blocks[1..])
        } else {
            if self.chain.hash_at(start - 1) != Some(first.header.parent_hash) {
                return ConsiderOutcome::NoCommonAncestor;
            }
            (start as usize, blocks)
        };
        // Skip the part we already share.
        let shared = run
            .iter()
            .take_while(|b| self.chain.hash_at(b.header.height) == Some(b.hash()))
            .count();
        let run = &run[shared..];
        let base_len = base_len + shared;
        if run.is_empty() {
            return ConsiderOutcome::Kept;
        }
        let mut tail = Vec::new();
        let mut tail_states: Vec<ChainState> = Vec::new();
        let mut invalid = None;
        for block in run {
            let (parent, parent_hash, parent_state) = match tail.last() {
                None => {
                    let h = base_len as u64 - 1;
                    (
                        self.chain.block(h).expect("base"),
                        self.chain.hash_at(h).expect("base"),
                        &self.states[h as usize],
                    )
                }
                Some(prev) => {
                    let prev: &Block = prev;
                    (prev, prev.hash(), tail_states.last().expect("paired"))
                }
            };
            match check_block(parent, &parent_hash, parent_state, block, &self.schedule) {
                Ok(post) => {
                    tail.push(block.clone());
                    tail_states.push(post);
                }
                Err(reason) => {
                    invalid = Some(InvalidChain {
                        first_bad_height: block.header.height,
                        reason,
                    });
                    break;
                }
            }
        }
        if tail.is_empty() {
            return ConsiderOutcome::Invalid(invalid.expect("empty tail implies an error"));
        }
        let mut candidate = self.chain.clone();
        candidate.truncate(base_len);
        for b in &tail {
            candidate.push(b.clone());
        }
        let choice = match compare_chains(&candidate, &self.chain) {
            std::cmp::Ordering::Greater => ForkChoice::Candidate,
            _ => ForkChoice::Local,
        };
        match (choice, invalid) {
            (ForkChoice::Candidate, _) => {
                let reorged = base_len < self.chain.len();
                self.replace_tail(base_len, tail, tail_states);
                ConsiderOutcome::Adopted { reorged }
            }
            (ForkChoice::Local, Some(err)) => ConsiderOutcome::Invalid(err),
            (ForkChoice::Local, None) => ConsiderOutcome::Kept,
        }
    }

    /// Drops everything above `len` blocks (used after storage corruption).
    pub fn reset_to(&mut self, len: usize) {
        self.chain.truncate(len);
        self.states.truncate(self.chain.len());
    }
}
