//! Blocks, hash chaining, chain validation, the on-disk ledger file and fork
//! choice.
//!
//! Header encoding (133 bytes, big-endian): `height:u64 parent_hash:[32]
//! state_root:[32] tx_root:[32] timestamp:u64 sealer:[20] in_turn:u8`. The
//! block hash is SHA-256 of that encoding and the seal is a signature over it.
//!
//! Block encoding: `header seal:[64] tx_count:u32 tx*`.
//!
//! Ledger file: the magic `BFW1` followed by `[len:u32 | block]` records.

use std::cmp::Ordering;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::codec::{sha256, DecodeError, Hash32, Reader};
use crate::consensus::SealerSchedule;
use crate::genesis::GenesisConfig;
use crate::identity::{verify, Address, Signature};
use crate::rulestate::{state_root, ChainState, Rejection, Transaction};

pub const HEADER_LEN: usize = 133;
pub const LEDGER_MAGIC: &[u8; 4] = b"BFW1";
/// Upper bound on a single encoded block.
pub const MAX_BLOCK_LEN: usize = 4 << 20;
const MIN_TX_LEN: usize = 1 + 11 + 20 + 8 + 32 + 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub parent_hash: Hash32,
    pub state_root: Hash32,
    pub tx_root: Hash32,
    pub timestamp: u64,
    pub sealer: Address,
    pub in_turn: bool,
    pub seal: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

/// Canonical header bytes, excluding the seal.
pub fn encode_header(header: &BlockHeader) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..8].copy_from_slice(&header.height.to_be_bytes());
    out[8..40].copy_from_slice(header.parent_hash.as_bytes());
    out[40..72].copy_from_slice(header.state_root.as_bytes());
    out[72..104].copy_from_slice(header.tx_root.as_bytes());
    out[104..112].copy_from_slice(&header.timestamp.to_be_bytes());
    out[112..132].copy_from_slice(&header.sealer.0);
    out[132] = header.in_turn as u8;
    out
}

/// SHA-256 over the concatenated canonical transaction encodings.
pub fn tx_root(transactions: &[Transaction]) -> Hash32 {
    let mut buf = Vec::with_capacity(transactions.len() * 160);
    for tx in transactions {
        tx.encode_into(&mut buf);
    }
    sha256(&buf)
}

pub fn hash_block(block: &Block) -> Hash32 {
    block.hash()
}

impl BlockHeader {
    pub fn hash(&self) -> Hash32 {
        sha256(&encode_header(self))
    }
}

impl Block {
    pub fn hash(&self) -> Hash32 {
        self.header.hash()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&encode_header(&self.header));
        out.extend_from_slice(&self.header.seal.0);
        out.extend_from_slice(&(self.transactions.len() as u32).to_be_bytes());
        for tx in &self.transactions {
            tx.encode_into(out);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 68 + self.transactions.len() * 160);
        self.encode_into(&mut out);
        out
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let height = r.u64()?;
        let parent_hash = Hash32(r.array()?);
        let state_root = Hash32(r.array()?);
        let tx_root = Hash32(r.array()?);
        let timestamp = r.u64()?;
        let sealer = Address(r.array()?);
        let in_turn = r.bool()?;
        let seal = Signature(r.array()?);
        let count = r.u32()? as usize;
        if count > r.remaining() / MIN_TX_LEN {
            return Err(DecodeError::TooLong {
                len: count,
                limit: r.remaining() / MIN_TX_LEN,
            });
        }
        let transactions = (0..count)
            .map(|_| Transaction::decode_from(r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Block {
            header: BlockHeader {
                height,
                parent_hash,
                state_root,
                tx_root,
                timestamp,
                sealer,
                in_turn,
                seal,
            },
            transactions,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let block = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(block)
    }

    pub fn weight(&self) -> u64 {
        if self.header.in_turn {
            2
        } else {
            1
        }
    }
}

/// Height-indexed blocks from genesis. Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
    hashes: Vec<Hash32>,
}

impl Chain {
    pub fn new(genesis: Block) -> Self {
        let hashes = vec![genesis.hash()];
        Self {
            blocks: vec![genesis],
            hashes,
        }
    }

    /// Wraps decoded blocks without validating them. `None` if empty.
    pub fn from_blocks(blocks: Vec<Block>) -> Option<Self> {
        if blocks.is_empty() {
            return None;
        }
        let hashes = blocks.iter().map(Block::hash).collect();
        Some(Self { blocks, hashes })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn genesis(&self) -> &Block {
        &self.blocks[0]
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("chain is never empty")
    }

    pub fn head_hash(&self) -> Hash32 {
        *self.hashes.last().expect("chain is never empty")
    }

    /// Height of the head block.
    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(usize::try_from(height).ok()?)
    }

    pub fn hash_at(&self, height: u64) -> Option<Hash32> {
        self.hashes.get(usize::try_from(height).ok()?).copied()
    }

    pub fn hashes(&self) -> &[Hash32] {
        &self.hashes
    }

    /// Appends without validation.
    pub fn push(&mut self, block: Block) {
        self.hashes.push(block.hash());
        self.blocks.push(block);
    }

    /// Keeps blocks `0..len` (at least genesis) and returns the removed tail.
    pub fn truncate(&mut self, len: usize) -> Vec<Block> {
        let len = len.max(1);
        self.hashes.truncate(len);
        if len >= self.blocks.len() {
            return Vec::new();
        }
        self.blocks.split_off(len)
    }

    /// Σ over non-genesis blocks of 2 (in-turn) or 1 (out-of-turn).
    pub fn weight(&self) -> u64 {
        self.blocks.iter().skip(1).map(Block::weight).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum InvalidReason {
    #[error("ledger bytes could not be decoded")]
    DecodeError,
    #[error("no genesis block")]
    MissingGenesis,
    #[error("genesis block does not match the genesis config")]
    GenesisMismatch,
    #[error("height is not parent height + 1")]
    BadHeight,
    #[error("parent hash does not match the previous block")]
    BrokenLink,
    #[error("tx_root does not match the transactions")]
    TxRootMismatch,
    #[error("sealer is not in the sealer set")]
    UnauthorizedSealer,
    #[error("seal signature does not verify")]
    BadSeal,
    #[error("in-turn flag does not match the sealer schedule")]
    InTurnMismatch,
    #[error("timestamp earlier than parent")]
    TimestampRegression,
    #[error("timestamp closer to parent than the block period")]
    TooSoon,
    #[error("transaction {index} rejected: {rejection}")]
    InvalidTransaction { index: usize, rejection: Rejection },
    #[error("state_root does not match post-state")]
    StateRootMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("chain invalid at height {first_bad_height}: {reason}")]
pub struct InvalidChain {
    pub first_bad_height: u64,
    pub reason: InvalidReason,
}

/// Header checks that need no parent state: tx root, sealer authorization,
/// seal signature and in-turn flag.
pub fn check_seal(block: &Block, schedule: &SealerSchedule) -> Result<(), InvalidReason> {
    let h = &block.header;
    if tx_root(&block.transactions) != h.tx_root {
        return Err(InvalidReason::TxRootMismatch);
    }
    let Some(key) = schedule.key_of(&h.sealer) else {
        return Err(InvalidReason::UnauthorizedSealer);
    };
    if !verify(&encode_header(h), &h.seal, key) {
        return Err(InvalidReason::BadSeal);
    }
    if h.height == 0 || h.in_turn != (schedule.in_turn_sealer(h.height) == h.sealer) {
        return Err(InvalidReason::InTurnMismatch);
    }
    Ok(())
}

/// Full validation of `block` on top of `parent`, returning the post-state.
pub fn check_block(
    parent: &Block,
    parent_hash: &Hash32,
    parent_state: &ChainState,
    block: &Block,
    schedule: &SealerSchedule,
) -> Result<ChainState, InvalidReason> {
    let h = &block.header;
    if h.height != parent.header.height + 1 {
        return Err(InvalidReason::BadHeight);
    }
    if h.parent_hash != *parent_hash {
        return Err(InvalidReason::BrokenLink);
    }
    check_seal(block, schedule)?;
    if h.timestamp < parent.header.timestamp {
        return Err(InvalidReason::TimestampRegression);
    }
    if h.timestamp < parent.header.timestamp + schedule.period() {
        return Err(InvalidReason::TooSoon);
    }
    let mut state = parent_state.clone();
    for (index, tx) in block.transactions.iter().enumerate() {
        state
            .apply(tx)
            .map_err(|rejection| InvalidReason::InvalidTransaction { index, rejection })?;
    }
    if state_root(&state) != h.state_root {
        return Err(InvalidReason::StateRootMismatch);
    }
    Ok(state)
}

/// Validates a block sequence from genesis, returning the final state.
pub fn validate_blocks(
    blocks: &[Block],
    genesis: &GenesisConfig,
) -> Result<ChainState, InvalidChain> {
    let bad = |height: usize, reason| InvalidChain {
        first_bad_height: height as u64,
        reason,
    };
    let Some(first) = blocks.first() else {
        return Err(bad(0, InvalidReason::MissingGenesis));
    };
    if *first != genesis.genesis_block() {
        return Err(bad(0, InvalidReason::GenesisMismatch));
    }
    let schedule = genesis.schedule();
    let mut state = genesis.genesis_state();
    let mut parent_hash = first.hash();
    for (i, pair) in blocks.windows(2).enumerate() {
        state = check_block(&pair[0], &parent_hash, &state, &pair[1], &schedule)
            .map_err(|reason| bad(i + 1, reason))?;
        parent_hash = pair[1].hash();
    }
    Ok(state)
}

pub fn validate_chain(chain: &Chain, genesis: &GenesisConfig) -> Result<(), InvalidChain> {
    validate_blocks(chain.blocks(), genesis).map(|_| ())
}

/// Decodes and validates raw ledger bytes.
pub fn validate_ledger_bytes(bytes: &[u8], genesis: &GenesisConfig) -> Result<Chain, InvalidChain> {
    match decode_ledger(bytes) {
        LoadOutcome::Complete(chain) => validate_chain(&chain, genesis).map(|_| chain),
        LoadOutcome::CorruptAt { prefix, .. } => Err(InvalidChain {
            first_bad_height: prefix.len() as u64,
            reason: InvalidReason::DecodeError,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadOutcome {
    Complete(Chain),
    /// Decoding stopped at byte `offset`; `prefix` holds the records before it.
    CorruptAt { offset: u64, prefix: Vec<Block> },
}

/// Appends one `len:u32 | block` record.
pub fn encode_record(block: &Block, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&[0; 4]);
    block.encode_into(out);
    let len = (out.len() - start - 4) as u32;
    out[start..start + 4].copy_from_slice(&len.to_be_bytes());
}

pub fn encode_ledger(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + blocks.len() * 256);
    out.extend_from_slice(LEDGER_MAGIC);
    for block in blocks {
        encode_record(block, &mut out);
    }
    out
}

pub fn decode_ledger(bytes: &[u8]) -> LoadOutcome {
    if bytes.len() < LEDGER_MAGIC.len() || &bytes[..4] != LEDGER_MAGIC {
        return LoadOutcome::CorruptAt {
            offset: 0,
            prefix: Vec::new(),
        };
    }
    let mut blocks = Vec::new();
    let mut offset = 4usize;
    while offset < bytes.len() {
        let record_start = offset;
        let rest = &bytes[offset..];
        let parsed = (|| {
            let mut r = Reader::new(rest);
            let len = r.len_prefix(MAX_BLOCK_LEN)?;
            let body = r.bytes(len)?;
            Ok::<_, DecodeError>((Block::decode(body)?, 4 + len))
        })();
        match parsed {
            Ok((block, used)) => {
                blocks.push(block);
                offset += used;
            }
            Err(_) => {
                return LoadOutcome::CorruptAt {
                    offset: record_start as u64,
                    prefix: blocks,
                }
            }
        }
    }
    match Chain::from_blocks(blocks) {
        Some(chain) => LoadOutcome::Complete(chain),
        None => LoadOutcome::CorruptAt {
            offset: 4,
            prefix: Vec::new(),
        },
    }
}

/// Atomically replaces `path` (write to a sibling temp file, then rename).
pub fn persist_chain(chain: &Chain, path: &Path) -> io::Result<()> {
    let bytes = encode_ledger(chain.blocks());
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Appends records to an existing ledger file and returns its new length.
pub fn append_blocks(path: &Path, blocks: &[Block]) -> io::Result<u64> {
    let mut bytes = Vec::new();
    for block in blocks {
        encode_record(block, &mut bytes);
    }
    let mut file = fs::OpenOptions::new().append(true).open(path)?;
    file.write_all(&bytes)?;
    file.sync_data()?;
    file.metadata().map(|m| m.len())
}

/// I/O errors (including a missing file) are returned as `Err`; corruption
/// is an `Ok(CorruptAt)`.
pub fn load_chain(path: &Path) -> io::Result<LoadOutcome> {
    Ok(decode_ledger(&fs::read(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForkChoice {
    Local,
    Candidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("chains have different genesis blocks")]
pub struct IncompatibleGenesis;

/// Ordering key: weight, then height, then the smaller head hash.
fn preference(chain: &Chain) -> (u64, u64, std::cmp::Reverse<Hash32>) {
    (
        chain.weight(),
        chain.height(),
        std::cmp::Reverse(chain.head_hash()),
    )
}

/// `Ordering::Greater` when `a` is preferred over `b`.
pub fn compare_chains(a: &Chain, b: &Chain) -> Ordering {
    preference(a).cmp(&preference(b))
}

/// Keeps `local` unless `candidate` is strictly preferred.
pub fn fork_choice(local: &Chain, candidate: &Chain) -> Result<ForkChoice, IncompatibleGenesis> {
    if local.hashes[0] != candidate.hashes[0] {
        return Err(IncompatibleGenesis);
    }
    Ok(match compare_chains(candidate, local) {
        Ordering::Greater => ForkChoice::Candidate,
        _ => ForkChoice::Local,
    })
}
