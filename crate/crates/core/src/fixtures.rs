//! Deterministic keys and chain builders shared by tests, benches and fuzz
//! seed generation.

use crate::consensus::{seal_block, SealerSchedule};
use crate::genesis::GenesisConfig;
use crate::identity::{generate_keypair, KeyPair};
use crate::ledger::{Block, Chain};
use crate::rulestate::{apply_transaction, ChainState, FirewallRule, Protocol, Transaction, TxKind};

pub const ADMIN_SEED: u8 = 0x11;
pub const FIRST_SEALER_SEED: u8 = 0x21;
pub const ATTACKER_SEED: u8 = 0x66;
pub const GENESIS_TIMESTAMP: u64 = 1_600_000_000;

pub fn keypair(seed: u8) -> KeyPair {
    generate_keypair(&[seed; 32]).expect("32-byte seed")
}

/// A genesis with `n` sealers (seeds 0x21, 0x22, ...) and one admin.
#[derive(Debug, Clone)]
pub struct TestNet {
    pub genesis: GenesisConfig,
    pub sealers: Vec<KeyPair>,
    pub admin: KeyPair,
}

impl TestNet {
    pub fn new(n_sealers: usize) -> Self {
        Self::with_chain_id(n_sealers, "blockfw-test")
    }

    pub fn with_chain_id(n_sealers: usize, chain_id: &str) -> Self {
        let sealers: Vec<KeyPair> = (0..n_sealers)
            .map(|i| keypair(FIRST_SEALER_SEED + i as u8))
            .collect();
        let admin = keypair(ADMIN_SEED);
        let mut genesis = GenesisConfig::new(
            chain_id,
            sealers.iter().map(KeyPair::public_key).collect(),
            vec![admin.address()],
        );
        genesis.timestamp = GENESIS_TIMESTAMP;
        Self {
            genesis,
            sealers,
            admin,
        }
    }

    pub fn schedule(&self) -> SealerSchedule {
        self.genesis.schedule()
    }

    pub fn in_turn_key(&self, height: u64) -> KeyPair {
        self.sealers[(height % self.sealers.len() as u64) as usize].clone()
    }

    /// An admin transaction denying tcp `port`.
    pub fn deny_tx(&self, port: u16, nonce: u64) -> Transaction {
        Transaction::signed(
            TxKind::AddRule(FirewallRule::deny(Protocol::Tcp, port)),
            nonce,
            &self.admin,
        )
    }

    fn state_of(&self, chain: &Chain) -> ChainState {
        let mut state = self.genesis.genesis_state();
        for block in &chain.blocks()[1..] {
            for tx in &block.transactions {
                state = apply_transaction(&state, tx).expect("fixture chain is valid");
            }
        }
        state
    }

    /// `n_blocks` in-turn blocks one period apart. Each height listed in
    /// `tx_heights` carries one admin deny for port `1000 + height`.
    pub fn build_chain(&self, n_blocks: u64, tx_heights: &[u64]) -> Chain {
        let mut chain = Chain::new(self.genesis.genesis_block());
        let mut nonce = 0;
        for h in 1..=n_blocks {
            let txs = if tx_heights.contains(&h) {
                nonce += 1;
                vec![self.deny_tx(1000 + h as u16, nonce - 1)]
            } else {
                Vec::new()
            };
            let block = self.seal_with(&chain, &self.in_turn_key(h), txs, self.genesis.period);
            chain.push(block);
        }
        chain
    }

    /// Seals the next block with `key`, timestamped `ts_offset` seconds after
    /// the head. Transactions must apply cleanly.
    pub fn seal_with(
        &self,
        chain: &Chain,
        key: &KeyPair,
        txs: Vec<Transaction>,
        ts_offset: u64,
    ) -> Block {
        let mut post = self.state_of(chain);
        for tx in &txs {
            post = apply_transaction(&post, tx).expect("fixture transaction applies");
        }
        self.seal_raw(chain, key, txs, &post, ts_offset)
    }

    /// Like [`seal_with`](Self::seal_with) with the in-turn key, but keeps the
    /// parent state root so transactions are not checked.
    pub fn seal_unchecked(&self, chain: &Chain, txs: Vec<Transaction>, ts_offset: u64) -> Block {
        let post = self.state_of(chain);
        let key = self.in_turn_key(chain.height() + 1);
        self.seal_raw(chain, &key, txs, &post, ts_offset)
    }

    /// Seals with the sealer right after the in-turn one.
    pub fn seal_out_of_turn(&self, chain: &Chain, txs: Vec<Transaction>, ts_offset: u64) -> Block {
        assert!(self.sealers.len() > 1, "needs at least two sealers");
        let key = self.in_turn_key(chain.height() + 2);
        self.seal_with(chain, &key, txs, ts_offset)
    }

    fn seal_raw(
        &self,
        chain: &Chain,
        key: &KeyPair,
        txs: Vec<Transaction>,
        post: &ChainState,
        ts_offset: u64,
    ) -> Block {
        let head = chain.head();
        seal_block(
            head,
            chain.head_hash(),
            txs,
            post,
            head.header.timestamp + ts_offset,
            key,
            &self.schedule(),
        )
    }
}
