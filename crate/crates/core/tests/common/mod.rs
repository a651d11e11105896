#![allow(dead_code)]

pub mod oracle;

use std::net::Ipv4Addr;

use blockfw_core::fixtures::{keypair, TestNet};
use blockfw_core::identity::KeyPair;
use blockfw_core::ledger::{decode_ledger, validate_chain, Chain, LoadOutcome};
use blockfw_core::rulestate::{
    apply_transaction, ChainState, FirewallRule, Ipv4Prefix, Protocol, SourceSpec, Transaction,
    TxKind,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Keys that may become administrators in generated chains.
pub const ADMIN_POOL: [u8; 4] = [0x11, 0x12, 0x13, 0x14];

pub fn random_rule(rng: &mut impl Rng) -> FirewallRule {
    let proto = *[Protocol::Tcp, Protocol::Udp, Protocol::Any].choose(rng).unwrap();
    let rule = FirewallRule::deny(proto, rng.gen_range(1..=1024));
    if rng.gen_bool(0.3) {
        let len = rng.gen_range(8..=32);
        let addr = Ipv4Addr::from(rng.gen::<u32>());
        rule.from_source(SourceSpec::Prefix(Ipv4Prefix::new(addr, len).unwrap()))
    } else {
        rule
    }
}

pub struct GeneratedChain {
    pub net: TestNet,
    pub chain: Chain,
    pub txs: Vec<Transaction>,
}

/// A random valid chain of at most `max_txs` admin transactions spread over
/// up to `max_blocks` blocks, sealed by a mix of in-turn and out-of-turn
/// sealers.
pub fn random_chain(seed: u64, max_txs: usize, max_blocks: u64) -> GeneratedChain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = TestNet::new(3);
    let pool: Vec<KeyPair> = ADMIN_POOL.iter().map(|&s| keypair(s)).collect();
    let n_txs = rng.gen_range(0..=max_txs);
    let n_blocks = rng.gen_range(1..=max_blocks);

    let mut state = net.genesis.genesis_state();
    let mut txs = Vec::new();
    for _ in 0..n_txs {
        let tx = random_admin_tx(&mut rng, &state, &pool);
        state = apply_transaction(&state, &tx).expect("generated tx applies");
        txs.push(tx);
    }

    let mut chain = Chain::new(net.genesis.genesis_block());
    let mut rest = txs.as_slice();
    for h in 1..=n_blocks {
        let take = if h == n_blocks {
            rest.len()
        } else {
            rng.gen_range(0..=rest.len().min(8))
        };
        let (now, later) = rest.split_at(take);
        rest = later;
        let key = if rng.gen_bool(0.8) {
            net.in_turn_key(h)
        } else {
            net.sealers[rng.gen_range(0..3)].clone()
        };
        let gap = net.genesis.period + rng.gen_range(0..3);
        let block = net.seal_with(&chain, &key, now.to_vec(), gap);
        chain.push(block);
    }
    GeneratedChain { net, chain, txs }
}

pub fn random_admin_tx(rng: &mut impl Rng, state: &ChainState, pool: &[KeyPair]) -> Transaction {
    let admins: Vec<&KeyPair> = pool.iter().filter(|k| state.is_admin(&k.address())).collect();
    let signer = *admins.choose(rng).expect("state always has an admin from the pool");
    let nonce = state.next_nonce(&signer.address());
    let roll = rng.gen_range(0..100);
    let kind = if roll < 15 && !state.rules().is_empty() {
        TxKind::RemoveRule(state.rules().choose(rng).unwrap().id())
    } else if roll < 25 {
        TxKind::AddAdmin(pool.choose(rng).unwrap().address())
    } else if roll < 32 && state.admins().len() > 1 {
        let target = admins.choose(rng).unwrap().address();
        TxKind::RemoveAdmin(target)
    } else if roll < 38 && !state.rules().is_empty() {
        // Re-adding an existing rule is accepted and changes nothing.
        TxKind::AddRule(*state.rules().choose(rng).unwrap())
    } else {
        TxKind::AddRule(random_rule(rng))
    };
    Transaction::signed(kind, nonce, signer)
}

/// Three sealers with client-2 stopped from the start; blocks fall back to
/// out-of-turn sealing for its slots.
pub const LIVENESS_TOML: &str = r#"
name = "liveness"
seed = 7
duration_s = 60

[chain]
period = 1
wiggle = 2
keepalive = 1

[[nodes]]
name = "client-1"
role = "client"
sealer = true
key_seed = 0x21

[[nodes]]
name = "client-2"
role = "client"
sealer = true
key_seed = 0x22

[[nodes]]
name = "client-3"
role = "client"
sealer = true
key_seed = 0x23

[[nodes]]
name = "admin"
role = "admin"
key_seed = 0x11

[[actions]]
at = 0.0
do = "stop"
node = "client-2"

[[actions]]
at = 5.0
do = "submit"
node = "admin"
tx = "block tcp 22"

[[assertions]]
check = "heads_converged"

[[assertions]]
check = "authorized_sealers"

[[assertions]]
check = "no_rollback"
"#;

/// Byte offset at which each block's record starts.
pub fn record_offsets(chain: &Chain) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut at = 4;
    for b in chain.blocks() {
        offsets.push(at);
        at += 4 + b.encode().len();
    }
    offsets
}

/// Flips `bit` and reports whether the damage went unnoticed.
pub fn mutation_accepted(chain: &Chain, net: &TestNet, bytes: &[u8], bit: usize) -> Option<String> {
    let mut bad = bytes.to_vec();
    bad[bit / 8] ^= 1 << (bit % 8);
    let offsets = record_offsets(chain);
    let block_height = offsets.iter().rposition(|&o| o <= bit / 8).unwrap_or(0) as u64;
    match decode_ledger(&bad) {
        LoadOutcome::CorruptAt { .. } => None,
        LoadOutcome::Complete(c) => match validate_chain(&c, &net.genesis) {
            Err(e) if e.first_bad_height <= block_height => None,
            Err(e) => Some(format!(
                "bit {bit}: flagged at {} but block {block_height} was mutated",
                e.first_bad_height
            )),
            Ok(()) => Some(format!("bit {bit} in block {block_height} accepted")),
        },
    }
}
