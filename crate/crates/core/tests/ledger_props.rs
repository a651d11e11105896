mod common;

use std::cmp::Ordering;

use blockfw_core::fixtures::TestNet;
use blockfw_core::ledger::{
    compare_chains, decode_ledger, encode_ledger, fork_choice, load_chain, persist_chain,
    validate_chain, Chain, ForkChoice, LoadOutcome,
};
use common::{mutation_accepted, random_chain, record_offsets};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn single_bit_mutation_is_always_flagged(seed in any::<u64>(), pick in any::<u64>()) {
        let g = random_chain(seed, 20, 10);
        validate_chain(&g.chain, &g.net.genesis).unwrap();
        let bytes = encode_ledger(g.chain.blocks());
        let mut rng = ChaCha8Rng::seed_from_u64(pick);
        for _ in 0..8 {
            let bit = rng.gen_range(0..bytes.len() * 8);
            if let Some(msg) = mutation_accepted(&g.chain, &g.net, &bytes, bit) {
                prop_assert!(false, "{}", msg);
            }
        }
    }

    #[test]
    fn persist_then_load_is_identity(seed in any::<u64>()) {
        let g = random_chain(seed, 50, 20);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bfw");
        persist_chain(&g.chain, &path).unwrap();
        prop_assert_eq!(load_chain(&path).unwrap(), LoadOutcome::Complete(g.chain.clone()));
        prop_assert_eq!(std::fs::read(&path).unwrap(), encode_ledger(g.chain.blocks()));
    }

    #[test]
    fn truncation_keeps_a_valid_prefix(seed in any::<u64>(), cut in any::<proptest::sample::Index>()) {
        let g = random_chain(seed, 20, 10);
        let bytes = encode_ledger(g.chain.blocks());
        let at = cut.index(bytes.len());
        match decode_ledger(&bytes[..at]) {
            LoadOutcome::CorruptAt { prefix, .. } => {
                prop_assert!(prefix.len() <= g.chain.len());
                prop_assert_eq!(&prefix[..], &g.chain.blocks()[..prefix.len()]);
            }
            LoadOutcome::Complete(c) => {
                // Only a cut on a record boundary decodes cleanly.
                prop_assert!(record_offsets(&g.chain).contains(&at) || at == bytes.len());
                prop_assert_eq!(c.blocks(), &g.chain.blocks()[..c.len()]);
            }
        }
    }
}

#[test]
fn every_bit_of_a_small_ledger() {
    for seed in 0..3 {
        let g = random_chain(seed, 4, 3);
        let bytes = encode_ledger(g.chain.blocks());
        for bit in 0..bytes.len() * 8 {
            assert_eq!(mutation_accepted(&g.chain, &g.net, &bytes, bit), None);
        }
    }
}

/// Three branches off a shared random base, sealed by a mix of sealers.
fn forked_triple(seed: u64) -> (TestNet, Vec<Chain>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = TestNet::new(3);
    let base = net.build_chain(rng.gen_range(0..4), &[]);
    let chains = (0..3)
        .map(|_| {
            let mut c = base.clone();
            let fork_at = rng.gen_range(0..=base.height()) as usize;
            c.truncate(fork_at + 1);
            for _ in 0..rng.gen_range(0..5) {
                let key = net.sealers[rng.gen_range(0..3)].clone();
                let gap = net.genesis.period + rng.gen_range(0..3);
                let b = net.seal_with(&c, &key, Vec::new(), gap);
                c.push(b);
            }
            c
        })
        .collect();
    (net, chains)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fork_choice_is_a_total_order(seed in any::<u64>()) {
        let (net, chains) = forked_triple(seed);
        for c in &chains {
            validate_chain(c, &net.genesis).unwrap();
        }
        for a in &chains {
            for b in &chains {
                let ab = compare_chains(a, b);
                prop_assert_eq!(ab, compare_chains(b, a).reverse());
                prop_assert_eq!(ab == Ordering::Equal, a.head_hash() == b.head_hash());
                let pick = fork_choice(a, b).unwrap();
                prop_assert_eq!(pick == ForkChoice::Candidate, ab == Ordering::Less);
                for c in &chains {
                    if ab != Ordering::Less && compare_chains(b, c) != Ordering::Less {
                        prop_assert_ne!(compare_chains(a, c), Ordering::Less);
                    }
                }
            }
        }
    }
}

#[test]
fn fork_choice_rejects_foreign_genesis() {
    let a = TestNet::new(3).build_chain(2, &[]);
    let b = TestNet::with_chain_id(3, "other").build_chain(2, &[]);
    assert!(fork_choice(&a, &b).is_err());
}
