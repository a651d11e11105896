//! The checked-in fuzz seeds must stay valid inputs as formats evolve.

use std::fs;
use std::path::PathBuf;

use blockfw_core::codec::Reader;
use blockfw_core::genesis::GenesisConfig;
use blockfw_core::harness::{MetricsReport, Scenario};
use blockfw_core::identity::parse_key_file;
use blockfw_core::ledger::{decode_ledger, Block, LoadOutcome};
use blockfw_core::netsim::Message;
use blockfw_core::rulestate::{ChainState, Transaction};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn binary_seeds_decode() {
    for (n, b) in seeds("tx_decode") {
        Transaction::decode(&b).unwrap_or_else(|e| panic!("{n}: {e}"));
    }
    for (n, b) in seeds("block_decode") {
        Block::decode(&b).unwrap_or_else(|e| panic!("{n}: {e}"));
    }
    for (n, b) in seeds("ledger_decode") {
        if n != "magic" {
            assert!(matches!(decode_ledger(&b), LoadOutcome::Complete(_)), "{n}");
        }
    }
    for (n, b) in seeds("message_decode") {
        if n != "frames" {
            Message::decode(&b).unwrap_or_else(|e| panic!("{n}: {e}"));
        }
    }
    for (n, b) in seeds("chain_state_decode") {
        ChainState::decode_from(&mut Reader::new(&b)).unwrap_or_else(|e| panic!("{n}: {e}"));
    }
}

#[test]
fn text_seeds_parse() {
    for (_, b) in seeds("genesis_toml") {
        GenesisConfig::from_toml_str(text(&b)).unwrap();
    }
    for (_, b) in seeds("scenario_toml") {
        Scenario::from_toml_str(text(&b)).unwrap();
    }
    for (_, b) in seeds("key_file") {
        parse_key_file(text(&b)).unwrap();
    }
    for (_, b) in seeds("metrics_csv") {
        MetricsReport::from_csv(text(&b)).unwrap();
    }
    assert!(seeds("rule_text").len() >= 8);
}
