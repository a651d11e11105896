//! Frozen values. The Ed25519 vectors are from RFC 8032; the rest were
//! computed by a separate implementation of the byte layouts and pinned.

use blockfw_core::codec::sha256;
use blockfw_core::fixtures::{keypair, TestNet, ADMIN_SEED};
use blockfw_core::identity::{generate_keypair, verify, PublicKey, Signature};
use blockfw_core::ledger::encode_header;
use blockfw_core::rulestate::{state_root, FirewallRule, Protocol, Transaction, TxKind};

fn unhex<const N: usize>(s: &str) -> [u8; N] {
    hex::decode(s).unwrap().try_into().unwrap()
}

#[test]
fn rfc8032_test_1() {
    let seed: [u8; 32] = unhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60");
    let key = generate_keypair(&seed).unwrap();
    assert_eq!(
        key.public_key().0,
        unhex::<32>("d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a")
    );
    let sig = key.sign(b"");
    assert_eq!(
        sig.0,
        unhex::<64>(
            "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
        )
    );
}

#[test]
fn rfc8032_test_2() {
    let pk = PublicKey(unhex("3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c"));
    let sig = Signature(unhex(
        "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
    ));
    assert!(verify(&[0x72], &sig, &pk));
    assert!(!verify(&[0x73], &sig, &pk));
}

#[test]
fn sha256_abc() {
    assert_eq!(
        sha256(b"abc").to_hex(),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn pinned_identities() {
    assert_eq!(keypair(ADMIN_SEED).address().to_hex(), GOLDEN_ADMIN_ADDRESS);
    let rule = FirewallRule::deny(Protocol::Tcp, 22);
    assert_eq!(rule.encode(), [0, 0, 1, 0, 22, 0, 0, 0, 0, 0, 0]);
    assert_eq!(rule.id().to_string(), sha256(&rule.encode()).to_hex());
    assert_eq!(rule.id().to_string(), GOLDEN_RULE_ID_TCP22);
}

#[test]
fn pinned_chain_values() {
    let net = TestNet::new(3);
    assert_eq!(net.genesis.genesis_block().hash().to_hex(), GOLDEN_GENESIS_HASH);
    assert_eq!(state_root(&net.genesis.genesis_state()).to_hex(), GOLDEN_GENESIS_STATE_ROOT);
    let tx = Transaction::signed(TxKind::AddRule(FirewallRule::deny(Protocol::Tcp, 22)), 0, &net.admin);
    assert_eq!(tx.hash().to_hex(), GOLDEN_TX_HASH);
    let chain = net.build_chain(3, &[2]);
    assert_eq!(chain.head_hash().to_hex(), GOLDEN_CHAIN3_HEAD);
    let header = encode_header(&chain.head().header);
    assert_eq!(header.len(), 8 + 32 + 32 + 32 + 8 + 20 + 1);
    assert_eq!(&header[..8], &3u64.to_be_bytes());
}

const GOLDEN_ADMIN_ADDRESS: &str = "881aab8bd702bb807796eca81932c735a94d6e6d";
const GOLDEN_RULE_ID_TCP22: &str = "23b790c71096c34aa915f76666f813312965f247dc5a253b55ec8de925dada32";
const GOLDEN_GENESIS_HASH: &str = "239012ebb6436c360506e89af2e189102a0aba6c2f452669de2035326bcb53ae";
const GOLDEN_GENESIS_STATE_ROOT: &str = "267b8c9d2348d5b1965ba70f70a64e2daa7c70f3fecace7d5bcba62207ae26ec";
const GOLDEN_TX_HASH: &str = "dc12ee33aadf4b5f99ef671906f53fbb817646bb0ca66a61303ff9d3679f7895";
const GOLDEN_CHAIN3_HEAD: &str = "44a18fea763097117a35c714e71e411dab6bd8f07f478c98dfbcb863d01d4274";
