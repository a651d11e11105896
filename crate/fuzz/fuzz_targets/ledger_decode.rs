#![no_main]
use blockfw_core::ledger::{decode_ledger, encode_ledger, LoadOutcome};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Whatever decodes must re-encode to a prefix of the input.
    let blocks = match decode_ledger(data) {
        LoadOutcome::Complete(chain) => chain.blocks().to_vec(),
        LoadOutcome::CorruptAt { prefix, .. } => prefix,
    };
    if !blocks.is_empty() {
        let bytes = encode_ledger(&blocks);
        assert_eq!(&data[..bytes.len()], &bytes[..]);
    }
});
