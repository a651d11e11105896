#![no_main]
use blockfw_core::ledger::Block;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(block) = Block::decode(data) {
        assert_eq!(Block::decode(&block.encode()).unwrap(), block);
    }
});
