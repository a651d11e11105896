#![no_main]
use blockfw_core::codec::Reader;
use blockfw_core::rulestate::{state_root, ChainState};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = ChainState::decode_from(&mut Reader::new(data)) {
        let mut buf = Vec::new();
        state.encode_into(&mut buf);
        let again = ChainState::decode_from(&mut Reader::new(&buf)).unwrap();
        assert_eq!(state_root(&again), state_root(&state));
    }
});
