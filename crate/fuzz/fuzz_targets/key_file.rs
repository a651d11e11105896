#![no_main]
use blockfw_core::identity::{encode_key_file, parse_key_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(key) = parse_key_file(text) {
        let again = parse_key_file(&encode_key_file(&key)).unwrap();
        assert_eq!(again.address(), key.address());
    }
});
