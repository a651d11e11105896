#![no_main]
use blockfw_core::genesis::GenesisConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = GenesisConfig::from_toml_str(text) {
        let again = GenesisConfig::from_toml_str(&g.to_toml_string()).unwrap();
        assert_eq!(again.config_hash(), g.config_hash());
    }
});
