#![no_main]
use blockfw_core::rulestate::Transaction;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tx) = Transaction::decode(data) {
        assert_eq!(Transaction::decode(&tx.encode()).unwrap(), tx);
        let _ = tx.verify_signature();
    }
});
