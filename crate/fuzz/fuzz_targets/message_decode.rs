#![no_main]
use blockfw_core::netsim::message::read_frame;
use blockfw_core::netsim::Message;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = Message::decode(data) {
        assert_eq!(Message::decode(&msg.encode()).unwrap(), msg);
    }
    let mut r = data;
    while let Ok(Some(_)) = read_frame(&mut r) {}
});
