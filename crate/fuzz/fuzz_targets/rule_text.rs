#![no_main]
use blockfw_core::commander::{parse_script_line, script_line};
use blockfw_core::harness::TxTemplate;
use blockfw_core::rulestate::FirewallRule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rule) = text.parse::<FirewallRule>() {
        assert_eq!(rule.to_string().parse::<FirewallRule>().unwrap(), rule);
        assert_eq!(FirewallRule::decode(&rule.encode()).unwrap(), rule);
    }
    if let Some((_, rule)) = parse_script_line(text) {
        assert_eq!(parse_script_line(&script_line(&rule)), Some((false, rule)));
    }
    let _ = TxTemplate::parse(text);
});
