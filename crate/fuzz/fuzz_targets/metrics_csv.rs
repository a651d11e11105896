#![no_main]
use blockfw_core::harness::MetricsReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = MetricsReport::from_csv(text) {
        let _ = report.to_csv();
    }
});
