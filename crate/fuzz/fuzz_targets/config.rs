#![no_main]

use libfuzzer_sys::fuzz_target;
use oddm::sim::SimConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = SimConfig::from_text(text) {
        cfg.validate().unwrap();
    }
});
