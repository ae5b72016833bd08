#![no_main]

use libfuzzer_sys::fuzz_target;
use oddm::grid_modem::ModemParams;
use oddm::pilot::EstimatedChannel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let p = ModemParams::new(8, 4, 1e-4, 2).unwrap();
    if let Ok(est) = EstimatedChannel::from_text(p, text, 0.01) {
        let back = EstimatedChannel::from_text(p, &est.to_text(), 0.01).unwrap();
        assert_eq!(back.taps(), est.taps());
    }
});
