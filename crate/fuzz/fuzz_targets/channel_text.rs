#![no_main]

use libfuzzer_sys::fuzz_target;
use oddm::channel::{parse_paths, paths_to_text, DiscreteChannel};
use oddm::grid_modem::ModemParams;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(paths) = parse_paths(text) {
        assert_eq!(parse_paths(&paths_to_text(&paths)).unwrap(), paths);
    }
    let p = ModemParams::new(8, 4, 1e-4, 2).unwrap();
    if let Ok(ch) = DiscreteChannel::from_text(p, text) {
        let back = DiscreteChannel::from_text(p, &ch.to_text()).unwrap();
        assert_eq!(back.paths(), ch.paths());
    }
});
