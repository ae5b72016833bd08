#![no_main]

use libfuzzer_sys::fuzz_target;
use oddm::cli::parse_args;

// NUL-separated argument list.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let args = std::iter::once("oddm").chain(text.split('\0'));
    let _ = parse_args(args);
});
