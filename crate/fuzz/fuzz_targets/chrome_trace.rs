#![no_main]

use hetsim::trace::{parse_chrome_trace, validate_trace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_chrome_trace(text) {
        let _ = validate_trace(&t);
        let _ = t.total_duration_us();
    }
});
