#![no_main]

use hetsim::calibration::{fit_params, parse_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    // anything that parses must also fit without panicking
    if let Ok(table) = parse_table(data) {
        let _ = fit_params(&table);
    }
});
