#![no_main]

use hetsim::cost::CostParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(p) = CostParams::from_json(data) {
        assert_eq!(CostParams::from_json(&p.to_json()).unwrap(), p);
    }
});
