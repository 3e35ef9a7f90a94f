#![no_main]

use hetsim::mapping::MappingTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(m) = MappingTable::from_json(data) {
        assert_eq!(MappingTable::from_json(&m.to_json()).unwrap(), m);
    }
});
