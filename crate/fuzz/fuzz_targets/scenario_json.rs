#![no_main]

use hetsim::scenario::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(cfg) = ScenarioConfig::from_json(data) else { return };
    let _ = cfg.check_fields();
    let _ = cfg.workload();
    let back = ScenarioConfig::from_json(&cfg.to_json()).expect("re-parse");
    assert_eq!(back.to_json(), cfg.to_json());
});
