#![no_main]

use hetsim::graph::Graph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(g) = Graph::from_json(data) {
        let text = g.to_json();
        let back = Graph::from_json(&text).expect("re-parse");
        assert_eq!(back.to_json(), text);
    }
});
