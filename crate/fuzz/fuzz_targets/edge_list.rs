#![no_main]

use cliquemr::graph::Graph;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // bound the accepted node count so the fuzzer cannot allocate wildly
    if let Ok(g) = Graph::read_edge_list(text) {
        if g.n() <= 1 << 16 {
            // accepted input must round-trip through the canonical form
            let canonical = g.write_edge_list();
            let back = Graph::read_edge_list(&canonical).expect("canonical form parses");
            assert_eq!(back, g);
            assert_eq!(back.write_edge_list(), canonical);
        }
    }
});
