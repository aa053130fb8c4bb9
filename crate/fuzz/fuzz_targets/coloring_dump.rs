#![no_main]

use cliquemr::coloring::Coloring;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(coloring) = Coloring::read_dump(text) {
        let canonical = coloring.write_dump();
        let back = Coloring::read_dump(&canonical).expect("canonical form parses");
        assert_eq!(back, coloring);
    }
});
