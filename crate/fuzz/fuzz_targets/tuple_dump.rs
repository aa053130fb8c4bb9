#![no_main]

use cliquemr::mr::{read_tuple_dump, write_tuple_dump};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tuples) = read_tuple_dump(text) {
        let canonical = write_tuple_dump(&tuples);
        let back = read_tuple_dump(&canonical).expect("canonical form parses");
        assert_eq!(back, tuples);
    }
});
