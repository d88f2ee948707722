#![no_main]

use std::io::Cursor;
use std::path::Path;

use libfuzzer_sys::fuzz_target;
use topics_core::report::read_report_from;

fuzz_target!(|data: &[u8]| {
    let _ = read_report_from(Cursor::new(data), Path::new("fuzz.tsv"));
});
