#![no_main]

use std::io::Cursor;
use std::path::Path;

use libfuzzer_sys::fuzz_target;
use topics_core::vocab::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let _ = Vocabulary::load_from(Cursor::new(data), Path::new("fuzz.tsv"));
});
