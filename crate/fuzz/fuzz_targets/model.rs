#![no_main]

use std::io::Cursor;
use std::path::Path;

use libfuzzer_sys::fuzz_target;
use topics_core::trainer::EmbeddingModel;

fuzz_target!(|data: &[u8]| {
    let _ = EmbeddingModel::load_from(Cursor::new(data), Path::new("fuzz.txt"));
});
