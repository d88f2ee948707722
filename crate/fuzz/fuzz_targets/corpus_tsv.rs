#![no_main]

use std::io::Cursor;
use std::path::Path;

use libfuzzer_sys::fuzz_target;
use topics_core::ingest::{read_corpus_from, CorpusFormat};

fuzz_target!(|data: &[u8]| {
    let _ = read_corpus_from(Cursor::new(data), CorpusFormat::Tsv, Path::new("fuzz.tsv"));
});
