#![no_main]

use std::io::Cursor;
use std::path::Path;

use libfuzzer_sys::fuzz_target;
use topics_core::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let _ = PipelineConfig::from_reader(Cursor::new(data), Path::new("fuzz.conf"));
});
