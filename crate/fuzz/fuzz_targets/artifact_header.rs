#![no_main]

use libfuzzer_sys::fuzz_target;
use topics_core::artifact::ArtifactHeader;

// A parsed header must survive a serialize and re-parse round trip.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let line = text.lines().next().unwrap_or("");
        if let Some(Ok(header)) = ArtifactHeader::parse(line) {
            let again = ArtifactHeader::parse(&header.line());
            assert_eq!(Some(Ok(header)), again);
        }
    }
});
