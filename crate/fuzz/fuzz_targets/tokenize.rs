#![no_main]

use libfuzzer_sys::fuzz_target;
use topics_core::tokenize::tokenize_post;

// Besides not panicking, the tokenizer promises whitespace-free non-empty
// surfaces and idempotence over its own output.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let tokens = tokenize_post(text);
        for t in &tokens {
            assert!(!t.surface.is_empty());
            assert!(!t.surface.chars().any(char::is_whitespace));
        }
        let joined = tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
        assert_eq!(tokenize_post(&joined), tokens);
    }
});
