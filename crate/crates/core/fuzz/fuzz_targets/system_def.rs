#![no_main]

use libfuzzer_sys::fuzz_target;
use selftrig::config::{build_inline, InlineSystem};

fuzz_target!(|data: &[u8]| {
    if let Ok(def) = serde_json::from_slice::<InlineSystem>(data) {
        if def.n <= 4 {
            let _ = build_inline(&def, 0.3);
        }
    }
});
