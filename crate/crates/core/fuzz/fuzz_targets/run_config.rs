#![no_main]

use libfuzzer_sys::fuzz_target;
use selftrig::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(text) {
            let again = RunConfig::from_json(&cfg.canonical_json()).expect("canonical config re-parses");
            assert_eq!(cfg, again);
        }
    }
});
