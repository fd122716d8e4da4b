#![no_main]

use libfuzzer_sys::fuzz_target;
use snv_core::tasks::parse_samples_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_samples_csv(text);
    }
});
