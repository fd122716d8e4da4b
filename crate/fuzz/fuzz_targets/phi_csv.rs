#![no_main]

use libfuzzer_sys::fuzz_target;
use snv_core::valuation::parse_phi_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Errors are fine, panics are not.
        let _ = parse_phi_csv(text);
    }
});
