#![no_main]

use libfuzzer_sys::fuzz_target;
use snv_core::metrics::{masks_to_csv, parse_masks_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(masks) = parse_masks_csv(text) {
        assert_eq!(parse_masks_csv(&masks_to_csv(&masks)).expect("re-parse"), masks);
    }
});
