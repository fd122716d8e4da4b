#![no_main]

use libfuzzer_sys::fuzz_target;
use snv_core::metrics::AccuracyMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(r) = AccuracyMatrix::from_csv(text) {
        let again = AccuracyMatrix::from_csv(&r.to_csv()).expect("re-parse");
        assert_eq!(r.to_csv(), again.to_csv());
    }
});
