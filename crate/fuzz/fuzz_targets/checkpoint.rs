#![no_main]

use libfuzzer_sys::fuzz_target;
use snv_core::network::DenseNet;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(net) = DenseNet::from_json(text) {
            let json = net.to_json().expect("serialize");
            let again = DenseNet::from_json(&json).expect("re-parse");
            assert_eq!(net.to_checkpoint(), again.to_checkpoint());
        }
    }
});
