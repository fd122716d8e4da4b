#![no_main]

use libfuzzer_sys::fuzz_target;
use snv_cli::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Some((&kind, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let parsed = if kind % 2 == 0 {
        ExperimentConfig::from_toml(text)
    } else {
        ExperimentConfig::from_json(text)
    };
    if let Ok(cfg) = parsed {
        let _ = cfg.validate();
    }
});
