#![no_main]

use libfuzzer_sys::fuzz_target;
use snv_core::game::TableGame;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(game) = TableGame::parse(text) {
        let again = TableGame::parse(&game.to_table_string()).expect("re-parse");
        assert_eq!(game.values().len(), again.values().len());
        for (a, b) in game.values().iter().zip(again.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
});
