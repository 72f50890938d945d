#![no_main]

use libfuzzer_sys::fuzz_target;
use shs_sentinel::grid_model::GridNetwork;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = GridNetwork::parse(text);
    }
});
