#![no_main]

use libfuzzer_sys::fuzz_target;
use shs_sentinel::identifier::{decode_bank, encode_bank};

fuzz_target!(|data: &[u8]| {
    let Ok((key, bank)) = decode_bank(data) else {
        return;
    };
    let once = encode_bank(&bank, &key);
    let (key2, bank2) = decode_bank(&once).expect("encoded bank decodes");
    assert_eq!(encode_bank(&bank2, &key2), once);
});
