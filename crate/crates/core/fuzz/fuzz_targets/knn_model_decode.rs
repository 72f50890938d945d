#![no_main]

use libfuzzer_sys::fuzz_target;
use shs_sentinel::classifier::KnnModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = KnnModel::from_text(text) else {
        return;
    };
    let once = model.to_text();
    let again = KnnModel::from_text(&once).expect("written model reparses");
    assert_eq!(again.to_text(), once);
});
