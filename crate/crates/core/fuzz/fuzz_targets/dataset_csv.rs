#![no_main]

use libfuzzer_sys::fuzz_target;
use shs_sentinel::features::LabeledDataset;

fuzz_target!(|data: &[u8]| {
    let Ok(ds) = LabeledDataset::read_csv(data) else {
        return;
    };
    let mut once = Vec::new();
    ds.write_csv(&mut once).expect("write to memory");
    let again = LabeledDataset::read_csv(once.as_slice()).expect("written dataset reparses");
    let mut twice = Vec::new();
    again.write_csv(&mut twice).expect("write to memory");
    assert_eq!(once, twice);
});
