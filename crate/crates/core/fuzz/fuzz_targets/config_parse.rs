#![no_main]

use libfuzzer_sys::fuzz_target;
use shs_sentinel::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = ExperimentConfig::from_toml(text) else {
        return;
    };
    let _ = cfg.validate();
    let once = cfg.to_toml();
    let again = ExperimentConfig::from_toml(&once).expect("written config reparses");
    assert_eq!(again.to_toml(), once);
});
