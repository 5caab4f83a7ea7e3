#![no_main]

use libfuzzer_sys::fuzz_target;
use mbcri::estimator::FitConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = FitConfig::from_toml_str(text) {
        let again = FitConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
});
