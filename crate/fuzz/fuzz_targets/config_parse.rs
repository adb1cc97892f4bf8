#![no_main]

use covsep::config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = config::parse_pipeline_config(text) {
        let back = config::to_toml(&cfg).expect("serialise a valid config");
        assert_eq!(config::parse_pipeline_config(&back).expect("reparse"), cfg);
    }
    let _ = config::parse_simulate_config(text);
    let _ = config::parse_experiment_config(text);
});
