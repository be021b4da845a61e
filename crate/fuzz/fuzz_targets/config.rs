#![no_main]

use libfuzzer_sys::fuzz_target;
use stablesde_cli::config::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::from_toml_str(text) {
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).expect("serialized config parses");
        assert_eq!(cfg, again);
    }
});
