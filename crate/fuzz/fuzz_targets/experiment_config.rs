#![no_main]

use libfuzzer_sys::fuzz_target;
use perturb_xai::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::parse(text) {
        if let Ok((configs, _)) = config.expand() {
            for c in &configs {
                assert!(c.check().is_ok());
                assert_eq!(c.hash().len(), 16);
            }
        }
    }
});
