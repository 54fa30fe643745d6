#![no_main]

use chartfolio::cli::config::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = PipelineConfig::parse(text, std::path::Path::new("base"), &[]);
    }
});
