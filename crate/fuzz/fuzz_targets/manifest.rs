#![no_main]

use chartfolio::chart_render::read_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_manifest(data, Some(std::path::Path::new("charts")));
});
