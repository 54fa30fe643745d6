#![no_main]

use chartfolio::chart_render::ChartImage;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ChartImage::decode_png(data) {
        assert_eq!(img.pixels.len(), img.width as usize * img.height as usize * 3);
    }
});
