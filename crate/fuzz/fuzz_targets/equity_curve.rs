#![no_main]

use chartfolio::backtest::report::read_curve;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_curve(data);
});
