#![no_main]

use chartfolio::market_data::{parse_csv, TradingCalendar};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(loaded) = parse_csv(data, "fuzz", None) {
        let calendar = TradingCalendar::from_series(&loaded.series);
        let _ = parse_csv(data, "fuzz", Some(&calendar));
    }
});
