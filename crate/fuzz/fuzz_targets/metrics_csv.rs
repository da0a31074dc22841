#![no_main]

use aerial_ndt::metrics::{compare, parse_metrics};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = parse_metrics(text) {
            if let Some(first) = records.first() {
                let _ = compare(first, first, 0.0);
            }
        }
    }
});
