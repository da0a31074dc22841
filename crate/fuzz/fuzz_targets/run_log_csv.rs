#![no_main]

use aerial_ndt::metrics::compute_metrics;
use aerial_ndt::telemetry::parse_log;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_log(text) {
            let _ = compute_metrics(&rows);
        }
    }
});
