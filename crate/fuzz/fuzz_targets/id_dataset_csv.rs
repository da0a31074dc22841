#![no_main]

use aerial_ndt::observer::{identify_cf, parse_id_dataset};
use aerial_ndt::Vec3;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(samples) = parse_id_dataset(text) {
            let _ = identify_cf(&samples, &[Vec3::z(); 4]);
        }
    }
});
