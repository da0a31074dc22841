#![no_main]

use aerial_ndt::scenario::{apply_override, Scenario};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut table = toml::Table::new();
    for line in text.lines() {
        let _ = apply_override(&mut table, line);
    }
    let overrides: Vec<String> = text.lines().map(str::to_owned).collect();
    let _ = Scenario::from_toml_str("", &overrides);
});
