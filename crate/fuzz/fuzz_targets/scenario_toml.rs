#![no_main]

use aerial_ndt::scenario::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = Scenario::from_toml_str(text, &[]) {
            let again = toml::to_string(&s).expect("valid scenario serializes");
            assert_eq!(Scenario::from_toml_str(&again, &[]).as_ref(), Ok(&s));
        }
    }
});
