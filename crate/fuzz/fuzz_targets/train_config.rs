#![no_main]

use libfuzzer_sys::fuzz_target;
use regionmix::training::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = TrainConfig::parse(text) {
        assert_eq!(TrainConfig::parse(&c.to_toml()).expect("printed config parses"), c);
    }
});
