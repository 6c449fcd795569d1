#![no_main]

use libfuzzer_sys::fuzz_target;
use regionmix::data::BaseToMeta;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = BaseToMeta::parse(text) {
        let printed: String = m.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        assert_eq!(BaseToMeta::parse(&printed).expect("printed map parses"), m);
    }
});
