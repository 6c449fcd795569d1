#![no_main]

use libfuzzer_sys::fuzz_target;
use regionmix::taxonomy::RegionTaxonomy;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = RegionTaxonomy::parse(text) {
        let again = RegionTaxonomy::parse(&t.to_config_string()).expect("printed taxonomy parses");
        assert_eq!(again, t);
        for i in 0..t.len() {
            assert_eq!(t.mirror_of(t.mirror_of(i)), i);
        }
    }
});
