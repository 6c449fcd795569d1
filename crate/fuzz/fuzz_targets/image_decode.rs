#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use regionmix::image::RgbImage;
use regionmix::mask::SemanticMask;
use regionmix::taxonomy::RegionTaxonomy;

fuzz_target!(|data: &[u8]| {
    let origin = Path::new("fuzz.png");
    if let Ok(m) = SemanticMask::decode_png(data, origin, "fuzz") {
        assert_eq!(m.labels().len(), m.height() * m.width());
        let tax = RegionTaxonomy::toy();
        if m.validate(&tax).is_ok() {
            for i in m.present_regions(&tax) {
                assert!(!m.extract_region(&tax, i).unwrap().is_empty());
            }
        }
    }
    if let Ok(img) = RgbImage::decode_png(data, origin) {
        assert!(img.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
});
