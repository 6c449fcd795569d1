#![no_main]

use libfuzzer_sys::fuzz_target;
use regionmix::composition::CompositionSpec;
use regionmix::taxonomy::RegionTaxonomy;
use regionmix_cli::engine::{EditRequest, SynthesisRequest};

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<SynthesisRequest>(data);
    let _ = serde_json::from_slice::<EditRequest>(data);
    if let Ok(mut spec) = serde_json::from_slice::<CompositionSpec>(data) {
        let tax = RegionTaxonomy::toy();
        if spec.assignments.len() == tax.len() {
            spec.complete_symmetry(&tax);
            let _ = spec.validate(&tax);
            let named = spec.to_named(&tax);
            let back = CompositionSpec::from_named(&tax, &named, spec.kind).unwrap();
            assert_eq!(back, spec);
        }
    }
});
