#![no_main]

use libfuzzer_sys::fuzz_target;
use regionmix::nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::from_bytes(data) {
        let bytes = c.to_bytes().expect("decoded checkpoint encodes");
        assert!(Checkpoint::from_bytes(&bytes).is_ok());
        let _ = c.into_bundle();
    }
});
