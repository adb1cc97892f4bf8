#![no_main]

use covsep::tensorfile::TensorBundle;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(bundle) = TensorBundle::decode(data) {
        let bytes = bundle.encode();
        let again = TensorBundle::decode(&bytes).expect("decode re-encoded bundle");
        assert_eq!(again.encode(), bytes);
    }
});
