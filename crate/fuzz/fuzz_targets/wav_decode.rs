#![no_main]

use covsep::audio::{read_wav_bytes, write_wav_bytes, WavEncoding};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(audio) = read_wav_bytes(data) else {
        return;
    };
    assert!(audio.num_channels() >= 1);
    assert!(audio.sample_rate() > 0);
    for ch in audio.channels() {
        assert_eq!(ch.len(), audio.num_samples());
    }
    // Anything we decode must survive a float round trip unchanged.
    let bytes = write_wav_bytes(&audio, WavEncoding::Float32).expect("re-encode decoded audio");
    let again = read_wav_bytes(&bytes).expect("decode re-encoded audio");
    assert_eq!(audio.num_samples(), again.num_samples());
    assert_eq!(audio.num_channels(), again.num_channels());
});
