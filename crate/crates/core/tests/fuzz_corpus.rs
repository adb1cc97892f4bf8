//! Replays the checked-in fuzz seeds through the same entry points as the
//! fuzz targets.

use std::path::PathBuf;

use covsep::audio::read_wav_bytes;
use covsep::config;
use covsep::tensorfile::TensorBundle;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn wav_seeds() {
    for (name, bytes) in seeds("wav_decode") {
        let result = read_wav_bytes(&bytes);
        assert_eq!(result.is_ok(), !name.starts_with("truncated"), "{name}");
    }
}

#[test]
fn tensor_seeds_round_trip() {
    for (name, bytes) in seeds("tensor_decode") {
        let bundle = TensorBundle::decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(TensorBundle::decode(&bundle.encode()).unwrap(), bundle, "{name}");
        for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
            assert!(TensorBundle::decode(&bytes[..cut]).is_err(), "{name} cut at {cut}");
        }
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("config_parse") {
        let text = String::from_utf8(bytes).unwrap();
        let ok = match name.split(['_', '.']).next().unwrap() {
            "pipeline" => config::parse_pipeline_config(&text).is_ok(),
            "simulate" => config::parse_simulate_config(&text).is_ok(),
            "experiment" => config::parse_experiment_config(&text).is_ok(),
            _ => config::parse_pipeline_config(&text).is_ok(),
        };
        assert_eq!(ok, !name.starts_with("bad"), "{name}");
    }
}
