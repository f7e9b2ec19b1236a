//! Replays the checked-in fuzz corpus through the same entry points as the
//! fuzz targets, so regressions show up without a fuzzing toolchain.

use std::fs;
use std::path::Path;

use polling::cli::RunConfig;
use polling::pgf::CoeffTensor;

fn corpus(name: &str) -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(name);
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn config_corpus_round_trips() {
    let seeds = corpus("config_json");
    assert!(!seeds.is_empty());
    let mut accepted = 0;
    for (name, text) in seeds {
        if let Ok(cfg) = RunConfig::from_json_str(&text) {
            let again = serde_json::to_string(&cfg).unwrap();
            let back = RunConfig::from_json_str(&again).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(back, cfg, "{name}");
            accepted += 1;
        }
    }
    assert!(accepted >= 5);
}

#[test]
fn tensor_corpus_round_trips() {
    let mut accepted = 0;
    for (name, text) in corpus("tensor_json") {
        if let Ok(t) = CoeffTensor::from_json(&text) {
            let back = CoeffTensor::from_json(&t.to_json()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(back, t, "{name}");
            accepted += 1;
        }
    }
    assert_eq!(accepted, 3);
}
