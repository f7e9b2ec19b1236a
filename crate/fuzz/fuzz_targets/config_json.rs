#![no_main]

use libfuzzer_sys::fuzz_target;
use polling::cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_json_str(text) {
        // Anything accepted must survive a round trip.
        let again = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json_str(&again).unwrap();
        assert_eq!(back.model.num_queues(), cfg.model.num_queues());
    }
});
