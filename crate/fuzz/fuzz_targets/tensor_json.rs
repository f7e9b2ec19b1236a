#![no_main]

use libfuzzer_sys::fuzz_target;
use polling::pgf::CoeffTensor;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = CoeffTensor::from_json(text) {
        let back = CoeffTensor::from_json(&t.to_json()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.coeffs().len(), t.coeffs().len());
    }
});
