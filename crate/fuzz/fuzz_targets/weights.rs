#![no_main]
use libfuzzer_sys::fuzz_target;
use tstereo::io::parse_weights;
use tstereo::{PipelineConfig, PipelineWeights};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(set) = parse_weights(s) {
            let _ = PipelineWeights::from_weight_set(&PipelineConfig::default(), &set);
            let again = parse_weights(&set.to_text()).expect("own output parses");
            assert_eq!(again.tensors.len(), set.tensors.len());
        }
    }
});
