#![no_main]
use libfuzzer_sys::fuzz_target;
use tstereo::io::{read_pfm, write_pfm};

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = read_pfm(data) {
        assert_eq!(p.data.len(), p.width * p.height * p.channels);
        if p.channels == 1 {
            let vals: Vec<f64> = p.data.iter().map(|&v| v as f64).collect();
            let again = read_pfm(&write_pfm(p.width, p.height, &vals)).expect("own output decodes");
            assert_eq!(again.data.len(), p.data.len());
        }
    }
});
