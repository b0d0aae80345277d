#![no_main]
use libfuzzer_sys::fuzz_target;
use tstereo::io::read_pnm;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = read_pnm(data) {
        assert_eq!(p.data.len(), p.width * p.height * p.channels);
        let g = p.to_gray();
        assert_eq!(g.shape(), &[p.height, p.width]);
    }
});
