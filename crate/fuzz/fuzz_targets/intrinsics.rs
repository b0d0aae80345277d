#![no_main]
use libfuzzer_sys::fuzz_target;
use tstereo::CameraModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cam) = CameraModel::parse(s) {
            assert_eq!(CameraModel::parse(&cam.to_line()).unwrap(), cam);
        }
    }
});
