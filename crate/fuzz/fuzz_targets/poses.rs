#![no_main]
use libfuzzer_sys::fuzz_target;
use tstereo::camera::{format_pose_file, parse_pose_file};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(poses) = parse_pose_file(s) {
            let back = parse_pose_file(&format_pose_file(&poses)).expect("own output parses");
            assert_eq!(back.len(), poses.len());
        }
    }
});
