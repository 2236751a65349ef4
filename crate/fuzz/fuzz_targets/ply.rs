#![no_main]

use compsplat::ply::{decode_ply, encode_ply};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cloud) = decode_ply(data) {
        assert!(cloud.check_invariants().is_ok());
        let again = decode_ply(&encode_ply(&cloud, None).unwrap()).unwrap();
        assert_eq!(again.len(), cloud.len());
    }
});
