#![no_main]

use compsplat::image_io::{decode_float_dump, encode_float_dump};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_float_dump(data) {
        assert_eq!(img.data.len(), img.height * img.width * img.channels);
        let bytes = encode_float_dump(&img.data, img.height, img.width, img.channels).unwrap();
        let back = decode_float_dump(&bytes).unwrap();
        assert_eq!(back.data.len(), img.data.len());
    }
});
