#![no_main]

use compsplat::scene::SceneSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = SceneSpec::from_json(text) {
        let _ = spec.warnings();
        let _ = spec.edge_refs();
        assert_eq!(SceneSpec::from_json(&spec.to_json()).unwrap(), spec);
    }
});
