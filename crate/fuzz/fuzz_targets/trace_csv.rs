#![no_main]

use compsplat::trace::LossTrace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = LossTrace::from_csv(data) {
        let _ = trace.to_csv();
    }
});
