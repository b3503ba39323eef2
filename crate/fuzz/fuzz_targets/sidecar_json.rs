#![no_main]

use fragnet::data::Sidecar;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = Sidecar::from_json(data);
});
