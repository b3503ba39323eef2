#![no_main]

use fragnet::data::{parse_extension, scenario_map, GeneratorKind};
use fragnet::models::Architecture;
use libfuzzer_sys::fuzz_target;

// Extension, architecture and generator names as they arrive from file names and flags.
fuzz_target!(|data: &[u8]| {
    let Some((&scenario, rest)) = data.split_first() else { return };
    let Ok(s) = std::str::from_utf8(rest) else { return };
    if let Ok(ext) = parse_extension(s) {
        assert_eq!(parse_extension(ext).unwrap(), ext);
    }
    let _ = scenario_map(scenario % 8, s);
    let _ = s.parse::<Architecture>();
    let _ = s.parse::<GeneratorKind>();
});
