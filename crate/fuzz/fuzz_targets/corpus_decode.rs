#![no_main]

use fragnet::data::{decode_corpus, encode_corpus};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(corpus) = decode_corpus(data, None) {
        // anything accepted must re-encode to the same bytes
        assert_eq!(encode_corpus(&corpus), data);
    }
});
