#![no_main]

use libfuzzer_sys::fuzz_target;
use lpf::engine::meta::{decode_pull_list, encode_pull_list};

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = decode_pull_list(data) {
        assert_eq!(encode_pull_list(&entries), data);
    }
});
