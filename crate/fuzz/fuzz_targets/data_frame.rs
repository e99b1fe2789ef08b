#![no_main]

use libfuzzer_sys::fuzz_target;
use lpf::engine::meta::decode_data_frame;

fuzz_target!(|data: &[u8]| {
    if let Ok((status, payload)) = decode_data_frame(data) {
        assert_eq!(payload.len() + 5, data.len());
        assert!(status <= 1);
    }
});
