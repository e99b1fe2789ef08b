#![no_main]

use libfuzzer_sys::fuzz_target;
use lpf::tcp::frame::{decode_header, encode_header, read_frame, HEADER_LEN};

fuzz_target!(|data: &[u8]| {
    if data.len() >= HEADER_LEN {
        if let Ok(h) = decode_header(&data[..HEADER_LEN]) {
            assert_eq!(encode_header(&h), data[..HEADER_LEN]);
        }
    }
    let mut r = data;
    while let Ok(Some(_)) = read_frame(&mut r) {}
});
