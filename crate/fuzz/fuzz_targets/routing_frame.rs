#![no_main]

use libfuzzer_sys::fuzz_target;
use lpf::engine::decode_routing_frame;

fuzz_target!(|data: &[u8]| {
    let Some((&p, frame)) = data.split_first() else { return };
    let _ = decode_routing_frame(frame, u32::from(p).max(1));
});
