#![no_main]

use libfuzzer_sys::fuzz_target;
use lpf::ProcessTraffic;

fuzz_target!(|data: &[u8]| {
    let _ = ProcessTraffic::decode(data);
});
