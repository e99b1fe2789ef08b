#![no_main]

use libfuzzer_sys::fuzz_target;
use lpf::MachineParams;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = MachineParams::parse(text) {
            // Whatever parses must survive a write and re-read unchanged.
            let again = MachineParams::parse(&p.format()).expect("round trip");
            assert_eq!(again.format(), p.format());
        }
    }
});
