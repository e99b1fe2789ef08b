#![no_main]

use libfuzzer_sys::fuzz_target;
use lpf::engine::meta::{MetaBlock, MetaRecord};

fuzz_target!(|data: &[u8]| {
    if let Ok(block) = MetaBlock::decode(data) {
        assert_eq!(block.encode(), data);
    }
    let _ = MetaRecord::decode(data);
});
