#![no_main]

use libfuzzer_sys::fuzz_target;
use lpf::tcp::handshake::{
    format_book, parse_book, parse_entry, parse_hello, parse_mesh_hello, parse_ok, parse_refusal, read_line,
};

fuzz_target!(|data: &[u8]| {
    let _ = read_line(&mut &data[..]);
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_hello(text);
    let _ = parse_refusal(text);
    let _ = parse_ok(text);
    let _ = parse_entry(text);
    let _ = parse_mesh_hello(text);
    if let Ok(book) = parse_book(text) {
        assert_eq!(parse_book(&format_book(&book)).unwrap(), book);
    }
});
