//! Replays the fuzz corpus seeds through the decoders on stable.

use std::path::PathBuf;

use lpf::engine::decode_routing_frame;
use lpf::engine::meta::{decode_data_frame, decode_pull_list, encode_pull_list, MetaBlock};
use lpf::tcp::frame::{decode_header, encode_header, read_frame, HEADER_LEN};
use lpf::tcp::handshake::{format_book, parse_book, parse_hello, parse_mesh_hello, parse_refusal};
use lpf::{MachineParams, ProcessTraffic};

fn seed(target: &str, name: &str) -> Vec<u8> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "../../fuzz/corpus", target, name].iter().collect();
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn text(target: &str, name: &str) -> String {
    String::from_utf8(seed(target, name)).unwrap()
}

#[test]
fn params_seeds() {
    let p = MachineParams::parse(&text("params_file", "two_words")).unwrap();
    assert_eq!(MachineParams::parse(&p.format()).unwrap().format(), p.format());
    assert!(MachineParams::parse(&text("params_file", "p_only")).is_ok());
    assert!(MachineParams::parse(&text("params_file", "bad_field")).is_err());
}

#[test]
fn meta_seeds() {
    for name in ["empty", "put_and_get"] {
        let bytes = seed("meta_block", name);
        assert_eq!(MetaBlock::decode(&bytes).unwrap().encode(), bytes);
    }
    assert!(MetaBlock::decode(&seed("meta_block", "truncated")).is_err());
    for name in ["empty", "two"] {
        let bytes = seed("pull_list", name);
        assert_eq!(encode_pull_list(&decode_pull_list(&bytes).unwrap()), bytes);
    }
    assert_eq!(decode_data_frame(&seed("data_frame", "ok")).unwrap(), (0, &b"payload"[..]));
    assert_eq!(decode_data_frame(&seed("data_frame", "failed")).unwrap().0, 1);
}

#[test]
fn frame_seeds() {
    for name in ["data", "depart"] {
        let bytes = seed("frame_header", name);
        let h = decode_header(&bytes[..HEADER_LEN]).unwrap();
        assert_eq!(encode_header(&h), bytes[..HEADER_LEN]);
    }
    let bytes = seed("frame_header", "two_frames");
    let mut r = &bytes[..];
    assert_eq!(read_frame(&mut r).unwrap().unwrap().1, b"hi");
    assert_eq!(read_frame(&mut r).unwrap().unwrap().1, b"");
    assert!(read_frame(&mut r).unwrap().is_none());
}

#[test]
fn handshake_seeds() {
    assert_eq!(parse_hello(&text("handshake", "hello")).unwrap(), (3, 4));
    assert!(parse_refusal(&text("handshake", "refusal")).is_some());
    assert_eq!(parse_mesh_hello(&text("handshake", "mesh")).unwrap(), 2);
    let book = parse_book(&text("handshake", "book")).unwrap();
    assert_eq!(book.len(), 2);
    assert_eq!(parse_book(&format_book(&book)).unwrap(), book);
}

#[test]
fn routing_and_traffic_seeds() {
    let bytes = seed("routing_frame", "two_items");
    assert_eq!(decode_routing_frame(&bytes[1..], bytes[0] as u32).unwrap(), 2);
    assert!(decode_routing_frame(&bytes[1..], 2).is_err());
    let bytes = seed("routing_frame", "empty");
    assert_eq!(decode_routing_frame(&bytes[1..], 1).unwrap(), 0);
    let t = ProcessTraffic::decode(&seed("traffic", "counts")).unwrap();
    assert_eq!((t.sent, t.received, t.requests_out, t.requests_in), (64, 32, 2, 1));
}
