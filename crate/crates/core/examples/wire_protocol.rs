//! Encode a message, look at the frame bytes, decode it back, and see what the
//! decoder says about a damaged frame.
//!
//!     cargo run --example wire_protocol

use fdml::transport::{decode, encode, Message};

fn main() {
    let msg = Message::PullRequest {
        worker: 1,
        iteration: 42,
        samples: vec![3, 17],
    };
    let frame = encode(&msg);
    println!("{msg:?}");
    println!("{} bytes: {:02x?}", frame.len(), frame);
    println!("decodes back: {}", decode(&frame).ok().as_ref() == Some(&msg));

    let mut damaged = frame.clone();
    damaged[4] = 0xEE;
    println!("unknown tag: {}", decode(&damaged).unwrap_err());
    println!("truncated: {}", decode(&frame[..frame.len() - 3]).unwrap_err());

    let error = Message::Error {
        code: 1,
        detail: "unknown worker 7".into(),
    };
    println!("{:?}", decode(&encode(&error)));
}
