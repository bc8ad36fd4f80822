use std::io::Cursor;

use fdml::transport::{decode, encode, read_frame, tags, write_frame, Message};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
        -1e300..1e300f64,
        -1.0..1.0f64,
    ]
}

fn message() -> impl Strategy<Value = Message> {
    let pairs = proptest::collection::vec((any::<u64>(), finite()), 0..40);
    let ids = proptest::collection::vec(any::<u64>(), 0..40);
    let sums = proptest::collection::vec(finite(), 0..40);
    prop_oneof![
        (any::<u16>(), any::<u64>(), pairs).prop_map(|(worker, iteration, pairs)| Message::PushRequest {
            worker,
            iteration,
            pairs
        }),
        any::<u64>().prop_map(|iteration| Message::PushAck { iteration }),
        (any::<u16>(), any::<u64>(), ids).prop_map(|(worker, iteration, samples)| Message::PullRequest {
            worker,
            iteration,
            samples
        }),
        (any::<u64>(), sums).prop_map(|(iteration, sums)| Message::PullGrant { iteration, sums }),
        (any::<u64>(), any::<u64>()).prop_map(|(iteration, slowest)| Message::PullReject { iteration, slowest }),
        (any::<u16>(), ".{0,40}").prop_map(|(code, detail)| Message::Error { code, detail }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn round_trip(msg in message()) {
        let frame = encode(&msg);
        let back = decode(&frame).unwrap();
        prop_assert_eq!(back.clone(), msg);
        // signed zeros and every bit pattern survive
        prop_assert_eq!(encode(&back), frame);
    }

    #[test]
    fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
        let _ = decode(&bytes);
    }

    #[test]
    fn damaged_frames_never_panic(msg in message(), at in any::<prop::sample::Index>(), byte in any::<u8>(), cut in any::<prop::sample::Index>()) {
        let mut frame = encode(&msg);
        let i = at.index(frame.len());
        frame[i] = byte;
        let keep = cut.index(frame.len() + 1);
        frame.truncate(keep);
        let _ = decode(&frame);
    }
}

#[test]
fn frames_stream_back_to_back() {
    let msgs = vec![
        Message::PushAck { iteration: 3 },
        Message::PullReject { iteration: 9, slowest: 1 },
        Message::PullGrant { iteration: 9, sums: vec![0.5, -1.25] },
    ];
    let mut wire = Vec::new();
    for m in &msgs {
        write_frame(&mut wire, m).unwrap();
    }
    let mut reader = Cursor::new(wire);
    let mut got = Vec::new();
    while let Some(frame) = read_frame(&mut reader).unwrap() {
        got.push(decode(&frame).unwrap());
    }
    assert_eq!(got, msgs);
}

#[test]
fn non_finite_values_are_rejected_on_decode() {
    let mut frame = encode(&Message::PullGrant { iteration: 1, sums: vec![1.0] });
    let at = frame.len() - 8;
    frame[at..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(decode(&frame).is_err());
}

/// The wire schema has room for sample ids, iteration counters, one scalar
/// per sample and an error string, and nothing else: every frame's size is
/// fixed by those counts, so no parameter vector or feature row can ride along.
#[test]
fn schema_carries_no_parameters_or_features() {
    let header = 4 + 1;
    let cases: Vec<(Message, usize)> = vec![
        (
            Message::PushRequest {
                worker: 1,
                iteration: 2,
                pairs: vec![(5, 0.1); 3],
            },
            header + 2 + 8 + 4 + 3 * 16,
        ),
        (Message::PushAck { iteration: 2 }, header + 8),
        (
            Message::PullRequest {
                worker: 1,
                iteration: 2,
                samples: vec![5; 3],
            },
            header + 2 + 8 + 4 + 3 * 8,
        ),
        (
            Message::PullGrant {
                iteration: 2,
                sums: vec![0.1; 3],
            },
            header + 8 + 4 + 3 * 8,
        ),
        (Message::PullReject { iteration: 2, slowest: 1 }, header + 16),
        (
            Message::Error {
                code: 1,
                detail: "abc".into(),
            },
            header + 2 + 4 + 3,
        ),
    ];
    for (msg, size) in &cases {
        assert_eq!(encode(msg).len(), *size, "{msg:?}");
        // an exhaustive match: a new variant must be reviewed here
        match msg {
            Message::PushRequest { worker: _, iteration: _, pairs: _ }
            | Message::PushAck { iteration: _ }
            | Message::PullRequest { worker: _, iteration: _, samples: _ }
            | Message::PullGrant { iteration: _, sums: _ }
            | Message::PullReject { iteration: _, slowest: _ }
            | Message::Error { code: _, detail: _ } => {}
        }
    }
    let tags: Vec<u8> = cases.iter().map(|(m, _)| m.tag()).collect();
    assert_eq!(
        tags,
        [tags::PUSH_REQUEST, tags::PUSH_ACK, tags::PULL_REQUEST, tags::PULL_GRANT, tags::PULL_REJECT, tags::ERROR]
    );
}
