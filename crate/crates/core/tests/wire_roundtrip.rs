mod common;

use std::io::Cursor;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use agentfarm::wire::*;

fn for_every_kind(cases: u32, check: impl Fn(MessageKind, Envelope) -> Result<(), TestCaseError>) {
    for &kind in MessageKind::ALL {
        let mut runner = TestRunner::new(Config {
            cases,
            ..Config::default()
        });
        runner
            .run(&common::envelope_of(kind), |env| check(kind, env))
            .unwrap_or_else(|e| panic!("{}: {e}", kind.as_str()));
    }
}

#[test]
fn vocabulary_has_eighteen_kinds() {
    assert_eq!(MessageKind::ALL.len(), 18);
    for &k in MessageKind::ALL {
        assert_eq!(MessageKind::parse(k.as_str()), Some(k));
    }
}

#[test]
fn every_kind_round_trips() {
    for_every_kind(64, |kind, env| {
        let frame = encode_frame(&env).unwrap();
        let (back, used) = decode_frame(&frame).unwrap();
        prop_assert_eq!(used, frame.len());
        prop_assert_eq!(back.kind(), kind);
        prop_assert_eq!(back, env);
        Ok(())
    });
}

#[test]
fn streams_carry_back_to_back_frames() {
    for_every_kind(8, |_, env| {
        let mut buf = Vec::new();
        write_frame(&mut buf, &env).unwrap();
        write_frame(&mut buf, &env).unwrap();
        let mut r = Cursor::new(buf);
        prop_assert_eq!(read_frame(&mut r).unwrap(), Some(env.clone()));
        prop_assert_eq!(read_frame(&mut r).unwrap(), Some(env.clone()));
        prop_assert!(read_frame(&mut r).unwrap().is_none());
        Ok(())
    });
}

#[test]
fn every_truncation_is_an_error() {
    for_every_kind(4, |_, env| {
        let frame = encode_frame(&env).unwrap();
        for cut in 0..frame.len() {
            let slice = &frame[..cut];
            prop_assert!(
                matches!(decode_frame(slice), Err(WireError::Truncated { .. })),
                "cut at {cut}"
            );
            let streamed = read_frame(&mut Cursor::new(slice));
            if cut == 0 {
                prop_assert!(matches!(streamed, Ok(None)));
            } else {
                prop_assert!(
                    matches!(streamed, Err(WireError::Truncated { .. })),
                    "stream cut at {cut}"
                );
            }
        }
        Ok(())
    });
}

#[test]
fn oversize_prefix_is_refused() {
    let len = (MAX_PAYLOAD as u32 + 1).to_be_bytes();
    assert!(matches!(
        decode_frame(&len),
        Err(WireError::OversizePayload(_))
    ));
    assert!(matches!(
        read_frame(&mut Cursor::new(len)),
        Err(WireError::OversizePayload(_))
    ));
}

proptest! {
    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_frame(&bytes);
        let _ = read_frame(&mut Cursor::new(&bytes));
    }

    #[test]
    fn corrupted_payloads_are_errors_or_valid(kind in 0..18usize, flip in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let kind = MessageKind::ALL[kind];
        let mut runner = TestRunner::deterministic();
        let env = common::envelope_of(kind).new_tree(&mut runner).unwrap().current();
        let mut frame = encode_frame(&env).unwrap();
        let i = 4 + flip.index(frame.len() - 4);
        frame[i] = byte;
        // either a clean error or some well-formed envelope
        if let Ok((decoded, used)) = decode_frame(&frame) {
            prop_assert_eq!(used, frame.len());
            let again = encode_frame(&decoded).unwrap();
            prop_assert_eq!(decode_frame(&again).unwrap().0, decoded);
        }
    }
}
