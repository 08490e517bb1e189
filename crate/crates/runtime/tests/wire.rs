//! Framing fuzz: round trips, arbitrary chunking, bad headers and garbage.

mod common;

use ddrl_core::seed;
use ddrl_runtime::wire::{decode, encode, FrameDecoder, WireError, WireMessage, DEFAULT_MAX_FRAME, HEADER_LEN};
use proptest::prelude::*;

fn stream_of_every_tag(seed_value: u64) -> (Vec<WireMessage>, Vec<u8>) {
    let mut rng = seed::rng(seed_value);
    let msgs: Vec<WireMessage> = (1..=8).map(|t| common::random_message(&mut rng, t)).collect();
    let bytes = msgs.iter().flat_map(|m| encode(m, DEFAULT_MAX_FRAME).unwrap()).collect();
    (msgs, bytes)
}

fn drain(d: &mut FrameDecoder, out: &mut Vec<WireMessage>) {
    while let Some(m) = d.next_message().unwrap() {
        out.push(m);
    }
}

#[test]
fn every_two_way_split_reassembles() {
    let (msgs, bytes) = stream_of_every_tag(11);
    for cut in 0..=bytes.len() {
        let mut d = FrameDecoder::new(DEFAULT_MAX_FRAME);
        let mut got = Vec::new();
        d.push(&bytes[..cut]);
        drain(&mut d, &mut got);
        d.push(&bytes[cut..]);
        drain(&mut d, &mut got);
        assert_eq!(got, msgs, "split at {cut}");
        assert_eq!(d.buffered(), 0);
    }
}

#[test]
fn byte_at_a_time_reassembles() {
    let (msgs, bytes) = stream_of_every_tag(12);
    let mut d = FrameDecoder::new(DEFAULT_MAX_FRAME);
    let mut got = Vec::new();
    for b in &bytes {
        d.push(std::slice::from_ref(b));
        drain(&mut d, &mut got);
    }
    assert_eq!(got, msgs);
}

#[test]
fn unknown_tags_are_protocol_errors() {
    for tag in [0u8, 9, 42, 255] {
        let frame = [tag, 0, 0, 0, 0];
        assert!(matches!(decode(&frame, DEFAULT_MAX_FRAME), Err(WireError::Protocol(_))), "tag {tag}");
        let mut d = FrameDecoder::new(DEFAULT_MAX_FRAME);
        d.push(&frame);
        assert!(matches!(d.next_message(), Err(WireError::Protocol(_))));
    }
}

#[test]
fn seventeen_mib_frame_is_too_large() {
    let len = 17 * 1024 * 1024;
    let msg = WireMessage::GradMsg {
        frames: 0,
        samples: 0,
        update: ddrl_core::policy::GradientUpdate {
            grad: vec![0.5; len / 8],
            base_version: 1,
            sample_count: 1,
            producer_id: "a".into(),
        },
        episodes: Vec::new(),
    };
    assert!(matches!(encode(&msg, DEFAULT_MAX_FRAME), Err(WireError::FrameTooLarge { .. })));
    // A header announcing 17 MiB is refused before any payload arrives.
    let mut header = vec![4u8];
    header.extend_from_slice(&(len as u32).to_le_bytes());
    let mut d = FrameDecoder::new(DEFAULT_MAX_FRAME);
    d.push(&header);
    assert!(matches!(d.next_message(), Err(WireError::FrameTooLarge { len: l, .. }) if l == len));
}

#[test]
fn length_mismatch_is_a_protocol_error() {
    let (_, bytes) = stream_of_every_tag(13);
    let first_len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let frame = &bytes[..HEADER_LEN + first_len];
    assert!(matches!(decode(&frame[..frame.len() - 1], DEFAULT_MAX_FRAME), Err(WireError::Protocol(_))));
    let mut longer = frame.to_vec();
    longer.push(0);
    assert!(matches!(decode(&longer, DEFAULT_MAX_FRAME), Err(WireError::Protocol(_))));
}

proptest! {
    #[test]
    fn round_trip_identity(seed_value in any::<u64>(), tag in 1u8..=8) {
        let msg = common::random_message(&mut seed::rng(seed_value), tag);
        let bytes = encode(&msg, DEFAULT_MAX_FRAME).unwrap();
        prop_assert_eq!(bytes[0], tag);
        prop_assert_eq!(decode(&bytes, DEFAULT_MAX_FRAME).unwrap(), msg);
    }

    #[test]
    fn random_chunking_reassembles(seed_value in any::<u64>(), cuts in proptest::collection::vec(any::<prop::sample::Index>(), 0..12)) {
        let (msgs, bytes) = stream_of_every_tag(seed_value);
        let mut points: Vec<usize> = cuts.iter().map(|c| c.index(bytes.len() + 1)).collect();
        points.sort_unstable();
        let mut d = FrameDecoder::new(DEFAULT_MAX_FRAME);
        let mut got = Vec::new();
        let mut prev = 0;
        for p in points.into_iter().chain([bytes.len()]) {
            d.push(&bytes[prev..p]);
            drain(&mut d, &mut got);
            prev = p;
        }
        prop_assert_eq!(got, msgs);
    }

    #[test]
    fn garbage_yields_only_specified_errors(bytes in proptest::collection::vec(any::<u8>(), 0..256), max in 0usize..512) {
        match decode(&bytes, max) {
            Ok(_) | Err(WireError::Protocol(_)) | Err(WireError::FrameTooLarge { .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {e:?}"),
        }
        let mut d = FrameDecoder::new(max);
        d.push(&bytes);
        loop {
            match d.next_message() {
                Ok(Some(_)) => continue,
                Ok(None) | Err(WireError::Protocol(_)) | Err(WireError::FrameTooLarge { .. }) => break,
                Err(e) => prop_assert!(false, "unexpected error {e:?}"),
            }
        }
    }

    #[test]
    fn corrupted_payload_never_panics(seed_value in any::<u64>(), tag in 1u8..=8, flips in proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6)) {
        let msg = common::random_message(&mut seed::rng(seed_value), tag);
        let mut bytes = encode(&msg, DEFAULT_MAX_FRAME).unwrap();
        for (i, b) in flips {
            if bytes.len() > HEADER_LEN {
                let at = HEADER_LEN + i.index(bytes.len() - HEADER_LEN);
                bytes[at] ^= b;
            }
        }
        match decode(&bytes, DEFAULT_MAX_FRAME) {
            Ok(_) | Err(WireError::Protocol(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e:?}"),
        }
    }
}
