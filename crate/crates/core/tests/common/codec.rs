//! Wire codec: identity, prefix-safety, and length limits.

use proptest::prelude::*;
use remoni_core::protocol::{decode_all, encode, Frame, FrameDecoder, ProtocolError, MAX_FRAME_LEN};
use remoni_core::{AccelSample, SnapshotRef, VitalSample};

use super::{ensure, runner, Check};

fn id() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_\\-:. é]{1,16}"
}

fn accel() -> impl Strategy<Value = Frame> {
    (0i64..4_000_000_000_000, prop::collection::vec((1i64..50, -8.0f64..=8.0, -8.0f64..=8.0, -8.0f64..=8.0), 1..24))
        .prop_map(|(t0, steps)| {
            let mut t = t0;
            let samples = steps
                .into_iter()
                .map(|(dt, x, y, z)| {
                    t += dt;
                    AccelSample::new(t, x, y, z)
                })
                .collect();
            Frame::AccelBatch { samples }
        })
}

fn vitals() -> impl Strategy<Value = Frame> {
    (
        0i64..4_000_000_000_000,
        30.0f64..43.0,
        20.0f64..220.0,
        0.0f64..60.0,
        (40.0f64..140.0, 0.1f64..100.0),
        0.0f64..=100.0,
    )
        .prop_map(|(t, temp, hr, rr, (dia, gap), spo2)| Frame::Vitals {
            sample: VitalSample {
                t,
                temp,
                hr,
                rr,
                sys: dia + gap,
                dia,
                spo2,
            },
        })
}

fn snapshot() -> impl Strategy<Value = Frame> {
    (
        0i64..4_000_000_000_000,
        id(),
        prop::sample::select(vec!["image/png", "image/jpeg", "image/webp"]),
        prop::collection::vec(any::<u8>(), 1..96),
    )
        .prop_map(|(t, patient_id, mime, media)| Frame::Snapshot {
            snapshot: SnapshotRef {
                t,
                patient_id,
                mime: mime.into(),
                media,
            },
        })
}

pub fn frame() -> impl Strategy<Value = Frame> {
    prop_oneof![
        (id(), id()).prop_map(|(d, p)| Frame::hello(&d, &p)),
        accel(),
        vitals(),
        snapshot(),
        Just(Frame::Heartbeat),
        Just(Frame::Bye),
    ]
}

/// Round trip, concatenation, and byte-at-a-time prefix-safety.
pub fn check_round_trip(cases: u32) -> Check {
    runner(cases)
        .run(&prop::collection::vec(frame(), 1..4), |frames| {
            let mut stream = Vec::new();
            for f in &frames {
                let bytes = encode(f).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let back = decode_all(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
                ensure(back.len() == 1 && &back[0] == f, || format!("{f:?} decoded as {back:?}"))?;
                let mut d = FrameDecoder::new();
                for (i, b) in bytes.iter().enumerate() {
                    d.feed(std::slice::from_ref(b));
                    let got = d.next_frame().map_err(|e| TestCaseError::fail(e.to_string()))?;
                    if i + 1 < bytes.len() {
                        ensure(got.is_none(), || format!("frame yielded from a {}-byte prefix", i + 1))?;
                    } else {
                        ensure(got.as_ref() == Some(f), || "full encoding did not yield the frame".into())?;
                    }
                }
                stream.extend(bytes);
            }
            let all = decode_all(&stream).map_err(|e| TestCaseError::fail(e.to_string()))?;
            ensure(all == frames, || "concatenated stream differs".into())?;
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} frame sequences round-trip, prefixes yield nothing"))
}

/// Oversized declared lengths and oversized frames are rejected; a decoder
/// that failed stays failed.
pub fn check_limits() -> Check {
    for declared in [MAX_FRAME_LEN as u64 + 1, 1 << 31, u32::MAX as u64] {
        let mut d = FrameDecoder::new();
        d.feed(&(declared as u32).to_be_bytes());
        match d.next_frame() {
            Err(ProtocolError::LengthOverflow(n)) if n == declared => {}
            other => return Err(format!("declared {declared}: {other:?}")),
        }
        if d.next_frame() != Err(ProtocolError::Poisoned) {
            return Err("decoder not poisoned after overflow".into());
        }
    }
    let mut d = FrameDecoder::new();
    d.feed(&(MAX_FRAME_LEN as u32).to_be_bytes());
    d.feed(&[b'{'; 1024]);
    if d.next_frame() != Ok(None) {
        return Err("a frame at the limit must wait for its payload".into());
    }
    let big = Frame::Snapshot {
        snapshot: SnapshotRef {
            t: 0,
            patient_id: "p".into(),
            mime: "image/png".into(),
            media: vec![7; MAX_FRAME_LEN * 3 / 4 + 16],
        },
    };
    match encode(&big) {
        Err(ProtocolError::FrameTooLarge(n)) if n > MAX_FRAME_LEN => {}
        other => return Err(format!("oversized encode: {:?}", other.map(|b| b.len()))),
    }
    let mut d = FrameDecoder::new();
    d.feed(&[0, 0]);
    if d.next_frame() != Ok(None) || d.pending() != 2 {
        return Err("truncated prefix must wait".into());
    }
    Ok("LengthOverflow, FrameTooLarge, poisoning, truncated prefix".into())
}
