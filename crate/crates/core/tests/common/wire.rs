//! Golden E3 vectors and random message strategies.

use std::path::Path;

use isac_core::e3::{CirFrame, DetectionReport, E3Message, IqGrid, Payload, ReportPayload, StreamKind};
use isac_core::estimators::{DelayDopplerEstimate, RangeEstimate, RangeMethod};
use num_complex::Complex32;
use proptest::prelude::*;

/// Reads a `.hex` vector: whitespace-separated bytes, `#` starts a comment line.
pub fn golden(name: &str) -> Vec<u8> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .map(|b| u8::from_str_radix(&b, 16).unwrap())
        .collect()
}

/// Every golden file with the message it must encode.
pub fn golden_cases() -> Vec<(&'static str, E3Message)> {
    vec![
    (
        "subscribe_cir.hex",
        E3Message::new(
            0,
            0,
            0,
            Payload::Subscribe {
                kind: StreamKind::Cir,
                params: vec![("m".into(), 20.0)],
            },
        ),
    ),
    ("sub_ack.hex", E3Message::new(0, 1, 0, Payload::SubAck { stream_id: 0x0102 })),
    (
        "iq_grid_2x1.hex",
        E3Message::new(
            1,
            0,
            0,
            Payload::IqGrid(IqGrid {
                n: 2,
                m: 1,
                samples: vec![(1, -1), (0, 0)],
            }),
        ),
    ),
    (
        "cir_frame.hex",
        E3Message::new(
            3,
            7,
            1_000_000,
            Payload::CirFrame(CirFrame {
                snapshot_index: 5,
                values: vec![Complex32::new(1.0, 0.0), Complex32::new(-0.5, 2.0)],
            }),
        ),
    ),
    (
        "report_range.hex",
        E3Message::new(
            9,
            42,
            95_000_000,
            Payload::Report(DetectionReport {
                dapp_id: "d".into(),
                site_id: "s".into(),
                model_version: "m:v1".into(),
                timestamp_ns: 95_000_000,
                confidence: 1.0,
                payload: ReportPayload::Range(RangeEstimate {
                    delay_s: 2f64.powi(-20),
                    range_m: 300.0,
                    method: RangeMethod::Subspace,
                    snapshots_used: 20,
                }),
            }),
        ),
    ),
    (
        "kpm_flagged.hex",
        E3Message::new(2, 1, 0, Payload::Kpm(vec![(1, 0.5)])).with_flags(1),
    ),
    ("unsubscribe.hex", E3Message::new(4, 0, 0, Payload::Unsubscribe)),
    (
        "error_404.hex",
        E3Message::new(
            0,
            3,
            0,
            Payload::Error {
                code: 404,
                text: "no".into(),
            },
        ),
    ),
    ]
}

pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e12..1e12f64, Just(0.0), Just(f64::MAX), Just(f64::MIN_POSITIVE)]
}

pub fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9:/_.-]{0,16}"
}

pub fn kind() -> impl Strategy<Value = StreamKind> {
    prop_oneof![
        Just(StreamKind::Iq),
        Just(StreamKind::Cir),
        Just(StreamKind::Kpm),
        Just(StreamKind::Report)
    ]
}

pub fn report_payload() -> impl Strategy<Value = ReportPayload> {
    prop_oneof![
        (finite(), finite(), finite(), finite(), finite()).prop_map(|(a, b, c, d, e)| ReportPayload::DelayDoppler(
            DelayDopplerEstimate {
                delay_s: a,
                doppler_hz: b,
                range_m: c,
                velocity_mps: d,
                peak_power: e,
            }
        )),
        (finite(), finite(), any::<bool>(), 0usize..100_000).prop_map(|(d, r, sub, n)| ReportPayload::Range(
            RangeEstimate {
                delay_s: d,
                range_m: r,
                method: if sub { RangeMethod::Subspace } else { RangeMethod::Peak },
                snapshots_used: n,
            }
        )),
        prop::collection::vec(any::<bool>(), 0..40).prop_map(|occupied| ReportPayload::BandOccupancy { occupied }),
        (any::<u32>(), finite(), finite(), finite(), finite(), finite()).prop_map(|(track_id, x, y, vx, vy, r)| {
            ReportPayload::Track {
                track_id,
                x,
                y,
                vx,
                vy,
                residual_m: r,
            }
        }),
        text().prop_map(|reason| ReportPayload::Error { reason }),
    ]
}

pub fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        (kind(), prop::collection::vec((text(), finite()), 0..4))
            .prop_map(|(kind, params)| Payload::Subscribe { kind, params }),
        any::<u16>().prop_map(|stream_id| Payload::SubAck { stream_id }),
        (0u16..12, 0u16..6)
            .prop_flat_map(|(n, m)| {
                prop::collection::vec(any::<(i16, i16)>(), n as usize * m as usize)
                    .prop_map(move |samples| Payload::IqGrid(IqGrid { n, m, samples }))
            }),
        (any::<u16>(), prop::collection::vec((-1e6f32..1e6, -1e6f32..1e6), 0..64)).prop_map(|(idx, v)| {
            Payload::CirFrame(CirFrame {
                snapshot_index: idx,
                values: v.into_iter().map(|(re, im)| Complex32::new(re, im)).collect(),
            })
        }),
        (text(), text(), text(), any::<u64>(), 0.0..=1.0f64, report_payload()).prop_map(
            |(dapp_id, site_id, model_version, timestamp_ns, confidence, payload)| Payload::Report(DetectionReport {
                dapp_id,
                site_id,
                model_version,
                timestamp_ns,
                confidence,
                payload,
            })
        ),
        prop::collection::vec((any::<u16>(), finite()), 0..8).prop_map(Payload::Kpm),
        Just(Payload::Unsubscribe),
        (any::<u16>(), text()).prop_map(|(code, text)| Payload::Error { code, text }),
    ]
}

pub fn message() -> impl Strategy<Value = E3Message> {
    (any::<u16>(), any::<u32>(), any::<u64>(), any::<u8>(), payload())
        .prop_map(|(stream, seq, ts, flags, p)| E3Message::new(stream, seq, ts, p).with_flags(flags))
}
