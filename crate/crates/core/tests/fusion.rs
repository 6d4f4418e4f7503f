use isac_core::e3::{CirFrame, DetectionReport, E3Message, Payload, ReportPayload};
use isac_core::estimators::{RangeEstimate, RangeMethod};
use isac_core::xapp::{trilaterate, Ingest, SensingXapp, SiteGeometry, WindowOutcome, XappConfig, XappError};

const SITES: [[f64; 2]; 3] = [[0.0, 0.0], [600.0, 0.0], [0.0, 600.0]];

fn anchors(sites: &[[f64; 2]], target: [f64; 2]) -> Vec<([f64; 2], f64)> {
    sites
        .iter()
        .map(|&s| (s, (target[0] - s[0]).hypot(target[1] - s[1])))
        .collect()
}

#[test]
fn noiseless_fixture_is_exact() {
    let fix = trilaterate(&anchors(&SITES, [220.0, 260.0]), &XappConfig::default()).unwrap();
    assert!((fix.position[0] - 220.0).abs() <= 1e-6 && (fix.position[1] - 260.0).abs() <= 1e-6);
    assert!(fix.residual_m <= 1e-6);
}

#[test]
fn noiseless_grid_is_exact() {
    let config = XappConfig::default();
    for x in (-300..=900).step_by(75) {
        for y in (-300..=900).step_by(75) {
            let target = [x as f64 + 0.5, y as f64 + 0.25];
            let fix = trilaterate(&anchors(&SITES, target), &config).unwrap();
            let err = (fix.position[0] - target[0]).hypot(fix.position[1] - target[1]);
            assert!(err <= 1e-6, "{target:?}: {err}");
        }
    }
}

#[test]
fn overdetermined_fixture_is_exact() {
    let sites = [[0.0, 0.0], [600.0, 0.0], [0.0, 600.0], [700.0, 650.0]];
    let fix = trilaterate(&anchors(&sites, [123.0, 456.0]), &XappConfig::default()).unwrap();
    assert!((fix.position[0] - 123.0).abs() <= 1e-6 && (fix.position[1] - 456.0).abs() <= 1e-6);
}

#[test]
fn degenerate_inputs_are_rejected() {
    let config = XappConfig::default();
    let two = anchors(&SITES[..2], [10.0, 10.0]);
    assert_eq!(trilaterate(&two, &config), Err(XappError::TooFewSites(2)));
    let line = anchors(&[[0.0, 0.0], [100.0, 0.0], [300.0, 0.0]], [50.0, 80.0]);
    assert_eq!(trilaterate(&line, &config), Err(XappError::DegenerateGeometry));
}

fn geometry() -> Vec<SiteGeometry> {
    ["s1", "s2", "s3"]
        .iter()
        .zip(SITES)
        .map(|(id, position)| SiteGeometry {
            site_id: id.to_string(),
            position,
        })
        .collect()
}

fn range_report(site: &str, range_m: f64, timestamp_ns: u64) -> DetectionReport {
    DetectionReport {
        dapp_id: format!("d/{site}"),
        site_id: site.into(),
        model_version: "m:v1".into(),
        timestamp_ns,
        confidence: 1.0,
        payload: ReportPayload::Range(RangeEstimate {
            delay_s: range_m / isac_core::SPEED_OF_LIGHT,
            range_m,
            method: RangeMethod::Subspace,
            snapshots_used: 20,
        }),
    }
}

#[test]
fn xapp_fuses_windows_into_one_track() {
    let mut xapp = SensingXapp::new(XappConfig::default(), &geometry()).unwrap();
    let target = [220.0, 260.0];
    for w in 0..3u64 {
        for (id, (_, r)) in ["s1", "s2", "s3"].iter().zip(anchors(&SITES, target)) {
            let ingest = xapp.ingest(&range_report(id, r, w * 100_000_000 + 95_000_000)).unwrap();
            assert_eq!(ingest, Ingest::Buffered);
        }
    }
    let results = xapp.flush(300_000_000);
    assert_eq!(results.len(), 3);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.window_index, i as u64);
        match &r.outcome {
            WindowOutcome::Updated { track, sites } => {
                assert_eq!((*sites, track.track_id), (3, 1));
                let err = (track.position_m[0] - target[0]).hypot(track.position_m[1] - target[1]);
                assert!(err <= 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }
    let late = xapp.ingest(&range_report("s1", 100.0, 50_000_000)).unwrap();
    assert_eq!(late, Ingest::Gated);
}

#[test]
fn xapp_rejects_raw_frames_and_strangers() {
    let mut xapp = SensingXapp::new(XappConfig::default(), &geometry()).unwrap();
    let raw = E3Message::new(
        1,
        0,
        0,
        Payload::CirFrame(CirFrame {
            snapshot_index: 0,
            values: vec![],
        }),
    );
    assert_eq!(xapp.ingest_frame(&raw), Err(XappError::RawDataRejected("CIR")));
    assert_eq!(
        xapp.ingest(&range_report("s9", 10.0, 0)),
        Err(XappError::UnknownSite("s9".into()))
    );
    assert_eq!(xapp.ingest(&range_report("s1", -1.0, 0)).unwrap(), Ingest::Gated);
}
