use super::*;
use crate::e3::{encode, CirFrame, E3Message, IqGrid, DEFAULT_IQ_SCALE};
use crate::estimators::{EnergyDetector, MusicSpec, RangeMethod};
use crate::waveform::{
    synth_cir_snapshots, synth_echo_grid, Fading, MultipathProfile, Noise, OfdmConfig, PathSpec, RadarTarget,
};
use crate::SPEED_OF_LIGHT;

fn site(id: &str, budget: f64) -> SiteProfile {
    SiteProfile {
        site_id: id.into(),
        tags: Default::default(),
        ru: Default::default(),
        compute_budget: budget,
        streams: [StreamKind::Cir, StreamKind::Iq].into(),
    }
}

fn small_music() -> MusicSpec {
    MusicSpec {
        subarray_len: 24,
        model_order: 2,
        delay_max_s: 600e-9,
        ..MusicSpec::default()
    }
}

fn ranging(id: &str, version: &str, cost: f64) -> DappDescriptor {
    DappDescriptor {
        dapp_id: id.into(),
        input_kind: StreamKind::Cir,
        function: DappFunction::Ranging {
            method: RangeMethod::Subspace,
            snapshots_per_report: 20,
            subcarrier_spacing_hz: 30e3,
            music: small_music(),
        },
        compute_cost: cost,
        model_version: version.into(),
    }
}

const TRUE_DELAY: f64 = 150e-9;

fn cir_frames(count: usize, seed: u64) -> Vec<Payload> {
    let profile = MultipathProfile::new(vec![
        PathSpec {
            delay_s: TRUE_DELAY,
            mean_power: 1.0,
            fading: Fading::ComplexNormal,
        },
        PathSpec {
            delay_s: 400e-9,
            mean_power: 0.5,
            fading: Fading::ComplexNormal,
        },
    ])
    .unwrap();
    synth_cir_snapshots(&profile, 64, 30e3, count, 100.0, seed)
        .unwrap()
        .iter()
        .map(|s| Payload::CirFrame(CirFrame::from_snapshot(s)))
        .collect()
}

fn publish_all(rt: &mut Runtime, site_id: &str, frames: &[Payload], start: usize) {
    for (i, f) in frames.iter().enumerate() {
        let ts = (start + i) as u64 * 5_000_000;
        rt.publish(site_id, StreamKind::Cir, ts, f).unwrap();
    }
}

struct Crashing;

impl SensingFunction for Crashing {
    fn process(&mut self, _frame: &E3Message) -> Result<Option<Detection>, String> {
        panic!("estimator blew up");
    }
}

struct Failing;

impl SensingFunction for Failing {
    fn process(&mut self, _frame: &E3Message) -> Result<Option<Detection>, String> {
        Err("bad input".into())
    }
}

#[test]
fn ranging_buffers_until_m_snapshots() {
    let mut rt = Runtime::new();
    rt.add_site(site("a", 10.0)).unwrap();
    let h = rt.deploy(ranging("r", "v1", 1.0), "a").unwrap();
    assert_eq!(rt.state(h).unwrap(), DappState::Running);
    let frames = cir_frames(20, 1);
    for (i, f) in frames.iter().enumerate() {
        rt.publish("a", StreamKind::Cir, i as u64, f).unwrap();
        let out = rt.step("a").unwrap();
        if i < 19 {
            assert!(out.is_empty(), "frame {i}");
        } else {
            assert_eq!(out.len(), 1);
            match &out[0].payload {
                ReportPayload::Range(e) => {
                    assert_eq!(e.snapshots_used, 20);
                    assert!((e.delay_s - TRUE_DELAY).abs() < 5e-9, "{e:?}");
                }
                other => panic!("{other:?}"),
            }
        }
    }
}

#[test]
fn reports_published_upstream() {
    let mut rt = Runtime::new();
    rt.add_site(site("a", 10.0)).unwrap();
    let upstream = rt.hub_mut("a").unwrap().subscribe(StreamKind::Report, vec![]).unwrap();
    rt.deploy(ranging("r", "v1", 1.0), "a").unwrap();
    publish_all(&mut rt, "a", &cir_frames(40, 2), 0);
    let local = rt.step("a").unwrap();
    let remote: Vec<DetectionReport> = upstream
        .drain()
        .into_iter()
        .map(|m| match m.unwrap().payload {
            Payload::Report(r) => r,
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(local.len(), 2);
    assert_eq!(local, remote);
}

#[test]
fn over_budget_deploy_leaves_site_unchanged() {
    let mut rt = Runtime::new();
    rt.add_site(site("a", 3.0)).unwrap();
    rt.deploy(ranging("r1", "v1", 2.0), "a").unwrap();
    let subs = rt.hub("a").unwrap().subscriber_count(StreamKind::Cir);
    let err = rt.deploy(ranging("r2", "v1", 1.5), "a").unwrap_err();
    assert!(matches!(err, RuntimeError::InsufficientCompute { .. }));
    assert_eq!(rt.used_compute("a"), 2.0);
    assert_eq!(rt.hub("a").unwrap().subscriber_count(StreamKind::Cir), subs);
    assert_eq!(rt.handles().count(), 1);
}

#[test]
fn missing_stream_and_site() {
    let mut rt = Runtime::new();
    let mut p = site("a", 3.0);
    p.streams = [StreamKind::Iq].into();
    rt.add_site(p).unwrap();
    assert!(matches!(
        rt.deploy(ranging("r", "v1", 1.0), "a"),
        Err(RuntimeError::StreamUnavailable { .. })
    ));
    assert!(matches!(rt.deploy(ranging("r", "v1", 1.0), "zz"), Err(RuntimeError::UnknownSite(_))));
    assert!(matches!(rt.add_site(site("a", 1.0)), Err(RuntimeError::DuplicateSite(_))));
}

#[test]
fn parallel_dapps_see_identical_input() {
    let mut rt = Runtime::new();
    rt.add_site(site("a", 10.0)).unwrap();
    let h1 = rt.deploy(ranging("r1", "v1", 1.0), "a").unwrap();
    let h2 = rt.deploy(ranging("r2", "v1", 1.0), "a").unwrap();
    publish_all(&mut rt, "a", &cir_frames(60, 3), 0);
    rt.step("a").unwrap();
    let p1: Vec<_> = rt.reports(h1).unwrap().iter().map(|r| r.report.payload.clone()).collect();
    let p2: Vec<_> = rt.reports(h2).unwrap().iter().map(|r| r.report.payload.clone()).collect();
    assert_eq!(p1.len(), 3);
    assert_eq!(p1, p2);
}

fn encoded_reports(rt: &Runtime, h: DappHandle) -> Vec<Vec<u8>> {
    rt.reports(h)
        .unwrap()
        .iter()
        .map(|r| encode(&E3Message::new(1, 0, r.report.timestamp_ns, Payload::Report(r.report.clone()))).unwrap())
        .collect()
}

#[test]
fn crashing_dapp_is_isolated() {
    let frames = cir_frames(100, 4);
    let solo = {
        let mut rt = Runtime::new();
        rt.add_site(site("a", 10.0)).unwrap();
        let h = rt.deploy(ranging("r", "v1", 1.0), "a").unwrap();
        publish_all(&mut rt, "a", &frames, 0);
        rt.step("a").unwrap();
        encoded_reports(&rt, h)
    };
    let mut rt = Runtime::new();
    rt.add_site(site("a", 10.0)).unwrap();
    let crash = rt
        .deploy_plugin(ranging("boom", "v0", 1.0), "a", Box::new(Crashing))
        .unwrap();
    let h = rt.deploy(ranging("r", "v1", 1.0), "a").unwrap();
    for (i, f) in frames.iter().enumerate() {
        rt.publish("a", StreamKind::Cir, i as u64 * 5_000_000, f).unwrap();
        if i % 7 == 6 {
            rt.step("a").unwrap();
        }
    }
    rt.step("a").unwrap();
    assert_eq!(encoded_reports(&rt, h), solo);
    assert_eq!(rt.state(crash).unwrap(), DappState::Degraded);
    let c = rt.counters(crash).unwrap();
    assert_eq!(c.errors, 100);
    assert_eq!(c.frames_in, c.frames_processed + c.frames_dropped);
    assert!(rt
        .reports(crash)
        .unwrap()
        .iter()
        .all(|r| matches!(&r.report.payload, ReportPayload::Error { reason } if reason.contains("blew up"))));
}

#[test]
fn degrades_after_consecutive_errors_and_recovers_on_replace() {
    let mut rt = Runtime::new().with_degrade_after(5);
    rt.add_site(site("a", 10.0)).unwrap();
    let h = rt.deploy_plugin(ranging("f", "v0", 1.0), "a", Box::new(Failing)).unwrap();
    let frames = cir_frames(5, 5);
    publish_all(&mut rt, "a", &frames[..4], 0);
    rt.step("a").unwrap();
    assert_eq!(rt.state(h).unwrap(), DappState::Running);
    publish_all(&mut rt, "a", &frames[4..], 4);
    rt.step("a").unwrap();
    assert_eq!(rt.state(h).unwrap(), DappState::Degraded);
    rt.replace(h, ranging("f", "v1", 1.0)).unwrap();
    assert_eq!(rt.state(h).unwrap(), DappState::Running);
    rt.stop(h).unwrap();
    assert_eq!(rt.state(h).unwrap(), DappState::Stopped);
    assert!(rt.stop(h).is_err());
    assert!(rt.replace(h, ranging("f", "v2", 1.0)).is_err());
}

#[test]
fn replace_mid_stream_processes_each_frame_once() {
    let mut rt = Runtime::new();
    rt.add_site(site("a", 10.0)).unwrap();
    let h = rt
        .deploy(
            DappDescriptor {
                function: DappFunction::Ranging {
                    method: RangeMethod::Peak,
                    snapshots_per_report: 10,
                    subcarrier_spacing_hz: 30e3,
                    music: MusicSpec::default(),
                },
                ..ranging("r", "peak-v1", 1.0)
            },
            "a",
        )
        .unwrap();
    let frames = cir_frames(1000, 6);
    for (i, f) in frames.iter().enumerate() {
        rt.publish("a", StreamKind::Cir, i as u64 * 1_000_000, f).unwrap();
        if i % 50 == 49 {
            rt.step("a").unwrap();
        }
        if i == 499 {
            rt.replace(
                h,
                DappDescriptor {
                    function: DappFunction::Ranging {
                        method: RangeMethod::Peak,
                        snapshots_per_report: 10,
                        subcarrier_spacing_hz: 30e3,
                        music: MusicSpec::default(),
                    },
                    ..ranging("r", "peak-v2", 1.0)
                },
            )
            .unwrap();
        }
    }
    rt.step("a").unwrap();
    let c = rt.counters(h).unwrap();
    assert_eq!(c.frames_processed, 1000);
    assert_eq!(c.frames_in, 1000);
    let versions: Vec<&str> = rt
        .reports(h)
        .unwrap()
        .iter()
        .map(|r| r.report.model_version.as_str())
        .collect();
    assert_eq!(versions.len(), 100);
    assert!(versions[..50].iter().all(|v| *v == "peak-v1"));
    assert!(versions[50..].iter().all(|v| *v == "peak-v2"));
}

#[test]
fn replace_over_budget_keeps_old_version() {
    let mut rt = Runtime::new();
    rt.add_site(site("a", 3.0)).unwrap();
    let h = rt.deploy(ranging("r", "v1", 2.0), "a").unwrap();
    let err = rt.replace(h, ranging("r", "v2", 3.5)).unwrap_err();
    assert!(matches!(err, RuntimeError::InsufficientCompute { .. }));
    assert_eq!(rt.descriptor(h).unwrap().model_version, "v1");
    assert_eq!(rt.state(h).unwrap(), DappState::Running);
    assert_eq!(rt.used_compute("a"), 2.0);
    rt.replace(h, ranging("r", "v2", 3.0)).unwrap();
    assert_eq!(rt.used_compute("a"), 3.0);
}

#[test]
fn overflow_is_counted_as_dropped() {
    let mut rt = Runtime::new();
    rt.add_site(site("a", 3.0)).unwrap();
    let h = rt.deploy_plugin(ranging("f", "v0", 1.0), "a", Box::new(Failing)).unwrap();
    let frames = cir_frames(300, 7);
    publish_all(&mut rt, "a", &frames, 0);
    rt.step("a").unwrap();
    let c = rt.counters(h).unwrap();
    assert_eq!(c.frames_in, 300);
    assert_eq!(c.frames_dropped, 44);
    assert_eq!(c.frames_processed, 256);
}

#[test]
fn monostatic_dapp_recovers_target() {
    let ofdm = OfdmConfig::fr1_sensing(50e6, 0.5e-3).unwrap();
    let target = RadarTarget::new(500.0, 25.0, -10.0).unwrap();
    let grid = synth_echo_grid(&ofdm, &target, 1.0, Noise::Seeded(9)).unwrap();
    let mut rt = Runtime::new();
    rt.add_site(site("a", 3.0)).unwrap();
    let h = rt
        .deploy(
            DappDescriptor {
                dapp_id: "mono".into(),
                input_kind: StreamKind::Iq,
                function: DappFunction::Monostatic { ofdm, zero_pad: 4 },
                compute_cost: 1.0,
                model_version: "fft-v1".into(),
            },
            "a",
        )
        .unwrap();
    let q = IqGrid::quantize(&grid, DEFAULT_IQ_SCALE).unwrap();
    rt.publish("a", StreamKind::Iq, 0, &Payload::IqGrid(q)).unwrap();
    let out = rt.step("a").unwrap();
    let ReportPayload::DelayDoppler(e) = &out[0].payload else {
        panic!("{out:?}");
    };
    let range_res = SPEED_OF_LIGHT / (2.0 * ofdm.bandwidth_hz);
    assert!((e.range_m - 500.0).abs() < range_res, "{e:?}");
    assert!((e.velocity_mps - 25.0).abs() < 3.0, "{e:?}");
    assert!(out[0].confidence > 0.4 && out[0].confidence <= 1.0);
    let kpi = rt
        .report_kpis(h, (0, 1), Some(&GroundTruth::Range { range_m: 500.0 }), range_res)
        .unwrap();
    assert_eq!(kpi.detection_probability, Some(1.0));
}

#[test]
fn spectrum_dapp_all_clear_on_noise() {
    let ofdm = OfdmConfig::fr1_sensing(10e6, 0.25e-3).unwrap();
    let mut rt = Runtime::new();
    rt.add_site(site("a", 3.0)).unwrap();
    let h = rt
        .deploy(
            DappDescriptor {
                dapp_id: "spec".into(),
                input_kind: StreamKind::Iq,
                function: DappFunction::Spectrum {
                    ofdm,
                    detector: EnergyDetector {
                        bands: 8,
                        threshold_db: 6.0,
                        noise_power: 1.0,
                    },
                },
                compute_cost: 0.5,
                model_version: "ed-v1".into(),
            },
            "a",
        )
        .unwrap();
    // A vanishing target leaves an essentially noise-only grid.
    let noise = synth_echo_grid(&ofdm, &RadarTarget::drone(), 1e-12, Noise::Seeded(11)).unwrap();
    for i in 0..20 {
        let q = IqGrid::quantize(&noise, DEFAULT_IQ_SCALE).unwrap();
        rt.publish("a", StreamKind::Iq, i, &Payload::IqGrid(q)).unwrap();
    }
    let out = rt.step("a").unwrap();
    assert_eq!(out.len(), 20);
    for r in &out {
        assert_eq!(r.payload, ReportPayload::BandOccupancy { occupied: vec![false; 8] });
    }
    let kpi = rt
        .report_kpis(
            h,
            (0, 100),
            Some(&GroundTruth::Occupancy {
                occupied: vec![false; 8],
            }),
            1.0,
        )
        .unwrap();
    assert_eq!(kpi.false_alarm_rate, Some(0.0));
    assert_eq!(kpi.detection_probability, None);
}

#[test]
fn kpis_for_noiseless_input_and_idle_dapp() {
    let profile = MultipathProfile::new(vec![PathSpec {
        delay_s: TRUE_DELAY,
        mean_power: 1.0,
        fading: Fading::Fixed { phase_rad: 0.3 },
    }])
    .unwrap();
    let snaps = synth_cir_snapshots(&profile, 64, 30e3, 40, f64::INFINITY, 0).unwrap();
    let mut rt = Runtime::new();
    rt.add_site(site("a", 3.0)).unwrap();
    let h = rt.deploy(ranging("r", "v1", 1.0), "a").unwrap();
    let idle = rt.deploy(ranging("idle", "v1", 1.0), "a").unwrap();
    rt.stop(idle).unwrap();
    for (i, s) in snaps.iter().enumerate() {
        rt.publish("a", StreamKind::Cir, i as u64 * 5_000_000, &Payload::CirFrame(CirFrame::from_snapshot(s)))
            .unwrap();
    }
    rt.step("a").unwrap();
    let truth = GroundTruth::Range {
        range_m: TRUE_DELAY * SPEED_OF_LIGHT,
    };
    let kpi = rt.report_kpis(h, (0, 200_000_000), Some(&truth), 1.0).unwrap();
    assert_eq!(kpi.reports, 2);
    assert_eq!(kpi.detection_probability, Some(1.0));
    assert_eq!(kpi.false_alarm_rate, Some(0.0));
    assert!(kpi.localization_rmse_m.unwrap() < 0.05, "{kpi:?}");
    assert!((kpi.processing_latency_s - 19.0 * 5e-3).abs() < 1e-12);
    assert!(matches!(
        rt.report_kpis(idle, (0, 200_000_000), Some(&truth), 1.0),
        Err(RuntimeError::NoData)
    ));
}
