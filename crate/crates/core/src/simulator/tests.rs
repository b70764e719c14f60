use super::*;
use crate::protocol::{Mode, Verdict};

fn model_for(cfg: &ScenarioConfig) -> Model {
    Model::generate(cfg.model.plan(), cfg.model.weights_seed).unwrap()
}

fn assert_conserved(m: &RunMetrics) {
    let s = &m.summary;
    assert_eq!(s.completed + s.in_flight, s.injected);
    for (i, f) in m.frames.iter().enumerate() {
        assert_eq!(f.frame_id as usize, i, "gap or reorder in the pose stream");
        assert!(f.complete_s >= f.capture_s);
    }
}

fn assert_stream_complete(m: &RunMetrics) {
    assert_conserved(m);
    assert!(
        m.summary.in_flight <= 2,
        "backlog at end: {}",
        m.summary.in_flight
    );
}

fn jam(from: f64, until: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::baseline();
    cfg.adversary = Adversary {
        kind: AdversaryKind::Jam,
        active_from: from,
        active_until: Some(until),
    };
    cfg
}

#[test]
fn honest_run_is_sound() {
    let cfg = ScenarioConfig::baseline();
    let m = run_scenario(&cfg).unwrap();
    let s = &m.summary;
    assert_stream_complete(&m);
    assert_eq!(s.counters.mismatches, 0);
    assert_eq!(s.counters.timeouts, 0);
    assert_eq!(s.mode_time.emergency_s, 0.0);
    assert_eq!(s.mode_time.fallback_s, 0.0);
    assert_eq!(s.final_mode, Mode::Normal);
    assert_eq!(s.counters.fog_poses, s.completed);
    assert_eq!(s.counters.frames_verified, s.completed);
    assert!(m
        .frames
        .iter()
        .all(|f| f.verdict == Some(Verdict::Match) && f.source == PoseSource::Fog));
    assert!(s.detection.first_detection_s.is_none());
}

#[test]
fn honest_poses_equal_local_pipeline() {
    let cfg = ScenarioConfig::baseline();
    let model = model_for(&cfg);
    let m = run_with(&cfg, &model, &mut SimCaches::default()).unwrap();
    for f in m.frames.iter().step_by(17) {
        let img =
            crate::netmodel::synthetic_frame(model.plan().input_shape, cfg.image_seed, f.frame_id);
        let [x, y, z, phi] = model.forward(&img).unwrap().values();
        assert_eq!((f.x, f.y, f.z, f.phi), (x, y, z, phi));
    }
}

#[test]
fn every_branch_tampered_is_caught_on_first_verified_frame() {
    for seed in 0..20 {
        let mut cfg = ScenarioConfig::baseline();
        cfg.seed = seed;
        cfg.duration_s = 3.0;
        cfg.adversary = Adversary {
            kind: AdversaryKind::TamperAll {
                rule: PayloadRule::Bitflip { bits: 1 },
            },
            active_from: 1.0,
            active_until: None,
        };
        let s = run_scenario(&cfg).unwrap().summary;
        assert_eq!(s.detection.frames_to_detection, Some(1));
        assert_eq!(s.counters.false_alarms, 0);
        assert!(s.detection.latency_s.unwrap() < 0.1);
    }
}

#[test]
fn replay_never_reaches_verifier() {
    let mut cfg = ScenarioConfig::baseline();
    cfg.duration_s = 4.0;
    cfg.adversary = Adversary {
        kind: AdversaryKind::Replay { depth: 1 },
        active_from: 1.0,
        active_until: None,
    };
    let m = run_scenario(&cfg).unwrap();
    let s = &m.summary;
    assert_eq!(s.counters.mismatches, 0);
    assert!(s.counters.stale_discarded > 0);
    assert!(s.counters.timeouts > 0);
    assert_eq!(s.final_mode, Mode::Fallback);
    for f in m.frames.iter().filter(|f| f.capture_s >= 1.0) {
        assert!(
            f.verdict.is_none(),
            "frame {} verified a replayed set",
            f.frame_id
        );
        assert_eq!(f.source, PoseSource::Fallback);
    }
    assert_conserved(&m);
}

#[test]
fn jam_engages_fallback_and_recovers_after_k_matches() {
    let cfg = jam(2.0, 5.0);
    let m = run_scenario(&cfg).unwrap();
    let s = &m.summary;
    assert_stream_complete(&m);
    let engaged = s.first_fallback_s.unwrap();
    assert!(
        engaged >= 2.0 && engaged <= 2.0 + cfg.timeout_s() + 1e-9,
        "fallback at {engaged}"
    );
    // after the jam lifts: fallback poses on k - 1 matches, then NORMAL on the k-th
    let after: Vec<&FrameRecord> = m.frames.iter().filter(|f| f.capture_s >= 5.0).collect();
    let first_normal = after.iter().position(|f| f.mode == Mode::Normal).unwrap();
    let matches = after[..=first_normal]
        .iter()
        .filter(|f| f.verdict == Some(Verdict::Match))
        .count();
    assert_eq!(matches as u32, cfg.hysteresis_k);
    assert_eq!(after[first_normal].source, PoseSource::Fog);
    assert!(after[..first_normal]
        .iter()
        .all(|f| f.source == PoseSource::Fallback));
    assert_eq!(s.final_mode, Mode::Normal);
    assert_eq!(s.counters.mismatches, 0);
}

#[test]
fn link_jam_interval_matches_adversary_jam() {
    let mut link = ScenarioConfig::baseline();
    link.link.jam_intervals = vec![(2.0, 5.0)];
    let a = run_scenario(&link).unwrap();
    let b = run_scenario(&jam(2.0, 5.0)).unwrap();
    assert_eq!(a.frames, b.frames);
}

#[test]
fn runs_are_deterministic() {
    let cfg = ScenarioConfig::demo();
    let a = serde_json::to_vec(&run_scenario(&cfg).unwrap()).unwrap();
    let b = serde_json::to_vec(&run_scenario(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(
        a,
        serde_json::to_vec(&run_scenario(&other).unwrap()).unwrap()
    );
}

#[test]
fn cache_reuse_does_not_change_results() {
    let cfg = ScenarioConfig::demo();
    let model = model_for(&cfg);
    let mut caches = SimCaches::default();
    let first = run_with(&cfg, &model, &mut caches).unwrap();
    let second = run_with(&cfg, &model, &mut caches).unwrap();
    assert_eq!(first, second);
    assert!(caches.edge.hits > 0);
}

#[test]
fn throughput_is_source_limited() {
    let mut cfg = ScenarioConfig::baseline();
    cfg.camera_rate = 5.0;
    let s = run_scenario(&cfg).unwrap().summary;
    assert!((s.throughput_fps.unwrap() - 5.0).abs() <= 0.05 * 5.0);
}

#[test]
fn throughput_follows_stage_latencies() {
    let mut cfg = ScenarioConfig::baseline();
    let model = model_for(&cfg);
    cfg.timing.edge_mac_rate = edge_rate_for_latency(&cfg, &model, 0.125).unwrap().unwrap();
    let nominal = nominal_latencies(&cfg, &model).unwrap();
    assert!((nominal.end_to_end - 0.125).abs() < 1e-9);
    let s = run_with(&cfg, &model, &mut SimCaches::default())
        .unwrap()
        .summary;
    assert!((s.throughput_fps.unwrap() - 8.0).abs() <= 0.05 * 8.0);
    assert!(s.counters.mismatches == 0 && s.counters.timeouts == 0);
}

#[test]
fn link_faults_are_channel_errors_not_detections() {
    let mut cfg = ScenarioConfig::baseline();
    cfg.link.loss_rate = 0.1;
    cfg.link.corruption_rate = 0.2;
    let m = run_scenario(&cfg).unwrap();
    let c = &m.summary.counters;
    assert!(c.messages_lost > 0 && c.channel_errors > 0);
    assert_eq!(c.mismatches, 0);
    assert_stream_complete(&m);
}

#[test]
fn demo_hovers_only_in_emergency() {
    let cfg = ScenarioConfig::demo();
    let m = run_scenario(&cfg).unwrap();
    let s = &m.summary;
    let modes: Vec<Mode> = s.mode_timeline.iter().map(|c| c.mode).collect();
    assert_eq!(modes.first(), Some(&Mode::Normal));
    assert!(modes.contains(&Mode::Emergency));
    assert_eq!(s.final_mode, Mode::Normal);
    assert!(s.crafted.is_some());
    for f in &m.frames {
        match f.mode {
            Mode::Emergency => assert_eq!(f.source, PoseSource::Hover),
            Mode::Normal => assert_eq!(f.source, PoseSource::Fog),
            Mode::Fallback => unreachable!("no timeouts in the demo"),
        }
    }
    assert!(m
        .frames
        .iter()
        .filter(|f| f.capture_s < 3.0 || f.capture_s >= 6.5)
        .all(|f| !f.tampered));
}

#[test]
fn stop_on_detection_truncates() {
    let mut cfg = ScenarioConfig::demo();
    cfg.stop_on_detection = true;
    let s = run_scenario(&cfg).unwrap().summary;
    let at = s.detection.first_detection_s.unwrap();
    assert_eq!(s.end_s, at);
    assert_eq!(s.counters.mismatches, 1);
}

#[test]
fn rejects_mismatched_model() {
    let cfg = ScenarioConfig::baseline();
    let model = Model::generate(cfg.model.plan().with_branches(4), 0).unwrap();
    assert!(matches!(
        run_with(&cfg, &model, &mut SimCaches::default()),
        Err(SimError::ModelMismatch)
    ));
}

#[test]
fn sweep_single_branch_always_first_frame() {
    let mut base = ScenarioConfig::baseline();
    base.duration_s = 3.0;
    base.adversary.active_from = 1.0;
    let r = run_sweep(&base, 100, &[1], &default_dt_grid()).unwrap();
    let b = &r.summary.branches[0];
    assert_eq!((b.detected, b.first_frame_detections), (100, 100));
    assert!(r
        .curve
        .iter()
        .filter(|p| p.dt_s >= 0.1)
        .all(|p| p.analytic == 1.0 && p.empirical_frames == 1.0));
    assert!(run_sweep(&base, 99, &[1], &[1.0]).is_err());
}

#[test]
fn curve_is_monotone_in_dt() {
    let samples: Vec<DetectionSample> = (0..50)
        .map(|i| DetectionSample {
            seed: i,
            delay_s: (i % 7 != 0).then_some(i as f64 * 0.05),
            frames: (i % 7 != 0).then_some(i / 3 + 1),
        })
        .collect();
    let c = detection_curve(8, 10.0, &samples, &default_dt_grid());
    for w in c.windows(2) {
        assert!(w[1].empirical_frames >= w[0].empirical_frames);
        assert!(w[1].empirical_time >= w[0].empirical_time);
        assert!(w[1].analytic >= w[0].analytic);
    }
}

#[test]
fn headline_reports_the_gap() {
    let h = Headline::compute(None).unwrap();
    assert_eq!(h.stated_probability, 0.95);
    assert!((h.model_probability_at_stated_fps - (1.0 - (7.0f64 / 8.0).powi(16))).abs() < 1e-12);
    assert!((h.required_for_stated_probability.continuous_fps - 11.2173).abs() < 1e-3);
    assert_eq!(h.required_for_stated_probability.frames, 23);
    assert!(h.discrepancy.contains("0.8819"));
}
