use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Mode, Verdict};

/// Where an emitted pose came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    /// Head run on a verified fog branch set.
    Fog,
    /// Last trusted pose held.
    Hover,
    /// Onboard fallback network.
    Fallback,
}

/// One row per completed camera frame; column order is the CSV order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub capture_s: f64,
    pub complete_s: f64,
    pub latency_s: f64,
    pub mode: Mode,
    pub source: PoseSource,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub verified_branch: Option<usize>,
    pub verdict: Option<Verdict>,
    /// Ground truth: the verified branch set differed from the honest one.
    pub tampered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    pub time_s: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeTimes {
    pub normal_s: f64,
    pub emergency_s: f64,
    pub fallback_s: f64,
}

impl ModeTimes {
    /// Integrates a timeline (starting at 0) up to `end`.
    pub fn from_timeline(timeline: &[ModeChange], end: f64) -> Self {
        let mut t = Self::default();
        for (i, c) in timeline.iter().enumerate() {
            let until = timeline.get(i + 1).map_or(end, |n| n.time_s).min(end);
            let span = (until - c.time_s).max(0.0);
            match c.mode {
                Mode::Normal => t.normal_s += span,
                Mode::Emergency => t.emergency_s += span,
                Mode::Fallback => t.fallback_s += span,
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub frames_verified: u64,
    pub matches: u64,
    pub mismatches: u64,
    /// Mismatches on untampered branch sets; nonzero means broken bit-exactness.
    pub false_alarms: u64,
    pub tampered_frames_verified: u64,
    pub stale_discarded: u64,
    pub timeouts: u64,
    /// CRC failures and malformed frames.
    pub channel_errors: u64,
    pub messages_sent: u64,
    pub messages_jammed: u64,
    pub messages_lost: u64,
    /// Verified frames whose fog-derived pose reached the output.
    pub fog_poses: u64,
    pub hover_poses: u64,
    pub fallback_poses: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Detection {
    /// Start of the adversary's active window, when it tampers.
    pub onset_s: Option<f64>,
    pub first_detection_s: Option<f64>,
    pub detection_frame: Option<u32>,
    pub latency_s: Option<f64>,
    /// Tampered frames verified up to and including the detecting one.
    pub frames_to_detection: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CraftedReport {
    pub target_x: f64,
    pub chosen_x: f64,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n_branches: usize,
    pub weights_fingerprint: String,
    pub camera_rate: f64,
    pub duration_s: f64,
    /// Simulated time at which the run stopped.
    pub end_s: f64,
    pub injected: u64,
    pub completed: u64,
    pub in_flight: u64,
    pub throughput_fps: Option<f64>,
    pub mean_latency_s: Option<f64>,
    pub final_mode: Mode,
    pub mode_time: ModeTimes,
    pub mode_timeline: Vec<ModeChange>,
    pub first_fallback_s: Option<f64>,
    pub detection: Detection,
    pub crafted: Option<CraftedReport>,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub frames: Vec<FrameRecord>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("run of {0} s is too short to measure steady-state throughput (need at least 2 s)")]
pub struct InsufficientData(pub f64);

/// Steady-state throughput: completion intervals after the first second,
/// measured between the first and last pose completed in that window.
pub fn measure_throughput(frames: &[FrameRecord], end_s: f64) -> Result<f64, InsufficientData> {
    if end_s.is_nan() || end_s < 2.0 {
        return Err(InsufficientData(end_s));
    }
    let done: Vec<f64> = frames
        .iter()
        .map(|f| f.complete_s)
        .filter(|&t| t >= 1.0 && t <= end_s)
        .collect();
    match (done.first(), done.last()) {
        (Some(&a), Some(&b)) if done.len() >= 2 && b > a => Ok((done.len() - 1) as f64 / (b - a)),
        _ => Ok(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(complete: f64) -> FrameRecord {
        FrameRecord {
            frame_id: 0,
            capture_s: 0.0,
            complete_s: complete,
            latency_s: 0.0,
            mode: Mode::Normal,
            source: PoseSource::Fog,
            x: 0.0,
            y: 0.0,
            z: 0.0,
            phi: 0.0,
            verified_branch: None,
            verdict: None,
            tampered: false,
        }
    }

    #[test]
    fn throughput_excludes_first_second() {
        let frames: Vec<FrameRecord> = (0..50).map(|i| rec(i as f64 * 0.1 + 0.05)).collect();
        assert!((measure_throughput(&frames, 5.0).unwrap() - 10.0).abs() < 1e-9);
        assert!(measure_throughput(&frames, 1.5).is_err());
        // a trailing idle gap does not dilute the rate
        let paced: Vec<FrameRecord> = (1..80).map(|i| rec(i as f64 * 0.125)).collect();
        assert!((measure_throughput(&paced, 10.0).unwrap() - 8.0).abs() < 1e-9);
        assert_eq!(measure_throughput(&[], 10.0).unwrap(), 0.0);
    }

    #[test]
    fn mode_integration() {
        let tl = [
            ModeChange {
                time_s: 0.0,
                mode: Mode::Normal,
            },
            ModeChange {
                time_s: 2.0,
                mode: Mode::Emergency,
            },
            ModeChange {
                time_s: 2.5,
                mode: Mode::Normal,
            },
            ModeChange {
                time_s: 4.0,
                mode: Mode::Fallback,
            },
        ];
        let t = ModeTimes::from_timeline(&tl, 5.0);
        assert_eq!((t.normal_s, t.emergency_s, t.fallback_s), (3.5, 0.5, 1.0));
    }
}
