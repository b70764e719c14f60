//! Discrete-event simulation of the edge, the fog, the link between them and
//! an optional adversary on the fog side.

mod adversary;
mod config;
mod engine;
mod metrics;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    parse_json, Adversary, AdversaryKind, ConfigError, LinkModel, ModelConfig, NodeTiming,
    PayloadRule, ScenarioConfig,
};
pub use engine::{
    edge_rate_for_latency, message_sizes, nominal_latencies, run_scenario, run_with, ForwardCache,
    SimCaches, StageTimes,
};
pub use metrics::{
    measure_throughput, Counters, CraftedReport, Detection, FrameRecord, InsufficientData,
    ModeChange, ModeTimes, PoseSource, RunMetrics, RunSummary,
};

use crate::netmodel::{Model, ModelError};
use crate::planner::{
    detection_probability, required_fps, verified_frames, PlannerError, RequiredRate,
};
use crate::protocol::{VerifierError, WireError};
use crate::qtensor::TensorError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("model plan does not match the scenario's model section")]
    ModelMismatch,
}

/// Detection delays of one sweep run; `None` when the run ended undetected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSample {
    pub seed: u64,
    pub delay_s: Option<f64>,
    pub frames: Option<u64>,
}

impl DetectionSample {
    pub fn from_summary(s: &RunSummary) -> Self {
        Self {
            seed: s.seed,
            delay_s: s.detection.latency_s,
            frames: s.detection.frames_to_detection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_branches: usize,
    pub dt_s: f64,
    /// Verified frames per second used by the analytic model.
    pub fps: f64,
    pub verified_frames: u64,
    pub analytic: f64,
    /// Share of runs detected within the first `verified_frames` tampered frames.
    pub empirical_frames: f64,
    /// Share of runs detected within `dt` seconds of onset.
    pub empirical_time: f64,
}

/// Empirical detection CDF over `samples` beside the geometric model at `fps`.
pub fn detection_curve(
    n: usize,
    fps: f64,
    samples: &[DetectionSample],
    dt_grid: &[f64],
) -> Vec<CurvePoint> {
    let total = samples.len().max(1) as f64;
    dt_grid
        .iter()
        .map(|&dt| {
            let m = verified_frames(fps, dt);
            let by_frames = samples
                .iter()
                .filter(|s| s.frames.is_some_and(|f| f <= m))
                .count();
            let by_time = samples
                .iter()
                .filter(|s| s.delay_s.is_some_and(|d| d <= dt + 1e-9))
                .count();
            CurvePoint {
                n_branches: n,
                dt_s: dt,
                fps,
                verified_frames: m,
                analytic: detection_probability(n, fps, dt),
                empirical_frames: by_frames as f64 / total,
                empirical_time: by_time as f64 / total,
            }
        })
        .collect()
}

pub const MIN_SWEEP_SEEDS: u64 = 100;
pub const SWEEP_BRANCH_COUNTS: [usize; 4] = [1, 2, 4, 8];
pub const HEADLINE_PROBABILITY: f64 = 0.95;
pub const HEADLINE_DT_S: f64 = 2.0;
pub const HEADLINE_BRANCHES: usize = 8;
pub const HEADLINE_FPS: f64 = 8.0;

/// Default grid: 0.1 s to 4 s.
pub fn default_dt_grid() -> Vec<f64> {
    (1..=40).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSweep {
    pub n_branches: usize,
    pub fps: f64,
    pub runs: u64,
    pub detected: u64,
    pub mean_frames_to_detection: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub first_frame_detections: u64,
    pub false_alarms: u64,
}

/// The stated operating point next to what the geometric model predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub n_branches: usize,
    pub dt_s: f64,
    pub stated_probability: f64,
    pub stated_fps: f64,
    pub model_probability_at_stated_fps: f64,
    pub required_for_stated_probability: RequiredRate,
    pub empirical_probability_at_stated_fps: Option<f64>,
    pub discrepancy: String,
}

impl Headline {
    pub fn compute(empirical: Option<f64>) -> Result<Self, SimError> {
        let model = detection_probability(HEADLINE_BRANCHES, HEADLINE_FPS, HEADLINE_DT_S);
        let req = required_fps(HEADLINE_BRANCHES, HEADLINE_PROBABILITY, HEADLINE_DT_S)?;
        let discrepancy = format!(
            "stated {:.2} detection within {} s for N={} at ~{} fps; the independent uniform model gives {:.4} at {} fps \
             ({} verified frames) and needs {:.2} fps continuous ({} frames, {:.1} fps whole) for {:.2}",
            HEADLINE_PROBABILITY,
            HEADLINE_DT_S,
            HEADLINE_BRANCHES,
            HEADLINE_FPS,
            model,
            HEADLINE_FPS,
            verified_frames(HEADLINE_FPS, HEADLINE_DT_S),
            req.continuous_fps,
            req.frames,
            req.fps,
            HEADLINE_PROBABILITY,
        );
        Ok(Self {
            n_branches: HEADLINE_BRANCHES,
            dt_s: HEADLINE_DT_S,
            stated_probability: HEADLINE_PROBABILITY,
            stated_fps: HEADLINE_FPS,
            model_probability_at_stated_fps: model,
            required_for_stated_probability: req,
            empirical_probability_at_stated_fps: empirical,
            discrepancy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub seeds: u64,
    pub base_seed: u64,
    pub branches: Vec<BranchSweep>,
    pub headline: Headline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub curve: Vec<CurvePoint>,
    pub summary: SweepSummary,
}

/// Verified frame rate of the honest pipeline: camera-limited or stage-limited.
pub fn analytic_fps(cfg: &ScenarioConfig, model: &Model) -> Result<f64, SimError> {
    Ok(cfg.camera_rate.min(nominal_latencies(cfg, model)?.fps()))
}

/// The sweep's per-branch-count scenario: the base config with the branch
/// count replaced, a tampering adversary guaranteed, and the run stopped at
/// the first mismatch.
pub fn sweep_scenario(base: &ScenarioConfig, n: usize) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.model.n_branches = n;
    cfg.stop_on_detection = true;
    cfg.adversary.kind = match &base.adversary.kind {
        AdversaryKind::TamperOne { branch, rule } => AdversaryKind::TamperOne {
            branch: (*branch).clamp(1, n),
            rule: rule.clone(),
        },
        AdversaryKind::TamperAll { rule } => AdversaryKind::TamperAll { rule: rule.clone() },
        _ => AdversaryKind::TamperOne {
            branch: 1,
            rule: PayloadRule::Bitflip { bits: 1 },
        },
    };
    cfg
}

/// Runs `seeds` independent instances per branch count, seeds
/// `base.seed .. base.seed + seeds`.
pub fn run_sweep(
    base: &ScenarioConfig,
    seeds: u64,
    branch_counts: &[usize],
    dt_grid: &[f64],
) -> Result<SweepResult, SimError> {
    if seeds < MIN_SWEEP_SEEDS {
        return Err(ConfigError::new(
            "seeds",
            format!("sweep needs at least {MIN_SWEEP_SEEDS} seeds, got {seeds}"),
        )
        .into());
    }
    base.validate()?;
    let mut curve = Vec::new();
    let mut branches = Vec::new();
    let mut empirical_headline = None;
    for &n in branch_counts {
        let template = sweep_scenario(base, n);
        template.validate()?;
        let model = Model::generate(template.model.plan(), template.model.weights_seed)?;
        let fps = analytic_fps(&template, &model)?;
        let summaries = (0..seeds)
            .into_par_iter()
            .map_init(SimCaches::default, |caches, i| {
                let mut cfg = template.clone();
                cfg.seed = base.seed.wrapping_add(i);
                run_with(&cfg, &model, caches).map(|m| m.summary)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let samples: Vec<DetectionSample> = summaries
            .iter()
            .map(DetectionSample::from_summary)
            .collect();
        let points = detection_curve(n, fps, &samples, dt_grid);
        if n == HEADLINE_BRANCHES {
            empirical_headline = Some(
                detection_curve(n, HEADLINE_FPS, &samples, &[HEADLINE_DT_S])[0].empirical_frames,
            );
        }
        curve.extend(points);
        let frames: Vec<u64> = samples.iter().filter_map(|s| s.frames).collect();
        let delays: Vec<f64> = samples.iter().filter_map(|s| s.delay_s).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        branches.push(BranchSweep {
            n_branches: n,
            fps,
            runs: seeds,
            detected: frames.len() as u64,
            mean_frames_to_detection: mean(&frames.iter().map(|&f| f as f64).collect::<Vec<_>>()),
            mean_delay_s: mean(&delays),
            first_frame_detections: frames.iter().filter(|&&f| f == 1).count() as u64,
            false_alarms: summaries.iter().map(|s| s.counters.false_alarms).sum(),
        });
    }
    Ok(SweepResult {
        curve,
        summary: SweepSummary {
            seeds,
            base_seed: base.seed,
            branches,
            headline: Headline::compute(empirical_headline)?,
        },
    })
}

#[cfg(test)]
mod tests;
