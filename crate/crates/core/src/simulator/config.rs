use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::NetworkPlan;

/// A config problem with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Parses strict JSON, reporting the failing field path.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." {
            "<root>".to_string()
        } else {
            path
        };
        ConfigError::new(path, e.into_inner().to_string())
    })
}

/// Toy network with configurable branch count and cuts; weights are
/// generated from `weights_seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "defaults::branches")]
    pub n_branches: usize,
    #[serde(default = "defaults::trunk_cut")]
    pub trunk_cut: u8,
    #[serde(default = "defaults::head_cut")]
    pub head_cut: u8,
    #[serde(default)]
    pub weights_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_branches: defaults::branches(),
            trunk_cut: defaults::trunk_cut(),
            head_cut: defaults::head_cut(),
            weights_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn plan(&self) -> NetworkPlan {
        NetworkPlan::toy(self.n_branches).with_cuts(self.trunk_cut, self.head_cut)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub bandwidth_bps: f64,
    pub propagation_delay_s: f64,
    /// Half-open `[start, end)` windows in which every message is lost.
    #[serde(default)]
    pub jam_intervals: Vec<(f64, f64)>,
    #[serde(default = "defaults::overhead")]
    pub per_message_overhead_bytes: u64,
    /// Independent per-message loss probability.
    #[serde(default)]
    pub loss_rate: f64,
    /// Per-message probability of a single flipped bit in transit.
    #[serde(default)]
    pub corruption_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTiming {
    pub edge_mac_rate: f64,
    #[serde(default)]
    pub fog_exec_time_s: f64,
}

/// How a tampering fog rewrites the tensors it targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PayloadRule {
    /// Every element replaced by `value`.
    Constant { value: i8 },
    /// `bits` distinct data bits flipped at random.
    Bitflip { bits: u32 },
    /// One tensor chosen by random search to push the pose's x below
    /// `target_x`, then reused for every later frame.
    Crafted {
        target_x: f64,
        #[serde(default = "defaults::candidates")]
        candidates: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryKind {
    #[default]
    None,
    /// Corrupt only branch `branch` (1-based).
    TamperOne {
        branch: usize,
        rule: PayloadRule,
    },
    TamperAll {
        rule: PayloadRule,
    },
    /// Resend the BRANCH_SET from `depth` frames earlier, verbatim.
    Replay {
        depth: usize,
    },
    /// Drop every message in the active window.
    Jam,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adversary {
    #[serde(default)]
    pub kind: AdversaryKind,
    #[serde(default)]
    pub active_from: f64,
    /// Exclusive end; open-ended when absent.
    #[serde(default)]
    pub active_until: Option<f64>,
}

impl Adversary {
    pub fn active_at(&self, t: f64) -> bool {
        self.kind != AdversaryKind::None
            && t >= self.active_from
            && self.active_until.is_none_or(|u| t < u)
    }

    pub fn tampers(&self) -> bool {
        matches!(
            self.kind,
            AdversaryKind::TamperOne { .. } | AdversaryKind::TamperAll { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub link: LinkModel,
    pub timing: NodeTiming,
    #[serde(default)]
    pub adversary: Adversary,
    /// Frames per second; capture `k` happens at `k / camera_rate`.
    pub camera_rate: f64,
    pub duration_s: f64,
    /// Drives branch selection, payload tampering and link randomness.
    #[serde(default)]
    pub seed: u64,
    /// Drives the synthetic camera frames.
    #[serde(default)]
    pub image_seed: u64,
    #[serde(default = "defaults::hysteresis")]
    pub hysteresis_k: u32,
    /// Verification timeout in camera frame periods.
    #[serde(default = "defaults::timeout_frames")]
    pub timeout_frames: f64,
    /// End the run at the first mismatch.
    #[serde(default)]
    pub stop_on_detection: bool,
}

mod defaults {
    pub fn branches() -> usize {
        8
    }
    pub fn trunk_cut() -> u8 {
        3
    }
    pub fn head_cut() -> u8 {
        8
    }
    pub fn overhead() -> u64 {
        40
    }
    pub fn candidates() -> usize {
        64
    }
    pub fn hysteresis() -> u32 {
        3
    }
    pub fn timeout_frames() -> f64 {
        2.0
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(
            path,
            format!("must be finite and non-negative, got {v}"),
        ))
    }
}

fn probability(path: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::new(
            path,
            format!("must lie in [0, 1], got {v}"),
        ))
    }
}

impl PayloadRule {
    fn validate(&self, path: &str) -> Result<(), ConfigError> {
        match *self {
            PayloadRule::Constant { .. } => Ok(()),
            PayloadRule::Bitflip { bits: 0 } => Err(ConfigError::new(
                format!("{path}.bitflip.bits"),
                "must be at least 1",
            )),
            PayloadRule::Bitflip { .. } => Ok(()),
            PayloadRule::Crafted {
                target_x,
                candidates,
            } => {
                if !target_x.is_finite() {
                    return Err(ConfigError::new(
                        format!("{path}.crafted.target_x"),
                        "must be finite",
                    ));
                }
                if candidates == 0 {
                    return Err(ConfigError::new(
                        format!("{path}.crafted.candidates"),
                        "must be at least 1",
                    ));
                }
                Ok(())
            }
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Honest 𝒩 = 8 scenario on a 3.5 Mbit/s link, 10 fps for 10 s.
    pub fn baseline() -> Self {
        Self {
            model: ModelConfig::default(),
            link: LinkModel {
                bandwidth_bps: 3.5e6,
                propagation_delay_s: 0.003,
                jam_intervals: Vec::new(),
                per_message_overhead_bytes: defaults::overhead(),
                loss_rate: 0.0,
                corruption_rate: 0.0,
            },
            timing: NodeTiming {
                edge_mac_rate: 100e6,
                fog_exec_time_s: 0.0,
            },
            adversary: Adversary::default(),
            camera_rate: 10.0,
            duration_s: 10.0,
            seed: 0,
            image_seed: 0,
            hysteresis_k: defaults::hysteresis(),
            timeout_frames: defaults::timeout_frames(),
            stop_on_detection: false,
        }
    }

    /// Scripted attack: honest until 3 s, a crafted single-branch attack
    /// until 6 s, then honest again until 9 s.
    pub fn demo() -> Self {
        Self {
            adversary: Adversary {
                kind: AdversaryKind::TamperOne {
                    branch: 5,
                    rule: PayloadRule::Crafted {
                        target_x: 1.5,
                        candidates: defaults::candidates(),
                    },
                },
                active_from: 3.0,
                active_until: Some(6.0),
            },
            duration_s: 9.0,
            ..Self::baseline()
        }
    }

    pub fn timeout_s(&self) -> f64 {
        self.timeout_frames / self.camera_rate
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let plan = self.model.plan();
        plan.validate()
            .map_err(|e| ConfigError::new("model", e.to_string()))?;

        positive("link.bandwidth_bps", self.link.bandwidth_bps)?;
        non_negative("link.propagation_delay_s", self.link.propagation_delay_s)?;
        probability("link.loss_rate", self.link.loss_rate)?;
        probability("link.corruption_rate", self.link.corruption_rate)?;
        let mut prev_end = f64::NEG_INFINITY;
        for (i, &(s, e)) in self.link.jam_intervals.iter().enumerate() {
            let path = format!("link.jam_intervals[{i}]");
            if !(s.is_finite() && e.is_finite() && s < e) {
                return Err(ConfigError::new(path, "needs finite start < end"));
            }
            if s < prev_end {
                return Err(ConfigError::new(
                    path,
                    "intervals must be sorted and non-overlapping",
                ));
            }
            prev_end = e;
        }

        positive("timing.edge_mac_rate", self.timing.edge_mac_rate)?;
        non_negative("timing.fog_exec_time_s", self.timing.fog_exec_time_s)?;

        let adv = &self.adversary;
        non_negative("adversary.active_from", adv.active_from)?;
        if let Some(u) = adv.active_until {
            if !(u.is_finite() && u > adv.active_from) {
                return Err(ConfigError::new(
                    "adversary.active_until",
                    "must be finite and after active_from",
                ));
            }
        }
        match &adv.kind {
            AdversaryKind::None | AdversaryKind::Jam => {}
            AdversaryKind::TamperOne { branch, rule } => {
                if !(1..=plan.n_branches).contains(branch) {
                    return Err(ConfigError::new(
                        "adversary.kind.tamper_one.branch",
                        format!("must lie in 1..={}", plan.n_branches),
                    ));
                }
                rule.validate("adversary.kind.tamper_one.rule")?;
            }
            AdversaryKind::TamperAll { rule } => rule.validate("adversary.kind.tamper_all.rule")?,
            AdversaryKind::Replay { depth } => {
                if *depth == 0 {
                    return Err(ConfigError::new(
                        "adversary.kind.replay.depth",
                        "must be at least 1",
                    ));
                }
            }
        }

        positive("camera_rate", self.camera_rate)?;
        positive("duration_s", self.duration_s)?;
        positive("timeout_frames", self.timeout_frames)?;
        if self.hysteresis_k == 0 {
            return Err(ConfigError::new("hysteresis_k", "must be at least 1"));
        }
        Ok(())
    }
}
