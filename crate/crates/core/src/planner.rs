//! Cut-point latency model, throughput estimate and the analytic detection
//! probability of random single-branch verification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{count_macs, cumulative_macs, NetworkPlan};
use crate::qtensor::CANONICAL_HEADER_LEN;

const CALIBRATED: &str = include_str!("../data/calibrated_cost_table.json");

/// Relative margin under which two end-to-end latencies count as tied.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("{field}: {reason}")]
    InvalidTable { field: String, reason: String },
    #[error("invalid cut pair ({trunk_cut}, {head_cut})")]
    InvalidCuts { trunk_cut: u8, head_cut: u8 },
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutCost {
    pub id: u8,
    /// MACs of every block up to and including this one.
    pub macs: u64,
    /// Data bytes of the full (concatenated) tensor at this boundary.
    pub tensor_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    #[serde(default)]
    pub label: String,
    pub n_branches: usize,
    /// MAC/s executed by the edge node.
    pub edge_mac_rate: f64,
    pub bandwidth_bps: f64,
    pub propagation_delay_s: f64,
    /// Per-tensor framing bytes (shape header).
    #[serde(default)]
    pub tensor_header_bytes: u64,
    /// Per-message bytes (frame header, CRC, link overhead).
    #[serde(default)]
    pub message_overhead_bytes: u64,
    #[serde(default)]
    pub input_bytes: u64,
    /// MACs of the whole network, dense layer included.
    pub total_macs: u64,
    pub cuts: Vec<CutCost>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLatencies {
    pub trunk: f64,
    pub tx: f64,
    pub branch: f64,
    pub rx: f64,
    pub head: f64,
    pub end_to_end: f64,
}

impl StageLatencies {
    /// Combines stage times with the branch overlapping the round trip.
    pub fn from_stages(trunk: f64, tx: f64, branch: f64, rx: f64, head: f64) -> Self {
        Self {
            trunk,
            tx,
            branch,
            rx,
            head,
            end_to_end: trunk + branch.max(tx + rx) + head,
        }
    }

    pub fn fps(&self) -> f64 {
        1.0 / self.end_to_end
    }
}

impl CostTable {
    /// The bundled table built from published aggregates.
    pub fn calibrated() -> Self {
        serde_json::from_str(CALIBRATED).expect("bundled table parses")
    }

    /// Exact table for a concrete plan, with the canonical tensor header.
    pub fn from_plan(
        plan: &NetworkPlan,
        edge_mac_rate: f64,
        bandwidth_bps: f64,
        propagation_delay_s: f64,
    ) -> Self {
        let cuts = cumulative_macs(plan)
            .into_iter()
            .zip(&plan.blocks)
            .map(|(macs, b)| CutCost {
                id: b.id,
                macs,
                tensor_bytes: b.output_shape().len() as u64,
            })
            .collect();
        Self {
            label: "derived from network plan".into(),
            n_branches: plan.n_branches,
            edge_mac_rate,
            bandwidth_bps,
            propagation_delay_s,
            tensor_header_bytes: CANONICAL_HEADER_LEN as u64,
            message_overhead_bytes: 0,
            input_bytes: plan.input_shape.len() as u64,
            total_macs: count_macs(&plan.clone().with_branches(1)).total(),
            cuts,
        }
    }

    pub fn with_branches(&self, n: usize) -> Self {
        Self {
            n_branches: n,
            ..self.clone()
        }
    }

    pub fn max_id(&self) -> u8 {
        self.cuts.len() as u8
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |field: String, reason: &str| {
            Err(PlannerError::InvalidTable {
                field,
                reason: reason.into(),
            })
        };
        if self.n_branches == 0 {
            return bad("n_branches".into(), "must be at least 1");
        }
        if !(self.edge_mac_rate.is_finite() && self.edge_mac_rate > 0.0) {
            return bad("edge_mac_rate".into(), "must be positive and finite");
        }
        if self.bandwidth_bps.is_nan() || self.bandwidth_bps <= 0.0 {
            return bad("bandwidth_bps".into(), "must be positive");
        }
        if !(self.propagation_delay_s.is_finite() && self.propagation_delay_s >= 0.0) {
            return bad(
                "propagation_delay_s".into(),
                "must be finite and non-negative",
            );
        }
        if self.cuts.len() < 2 || self.cuts.len() > usize::from(u8::MAX) {
            return bad("cuts".into(), "needs between 2 and 255 cut points");
        }
        let mut prev = 0;
        for (i, c) in self.cuts.iter().enumerate() {
            if usize::from(c.id) != i + 1 {
                return bad(format!("cuts[{i}].id"), "ids must be consecutive from 1");
            }
            if c.macs < prev {
                return bad(
                    format!("cuts[{i}].macs"),
                    "cumulative MACs must be non-decreasing",
                );
            }
            prev = c.macs;
        }
        if self.total_macs < prev {
            return bad(
                "total_macs".into(),
                "must be at least the last cut's cumulative MACs",
            );
        }
        Ok(())
    }

    fn cut(&self, id: u8) -> Option<&CutCost> {
        self.cuts.get(usize::from(id).checked_sub(1)?)
    }

    fn wire_seconds(&self, bytes: f64) -> f64 {
        bytes * 8.0 / self.bandwidth_bps + self.propagation_delay_s
    }

    /// Bytes of the TENSOR_T message for a trunk cut.
    pub fn tx_bytes(&self, trunk_cut: u8) -> Option<f64> {
        let c = self.cut(trunk_cut)?;
        Some((c.tensor_bytes + self.tensor_header_bytes + self.message_overhead_bytes) as f64)
    }

    /// Bytes of the BRANCH_SET message: 𝒩 slices of the head-cut tensor,
    /// each with its own header.
    pub fn rx_bytes(&self, head_cut: u8) -> Option<f64> {
        let c = self.cut(head_cut)?;
        let n = self.n_branches as f64;
        Some(
            n * (c.tensor_bytes as f64 / n + self.tensor_header_bytes as f64)
                + self.message_overhead_bytes as f64,
        )
    }
}

pub fn stage_latencies(
    table: &CostTable,
    trunk_cut: u8,
    head_cut: u8,
) -> Result<StageLatencies, PlannerError> {
    let invalid = PlannerError::InvalidCuts {
        trunk_cut,
        head_cut,
    };
    if !(1 <= trunk_cut && trunk_cut < head_cut && head_cut <= table.max_id()) {
        return Err(invalid);
    }
    let (t, h) = (
        table.cut(trunk_cut).ok_or(invalid.clone())?,
        table.cut(head_cut).ok_or(invalid)?,
    );
    let rate = table.edge_mac_rate;
    let trunk = t.macs as f64 / rate;
    let branch = (h.macs - t.macs) as f64 / table.n_branches as f64 / rate;
    let head = table.total_macs.saturating_sub(h.macs) as f64 / rate;
    let tx = table.wire_seconds(table.tx_bytes(trunk_cut).expect("checked"));
    let rx = table.wire_seconds(table.rx_bytes(head_cut).expect("checked"));
    Ok(StageLatencies::from_stages(trunk, tx, branch, rx, head))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub trunk_cut: u8,
    pub head_cut: u8,
    pub latencies: StageLatencies,
}

/// Every valid `(trunk_cut, head_cut)` pair in trunk-major order.
pub fn latency_grid(table: &CostTable) -> Result<Vec<GridCell>, PlannerError> {
    table.validate()?;
    let max = table.max_id();
    let mut cells = Vec::new();
    for t in 1..max {
        for h in t + 1..=max {
            cells.push(GridCell {
                trunk_cut: t,
                head_cut: h,
                latencies: stage_latencies(table, t, h)?,
            });
        }
    }
    Ok(cells)
}

/// Minimum end-to-end latency. Among pairs within [`TIE_EPSILON`] of the
/// minimum the earliest trunk cut wins, then the latest head cut.
pub fn optimal_cut(table: &CostTable) -> Result<GridCell, PlannerError> {
    let cells = latency_grid(table)?;
    let min = cells
        .iter()
        .map(|c| c.latencies.end_to_end)
        .fold(f64::INFINITY, f64::min);
    let bound = min * (1.0 + TIE_EPSILON);
    Ok(*cells
        .iter()
        .filter(|c| c.latencies.end_to_end <= bound)
        .min_by_key(|c| (c.trunk_cut, std::cmp::Reverse(c.head_cut)))
        .expect("validated table has at least one pair"))
}

/// Verified frames in `dt` seconds; a partial frame verifies nothing.
pub fn verified_frames(fps: f64, dt: f64) -> u64 {
    // the epsilon keeps exact products like 8 × 2 from flooring to 15
    (fps * dt + 1e-9).floor().max(0.0) as u64
}

/// `1 − (1 − 1/n)^⌊fps·dt⌋`.
pub fn detection_probability(n: usize, fps: f64, dt: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let k = verified_frames(fps, dt);
    1.0 - (1.0 - 1.0 / n as f64).powi(k.min(i32::MAX as u64) as i32)
}

/// Verified frame rate needed to reach detection probability `p` within `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequiredRate {
    /// Solution of the continuous relaxation.
    pub continuous_fps: f64,
    /// Whole frames needed.
    pub frames: u64,
    /// `frames / dt`, the smallest rate the floor model accepts.
    pub fps: f64,
}

pub fn required_fps(n: usize, p: f64, dt: f64) -> Result<RequiredRate, PlannerError> {
    if n == 0 || !(0.0..1.0).contains(&p) || dt.is_nan() || dt <= 0.0 {
        return Err(PlannerError::InvalidArgument(format!(
            "need n >= 1, 0 <= p < 1, dt > 0 (got n={n}, p={p}, dt={dt})"
        )));
    }
    if n == 1 {
        let frames = u64::from(p > 0.0);
        return Ok(RequiredRate {
            continuous_fps: frames as f64 / dt,
            frames,
            fps: frames as f64 / dt,
        });
    }
    let x = (1.0 - p).ln() / (1.0 - 1.0 / n as f64).ln();
    let frames = x.ceil() as u64;
    Ok(RequiredRate {
        continuous_fps: x / dt,
        frames,
        fps: frames as f64 / dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionPoint {
    pub dt: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub n_branches: usize,
    pub trunk_cut: u8,
    pub head_cut: u8,
    pub end_to_end_s: f64,
    pub fps: f64,
    pub detection: Vec<DetectionPoint>,
}

/// Optimal cuts, throughput and detection curve for each branch count.
pub fn frontier(
    table: &CostTable,
    branch_counts: &[usize],
    dt_grid: &[f64],
) -> Result<Vec<OperatingPoint>, PlannerError> {
    branch_counts
        .iter()
        .map(|&n| {
            let best = optimal_cut(&table.with_branches(n))?;
            let fps = best.latencies.fps();
            Ok(OperatingPoint {
                n_branches: n,
                trunk_cut: best.trunk_cut,
                head_cut: best.head_cut,
                end_to_end_s: best.latencies.end_to_end,
                fps,
                detection: dt_grid
                    .iter()
                    .map(|&dt| DetectionPoint {
                        dt,
                        probability: detection_probability(n, fps, dt),
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Frontier points whose throughput reaches `min_fps`; may be empty.
pub fn feasible_configs(
    table: &CostTable,
    min_fps: f64,
    branch_counts: &[usize],
    dt_grid: &[f64],
) -> Result<Vec<OperatingPoint>, PlannerError> {
    if min_fps.is_nan() || min_fps <= 0.0 {
        return Err(PlannerError::InvalidArgument(
            "min_fps must be positive".into(),
        ));
    }
    Ok(frontier(table, branch_counts, dt_grid)?
        .into_iter()
        .filter(|p| p.fps >= min_fps)
        .collect())
}

/// Highest-throughput point, larger 𝒩 on equal throughput.
pub fn chosen_operating_point(points: &[OperatingPoint]) -> Option<&OperatingPoint> {
    points.iter().max_by(|a, b| {
        a.fps
            .total_cmp(&b.fps)
            .then(a.n_branches.cmp(&b.n_branches))
    })
}
