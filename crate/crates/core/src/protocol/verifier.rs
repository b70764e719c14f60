use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::BranchSelector;
use crate::netmodel::{PoseEstimate, POSE_SCALE_SHIFT};
use crate::qtensor::{canonical_bytes, QuantTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Normal,
    Emergency,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// A well-formed BRANCH_SET with this frame id arrived.
    BranchSetReceived {
        frame_id: u32,
    },
    VerifyResult(Verdict),
    /// No BRANCH_SET within the timeout.
    TimeoutExpired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Recompute branch `branch` locally and compare.
    Verify { branch: usize },
    /// Feed the fog's branch set to the head.
    UseFogOutput,
    /// Hold position at the last trusted pose.
    Hover(PoseEstimate),
    /// Run the onboard fallback network.
    RunFallback,
    /// Stale or unsolicited message dropped.
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VerifierError {
    #[error("verify result without a pending branch set")]
    NoPendingVerification,
    #[error("a frame must begin before events arrive")]
    NoFrame,
    #[error("hysteresis must be at least 1")]
    ZeroHysteresis,
}

/// Byte-level comparison of canonical encodings; no tolerance.
pub fn verify_branch(local: &QuantTensor, remote: &QuantTensor) -> Verdict {
    match (canonical_bytes(local), canonical_bytes(remote)) {
        (Ok(a), Ok(b)) if a == b => Verdict::Match,
        _ => Verdict::Mismatch,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierStats {
    pub frames_verified: u64,
    pub matches: u64,
    pub mismatches: u64,
    pub first_detection_frame: Option<u32>,
    pub stale_discarded: u64,
    pub timeouts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    Idle,
    AwaitingSet,
    AwaitingVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierState {
    pub mode: Mode,
    pub frame_id: Option<u32>,
    pub selected_branch: usize,
    pub consecutive_ok: u32,
    pub hysteresis_k: u32,
    pub last_trusted_pose: PoseEstimate,
    pub stats: VerifierStats,
    pending: Pending,
}

/// Edge-side trust state machine. The selected branch never leaves this
/// struct; the fog learns nothing about `j`.
#[derive(Debug, Clone)]
pub struct Verifier {
    state: VerifierState,
    n_branches: usize,
    selector: BranchSelector,
}

impl Verifier {
    pub fn new(
        n_branches: usize,
        hysteresis_k: u32,
        selector: BranchSelector,
    ) -> Result<Self, VerifierError> {
        if hysteresis_k == 0 {
            return Err(VerifierError::ZeroHysteresis);
        }
        Ok(Self {
            state: VerifierState {
                mode: Mode::Normal,
                frame_id: None,
                selected_branch: 0,
                consecutive_ok: 0,
                hysteresis_k,
                last_trusted_pose: PoseEstimate {
                    raw: [0; 4],
                    scale_shift: POSE_SCALE_SHIFT,
                },
                stats: VerifierStats::default(),
                pending: Pending::Idle,
            },
            n_branches,
            selector,
        })
    }

    pub fn state(&self) -> &VerifierState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn stats(&self) -> &VerifierStats {
        &self.state.stats
    }

    /// Starts frame `frame_id` and draws a fresh secret branch index.
    pub fn begin_frame(&mut self, frame_id: u32) -> usize {
        let j = self.selector.select(self.n_branches);
        self.state.frame_id = Some(frame_id);
        self.state.selected_branch = j;
        self.state.pending = Pending::AwaitingSet;
        j
    }

    /// Poses produced on a trusted path (verified fog output or fallback)
    /// become the hover target.
    pub fn record_trusted_pose(&mut self, pose: PoseEstimate) {
        self.state.last_trusted_pose = pose;
    }

    pub fn step(&mut self, event: Event) -> Result<Action, VerifierError> {
        let s = &mut self.state;
        let current = s.frame_id.ok_or(VerifierError::NoFrame)?;
        match event {
            Event::BranchSetReceived { frame_id } => {
                if frame_id != current || s.pending != Pending::AwaitingSet {
                    s.stats.stale_discarded += 1;
                    return Ok(Action::Discard);
                }
                s.pending = Pending::AwaitingVerdict;
                Ok(Action::Verify {
                    branch: s.selected_branch,
                })
            }
            Event::TimeoutExpired => {
                s.pending = Pending::Idle;
                s.stats.timeouts += 1;
                s.mode = Mode::Fallback;
                s.consecutive_ok = 0;
                Ok(Action::RunFallback)
            }
            Event::VerifyResult(v) => {
                if s.pending != Pending::AwaitingVerdict {
                    return Err(VerifierError::NoPendingVerification);
                }
                s.pending = Pending::Idle;
                s.stats.frames_verified += 1;
                match v {
                    Verdict::Match => {
                        s.stats.matches += 1;
                        match s.mode {
                            Mode::Normal => Ok(Action::UseFogOutput),
                            Mode::Emergency | Mode::Fallback => {
                                s.consecutive_ok += 1;
                                if s.consecutive_ok >= s.hysteresis_k {
                                    s.mode = Mode::Normal;
                                    s.consecutive_ok = 0;
                                    Ok(Action::UseFogOutput)
                                } else if s.mode == Mode::Emergency {
                                    Ok(Action::Hover(s.last_trusted_pose))
                                } else {
                                    Ok(Action::RunFallback)
                                }
                            }
                        }
                    }
                    Verdict::Mismatch => {
                        s.stats.mismatches += 1;
                        s.stats.first_detection_frame.get_or_insert(current);
                        s.mode = Mode::Emergency;
                        s.consecutive_ok = 0;
                        Ok(Action::Hover(s.last_trusted_pose))
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qtensor::Shape;

    fn verifier(n: usize) -> Verifier {
        Verifier::new(n, 3, BranchSelector::from_u64(1)).unwrap()
    }

    fn frame(v: &mut Verifier, id: u32, verdict: Verdict) -> Action {
        let j = v.begin_frame(id);
        assert_eq!(
            v.step(Event::BranchSetReceived { frame_id: id }).unwrap(),
            Action::Verify { branch: j }
        );
        v.step(Event::VerifyResult(verdict)).unwrap()
    }

    #[test]
    fn byte_exact_comparison() {
        let a = QuantTensor::new(Shape::new(2, 2, 2), vec![1, 2, 3, 4, 5, 6, 7, 8], -3).unwrap();
        assert_eq!(verify_branch(&a, &a.clone()), Verdict::Match);
        let mut b = a.clone();
        b.data_mut()[5] ^= 1;
        assert_eq!(verify_branch(&a, &b), Verdict::Mismatch);
        let c = QuantTensor::new(a.shape(), a.data().to_vec(), -2).unwrap();
        assert_eq!(verify_branch(&a, &c), Verdict::Mismatch);
        let d = QuantTensor::new(Shape::new(4, 2, 1), a.data().to_vec(), -3).unwrap();
        assert_eq!(verify_branch(&a, &d), Verdict::Mismatch);
    }

    #[test]
    fn match_stream_stays_normal() {
        let mut v = verifier(8);
        for id in 0..500 {
            assert_eq!(frame(&mut v, id, Verdict::Match), Action::UseFogOutput);
            assert_eq!(v.mode(), Mode::Normal);
        }
        assert_eq!(v.stats().mismatches, 0);
        assert_eq!(v.stats().frames_verified, 500);
    }

    #[test]
    fn mismatch_enters_emergency_on_same_frame() {
        let mut v = verifier(8);
        frame(&mut v, 0, Verdict::Match);
        let pose = PoseEstimate {
            raw: [1, 2, 3, 4],
            scale_shift: -4,
        };
        v.record_trusted_pose(pose);
        assert_eq!(frame(&mut v, 1, Verdict::Mismatch), Action::Hover(pose));
        assert_eq!(v.mode(), Mode::Emergency);
        assert_eq!(v.stats().first_detection_frame, Some(1));
    }

    #[test]
    fn hysteresis_before_resuming() {
        let mut v = verifier(4);
        frame(&mut v, 0, Verdict::Mismatch);
        assert!(matches!(frame(&mut v, 1, Verdict::Match), Action::Hover(_)));
        assert!(matches!(frame(&mut v, 2, Verdict::Match), Action::Hover(_)));
        // a mismatch resets the count
        assert!(matches!(
            frame(&mut v, 3, Verdict::Mismatch),
            Action::Hover(_)
        ));
        assert_eq!(v.state().consecutive_ok, 0);
        assert!(matches!(frame(&mut v, 4, Verdict::Match), Action::Hover(_)));
        assert!(matches!(frame(&mut v, 5, Verdict::Match), Action::Hover(_)));
        assert_eq!(frame(&mut v, 6, Verdict::Match), Action::UseFogOutput);
        assert_eq!(v.mode(), Mode::Normal);
        assert_eq!(v.stats().first_detection_frame, Some(0));
    }

    #[test]
    fn timeout_from_any_mode_engages_fallback() {
        for pre in [None, Some(Verdict::Mismatch)] {
            let mut v = verifier(2);
            if let Some(p) = pre {
                frame(&mut v, 0, p);
            }
            v.begin_frame(1);
            assert_eq!(v.step(Event::TimeoutExpired).unwrap(), Action::RunFallback);
            assert_eq!(v.mode(), Mode::Fallback);
        }
    }

    #[test]
    fn fallback_recovers_through_hysteresis() {
        let mut v = Verifier::new(2, 2, BranchSelector::from_u64(5)).unwrap();
        v.begin_frame(0);
        v.step(Event::TimeoutExpired).unwrap();
        assert_eq!(frame(&mut v, 1, Verdict::Match), Action::RunFallback);
        assert_eq!(v.mode(), Mode::Fallback);
        assert_eq!(frame(&mut v, 2, Verdict::Match), Action::UseFogOutput);
        assert_eq!(v.mode(), Mode::Normal);

        v.begin_frame(3);
        v.step(Event::TimeoutExpired).unwrap();
        assert!(matches!(
            frame(&mut v, 4, Verdict::Mismatch),
            Action::Hover(_)
        ));
        assert_eq!(v.mode(), Mode::Emergency);
    }

    #[test]
    fn stale_frames_discarded_without_transition() {
        let mut v = verifier(8);
        frame(&mut v, 0, Verdict::Mismatch);
        let before = v.state().clone();
        v.begin_frame(5);
        assert_eq!(
            v.step(Event::BranchSetReceived { frame_id: 4 }).unwrap(),
            Action::Discard
        );
        assert_eq!(v.mode(), before.mode);
        assert_eq!(v.stats().stale_discarded, 1);
        // a duplicate of the current frame after it was accepted is also stale
        v.step(Event::BranchSetReceived { frame_id: 5 }).unwrap();
        assert_eq!(
            v.step(Event::BranchSetReceived { frame_id: 5 }).unwrap(),
            Action::Discard
        );
        assert_eq!(v.stats().stale_discarded, 2);
    }

    #[test]
    fn sequencing_errors() {
        let mut v = verifier(2);
        assert_eq!(v.step(Event::TimeoutExpired), Err(VerifierError::NoFrame));
        v.begin_frame(0);
        assert_eq!(
            v.step(Event::VerifyResult(Verdict::Match)),
            Err(VerifierError::NoPendingVerification)
        );
        assert_eq!(
            Verifier::new(2, 0, BranchSelector::from_u64(0)).err(),
            Some(VerifierError::ZeroHysteresis)
        );
    }

    #[test]
    fn selection_drawn_every_frame() {
        let mut v = verifier(8);
        let picks: Vec<usize> = (0..64).map(|id| v.begin_frame(id)).collect();
        assert!(picks.iter().all(|&j| (1..=8).contains(&j)));
        assert!(picks.windows(2).any(|w| w[0] != w[1]));
    }
}
