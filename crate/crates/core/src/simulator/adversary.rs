use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{Adversary, AdversaryKind, PayloadRule};
use super::metrics::CraftedReport;
use super::SimError;
use crate::netmodel::PoseEstimate;
use crate::protocol::{encode_frame, FrameMessage};
use crate::qtensor::QuantTensor;

/// What the fog puts on the downlink for one received TENSOR_T.
#[derive(Debug)]
pub(crate) enum FogReply {
    Send { bytes: Vec<u8>, tampered: bool },
    Silent,
}

/// The fog's malicious behavior.
pub(crate) struct AdversaryState {
    cfg: Adversary,
    rng: ChaCha20Rng,
    history: VecDeque<Vec<u8>>,
    crafted: Option<Vec<QuantTensor>>,
    pub report: Option<CraftedReport>,
}

impl AdversaryState {
    pub fn new(cfg: &Adversary, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            cfg: cfg.clone(),
            rng,
            history: VecDeque::new(),
            crafted: None,
            report: None,
        }
    }

    /// The jam window covers part of `[start, end]`.
    pub fn jams(&self, start: f64, end: f64) -> bool {
        self.cfg.kind == AdversaryKind::Jam
            && start < self.cfg.active_until.unwrap_or(f64::INFINITY)
            && end > self.cfg.active_from
    }

    fn targets(&self, n: usize) -> Vec<usize> {
        match &self.cfg.kind {
            AdversaryKind::TamperOne { branch, .. } => vec![branch - 1],
            AdversaryKind::TamperAll { .. } => (0..n).collect(),
            _ => Vec::new(),
        }
    }

    /// Builds the reply to frame `frame_id` sent at `now` from the honest
    /// branch outputs. `head` evaluates a candidate branch set.
    pub fn reply(
        &mut self,
        now: f64,
        frame_id: u32,
        honest: Vec<QuantTensor>,
        head: &mut dyn FnMut(&[QuantTensor]) -> Result<PoseEstimate, SimError>,
    ) -> Result<FogReply, SimError> {
        let active = self.cfg.active_at(now);
        if let AdversaryKind::Replay { depth } = self.cfg.kind {
            let bytes = encode_frame(&FrameMessage::branch_set(frame_id, honest))?;
            let out = if active {
                match self.history.len().checked_sub(depth) {
                    Some(i) => FogReply::Send {
                        bytes: self.history[i].clone(),
                        tampered: false,
                    },
                    None => FogReply::Silent,
                }
            } else {
                FogReply::Send {
                    bytes: bytes.clone(),
                    tampered: false,
                }
            };
            self.history.push_back(bytes);
            while self.history.len() > depth {
                self.history.pop_front();
            }
            return Ok(out);
        }

        let rule = match &self.cfg.kind {
            AdversaryKind::TamperOne { rule, .. } | AdversaryKind::TamperAll { rule } if active => {
                rule.clone()
            }
            _ => {
                let bytes = encode_frame(&FrameMessage::branch_set(frame_id, honest))?;
                return Ok(FogReply::Send {
                    bytes,
                    tampered: false,
                });
            }
        };
        let targets = self.targets(honest.len());
        let mut set = honest.clone();
        match rule {
            PayloadRule::Constant { value } => {
                for &i in &targets {
                    set[i].data_mut().iter_mut().for_each(|v| *v = value);
                }
            }
            PayloadRule::Bitflip { bits } => {
                for &i in &targets {
                    flip_bits(&mut self.rng, set[i].data_mut(), bits);
                }
            }
            PayloadRule::Crafted {
                target_x,
                candidates,
            } => {
                if self.crafted.is_none() {
                    self.search(&honest, &targets, target_x, candidates, head)?;
                }
                let chosen = self.crafted.as_ref().expect("searched");
                for (&i, t) in targets.iter().zip(chosen) {
                    set[i] = t.clone();
                }
            }
        }
        let tampered = set != honest;
        let bytes = encode_frame(&FrameMessage::branch_set(frame_id, set))?;
        Ok(FogReply::Send { bytes, tampered })
    }

    /// Random search for target tensors that drive x lowest.
    fn search(
        &mut self,
        honest: &[QuantTensor],
        targets: &[usize],
        target_x: f64,
        candidates: usize,
        head: &mut dyn FnMut(&[QuantTensor]) -> Result<PoseEstimate, SimError>,
    ) -> Result<(), SimError> {
        let mut best: Option<(f64, Vec<QuantTensor>)> = None;
        for _ in 0..candidates {
            let mut set = honest.to_vec();
            let mut chosen = Vec::with_capacity(targets.len());
            for &i in targets {
                let h = &honest[i];
                let data = (0..h.data().len()).map(|_| self.rng.random()).collect();
                let t = QuantTensor::new(h.shape(), data, h.scale_shift())?;
                set[i] = t.clone();
                chosen.push(t);
            }
            let x = head(&set)?.values()[0];
            if best.as_ref().is_none_or(|(bx, _)| x < *bx) {
                best = Some((x, chosen));
            }
        }
        let (x, chosen) = best.expect("at least one candidate");
        self.report = Some(CraftedReport {
            target_x,
            chosen_x: x,
            reached: x < target_x,
        });
        self.crafted = Some(chosen);
        Ok(())
    }
}

fn flip_bits(rng: &mut ChaCha20Rng, data: &mut [i8], bits: u32) {
    let total = data.len() * 8;
    let want = (bits as usize).min(total);
    let mut picked: Vec<usize> = Vec::with_capacity(want);
    while picked.len() < want {
        let b = rng.random_range(0..total);
        if !picked.contains(&b) {
            picked.push(b);
            data[b / 8] ^= (1u8 << (b % 8)) as i8;
        }
    }
}
