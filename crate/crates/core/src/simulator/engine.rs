use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::adversary::{AdversaryState, FogReply};
use super::config::ScenarioConfig;
use super::metrics::{
    measure_throughput, Counters, Detection, FrameRecord, ModeChange, ModeTimes, PoseSource,
    RunMetrics, RunSummary,
};
use super::SimError;
use crate::netmodel::{count_macs, fallback_macs, synthetic_frame, Model, PoseEstimate};
use crate::planner::StageLatencies;
use crate::protocol::{
    decode_frame, encode_frame, verify_branch, Action, BranchSelector, Event, FrameMessage, Mode,
    Payload, Verdict, Verifier,
};
use crate::qtensor::{canonical_bytes, QuantTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Stage {
    Trunk,
    Branch(usize),
    AllBranches,
    Head,
    Fallback,
}

#[derive(Debug, Clone)]
enum Cached {
    Tensor(QuantTensor),
    Tensors(Vec<QuantTensor>),
    Pose(PoseEstimate),
}

/// Memo of pure forward passes keyed by weights fingerprint, stage and the
/// exact input bytes. Results are bit-identical to recomputation.
#[derive(Debug, Default)]
pub struct ForwardCache {
    map: HashMap<(String, Stage, Vec<u8>), Cached>,
    pub hits: u64,
    pub misses: u64,
}

const CACHE_LIMIT: usize = 200_000;

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn get_or(
        &mut self,
        model: &Model,
        stage: Stage,
        key: Vec<u8>,
        f: impl FnOnce() -> Result<Cached, SimError>,
    ) -> Result<Cached, SimError> {
        let k = (model.fingerprint().to_string(), stage, key);
        if let Some(v) = self.map.get(&k) {
            self.hits += 1;
            return Ok(v.clone());
        }
        self.misses += 1;
        let v = f()?;
        if self.map.len() >= CACHE_LIMIT {
            self.map.clear();
        }
        self.map.insert(k, v.clone());
        Ok(v)
    }

    pub fn trunk(&mut self, model: &Model, image: &QuantTensor) -> Result<QuantTensor, SimError> {
        match self.get_or(model, Stage::Trunk, canonical_bytes(image)?, || {
            Ok(Cached::Tensor(model.trunk_forward(image)?))
        })? {
            Cached::Tensor(t) => Ok(t),
            _ => unreachable!("trunk entries hold tensors"),
        }
    }

    pub fn branch(
        &mut self,
        model: &Model,
        i: usize,
        t: &QuantTensor,
    ) -> Result<QuantTensor, SimError> {
        match self.get_or(model, Stage::Branch(i), canonical_bytes(t)?, || {
            Ok(Cached::Tensor(model.branch_forward(i, t)?))
        })? {
            Cached::Tensor(t) => Ok(t),
            _ => unreachable!("branch entries hold tensors"),
        }
    }

    /// Every branch in index order, memoized as one entry.
    pub fn all_branches(
        &mut self,
        model: &Model,
        t: &QuantTensor,
    ) -> Result<Vec<QuantTensor>, SimError> {
        match self.get_or(model, Stage::AllBranches, canonical_bytes(t)?, || {
            Ok(Cached::Tensors(model.all_branches(t)?))
        })? {
            Cached::Tensors(v) => Ok(v),
            _ => unreachable!("branch-set entries hold tensor lists"),
        }
    }

    pub fn head(&mut self, model: &Model, outs: &[QuantTensor]) -> Result<PoseEstimate, SimError> {
        let mut key = Vec::new();
        for t in outs {
            crate::qtensor::write_canonical(t, &mut key)?;
        }
        match self.get_or(model, Stage::Head, key, || {
            Ok(Cached::Pose(model.head_forward(outs)?))
        })? {
            Cached::Pose(p) => Ok(p),
            _ => unreachable!("head entries hold poses"),
        }
    }

    pub fn fallback(
        &mut self,
        model: &Model,
        image: &QuantTensor,
    ) -> Result<PoseEstimate, SimError> {
        match self.get_or(model, Stage::Fallback, canonical_bytes(image)?, || {
            Ok(Cached::Pose(model.fallback_forward(image)?))
        })? {
            Cached::Pose(p) => Ok(p),
            _ => unreachable!("fallback entries hold poses"),
        }
    }
}

/// Separate memo tables for the two nodes, so an edge result is never
/// served from the fog's computation or vice versa.
#[derive(Debug, Default)]
pub struct SimCaches {
    pub edge: ForwardCache,
    pub fog: ForwardCache,
    images: HashMap<(Shape, u64, u32), QuantTensor>,
}

impl SimCaches {
    /// Synthetic camera frame, generated once per `(shape, seed, id)`.
    pub fn image(&mut self, shape: Shape, image_seed: u64, frame_id: u32) -> QuantTensor {
        if self.images.len() >= CACHE_LIMIT {
            self.images.clear();
        }
        self.images
            .entry((shape, image_seed, frame_id))
            .or_insert_with(|| synthetic_frame(shape, image_seed, frame_id))
            .clone()
    }
}

/// Compute times on the edge (and the fog's fixed delay).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimes {
    pub trunk: f64,
    pub branch: f64,
    pub head: f64,
    pub fallback: f64,
    pub fog: f64,
}

impl StageTimes {
    pub fn new(cfg: &ScenarioConfig, model: &Model) -> Self {
        let macs = count_macs(model.plan());
        let rate = cfg.timing.edge_mac_rate;
        Self {
            trunk: macs.trunk as f64 / rate,
            branch: macs.one_branch as f64 / rate,
            head: macs.head as f64 / rate,
            fallback: fallback_macs(model.plan()) as f64 / rate,
            fog: cfg.timing.fog_exec_time_s,
        }
    }
}

/// Wire bytes of the two messages, link overhead included.
pub fn message_sizes(cfg: &ScenarioConfig, model: &Model) -> Result<(usize, usize), SimError> {
    let plan = model.plan();
    let t = QuantTensor::zeros(plan.boundary_shape(plan.trunk_cut)?, 0);
    let h = plan.boundary_shape(plan.head_cut)?;
    let b = QuantTensor::zeros(h.with_channels(h.channels / plan.n_branches), 0);
    let overhead = cfg.link.per_message_overhead_bytes as usize;
    let tx = FrameMessage::tensor(0, t).encoded_len() + overhead;
    let rx = FrameMessage::branch_set(0, vec![b; plan.n_branches]).encoded_len() + overhead;
    Ok((tx, rx))
}

/// Per-frame stage latencies of an unimpeded honest frame; the fog's
/// execution time is folded into the return leg.
pub fn nominal_latencies(cfg: &ScenarioConfig, model: &Model) -> Result<StageLatencies, SimError> {
    let st = StageTimes::new(cfg, model);
    let (tx_bytes, rx_bytes) = message_sizes(cfg, model)?;
    let wire =
        |bytes: usize| bytes as f64 * 8.0 / cfg.link.bandwidth_bps + cfg.link.propagation_delay_s;
    Ok(StageLatencies::from_stages(
        st.trunk,
        wire(tx_bytes),
        st.branch,
        wire(rx_bytes) + st.fog,
        st.head,
    ))
}

/// Edge MAC rate at which the nominal end-to-end latency equals `target_s`,
/// or `None` when the link alone already exceeds it.
pub fn edge_rate_for_latency(
    cfg: &ScenarioConfig,
    model: &Model,
    target_s: f64,
) -> Result<Option<f64>, SimError> {
    let mut c = cfg.clone();
    let mut e2e = |rate: f64| -> Result<f64, SimError> {
        c.timing.edge_mac_rate = rate;
        Ok(nominal_latencies(&c, model)?.end_to_end)
    };
    let (mut lo, mut hi) = (1.0_f64, 1e15_f64);
    if e2e(hi)? >= target_s {
        return Ok(None);
    }
    // latency falls monotonically with the rate; bisect in log space
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if e2e(mid)? > target_s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(hi))
}

#[derive(Debug)]
enum Kind {
    Capture(u32),
    TrunkDone(u32),
    FogReceive(Vec<u8>),
    FogSend {
        frame_id: u32,
        branches: Vec<QuantTensor>,
    },
    EdgeReceive {
        bytes: Vec<u8>,
        tampered: bool,
    },
    BranchDone(u32),
    Deadline(u32),
    Emit {
        frame_id: u32,
        pose: PoseEstimate,
        source: PoseSource,
    },
}

#[derive(Debug)]
struct Scheduled {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap and we want the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Trunk,
    Waiting,
    Finishing,
}

#[derive(Debug)]
struct InFlight {
    frame_id: u32,
    capture: f64,
    started: f64,
    image: QuantTensor,
    trunk_out: Option<QuantTensor>,
    branch: usize,
    local: Option<QuantTensor>,
    received: Option<(Vec<QuantTensor>, bool)>,
    phase: Phase,
    verdict: Option<Verdict>,
    tampered: bool,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    model: &'a Model,
    caches: &'a mut SimCaches,
    times: StageTimes,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    end: f64,
    verifier: Verifier,
    adversary: AdversaryState,
    link_rng: ChaCha20Rng,
    backlog: VecDeque<(u32, f64)>,
    current: Option<InFlight>,
    last_rx: Option<f64>,
    frames: Vec<FrameRecord>,
    counters: Counters,
    timeline: Vec<ModeChange>,
    detection: Detection,
    first_fallback: Option<f64>,
    injected: u64,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.queue.push(Scheduled {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn note_mode(&mut self, now: f64) {
        let mode = self.verifier.mode();
        if self.timeline.last().map(|c| c.mode) != Some(mode) {
            self.timeline.push(ModeChange { time_s: now, mode });
            if mode == Mode::Fallback && self.first_fallback.is_none() {
                self.first_fallback = Some(now);
            }
        }
    }

    /// Puts `bytes` on the link at `now`; returns the arrival time unless lost.
    fn transmit(&mut self, now: f64, bytes: &mut [u8]) -> Option<f64> {
        self.counters.messages_sent += 1;
        let link = &self.cfg.link;
        let wire = (bytes.len() as u64 + link.per_message_overhead_bytes) as f64 * 8.0
            / link.bandwidth_bps;
        let arrival = now + wire + link.propagation_delay_s;
        let jammed = link
            .jam_intervals
            .iter()
            .any(|&(s, e)| now < e && arrival > s)
            || self.adversary.jams(now, arrival);
        if jammed {
            self.counters.messages_jammed += 1;
            return None;
        }
        if link.loss_rate > 0.0 && self.link_rng.random::<f64>() < link.loss_rate {
            self.counters.messages_lost += 1;
            return None;
        }
        if link.corruption_rate > 0.0 && self.link_rng.random::<f64>() < link.corruption_rate {
            let bit = self.link_rng.random_range(0..bytes.len() * 8);
            bytes[bit / 8] ^= 1 << (bit % 8);
        }
        Some(arrival)
    }

    fn start_next(&mut self, now: f64) -> Result<(), SimError> {
        if self.current.is_some() {
            return Ok(());
        }
        let Some((frame_id, capture)) = self.backlog.pop_front() else {
            return Ok(());
        };
        let branch = self.verifier.begin_frame(frame_id);
        let image = self
            .caches
            .image(self.model.plan().input_shape, self.cfg.image_seed, frame_id);
        let trunk_out = self.caches.edge.trunk(self.model, &image)?;
        self.current = Some(InFlight {
            frame_id,
            capture,
            started: now,
            image,
            trunk_out: Some(trunk_out),
            branch,
            local: None,
            received: None,
            phase: Phase::Trunk,
            verdict: None,
            tampered: false,
        });
        self.schedule(now + self.times.trunk, Kind::TrunkDone(frame_id));
        Ok(())
    }

    fn on_trunk_done(&mut self, now: f64, frame_id: u32) -> Result<(), SimError> {
        let cur = self
            .current
            .as_mut()
            .expect("trunk completes for the current frame");
        cur.phase = Phase::Waiting;
        let started = cur.started;
        let t = cur.trunk_out.clone().expect("trunk output present");
        let mut bytes = encode_frame(&FrameMessage::tensor(frame_id, t))?;
        if let Some(at) = self.transmit(now, &mut bytes) {
            self.schedule(at, Kind::FogReceive(bytes));
        }
        self.schedule(now + self.times.branch, Kind::BranchDone(frame_id));
        let timeout = self.cfg.timeout_s();
        // in FALLBACK a silent link fails the frame at once; any recent
        // downlink traffic re-arms the normal timeout
        let deadline = match (self.verifier.mode(), self.last_rx) {
            (Mode::Fallback, Some(rx)) => (rx + timeout).min(started + timeout).max(now),
            (Mode::Fallback, None) => now,
            _ => started + timeout,
        };
        self.schedule(deadline, Kind::Deadline(frame_id));
        Ok(())
    }

    fn on_fog_receive(&mut self, now: f64, bytes: &[u8]) -> Result<(), SimError> {
        // the fog ignores anything it cannot decode
        let Ok(FrameMessage {
            frame_id,
            payload: Payload::Tensor(t),
        }) = decode_frame(bytes)
        else {
            return Ok(());
        };
        let branches = self.caches.fog.all_branches(self.model, &t)?;
        self.schedule(now + self.times.fog, Kind::FogSend { frame_id, branches });
        Ok(())
    }

    fn on_fog_send(
        &mut self,
        now: f64,
        frame_id: u32,
        branches: Vec<QuantTensor>,
    ) -> Result<(), SimError> {
        let (model, fog) = (self.model, &mut self.caches.fog);
        let mut head = |set: &[QuantTensor]| fog.head(model, set);
        match self.adversary.reply(now, frame_id, branches, &mut head)? {
            FogReply::Silent => {}
            FogReply::Send {
                mut bytes,
                tampered,
            } => {
                if let Some(at) = self.transmit(now, &mut bytes) {
                    self.schedule(at, Kind::EdgeReceive { bytes, tampered });
                }
            }
        }
        Ok(())
    }

    fn on_edge_receive(&mut self, now: f64, bytes: &[u8], tampered: bool) -> Result<(), SimError> {
        let msg = match decode_frame(bytes) {
            Ok(m) => m,
            Err(_) => {
                self.counters.channel_errors += 1;
                return Ok(());
            }
        };
        let Payload::BranchSet(set) = msg.payload else {
            self.counters.channel_errors += 1;
            return Ok(());
        };
        if set.len() != self.model.n_branches() {
            self.counters.channel_errors += 1;
            return Ok(());
        }
        self.last_rx = Some(now);
        let waiting = matches!(&self.current, Some(c) if c.phase == Phase::Waiting);
        if !waiting {
            self.counters.stale_discarded += 1;
            return Ok(());
        }
        match self.verifier.step(Event::BranchSetReceived {
            frame_id: msg.frame_id,
        })? {
            Action::Discard => {
                self.counters.stale_discarded += 1;
                Ok(())
            }
            Action::Verify { .. } => {
                let cur = self.current.as_mut().expect("waiting frame");
                cur.received = Some((set, tampered));
                if cur.local.is_some() {
                    self.verify(now)?;
                }
                Ok(())
            }
            other => unreachable!("branch set yields verify or discard, got {other:?}"),
        }
    }

    fn on_branch_done(&mut self, now: f64, frame_id: u32) -> Result<(), SimError> {
        let Some(cur) = self.current.as_mut() else {
            return Ok(());
        };
        if cur.frame_id != frame_id || cur.phase != Phase::Waiting {
            return Ok(());
        }
        let t = cur.trunk_out.clone().expect("trunk output present");
        let local = self.caches.edge.branch(self.model, cur.branch, &t)?;
        let cur = self.current.as_mut().expect("current frame");
        cur.local = Some(local);
        if cur.received.is_some() {
            self.verify(now)?;
        }
        Ok(())
    }

    fn verify(&mut self, now: f64) -> Result<(), SimError> {
        let cur = self.current.as_mut().expect("verifying the current frame");
        cur.phase = Phase::Finishing;
        let (set, tampered) = cur.received.take().expect("branch set received");
        let local = cur.local.as_ref().expect("local branch computed");
        let verdict = verify_branch(local, &set[cur.branch - 1]);
        cur.verdict = Some(verdict);
        cur.tampered = tampered;
        let frame_id = cur.frame_id;

        self.counters.frames_verified += 1;
        if tampered {
            self.counters.tampered_frames_verified += 1;
        }
        match verdict {
            Verdict::Match => self.counters.matches += 1,
            Verdict::Mismatch => {
                self.counters.mismatches += 1;
                if !tampered {
                    self.counters.false_alarms += 1;
                }
                if self.detection.first_detection_s.is_none() {
                    self.detection.first_detection_s = Some(now);
                    self.detection.detection_frame = Some(frame_id);
                    self.detection.latency_s = self.detection.onset_s.map(|o| now - o);
                    self.detection.frames_to_detection =
                        Some(self.counters.tampered_frames_verified);
                    if self.cfg.stop_on_detection {
                        self.end = now;
                    }
                }
            }
        }

        let action = self.verifier.step(Event::VerifyResult(verdict))?;
        self.note_mode(now);
        match action {
            Action::UseFogOutput => {
                let pose = self.caches.edge.head(self.model, &set)?;
                self.schedule(
                    now + self.times.head,
                    Kind::Emit {
                        frame_id,
                        pose,
                        source: PoseSource::Fog,
                    },
                );
            }
            Action::Hover(pose) => self.schedule(
                now,
                Kind::Emit {
                    frame_id,
                    pose,
                    source: PoseSource::Hover,
                },
            ),
            Action::RunFallback => self.run_fallback(now)?,
            other => unreachable!("verdict yields a pose action, got {other:?}"),
        }
        Ok(())
    }

    fn run_fallback(&mut self, now: f64) -> Result<(), SimError> {
        let cur = self.current.as_ref().expect("current frame");
        let pose = self.caches.edge.fallback(self.model, &cur.image)?;
        let frame_id = cur.frame_id;
        self.schedule(
            now + self.times.fallback,
            Kind::Emit {
                frame_id,
                pose,
                source: PoseSource::Fallback,
            },
        );
        Ok(())
    }

    fn on_deadline(&mut self, now: f64, frame_id: u32) -> Result<(), SimError> {
        match &mut self.current {
            Some(c) if c.frame_id == frame_id && c.phase == Phase::Waiting => {
                c.phase = Phase::Finishing
            }
            _ => return Ok(()),
        }
        self.counters.timeouts += 1;
        let action = self.verifier.step(Event::TimeoutExpired)?;
        debug_assert_eq!(action, Action::RunFallback);
        self.note_mode(now);
        self.run_fallback(now)
    }

    fn on_emit(
        &mut self,
        now: f64,
        frame_id: u32,
        pose: PoseEstimate,
        source: PoseSource,
    ) -> Result<(), SimError> {
        let cur = self.current.take().expect("emitting the current frame");
        debug_assert_eq!(cur.frame_id, frame_id);
        match source {
            PoseSource::Fog => self.counters.fog_poses += 1,
            PoseSource::Hover => self.counters.hover_poses += 1,
            PoseSource::Fallback => self.counters.fallback_poses += 1,
        }
        if source != PoseSource::Hover {
            self.verifier.record_trusted_pose(pose);
        }
        let [x, y, z, phi] = pose.values();
        let verified = cur.verdict.is_some();
        self.frames.push(FrameRecord {
            frame_id,
            capture_s: cur.capture,
            complete_s: now,
            latency_s: now - cur.capture,
            mode: self.verifier.mode(),
            source,
            x,
            y,
            z,
            phi,
            verified_branch: verified.then_some(cur.branch),
            verdict: cur.verdict,
            tampered: cur.tampered,
        });
        self.start_next(now)
    }

    fn run(mut self) -> Result<RunMetrics, SimError> {
        let period = 1.0 / self.cfg.camera_rate;
        let mut k: u32 = 0;
        loop {
            let t = f64::from(k) * period;
            if t >= self.cfg.duration_s {
                break;
            }
            self.schedule(t, Kind::Capture(k));
            k += 1;
        }
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.end {
                break;
            }
            let now = ev.time;
            match ev.kind {
                Kind::Capture(id) => {
                    self.injected += 1;
                    self.backlog.push_back((id, now));
                    self.start_next(now)?;
                }
                Kind::TrunkDone(id) => self.on_trunk_done(now, id)?,
                Kind::FogReceive(bytes) => self.on_fog_receive(now, &bytes)?,
                Kind::FogSend { frame_id, branches } => {
                    self.on_fog_send(now, frame_id, branches)?
                }
                Kind::EdgeReceive { bytes, tampered } => {
                    self.on_edge_receive(now, &bytes, tampered)?
                }
                Kind::BranchDone(id) => self.on_branch_done(now, id)?,
                Kind::Deadline(id) => self.on_deadline(now, id)?,
                Kind::Emit {
                    frame_id,
                    pose,
                    source,
                } => self.on_emit(now, frame_id, pose, source)?,
            }
        }
        let end = self.end;
        let vstats = self.verifier.stats().clone();
        debug_assert_eq!(vstats.mismatches, self.counters.mismatches);
        self.counters.stale_discarded = self.counters.stale_discarded.max(vstats.stale_discarded);
        let completed = self.frames.len() as u64;
        let mean_latency = (completed > 0)
            .then(|| self.frames.iter().map(|f| f.latency_s).sum::<f64>() / completed as f64);
        let summary = RunSummary {
            seed: self.cfg.seed,
            n_branches: self.model.n_branches(),
            weights_fingerprint: self.model.fingerprint().to_string(),
            camera_rate: self.cfg.camera_rate,
            duration_s: self.cfg.duration_s,
            end_s: end,
            injected: self.injected,
            completed,
            in_flight: self.injected - completed,
            throughput_fps: measure_throughput(&self.frames, end).ok(),
            mean_latency_s: mean_latency,
            final_mode: self.verifier.mode(),
            mode_time: ModeTimes::from_timeline(&self.timeline, end),
            mode_timeline: self.timeline,
            first_fallback_s: self.first_fallback,
            detection: self.detection,
            crafted: self.adversary.report,
            counters: self.counters,
        };
        Ok(RunMetrics {
            frames: self.frames,
            summary,
        })
    }
}

/// Runs one scenario against a prepared model, reusing memoized passes.
pub fn run_with(
    cfg: &ScenarioConfig,
    model: &Model,
    caches: &mut SimCaches,
) -> Result<RunMetrics, SimError> {
    cfg.validate()?;
    if model.plan() != &cfg.model.plan() {
        return Err(SimError::ModelMismatch);
    }
    let mut link_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    link_rng.set_stream(2);
    let verifier = Verifier::new(
        cfg.model.n_branches,
        cfg.hysteresis_k,
        BranchSelector::from_u64(cfg.seed),
    )?;
    let onset = cfg.adversary.tampers().then_some(cfg.adversary.active_from);
    let sim = Sim {
        cfg,
        model,
        caches,
        times: StageTimes::new(cfg, model),
        queue: BinaryHeap::new(),
        seq: 0,
        end: cfg.duration_s,
        verifier,
        adversary: AdversaryState::new(&cfg.adversary, cfg.seed),
        link_rng,
        backlog: VecDeque::new(),
        current: None,
        last_rx: None,
        frames: Vec::new(),
        counters: Counters::default(),
        timeline: vec![ModeChange {
            time_s: 0.0,
            mode: Mode::Normal,
        }],
        detection: Detection {
            onset_s: onset,
            ..Detection::default()
        },
        first_fallback: None,
        injected: 0,
    };
    sim.run()
}

/// Builds the model from the config and runs the scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunMetrics, SimError> {
    cfg.validate()?;
    let model = Model::generate(cfg.model.plan(), cfg.model.weights_seed)?;
    run_with(cfg, &model, &mut SimCaches::default())
}
