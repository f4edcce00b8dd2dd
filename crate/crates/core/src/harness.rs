//! Scenario assembly and execution.
//!
//! A [`ScenarioConfig`] fully determines a run: the victim's TCP state is
//! derived from the seed, probes advance a virtual clock, and the channel
//! randomness comes from a dedicated RNG stream, so the same config always
//! yields byte-identical artifacts.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacker::{
    full_attack, AttackAction, AttackReport, InferenceConfig, Observation, Outcome, Phase,
    ProbeLabel, ProbeTransport, TransportError,
};
use crate::defenses::{wire_response_len, UniformResponsePolicy};
use crate::seqspace::ModSpace;
use crate::tcp::{
    FourTuple, OptionsProfile, SegmentMeta, ServerConnState, TcpEndpoint,
};
use crate::trace::{ProbeRecord, SweepRow};
use crate::wifi::{
    encapsulate, transmit, BackgroundSpec, ChannelConfig, Delivery, EncapsulationConfig,
    FrameKind, FrameObservation, Mac, VirtualTime,
};

const STATE_SALT: u64 = 0x517c_c1b7_2722_0a95;
const CHANNEL_SALT: u64 = 0x6a09_e667_f3bc_c909;
const ATTACKER_SALT: u64 = 0xbb67_ae85_84ca_a73b;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VictimConfig {
    pub ip: Ipv4Addr,
    pub server_ip: Ipv4Addr,
    pub server_port: u16,
    /// Whether the victim holds an established connection at all.
    pub connected: bool,
    /// Fixed values override the seed-derived state.
    pub client_port: Option<u16>,
    pub rcv_nxt: Option<u32>,
    pub snd_una: Option<u32>,
    /// Sent-but-unacknowledged bytes (snd_nxt - snd_una).
    pub unacked: u32,
    pub rcv_wnd: Option<u32>,
    pub snd_wnd: Option<u32>,
    pub options: OptionsProfile,
}

impl Default for VictimConfig {
    fn default() -> Self {
        VictimConfig {
            ip: Ipv4Addr::new(192, 168, 1, 100),
            server_ip: Ipv4Addr::new(203, 0, 113, 10),
            server_port: 443,
            connected: true,
            client_port: None,
            rcv_nxt: None,
            snd_una: None,
            unacked: 0,
            rcv_wnd: None,
            snd_wnd: None,
            options: OptionsProfile::default(),
        }
    }
}

/// Genuine server-to-victim traffic arriving on a fixed cadence; each
/// tick advances the connection and puts a data/ACK frame pair on the air.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveTrafficConfig {
    pub enabled: bool,
    pub interval_ms: f64,
    pub bytes_per_tick: u32,
}

impl Default for LiveTrafficConfig {
    fn default() -> Self {
        LiveTrafficConfig { enabled: false, interval_ms: 500.0, bytes_per_tick: 100 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    pub uniform: UniformResponsePolicy,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Reset,
    Inject,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionConfig {
    pub kind: ActionKind,
    pub payload: String,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig { kind: ActionKind::Reset, payload: "injected".into() }
    }
}

impl ActionConfig {
    pub fn to_action(&self) -> AttackAction {
        match self.kind {
            ActionKind::Reset => AttackAction::Reset,
            ActionKind::Inject => AttackAction::Inject { payload: self.payload.clone().into_bytes() },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Sequence-space width in bits; 32 is the real protocol, smaller
    /// widths make exhaustive checks feasible.
    pub space_bits: u32,
    pub duration_limit_s: f64,
    pub channel: ChannelConfig,
    pub encapsulation: EncapsulationConfig,
    pub inference: InferenceConfig,
    pub victim: VictimConfig,
    pub live_traffic: LiveTrafficConfig,
    pub defense: DefenseConfig,
    pub action: ActionConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            seed: 1,
            space_bits: 32,
            duration_limit_s: 1800.0,
            channel: ChannelConfig::default(),
            encapsulation: EncapsulationConfig::default(),
            inference: InferenceConfig::default(),
            victim: VictimConfig::default(),
            live_traffic: LiveTrafficConfig::default(),
            defense: DefenseConfig::default(),
            action: ActionConfig::default(),
        }
    }
}

#[derive(Error, Debug)]
pub enum WorldError {
    #[error("invalid channel config: {0}")]
    Channel(#[from] crate::wifi::ChannelError),
    #[error("invalid inference config: {0}")]
    Inference(String),
    #[error("invalid sequence space: bits must be in 2..=32")]
    SpaceBits,
    #[error("invalid victim state: {0}")]
    Victim(#[from] crate::tcp::StateError),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, WorldError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(2..=32).contains(&self.space_bits) {
            return Err(WorldError::SpaceBits);
        }
        self.channel.validate()?;
        self.inference.validate().map_err(WorldError::Inference)?;
        Ok(())
    }
}

/// Snapshot of the endpoint truth, taken after the attack; the attacker
/// never sees this.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub connected: bool,
    pub tuple: Option<FourTuple>,
    pub initial_rcv_nxt: Option<u32>,
    pub final_rcv_nxt: Option<u32>,
    pub snd_una: Option<u32>,
    pub snd_nxt: Option<u32>,
    pub open_at_end: Option<bool>,
    pub stream_len: usize,
    /// Bytes the endpoint accepted in order since the run started.
    pub stream: Vec<u8>,
}

/// The simulated WLAN plus victim endpoint. Implements [`ProbeTransport`];
/// all attacker interaction goes through that trait, which only ever
/// exposes frame lengths, addresses and timestamps.
pub struct World {
    cfg: ScenarioConfig,
    space: ModSpace,
    endpoint: TcpEndpoint,
    truth_tuple: Option<FourTuple>,
    victim_mac: Mac,
    ap_mac: Mac,
    now: VirtualTime,
    deadline: VirtualTime,
    observe_timeout: VirtualTime,
    pacing_gap: VirtualTime,
    rng: ChaCha8Rng,
    /// (period_us, observable_len) of the background cadence, if any.
    bg: Option<(u64, u32)>,
    next_live: VirtualTime,
    live_period: VirtualTime,
    live_down_len: u32,
    live_up_len: u32,
    probes: u64,
    bytes: u64,
    probe_log: Vec<ProbeRecord>,
    /// Response and live frames actually put on the air (background
    /// frames are merged in at finalization).
    trace: Vec<FrameObservation>,
}

fn derive_mac(seed: u64, local_byte: u8) -> Mac {
    let x = splitmix64(seed ^ (local_byte as u64) << 56);
    let b = x.to_le_bytes();
    Mac([0x02, local_byte, b[0], b[1], b[2], b[3]])
}

impl World {
    pub fn new(cfg: ScenarioConfig) -> Result<World, WorldError> {
        cfg.validate()?;
        let space = ModSpace::new(cfg.space_bits);
        let victim_mac = derive_mac(cfg.seed, 0x01);
        let ap_mac = derive_mac(cfg.seed, 0x02);
        let mut state_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ STATE_SALT));
        let mut endpoint = TcpEndpoint::new();
        let mut truth_tuple = None;
        if cfg.victim.connected {
            let port = cfg.victim.client_port.unwrap_or_else(|| {
                state_rng.gen_range(cfg.inference.port_start..=cfg.inference.port_end)
            });
            let tuple = FourTuple {
                client_ip: cfg.victim.ip,
                client_port: port,
                server_ip: cfg.victim.server_ip,
                server_port: cfg.victim.server_port,
            };
            let default_wnd = 65_535u32.min((space.size() / 8) as u32).max(1);
            let rcv_nxt = cfg
                .victim
                .rcv_nxt
                .unwrap_or_else(|| state_rng.gen::<u32>() & space.mask());
            let snd_una = cfg
                .victim
                .snd_una
                .unwrap_or_else(|| state_rng.gen::<u32>() & space.mask());
            let snd_nxt = space.add(snd_una, cfg.victim.unacked);
            let state = ServerConnState::new(
                tuple,
                rcv_nxt,
                cfg.victim.rcv_wnd.unwrap_or(default_wnd),
                snd_una,
                snd_nxt,
                cfg.victim.snd_wnd.unwrap_or(default_wnd),
                cfg.victim.options,
                space,
            )?;
            endpoint.insert(state);
            truth_tuple = Some(tuple);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ CHANNEL_SALT));
        let bg = match &cfg.channel.background {
            Some(spec) => {
                let period_us = match spec {
                    BackgroundSpec::Rate { rate_pps, .. } => {
                        if *rate_pps <= 0.0 {
                            None
                        } else {
                            Some((1e6 / rate_pps) as u64)
                        }
                    }
                    BackgroundSpec::Interval { interval_s, .. } => {
                        if *interval_s <= 0.0 {
                            None
                        } else {
                            Some((interval_s * 1e6) as u64)
                        }
                    }
                };
                period_us.map(|p| {
                    let len = encapsulate(spec.packet_ip_len(), &cfg.encapsulation, &mut rng)
                        .unwrap_or(spec.packet_ip_len() + 16);
                    (p.max(1), len)
                })
            }
            None => None,
        };

        let (_, hi) = cfg.channel.contention_bounds_us();
        let observe_timeout = VirtualTime(match cfg.inference.observe_timeout_ms {
            Some(ms) => (ms * 1000.0) as u64,
            None => 2 * cfg.channel.rtt_us() + hi,
        });
        let pacing_gap = VirtualTime((1e6 / cfg.inference.probe_pacing_pps) as u64);
        let live_period = VirtualTime((cfg.live_traffic.interval_ms * 1000.0).max(1.0) as u64);
        let ts = if cfg.victim.options.timestamps_enabled { 12 } else { 0 };
        let live_down_len =
            encapsulate(40 + ts + cfg.live_traffic.bytes_per_tick, &cfg.encapsulation, &mut rng)
                .unwrap_or(40 + ts + cfg.live_traffic.bytes_per_tick + 16);
        let live_up_len =
            encapsulate(40 + ts, &cfg.encapsulation, &mut rng).unwrap_or(40 + ts + 16);

        Ok(World {
            deadline: VirtualTime::from_secs(cfg.duration_limit_s),
            space,
            endpoint,
            truth_tuple,
            victim_mac,
            ap_mac,
            now: VirtualTime(0),
            observe_timeout,
            pacing_gap,
            rng,
            bg,
            next_live: live_period,
            live_period,
            live_down_len,
            live_up_len,
            probes: 0,
            bytes: 0,
            probe_log: Vec::new(),
            trace: Vec::new(),
            cfg,
        })
    }

    pub fn victim_mac(&self) -> Mac {
        self.victim_mac
    }

    pub fn ap_mac(&self) -> Mac {
        self.ap_mac
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn conn(&self) -> Option<&ServerConnState> {
        self.truth_tuple.as_ref().and_then(|t| self.endpoint.get(t))
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let conn = self.conn();
        GroundTruth {
            connected: self.cfg.victim.connected,
            tuple: self.truth_tuple,
            initial_rcv_nxt: conn.map(|c| c.initial_rcv_nxt()),
            final_rcv_nxt: conn.map(|c| c.rcv_nxt),
            snd_una: conn.map(|c| c.snd_una),
            snd_nxt: conn.map(|c| c.snd_nxt),
            open_at_end: conn.map(|c| c.open),
            stream_len: conn.map(|c| c.stream().len()).unwrap_or(0),
            stream: conn.map(|c| c.stream().to_vec()).unwrap_or_default(),
        }
    }

    pub fn stream(&self) -> &[u8] {
        self.conn().map(|c| c.stream()).unwrap_or(&[])
    }

    fn channel_id(&self) -> u8 {
        self.cfg.channel.channels[0]
    }

    /// Background frames scheduled in [from, to], computed analytically.
    fn bg_frames_in(&self, from: VirtualTime, to: VirtualTime) -> Vec<FrameObservation> {
        let Some((period, len)) = self.bg else { return Vec::new() };
        let mut out = Vec::new();
        let mut k = from.0.div_ceil(period).max(1);
        while k * period <= to.0 {
            out.push(FrameObservation {
                addr1: self.victim_mac,
                addr2: self.ap_mac,
                channel: self.channel_id(),
                observable_len: len,
                t: VirtualTime(k * period),
                kind: FrameKind::Data,
                amsdu: false,
            });
            k += 1;
        }
        out
    }

    /// Advances live traffic through time `t`, mutating the connection and
    /// returning the frames it put on the air.
    fn advance_live(&mut self, t: VirtualTime) -> Vec<FrameObservation> {
        let mut out = Vec::new();
        if !self.cfg.live_traffic.enabled {
            return out;
        }
        while self.next_live.0 <= t.0 {
            let tick = self.next_live;
            self.next_live = VirtualTime(tick.0 + self.live_period.0);
            let Some(tuple) = self.truth_tuple else { break };
            let Some(conn) = self.endpoint.get_mut(&tuple) else { break };
            if !conn.open {
                break;
            }
            conn.absorb_live_bytes(self.cfg.live_traffic.bytes_per_tick);
            out.push(FrameObservation {
                addr1: self.victim_mac,
                addr2: self.ap_mac,
                channel: self.channel_id(),
                observable_len: self.live_down_len,
                t: tick,
                kind: FrameKind::Data,
                amsdu: false,
            });
            out.push(FrameObservation {
                addr1: self.ap_mac,
                addr2: self.victim_mac,
                channel: self.channel_id(),
                observable_len: self.live_up_len,
                t: VirtualTime(tick.0 + 500),
                kind: FrameKind::Data,
                amsdu: false,
            });
        }
        self.trace.extend(out.iter().copied());
        out
    }

    fn check_deadline(&self) -> Result<(), TransportError> {
        if self.now.0 > self.deadline.0 {
            Err(TransportError::DeadlineExceeded)
        } else {
            Ok(())
        }
    }

    pub fn probe_log(&self) -> &[ProbeRecord] {
        &self.probe_log
    }

    /// All frames on the air over the run, time-sorted: responses, live
    /// traffic and the background cadence up to the current clock.
    pub fn full_trace(&self) -> Vec<FrameObservation> {
        let mut all = self.trace.clone();
        all.extend(self.bg_frames_in(VirtualTime(0), self.now));
        all.sort_by_key(|f| f.t.0);
        all
    }

    fn seg_kind_str(seg: &SegmentMeta) -> &'static str {
        if seg.flags.rst {
            "rst"
        } else if seg.flags.syn {
            "synack"
        } else if seg.payload.is_empty() {
            "ack"
        } else {
            "data"
        }
    }
}

impl ProbeTransport for World {
    fn now(&self) -> VirtualTime {
        self.now
    }

    fn space(&self) -> ModSpace {
        self.space
    }

    fn observe_timeout(&self) -> VirtualTime {
        self.observe_timeout
    }

    fn response_window(&self) -> (VirtualTime, VirtualTime) {
        let (lo, hi) = self.cfg.channel.contention_bounds_us();
        let rtt = self.cfg.channel.rtt_us();
        (VirtualTime(rtt + lo), VirtualTime(rtt + hi))
    }

    fn arp_scan(&mut self) -> Result<Vec<(Mac, Ipv4Addr)>, TransportError> {
        self.check_deadline()?;
        self.probes += 1;
        self.bytes += 60; // minimum Ethernet frame for the ARP request
        let t = self.now;
        self.advance_live(VirtualTime(t.0 + self.observe_timeout.0));
        self.now = VirtualTime(t.0 + self.observe_timeout.0.max(self.pacing_gap.0));
        if self.cfg.channel.ap_isolation {
            return Ok(Vec::new());
        }
        Ok(vec![(self.victim_mac, self.cfg.victim.ip)])
    }

    fn probe(
        &mut self,
        seg: &SegmentMeta,
        label: ProbeLabel,
    ) -> Result<Vec<FrameObservation>, TransportError> {
        self.check_deadline()?;
        let t_send = self.now;
        let w_end = VirtualTime(t_send.0 + self.observe_timeout.0);
        self.probes += 1;
        self.bytes += 54 + seg.payload_len() as u64;

        let mut window = self.bg_frames_in(t_send, w_end);
        let live = self.advance_live(w_end);
        window.extend(live.into_iter().filter(|f| f.t.0 >= t_send.0 && f.t.0 <= w_end.0));

        if let Ok(kind) = self.endpoint.handle(seg) {
            let maybe_len = wire_response_len(kind, &self.cfg.victim.options, &self.cfg.defense.uniform);
            if let Some(ip_len) = maybe_len {
                let obs_len = encapsulate(ip_len, &self.cfg.encapsulation, &mut self.rng)
                    .unwrap_or(ip_len + 16);
                let mut frame = FrameObservation {
                    addr1: self.ap_mac,
                    addr2: self.victim_mac,
                    channel: self.channel_id(),
                    observable_len: obs_len,
                    t: VirtualTime(t_send.0 + self.cfg.channel.rtt_us()),
                    kind: FrameKind::Data,
                    amsdu: false,
                };
                if let Ok(Delivery::DeliveredAt(t)) =
                    transmit(&frame, &self.cfg.channel, &mut self.rng)
                {
                    frame.t = t;
                    self.trace.push(frame);
                    if t.0 <= w_end.0 {
                        window.push(frame);
                    }
                }
            }
        }
        window.sort_by_key(|f| f.t.0);

        self.probe_log.push(ProbeRecord {
            t_us: t_send.0,
            phase: label.phase.to_string(),
            guess: label.guess,
            kind: Self::seg_kind_str(seg).to_string(),
            seq: seg.seq,
            ack: seg.ack,
            payload_len: seg.payload_len(),
            response: Observation::from_frames(&window, self.victim_mac).describe(),
        });
        self.now = VirtualTime(t_send.0 + self.pacing_gap.0.max(self.observe_timeout.0));
        Ok(window)
    }

    fn listen(&mut self, dur: VirtualTime) -> Result<Vec<FrameObservation>, TransportError> {
        self.check_deadline()?;
        let from = self.now;
        let to = VirtualTime(from.0 + dur.0);
        let mut window = self.bg_frames_in(from, to);
        let live = self.advance_live(to);
        window.extend(live.into_iter().filter(|f| f.t.0 >= from.0 && f.t.0 <= to.0));
        window.sort_by_key(|f| f.t.0);
        self.now = to;
        Ok(window)
    }

    fn probes_sent(&self) -> u64 {
        self.probes
    }

    fn bytes_sent(&self) -> u64 {
        self.bytes
    }
}

/// A bare transport without radio timing: responses come back instantly
/// and the clock ticks once per probe. Intended for exhaustive protocol
/// checks where wall-clock cost matters more than channel fidelity.
pub struct DirectTransport {
    pub endpoint: TcpEndpoint,
    space: ModSpace,
    victim_mac: Mac,
    ap_mac: Mac,
    victim_ip: Ipv4Addr,
    options: OptionsProfile,
    uniform: UniformResponsePolicy,
    encaps: EncapsulationConfig,
    loss_prob: f64,
    rng: ChaCha8Rng,
    now: VirtualTime,
    probes: u64,
    bytes: u64,
}

impl DirectTransport {
    pub fn new(space: ModSpace, seed: u64) -> DirectTransport {
        DirectTransport {
            endpoint: TcpEndpoint::new(),
            space,
            victim_mac: derive_mac(seed, 0x01),
            ap_mac: derive_mac(seed, 0x02),
            victim_ip: Ipv4Addr::new(192, 168, 1, 100),
            options: OptionsProfile::default(),
            uniform: UniformResponsePolicy::default(),
            encaps: EncapsulationConfig::default(),
            loss_prob: 0.0,
            rng: ChaCha8Rng::seed_from_u64(splitmix64(seed ^ CHANNEL_SALT)),
            now: VirtualTime(0),
            probes: 0,
            bytes: 0,
        }
    }

    pub fn victim_mac(&self) -> Mac {
        self.victim_mac
    }

    pub fn victim_ip(&self) -> Ipv4Addr {
        self.victim_ip
    }

    pub fn set_loss(&mut self, p: f64) {
        self.loss_prob = p;
    }

    pub fn set_uniform(&mut self, policy: UniformResponsePolicy) {
        self.uniform = policy;
    }

    pub fn set_encapsulation(&mut self, encaps: EncapsulationConfig) {
        self.encaps = encaps;
    }

    pub fn set_options(&mut self, options: OptionsProfile) {
        self.options = options;
    }

    pub fn add_conn(&mut self, state: ServerConnState) {
        self.endpoint.insert(state);
    }
}

impl ProbeTransport for DirectTransport {
    fn now(&self) -> VirtualTime {
        self.now
    }

    fn space(&self) -> ModSpace {
        self.space
    }

    fn observe_timeout(&self) -> VirtualTime {
        VirtualTime(1)
    }

    fn response_window(&self) -> (VirtualTime, VirtualTime) {
        (VirtualTime(0), VirtualTime(1))
    }

    fn arp_scan(&mut self) -> Result<Vec<(Mac, Ipv4Addr)>, TransportError> {
        Ok(vec![(self.victim_mac, self.victim_ip)])
    }

    fn probe(
        &mut self,
        seg: &SegmentMeta,
        _label: ProbeLabel,
    ) -> Result<Vec<FrameObservation>, TransportError> {
        self.probes += 1;
        self.bytes += 54 + seg.payload_len() as u64;
        self.now = VirtualTime(self.now.0 + 1);
        let mut out = Vec::new();
        if let Ok(kind) = self.endpoint.handle(seg) {
            if let Some(ip_len) = wire_response_len(kind, &self.options, &self.uniform) {
                let lost = self.loss_prob > 0.0 && self.rng.gen::<f64>() < self.loss_prob;
                if !lost {
                    let obs_len = encapsulate(ip_len, &self.encaps, &mut self.rng)
                        .unwrap_or(ip_len + 16);
                    out.push(FrameObservation {
                        addr1: self.ap_mac,
                        addr2: self.victim_mac,
                        channel: 1,
                        observable_len: obs_len,
                        t: self.now,
                        kind: FrameKind::Data,
                        amsdu: false,
                    });
                }
            }
        }
        Ok(out)
    }

    fn listen(&mut self, dur: VirtualTime) -> Result<Vec<FrameObservation>, TransportError> {
        self.now = VirtualTime(self.now.0 + dur.0);
        Ok(Vec::new())
    }

    fn probes_sent(&self) -> u64 {
        self.probes
    }

    fn bytes_sent(&self) -> u64 {
        self.bytes
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub report: AttackReport,
    pub truth: GroundTruth,
    pub summary: BTreeMap<String, String>,
    pub trace: Vec<FrameObservation>,
    pub probe_log: Vec<ProbeRecord>,
}

/// Runs the full attack in a fresh world and settles the outcome against
/// the endpoint's ground truth: a claimed success that did not actually
/// close the connection (reset) or land the payload (inject) is downgraded
/// to an action failure.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, WorldError> {
    let mut world = World::new(cfg.clone())?;
    let action = cfg.action.to_action();
    let attacker_seed = splitmix64(cfg.seed ^ ATTACKER_SALT);
    let mut report = full_attack(
        &mut world,
        &cfg.inference,
        Some(cfg.victim.ip),
        (cfg.victim.server_ip, cfg.victim.server_port),
        &action,
        attacker_seed,
    );

    let truth = world.ground_truth();
    if report.outcome.is_success() {
        let actually = match &action {
            AttackAction::Reset => truth.open_at_end == Some(false),
            AttackAction::Inject { payload } => {
                payload.is_empty() || world.stream().ends_with(payload)
            }
        };
        if !actually {
            report.outcome = Outcome::Failure(Phase::Action);
        }
    }

    let summary = build_summary(cfg, &report, &truth);
    Ok(ScenarioRun {
        trace: world.full_trace(),
        probe_log: world.probe_log().to_vec(),
        report,
        truth,
        summary,
    })
}

fn build_summary(
    cfg: &ScenarioConfig,
    report: &AttackReport,
    truth: &GroundTruth,
) -> BTreeMap<String, String> {
    let mut s = BTreeMap::new();
    let put = |s: &mut BTreeMap<String, String>, k: &str, v: String| {
        s.insert(k.to_string(), v);
    };
    put(&mut s, "name", cfg.name.clone());
    put(&mut s, "seed", cfg.seed.to_string());
    put(&mut s, "space_bits", cfg.space_bits.to_string());
    put(&mut s, "outcome", report.outcome.to_string());
    put(&mut s, "timed_out", report.timed_out.to_string());
    put(&mut s, "sack_mode", report.sack_mode_used.to_string());
    put(&mut s, "probes", report.probes_sent.to_string());
    put(&mut s, "bytes", report.bytes_sent.to_string());
    put(&mut s, "virtual_time_us", report.virtual_time.0.to_string());
    put(&mut s, "bandwidth_kbps", format!("{:.3}", report.bandwidth_kbps()));
    let fmt_opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
    put(&mut s, "port_found", report.port_found.map(|p| p.to_string()).unwrap_or_else(|| "-".into()));
    put(
        &mut s,
        "port_true",
        truth.tuple.map(|t| t.client_port.to_string()).unwrap_or_else(|| "-".into()),
    );
    put(&mut s, "rcv_nxt_found", fmt_opt(report.rcv_nxt_found));
    put(&mut s, "rcv_nxt_true", fmt_opt(truth.final_rcv_nxt));
    put(&mut s, "ack_lower_found", fmt_opt(report.ack_lower_found));
    put(&mut s, "ack_usable", fmt_opt(report.ack_usable));
    put(&mut s, "conn_open_at_end", truth.open_at_end.map(|b| b.to_string()).unwrap_or_else(|| "-".into()));
    let port_match = match (report.port_found, truth.tuple) {
        (Some(p), Some(t)) => (p == t.client_port).to_string(),
        _ => "-".into(),
    };
    put(&mut s, "port_match", port_match);
    let seq_match = match (report.rcv_nxt_found, truth.final_rcv_nxt) {
        (Some(a), Some(b)) => (a == b).to_string(),
        _ => "-".into(),
    };
    put(&mut s, "rcv_nxt_match", seq_match);
    for (phase, t) in &report.phase_times {
        put(&mut s, &format!("phase_us.{phase}"), t.0.to_string());
    }
    s
}

/// Sets a single config knob from its dotted path; the axes are the ones
/// sweeps care about.
pub fn apply_axis(cfg: &mut ScenarioConfig, axis: &str, value: &str) -> Result<(), String> {
    let f = || value.parse::<f64>().map_err(|e| format!("axis {axis}: {e}"));
    match axis {
        "channel.loss_prob" => cfg.channel.loss_prob = f()?,
        "channel.rtt_ms" => cfg.channel.rtt_ms = f()?,
        "channel.contention_hi_ms" => cfg.channel.contention_hi_ms = f()?,
        "channel.background.rate_pps" => {
            let v = f()?;
            cfg.channel.background = if v > 0.0 {
                Some(BackgroundSpec::Rate { rate_pps: v, packet_ip_len: 52 })
            } else {
                None
            };
        }
        "inference.k_verify" => {
            cfg.inference.k_verify =
                value.parse().map_err(|e| format!("axis {axis}: {e}"))?;
        }
        "inference.probe_pacing_pps" => cfg.inference.probe_pacing_pps = f()?,
        "live_traffic.interval_ms" => {
            cfg.live_traffic.enabled = true;
            cfg.live_traffic.interval_ms = f()?;
        }
        "duration_limit_s" => cfg.duration_limit_s = f()?,
        other => return Err(format!("unknown sweep axis `{other}`")),
    }
    Ok(())
}

/// Runs `trials` seeds at every axis value. Trial seeds are shared across
/// values so sweeps compare like against like.
pub fn run_sweep(
    base: &ScenarioConfig,
    axis: &str,
    values: &[String],
    trials: u32,
) -> Result<Vec<SweepRow>, String> {
    let mut rows = Vec::new();
    for value in values {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, value)?;
        for trial in 0..trials {
            cfg.seed = splitmix64(base.seed.wrapping_add(trial as u64 + 1));
            let run = run_scenario(&cfg).map_err(|e| e.to_string())?;
            rows.push(SweepRow {
                axis_value: value.clone(),
                trial,
                seed: cfg.seed,
                outcome: run.report.outcome.to_string(),
                probes: run.report.probes_sent,
                bytes: run.report.bytes_sent,
                time_us: run.report.virtual_time.0,
            });
        }
    }
    Ok(rows)
}

/// Empirical CDF points (x, fraction <= x) over the sorted inputs.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (x, (i + 1) as f64 / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.name = "small".into();
        cfg.seed = 7;
        cfg.space_bits = 16;
        cfg.duration_limit_s = 300.0;
        cfg.inference.port_start = 40_000;
        cfg.inference.port_end = 40_019;
        cfg
    }

    #[test]
    fn toml_round_trip_defaults() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.space_bits, cfg.space_bits);
        assert_eq!(back.inference.k_verify, cfg.inference.k_verify);
        assert_eq!(back.victim.server_port, cfg.victim.server_port);
    }

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg.inference.port_start, 32768);
        assert!(cfg.victim.connected);
    }

    #[test]
    fn reset_attack_succeeds_on_clean_channel() {
        let run = run_scenario(&small_cfg()).unwrap();
        assert_eq!(run.report.outcome, Outcome::Success, "summary: {:?}", run.summary);
        assert_eq!(run.truth.open_at_end, Some(false));
        assert_eq!(run.summary["port_match"], "true");
        assert_eq!(run.summary["rcv_nxt_match"], "true");
    }

    #[test]
    fn inject_attack_lands_payload() {
        let mut cfg = small_cfg();
        cfg.action = ActionConfig { kind: ActionKind::Inject, payload: "pwned".into() };
        let run = run_scenario(&cfg).unwrap();
        assert_eq!(run.report.outcome, Outcome::Success, "summary: {:?}", run.summary);
        assert_eq!(run.truth.open_at_end, Some(true));
    }

    #[test]
    fn same_seed_same_artifacts() {
        let cfg = small_cfg();
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.probe_log, b.probe_log);
    }

    #[test]
    fn no_connection_means_port_failure() {
        let mut cfg = small_cfg();
        cfg.victim.connected = false;
        let run = run_scenario(&cfg).unwrap();
        assert_eq!(run.report.outcome, Outcome::Failure(Phase::Port));
    }

    #[test]
    fn ap_isolation_blocks_the_scan() {
        let mut cfg = small_cfg();
        cfg.channel.ap_isolation = true;
        let run = run_scenario(&cfg).unwrap();
        assert_eq!(run.report.outcome, Outcome::Failure(Phase::Scan));
    }

    #[test]
    fn tight_deadline_times_out() {
        let mut cfg = small_cfg();
        cfg.duration_limit_s = 0.05;
        let run = run_scenario(&cfg).unwrap();
        assert!(run.report.timed_out);
        assert!(!run.report.outcome.is_success());
    }

    #[test]
    fn unknown_axis_is_rejected() {
        let mut cfg = small_cfg();
        assert!(apply_axis(&mut cfg, "victim.shoe_size", "9").is_err());
        assert!(apply_axis(&mut cfg, "channel.loss_prob", "0.25").is_ok());
        assert!((cfg.channel.loss_prob - 0.25).abs() < 1e-12);
    }

    #[test]
    fn sweep_produces_rows_per_value_and_trial() {
        let mut cfg = small_cfg();
        cfg.inference.port_end = 40_004;
        let rows =
            run_sweep(&cfg, "channel.loss_prob", &["0".into(), "0.1".into()], 2).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].axis_value, "0");
        assert_eq!(rows[3].axis_value, "0.1");
        // Shared trial seeds across axis values.
        assert_eq!(rows[0].seed, rows[2].seed);
        assert_ne!(rows[0].seed, rows[1].seed);
    }

    #[test]
    fn ecdf_is_monotone_and_ends_at_one() {
        let pts = ecdf(&[3.0, 1.0, 2.0, 2.0]);
        assert_eq!(pts.len(), 4);
        assert!((pts.last().unwrap().1 - 1.0).abs() < 1e-12);
        for w in pts.windows(2) {
            assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
    }
}
