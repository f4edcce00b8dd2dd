//! Wi-Fi link model.
//!
//! Encryption is modeled purely as a size transformation: an IP packet of
//! n bytes rides in a data frame whose observable MSDU length is
//! n + LLC/SNAP + MIC overhead (16 bytes with CCMP-like defaults), plus
//! whatever the padding defense adds. Channel impairments are a Bernoulli
//! per-frame loss and a bounded-uniform contention delay.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::defenses::{PaddingError, PaddingPolicy};

/// Virtual time in microseconds.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Default, Serialize, Deserialize)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn seconds(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn from_secs(s: f64) -> VirtualTime {
        VirtualTime((s * 1e6).round() as u64)
    }
}

/// A MAC address, printed/parsed as `aa:bb:cc:dd:ee:ff`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Mac(pub [u8; 6]);

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

#[derive(Error, Debug, PartialEq, Eq)]
#[error("invalid MAC address: {0}")]
pub struct MacParseError(String);

impl FromStr for Mac {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Mac, MacParseError> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(MacParseError(s.to_string()));
        }
        let mut b = [0u8; 6];
        for (i, p) in parts.iter().enumerate() {
            b[i] = u8::from_str_radix(p, 16).map_err(|_| MacParseError(s.to_string()))?;
        }
        Ok(Mac(b))
    }
}

impl Serialize for Mac {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Mac {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Mac, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum FrameKind {
    Data,
    Mgmt,
    Ctrl,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameKind::Data => write!(f, "data"),
            FrameKind::Mgmt => write!(f, "mgmt"),
            FrameKind::Ctrl => write!(f, "ctrl"),
        }
    }
}

/// What the sniffer sees of an encrypted frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameObservation {
    /// Receiver address.
    pub addr1: Mac,
    /// Transmitter address.
    pub addr2: Mac,
    pub channel: u8,
    pub observable_len: u32,
    pub t: VirtualTime,
    pub kind: FrameKind,
    pub amsdu: bool,
}

/// Size transformation applied when an IP packet becomes an MSDU.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EncapsulationConfig {
    pub llc_snap_overhead: u32,
    pub crypto_mic_overhead: u32,
    pub padding: PaddingPolicy,
}

impl Default for EncapsulationConfig {
    fn default() -> Self {
        EncapsulationConfig { llc_snap_overhead: 8, crypto_mic_overhead: 8, padding: PaddingPolicy::None }
    }
}

/// IP packet length -> observable encrypted frame length.
pub fn encapsulate(
    ip_len: u32,
    cfg: &EncapsulationConfig,
    rng: &mut dyn RngCore,
) -> Result<u32, PaddingError> {
    debug_assert!(ip_len >= 20);
    cfg.padding.apply(ip_len + cfg.llc_snap_overhead + cfg.crypto_mic_overhead, rng)
}

/// Cadence of empty-ACK background traffic addressed to the victim.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BackgroundSpec {
    /// One frame every `interval_s` virtual seconds.
    Interval { interval_s: f64, #[serde(default = "default_bg_len")] packet_ip_len: u32 },
    /// `rate_pps` uniformly spaced frames per virtual second.
    Rate { rate_pps: f64, #[serde(default = "default_bg_len")] packet_ip_len: u32 },
}

fn default_bg_len() -> u32 {
    52 // an empty ACK with timestamps
}

impl BackgroundSpec {
    pub fn packet_ip_len(&self) -> u32 {
        match self {
            BackgroundSpec::Interval { packet_ip_len, .. } => *packet_ip_len,
            BackgroundSpec::Rate { packet_ip_len, .. } => *packet_ip_len,
        }
    }
}

/// A-MSDU aggregation parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmsduConfig {
    /// 3839 or 7935 bytes.
    pub max_size: u32,
    #[serde(default = "default_amsdu_delay")]
    pub max_delay_us: u64,
}

fn default_amsdu_delay() -> u64 {
    1
}

/// Channel impairment and topology knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub loss_prob: f64,
    /// Uniform contention delay bounds, virtual milliseconds.
    pub contention_lo_ms: f64,
    pub contention_hi_ms: f64,
    pub channels: Vec<u8>,
    /// AP <-> server round trip, virtual milliseconds.
    pub rtt_ms: f64,
    pub background: Option<BackgroundSpec>,
    pub amsdu_enabled: bool,
    pub amsdu: Option<AmsduConfig>,
    pub ap_isolation: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            loss_prob: 0.0,
            contention_lo_ms: 0.0,
            contention_hi_ms: 0.0,
            channels: vec![1],
            rtt_ms: 10.0,
            background: None,
            amsdu_enabled: false,
            amsdu: None,
            ap_isolation: false,
        }
    }
}

impl ChannelConfig {
    pub fn rtt_us(&self) -> u64 {
        (self.rtt_ms * 1e3) as u64
    }

    pub fn contention_bounds_us(&self) -> (u64, u64) {
        ((self.contention_lo_ms * 1e3) as u64, (self.contention_hi_ms * 1e3) as u64)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(ChannelError::BadLossProb(self.loss_prob));
        }
        if self.channels.is_empty() {
            return Err(ChannelError::NoChannels);
        }
        if self.rtt_ms <= 0.0 {
            return Err(ChannelError::BadRtt(self.rtt_ms));
        }
        if self.contention_hi_ms < self.contention_lo_ms {
            return Err(ChannelError::BadContention);
        }
        if let Some(a) = &self.amsdu {
            if a.max_size != 3839 && a.max_size != 7935 {
                return Err(ChannelError::BadAmsduSize(a.max_size));
            }
        }
        Ok(())
    }
}

#[derive(Error, Debug, PartialEq)]
pub enum ChannelError {
    #[error("frame channel {0} is not one of the configured channels")]
    UnknownChannel(u8),
    #[error("loss_prob {0} not in [0, 1]")]
    BadLossProb(f64),
    #[error("channel list is empty")]
    NoChannels,
    #[error("rtt must be positive, got {0} ms")]
    BadRtt(f64),
    #[error("contention upper bound below lower bound")]
    BadContention,
    #[error("A-MSDU max_size must be 3839 or 7935, got {0}")]
    BadAmsduSize(u32),
    #[error("eviction requires a multi-channel network")]
    EvictionUnavailable,
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum Delivery {
    DeliveredAt(VirtualTime),
    Lost,
}

/// One Bernoulli loss draw plus a uniform contention delay; deterministic
/// given the RNG seed and call order.
pub fn transmit(
    frame: &FrameObservation,
    cfg: &ChannelConfig,
    rng: &mut dyn RngCore,
) -> Result<Delivery, ChannelError> {
    if !cfg.channels.contains(&frame.channel) {
        return Err(ChannelError::UnknownChannel(frame.channel));
    }
    if rng.gen::<f64>() < cfg.loss_prob {
        return Ok(Delivery::Lost);
    }
    let (lo, hi) = cfg.contention_bounds_us();
    let delay = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    Ok(Delivery::DeliveredAt(VirtualTime(frame.t.0 + delay)))
}

/// Subsequence of frames whose address 1 or address 2 matches the victim.
pub fn filter_frames(trace: &[FrameObservation], victim_mac: Mac) -> Vec<FrameObservation> {
    trace
        .iter()
        .filter(|f| f.addr1 == victim_mac || f.addr2 == victim_mac)
        .copied()
        .collect()
}

/// An MSDU waiting for aggregation.
#[derive(Clone, Copy, Debug)]
pub struct PendingMsdu {
    pub len: u32,
    pub receiver: Mac,
    pub tid: u8,
    pub t: VirtualTime,
}

fn pad4(x: u32) -> u32 {
    (x + 3) & !3
}

/// Coalesces same-(receiver, TID) MSDUs arriving within `max_delay_us` of
/// each other into A-MSDU frames. Each subframe costs a 14-byte header and
/// is padded to a 4-byte boundary. Singletons are emitted unaggregated.
pub fn aggregate_amsdu(
    pending: &[PendingMsdu],
    cfg: &AmsduConfig,
    transmitter: Mac,
    channel: u8,
) -> Vec<FrameObservation> {
    let mut out = Vec::new();
    let mut remaining: Vec<PendingMsdu> = pending.to_vec();

    while !remaining.is_empty() {
        let head = remaining[0];
        let key = (head.receiver, head.tid);
        // Pull the run of same-key MSDUs chained within max_delay_us.
        let mut group = vec![head];
        remaining.remove(0);
        let mut last_t = head.t;
        let mut total = pad4(14 + head.len);
        let mut i = 0;
        while i < remaining.len() {
            let m = remaining[i];
            if (m.receiver, m.tid) == key && m.t.0.saturating_sub(last_t.0) <= cfg.max_delay_us {
                let sub = pad4(14 + m.len);
                if total + sub > cfg.max_size {
                    break; // flush: adding would exceed max_size
                }
                total += sub;
                last_t = m.t;
                group.push(m);
                remaining.remove(i);
            } else {
                i += 1;
            }
        }
        if group.len() == 1 {
            out.push(FrameObservation {
                addr1: head.receiver,
                addr2: transmitter,
                channel,
                observable_len: head.len,
                t: head.t,
                kind: FrameKind::Data,
                amsdu: false,
            });
        } else {
            out.push(FrameObservation {
                addr1: head.receiver,
                addr2: transmitter,
                channel,
                observable_len: total,
                t: last_t,
                kind: FrameKind::Data,
                amsdu: true,
            });
        }
    }
    out
}

/// Deterministic empty-ACK background schedule addressed to the victim.
pub fn gen_background(
    spec: &BackgroundSpec,
    duration: VirtualTime,
    victim_mac: Mac,
    ap_mac: Mac,
    channel: u8,
    encaps: &EncapsulationConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<FrameObservation>, PaddingError> {
    assert!(duration.0 > 0, "duration must be positive");
    let mut times = Vec::new();
    match spec {
        BackgroundSpec::Rate { rate_pps, .. } => {
            if *rate_pps > 0.0 {
                let n = (duration.seconds() * rate_pps).floor() as u64;
                for i in 0..n {
                    times.push(VirtualTime((i as f64 * 1e6 / rate_pps) as u64));
                }
            }
        }
        BackgroundSpec::Interval { interval_s, .. } => {
            if *interval_s > 0.0 {
                let step = (*interval_s * 1e6) as u64;
                let mut t = step;
                while t <= duration.0 {
                    times.push(VirtualTime(t));
                    t += step;
                }
            }
        }
    }
    let mut frames = Vec::with_capacity(times.len());
    for t in times {
        let len = encapsulate(spec.packet_ip_len(), encaps, rng)?;
        frames.push(FrameObservation {
            addr1: victim_mac,
            addr2: ap_mac,
            channel,
            observable_len: len,
            t,
            kind: FrameKind::Data,
            amsdu: false,
        });
    }
    Ok(frames)
}

/// Knobs for the channel-eviction strategy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvictionParams {
    /// Contention delay reduction factor on the victim's channel.
    pub factor: f64,
    /// Re-association gap during which the victim sends nothing.
    pub gap_s: f64,
}

impl Default for EvictionParams {
    fn default() -> Self {
        EvictionParams { factor: 10.0, gap_s: 2.0 }
    }
}

#[derive(Clone, Debug)]
pub struct EvictionEffect {
    pub config: ChannelConfig,
    /// Victim emits nothing for this long after the deauthentication.
    pub quiet_for: VirtualTime,
}

/// Deauthenticates competing supplicants off the victim's channel: the
/// contention upper bound collapses toward its lower bound and the victim
/// goes quiet for the re-association gap.
pub fn evict_supplicant(
    cfg: &ChannelConfig,
    params: &EvictionParams,
) -> Result<EvictionEffect, ChannelError> {
    if cfg.channels.len() < 2 {
        return Err(ChannelError::EvictionUnavailable);
    }
    let mut out = cfg.clone();
    out.contention_hi_ms =
        cfg.contention_lo_ms + (cfg.contention_hi_ms - cfg.contention_lo_ms) / params.factor;
    Ok(EvictionEffect { config: out, quiet_for: VirtualTime::from_secs(params.gap_s) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn mac(x: u8) -> Mac {
        Mac([2, 0, 0, 0, 0, x])
    }

    fn frame(len: u32, to: Mac, t: u64) -> FrameObservation {
        FrameObservation {
            addr1: to,
            addr2: mac(1),
            channel: 1,
            observable_len: len,
            t: VirtualTime(t),
            kind: FrameKind::Data,
            amsdu: false,
        }
    }

    #[test]
    fn encapsulate_matches_frame_size_table() {
        let cfg = EncapsulationConfig::default();
        let mut r = rng();
        assert_eq!(encapsulate(40, &cfg, &mut r).unwrap(), 56);
        assert_eq!(encapsulate(52, &cfg, &mut r).unwrap(), 68);
        assert_eq!(encapsulate(64, &cfg, &mut r).unwrap(), 80);
    }

    #[test]
    fn lossless_instant_channel_delivers_at_send_time() {
        let cfg = ChannelConfig::default();
        let f = frame(68, mac(7), 123);
        let mut r = rng();
        assert_eq!(transmit(&f, &cfg, &mut r).unwrap(), Delivery::DeliveredAt(VirtualTime(123)));
    }

    #[test]
    fn full_loss_always_drops() {
        let cfg = ChannelConfig { loss_prob: 1.0, ..Default::default() };
        let f = frame(68, mac(7), 0);
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(transmit(&f, &cfg, &mut r).unwrap(), Delivery::Lost);
        }
    }

    #[test]
    fn loss_fraction_tracks_loss_prob() {
        let cfg = ChannelConfig { loss_prob: 0.2, ..Default::default() };
        let f = frame(68, mac(7), 0);
        let mut r = rng();
        let lost = (0..10_000)
            .filter(|_| transmit(&f, &cfg, &mut r).unwrap() == Delivery::Lost)
            .count();
        let frac = lost as f64 / 10_000.0;
        assert!((frac - 0.2).abs() < 0.02, "loss fraction {frac}");
    }

    #[test]
    fn unknown_channel_is_config_error() {
        let cfg = ChannelConfig::default();
        let mut f = frame(68, mac(7), 0);
        f.channel = 11;
        assert_eq!(transmit(&f, &cfg, &mut rng()), Err(ChannelError::UnknownChannel(11)));
    }

    #[test]
    fn transmit_is_reproducible() {
        let cfg = ChannelConfig { loss_prob: 0.3, contention_hi_ms: 5.0, ..Default::default() };
        let f = frame(68, mac(7), 1000);
        let run = || {
            let mut r = rng();
            (0..200).map(|_| transmit(&f, &cfg, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn filter_keeps_only_victim_frames_in_order() {
        let v = mac(7);
        let trace: Vec<FrameObservation> = (0..1000)
            .map(|i| frame(60 + (i % 5) as u32, if i % 10 == 0 { v } else { mac(9) }, i))
            .collect();
        let got = filter_frames(&trace, v);
        assert_eq!(got.len(), 100);
        assert!(got.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(got.iter().all(|f| f.addr1 == v || f.addr2 == v));
        // Idempotent and a subsequence.
        assert_eq!(filter_frames(&got, v), got);
        assert!(filter_frames(&[], v).is_empty());
    }

    #[test]
    fn amsdu_single_msdu_is_unaggregated() {
        let cfg = AmsduConfig { max_size: 3839, max_delay_us: 1 };
        let p = [PendingMsdu { len: 56, receiver: mac(7), tid: 0, t: VirtualTime(0) }];
        let out = aggregate_amsdu(&p, &cfg, mac(1), 1);
        assert_eq!(out.len(), 1);
        assert!(!out[0].amsdu);
        assert_eq!(out[0].observable_len, 56);
    }

    #[test]
    fn amsdu_distinct_tid_never_merges() {
        let cfg = AmsduConfig { max_size: 3839, max_delay_us: 1 };
        let p = [
            PendingMsdu { len: 56, receiver: mac(7), tid: 0, t: VirtualTime(0) },
            PendingMsdu { len: 56, receiver: mac(7), tid: 1, t: VirtualTime(0) },
        ];
        let out = aggregate_amsdu(&p, &cfg, mac(1), 1);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|f| !f.amsdu));
    }

    #[test]
    fn amsdu_same_key_merges_with_subframe_overhead() {
        let cfg = AmsduConfig { max_size: 3839, max_delay_us: 1 };
        let p = [
            PendingMsdu { len: 56, receiver: mac(7), tid: 0, t: VirtualTime(0) },
            PendingMsdu { len: 56, receiver: mac(7), tid: 0, t: VirtualTime(0) },
        ];
        let out = aggregate_amsdu(&p, &cfg, mac(1), 1);
        assert_eq!(out.len(), 1);
        assert!(out[0].amsdu);
        // Each subframe: 14 + 56 = 70, padded to 72; two subframes = 144.
        assert_eq!(out[0].observable_len, 144);
    }

    #[test]
    fn amsdu_respects_max_size() {
        let cfg = AmsduConfig { max_size: 3839, max_delay_us: 10 };
        let p: Vec<PendingMsdu> = (0..10)
            .map(|i| PendingMsdu { len: 1400, receiver: mac(7), tid: 0, t: VirtualTime(i) })
            .collect();
        let out = aggregate_amsdu(&p, &cfg, mac(1), 1);
        assert!(out.iter().all(|f| f.observable_len <= 3839));
    }

    #[test]
    fn background_rate_schedule() {
        let spec = BackgroundSpec::Rate { rate_pps: 40.0, packet_ip_len: 52 };
        let enc = EncapsulationConfig::default();
        let out =
            gen_background(&spec, VirtualTime::from_secs(1.0), mac(7), mac(1), 1, &enc, &mut rng())
                .unwrap();
        assert_eq!(out.len(), 40);
        assert!(out.iter().all(|f| f.observable_len == 68));

        let spec = BackgroundSpec::Rate { rate_pps: 10.0, packet_ip_len: 52 };
        let out =
            gen_background(&spec, VirtualTime::from_secs(2.5), mac(7), mac(1), 1, &enc, &mut rng())
                .unwrap();
        assert_eq!(out.len(), 25);
        let gaps: Vec<u64> = out.windows(2).map(|w| w[1].t.0 - w[0].t.0).collect();
        assert!(gaps.iter().all(|&g| g == 100_000));
    }

    #[test]
    fn background_interval_shorter_than_duration_is_empty() {
        let spec = BackgroundSpec::Interval { interval_s: 8.0, packet_ip_len: 52 };
        let enc = EncapsulationConfig::default();
        let out =
            gen_background(&spec, VirtualTime::from_secs(4.0), mac(7), mac(1), 1, &enc, &mut rng())
                .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn eviction_collapses_contention() {
        let cfg = ChannelConfig {
            channels: vec![1, 6],
            contention_lo_ms: 0.0,
            contention_hi_ms: 50.0,
            ..Default::default()
        };
        let e = evict_supplicant(&cfg, &EvictionParams::default()).unwrap();
        assert!((e.config.contention_hi_ms - 5.0).abs() < 1e-9);
        assert_eq!(e.quiet_for, VirtualTime::from_secs(2.0));
    }

    #[test]
    fn eviction_needs_multiple_channels() {
        let cfg = ChannelConfig::default();
        assert_eq!(
            evict_supplicant(&cfg, &EvictionParams::default()).unwrap_err(),
            ChannelError::EvictionUnavailable
        );
    }

    #[test]
    fn mac_roundtrip() {
        let m: Mac = "02:00:00:00:00:07".parse().unwrap();
        assert_eq!(m.to_string(), "02:00:00:00:00:07");
        assert!("02:00:00".parse::<Mac>().is_err());
    }
}
