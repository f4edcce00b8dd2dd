//! Countermeasure policies: frame padding and response uniformization.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{run_scenario, ScenarioConfig, WorldError};
use crate::tcp::{response_ip_length, OptionsProfile, TcpResponse};
use crate::wifi::{encapsulate, EncapsulationConfig};

/// Frame-size padding applied after encapsulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PaddingPolicy {
    None,
    /// Every frame is emitted at exactly `target` bytes.
    Fixed { target: u32 },
    /// Round up to the smallest bucket that fits.
    Bucket { sizes: Vec<u32> },
    /// Add uniform random padding in [0, max_extra].
    Random { max_extra: u32 },
}

impl Default for PaddingPolicy {
    fn default() -> Self {
        PaddingPolicy::None
    }
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum PaddingError {
    #[error("frame of {input} bytes exceeds largest bucket {largest}")]
    BucketOverflow { input: u32, largest: u32 },
    #[error("bucket list is empty")]
    EmptyBuckets,
}

impl PaddingPolicy {
    /// Applies the policy to an already-encapsulated length.
    pub fn apply(&self, input: u32, rng: &mut dyn RngCore) -> Result<u32, PaddingError> {
        match self {
            PaddingPolicy::None => Ok(input),
            PaddingPolicy::Fixed { target } => Ok(input.max(*target).min(*target)),
            PaddingPolicy::Bucket { sizes } => {
                let largest = *sizes.iter().max().ok_or(PaddingError::EmptyBuckets)?;
                sizes
                    .iter()
                    .copied()
                    .filter(|&b| b >= input)
                    .min()
                    .ok_or(PaddingError::BucketOverflow { input, largest })
            }
            PaddingPolicy::Random { max_extra } => Ok(input + rng.gen_range(0..=*max_extra)),
        }
    }
}

/// Convenience wrapper matching the policy's operation shape.
pub fn apply_padding(
    policy: &PaddingPolicy,
    ip_plus_overhead: u32,
    rng: &mut dyn RngCore,
) -> Result<u32, PaddingError> {
    policy.apply(ip_plus_overhead, rng)
}

/// When enabled, every non-silent control response is reported at one
/// canonical IP length, collapsing the RST/ACK/SACK-ACK size distinction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct UniformResponsePolicy {
    pub enabled: bool,
    pub canonical_ip_len: u32,
    /// Optionally also respond where the stack would stay silent, closing
    /// the residual presence/absence channel. Off by default.
    pub always_respond: bool,
}

impl Default for UniformResponsePolicy {
    fn default() -> Self {
        UniformResponsePolicy { enabled: false, canonical_ip_len: 64, always_respond: false }
    }
}

/// What actually goes on the air for a handled segment, before
/// encapsulation. A reset that succeeded tears the connection down
/// without transmitting anything, and an accepted in-order segment is
/// acknowledged like a plain ACK.
pub fn wire_response_len(
    kind: TcpResponse,
    options: &OptionsProfile,
    uniform: &UniformResponsePolicy,
) -> Option<u32> {
    let base = match kind {
        TcpResponse::ConnectionReset => None,
        other => response_ip_length(other, options),
    };
    if uniform.enabled {
        if base.is_some() || uniform.always_respond {
            return Some(uniform.canonical_ip_len);
        }
        return None;
    }
    base
}

/// Measured effect of the configured defenses.
#[derive(Clone, Debug)]
pub struct DefenseReport {
    pub trials: u32,
    pub baseline_success: f64,
    pub defended_success: f64,
    /// Failure/inconclusive phase tallies across defended runs.
    pub fail_phases: BTreeMap<String, u32>,
    /// Whether an open and a closed port can still produce different
    /// observable frame lengths under the defended config.
    pub distinguishable: bool,
    /// True when the silence-vs-response side channel is also closed.
    pub silence_channel_closed: bool,
}

/// All observable lengths a response kind can produce under the config.
fn signature(
    kind: TcpResponse,
    options: &OptionsProfile,
    uniform: &UniformResponsePolicy,
    encaps: &EncapsulationConfig,
) -> BTreeSet<Option<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ec5_1697);
    let mut out = BTreeSet::new();
    for _ in 0..64 {
        let obs = wire_response_len(kind, options, uniform)
            .map(|ip_len| encapsulate(ip_len, encaps, &mut rng).unwrap_or(ip_len + 16));
        out.insert(obs);
    }
    out
}

/// Runs the scenario with and without its defenses over `trials` seeds
/// and compares end-to-end success, alongside a static check of whether
/// the port oracle (challenge ACK vs RST) stays distinguishable.
pub fn evaluate_defense(cfg: &ScenarioConfig, trials: u32) -> Result<DefenseReport, WorldError> {
    let mut baseline_cfg = cfg.clone();
    baseline_cfg.defense.uniform.enabled = false;
    baseline_cfg.encapsulation.padding = PaddingPolicy::None;

    let mut baseline_ok = 0u32;
    let mut defended_ok = 0u32;
    let mut fail_phases: BTreeMap<String, u32> = BTreeMap::new();
    for trial in 0..trials {
        let mut b = baseline_cfg.clone();
        b.seed = cfg.seed.wrapping_add(trial as u64);
        if run_scenario(&b)?.report.outcome.is_success() {
            baseline_ok += 1;
        }
        let mut d = cfg.clone();
        d.seed = b.seed;
        let run = run_scenario(&d)?;
        if run.report.outcome.is_success() {
            defended_ok += 1;
        } else {
            *fail_phases.entry(run.report.outcome.to_string()).or_insert(0) += 1;
        }
    }

    let open = signature(
        TcpResponse::ChallengeAck,
        &cfg.victim.options,
        &cfg.defense.uniform,
        &cfg.encapsulation,
    );
    let closed = signature(
        TcpResponse::Rst,
        &cfg.victim.options,
        &cfg.defense.uniform,
        &cfg.encapsulation,
    );

    Ok(DefenseReport {
        trials,
        baseline_success: baseline_ok as f64 / trials.max(1) as f64,
        defended_success: defended_ok as f64 / trials.max(1) as f64,
        fail_phases,
        distinguishable: open != closed,
        silence_channel_closed: cfg.defense.uniform.enabled && cfg.defense.uniform.always_respond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn fixed_padding_has_constant_image() {
        let p = PaddingPolicy::Fixed { target: 128 };
        let mut r = rng();
        for input in [56u32, 68, 80] {
            assert_eq!(p.apply(input, &mut r).unwrap(), 128);
        }
    }

    #[test]
    fn bucket_takes_smallest_fit() {
        let p = PaddingPolicy::Bucket { sizes: vec![64, 96, 128] };
        let mut r = rng();
        assert_eq!(p.apply(56, &mut r).unwrap(), 64);
        assert_eq!(p.apply(68, &mut r).unwrap(), 96);
        assert_eq!(p.apply(80, &mut r).unwrap(), 96);
        assert_eq!(
            p.apply(200, &mut r),
            Err(PaddingError::BucketOverflow { input: 200, largest: 128 })
        );
    }

    #[test]
    fn none_is_identity() {
        let mut r = rng();
        assert_eq!(PaddingPolicy::None.apply(68, &mut r).unwrap(), 68);
    }

    #[test]
    fn random_padding_is_bounded_and_seeded() {
        let p = PaddingPolicy::Random { max_extra: 16 };
        let mut a = rng();
        let mut b = rng();
        for _ in 0..100 {
            let x = p.apply(68, &mut a).unwrap();
            assert!((68..=84).contains(&x));
            assert_eq!(x, p.apply(68, &mut b).unwrap());
        }
    }

    #[test]
    fn uniform_policy_collapses_the_size_alphabet() {
        let options = OptionsProfile::default();
        let uniform = UniformResponsePolicy { enabled: true, canonical_ip_len: 64, always_respond: false };
        for kind in [TcpResponse::Rst, TcpResponse::ChallengeAck, TcpResponse::SackAck] {
            assert_eq!(wire_response_len(kind, &options, &uniform), Some(64));
        }
        assert_eq!(wire_response_len(TcpResponse::Silence, &options, &uniform), None);
        let always = UniformResponsePolicy { always_respond: true, ..uniform };
        assert_eq!(wire_response_len(TcpResponse::Silence, &options, &always), Some(64));
        assert_eq!(wire_response_len(TcpResponse::ConnectionReset, &options, &always), Some(64));
    }

    #[test]
    fn successful_reset_transmits_nothing_by_default() {
        let options = OptionsProfile::default();
        let off = UniformResponsePolicy::default();
        assert_eq!(wire_response_len(TcpResponse::ConnectionReset, &options, &off), None);
        assert_eq!(wire_response_len(TcpResponse::Rst, &options, &off), Some(40));
    }

    #[test]
    fn fixed_padding_hides_the_port_oracle() {
        let mut cfg = crate::harness::ScenarioConfig::default();
        cfg.space_bits = 16;
        cfg.inference.port_start = 40_000;
        cfg.inference.port_end = 40_003;
        cfg.duration_limit_s = 120.0;
        cfg.encapsulation.padding = PaddingPolicy::Fixed { target: 96 };
        let report = evaluate_defense(&cfg, 2).unwrap();
        assert!(!report.distinguishable);
        assert!((report.baseline_success - 1.0).abs() < 1e-12, "{report:?}");
        assert_eq!(report.defended_success, 0.0, "{report:?}");
        assert!(!report.silence_channel_closed);
    }

    #[test]
    fn coarse_buckets_can_stay_distinguishable() {
        let cfg = {
            let mut c = crate::harness::ScenarioConfig::default();
            c.encapsulation.padding = PaddingPolicy::Bucket { sizes: vec![64, 96, 128] };
            c
        };
        let open = signature(
            TcpResponse::ChallengeAck,
            &cfg.victim.options,
            &cfg.defense.uniform,
            &cfg.encapsulation,
        );
        let closed = signature(
            TcpResponse::Rst,
            &cfg.victim.options,
            &cfg.defense.uniform,
            &cfg.encapsulation,
        );
        assert_ne!(open, closed);
    }

    #[test]
    fn bucket_is_monotone_and_idempotent_on_image() {
        let p = PaddingPolicy::Bucket { sizes: vec![64, 96, 128] };
        let mut r = rng();
        let mut prev = 0;
        for input in 16..=128u32 {
            let out = p.apply(input, &mut r).unwrap();
            assert!(out >= prev);
            prev = out;
            assert_eq!(p.apply(out, &mut r).unwrap(), out);
        }
    }
}
