//! Server-side TCP segment classification.
//!
//! The endpoint models exactly the response taxonomy the frame-size side
//! channel depends on: RST for unknown tuples, challenge ACKs for
//! suspicious SYN/RST/ACK segments, SACK-ACKs for old duplicate data, and
//! silence for invalid acknowledgment numbers.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqspace::ModSpace;

/// Connection identity: [client IP, client port, server IP, server port].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct FourTuple {
    pub client_ip: Ipv4Addr,
    pub client_port: u16,
    pub server_ip: Ipv4Addr,
    pub server_port: u16,
}

/// TCP option profile of the connection; both options are on by default.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptionsProfile {
    pub timestamps_enabled: bool,
    pub sack_enabled: bool,
}

impl Default for OptionsProfile {
    fn default() -> Self {
        OptionsProfile { timestamps_enabled: true, sack_enabled: true }
    }
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct SegFlags {
    pub syn: bool,
    pub ack: bool,
    pub rst: bool,
    pub psh: bool,
}

/// A probe/response TCP segment abstracted to flags, numbers and payload.
#[derive(Clone, Debug)]
pub struct SegmentMeta {
    pub tuple: FourTuple,
    pub flags: SegFlags,
    pub seq: u32,
    pub ack: u32,
    pub payload: Vec<u8>,
}

impl SegmentMeta {
    pub fn payload_len(&self) -> u32 {
        self.payload.len() as u32
    }

    pub fn syn_ack(tuple: FourTuple, seq: u32, ack: u32) -> SegmentMeta {
        SegmentMeta {
            tuple,
            flags: SegFlags { syn: true, ack: true, ..Default::default() },
            seq,
            ack,
            payload: Vec::new(),
        }
    }

    pub fn data(tuple: FourTuple, seq: u32, ack: u32, payload: Vec<u8>) -> SegmentMeta {
        assert!(!payload.is_empty(), "data segment needs payload");
        SegmentMeta {
            tuple,
            flags: SegFlags { ack: true, psh: true, ..Default::default() },
            seq,
            ack,
            payload,
        }
    }

    pub fn rst(tuple: FourTuple, seq: u32) -> SegmentMeta {
        SegmentMeta {
            tuple,
            flags: SegFlags { rst: true, ..Default::default() },
            seq,
            ack: 0,
            payload: Vec::new(),
        }
    }
}

/// Total classification of a handled segment.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TcpResponse {
    Silence,
    Rst,
    DupAck,
    ChallengeAck,
    SackAck,
    AcceptData,
    ConnectionReset,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AckClass {
    Challenge,
    Acceptable,
    Invalid,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SeqClass {
    OldDuplicate,
    Acceptable,
    BeyondWindow,
    Unreachable,
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum SegmentError {
    #[error("malformed segment: SYN and RST both set")]
    SynRst,
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum StateError {
    #[error("rcv_wnd out of range (must be in (0, size/4))")]
    RcvWnd,
    #[error("snd_wnd out of range (must be in [0, size/4))")]
    SndWnd,
    #[error("unacknowledged data exceeds half the sequence space")]
    Unacked,
    #[error("client_port must be nonzero for an established connection")]
    ClientPort,
}

/// Server-side TCP window state.
#[derive(Clone, Debug)]
pub struct ServerConnState {
    pub tuple: FourTuple,
    pub rcv_nxt: u32,
    pub rcv_wnd: u32,
    pub snd_una: u32,
    pub snd_nxt: u32,
    pub snd_wnd: u32,
    pub options: OptionsProfile,
    pub open: bool,
    space: ModSpace,
    /// rcv_nxt at construction time; stream offsets are relative to it.
    irs: u32,
    /// Contiguous bytes accepted since construction.
    stream: Vec<u8>,
}

impl ServerConnState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tuple: FourTuple,
        rcv_nxt: u32,
        rcv_wnd: u32,
        snd_una: u32,
        snd_nxt: u32,
        snd_wnd: u32,
        options: OptionsProfile,
        space: ModSpace,
    ) -> Result<ServerConnState, StateError> {
        let quarter = (space.size() / 4) as u64;
        if tuple.client_port == 0 {
            return Err(StateError::ClientPort);
        }
        if rcv_wnd == 0 || rcv_wnd as u64 >= quarter {
            return Err(StateError::RcvWnd);
        }
        if snd_wnd as u64 >= quarter {
            return Err(StateError::SndWnd);
        }
        if space.distance(snd_una, snd_nxt) as u64 > (space.size() / 2) - 1 {
            return Err(StateError::Unacked);
        }
        Ok(ServerConnState {
            tuple,
            rcv_nxt: rcv_nxt & space.mask(),
            rcv_wnd,
            snd_una: snd_una & space.mask(),
            snd_nxt: snd_nxt & space.mask(),
            snd_wnd,
            options,
            open: true,
            space,
            irs: rcv_nxt & space.mask(),
            stream: Vec::new(),
        })
    }

    pub fn space(&self) -> ModSpace {
        self.space
    }

    pub fn initial_rcv_nxt(&self) -> u32 {
        self.irs
    }

    /// Bytes accepted in order since construction.
    pub fn stream(&self) -> &[u8] {
        &self.stream
    }

    /// Advances rcv_nxt as if `n` in-order bytes arrived from the
    /// legitimate client (live traffic); the bytes are zeros.
    pub fn absorb_live_bytes(&mut self, n: u32) {
        self.rcv_nxt = self.space.add(self.rcv_nxt, n);
        self.stream.extend(std::iter::repeat(0u8).take(n as usize));
    }
}

/// Acknowledgment-number classification against the send-side windows.
///
/// Acceptable: (snd_una - snd_wnd, snd_nxt]
/// Challenge:  [snd_una - half + 1, snd_una - snd_wnd]
/// Invalid:    everything else (ahead of snd_nxt)
pub fn classify_ack(state: &ServerConnState, seg_ack: u32) -> AckClass {
    let sp = state.space;
    let acc_lo_excl = sp.sub(state.snd_una, state.snd_wnd);
    let acc_len = sp.distance(acc_lo_excl, state.snd_nxt) as u64;
    if sp.in_window(seg_ack, sp.add(acc_lo_excl, 1), acc_len) {
        return AckClass::Acceptable;
    }
    let chal_lo = sp.sub(state.snd_una, sp.half() - 1);
    let chal_len = (sp.half() - state.snd_wnd) as u64;
    if sp.in_window(seg_ack, chal_lo, chal_len) {
        return AckClass::Challenge;
    }
    AckClass::Invalid
}

/// Sequence-number classification for a data segment.
///
/// OldDuplicate: seg_seq in (rcv_nxt - half, rcv_nxt - payload_len]
/// Acceptable:   seg_seq in [rcv_nxt - payload_len + 1, rcv_nxt + rcv_wnd]
/// BeyondWindow: seg_seq in (rcv_nxt + rcv_wnd, rcv_nxt + half)
/// Unreachable:  the residue [rcv_nxt + half, rcv_nxt + half + payload_len - 1]
///
/// The three named regions cover size - payload_len values; the remaining
/// payload_len values (opposite the window, exactly half a space away)
/// are the Unreachable residue.
pub fn classify_seq(state: &ServerConnState, seg_seq: u32, payload_len: u32) -> SeqClass {
    assert!(payload_len >= 1, "pure ACK probes do not use this classifier");
    let sp = state.space;
    let half = sp.half();
    debug_assert!(payload_len < half);

    let old_lo = sp.sub(state.rcv_nxt, half - 1);
    let old_len = (half - payload_len) as u64;
    if sp.in_window(seg_seq, old_lo, old_len) {
        return SeqClass::OldDuplicate;
    }
    let acc_lo = sp.sub(state.rcv_nxt, payload_len - 1);
    let acc_len = payload_len as u64 + state.rcv_wnd as u64;
    if sp.in_window(seg_seq, acc_lo, acc_len) {
        return SeqClass::Acceptable;
    }
    let beyond_lo = sp.add(state.rcv_nxt, state.rcv_wnd + 1);
    let beyond_len = (half - state.rcv_wnd - 1) as u64;
    if sp.in_window(seg_seq, beyond_lo, beyond_len) {
        return SeqClass::BeyondWindow;
    }
    SeqClass::Unreachable
}

/// Dispatches an incoming segment to the response taxonomy.
///
/// `state` is the connection matching the segment's tuple, or None when no
/// such connection exists (including closed connections).
pub fn handle_segment(
    state: Option<&mut ServerConnState>,
    seg: &SegmentMeta,
) -> Result<TcpResponse, SegmentError> {
    if seg.flags.syn && seg.flags.rst {
        return Err(SegmentError::SynRst);
    }
    let state = match state {
        Some(s) if s.open => s,
        _ => {
            // No live connection: reset anything except an incoming RST,
            // which never elicits a reply of its own.
            return Ok(if seg.flags.rst { TcpResponse::Silence } else { TcpResponse::Rst });
        }
    };
    let sp = state.space;

    if seg.flags.syn {
        // SYN on an open connection challenges regardless of seq.
        return Ok(TcpResponse::ChallengeAck);
    }

    if seg.flags.rst {
        if seg.seq == state.rcv_nxt {
            state.open = false;
            return Ok(TcpResponse::ConnectionReset);
        }
        // In-window ([rcv_nxt, rcv_nxt + rcv_wnd]) but not exact.
        if sp.in_window(seg.seq, state.rcv_nxt, state.rcv_wnd as u64 + 1) {
            return Ok(TcpResponse::ChallengeAck);
        }
        return Ok(TcpResponse::Silence);
    }

    let payload_len = seg.payload_len();
    if payload_len == 0 {
        // Pure ACK: only the challenge zone elicits a response.
        return Ok(match classify_ack(state, seg.ack) {
            AckClass::Challenge => TcpResponse::ChallengeAck,
            _ => TcpResponse::Silence,
        });
    }

    match classify_seq(state, seg.seq, payload_len) {
        SeqClass::OldDuplicate => Ok(if state.options.sack_enabled {
            TcpResponse::SackAck
        } else {
            TcpResponse::DupAck
        }),
        // The Unreachable residue sits beyond any plausible window; it is
        // answered like beyond-window data.
        SeqClass::BeyondWindow | SeqClass::Unreachable => Ok(TcpResponse::DupAck),
        SeqClass::Acceptable => match classify_ack(state, seg.ack) {
            AckClass::Invalid => Ok(TcpResponse::Silence),
            AckClass::Challenge => Ok(TcpResponse::ChallengeAck),
            AckClass::Acceptable => {
                // Accept the suffix that overlaps new sequence space; only
                // a segment covering rcv_nxt advances the window.
                let skip = sp.distance(seg.seq, state.rcv_nxt);
                if (skip as u64) < payload_len as u64 {
                    state.stream.extend_from_slice(&seg.payload[skip as usize..]);
                    state.rcv_nxt = sp.add(seg.seq, payload_len);
                }
                Ok(TcpResponse::AcceptData)
            }
        },
    }
}

/// IP-level length of a response packet (20 IP + 20 TCP + options).
///
/// Returns None for Silence. AcceptData and ConnectionReset are sized like
/// a plain ACK for callers that choose to emit one.
pub fn response_ip_length(kind: TcpResponse, options: &OptionsProfile) -> Option<u32> {
    let ts = if options.timestamps_enabled { 12 } else { 0 };
    match kind {
        TcpResponse::Silence => None,
        TcpResponse::Rst => Some(40),
        TcpResponse::DupAck
        | TcpResponse::ChallengeAck
        | TcpResponse::AcceptData
        | TcpResponse::ConnectionReset => Some(40 + ts),
        TcpResponse::SackAck => Some(40 + ts + 12),
    }
}

/// A set of server connections keyed by four-tuple.
#[derive(Default, Debug)]
pub struct TcpEndpoint {
    conns: HashMap<FourTuple, ServerConnState>,
}

impl TcpEndpoint {
    pub fn new() -> TcpEndpoint {
        TcpEndpoint { conns: HashMap::new() }
    }

    pub fn insert(&mut self, state: ServerConnState) {
        self.conns.insert(state.tuple, state);
    }

    pub fn get(&self, tuple: &FourTuple) -> Option<&ServerConnState> {
        self.conns.get(tuple)
    }

    pub fn get_mut(&mut self, tuple: &FourTuple) -> Option<&mut ServerConnState> {
        self.conns.get_mut(tuple)
    }

    pub fn handle(&mut self, seg: &SegmentMeta) -> Result<TcpResponse, SegmentError> {
        handle_segment(self.conns.get_mut(&seg.tuple), seg)
    }
}
