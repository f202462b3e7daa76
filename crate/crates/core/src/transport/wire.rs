//! Frame format shared by every channel flavor:
//! `[u32 len][u8 msg_type][u16 variant][u64 seq][payload]`, little-endian,
//! where `len` counts the bytes after the length field.

use std::io::{self, Read};

use serde::{Deserialize, Serialize};

use crate::error::TransportError;
use crate::syscall_model::{NormalizedArgs, SyscallKind, SyscallResult, VariantId};

/// Bytes between the length field and the payload.
pub const HEADER_LEN: usize = 1 + 2 + 8;
/// Upper bound on a frame body; anything larger is treated as corruption.
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MsgType {
    ArgBroadcast,
    ResultReplication,
    LockstepSubmit,
    LockstepRelease,
    MispredictNotice,
    Terminate,
}

impl MsgType {
    pub const ALL: [MsgType; 6] = [
        MsgType::ArgBroadcast,
        MsgType::ResultReplication,
        MsgType::LockstepSubmit,
        MsgType::LockstepRelease,
        MsgType::MispredictNotice,
        MsgType::Terminate,
    ];

    pub fn code(self) -> u8 {
        match self {
            MsgType::ArgBroadcast => 1,
            MsgType::ResultReplication => 2,
            MsgType::LockstepSubmit => 3,
            MsgType::LockstepRelease => 4,
            MsgType::MispredictNotice => 5,
            MsgType::Terminate => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<MsgType> {
        MsgType::ALL.into_iter().find(|t| t.code() == code)
    }
}

/// What a follower does once a lockstep round resolves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReleaseAction {
    ExecuteLocal,
    Replicated(SyscallResult),
    /// Acknowledges a finished submission; not a round.
    Finished,
}

/// Typed payloads. Every body carrying protocol data is stamped with the
/// sender's simulated clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Body {
    Args {
        sent_ns: u64,
        kind: SyscallKind,
        args: NormalizedArgs,
    },
    Result {
        sent_ns: u64,
        result: SyscallResult,
    },
    /// `None` means the submitting variant's script is exhausted.
    Submit {
        sent_ns: u64,
        call: Option<(SyscallKind, NormalizedArgs)>,
    },
    Release {
        sent_ns: u64,
        round: u64,
        action: ReleaseAction,
    },
    Mispredict {
        sent_ns: u64,
        detail: String,
    },
    Terminate {
        graceful: bool,
        reason: String,
    },
}

impl Body {
    pub fn sent_ns(&self) -> Option<u64> {
        match self {
            Body::Args { sent_ns, .. }
            | Body::Result { sent_ns, .. }
            | Body::Submit { sent_ns, .. }
            | Body::Release { sent_ns, .. }
            | Body::Mispredict { sent_ns, .. } => Some(*sent_ns),
            Body::Terminate { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub variant: VariantId,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, variant: VariantId, seq: u64, body: &Body) -> Self {
        WireMessage {
            msg_type,
            variant,
            seq,
            payload: serde_json::to_vec(body).expect("bodies always serialize"),
        }
    }

    pub fn body(&self) -> Result<Body, TransportError> {
        serde_json::from_slice(&self.payload).map_err(|e| TransportError::Decode(e.to_string()))
    }

    pub fn encoded_len(&self) -> usize {
        4 + HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&((HEADER_LEN + self.payload.len()) as u32).to_le_bytes());
        out.push(self.msg_type.code());
        out.extend_from_slice(&self.variant.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decode exactly one complete frame.
    pub fn decode(frame: &[u8]) -> Result<WireMessage, TransportError> {
        let bad = |m: &str| TransportError::Decode(m.to_string());
        if frame.len() < 4 + HEADER_LEN {
            return Err(bad("frame shorter than header"));
        }
        let len = u32::from_le_bytes(frame[0..4].try_into().unwrap()) as usize;
        if len != frame.len() - 4 {
            return Err(bad("length field disagrees with frame size"));
        }
        let msg_type = MsgType::from_code(frame[4]).ok_or_else(|| bad("unknown message type"))?;
        Ok(WireMessage {
            msg_type,
            variant: u16::from_le_bytes(frame[5..7].try_into().unwrap()),
            seq: u64::from_le_bytes(frame[7..15].try_into().unwrap()),
            payload: frame[15..].to_vec(),
        })
    }
}

/// Read one raw frame from a byte stream. `Ok(None)` on clean EOF at a
/// frame boundary.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_le_bytes(len) as usize;
    if !(HEADER_LEN..=MAX_FRAME).contains(&n) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad frame length {n}")));
    }
    let mut frame = vec![0u8; 4 + n];
    frame[..4].copy_from_slice(&len);
    r.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}
