//! Syscall vocabulary of the emulated kernel, argument normalization and
//! the sensitivity policy that decides which monitor handles a call.

mod normalize;
mod policy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use normalize::{canonical_path, normalize, RawCall, VariantContext};
pub use policy::{classify, FdPattern, PolicyRule, SensitivityPolicy, DEFAULT_POLICY};

use crate::error::ScenarioError;

macro_rules! syscall_kinds {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// The closed set of calls the emulated kernel understands.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum SyscallKind {
            $($variant),+
        }

        impl SyscallKind {
            pub const ALL: &'static [SyscallKind] = &[$(SyscallKind::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(SyscallKind::$variant => $name),+
                }
            }
        }

        impl FromStr for SyscallKind {
            type Err = ScenarioError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(SyscallKind::$variant),)+
                    other => Err(ScenarioError::call(format!("unknown syscall `{other}`"))),
                }
            }
        }
    };
}

syscall_kinds! {
    Open => "open",
    Close => "close",
    Read => "read",
    Write => "write",
    Getcwd => "getcwd",
    Brk => "brk",
    Mmap => "mmap",
    Mprotect => "mprotect",
    Setsockopt => "setsockopt",
    Socket => "socket",
    Bind => "bind",
    Listen => "listen",
    Accept => "accept",
    Connect => "connect",
    Send => "send",
    Recv => "recv",
    Stat => "stat",
    Lseek => "lseek",
    Exit => "exit",
}

impl fmt::Display for SyscallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl SyscallKind {
    /// Calls with no I/O component. Every variant executes these itself.
    pub fn is_non_io(self) -> bool {
        matches!(
            self,
            SyscallKind::Getcwd
                | SyscallKind::Brk
                | SyscallKind::Mmap
                | SyscallKind::Mprotect
                | SyscallKind::Exit
        )
    }

    /// Calls whose success allocates a new descriptor.
    pub fn creates_fd(self) -> bool {
        matches!(
            self,
            SyscallKind::Open | SyscallKind::Socket | SyscallKind::Accept
        )
    }

    /// Calls that change the descriptor table or descriptor metadata.
    pub fn mutates_fds(self) -> bool {
        self.creates_fd() || matches!(self, SyscallKind::Close | SyscallKind::Setsockopt)
    }
}

/// Identifies one variant; variant 0 is always the leader.
pub type VariantId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Issuer {
    Application,
    InProcessMonitor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensitivityClass {
    Sensitive,
    NonSensitive,
}

impl fmt::Display for SensitivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensitivityClass::Sensitive => "sensitive",
            SensitivityClass::NonSensitive => "nonsensitive",
        })
    }
}

/// What a descriptor refers to, as far as classification is concerned.
/// `Socket` is a socket on the public interface, `PrivateSocket` one on the
/// private network. `NoFd` is used for calls that take no descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FdClass {
    File,
    Pipe,
    Socket,
    PrivateSocket,
    NoFd,
}

impl FdClass {
    pub const ALL: &'static [FdClass] = &[
        FdClass::File,
        FdClass::Pipe,
        FdClass::Socket,
        FdClass::PrivateSocket,
        FdClass::NoFd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FdClass::File => "file",
            FdClass::Pipe => "pipe",
            FdClass::Socket => "socket",
            FdClass::PrivateSocket => "psocket",
            FdClass::NoFd => "none",
        }
    }
}

impl FromStr for FdClass {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FdClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| ScenarioError::call(format!("unknown fd kind `{s}`")))
    }
}

/// Read access to a variant's descriptor metadata.
pub trait FdView {
    fn fd_class(&self, fd: i32) -> Option<FdClass>;
}

/// 64-bit FNV-1a. Seedless, so equal buffers digest equally on every machine.
pub fn digest(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// A buffer argument reduced to its length and content digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Payload {
    pub len: u64,
    pub digest: u64,
}

impl Payload {
    pub fn of(bytes: &[u8]) -> Self {
        Payload {
            len: bytes.len() as u64,
            digest: digest(bytes),
        }
    }
}

/// Machine-independent arguments of one call. Never holds addresses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedArgs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nums: BTreeMap<String, i64>,
}

impl NormalizedArgs {
    pub fn num(&self, key: &str) -> Option<i64> {
        self.nums.get(key).copied()
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.contains(flag)
    }
}

/// One call issued by a variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyscallEvent {
    pub variant: VariantId,
    pub seq: u64,
    pub kind: SyscallKind,
    pub args: NormalizedArgs,
    pub issuer: Issuer,
    /// Bytes handed to write/send. Compared only through `args.payload`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer: Option<Vec<u8>>,
}

impl SyscallEvent {
    /// The same call, as re-issued by the in-process monitor on the restart path.
    pub fn restarted(&self) -> SyscallEvent {
        SyscallEvent {
            issuer: Issuer::InProcessMonitor,
            ..self.clone()
        }
    }

    /// Kind and arguments: the part of an event that variants must agree on.
    pub fn signature(&self) -> (SyscallKind, &NormalizedArgs) {
        (self.kind, &self.args)
    }
}

/// Symbolic error codes; platform numbers are deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Errno {
    EBADF,
    ENOENT,
    ENOTSOCK,
    ENOPROTOOPT,
    EINVAL,
    EAGAIN,
    ENOTCONN,
}

impl fmt::Display for Errno {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Errno {
    /// Failures that may go away when the call is simply issued again.
    pub fn is_transient(self) -> bool {
        matches!(self, Errno::EAGAIN)
    }
}

/// (level, option) pairs the emulated socket layer accepts.
pub const SUPPORTED_SOCKOPTS: &[(i64, i64)] = &[(1, 2), (1, 7), (1, 8), (1, 9), (6, 1)];

/// The descriptor a successful open/socket/accept produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedFd {
    pub class: FdClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// Outcome of one call as seen by the issuing variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyscallResult {
    pub kind: SyscallKind,
    pub ret: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errno: Option<Errno>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<CreatedFd>,
}

impl SyscallResult {
    pub fn ok(kind: SyscallKind, ret: i64) -> Self {
        SyscallResult {
            kind,
            ret,
            errno: None,
            data: None,
            created: None,
        }
    }

    pub fn err(kind: SyscallKind, errno: Errno) -> Self {
        SyscallResult {
            kind,
            ret: -1,
            errno: Some(errno),
            data: None,
            created: None,
        }
    }

    pub fn with_data(mut self, data: Vec<u8>) -> Self {
        self.data = Some(data);
        self
    }

    pub fn is_ok(&self) -> bool {
        self.errno.is_none()
    }

    /// Output bytes reduced to (length, digest), for comparing results.
    pub fn payload(&self) -> Option<Payload> {
        self.data.as_deref().map(Payload::of)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_reference_vectors() {
        assert_eq!(digest(b""), 0xcbf29ce484222325);
        assert_eq!(digest(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(digest(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn kind_names_round_trip() {
        for &k in SyscallKind::ALL {
            assert_eq!(k.name().parse::<SyscallKind>().unwrap(), k);
        }
        assert!("ioctl".parse::<SyscallKind>().is_err());
        assert_eq!(SyscallKind::ALL.len(), 19);
    }
}
