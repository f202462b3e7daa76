//! Per-variant descriptor metadata shared by the in-process and
//! cross-process monitors. Drives fd and setsockopt prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::syscall_model::{
    Errno, FdClass, FdView, SyscallEvent, SyscallKind, SyscallResult, SUPPORTED_SOCKOPTS,
};

/// Descriptors every variant starts with: stdin, stdout, stderr.
pub const STDIO_FDS: [i32; 3] = [0, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FdOrigin {
    Local,
    /// Registered from the leader's result; no local I/O capability.
    ReplicatedShadow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FdMeta {
    pub fd: i32,
    pub kind: FdClass,
    pub path: Option<String>,
    pub flags: BTreeSet<String>,
    pub socket_opts: BTreeMap<(i64, i64), i64>,
    pub origin: FdOrigin,
}

impl FdMeta {
    pub fn is_shadow(&self) -> bool {
        self.origin == FdOrigin::ReplicatedShadow
    }

    pub fn is_socket(&self) -> bool {
        matches!(self.kind, FdClass::Socket | FdClass::PrivateSocket)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictedResult {
    Success(i64),
    Failure(Errno),
}

impl PredictedResult {
    pub fn matches(&self, actual: &SyscallResult) -> bool {
        match (*self, actual.errno) {
            (PredictedResult::Success(ret), None) => actual.ret == ret,
            (PredictedResult::Failure(e), Some(actual)) => e == actual,
            _ => false,
        }
    }

    pub fn to_result(self, kind: SyscallKind) -> SyscallResult {
        match self {
            PredictedResult::Success(ret) => SyscallResult::ok(kind, ret),
            PredictedResult::Failure(e) => SyscallResult::err(kind, e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMap {
    entries: BTreeMap<i32, FdMeta>,
    version: u64,
    anomalies: Vec<String>,
}

impl Default for FileMap {
    fn default() -> Self {
        FileMap::with_stdio()
    }
}

impl FileMap {
    pub fn empty() -> Self {
        FileMap {
            entries: BTreeMap::new(),
            version: 0,
            anomalies: Vec::new(),
        }
    }

    pub fn with_stdio() -> Self {
        let mut map = FileMap::empty();
        for fd in STDIO_FDS {
            map.entries.insert(
                fd,
                FdMeta {
                    fd,
                    kind: FdClass::Pipe,
                    path: None,
                    flags: BTreeSet::new(),
                    socket_opts: BTreeMap::new(),
                    origin: FdOrigin::Local,
                },
            );
        }
        map
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, fd: i32) -> Option<&FdMeta> {
        self.entries.get(&fd)
    }

    pub fn entries(&self) -> impl Iterator<Item = &FdMeta> {
        self.entries.values()
    }

    pub fn fds(&self) -> BTreeSet<i32> {
        self.entries.keys().copied().collect()
    }

    pub fn anomalies(&self) -> &[String] {
        &self.anomalies
    }

    /// Lowest descriptor number not in use, mirroring the kernel's allocator.
    pub fn predict_next_fd(&self) -> i32 {
        let mut candidate = 0;
        for &fd in self.entries.keys() {
            if fd > candidate {
                break;
            }
            if fd == candidate {
                candidate += 1;
            }
        }
        candidate
    }

    pub fn predict_setsockopt(&self, fd: i32, level: i64, opt: i64, _value: i64) -> PredictedResult {
        match self.entries.get(&fd) {
            None => PredictedResult::Failure(Errno::EBADF),
            Some(meta) if !meta.is_socket() => PredictedResult::Failure(Errno::ENOTSOCK),
            Some(_) if !SUPPORTED_SOCKOPTS.contains(&(level, opt)) => {
                PredictedResult::Failure(Errno::ENOPROTOOPT)
            }
            Some(_) => PredictedResult::Success(0),
        }
    }

    /// Expected close outcome: success iff the descriptor is known.
    pub fn predict_close(&self, fd: i32) -> PredictedResult {
        if self.entries.contains_key(&fd) {
            PredictedResult::Success(0)
        } else {
            PredictedResult::Failure(Errno::EBADF)
        }
    }

    /// Apply the effect of a completed fd-mutating call.
    pub fn record(&mut self, event: &SyscallEvent, result: &SyscallResult, origin: FdOrigin) {
        match event.kind {
            k if k.creates_fd() => {
                if !result.is_ok() {
                    return;
                }
                let fd = result.ret as i32;
                let created = result.created.clone();
                let kind = created.as_ref().map(|c| c.class).unwrap_or(FdClass::File);
                let path = created.and_then(|c| c.path).or_else(|| event.args.path.clone());
                if self.entries.contains_key(&fd) {
                    self.anomalies.push(format!("fd {fd} reused while still registered"));
                }
                self.entries.insert(
                    fd,
                    FdMeta {
                        fd,
                        kind,
                        path,
                        flags: event.args.flags.clone(),
                        socket_opts: BTreeMap::new(),
                        origin,
                    },
                );
                self.version += 1;
            }
            SyscallKind::Close => {
                let Some(fd) = event.args.fd else { return };
                if self.entries.remove(&fd).is_some() {
                    self.version += 1;
                } else {
                    self.anomalies.push(format!("close of unregistered fd {fd}"));
                }
            }
            SyscallKind::Setsockopt => {
                if !result.is_ok() {
                    return;
                }
                let (Some(fd), Some(level), Some(opt)) =
                    (event.args.fd, event.args.num("level"), event.args.num("opt"))
                else {
                    return;
                };
                if let Some(meta) = self.entries.get_mut(&fd) {
                    meta.socket_opts
                        .insert((level, opt), event.args.num("value").unwrap_or(0));
                    self.version += 1;
                }
            }
            _ => {}
        }
    }

    /// One line per descriptor: `fd kind origin path/opts`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for m in self.entries.values() {
            let origin = match m.origin {
                FdOrigin::Local => "local",
                FdOrigin::ReplicatedShadow => "shadow",
            };
            let detail = match &m.path {
                Some(p) => p.clone(),
                None if m.socket_opts.is_empty() => "-".to_string(),
                None => m
                    .socket_opts
                    .iter()
                    .map(|((l, o), v)| format!("{l}:{o}={v}"))
                    .collect::<Vec<_>>()
                    .join(","),
            };
            let _ = writeln!(out, "{} {} {} {}", m.fd, m.kind.name(), origin, detail);
        }
        out
    }
}

impl FdView for FileMap {
    fn fd_class(&self, fd: i32) -> Option<FdClass> {
        self.entries.get(&fd).map(|m| m.kind)
    }
}

/// One variant's file map, readable by both monitors. Mutations come from
/// whichever monitor is handling the variant's current call.
#[derive(Debug, Clone, Default)]
pub struct SharedFileMap(Arc<RwLock<FileMap>>);

impl SharedFileMap {
    pub fn new(map: FileMap) -> Self {
        SharedFileMap(Arc::new(RwLock::new(map)))
    }

    /// A copy taken under the read lock, so it never mixes two mutations.
    pub fn snapshot(&self) -> FileMap {
        self.0.read().expect("file map lock poisoned").clone()
    }

    pub fn read<R>(&self, f: impl FnOnce(&FileMap) -> R) -> R {
        f(&self.0.read().expect("file map lock poisoned"))
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut FileMap) -> R) -> R {
        f(&mut self.0.write().expect("file map lock poisoned"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syscall_model::{CreatedFd, Issuer, NormalizedArgs};

    fn ev(kind: SyscallKind, fd: Option<i32>, path: Option<&str>) -> SyscallEvent {
        SyscallEvent {
            variant: 0,
            seq: 0,
            kind,
            args: NormalizedArgs {
                fd,
                path: path.map(str::to_string),
                ..Default::default()
            },
            issuer: Issuer::Application,
            buffer: None,
        }
    }

    fn opened(fd: i64, class: FdClass) -> SyscallResult {
        SyscallResult {
            created: Some(CreatedFd { class, path: None }),
            ..SyscallResult::ok(SyscallKind::Open, fd)
        }
    }

    fn scan_oracle(fds: &BTreeSet<i32>) -> i32 {
        let max = fds.iter().max().copied().unwrap_or(-1);
        (0..=max + 1).find(|c| !fds.contains(c)).unwrap()
    }

    #[test]
    fn next_fd_examples() {
        assert_eq!(FileMap::with_stdio().predict_next_fd(), 3);
        assert_eq!(FileMap::empty().predict_next_fd(), 0);
        let mut m = FileMap::with_stdio();
        for fd in [3, 5] {
            m.record(&ev(SyscallKind::Open, None, Some("/f")), &opened(fd, FdClass::File), FdOrigin::Local);
        }
        assert_eq!(m.predict_next_fd(), 4);
        assert_eq!(m.predict_next_fd(), scan_oracle(&m.fds()));
    }

    #[test]
    fn record_open_close() {
        let mut m = FileMap::with_stdio();
        let v0 = m.version();
        m.record(&ev(SyscallKind::Open, None, Some("/app/x")), &opened(3, FdClass::File), FdOrigin::Local);
        let meta = m.get(3).unwrap();
        assert_eq!((meta.kind, meta.path.as_deref(), meta.origin), (FdClass::File, Some("/app/x"), FdOrigin::Local));
        assert!(m.version() > v0);
        m.record(&ev(SyscallKind::Close, Some(3), None), &SyscallResult::ok(SyscallKind::Close, 0), FdOrigin::Local);
        assert!(m.get(3).is_none());
        assert_eq!(m.predict_next_fd(), 3);
    }

    #[test]
    fn shadow_accept_registers_socket() {
        let mut m = FileMap::with_stdio();
        let res = SyscallResult {
            created: Some(CreatedFd { class: FdClass::Socket, path: None }),
            ..SyscallResult::ok(SyscallKind::Accept, 4)
        };
        m.record(&ev(SyscallKind::Accept, Some(3), None), &res, FdOrigin::ReplicatedShadow);
        let meta = m.get(4).unwrap();
        assert_eq!((meta.kind, meta.origin), (FdClass::Socket, FdOrigin::ReplicatedShadow));
    }

    #[test]
    fn double_close_is_an_anomaly() {
        let mut m = FileMap::with_stdio();
        let close = ev(SyscallKind::Close, Some(2), None);
        m.record(&close, &SyscallResult::ok(SyscallKind::Close, 0), FdOrigin::Local);
        let v = m.version();
        m.record(&close, &SyscallResult::err(SyscallKind::Close, Errno::EBADF), FdOrigin::Local);
        assert_eq!(m.version(), v);
        assert_eq!(m.anomalies().len(), 1);
    }

    #[test]
    fn setsockopt_prediction() {
        let mut m = FileMap::with_stdio();
        m.record(&ev(SyscallKind::Open, None, Some("/f")), &opened(3, FdClass::File), FdOrigin::Local);
        m.record(&ev(SyscallKind::Socket, None, None), &opened(4, FdClass::Socket), FdOrigin::ReplicatedShadow);
        assert_eq!(m.predict_setsockopt(4, 1, 2, 1), PredictedResult::Success(0));
        assert_eq!(m.predict_setsockopt(3, 1, 2, 1), PredictedResult::Failure(Errno::ENOTSOCK));
        assert_eq!(m.predict_setsockopt(4, 1, 99, 1), PredictedResult::Failure(Errno::ENOPROTOOPT));
        assert_eq!(m.predict_setsockopt(9, 1, 2, 1), PredictedResult::Failure(Errno::EBADF));
    }

    #[test]
    fn dump_format() {
        let mut m = FileMap::with_stdio();
        m.record(&ev(SyscallKind::Open, None, Some("/app/a")), &opened(3, FdClass::File), FdOrigin::Local);
        let dump = m.dump();
        assert!(dump.lines().any(|l| l == "3 file local /app/a"));
        assert!(dump.lines().any(|l| l == "0 pipe local -"));
    }

    #[test]
    fn snapshots_are_consistent_under_concurrent_writes() {
        let shared = SharedFileMap::new(FileMap::with_stdio());
        let writer = shared.clone();
        let h = std::thread::spawn(move || {
            for i in 0..2000 {
                let fd = 3 + (i % 50);
                writer.write(|m| {
                    m.record(&ev(SyscallKind::Open, None, Some("/f")), &opened(fd as i64, FdClass::File), FdOrigin::Local);
                    m.record(&ev(SyscallKind::Close, Some(fd), None), &SyscallResult::ok(SyscallKind::Close, 0), FdOrigin::Local);
                });
            }
        });
        let mut last = 0;
        for _ in 0..2000 {
            let snap = shared.snapshot();
            assert!(snap.version() >= last);
            // Every quiescent point has exactly the stdio set.
            assert_eq!(snap.fds(), STDIO_FDS.into_iter().collect());
            last = snap.version();
        }
        h.join().unwrap();
    }
}
