use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::filemap::STDIO_FDS;
use crate::syscall_model::{
    CreatedFd, Errno, FdClass, SyscallEvent, SyscallKind, SyscallResult, SUPPORTED_SOCKOPTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SocketState {
    Unbound,
    Bound,
    Listening,
    Connected,
}

#[derive(Debug, Clone)]
enum FdObject {
    File {
        path: String,
        offset: usize,
        append: bool,
    },
    Pipe,
    Socket {
        private: bool,
        state: SocketState,
        opts: BTreeMap<(i64, i64), i64>,
        inbox: VecDeque<u8>,
    },
    /// Occupies a descriptor number for an object that lives on the leader.
    Shadow {
        class: FdClass,
        path: Option<String>,
        opts: BTreeMap<(i64, i64), i64>,
    },
}

impl FdObject {
    fn class(&self) -> FdClass {
        match self {
            FdObject::File { .. } => FdClass::File,
            FdObject::Pipe => FdClass::Pipe,
            FdObject::Socket { private: false, .. } => FdClass::Socket,
            FdObject::Socket { private: true, .. } => FdClass::PrivateSocket,
            FdObject::Shadow { class, .. } => *class,
        }
    }

    fn path(&self) -> Option<&str> {
        match self {
            FdObject::File { path, .. } => Some(path),
            FdObject::Shadow { path, .. } => path.as_deref(),
            _ => None,
        }
    }
}

/// What a descriptor refers to, independent of which machine holds it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalFd {
    pub class: FdClass,
    pub path: Option<String>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ReplicationMismatch {
    #[error("leader result is for `{leader}` but this variant issued `{local}`")]
    KindMismatch {
        local: SyscallKind,
        leader: SyscallKind,
    },
    #[error("replicated fd {0} is already in use")]
    FdCollision(i32),
}

/// A deliberately small kernel: files, pipes, sockets and a descriptor
/// table. Each variant owns one; nothing is shared between them.
#[derive(Debug, Clone)]
pub struct EmulatedKernel {
    cwd: String,
    fd_table: BTreeMap<i32, FdObject>,
    fs: BTreeMap<String, Vec<u8>>,
    heap: i64,
    mappings: i64,
    net_data: Vec<u8>,
    fail_next: BTreeMap<SyscallKind, u32>,
    external_io: u64,
    executed: u64,
    applied: u64,
    exited: Option<i64>,
}

impl EmulatedKernel {
    pub fn new(fs: BTreeMap<String, Vec<u8>>, net_data: Vec<u8>) -> Self {
        EmulatedKernel {
            cwd: "/".to_string(),
            fd_table: STDIO_FDS.iter().map(|&fd| (fd, FdObject::Pipe)).collect(),
            fs,
            heap: 0,
            mappings: 0,
            net_data,
            fail_next: BTreeMap::new(),
            external_io: 0,
            executed: 0,
            applied: 0,
            exited: None,
        }
    }

    pub fn with_cwd(mut self, cwd: &str) -> Self {
        self.cwd = cwd.to_string();
        self
    }

    /// Make the next `count` calls of `kind` fail with EAGAIN.
    pub fn inject_failures(&mut self, kind: SyscallKind, count: u32) {
        *self.fail_next.entry(kind).or_insert(0) += count;
    }

    /// Number of calls that touched the outside world (sockets, stdio).
    pub fn external_io(&self) -> u64 {
        self.external_io
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn applied(&self) -> u64 {
        self.applied
    }

    pub fn exited(&self) -> Option<i64> {
        self.exited
    }

    pub fn file(&self, path: &str) -> Option<&[u8]> {
        self.fs.get(path).map(Vec::as_slice)
    }

    pub fn fd_numbers(&self) -> Vec<i32> {
        self.fd_table.keys().copied().collect()
    }

    pub fn logical_fds(&self) -> BTreeMap<i32, LogicalFd> {
        self.fd_table
            .iter()
            .map(|(&fd, o)| {
                (
                    fd,
                    LogicalFd {
                        class: o.class(),
                        path: o.path().map(str::to_string),
                    },
                )
            })
            .collect()
    }

    pub fn is_shadow(&self, fd: i32) -> bool {
        matches!(self.fd_table.get(&fd), Some(FdObject::Shadow { .. }))
    }

    fn lowest_free_fd(&self) -> i32 {
        (0..).find(|fd| !self.fd_table.contains_key(fd)).unwrap()
    }

    fn install(&mut self, obj: FdObject) -> i32 {
        let fd = self.lowest_free_fd();
        self.fd_table.insert(fd, obj);
        fd
    }

    /// Occupy `fd` with a shadow of a leader-side object.
    pub fn register_shadow(&mut self, fd: i32, class: FdClass, path: Option<String>) -> Result<(), ReplicationMismatch> {
        if self.fd_table.contains_key(&fd) {
            return Err(ReplicationMismatch::FdCollision(fd));
        }
        self.fd_table.insert(
            fd,
            FdObject::Shadow {
                class,
                path,
                opts: BTreeMap::new(),
            },
        );
        Ok(())
    }

    /// Execute a call against this variant's own state.
    pub fn execute_locally(&mut self, event: &SyscallEvent) -> SyscallResult {
        self.executed += 1;
        let kind = event.kind;
        if let Some(n) = self.fail_next.get_mut(&kind) {
            if *n > 0 {
                *n -= 1;
                return SyscallResult::err(kind, Errno::EAGAIN);
            }
        }
        let args = &event.args;
        let fd = args.fd.unwrap_or(-1);
        match kind {
            SyscallKind::Open => self.open(event),
            SyscallKind::Close => match self.fd_table.remove(&fd) {
                Some(FdObject::Socket { .. }) => {
                    self.external_io += 1;
                    SyscallResult::ok(kind, 0)
                }
                Some(_) => SyscallResult::ok(kind, 0),
                None => SyscallResult::err(kind, Errno::EBADF),
            },
            SyscallKind::Read | SyscallKind::Recv => {
                self.read(kind, fd, args.num("len").unwrap_or(0).max(0) as usize)
            }
            SyscallKind::Write | SyscallKind::Send => {
                let data = event.buffer.as_deref().unwrap_or_default();
                self.write(kind, fd, data)
            }
            SyscallKind::Getcwd => {
                let cwd = self.cwd.clone().into_bytes();
                SyscallResult::ok(kind, cwd.len() as i64).with_data(cwd)
            }
            SyscallKind::Brk => {
                let incr = args.num("incr").unwrap_or(0);
                if self.heap + incr < 0 {
                    return SyscallResult::err(kind, Errno::EINVAL);
                }
                self.heap += incr;
                SyscallResult::ok(kind, self.heap)
            }
            SyscallKind::Mmap => {
                if args.num("len").unwrap_or(0) <= 0 {
                    return SyscallResult::err(kind, Errno::EINVAL);
                }
                self.mappings += 1;
                SyscallResult::ok(kind, self.mappings)
            }
            SyscallKind::Mprotect => {
                if args.num("len").unwrap_or(0) <= 0 {
                    return SyscallResult::err(kind, Errno::EINVAL);
                }
                SyscallResult::ok(kind, 0)
            }
            SyscallKind::Setsockopt => {
                let key = (args.num("level").unwrap_or(-1), args.num("opt").unwrap_or(-1));
                let value = args.num("value").unwrap_or(0);
                let opts = match self.fd_table.get_mut(&fd) {
                    None => return SyscallResult::err(kind, Errno::EBADF),
                    Some(FdObject::Socket { opts, .. }) => opts,
                    Some(FdObject::Shadow {
                        class: FdClass::Socket | FdClass::PrivateSocket,
                        opts,
                        ..
                    }) => opts,
                    Some(_) => return SyscallResult::err(kind, Errno::ENOTSOCK),
                };
                if !SUPPORTED_SOCKOPTS.contains(&key) {
                    return SyscallResult::err(kind, Errno::ENOPROTOOPT);
                }
                opts.insert(key, value);
                SyscallResult::ok(kind, 0)
            }
            SyscallKind::Socket => {
                self.external_io += 1;
                let private = args.has_flag("private");
                let fd = self.install(FdObject::Socket {
                    private,
                    state: SocketState::Unbound,
                    opts: BTreeMap::new(),
                    inbox: VecDeque::new(),
                });
                created(kind, fd, if private { FdClass::PrivateSocket } else { FdClass::Socket }, None)
            }
            SyscallKind::Bind | SyscallKind::Listen | SyscallKind::Connect => self.socket_transition(kind, fd),
            SyscallKind::Accept => {
                let private = match self.fd_table.get(&fd) {
                    Some(FdObject::Socket {
                        private,
                        state: SocketState::Listening,
                        ..
                    }) => *private,
                    Some(FdObject::Socket { .. }) => return SyscallResult::err(kind, Errno::EINVAL),
                    Some(_) => return SyscallResult::err(kind, Errno::ENOTSOCK),
                    None => return SyscallResult::err(kind, Errno::EBADF),
                };
                self.external_io += 1;
                let inbox = self.net_data.iter().copied().collect();
                let fd = self.install(FdObject::Socket {
                    private,
                    state: SocketState::Connected,
                    opts: BTreeMap::new(),
                    inbox,
                });
                created(kind, fd, if private { FdClass::PrivateSocket } else { FdClass::Socket }, None)
            }
            SyscallKind::Stat => match args.path.as_deref().and_then(|p| self.fs.get(p)) {
                Some(content) => SyscallResult::ok(kind, content.len() as i64),
                None => SyscallResult::err(kind, Errno::ENOENT),
            },
            SyscallKind::Lseek => {
                let Some(FdObject::File { path, offset, .. }) = self.fd_table.get_mut(&fd) else {
                    return match self.fd_table.contains_key(&fd) {
                        true => SyscallResult::err(kind, Errno::EINVAL),
                        false => SyscallResult::err(kind, Errno::EBADF),
                    };
                };
                let size = self.fs.get(path.as_str()).map_or(0, Vec::len) as i64;
                let off = args.num("off").unwrap_or(0);
                let base = match args.num("whence").unwrap_or(0) {
                    0 => 0,
                    1 => *offset as i64,
                    2 => size,
                    _ => return SyscallResult::err(kind, Errno::EINVAL),
                };
                if base + off < 0 {
                    return SyscallResult::err(kind, Errno::EINVAL);
                }
                *offset = (base + off) as usize;
                SyscallResult::ok(kind, base + off)
            }
            SyscallKind::Exit => {
                let code = args.num("code").unwrap_or(0);
                self.exited = Some(code);
                SyscallResult::ok(kind, code)
            }
        }
    }

    fn open(&mut self, event: &SyscallEvent) -> SyscallResult {
        let kind = event.kind;
        let Some(path) = event.args.path.clone() else {
            return SyscallResult::err(kind, Errno::EINVAL);
        };
        let flags = &event.args.flags;
        match self.fs.get_mut(&path) {
            Some(content) => {
                if flags.contains("trunc") {
                    content.clear();
                }
            }
            None if flags.contains("create") => {
                self.fs.insert(path.clone(), Vec::new());
            }
            None => return SyscallResult::err(kind, Errno::ENOENT),
        }
        let fd = self.install(FdObject::File {
            path: path.clone(),
            offset: 0,
            append: flags.contains("append"),
        });
        created(kind, fd, FdClass::File, Some(path))
    }

    fn read(&mut self, kind: SyscallKind, fd: i32, len: usize) -> SyscallResult {
        match self.fd_table.get_mut(&fd) {
            None | Some(FdObject::Shadow { .. }) => SyscallResult::err(kind, Errno::EBADF),
            Some(FdObject::File { path, offset, .. }) => {
                let content = self.fs.get(path.as_str()).map(Vec::as_slice).unwrap_or_default();
                let start = (*offset).min(content.len());
                let end = (start + len).min(content.len());
                let data = content[start..end].to_vec();
                *offset = end;
                SyscallResult::ok(kind, data.len() as i64).with_data(data)
            }
            Some(FdObject::Pipe) => {
                self.external_io += 1;
                SyscallResult::ok(kind, 0).with_data(Vec::new())
            }
            Some(FdObject::Socket { state, inbox, .. }) => {
                if *state != SocketState::Connected {
                    return SyscallResult::err(kind, Errno::ENOTCONN);
                }
                self.external_io += 1;
                let n = len.min(inbox.len());
                let data: Vec<u8> = inbox.drain(..n).collect();
                SyscallResult::ok(kind, data.len() as i64).with_data(data)
            }
        }
    }

    fn write(&mut self, kind: SyscallKind, fd: i32, data: &[u8]) -> SyscallResult {
        match self.fd_table.get_mut(&fd) {
            None | Some(FdObject::Shadow { .. }) => SyscallResult::err(kind, Errno::EBADF),
            Some(FdObject::File { path, offset, append }) => {
                let content = self.fs.entry(path.clone()).or_default();
                let start = if *append { content.len() } else { *offset };
                if content.len() < start + data.len() {
                    content.resize(start + data.len(), 0);
                }
                content[start..start + data.len()].copy_from_slice(data);
                *offset = start + data.len();
                SyscallResult::ok(kind, data.len() as i64)
            }
            Some(FdObject::Pipe) => {
                self.external_io += 1;
                SyscallResult::ok(kind, data.len() as i64)
            }
            Some(FdObject::Socket { state, .. }) => {
                if *state != SocketState::Connected {
                    return SyscallResult::err(kind, Errno::ENOTCONN);
                }
                self.external_io += 1;
                SyscallResult::ok(kind, data.len() as i64)
            }
        }
    }

    fn socket_transition(&mut self, kind: SyscallKind, fd: i32) -> SyscallResult {
        let net_data = self.net_data.clone();
        let (state, inbox) = match self.fd_table.get_mut(&fd) {
            Some(FdObject::Socket { state, inbox, .. }) => (state, inbox),
            Some(_) => return SyscallResult::err(kind, Errno::ENOTSOCK),
            None => return SyscallResult::err(kind, Errno::EBADF),
        };
        let next = match (kind, *state) {
            (SyscallKind::Bind, SocketState::Unbound) => SocketState::Bound,
            (SyscallKind::Listen, SocketState::Bound) => SocketState::Listening,
            (SyscallKind::Connect, SocketState::Unbound | SocketState::Bound) => {
                inbox.extend(net_data);
                SocketState::Connected
            }
            _ => return SyscallResult::err(kind, Errno::EINVAL),
        };
        *state = next;
        self.external_io += 1;
        SyscallResult::ok(kind, 0)
    }

    /// Take the leader's result for a call this variant does not perform.
    /// Only descriptor bookkeeping happens locally; no external effect.
    pub fn apply_replicated(
        &mut self,
        event: &SyscallEvent,
        leader: &SyscallResult,
    ) -> Result<SyscallResult, ReplicationMismatch> {
        if leader.kind != event.kind {
            return Err(ReplicationMismatch::KindMismatch {
                local: event.kind,
                leader: leader.kind,
            });
        }
        self.applied += 1;
        if leader.is_ok() {
            match event.kind {
                k if k.creates_fd() => {
                    let fd = leader.ret as i32;
                    let (class, path) = match &leader.created {
                        Some(c) => (c.class, c.path.clone()),
                        None => (FdClass::File, event.args.path.clone()),
                    };
                    self.register_shadow(fd, class, path)?;
                }
                SyscallKind::Close => {
                    if let Some(fd) = event.args.fd {
                        self.fd_table.remove(&fd);
                    }
                }
                SyscallKind::Setsockopt => {
                    let key = (event.args.num("level").unwrap_or(-1), event.args.num("opt").unwrap_or(-1));
                    if let Some(FdObject::Shadow { opts, .. } | FdObject::Socket { opts, .. }) =
                        event.args.fd.and_then(|fd| self.fd_table.get_mut(&fd))
                    {
                        opts.insert(key, event.args.num("value").unwrap_or(0));
                    }
                }
                SyscallKind::Exit => self.exited = Some(leader.ret),
                _ => {}
            }
        }
        Ok(leader.clone())
    }
}

fn created(kind: SyscallKind, fd: i32, class: FdClass, path: Option<String>) -> SyscallResult {
    SyscallResult {
        created: Some(CreatedFd { class, path }),
        ..SyscallResult::ok(kind, fd as i64)
    }
}
