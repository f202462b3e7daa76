use std::collections::{BTreeMap, BTreeSet};

use super::{NormalizedArgs, Payload, SyscallKind};
use crate::error::ScenarioError;

/// A call as written in a workload script: a kind plus literal `key=value`
/// arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCall {
    pub kind: SyscallKind,
    pub args: BTreeMap<String, String>,
}

impl RawCall {
    pub fn new(kind: SyscallKind) -> Self {
        RawCall {
            kind,
            args: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    /// Bytes carried by a `data=` argument, if the kind takes one.
    pub fn buffer(&self) -> Option<Vec<u8>> {
        self.args.get("data").map(|d| d.as_bytes().to_vec())
    }

    /// Re-express normalized arguments as a raw call. `buffer` supplies the
    /// bytes behind the payload digest.
    pub fn from_normalized(kind: SyscallKind, args: &NormalizedArgs, buffer: Option<&[u8]>) -> Self {
        let mut raw = RawCall::new(kind);
        for &(key, field) in schema(kind) {
            let value = match field {
                Field::Path => args.path.clone(),
                Field::Fd => args.fd.map(|fd| fd.to_string()),
                Field::Num | Field::Symbol(_) => args.num(key).map(|n| n.to_string()),
                Field::Flags(_) => (!args.flags.is_empty())
                    .then(|| args.flags.iter().cloned().collect::<Vec<_>>().join("|")),
                Field::Data => buffer.map(|b| String::from_utf8_lossy(b).into_owned()),
                Field::Addr => None,
            };
            if let Some(v) = value {
                raw.args.insert(key.to_string(), v);
            }
        }
        raw
    }
}

/// Per-variant state that raw arguments may be relative to.
#[derive(Debug, Clone)]
pub struct VariantContext {
    pub cwd: String,
}

impl Default for VariantContext {
    fn default() -> Self {
        VariantContext {
            cwd: "/".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Field {
    Path,
    Fd,
    Num,
    Data,
    Flags(&'static [&'static str]),
    Symbol(&'static [(&'static str, i64)]),
    /// Variant-local address; dropped during normalization.
    Addr,
}

const OPEN_FLAGS: &[&str] = &["read", "write", "create", "append", "trunc"];
const PROT_FLAGS: &[&str] = &["none", "read", "write", "exec"];
const SCOPE_FLAGS: &[&str] = &["public", "private"];

pub(crate) const SOCKOPT_LEVELS: &[(&str, i64)] = &[("socket", 1), ("tcp", 6)];
pub(crate) const SOCKOPT_NAMES: &[(&str, i64)] = &[
    ("nodelay", 1),
    ("reuseaddr", 2),
    ("sndbuf", 7),
    ("rcvbuf", 8),
    ("keepalive", 9),
];
const WHENCE: &[(&str, i64)] = &[("set", 0), ("cur", 1), ("end", 2)];

/// Accepted keys per kind. Keys not listed here are rejected.
fn schema(kind: SyscallKind) -> &'static [(&'static str, Field)] {
    use SyscallKind::*;
    match kind {
        Open => &[("path", Field::Path), ("flags", Field::Flags(OPEN_FLAGS))],
        Close | Accept => &[("fd", Field::Fd)],
        Read | Recv => &[("fd", Field::Fd), ("len", Field::Num)],
        Write | Send => &[("fd", Field::Fd), ("data", Field::Data)],
        Getcwd => &[],
        Brk => &[("incr", Field::Num)],
        Mmap | Mprotect => &[
            ("addr", Field::Addr),
            ("len", Field::Num),
            ("prot", Field::Flags(PROT_FLAGS)),
        ],
        Setsockopt => &[
            ("fd", Field::Fd),
            ("level", Field::Symbol(SOCKOPT_LEVELS)),
            ("opt", Field::Symbol(SOCKOPT_NAMES)),
            ("value", Field::Num),
        ],
        Socket => &[("scope", Field::Flags(SCOPE_FLAGS))],
        Bind | Connect => &[("fd", Field::Fd), ("port", Field::Num)],
        Listen => &[("fd", Field::Fd), ("backlog", Field::Num)],
        Stat => &[("path", Field::Path)],
        Lseek => &[
            ("fd", Field::Fd),
            ("off", Field::Num),
            ("whence", Field::Symbol(WHENCE)),
        ],
        Exit => &[("code", Field::Num)],
    }
}

/// Keys a call of this kind cannot omit.
fn required(kind: SyscallKind) -> &'static [&'static str] {
    use SyscallKind::*;
    match kind {
        Open | Stat => &["path"],
        Close | Accept => &["fd"],
        Read | Recv => &["fd", "len"],
        Write | Send => &["fd", "data"],
        Mmap | Mprotect => &["len"],
        Setsockopt => &["fd", "level", "opt", "value"],
        Bind | Connect => &["fd", "port"],
        Listen => &["fd"],
        Lseek => &["fd", "off"],
        Getcwd | Brk | Socket | Exit => &[],
    }
}

/// Resolve `path` against `cwd` and remove `.`, `..` and repeated slashes.
pub fn canonical_path(cwd: &str, path: &str) -> String {
    let joined = if path.starts_with('/') {
        path.to_string()
    } else {
        format!("{cwd}/{path}")
    };
    let mut parts: Vec<&str> = Vec::new();
    for seg in joined.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            s => parts.push(s),
        }
    }
    format!("/{}", parts.join("/"))
}

fn parse_int(kind: SyscallKind, key: &str, value: &str) -> Result<i64, ScenarioError> {
    value
        .parse::<i64>()
        .map_err(|_| ScenarioError::call(format!("{kind}: `{key}` expects an integer, got `{value}`")))
}

/// Reduce a raw call to machine-independent arguments.
pub fn normalize(raw: &RawCall, ctx: &VariantContext) -> Result<NormalizedArgs, ScenarioError> {
    let kind = raw.kind;
    let fields = schema(kind);
    for key in raw.args.keys() {
        if !fields.iter().any(|(k, _)| k == key) {
            return Err(ScenarioError::call(format!("{kind}: unexpected argument `{key}`")));
        }
    }
    for key in required(kind) {
        if !raw.args.contains_key(*key) {
            return Err(ScenarioError::call(format!("{kind}: missing argument `{key}`")));
        }
    }

    let mut out = NormalizedArgs::default();
    for &(key, field) in fields {
        let Some(value) = raw.args.get(key) else {
            continue;
        };
        match field {
            Field::Path => {
                if value.is_empty() {
                    return Err(ScenarioError::call(format!("{kind}: empty path")));
                }
                out.path = Some(canonical_path(&ctx.cwd, value));
            }
            Field::Fd => {
                let fd = parse_int(kind, key, value)?;
                out.fd = Some(i32::try_from(fd).map_err(|_| {
                    ScenarioError::call(format!("{kind}: fd `{value}` out of range"))
                })?);
            }
            Field::Num => {
                out.nums.insert(key.to_string(), parse_int(kind, key, value)?);
            }
            Field::Data => out.payload = Some(Payload::of(value.as_bytes())),
            Field::Flags(allowed) => {
                let set: BTreeSet<String> = value
                    .split('|')
                    .map(str::trim)
                    .filter(|f| !f.is_empty())
                    .map(str::to_string)
                    .collect();
                if let Some(bad) = set.iter().find(|f| !allowed.contains(&f.as_str())) {
                    return Err(ScenarioError::call(format!("{kind}: unknown {key} flag `{bad}`")));
                }
                out.flags.extend(set);
            }
            Field::Symbol(table) => {
                let code = match table.iter().find(|(name, _)| name == value) {
                    Some(&(_, code)) => code,
                    None => parse_int(kind, key, value)?,
                };
                out.nums.insert(key.to_string(), code);
            }
            Field::Addr => {}
        }
    }
    if kind == SyscallKind::Socket && !out.flags.contains("private") {
        out.flags.insert("public".to_string());
    }
    if kind == SyscallKind::Socket && out.flags.len() > 1 {
        return Err(ScenarioError::call("socket: scope must be public or private"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syscall_model::digest;

    fn ctx() -> VariantContext {
        VariantContext::default()
    }

    #[test]
    fn write_from_two_variants_normalizes_equal() {
        let raw = RawCall::new(SyscallKind::Write).arg("fd", 4).arg("data", "abc");
        let a = normalize(&raw, &VariantContext { cwd: "/".into() }).unwrap();
        let b = normalize(&raw, &VariantContext { cwd: "/srv".into() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.payload, Some(Payload { len: 3, digest: digest(b"abc") }));
    }

    #[test]
    fn path_is_canonicalized() {
        let raw = RawCall::new(SyscallKind::Open).arg("path", "/app/./logs/../logs/x");
        assert_eq!(normalize(&raw, &ctx()).unwrap().path.as_deref(), Some("/app/logs/x"));
        assert_eq!(canonical_path("/app", "a//b/../c"), "/app/a/c");
        assert_eq!(canonical_path("/", "/../.."), "/");
    }

    #[test]
    fn addresses_are_dropped() {
        let a = RawCall::new(SyscallKind::Mprotect)
            .arg("addr", "0x7f0000001000")
            .arg("len", 4096)
            .arg("prot", "read");
        let b = a.clone().arg("addr", "0x5555_0000");
        assert_eq!(normalize(&a, &ctx()).unwrap(), normalize(&b, &ctx()).unwrap());
        assert!(normalize(&a, &ctx()).unwrap().nums.get("addr").is_none());
    }

    #[test]
    fn symbols_map_to_codes() {
        let raw = RawCall::new(SyscallKind::Setsockopt)
            .arg("fd", 3)
            .arg("level", "tcp")
            .arg("opt", "nodelay")
            .arg("value", 1);
        let n = normalize(&raw, &ctx()).unwrap();
        assert_eq!(n.num("level"), Some(6));
        assert_eq!(n.num("opt"), Some(1));
    }

    #[test]
    fn malformed_descriptions_are_rejected() {
        let missing = RawCall::new(SyscallKind::Read).arg("fd", 3);
        assert!(normalize(&missing, &ctx()).is_err());
        let extra = RawCall::new(SyscallKind::Getcwd).arg("buf", 1);
        assert!(normalize(&extra, &ctx()).is_err());
        let bad_num = RawCall::new(SyscallKind::Read).arg("fd", "x").arg("len", 1);
        assert!(normalize(&bad_num, &ctx()).is_err());
        let bad_flag = RawCall::new(SyscallKind::Open).arg("path", "/a").arg("flags", "exclusive");
        assert!(normalize(&bad_flag, &ctx()).is_err());
    }

    #[test]
    fn socket_scope_defaults_public() {
        let n = normalize(&RawCall::new(SyscallKind::Socket), &ctx()).unwrap();
        assert!(n.has_flag("public"));
    }
}
