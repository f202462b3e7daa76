use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{FdClass, FdView, SensitivityClass, SyscallEvent, SyscallKind};
use crate::error::ScenarioError;

/// Shipped default: a reconstruction of a socket-read/write relaxation level.
/// Socket setup, memory protection, process exit and traffic on the public
/// interface go to the cross-process monitor; file I/O, memory growth,
/// descriptor bookkeeping and private-socket traffic stay in-process.
pub const DEFAULT_POLICY: &str = "\
# always routed to the cross-process monitor
@always mmap
@always mprotect
@default nonsensitive
socket * sensitive
bind * sensitive
listen * sensitive
accept * sensitive
connect * sensitive
exit * sensitive
read socket sensitive
write socket sensitive
send socket sensitive
recv socket sensitive
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdPattern {
    Any,
    Is(FdClass),
}

impl FdPattern {
    fn matches(self, class: FdClass) -> bool {
        match self {
            FdPattern::Any => true,
            FdPattern::Is(c) => c == class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyRule {
    pub kind_glob: String,
    pub fd: FdPattern,
    pub class: SensitivityClass,
}

/// Ordered rule table; the first matching rule decides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensitivityPolicy {
    pub default_class: SensitivityClass,
    pub rules: Vec<PolicyRule>,
    pub always_monitored: BTreeSet<SyscallKind>,
}

impl Default for SensitivityPolicy {
    fn default() -> Self {
        SensitivityPolicy::parse("<default>", DEFAULT_POLICY).expect("shipped policy parses")
    }
}

/// `*` matches any run of characters, `?` exactly one.
fn glob_match(pattern: &str, text: &str) -> bool {
    fn go(p: &[u8], t: &[u8]) -> bool {
        match (p.first(), t.first()) {
            (None, None) => true,
            (Some(b'*'), _) => go(&p[1..], t) || (!t.is_empty() && go(p, &t[1..])),
            (Some(b'?'), Some(_)) => go(&p[1..], &t[1..]),
            (Some(a), Some(b)) if a == b => go(&p[1..], &t[1..]),
            _ => false,
        }
    }
    go(pattern.as_bytes(), text.as_bytes())
}

fn parse_class(s: &str) -> Option<SensitivityClass> {
    match s {
        "sensitive" => Some(SensitivityClass::Sensitive),
        "nonsensitive" => Some(SensitivityClass::NonSensitive),
        _ => None,
    }
}

impl SensitivityPolicy {
    /// Every call is sensitive: the configuration where the cross-process
    /// monitor handles everything.
    pub fn all_sensitive() -> Self {
        SensitivityPolicy {
            default_class: SensitivityClass::Sensitive,
            rules: Vec::new(),
            always_monitored: [SyscallKind::Mmap, SyscallKind::Mprotect].into_iter().collect(),
        }
    }

    /// Parse the line-oriented policy format:
    ///
    /// ```text
    /// # comment
    /// @always <kind>
    /// @default sensitive|nonsensitive
    /// <kind-glob> <fd-kind|*> <sensitive|nonsensitive>
    /// ```
    pub fn parse(source_name: &str, text: &str) -> Result<Self, ScenarioError> {
        let mut policy = SensitivityPolicy {
            default_class: SensitivityClass::NonSensitive,
            rules: Vec::new(),
            always_monitored: BTreeSet::new(),
        };
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let err = |msg: String| ScenarioError::new(source_name, lineno, msg);
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["@always", kind] => {
                    let kind = kind.parse::<SyscallKind>().map_err(|e| err(e.message))?;
                    policy.always_monitored.insert(kind);
                }
                ["@default", class] => {
                    policy.default_class =
                        parse_class(class).ok_or_else(|| err(format!("unknown class `{class}`")))?;
                }
                [glob, fd, class] => {
                    if !SyscallKind::ALL.iter().any(|k| glob_match(glob, k.name())) {
                        return Err(err(format!("`{glob}` matches no known syscall")));
                    }
                    let fd = match *fd {
                        "*" => FdPattern::Any,
                        other => FdPattern::Is(other.parse().map_err(|e: ScenarioError| err(e.message))?),
                    };
                    let class =
                        parse_class(class).ok_or_else(|| err(format!("unknown class `{class}`")))?;
                    policy.rules.push(PolicyRule {
                        kind_glob: glob.to_string(),
                        fd,
                        class,
                    });
                }
                _ => return Err(err(format!("cannot parse rule `{line}`"))),
            }
        }
        Ok(policy)
    }

    /// Class of a (kind, descriptor kind) pair, ignoring descriptor validity.
    pub fn class_of(&self, kind: SyscallKind, fd: FdClass) -> SensitivityClass {
        if self.always_monitored.contains(&kind) {
            return SensitivityClass::Sensitive;
        }
        self.rules
            .iter()
            .find(|r| glob_match(&r.kind_glob, kind.name()) && r.fd.matches(fd))
            .map(|r| r.class)
            .unwrap_or(self.default_class)
    }

    /// Render back to the file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in &self.always_monitored {
            let _ = writeln!(out, "@always {k}");
        }
        let _ = writeln!(out, "@default {}", self.default_class);
        for r in &self.rules {
            let fd = match r.fd {
                FdPattern::Any => "*",
                FdPattern::Is(c) => c.name(),
            };
            let _ = writeln!(out, "{} {} {}", r.kind_glob, fd, r.class);
        }
        out
    }
}

/// Decide which monitor a call belongs to. Calls naming a descriptor the
/// variant does not hold are treated as sensitive.
pub fn classify(event: &SyscallEvent, fmap: &dyn FdView, policy: &SensitivityPolicy) -> SensitivityClass {
    if policy.always_monitored.contains(&event.kind) {
        return SensitivityClass::Sensitive;
    }
    let fd_class = match event.args.fd {
        None => FdClass::NoFd,
        Some(fd) => match fmap.fd_class(fd) {
            Some(c) => c,
            None => return SensitivityClass::Sensitive,
        },
    };
    policy.class_of(event.kind, fd_class)
}
