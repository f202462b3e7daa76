//! Workload script format.
//!
//! ```text
//! # comment
//! file path=/app/htdocs/index.html data="<html>hi</html>"
//! net data="GET /index.html HTTP/1.0\r\n\r\n"
//! call open path=/app/htdocs/index.html flags=read
//! loop 3
//!   call read fd=3 len=8
//!   work us=5
//! end
//! ```
//!
//! `file` seeds every variant's private filesystem copy, `net` sets the bytes
//! a peer sends on each new connection, `work` is CPU time between calls.

use std::collections::BTreeMap;

use crate::error::ScenarioError;
use crate::syscall_model::{normalize, RawCall, SyscallKind, VariantContext};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Call { raw: RawCall, line: usize },
    Work { us: u64 },
    Loop { count: u64, body: Vec<Item> },
}

/// One unrolled step of a script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Call(RawCall),
    Work(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorkloadScript {
    pub name: String,
    pub files: BTreeMap<String, Vec<u8>>,
    pub net_data: Vec<u8>,
    pub body: Vec<Item>,
}

/// Split a line into words. Double quotes group, and `\n`, `\r`, `\t`,
/// `\"`, `\\` escapes are honoured inside them.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                in_word = true;
                loop {
                    match chars.next() {
                        None => return Err("unterminated quote".into()),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('n') => cur.push('\n'),
                            Some('r') => cur.push('\r'),
                            Some('t') => cur.push('\t'),
                            Some(c @ ('"' | '\\')) => cur.push(c),
                            Some(c) => return Err(format!("unknown escape `\\{c}`")),
                            None => return Err("dangling escape".into()),
                        },
                        Some(c) => cur.push(c),
                    }
                }
            }
            '#' if !in_word => break,
            c if c.is_whitespace() => {
                if in_word {
                    out.push(std::mem::take(&mut cur));
                    in_word = false;
                }
            }
            c => {
                in_word = true;
                cur.push(c);
            }
        }
    }
    if in_word {
        out.push(cur);
    }
    Ok(out)
}

fn key_values(words: &[String]) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{w}`"))?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("duplicate argument `{k}`"));
        }
    }
    Ok(map)
}

impl WorkloadScript {
    pub fn parse(name: &str, text: &str) -> Result<Self, ScenarioError> {
        let mut script = WorkloadScript {
            name: name.to_string(),
            ..Default::default()
        };
        // Stack of open loop bodies; index 0 is the top level.
        let mut stack: Vec<(u64, usize, Vec<Item>)> = vec![(1, 0, Vec::new())];
        let ctx = VariantContext::default();

        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let err = |msg: String| ScenarioError::new(name, lineno, msg);
            let words = tokenize(line).map_err(err)?;
            let Some((head, rest)) = words.split_first() else {
                continue;
            };
            match head.as_str() {
                "call" => {
                    let (kind, args) = rest
                        .split_first()
                        .ok_or_else(|| err("`call` needs a syscall name".into()))?;
                    let kind: SyscallKind = kind.parse().map_err(|e: ScenarioError| err(e.message))?;
                    let raw = RawCall {
                        kind,
                        args: key_values(args).map_err(err)?,
                    };
                    normalize(&raw, &ctx).map_err(|e| err(e.message))?;
                    stack.last_mut().unwrap().2.push(Item::Call { raw, line: lineno });
                }
                "loop" => {
                    let [n] = rest else {
                        return Err(err("`loop` takes one count".into()));
                    };
                    let count = n
                        .parse::<u64>()
                        .map_err(|_| err(format!("bad loop count `{n}`")))?;
                    stack.push((count, lineno, Vec::new()));
                }
                "end" => {
                    if !rest.is_empty() {
                        return Err(err("`end` takes no arguments".into()));
                    }
                    if stack.len() == 1 {
                        return Err(err("`end` without `loop`".into()));
                    }
                    let (count, _, body) = stack.pop().unwrap();
                    stack.last_mut().unwrap().2.push(Item::Loop { count, body });
                }
                "work" => {
                    let kv = key_values(rest).map_err(err)?;
                    let us = match (kv.get("us"), kv.len()) {
                        (Some(v), 1) => v.parse::<u64>().map_err(|_| err(format!("bad work amount `{v}`")))?,
                        _ => return Err(err("`work` takes exactly us=<n>".into())),
                    };
                    stack.last_mut().unwrap().2.push(Item::Work { us });
                }
                "file" => {
                    if stack.len() > 1 {
                        return Err(err("`file` is not allowed inside a loop".into()));
                    }
                    let kv = key_values(rest).map_err(err)?;
                    let path = kv.get("path").ok_or_else(|| err("`file` needs path=".into()))?;
                    if kv.keys().any(|k| k != "path" && k != "data") {
                        return Err(err("`file` accepts only path= and data=".into()));
                    }
                    let path = crate::syscall_model::canonical_path("/", path);
                    let data = kv.get("data").cloned().unwrap_or_default().into_bytes();
                    script.files.insert(path, data);
                }
                "net" => {
                    if stack.len() > 1 {
                        return Err(err("`net` is not allowed inside a loop".into()));
                    }
                    let kv = key_values(rest).map_err(err)?;
                    match (kv.get("data"), kv.len()) {
                        (Some(d), 1) => script.net_data.extend_from_slice(d.as_bytes()),
                        _ => return Err(err("`net` takes exactly data=".into())),
                    }
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        if stack.len() > 1 {
            let (_, line, _) = stack.last().unwrap();
            return Err(ScenarioError::new(name, *line, "`loop` is never closed"));
        }
        script.body = stack.pop().unwrap().2;
        Ok(script)
    }

    /// Unroll loops into a flat list of steps.
    pub fn expand(&self) -> Vec<Op> {
        fn go(items: &[Item], out: &mut Vec<Op>) {
            for item in items {
                match item {
                    Item::Call { raw, .. } => out.push(Op::Call(raw.clone())),
                    Item::Work { us } => out.push(Op::Work(*us)),
                    Item::Loop { count, body } => {
                        for _ in 0..*count {
                            go(body, out);
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        go(&self.body, &mut out);
        out
    }

    /// Number of calls after unrolling.
    pub fn call_count(&self) -> u64 {
        fn go(items: &[Item]) -> u64 {
            items
                .iter()
                .map(|i| match i {
                    Item::Call { .. } => 1,
                    Item::Work { .. } => 0,
                    Item::Loop { count, body } => count * go(body),
                })
                .sum()
        }
        go(&self.body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_example() {
        let text = r#"
# comment
file path=/app/htdocs/index.html data="<html>hi</html>"
net data="GET /index.html HTTP/1.0\r\n\r\n"
call open path=/app/htdocs/index.html flags=read
loop 3
  call read fd=3 len=8   # inline comment
  work us=5
end
"#;
        let s = WorkloadScript::parse("ex", text).unwrap();
        assert_eq!(s.files["/app/htdocs/index.html"], b"<html>hi</html>");
        assert_eq!(s.net_data, b"GET /index.html HTTP/1.0\r\n\r\n");
        assert_eq!(s.call_count(), 4);
        let ops = s.expand();
        assert_eq!(ops.len(), 7);
        assert_eq!(ops[6], Op::Work(5));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("call open path=/a\ncall frobnicate\n", 2),
            ("loop 2\ncall getcwd\n", 1),
            ("call getcwd\nend\n", 2),
            ("call read fd=3\n", 1),
            ("\n\ncall write fd=1 data=\"abc\n", 3),
            ("loop x\nend\n", 1),
            ("call getcwd\nwork ms=3\n", 2),
            ("bogus\n", 1),
        ];
        for (text, line) in cases {
            let e = WorkloadScript::parse("w.mvx", text).unwrap_err();
            assert_eq!(e.line, line, "{text:?}: {e}");
            assert_eq!(e.source_name, "w.mvx");
        }
    }

    #[test]
    fn quoted_values_keep_spaces_and_escapes() {
        let words = tokenize(r#"call write fd=1 data="a b\"c\\""#).unwrap();
        assert_eq!(words[3], "data=a b\"c\\");
    }
}
