//! Deterministic workload execution: each variant walks the same script and
//! emits one `SyscallEvent` per call against its own emulated kernel.

mod kernel;
mod script;

use std::sync::Arc;

pub use kernel::{EmulatedKernel, LogicalFd, ReplicationMismatch};
pub use script::{Item, Op, WorkloadScript};

use crate::error::ScenarioError;
use crate::syscall_model::{normalize, Issuer, RawCall, SyscallEvent, VariantContext, VariantId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantRole {
    Leader,
    Follower,
}

impl VariantRole {
    pub fn of(variant: VariantId) -> Self {
        if variant == 0 {
            VariantRole::Leader
        } else {
            VariantRole::Follower
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Call(SyscallEvent),
    /// Local computation, in microseconds.
    Work(u64),
    Finished,
}

/// Cursor over an unrolled script. Stepping never touches kernel state.
#[derive(Debug, Clone)]
pub struct VariantEngine {
    variant: VariantId,
    role: VariantRole,
    ops: Arc<[Op]>,
    pos: usize,
    next_seq: u64,
    ctx: VariantContext,
}

impl VariantEngine {
    pub fn new(variant: VariantId, ops: Arc<[Op]>) -> Self {
        VariantEngine {
            variant,
            role: VariantRole::of(variant),
            ops,
            pos: 0,
            next_seq: 0,
            ctx: VariantContext::default(),
        }
    }

    pub fn from_script(variant: VariantId, script: &WorkloadScript) -> Self {
        VariantEngine::new(variant, script.expand().into())
    }

    pub fn variant(&self) -> VariantId {
        self.variant
    }

    pub fn role(&self) -> VariantRole {
        self.role
    }

    /// Sequence number the next emitted event will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn make_event(&mut self, raw: &RawCall) -> Result<SyscallEvent, ScenarioError> {
        let args = normalize(raw, &self.ctx)?;
        let event = SyscallEvent {
            variant: self.variant,
            seq: self.next_seq,
            kind: raw.kind,
            args,
            issuer: Issuer::Application,
            buffer: raw.buffer(),
        };
        self.next_seq += 1;
        Ok(event)
    }

    pub fn step(&mut self) -> Result<Step, ScenarioError> {
        let Some(op) = self.ops.get(self.pos).cloned() else {
            return Ok(Step::Finished);
        };
        self.pos += 1;
        match op {
            Op::Work(us) => Ok(Step::Work(us)),
            Op::Call(raw) => self.make_event(&raw).map(Step::Call),
        }
    }

    /// Drop the next call from the script without consuming a sequence number.
    pub fn skip_next_call(&mut self) {
        while let Some(op) = self.ops.get(self.pos) {
            self.pos += 1;
            if matches!(op, Op::Call(_)) {
                break;
            }
        }
    }

    /// Emit a call that is not in the script; the script position is kept.
    pub fn inject(&mut self, raw: &RawCall) -> Result<SyscallEvent, ScenarioError> {
        self.make_event(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syscall_model::SyscallKind;

    fn engine(text: &str) -> VariantEngine {
        VariantEngine::from_script(0, &WorkloadScript::parse("t", text).unwrap())
    }

    #[test]
    fn first_event_has_seq_zero() {
        let mut e = engine("call getcwd\ncall exit\n");
        match e.step().unwrap() {
            Step::Call(ev) => assert_eq!((ev.kind, ev.seq), (SyscallKind::Getcwd, 0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_script_finishes() {
        assert_eq!(engine("").step().unwrap(), Step::Finished);
    }

    #[test]
    fn loops_unroll_with_consecutive_seqs() {
        let mut e = engine("loop 3\ncall read fd=3 len=8\nend\n");
        let seqs: Vec<u64> = std::iter::from_fn(|| match e.step().unwrap() {
            Step::Call(ev) => Some(ev.seq),
            _ => None,
        })
        .collect();
        assert_eq!(seqs, vec![0, 1, 2]);
    }

    #[test]
    fn skip_and_inject_keep_seq_gapless() {
        let mut e = engine("call getcwd\ncall brk incr=4\ncall exit\n");
        e.skip_next_call();
        let injected = e.inject(&RawCall::new(SyscallKind::Mprotect).arg("len", 1)).unwrap();
        assert_eq!(injected.seq, 0);
        let Step::Call(next) = e.step().unwrap() else { panic!() };
        assert_eq!((next.kind, next.seq), (SyscallKind::Brk, 1));
        assert_eq!(e.role(), VariantRole::Leader);
    }
}
