//! Simulated-time charges, in nanoseconds.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    /// One emulated syscall in the kernel, monitored or not.
    pub syscall_ns: u64,
    /// Entering or leaving the arbiter (intercept, restart check).
    pub crossing_ns: u64,
    /// Cross-process monitor stop per sensitive call (entry and resume).
    pub ptrace_ns: u64,
    /// Copying a message into the communication buffer.
    pub push_ns: u64,
    /// Applying a replicated result instead of executing.
    pub apply_ns: u64,
    /// Strict-mode argument comparison.
    pub compare_ns: u64,
    /// Time the connector needs to move one message out of the buffer.
    pub drain_ns: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            syscall_ns: 1000,
            crossing_ns: 300,
            ptrace_ns: 5000,
            push_ns: 200,
            apply_ns: 200,
            compare_ns: 100,
            drain_ns: 500,
        }
    }
}
