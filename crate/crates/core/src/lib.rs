//! Distributed multi-variant execution over an emulated kernel.
//!
//! Variants run the same workload script. A syscall arbiter routes every
//! call either to the in-process monitor (non-sensitive calls, authorized by
//! a one-time token) or to the cross-process monitor, which runs sensitive
//! calls in lockstep. The leader performs external I/O; its results reach
//! followers through a connector so monitor traffic is never itself
//! intercepted.

pub mod arbiter;
pub mod cost;
pub mod dcpmon;
pub mod dipmon;
pub mod error;
pub mod filemap;
pub mod harness;
pub mod syscall_model;
pub mod transport;
pub mod variant_engine;
