//! Communication buffers, connectors, and inter-machine links.

pub mod channel;
pub mod comm_buffer;
pub mod connector;
pub mod wire;

pub use channel::{dipmon_scope, ArrivalClock, ChannelFlavor, ChannelStats, Endpoint, LatencyModel};
pub use comm_buffer::{lane, CommBuffer, ConnectorSide, Consumer, Delivered, LaneStats, MonitorSide, Producer, DEFAULT_CAPACITY};
pub use connector::{spawn_follower_pump, spawn_leader_pump, DeliveryRecord, FailureHook, PumpReport, Transcript};
pub use wire::{Body, MsgType, ReleaseAction, WireMessage};
