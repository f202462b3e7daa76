//! Point-to-point links between machines. Both flavors move encoded frames;
//! the simulated flavor keeps them in memory, the loopback flavor sends them
//! over a real TCP connection on 127.0.0.1. Simulated timestamps come from
//! `LatencyModel` in either case.

use std::cell::Cell;
use std::io::Write;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::TransportError;
use crate::transport::comm_buffer::POLL;
use crate::transport::wire::{read_frame, MsgType, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelFlavor {
    Simulated,
    Loopback { port: u16 },
}

/// Per-message transit time: a fixed latency plus a small jitter that is a
/// pure function of (seed, link, message type, seq).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyModel {
    latency_ns: u64,
    seed: u64,
}

impl LatencyModel {
    pub fn new(latency_us: u64, seed: u64) -> Self {
        LatencyModel {
            latency_ns: latency_us * 1000,
            seed,
        }
    }

    pub fn latency_ns(&self) -> u64 {
        self.latency_ns
    }

    pub fn jitter_ns(&self, link: u32, msg_type: MsgType, seq: u64) -> u64 {
        let amplitude = self.latency_ns / 20;
        if amplitude == 0 {
            return 0;
        }
        let key = self.seed
            ^ u64::from(link).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ u64::from(msg_type.code()).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
            ^ seq.wrapping_mul(0x1656_67b1_9e37_79f9);
        ChaCha8Rng::seed_from_u64(key).next_u64() % (amplitude + 1)
    }

    pub fn transit_ns(&self, link: u32, msg_type: MsgType, seq: u64) -> u64 {
        self.latency_ns + self.jitter_ns(link, msg_type, seq)
    }
}

/// Arrival times on one directed lane never go backwards: a message cannot
/// overtake the one sent before it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArrivalClock {
    last: u64,
}

impl ArrivalClock {
    pub fn arrive(&mut self, sent_ns: u64, transit_ns: u64) -> u64 {
        self.last = self.last.max(sent_ns + transit_ns);
        self.last
    }
}

#[derive(Debug, Default)]
pub struct ChannelStats {
    pub messages: AtomicU64,
    pub bytes: AtomicU64,
    pub sync_round_trips: AtomicU64,
    /// Sends or receives performed while inside the in-process monitor.
    /// The connector is supposed to do all of that, so this stays 0.
    pub dipmon_direct: AtomicU64,
}

impl ChannelStats {
    pub fn messages(&self) -> u64 {
        self.messages.load(Ordering::SeqCst)
    }

    pub fn bytes(&self) -> u64 {
        self.bytes.load(Ordering::SeqCst)
    }

    pub fn sync_round_trips(&self) -> u64 {
        self.sync_round_trips.load(Ordering::SeqCst)
    }

    pub fn dipmon_direct(&self) -> u64 {
        self.dipmon_direct.load(Ordering::SeqCst)
    }
}

thread_local! {
    static IN_DIPMON: Cell<bool> = const { Cell::new(false) };
}

/// Run `f` marked as in-process monitor code; any link use inside it is
/// counted in `ChannelStats::dipmon_direct`.
pub fn dipmon_scope<R>(f: impl FnOnce() -> R) -> R {
    let prev = IN_DIPMON.with(|c| c.replace(true));
    let out = f();
    IN_DIPMON.with(|c| c.set(prev));
    out
}

fn note_dipmon_access(stats: &ChannelStats) {
    if IN_DIPMON.with(|c| c.get()) {
        stats.dipmon_direct.fetch_add(1, Ordering::SeqCst);
    }
}

#[derive(Debug)]
enum Tx {
    Mem(Sender<Vec<u8>>),
    Tcp(Mutex<TcpStream>),
}

/// One end of a link. Frames arrive on a crossbeam receiver for both
/// flavors so callers can `select` over several endpoints.
#[derive(Debug)]
pub struct Endpoint {
    tx: Tx,
    rx: Receiver<Vec<u8>>,
    stats: Arc<ChannelStats>,
    round_trips: AtomicU64,
    stop: Arc<AtomicBool>,
}

impl Endpoint {
    /// Build both ends of a link.
    pub fn pair(
        flavor: ChannelFlavor,
        stats: Arc<ChannelStats>,
        stop: Arc<AtomicBool>,
    ) -> Result<(Endpoint, Endpoint), TransportError> {
        let mk = |tx, rx| Endpoint {
            tx,
            rx,
            stats: stats.clone(),
            round_trips: AtomicU64::new(0),
            stop: stop.clone(),
        };
        match flavor {
            ChannelFlavor::Simulated => {
                let (a_tx, b_rx) = unbounded();
                let (b_tx, a_rx) = unbounded();
                Ok((mk(Tx::Mem(a_tx), a_rx), mk(Tx::Mem(b_tx), b_rx)))
            }
            ChannelFlavor::Loopback { port } => {
                let listener = TcpListener::bind(("127.0.0.1", port))?;
                let a = TcpStream::connect(listener.local_addr()?)?;
                let (b, _) = listener.accept()?;
                drop(listener);
                let a_rx = spawn_reader(a.try_clone()?)?;
                let b_rx = spawn_reader(b.try_clone()?)?;
                a.set_nodelay(true)?;
                b.set_nodelay(true)?;
                Ok((mk(Tx::Tcp(Mutex::new(a)), a_rx), mk(Tx::Tcp(Mutex::new(b)), b_rx)))
            }
        }
    }

    pub fn stats(&self) -> &Arc<ChannelStats> {
        &self.stats
    }

    /// Synchronous round trips started from this end.
    pub fn round_trips(&self) -> u64 {
        self.round_trips.load(Ordering::SeqCst)
    }

    pub fn receiver(&self) -> &Receiver<Vec<u8>> {
        &self.rx
    }

    pub fn send(&self, msg: &WireMessage) -> Result<(), TransportError> {
        note_dipmon_access(&self.stats);
        let frame = msg.encode();
        let len = frame.len() as u64;
        match &self.tx {
            Tx::Mem(tx) => tx.send(frame).map_err(|_| TransportError::Closed)?,
            Tx::Tcp(s) => s.lock().unwrap_or_else(|e| e.into_inner()).write_all(&frame)?,
        }
        self.stats.messages.fetch_add(1, Ordering::SeqCst);
        self.stats.bytes.fetch_add(len, Ordering::SeqCst);
        Ok(())
    }

    /// Receive one message. Observes the stop flag; `None` waits forever.
    pub fn recv(&self, timeout: Option<Duration>) -> Result<WireMessage, TransportError> {
        note_dipmon_access(&self.stats);
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            match self.rx.recv_timeout(POLL) {
                Ok(frame) => return WireMessage::decode(&frame),
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::Closed),
                Err(RecvTimeoutError::Timeout) => {}
            }
            if self.stop.load(Ordering::SeqCst) {
                return Err(TransportError::Stopped);
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(TransportError::Timeout(timeout.unwrap_or_default()));
            }
        }
    }

    /// Send and wait for the peer's reply; counts one synchronous round trip.
    pub fn roundtrip(&self, msg: &WireMessage, timeout: Option<Duration>) -> Result<WireMessage, TransportError> {
        self.round_trips.fetch_add(1, Ordering::SeqCst);
        self.stats.sync_round_trips.fetch_add(1, Ordering::SeqCst);
        self.send(msg)?;
        self.recv(timeout)
    }

    /// Half-close the sending direction so the peer sees end of stream.
    pub fn close_send(&mut self) {
        match &mut self.tx {
            Tx::Mem(_) => {
                let (dead, _) = unbounded();
                self.tx = Tx::Mem(dead);
            }
            Tx::Tcp(s) => {
                let _ = s.get_mut().unwrap_or_else(|e| e.into_inner()).shutdown(Shutdown::Write);
            }
        }
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        if let Tx::Tcp(s) = &self.tx {
            let _ = s.lock().unwrap_or_else(|e| e.into_inner()).shutdown(Shutdown::Both);
        }
    }
}

fn spawn_reader(mut stream: TcpStream) -> Result<Receiver<Vec<u8>>, TransportError> {
    let (tx, rx) = unbounded();
    thread::Builder::new()
        .name("mvx-net-reader".into())
        .spawn(move || {
            while let Ok(Some(frame)) = read_frame(&mut stream) {
                if tx.send(frame).is_err() {
                    break;
                }
            }
        })?;
    Ok(rx)
}
