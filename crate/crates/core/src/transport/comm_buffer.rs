//! Bounded FIFO lanes between an in-process monitor and its connector.
//!
//! Each lane has one producer and one consumer on different threads.
//! Producers block when the lane is full and never drop; a blocked push is
//! counted as one stall. Blocking calls wake up periodically to observe the
//! run's stop flag.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, SendTimeoutError, Sender, TryRecvError, TrySendError};

use crate::error::TransportError;
use crate::transport::wire::WireMessage;

pub const DEFAULT_CAPACITY: usize = 64;
pub(crate) const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Default)]
pub struct LaneStats {
    pub pushed: AtomicU64,
    pub popped: AtomicU64,
    pub stalls: AtomicU64,
    /// Set while the consumer is blocked in `pop`.
    pub waiting: AtomicBool,
}

impl LaneStats {
    pub fn pushed(&self) -> u64 {
        self.pushed.load(Ordering::SeqCst)
    }

    pub fn popped(&self) -> u64 {
        self.popped.load(Ordering::SeqCst)
    }

    pub fn stalls(&self) -> u64 {
        self.stalls.load(Ordering::SeqCst)
    }

    pub fn is_waiting(&self) -> bool {
        self.waiting.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
pub struct Producer<T> {
    tx: Sender<T>,
    stats: Arc<LaneStats>,
    stop: Arc<AtomicBool>,
}

#[derive(Debug)]
pub struct Consumer<T> {
    rx: Receiver<T>,
    stats: Arc<LaneStats>,
    stop: Arc<AtomicBool>,
}

pub fn lane<T>(capacity: usize, stop: Arc<AtomicBool>) -> (Producer<T>, Consumer<T>) {
    let (tx, rx) = bounded(capacity.max(1));
    let stats = Arc::new(LaneStats::default());
    (
        Producer {
            tx,
            stats: stats.clone(),
            stop: stop.clone(),
        },
        Consumer { rx, stats, stop },
    )
}

impl<T> Producer<T> {
    pub fn stats(&self) -> Arc<LaneStats> {
        self.stats.clone()
    }

    pub fn push(&self, item: T) -> Result<(), TransportError> {
        let mut item = match self.tx.try_send(item) {
            Ok(()) => {
                self.stats.pushed.fetch_add(1, Ordering::SeqCst);
                return Ok(());
            }
            Err(TrySendError::Disconnected(_)) => return Err(TransportError::Closed),
            Err(TrySendError::Full(item)) => item,
        };
        self.stats.stalls.fetch_add(1, Ordering::SeqCst);
        loop {
            if self.stop.load(Ordering::SeqCst) {
                return Err(TransportError::Stopped);
            }
            match self.tx.send_timeout(item, POLL) {
                Ok(()) => {
                    self.stats.pushed.fetch_add(1, Ordering::SeqCst);
                    return Ok(());
                }
                Err(SendTimeoutError::Timeout(back)) => item = back,
                Err(SendTimeoutError::Disconnected(_)) => return Err(TransportError::Closed),
            }
        }
    }
}

impl<T> Consumer<T> {
    pub fn stats(&self) -> Arc<LaneStats> {
        self.stats.clone()
    }

    fn took(&self, item: T) -> T {
        self.stats.popped.fetch_add(1, Ordering::SeqCst);
        item
    }

    pub fn try_pop(&self) -> Option<T> {
        self.rx.try_recv().ok().map(|i| self.took(i))
    }

    /// Block until an item arrives. Queued items are still returned after
    /// the producer hangs up; `Closed` only once the lane is empty.
    pub fn pop(&self) -> Result<T, TransportError> {
        self.pop_within(None)
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Result<T, TransportError> {
        self.pop_within(Some(timeout))
    }

    fn pop_within(&self, timeout: Option<Duration>) -> Result<T, TransportError> {
        let deadline = timeout.map(|t| std::time::Instant::now() + t);
        match self.rx.try_recv() {
            Ok(i) => return Ok(self.took(i)),
            Err(TryRecvError::Disconnected) => return Err(TransportError::Closed),
            Err(TryRecvError::Empty) => {}
        }
        self.stats.waiting.store(true, Ordering::SeqCst);
        let out = loop {
            if self.stop.load(Ordering::SeqCst) {
                break Err(TransportError::Stopped);
            }
            if let Some(d) = deadline {
                if std::time::Instant::now() >= d {
                    break Err(TransportError::Timeout(timeout.unwrap_or_default()));
                }
            }
            match self.rx.recv_timeout(POLL) {
                Ok(i) => break Ok(i),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break Err(TransportError::Closed),
            }
        };
        self.stats.waiting.store(false, Ordering::SeqCst);
        out.map(|i| self.took(i))
    }

    /// Take everything currently queued.
    pub fn drain(&self) -> Vec<T> {
        std::iter::from_fn(|| self.try_pop()).collect()
    }
}

/// A message on a follower's incoming lane, stamped with its simulated
/// arrival time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    pub msg: WireMessage,
    pub arrive_ns: u64,
}

/// The monitor's half of a communication buffer.
#[derive(Debug)]
pub struct MonitorSide {
    pub outgoing: Producer<WireMessage>,
    pub incoming: Consumer<Delivered>,
}

/// The connector's half of a communication buffer.
#[derive(Debug)]
pub struct ConnectorSide {
    pub outgoing: Consumer<WireMessage>,
    pub incoming: Producer<Delivered>,
}

pub struct CommBuffer;

impl CommBuffer {
    pub fn new(capacity: usize, stop: Arc<AtomicBool>) -> (MonitorSide, ConnectorSide) {
        let (out_p, out_c) = lane(capacity, stop.clone());
        let (in_p, in_c) = lane(capacity, stop);
        (
            MonitorSide {
                outgoing: out_p,
                incoming: in_c,
            },
            ConnectorSide {
                outgoing: out_c,
                incoming: in_p,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn stop() -> Arc<AtomicBool> {
        Arc::new(AtomicBool::new(false))
    }

    #[test]
    fn push_then_pop_same_item() {
        let (p, c) = lane::<Vec<u8>>(4, stop());
        p.push(vec![1, 2, 3]).unwrap();
        assert_eq!(c.pop().unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn full_lane_blocks_until_pop() {
        let (p, c) = lane::<u32>(1, stop());
        p.push(1).unwrap();
        let h = thread::spawn(move || {
            p.push(2).unwrap();
            p.stats().stalls()
        });
        thread::sleep(Duration::from_millis(30));
        assert_eq!(c.stats().pushed(), 1);
        assert_eq!(c.pop().unwrap(), 1);
        assert_eq!(h.join().unwrap(), 1);
        assert_eq!(c.pop().unwrap(), 2);
    }

    #[test]
    fn burst_of_ten_into_capacity_four() {
        // Queue simulation oracle: with a consumer that starts late, every
        // push beyond the capacity must wait.
        let (p, c) = lane::<u32>(4, stop());
        let h = thread::spawn(move || {
            for i in 0..10 {
                p.push(i).unwrap();
            }
            p.stats().stalls()
        });
        thread::sleep(Duration::from_millis(30));
        let got: Vec<u32> = (0..10).map(|_| c.pop().unwrap()).collect();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
        assert!(h.join().unwrap() >= 1);
    }

    #[test]
    fn closed_lane_drains_before_reporting_closed() {
        let (p, c) = lane::<u32>(8, stop());
        for i in 0..3 {
            p.push(i).unwrap();
        }
        drop(p);
        assert_eq!(c.drain(), vec![0, 1, 2]);
        assert!(matches!(c.pop(), Err(TransportError::Closed)));
    }

    #[test]
    fn stop_flag_unblocks_both_ends() {
        let s = stop();
        let (p, c) = lane::<u32>(1, s.clone());
        p.push(0).unwrap();
        let (p2, c2) = lane::<u32>(1, s.clone());
        let h1 = thread::spawn(move || p.push(1));
        let h2 = thread::spawn(move || c2.pop());
        thread::sleep(Duration::from_millis(20));
        s.store(true, Ordering::SeqCst);
        assert!(matches!(h1.join().unwrap(), Err(TransportError::Stopped)));
        assert!(matches!(h2.join().unwrap(), Err(TransportError::Stopped)));
        drop((c, p2));
    }
}
