//! Latest-wins frame queue with a bound on unacknowledged frames.
//!
//! A frame is in flight from the moment it is handed to the socket until the
//! client acknowledges it (cumulatively, by `frame_seq`). At most `limit`
//! frames are in flight; beyond that one newest frame waits in a single
//! pending slot and is replaced, not queued, by anything newer.

use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::Notify;

pub const DEFAULT_IN_FLIGHT_LIMIT: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutFrame {
    pub seq: u32,
    pub bytes: Vec<u8>,
}

#[derive(Debug)]
pub struct Outbox {
    limit: usize,
    pending: Option<OutFrame>,
    in_flight: VecDeque<u32>,
    dropped: u64,
    sent: u64,
}

impl Default for Outbox {
    fn default() -> Self {
        Self::new(DEFAULT_IN_FLIGHT_LIMIT)
    }
}

impl Outbox {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            pending: None,
            in_flight: VecDeque::new(),
            dropped: 0,
            sent: 0,
        }
    }

    /// Queues `frame`, replacing any pending one. Returns the replaced
    /// frame's sequence number.
    pub fn offer(&mut self, frame: OutFrame) -> Option<u32> {
        let replaced = self.pending.replace(frame).map(|f| f.seq);
        if replaced.is_some() {
            self.dropped += 1;
        }
        replaced
    }

    /// The pending frame, if the in-flight budget allows sending it now.
    pub fn next_sendable(&mut self) -> Option<OutFrame> {
        if self.in_flight.len() >= self.limit {
            return None;
        }
        let frame = self.pending.take()?;
        self.in_flight.push_back(frame.seq);
        self.sent += 1;
        Some(frame)
    }

    /// Acknowledges every in-flight frame up to and including `seq`.
    pub fn ack(&mut self, seq: u32) -> usize {
        let before = self.in_flight.len();
        self.in_flight.retain(|&s| s > seq);
        before - self.in_flight.len()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn limit(&self) -> usize {
        self.limit
    }
}

/// An [`Outbox`] shared between the producer, the socket writer and the
/// reader that processes acks; `notify` wakes the writer.
#[derive(Debug, Default)]
pub struct SharedOutbox {
    inner: Mutex<Outbox>,
    notify: Notify,
}

impl SharedOutbox {
    pub fn new(limit: usize) -> Self {
        Self {
            inner: Mutex::new(Outbox::new(limit)),
            notify: Notify::new(),
        }
    }

    pub fn offer(&self, frame: OutFrame) {
        self.inner.lock().expect("outbox lock").offer(frame);
        self.notify.notify_one();
    }

    pub fn ack(&self, seq: u32) {
        if self.inner.lock().expect("outbox lock").ack(seq) > 0 {
            self.notify.notify_one();
        }
    }

    pub fn next_sendable(&self) -> Option<OutFrame> {
        self.inner.lock().expect("outbox lock").next_sendable()
    }

    pub async fn wait(&self) {
        self.notify.notified().await;
    }

    pub fn with<R>(&self, f: impl FnOnce(&Outbox) -> R) -> R {
        f(&self.inner.lock().expect("outbox lock"))
    }
}
