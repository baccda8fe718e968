use std::collections::VecDeque;
use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CostCounter, FrameType, ProtocolError, TransferBatch, TransportError, WireFrame};

pub const DEFAULT_PORT: u16 = 7440;
pub const PORT_ENV: &str = "ZSDC_PORT";

/// Port from `ZSDC_PORT` when set and valid, else 7440.
pub fn default_port() -> u16 {
    std::env::var(PORT_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

/// One in-order request/response session.
pub trait Link {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError>;
    /// Next frame from the peer, or [`TransportError::Timeout`].
    fn recv(&mut self, timeout: Duration) -> Result<WireFrame, TransportError>;
    /// Waits before a retry.
    fn pause(&mut self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Server side of a frame exchange: bytes of one request in, reply out.
pub trait FrameHandler {
    fn handle_frame(&mut self, frame: &[u8]) -> Option<Vec<u8>>;
}

impl<F: FnMut(&[u8]) -> Option<Vec<u8>>> FrameHandler for F {
    fn handle_frame(&mut self, frame: &[u8]) -> Option<Vec<u8>> {
        self(frame)
    }
}

pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        Self { stream }
    }
}

impl Link for TcpLink {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.stream.write_all(frame).map_err(|e| match e.kind() {
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => TransportError::ConnectionClosed,
            _ => e.into(),
        })?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<WireFrame, TransportError> {
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        WireFrame::read_from(&mut self.stream)
    }
}

/// In-memory link to a handler that drops each frame in either direction
/// with probability `loss` and flips one bit with probability `corrupt`.
/// Time is virtual: timeouts and pauses only advance [`clock`](Self::clock).
pub struct LossyLink<H> {
    pub handler: H,
    rng: ChaCha8Rng,
    loss: f64,
    corrupt: f64,
    inbox: VecDeque<Vec<u8>>,
    clock: Duration,
    pub frames_lost: u64,
    pub frames_corrupted: u64,
}

impl<H: FrameHandler> LossyLink<H> {
    pub fn new(handler: H, loss: f64, corrupt: f64, seed: u64) -> Self {
        Self {
            handler,
            rng: ChaCha8Rng::seed_from_u64(seed),
            loss,
            corrupt,
            inbox: VecDeque::new(),
            clock: Duration::ZERO,
            frames_lost: 0,
            frames_corrupted: 0,
        }
    }

    /// Lossless in-memory pipe.
    pub fn reliable(handler: H) -> Self {
        Self::new(handler, 0.0, 0.0, 0)
    }

    pub fn clock(&self) -> Duration {
        self.clock
    }

    /// Applies loss and corruption to one frame in transit.
    fn transit(&mut self, frame: &[u8]) -> Option<Vec<u8>> {
        if self.loss > 0.0 && self.rng.random_bool(self.loss.min(1.0)) {
            self.frames_lost += 1;
            return None;
        }
        let mut bytes = frame.to_vec();
        if self.corrupt > 0.0 && !bytes.is_empty() && self.rng.random_bool(self.corrupt.min(1.0)) {
            let bit = self.rng.random_range(0..bytes.len() * 8);
            bytes[bit / 8] ^= 1 << (bit % 8);
            self.frames_corrupted += 1;
        }
        Some(bytes)
    }
}

impl<H: FrameHandler> Link for LossyLink<H> {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        if let Some(req) = self.transit(frame) {
            if let Some(reply) = self.handler.handle_frame(&req) {
                if let Some(reply) = self.transit(&reply) {
                    self.inbox.push_back(reply);
                }
            }
        }
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<WireFrame, TransportError> {
        match self.inbox.pop_front() {
            Some(bytes) => Ok(WireFrame::parse(&bytes)?.0),
            None => {
                self.clock += timeout;
                Err(TransportError::Timeout)
            }
        }
    }

    fn pause(&mut self, d: Duration) {
        self.clock += d;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(5),
            max_retries: 5,
            initial_backoff: Duration::from_secs(1),
            max_backoff: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Pause before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// Sends one BATCH frame and waits for its ACK. Replies naming another
/// batch are stale and skipped.
pub fn send_batch(
    link: &mut impl Link,
    batch: &TransferBatch,
    timeout: Duration,
    counter: &mut CostCounter,
) -> Result<(), TransportError> {
    let frame = WireFrame::batch(batch).emit();
    link.send(&frame)?;
    counter.bytes_sent += frame.len() as u64;
    counter.frames_sent += 1;
    loop {
        let reply = link.recv(timeout)?;
        let id = reply.reply_batch_id()?;
        if id != batch.batch_id {
            continue;
        }
        return match reply.frame_type {
            FrameType::Ack => Ok(()),
            FrameType::Nack => Err(TransportError::Nack(reply.nack_reason())),
            FrameType::Batch => Err(ProtocolError::Unexpected(FrameType::Batch).into()),
        };
    }
}

/// [`send_batch`] with retries on retriable failures; returns the number of
/// attempts used.
pub fn send_with_retry(
    link: &mut impl Link,
    batch: &TransferBatch,
    policy: &RetryPolicy,
    counter: &mut CostCounter,
) -> Result<u32, TransportError> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match send_batch(link, batch, policy.timeout, counter) {
            Ok(()) => return Ok(attempt),
            Err(e) if e.is_retriable() && attempt <= policy.max_retries => {
                log::debug!("batch {} attempt {attempt} failed: {e}", batch.batch_id);
                link.pause(policy.backoff(attempt));
            }
            Err(e) if e.is_retriable() => {
                return Err(TransportError::RetriesExhausted {
                    attempts: attempt,
                    last: Box::new(e),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

/// Consecutive batches allowed to exhaust their retries before [`deliver`]
/// gives up.
pub const MAX_CONSECUTIVE_FAILURES: u32 = 8;

/// Drains `state` through `link`: batches that exhaust their retries go
/// back in the queue and are tried again. Returns the number of batches
/// acknowledged. Protocol errors abort.
pub fn deliver(
    state: &mut crate::edge::StorageState,
    link: &mut impl Link,
    max_batch_bytes: u64,
    policy: &RetryPolicy,
    counter: &mut CostCounter,
    now: i64,
) -> Result<u64, crate::edge::EdgeError> {
    let mut acked = 0;
    let mut failures = 0;
    while !state.is_empty() {
        let batch = state.take_flush_batch(max_batch_bytes)?;
        match send_with_retry(link, &batch, policy, counter) {
            Ok(_) => {
                state.acknowledge(&batch, now);
                acked += 1;
                failures = 0;
            }
            Err(e @ TransportError::RetriesExhausted { .. }) => {
                state.requeue(&batch);
                failures += 1;
                if failures >= MAX_CONSECUTIVE_FAILURES {
                    return Err(crate::edge::EdgeError::Transport(e));
                }
            }
            Err(e) => {
                state.requeue(&batch);
                return Err(crate::edge::EdgeError::Transport(e));
            }
        }
    }
    Ok(acked)
}
