//! Simulated SMS/GSM layer: bounded message frames, FIFO inbox/outbox
//! queues and a line-oriented wire codec.
//!
//! The transport never blocks: `poll_inbox` returns the oldest deliverable
//! inbound frame or nothing. An optional delivery delay holds injected
//! frames back to model network transit. Whoever plays the network (test
//! harness or the TCP gateway) consumes the outbox.

pub mod tcp;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

/// Hard cap on SMS body length, in characters.
pub const MAX_BODY_CHARS: usize = 160;
/// Peer id length cap, matching the legacy sender buffer.
pub const MAX_PEER_CHARS: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("message body is {0} characters, limit {MAX_BODY_CHARS}")]
    BodyTooLong(usize),
    #[error("invalid peer id {0:?}: expected 1-{MAX_PEER_CHARS} characters of digits and '+'")]
    InvalidPeerId(String),
    #[error("transport is stopped")]
    Stopped,
    #[error("malformed frame: {0}")]
    FrameFormat(String),
    #[error("broadcast aborted after {sent} frames: {source}")]
    Broadcast {
        sent: usize,
        #[source]
        source: Box<TransportError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Inbound,
    Outbound,
}

/// One SMS-sized message crossing the transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmsFrame {
    pub direction: Direction,
    pub peer_id: String,
    pub body: String,
    /// Milliseconds since transport start.
    pub timestamp_ms: u64,
}

impl SmsFrame {
    pub fn new(
        direction: Direction,
        peer_id: &str,
        body: &str,
        timestamp_ms: u64,
    ) -> Result<Self, TransportError> {
        validate_peer_id(peer_id)?;
        validate_body(body)?;
        Ok(Self {
            direction,
            peer_id: peer_id.to_string(),
            body: body.to_string(),
            timestamp_ms,
        })
    }

    /// Outbound frame draft; the transport assigns the real timestamp when
    /// the frame is admitted.
    pub fn outbound(peer_id: &str, body: &str) -> Result<Self, TransportError> {
        Self::new(Direction::Outbound, peer_id, body, 0)
    }
}

fn validate_body(body: &str) -> Result<(), TransportError> {
    let chars = body.chars().count();
    if chars > MAX_BODY_CHARS {
        return Err(TransportError::BodyTooLong(chars));
    }
    Ok(())
}

fn validate_peer_id(peer_id: &str) -> Result<(), TransportError> {
    let chars = peer_id.chars().count();
    if chars == 0
        || chars > MAX_PEER_CHARS
        || !peer_id.chars().all(|c| c.is_ascii_digit() || c == '+')
    {
        return Err(TransportError::InvalidPeerId(peer_id.to_string()));
    }
    Ok(())
}

/// The phone numbers that receive every query report, in registration
/// order, without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientRegistry {
    clients: Vec<String>,
}

impl ClientRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_clients<I, S>(clients: I) -> Result<Self, TransportError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut registry = Self::new();
        for client in clients {
            registry.register(client.as_ref())?;
        }
        Ok(registry)
    }

    /// Register a client id. Returns false if it was already present.
    pub fn register(&mut self, peer_id: &str) -> Result<bool, TransportError> {
        validate_peer_id(peer_id)?;
        if self.clients.iter().any(|c| c == peer_id) {
            return Ok(false);
        }
        self.clients.push(peer_id.to_string());
        Ok(true)
    }

    pub fn clients(&self) -> &[String] {
        &self.clients
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }
}

struct PendingFrame {
    frame: SmsFrame,
    deliverable_at_ms: u64,
}

/// In-process SMS transport with concurrent-safe FIFO queues.
pub struct Transport {
    inbox: Mutex<VecDeque<PendingFrame>>,
    outbox: Mutex<VecDeque<SmsFrame>>,
    epoch: Instant,
    delivery_delay_ms: u64,
    stopped: AtomicBool,
}

impl Transport {
    /// Loopback transport with no artificial delivery delay.
    pub fn loopback() -> Self {
        Self::with_delivery_delay(0)
    }

    /// Transport whose inbound frames become visible only after the given
    /// delay, to model network transit.
    pub fn with_delivery_delay(delay_ms: u64) -> Self {
        Self {
            inbox: Mutex::new(VecDeque::new()),
            outbox: Mutex::new(VecDeque::new()),
            epoch: Instant::now(),
            delivery_delay_ms: delay_ms,
            stopped: AtomicBool::new(false),
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    pub fn stop(&self) {
        self.stopped.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped.load(Ordering::SeqCst)
    }

    fn check_running(&self) -> Result<(), TransportError> {
        if self.is_stopped() {
            return Err(TransportError::Stopped);
        }
        Ok(())
    }

    /// Submit an inbound frame, as the simulated network side. Returns the
    /// submission timestamp stamped on the frame.
    pub fn inject_inbound(&self, peer_id: &str, body: &str) -> Result<u64, TransportError> {
        self.check_running()?;
        validate_peer_id(peer_id)?;
        validate_body(body)?;
        let mut inbox = self.inbox.lock().expect("inbox lock");
        let now = self.now_ms();
        inbox.push_back(PendingFrame {
            frame: SmsFrame {
                direction: Direction::Inbound,
                peer_id: peer_id.to_string(),
                body: body.to_string(),
                timestamp_ms: now,
            },
            deliverable_at_ms: now + self.delivery_delay_ms,
        });
        Ok(now)
    }

    /// Remove and return the oldest deliverable inbound frame, if any.
    pub fn poll_inbox(&self) -> Result<Option<SmsFrame>, TransportError> {
        self.check_running()?;
        let mut inbox = self.inbox.lock().expect("inbox lock");
        let now = self.now_ms();
        if inbox
            .front()
            .is_some_and(|pending| pending.deliverable_at_ms <= now)
        {
            return Ok(inbox.pop_front().map(|p| p.frame));
        }
        Ok(None)
    }

    /// Queue one SMS to a recipient. Oversize bodies are an error, never
    /// silently truncated.
    pub fn send_sms(&self, recipient: &str, body: &str) -> Result<(), TransportError> {
        self.check_running()?;
        validate_peer_id(recipient)?;
        validate_body(body)?;
        let mut outbox = self.outbox.lock().expect("outbox lock");
        outbox.push_back(SmsFrame {
            direction: Direction::Outbound,
            peer_id: recipient.to_string(),
            body: body.to_string(),
            timestamp_ms: self.now_ms(),
        });
        Ok(())
    }

    /// Send each line to every registered client, clients in registration
    /// order. Returns the number of frames sent; a failed send aborts the
    /// remainder but already-sent frames stay sent.
    pub fn broadcast(
        &self,
        registry: &ClientRegistry,
        lines: &[String],
    ) -> Result<usize, TransportError> {
        let mut sent = 0usize;
        for line in lines {
            for client in registry.clients() {
                self.send_sms(client, line)
                    .map_err(|source| TransportError::Broadcast {
                        sent,
                        source: Box::new(source),
                    })?;
                sent += 1;
            }
        }
        Ok(sent)
    }

    /// Pop the oldest outbound frame, as the simulated network side.
    pub fn pop_outbound(&self) -> Option<SmsFrame> {
        self.outbox.lock().expect("outbox lock").pop_front()
    }

    /// Drain every queued outbound frame.
    pub fn take_outbound(&self) -> Vec<SmsFrame> {
        self.outbox.lock().expect("outbox lock").drain(..).collect()
    }

    pub fn outbound_len(&self) -> usize {
        self.outbox.lock().expect("outbox lock").len()
    }

    pub fn inbox_len(&self) -> usize {
        self.inbox.lock().expect("inbox lock").len()
    }
}

fn escape_body(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    for c in body.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            other => out.push(other),
        }
    }
    out
}

fn unescape_body(raw: &str) -> Result<String, TransportError> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('\\') => out.push('\\'),
                Some('|') => out.push('|'),
                Some(other) => {
                    return Err(TransportError::FrameFormat(format!(
                        "invalid escape sequence \\{other}"
                    )))
                }
                None => {
                    return Err(TransportError::FrameFormat(
                        "dangling escape at end of body".to_string(),
                    ))
                }
            },
            '|' => {
                return Err(TransportError::FrameFormat(
                    "unescaped '|' in body".to_string(),
                ))
            }
            other => out.push(other),
        }
    }
    Ok(out)
}

/// Encode a frame as one wire line: `MSG|<dir>|<peer_id>|<ts_ms>|<body>`
/// with `|` and `\` escaped inside the body.
pub fn encode_frame(frame: &SmsFrame) -> String {
    let dir = match frame.direction {
        Direction::Inbound => 'I',
        Direction::Outbound => 'O',
    };
    format!(
        "MSG|{dir}|{peer}|{ts}|{body}",
        peer = frame.peer_id,
        ts = frame.timestamp_ms,
        body = escape_body(&frame.body)
    )
}

/// Decode one wire line back into a frame.
pub fn decode_frame(line: &str) -> Result<SmsFrame, TransportError> {
    if line.contains('\n') {
        return Err(TransportError::FrameFormat("embedded newline".to_string()));
    }
    let mut parts = line.splitn(5, '|');
    let tag = parts.next().unwrap_or_default();
    if tag != "MSG" {
        return Err(TransportError::FrameFormat(format!(
            "expected MSG tag, found {tag:?}"
        )));
    }
    let direction = match parts.next() {
        Some("I") => Direction::Inbound,
        Some("O") => Direction::Outbound,
        other => {
            return Err(TransportError::FrameFormat(format!(
                "bad direction field {other:?}"
            )))
        }
    };
    let peer_id = parts
        .next()
        .ok_or_else(|| TransportError::FrameFormat("missing peer field".to_string()))?;
    let timestamp_ms: u64 = parts
        .next()
        .ok_or_else(|| TransportError::FrameFormat("missing timestamp field".to_string()))?
        .parse()
        .map_err(|_| TransportError::FrameFormat("bad timestamp field".to_string()))?;
    let raw_body = parts
        .next()
        .ok_or_else(|| TransportError::FrameFormat("missing body field".to_string()))?;
    let body = unescape_body(raw_body)?;
    SmsFrame::new(direction, peer_id, &body, timestamp_ms)
}
