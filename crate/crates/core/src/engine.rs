//! The sequential discrete-event engine.
//!
//! One engine owns one protocol instance and drives it event by event: the
//! adversary picks a target site, the site hook runs, and every message the
//! event triggers is delivered synchronously (zero latency, no loss, FIFO) to
//! quiescence before the next event starts. Messages are accounted in a
//! [`MessageLedger`] as they are delivered; a broadcast to k sites is k
//! deliveries.
//!
//! Randomness discipline: each run derives two sub-streams from its seed, one
//! consumed by the protocol in engine-step order and one by the adversary.
//! Keeping the adversary off the protocol stream is what makes coupled runs
//! with different site assignments replay the protocol's draws verbatim.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::adversary::{AccessLevel, Adversary, AttackAdversary, UniformAdversary};
use crate::hyz12::Hyz12Protocol;
use crate::randkit::RngStream;
use crate::robust::RobustProtocol;

/// Stream index of the protocol's randomness under a run seed.
pub const PROTOCOL_STREAM: u64 = 0;
/// Stream index of the adversary's randomness under a run seed.
pub const ADVERSARY_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolKind {
    Hyz12,
    Robust,
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::Hyz12 => "hyz12",
            ProtocolKind::Robust => "robust",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "hyz12" => Ok(ProtocolKind::Hyz12),
            "robust" => Ok(ProtocolKind::Robust),
            other => Err(ConfigError::UnknownProtocol(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Uniform,
    Attack,
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StreamKind::Uniform => "uniform",
            StreamKind::Attack => "attack",
        })
    }
}

impl FromStr for StreamKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "uniform" => Ok(StreamKind::Uniform),
            "attack" => Ok(StreamKind::Attack),
            other => Err(ConfigError::UnknownStream(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("site count must be at least 1")]
    InvalidSiteCount,
    #[error("epsilon must lie in (0, 0.5], got {0}")]
    InvalidEpsilon(f64),
    #[error("safety factor c must be at least 1, got {0}")]
    InvalidSafetyFactor(f64),
    #[error("event horizon must be at least 1")]
    InvalidHorizon,
    #[error("unknown protocol {0:?} (expected hyz12 or robust)")]
    UnknownProtocol(String),
    #[error("unknown stream {0:?} (expected uniform or attack)")]
    UnknownStream(String),
}

/// One experiment cell: protocol, stream, parameters, and the run seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub epsilon: f64,
    /// Safety factor of the Robust protocol; ignored by HYZ12.
    pub c: f64,
    pub n_events: u64,
    pub seed: u64,
    pub protocol: ProtocolKind,
    pub stream: StreamKind,
}

impl RunConfig {
    pub fn new(
        k: usize,
        epsilon: f64,
        c: f64,
        n_events: u64,
        seed: u64,
        protocol: ProtocolKind,
        stream: StreamKind,
    ) -> Result<Self, ConfigError> {
        let config = Self { k, epsilon, c, n_events, seed, protocol, stream };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 1 {
            return Err(ConfigError::InvalidSiteCount);
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(ConfigError::InvalidEpsilon(self.epsilon));
        }
        if self.c < 1.0 || self.c.is_nan() {
            return Err(ConfigError::InvalidSafetyFactor(self.c));
        }
        if self.n_events < 1 {
            return Err(ConfigError::InvalidHorizon);
        }
        Ok(())
    }
}

/// Wire messages plus the one server-internal alert.
///
/// Site indices are zero-based throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    /// Doubling protocol: site count reached a power of two.
    DoublingNotify { site: usize, count: u64 },
    /// HYZ12: Bernoulli-sampled exact local count.
    Report { site: usize, count: u64 },
    /// Robust: anonymous, payload-free sample notification.
    ReportSample,
    /// Robust: exact count reply during a sync.
    ReportCount { site: usize, count: u64 },
    /// Robust: per-site leg of the count-request broadcast.
    CountRequest { site: usize },
    /// Per-site leg of a probability broadcast.
    ProbBroadcast { site: usize, probability: f64 },
    /// Doubling server alert consumed by the HYZ12 server. Internal to the
    /// server process, so it is never accounted as communication.
    BoundaryReached { estimate: u64 },
}

/// Message accounting, split by kind. Broadcast legs are counted one per
/// site, so a full broadcast contributes exactly k.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageLedger {
    pub site_reports: u64,
    pub broadcasts: u64,
    pub count_replies: u64,
}

impl MessageLedger {
    fn record(&mut self, message: &Message) {
        match message {
            Message::DoublingNotify { .. } | Message::Report { .. } | Message::ReportSample => {
                self.site_reports += 1;
            }
            Message::CountRequest { .. } | Message::ProbBroadcast { .. } => {
                self.broadcasts += 1;
            }
            Message::ReportCount { .. } => {
                self.count_replies += 1;
            }
            Message::BoundaryReached { .. } => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.site_reports + self.broadcasts + self.count_replies
    }
}

/// Read-only snapshot of internal state, handed to white-box adversaries.
#[derive(Debug, Clone, Copy)]
pub struct WhiteBoxView<'a> {
    /// Exact local event counts, one per site.
    pub site_counts: &'a [u64],
    /// The server's stored per-site counts (last reports or last sync).
    pub server_counts: &'a [u64],
    pub transmission_probability: f64,
    pub round: u32,
}

/// What an adversary is allowed to see before choosing the next site.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Estimate published after the previous event's full processing.
    pub estimate: f64,
    /// Populated only for white-box adversaries.
    pub white_box: Option<WhiteBoxView<'a>>,
}

/// Behavior bundle a protocol exposes to the engine.
pub trait Protocol {
    fn site_count(&self) -> usize;
    /// An event arrived at `site`; push any triggered messages.
    fn on_event(&mut self, site: usize, rng: &mut RngStream, queue: &mut VecDeque<Message>);
    /// A message was delivered; push any follow-up messages.
    fn on_message(&mut self, message: Message, rng: &mut RngStream, queue: &mut VecDeque<Message>);
    /// Currently published estimate. Pure.
    fn estimate(&self) -> f64;
    /// Completed round transitions so far.
    fn round(&self) -> u32;
    fn white_box(&self) -> WhiteBoxView<'_>;
}

/// Per-event record: the published estimate, cumulative messages, and round
/// index after the event finished processing. The true count is the row's
/// one-based position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranscriptRow {
    pub estimate: f64,
    pub messages: u64,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub seed: u64,
    pub rows: Vec<TranscriptRow>,
}

impl Transcript {
    pub fn n_events(&self) -> u64 {
        self.rows.len() as u64
    }

    /// Row for event index `t` (one-based).
    pub fn row(&self, t: u64) -> &TranscriptRow {
        &self.rows[(t - 1) as usize]
    }

    /// |n_hat - t| / t at event index `t`.
    pub fn relative_error(&self, t: u64) -> f64 {
        (self.row(t).estimate - t as f64).abs() / t as f64
    }

    /// Total messages at the horizon.
    pub fn final_messages(&self) -> u64 {
        self.rows.last().map_or(0, |row| row.messages)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub estimate_delta: f64,
    pub messages_delta: u64,
}

/// A protocol instance wired to its message queue, ledger, and randomness.
/// Strictly single-threaded; run many engines in parallel instead.
pub struct Engine<P> {
    protocol: P,
    queue: VecDeque<Message>,
    ledger: MessageLedger,
    rng: RngStream,
}

impl<P: Protocol> Engine<P> {
    pub fn new(protocol: P, protocol_rng: RngStream) -> Self {
        Self { protocol, queue: VecDeque::new(), ledger: MessageLedger::default(), rng: protocol_rng }
    }

    /// Engine with the protocol sub-stream of `run_seed`.
    pub fn for_run(protocol: P, run_seed: u64) -> Self {
        Self::new(protocol, RngStream::derive(run_seed, PROTOCOL_STREAM))
    }

    pub fn protocol(&self) -> &P {
        &self.protocol
    }

    pub fn ledger(&self) -> &MessageLedger {
        &self.ledger
    }

    pub fn estimate(&self) -> f64 {
        self.protocol.estimate()
    }

    pub fn observation(&self, level: AccessLevel) -> Observation<'_> {
        Observation {
            estimate: self.protocol.estimate(),
            white_box: match level {
                AccessLevel::BlackBox => None,
                AccessLevel::WhiteBox => Some(self.protocol.white_box()),
            },
        }
    }

    /// Deliver one event to `site`, then drain the message queue to
    /// quiescence in FIFO order. When one event triggers both a report and a
    /// round boundary, FIFO order makes the server process the report first.
    pub fn step(&mut self, site: usize) -> StepResult {
        assert!(site < self.protocol.site_count(), "site index out of range");
        let estimate_before = self.protocol.estimate();
        let messages_before = self.ledger.total();
        self.protocol.on_event(site, &mut self.rng, &mut self.queue);
        while let Some(message) = self.queue.pop_front() {
            self.ledger.record(&message);
            self.protocol.on_message(message, &mut self.rng, &mut self.queue);
        }
        debug_assert!(self.queue.is_empty());
        StepResult {
            estimate_delta: self.protocol.estimate() - estimate_before,
            messages_delta: self.ledger.total() - messages_before,
        }
    }
}

/// Drive `protocol` for `n_events` events chosen by `adversary`, recording a
/// transcript row per event. `observer` sees the engine after each event and
/// exists so tests and verification suites can assert internal invariants
/// without re-implementing the loop.
pub fn run_protocol<P: Protocol, A: Adversary + ?Sized>(
    protocol: P,
    adversary: &mut A,
    n_events: u64,
    run_seed: u64,
    mut observer: impl FnMut(u64, &Engine<P>),
) -> Transcript {
    let mut engine = Engine::for_run(protocol, run_seed);
    let mut adversary_rng = RngStream::derive(run_seed, ADVERSARY_STREAM);
    let mut rows = Vec::with_capacity(n_events as usize);
    for t in 1..=n_events {
        let site = adversary.next_site(engine.observation(adversary.access_level()), &mut adversary_rng);
        engine.step(site);
        rows.push(TranscriptRow {
            estimate: engine.estimate(),
            messages: engine.ledger().total(),
            round: engine.protocol().round(),
        });
        observer(t, &engine);
    }
    Transcript { seed: run_seed, rows }
}

/// Execute one configured run. Panics on an invalid configuration; validate
/// configs at the boundary where they are built.
pub fn run(config: &RunConfig) -> Transcript {
    config.validate().expect("run() requires a valid configuration");
    let mut adversary: Box<dyn Adversary> = match config.stream {
        StreamKind::Uniform => Box::new(UniformAdversary::new(config.k)),
        StreamKind::Attack => Box::new(AttackAdversary::new(config.k)),
    };
    match config.protocol {
        ProtocolKind::Hyz12 => run_protocol(
            Hyz12Protocol::new(config.k, config.epsilon),
            adversary.as_mut(),
            config.n_events,
            config.seed,
            |_, _| {},
        ),
        ProtocolKind::Robust => run_protocol(
            RobustProtocol::new(config.k, config.epsilon, config.c),
            adversary.as_mut(),
            config.n_events,
            config.seed,
            |_, _| {},
        ),
    }
}
