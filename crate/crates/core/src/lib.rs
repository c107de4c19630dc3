//! Simulation framework for continuous distributed counting protocols.
//!
//! A server tracks the total number of events observed by `k` sites while
//! trying to publish a running (1 ± epsilon)-approximation as cheaply as
//! possible. This crate implements:
//!
//! - [`doubling`]: the deterministic background tracker that keeps a factor-2
//!   estimate and signals when it doubles;
//! - [`hyz12`]: the classic randomized protocol (Bernoulli-sampled exact
//!   reports with geometric correction at round boundaries), accurate on
//!   oblivious streams;
//! - [`adversary`]: event-stream generators, including the adaptive
//!   round-robin attack that drives HYZ12 into a persistent positive bias;
//! - [`robust`]: the anonymous-report protocol whose rounds end at the k-th
//!   sample and resynchronize exactly, immune to adaptive site selection;
//! - [`engine`]: the deterministic discrete-event loop tying these together;
//! - [`harness`]: multi-seed experiment orchestration, quantile aggregation
//!   and CSV emission;
//! - [`verify`]: seeded statistical suites that check the protocols and the
//!   sampling layer against analytic oracles.
//!
//! Every run is a pure function of its configuration: seeds derive via a
//! fixed SplitMix64 mixing chain (see [`randkit`]) and all randomness flows
//! through ChaCha8 streams, so results replay bit-identically across
//! platforms and thread counts.

pub mod adversary;
pub mod doubling;
pub mod engine;
pub mod harness;
pub mod hyz12;
pub mod randkit;
pub mod robust;
pub mod verify;

pub use engine::{run, ProtocolKind, RunConfig, StreamKind, Transcript};
pub use harness::DEFAULT_SEED;
