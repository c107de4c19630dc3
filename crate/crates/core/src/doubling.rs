//! Deterministic background tracker: every site notifies the server when its
//! local count reaches a power of two, and the server raises a boundary alert
//! whenever its running total doubles. The total n' stays in [n/2, n], which
//! is what lets the HYZ12 round structure pace its probability updates.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("stale notify for site {site}: value {value} not above recorded {recorded}")]
pub struct StaleNotify {
    pub site: usize,
    pub value: u64,
    pub recorded: u64,
}

/// Site side: a bare event counter.
#[derive(Debug, Clone, Default)]
pub struct DoublingSite {
    count: u64,
}

impl DoublingSite {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Count the event; notify with the new count when it is a power of two.
    pub fn on_event(&mut self) -> Option<u64> {
        self.count += 1;
        self.count.is_power_of_two().then_some(self.count)
    }
}

/// Server side: per-site last notified counts, their total n', and the
/// doubling threshold tau (the value of n' at the most recent boundary).
#[derive(Debug, Clone)]
pub struct DoublingServer {
    last_notified: Vec<u64>,
    estimate: u64,
    threshold: u64,
}

impl DoublingServer {
    pub fn new(k: usize) -> Self {
        Self { last_notified: vec![0; k], estimate: 0, threshold: 1 }
    }

    /// The running total n'.
    pub fn estimate(&self) -> u64 {
        self.estimate
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn last_notified(&self) -> &[u64] {
        &self.last_notified
    }

    /// Absorb a notify; returns `Some(n')` when the total crossed twice the
    /// threshold, i.e. a round boundary. Under ordered delivery a notify
    /// value never regresses, so `StaleNotify` cannot occur in an engine run.
    pub fn on_notify(&mut self, site: usize, value: u64) -> Result<Option<u64>, StaleNotify> {
        let recorded = self.last_notified[site];
        if value <= recorded {
            return Err(StaleNotify { site, value, recorded });
        }
        self.estimate += value - recorded;
        self.last_notified[site] = value;
        if self.estimate >= 2 * self.threshold {
            self.threshold = self.estimate;
            Ok(Some(self.estimate))
        } else {
            Ok(None)
        }
    }
}
