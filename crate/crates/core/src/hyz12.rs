//! The HYZ12 protocol: sites report their exact local count with probability
//! p per event, the server estimates each site as `last report - 1 + 1/p`,
//! and the Doubling protocol's boundary alerts drive round transitions where
//! p is rescaled to the power of two nearest below sqrt(k)/(eps n') and the
//! stored counts receive zero-inflated geometric corrections so the state is
//! distributed as if the new p had been in effect all along.

use std::collections::VecDeque;

use crate::doubling::{DoublingServer, DoublingSite};
use crate::engine::{Message, Protocol, WhiteBoxView};
use crate::randkit::{sample_bernoulli, sample_zero_inflated, RngStream, ZeroInflatedParams};

/// Exact floor(log2(x)) of a positive finite f64. The float log is only a
/// first guess; the power-of-two comparisons below are exact, so values
/// sitting on a boundary land on the correct side.
pub(crate) fn floor_log2(x: f64) -> i32 {
    debug_assert!(x.is_finite() && x > 0.0);
    let mut e = x.log2().floor() as i32;
    while 2f64.powi(e) > x {
        e -= 1;
    }
    while 2f64.powi(e + 1) <= x {
        e += 1;
    }
    e
}

/// Server state: last (adjusted) reports, per-site estimates, and the
/// transmission probability, which is always an exact power of two in (0,1]
/// and never increases over a run.
#[derive(Debug, Clone)]
pub struct HyzServer {
    k: usize,
    epsilon: f64,
    reported: Vec<u64>,
    site_estimates: Vec<f64>,
    probability: f64,
    previous_probability: f64,
    published: f64,
}

impl HyzServer {
    pub fn new(k: usize, epsilon: f64) -> Self {
        Self {
            k,
            epsilon,
            reported: vec![0; k],
            site_estimates: vec![0.0; k],
            probability: 1.0,
            previous_probability: 1.0,
            published: 0.0,
        }
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn published(&self) -> f64 {
        self.published
    }

    pub fn reported(&self) -> &[u64] {
        &self.reported
    }

    pub fn site_estimates(&self) -> &[f64] {
        &self.site_estimates
    }

    fn republish(&mut self) {
        self.published = self.site_estimates.iter().sum();
    }

    /// Absorb an exact-count report: n_bar_i <- value, estimate
    /// value - 1 + 1/p, republish the total.
    pub fn on_report(&mut self, site: usize, value: u64) -> f64 {
        debug_assert!(value >= 1);
        self.reported[site] = value;
        self.site_estimates[site] = value as f64 - 1.0 + 1.0 / self.probability;
        self.republish();
        self.published
    }

    /// Open a new round at doubling estimate `n_prime`. Sets
    /// p = 2^min{0, floor(log2(sqrt(k)/(eps n')))}. When p < 1, subtracts an
    /// independent zero-inflated correction from every stored count (always
    /// two draws per site, even when the correction is surely zero) and
    /// returns the probability to broadcast. When p = 1 nothing changed, so
    /// there is no adjustment and no broadcast.
    pub fn on_boundary(&mut self, n_prime: u64, rng: &mut RngStream) -> Option<f64> {
        self.previous_probability = self.probability;
        let ratio = (self.k as f64).sqrt() / (self.epsilon * n_prime as f64);
        let exponent = floor_log2(ratio).min(0);
        let probability = 2f64.powi(exponent);
        debug_assert!(
            probability <= self.previous_probability,
            "transmission probability must never increase"
        );
        self.probability = probability;
        if probability == 1.0 {
            return None;
        }
        let correction = ZeroInflatedParams::new(probability, self.previous_probability)
            .expect("0 < p <= p_old <= 1 at a boundary");
        for site in 0..self.k {
            let z = sample_zero_inflated(correction, rng);
            self.reported[site] = self.reported[site].saturating_sub(z);
            self.site_estimates[site] = if self.reported[site] == 0 {
                0.0
            } else {
                self.reported[site] as f64 - 1.0 + 1.0 / probability
            };
        }
        self.republish();
        Some(probability)
    }
}

/// Full HYZ12 behavior bundle: HYZ12 sites and server plus the Doubling
/// protocol running concurrently on the same events.
#[derive(Debug, Clone)]
pub struct Hyz12Protocol {
    site_counts: Vec<u64>,
    site_probability: Vec<f64>,
    doubling_sites: Vec<DoublingSite>,
    doubling_server: DoublingServer,
    server: HyzServer,
    round: u32,
}

impl Hyz12Protocol {
    pub fn new(k: usize, epsilon: f64) -> Self {
        assert!(k >= 1);
        assert!(epsilon > 0.0);
        Self {
            site_counts: vec![0; k],
            site_probability: vec![1.0; k],
            doubling_sites: (0..k).map(|_| DoublingSite::new()).collect(),
            doubling_server: DoublingServer::new(k),
            server: HyzServer::new(k, epsilon),
            round: 0,
        }
    }

    pub fn server(&self) -> &HyzServer {
        &self.server
    }

    pub fn doubling_server(&self) -> &DoublingServer {
        &self.doubling_server
    }

    pub fn site_counts(&self) -> &[u64] {
        &self.site_counts
    }
}

impl Protocol for Hyz12Protocol {
    fn site_count(&self) -> usize {
        self.site_counts.len()
    }

    fn on_event(&mut self, site: usize, rng: &mut RngStream, queue: &mut VecDeque<Message>) {
        self.site_counts[site] += 1;
        let p = self.site_probability[site];
        let reports = sample_bernoulli(p, rng).expect("site transmission probability in (0,1]");
        if reports {
            // exact local count; queued before the doubling notify so the
            // server processes the report first when both fire
            queue.push_back(Message::Report { site, count: self.site_counts[site] });
        }
        if let Some(count) = self.doubling_sites[site].on_event() {
            queue.push_back(Message::DoublingNotify { site, count });
        }
    }

    fn on_message(&mut self, message: Message, rng: &mut RngStream, queue: &mut VecDeque<Message>) {
        match message {
            Message::Report { site, count } => {
                self.server.on_report(site, count);
            }
            Message::DoublingNotify { site, count } => {
                let boundary = self
                    .doubling_server
                    .on_notify(site, count)
                    .expect("ordered delivery never regresses a notify");
                if let Some(estimate) = boundary {
                    queue.push_back(Message::BoundaryReached { estimate });
                }
            }
            Message::BoundaryReached { estimate } => {
                self.round += 1;
                if let Some(probability) = self.server.on_boundary(estimate, rng) {
                    for site in 0..self.site_count() {
                        queue.push_back(Message::ProbBroadcast { site, probability });
                    }
                }
            }
            Message::ProbBroadcast { site, probability } => {
                self.site_probability[site] = probability;
            }
            other => unreachable!("message {other:?} does not belong to HYZ12"),
        }
    }

    fn estimate(&self) -> f64 {
        self.server.published
    }

    fn round(&self) -> u32 {
        self.round
    }

    fn white_box(&self) -> WhiteBoxView<'_> {
        WhiteBoxView {
            site_counts: &self.site_counts,
            server_counts: &self.server.reported,
            transmission_probability: self.server.probability,
            round: self.round,
        }
    }
}
