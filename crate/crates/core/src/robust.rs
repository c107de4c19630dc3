//! The Robust counting protocol: sites send anonymous, payload-free sample
//! notifications with probability p per event; the round ends at exactly the
//! k-th notification, at which point the server collects exact counts from
//! all sites, resynchronizes, rescales p = min{1, c sqrt(k)/(eps n)}, and
//! broadcasts it. The estimate is `synced total + B/p` where B counts the
//! notifications of the current round.
//!
//! Because the notifications carry no identity and the sync reads the exact
//! total, the server's trajectory depends on the event stream only through
//! the number of events, which is what makes the protocol immune to adaptive
//! site selection.

use std::collections::VecDeque;

use crate::engine::{Message, Protocol, WhiteBoxView};
use crate::randkit::{sample_bernoulli, RngStream};

/// Messages exchanged per completed round: k sample notifications, the
/// count-request broadcast (k), the count replies (k), and the probability
/// broadcast (k).
pub const MESSAGES_PER_ROUND_FACTOR: u64 = 4;

/// min{1, c sqrt(k) / (eps * total)}; equals 1 while the total is small
/// (including the initial total of zero).
pub fn transmission_probability(k: usize, epsilon: f64, c: f64, synced_total: u64) -> f64 {
    if synced_total == 0 {
        return 1.0;
    }
    (c * (k as f64).sqrt() / (epsilon * synced_total as f64)).min(1.0)
}

/// Smallest safety factor with 2 exp(-min{c^2/8, c sqrt(k)/4}) <= delta_round,
/// i.e. per-round failure probability at most `delta_round`. Never below 1.
pub fn safety_factor_for_round_budget(delta_round: f64, k: usize) -> f64 {
    assert!(delta_round > 0.0 && delta_round < 1.0);
    let l = (2.0 / delta_round).ln();
    (8.0 * l).sqrt().max(4.0 * l / (k as f64).sqrt()).max(1.0)
}

/// Safety factor giving per-event (eps, delta) accuracy: each fixed event
/// index is eps-accurate with probability at least 1 - delta, for any event
/// stream. A per-event failure is covered by at most
/// 5 + 4 max{sqrt(L/k), L/k} rounds' worth of per-round budget (L = ln of the
/// inverse budget), so the budget is found by a short fixed-point iteration
/// and then inverted through the per-round tail.
pub fn safety_factor_per_event(delta: f64, k: usize) -> f64 {
    assert!(delta > 0.0 && delta < 1.0);
    let mut budget = delta / 5.0;
    for _ in 0..16 {
        let l = (1.0 / budget).ln();
        let spread = (l / k as f64).sqrt().max(l / k as f64);
        budget = delta / (5.0 + 4.0 * spread);
    }
    safety_factor_for_round_budget(budget, k)
}

/// Safety factor giving uniform (eps, delta) accuracy over a horizon of
/// `n_events`: with probability at least 1 - delta, every event index is
/// eps-accurate. Splits delta between the round-count tail and a per-round
/// budget union-bounded over that many rounds; the round count itself
/// depends on c, so iterate to the fixed point.
pub fn safety_factor_uniform(delta: f64, k: usize, epsilon: f64, n_events: u64) -> f64 {
    assert!(delta > 0.0 && delta < 1.0);
    let ln2d = (2.0 / delta).ln();
    let mut c = 1.0f64;
    for _ in 0..24 {
        let base = 1.0 + (k as f64).sqrt() * epsilon / (2.0 * c);
        let growth_rounds = ((n_events as f64).ln() / base.ln()).ceil().max(1.0);
        let rounds_high = 2.0 * (growth_rounds + 2.0 * (growth_rounds * ln2d).sqrt() + 4.0 * ln2d);
        let budget = (delta / 2.0) / rounds_high;
        c = safety_factor_for_round_budget(budget, k);
    }
    c
}

/// Server state. Between events the sample counter stays in [0, k-1]; it
/// reaches k only transiently inside the round transition.
#[derive(Debug, Clone)]
pub struct RobustServer {
    k: usize,
    epsilon: f64,
    c: f64,
    sample_count: u64,
    synced_counts: Vec<u64>,
    synced_total: u64,
    probability: f64,
    pending_replies: usize,
    published: f64,
    round: u32,
}

impl RobustServer {
    pub fn new(k: usize, epsilon: f64, c: f64) -> Self {
        Self {
            k,
            epsilon,
            c,
            sample_count: 0,
            synced_counts: vec![0; k],
            synced_total: 0,
            probability: 1.0,
            pending_replies: 0,
            published: 0.0,
            round: 0,
        }
    }

    /// B, the sample notifications received in the current round.
    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn synced_total(&self) -> u64 {
        self.synced_total
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn published(&self) -> f64 {
        self.published
    }

    fn republish(&mut self) {
        self.published = self.synced_total as f64 + self.sample_count as f64 / self.probability;
    }

    /// Count a sample notification; true when this was the k-th one and the
    /// round must now close with a sync.
    fn on_report_sample(&mut self) -> bool {
        self.sample_count += 1;
        self.republish();
        self.sample_count == self.k as u64
    }

    /// Absorb one exact-count reply; true when all k replies arrived and the
    /// sync finalized (new total, new probability, counter reset).
    fn on_report_count(&mut self, site: usize, count: u64) -> bool {
        self.synced_counts[site] = count;
        self.pending_replies += 1;
        if self.pending_replies < self.k {
            return false;
        }
        self.pending_replies = 0;
        self.synced_total = self.synced_counts.iter().sum();
        self.probability = transmission_probability(self.k, self.epsilon, self.c, self.synced_total);
        self.sample_count = 0;
        self.round += 1;
        self.republish();
        true
    }
}

/// Full Robust behavior bundle: sites plus server.
#[derive(Debug, Clone)]
pub struct RobustProtocol {
    site_counts: Vec<u64>,
    site_probability: Vec<f64>,
    server: RobustServer,
}

impl RobustProtocol {
    pub fn new(k: usize, epsilon: f64, c: f64) -> Self {
        assert!(k >= 1);
        assert!(epsilon > 0.0);
        assert!(c >= 1.0);
        Self {
            site_counts: vec![0; k],
            site_probability: vec![1.0; k],
            server: RobustServer::new(k, epsilon, c),
        }
    }

    pub fn server(&self) -> &RobustServer {
        &self.server
    }

    pub fn site_counts(&self) -> &[u64] {
        &self.site_counts
    }
}

impl Protocol for RobustProtocol {
    fn site_count(&self) -> usize {
        self.site_counts.len()
    }

    fn on_event(&mut self, site: usize, rng: &mut RngStream, queue: &mut VecDeque<Message>) {
        self.site_counts[site] += 1;
        let p = self.site_probability[site];
        let sampled = sample_bernoulli(p, rng).expect("site transmission probability in (0,1]");
        if sampled {
            queue.push_back(Message::ReportSample);
        }
    }

    fn on_message(&mut self, message: Message, _rng: &mut RngStream, queue: &mut VecDeque<Message>) {
        match message {
            Message::ReportSample => {
                if self.server.on_report_sample() {
                    for site in 0..self.site_count() {
                        queue.push_back(Message::CountRequest { site });
                    }
                }
            }
            Message::CountRequest { site } => {
                queue.push_back(Message::ReportCount { site, count: self.site_counts[site] });
            }
            Message::ReportCount { site, count } => {
                if self.server.on_report_count(site, count) {
                    let probability = self.server.probability();
                    for site in 0..self.site_count() {
                        queue.push_back(Message::ProbBroadcast { site, probability });
                    }
                }
            }
            Message::ProbBroadcast { site, probability } => {
                self.site_probability[site] = probability;
            }
            other => unreachable!("message {other:?} does not belong to Robust"),
        }
    }

    fn estimate(&self) -> f64 {
        self.server.published
    }

    fn round(&self) -> u32 {
        self.server.round
    }

    fn white_box(&self) -> WhiteBoxView<'_> {
        WhiteBoxView {
            site_counts: &self.site_counts,
            server_counts: &self.server.synced_counts,
            transmission_probability: self.server.probability,
            round: self.server.round,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::UniformAdversary;
    use crate::engine::run_protocol;

    #[test]
    fn probability_examples() {
        // 1 * 8 / (0.125 * 10000) = 0.0064
        assert_eq!(transmission_probability(64, 0.125, 1.0, 10_000), 0.0064);
        // min with 1 binds while the total is small
        assert_eq!(transmission_probability(64, 0.125, 1.0, 64), 1.0);
        assert_eq!(transmission_probability(4, 0.5, 1.0, 4), 1.0);
        assert_eq!(transmission_probability(1, 0.5, 1.0, 0), 1.0);
    }

    #[test]
    fn first_round_ends_at_event_k_with_exact_sync() {
        // k=4, eps=0.5, c=1: p=1, so events 1..4 all report; the 4th closes
        // the round with n_bar = 4 and new p = min{1, 2/(0.5*4)} = 1
        let mut adversary = UniformAdversary::new(4);
        let transcript = run_protocol(RobustProtocol::new(4, 0.5, 1.0), &mut adversary, 4, 5, |t, engine| {
            if t < 4 {
                assert_eq!(engine.protocol().round(), 0);
            }
        });
        assert_eq!(transcript.row(4).round, 1);
        assert_eq!(transcript.row(4).estimate, 4.0);
        for t in 1..=4 {
            assert_eq!(transcript.row(t).estimate, t as f64);
        }
    }

    #[test]
    fn single_site_exact_while_p_stays_one() {
        // k=1, eps=0.5, c=1: p = min{1, 2/n_bar} stays 1 through n_bar = 2
        let mut adversary = UniformAdversary::new(1);
        let transcript =
            run_protocol(RobustProtocol::new(1, 0.5, 1.0), &mut adversary, 3, 11, |_, _| {});
        assert_eq!(transcript.row(1).estimate, 1.0);
        assert_eq!(transcript.row(2).estimate, 2.0);
    }

    #[test]
    fn step_reports_every_event_at_p_one() {
        use crate::engine::Engine;
        let mut engine = Engine::for_run(RobustProtocol::new(8, 0.25, 1.0), 3);
        for _ in 0..7 {
            let step = engine.step(0);
            assert_eq!(step.messages_delta, 1); // one ReportSample, no boundary yet
        }
        let closing = engine.step(0); // 8th report closes the round: 1 + 3k
        assert_eq!(closing.messages_delta, 1 + 3 * 8);
    }

    #[test]
    fn sync_is_exact_and_rounds_cost_4k_messages() {
        let k = 16;
        let mut adversary = UniformAdversary::new(k);
        let mut last_round = 0;
        run_protocol(RobustProtocol::new(k, 0.25, 1.0), &mut adversary, 30_000, 23, |t, engine| {
            let server = engine.protocol().server();
            // published estimate always equals synced total + B/p
            assert_eq!(
                engine.estimate(),
                server.synced_total() as f64 + server.sample_count() as f64 / server.probability()
            );
            assert!(server.sample_count() < k as u64);
            if engine.protocol().round() > last_round {
                last_round = engine.protocol().round();
                // at a transition the estimate is the exact count and the
                // cumulative message count is exactly 4k per completed round
                assert_eq!(engine.estimate(), t as f64);
                assert_eq!(engine.ledger().total(), 4 * k as u64 * last_round as u64);
            }
        });
        assert!(last_round > 3);
    }

    #[test]
    fn site_sample_rate_tracks_p() {
        // binomial 4-sigma band around 0.01 * 1e6
        let mut protocol = RobustProtocol::new(1, 0.125, 1.0);
        protocol.site_probability[0] = 0.01;
        let mut rng = RngStream::from_seed(9);
        let mut queue = VecDeque::new();
        let mut samples = 0u64;
        for _ in 0..1_000_000 {
            protocol.on_event(0, &mut rng, &mut queue);
            samples += queue.len() as u64;
            queue.clear();
        }
        assert!((9_600..=10_400).contains(&samples), "samples {samples}");
    }

    #[test]
    fn count_request_reply_is_exact() {
        let mut protocol = RobustProtocol::new(3, 0.25, 1.0);
        let mut rng = RngStream::from_seed(10);
        let mut queue = VecDeque::new();
        for _ in 0..7 {
            protocol.on_event(1, &mut rng, &mut queue);
        }
        queue.clear();
        protocol.on_message(Message::CountRequest { site: 1 }, &mut rng, &mut queue);
        assert_eq!(queue.pop_front(), Some(Message::ReportCount { site: 1, count: 7 }));
        protocol.on_message(Message::CountRequest { site: 0 }, &mut rng, &mut queue);
        assert_eq!(queue.pop_front(), Some(Message::ReportCount { site: 0, count: 0 }));
    }

    #[test]
    fn safety_factor_solves_round_budget() {
        for k in [16usize, 64, 256] {
            for delta_round in [0.05, 0.01, 1e-4] {
                let c = safety_factor_for_round_budget(delta_round, k);
                let tail = 2.0 * (-(c * c / 8.0).min(c * (k as f64).sqrt() / 4.0)).exp();
                assert!(tail <= delta_round * (1.0 + 1e-9), "k={k} delta={delta_round}: {tail}");
            }
        }
    }

    #[test]
    fn safety_factors_are_reasonable_magnitudes() {
        let per_event = safety_factor_per_event(0.05, 64);
        assert!(per_event > 5.0 && per_event < 9.0, "{per_event}");
        let uniform = safety_factor_uniform(0.1, 64, 0.125, 100_000);
        assert!(uniform > 7.0 && uniform < 12.0, "{uniform}");
        // uniform accuracy needs at least the per-round strength of per-event
        assert!(uniform > safety_factor_per_event(0.1, 64));
    }
}
