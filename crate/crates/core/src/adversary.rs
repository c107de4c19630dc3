//! Event-stream generators. The engine pulls the next target site from an
//! adversary before every event, passing it whatever its access level
//! entitles it to see: black-box adversaries observe only the published
//! estimate, white-box adversaries additionally get the full state snapshot.

use crate::engine::Observation;
use crate::randkit::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessLevel {
    /// Published estimate only.
    BlackBox,
    /// Full engine state snapshot.
    WhiteBox,
}

/// Strategy choosing which site receives the next event. Site indices are
/// zero-based. The first consultation happens before any event, with the
/// protocol's initial estimate (zero) as the observation.
pub trait Adversary {
    fn access_level(&self) -> AccessLevel {
        AccessLevel::BlackBox
    }

    fn next_site(&mut self, observation: Observation<'_>, rng: &mut RngStream) -> usize;
}

/// Oblivious baseline: every event goes to an i.i.d. uniform site. One rng
/// draw per consultation.
#[derive(Debug, Clone)]
pub struct UniformAdversary {
    k: usize,
}

impl UniformAdversary {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1);
        Self { k }
    }
}

impl Adversary for UniformAdversary {
    fn next_site(&mut self, _observation: Observation<'_>, rng: &mut RngStream) -> usize {
        rng.next_below(self.k as u64) as usize
    }
}

/// The adaptive round-robin attack: keep injecting events at the current
/// site until the published estimate changes, then advance to the next site.
/// Deterministic given the observation sequence, and black-box by design.
#[derive(Debug, Clone)]
pub struct AttackAdversary {
    k: usize,
    current: usize,
    last_estimate: f64,
}

impl AttackAdversary {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1);
        Self { k, current: 0, last_estimate: 0.0 }
    }

    pub fn current_site(&self) -> usize {
        self.current
    }
}

impl Adversary for AttackAdversary {
    fn next_site(&mut self, observation: Observation<'_>, _rng: &mut RngStream) -> usize {
        if observation.estimate != self.last_estimate {
            self.last_estimate = observation.estimate;
            self.current = (self.current + 1) % self.k;
        }
        self.current
    }
}

/// Sends every event to one fixed site. An oblivious stream used by the
/// site-symmetry coupling checks.
#[derive(Debug, Clone)]
pub struct SingleSiteAdversary {
    site: usize,
}

impl SingleSiteAdversary {
    pub fn new(site: usize) -> Self {
        Self { site }
    }
}

impl Adversary for SingleSiteAdversary {
    fn next_site(&mut self, _observation: Observation<'_>, _rng: &mut RngStream) -> usize {
        self.site
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_protocol, Observation};
    use crate::robust::RobustProtocol;

    fn black_box(estimate: f64) -> Observation<'static> {
        Observation { estimate, white_box: None }
    }

    #[test]
    fn uniform_single_site() {
        let mut adversary = UniformAdversary::new(1);
        let mut rng = RngStream::from_seed(0);
        for _ in 0..100 {
            assert_eq!(adversary.next_site(black_box(0.0), &mut rng), 0);
        }
    }

    #[test]
    fn uniform_frequencies() {
        // multinomial band around 1/64 over 1e6 draws
        let k = 64;
        let mut adversary = UniformAdversary::new(k);
        let mut rng = RngStream::from_seed(1);
        let mut hits = vec![0u64; k];
        for _ in 0..1_000_000 {
            hits[adversary.next_site(black_box(0.0), &mut rng)] += 1;
        }
        for (site, &h) in hits.iter().enumerate() {
            let freq = h as f64 / 1e6;
            assert!((0.0147..=0.0166).contains(&freq), "site {site}: {freq}");
        }
    }

    #[test]
    fn uniform_replays_deterministically() {
        let mut a = UniformAdversary::new(16);
        let mut b = UniformAdversary::new(16);
        let mut rng_a = RngStream::from_seed(2);
        let mut rng_b = RngStream::from_seed(2);
        for _ in 0..10_000 {
            assert_eq!(
                a.next_site(black_box(0.0), &mut rng_a),
                b.next_site(black_box(0.0), &mut rng_b)
            );
        }
    }

    #[test]
    fn attack_waits_for_estimate_changes() {
        let mut adversary = AttackAdversary::new(3);
        let mut rng = RngStream::from_seed(3);
        // initial estimate matches the initialized last value: stay on site 0
        assert_eq!(adversary.next_site(black_box(0.0), &mut rng), 0);
        assert_eq!(adversary.next_site(black_box(0.0), &mut rng), 0);
        // change moves to the next site; no change keeps it
        assert_eq!(adversary.next_site(black_box(1.0), &mut rng), 1);
        assert_eq!(adversary.next_site(black_box(1.0), &mut rng), 1);
        assert_eq!(adversary.next_site(black_box(4.5), &mut rng), 2);
        // wrap-around
        assert_eq!(adversary.next_site(black_box(9.0), &mut rng), 0);
    }

    #[test]
    fn attack_on_single_site_never_moves() {
        let mut adversary = AttackAdversary::new(1);
        let mut rng = RngStream::from_seed(4);
        for round in 0..10 {
            assert_eq!(adversary.next_site(black_box(round as f64), &mut rng), 0);
        }
    }

    #[test]
    fn white_box_surface_reaches_a_scripted_adversary() {
        // a least-loaded strategy only expressible with the white-box view
        struct LeastLoaded;
        impl Adversary for LeastLoaded {
            fn access_level(&self) -> AccessLevel {
                AccessLevel::WhiteBox
            }
            fn next_site(&mut self, observation: Observation<'_>, _rng: &mut RngStream) -> usize {
                let view = observation.white_box.expect("white-box view must be populated");
                let (site, _) = view
                    .site_counts
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &count)| count)
                    .unwrap();
                site
            }
        }
        let mut adversary = LeastLoaded;
        let transcript =
            run_protocol(RobustProtocol::new(8, 0.25, 1.0), &mut adversary, 4000, 7, |_, engine| {
                let counts = engine.protocol().site_counts();
                let max = counts.iter().max().unwrap();
                let min = counts.iter().min().unwrap();
                assert!(max - min <= 1, "least-loaded keeps counts balanced");
            });
        assert_eq!(transcript.n_events(), 4000);
    }
}
