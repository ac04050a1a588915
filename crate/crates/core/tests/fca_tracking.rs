use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Binomial, Distribution};

use ridegym::fca::BetaTracker;
use ridegym::sim::SlotTallies;

fn tally(n_in: u64, n: u64) -> SlotTallies {
    let mut t = SlotTallies::zeros(1, 1);
    t.n_in[0][0] = n_in;
    t.n[0][0] = n;
    t
}

/// Error of the tracked mean a few slots after the rate jumps from 0.7 to 0.3.
fn lag_error(window: usize) -> f64 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let mut t = BetaTracker::uniform(1, 1, 7.0, 3.0, window).unwrap();
    for _ in 0..30 {
        t.posterior_update(&tally(Binomial::new(30, 0.7).unwrap().sample(&mut rng), 30)).unwrap();
    }
    for _ in 0..4 {
        t.posterior_update(&tally(Binomial::new(30, 0.3).unwrap().sample(&mut rng), 30)).unwrap();
    }
    (t.mean(0, 0) - 0.3).abs()
}

#[test]
fn short_windows_follow_a_shift_faster() {
    let (short, long) = (lag_error(3), lag_error(24));
    assert!(short < 0.1, "l=3 error {short}");
    assert!(long > short + 0.1, "l=24 error {long} vs l=3 {short}");
}

#[test]
fn cells_without_data_keep_their_posterior() {
    let mut t = BetaTracker::uniform(2, 2, 2.0, 5.0, 4).unwrap();
    let mut s = SlotTallies::zeros(2, 2);
    s.n_in[1][0] = 3;
    s.n[1][0] = 4;
    t.posterior_update(&s).unwrap();
    t.posterior_update(&SlotTallies::zeros(2, 2)).unwrap();
    assert_eq!(t.get(1, 0), (5.0, 6.0));
    assert_eq!(t.get(0, 1), (2.0, 5.0));
}

proptest! {
    #[test]
    fn window_holds_the_latest_slots(
        a0 in 0.1f64..20.0,
        b0 in 0.1f64..20.0,
        window in 1usize..6,
        slots in prop::collection::vec((0u64..40, 1u64..40), 1..12),
    ) {
        let mut t = BetaTracker::uniform(1, 1, a0, b0, window).unwrap();
        let slots: Vec<(u64, u64)> = slots.into_iter().map(|(i, n)| (i.min(n), n)).collect();
        for &(i, n) in &slots {
            t.posterior_update(&tally(i, n)).unwrap();
        }
        let kept = &slots[slots.len().saturating_sub(window)..];
        let (si, sn) = kept.iter().fold((0, 0), |acc, &(i, n)| (acc.0 + i, acc.1 + n));
        prop_assert_eq!(t.get(0, 0), (a0 + si as f64, b0 + (sn - si) as f64));
    }

    #[test]
    fn resetting_the_window_restores_the_prior(a0 in 0.1f64..20.0, b0 in 0.1f64..20.0, i in 0u64..10) {
        let mut t = BetaTracker::uniform(1, 1, a0, b0, 3).unwrap();
        t.posterior_update(&tally(i, 10)).unwrap();
        let fresh = t.with_window(5).unwrap();
        prop_assert_eq!(fresh.get(0, 0), (a0, b0));
        prop_assert_eq!(fresh.window(), 5);
    }
}
