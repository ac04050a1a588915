//! Pricing and order generation: competitor price adjustments, per-hour order
//! volume from a normal mixture, and per-order features and quotes.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};

use super::config::{ScenarioConfig, HOURS_PER_DAY};
use crate::error::{Error, Result};

/// Number of entries in a feature vector.
pub const FEATURE_DIM: usize = 4;

/// `[distance miles, supply factor, hour of day, demand intensity]`.
pub type Features = [f64; FEATURE_DIM];

pub const SUPPLY: usize = 1;

/// One ride request as seen by a coupon strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct Opportunity {
    pub id: u64,
    pub features: Features,
    pub base_price: f64,
    /// Quotes of RSPs 1..M (our RSP is index 0 and quotes `g * (1 - d)`).
    pub competitor_quotes: Vec<f64>,
}

impl Opportunity {
    pub fn supply(&self) -> f64 {
        self.features[SUPPLY]
    }

    /// Full quote list with our coupon applied at index 0.
    pub fn quotes_with_coupon(&self, coupon: f64) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.competitor_quotes.len() + 1);
        q.push(self.base_price * (1.0 - coupon));
        q.extend_from_slice(&self.competitor_quotes);
        q
    }
}

/// Per-order randomness hidden from strategies: the dispatch draw and the
/// cancellation propensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latent {
    pub dispatch_draw: f64,
    pub cancel_propensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustmentEvent {
    pub slot: usize,
    pub rsp: usize,
    pub adjustment: f64,
}

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

fn raw_hour_density(cfg: &ScenarioConfig, hour: usize) -> f64 {
    let h = hour as f64;
    cfg.order_count_mixture
        .iter()
        .map(|c| {
            // wrap around midnight
            let wraps: f64 =
                (-3..=3).map(|n| normal_pdf(h + (n * HOURS_PER_DAY as i32) as f64, c.mean, c.stddev)).sum();
            c.weight * wraps
        })
        .sum()
}

/// Share of daily orders falling in each hour; sums to one.
pub fn hourly_shares(cfg: &ScenarioConfig) -> Result<[f64; HOURS_PER_DAY]> {
    let wsum: f64 = cfg.order_count_mixture.iter().map(|c| c.weight).sum();
    if cfg.order_count_mixture.is_empty() || (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("mixture weights must sum to 1, got {wsum}")));
    }
    let mut shares = [0.0; HOURS_PER_DAY];
    for (h, s) in shares.iter_mut().enumerate() {
        *s = raw_hour_density(cfg, h);
    }
    let total: f64 = shares.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Config("mixture has no mass over the day".into()));
    }
    for s in &mut shares {
        *s /= total;
    }
    Ok(shares)
}

/// Orders generated in `slot`: `round(orders_per_day * share(slot mod 24))`.
pub fn order_count(cfg: &ScenarioConfig, slot: usize) -> Result<usize> {
    let shares = hourly_shares(cfg)?;
    Ok((cfg.orders_per_day as f64 * shares[slot % HOURS_PER_DAY]).round() as usize)
}

/// Demand intensity of an hour relative to the daily average (1.0 = average).
pub fn demand_intensity(cfg: &ScenarioConfig, slot: usize) -> Result<f64> {
    Ok(hourly_shares(cfg)?[slot % HOURS_PER_DAY] * HOURS_PER_DAY as f64)
}

/// Each competitor independently changes its price multiplier with
/// `probability`, by a fraction drawn uniformly from `bounds`. Index 0 (our
/// RSP) never moves. Draws are consumed identically whatever the
/// probability, so scenes differing only in probability share a stream.
pub fn apply_price_adjustments<R: Rng + ?Sized>(
    slot: usize,
    multipliers: &[f64],
    probability: f64,
    bounds: (f64, f64),
    rng: &mut R,
) -> (Vec<f64>, Vec<AdjustmentEvent>) {
    let mut next = multipliers.to_vec();
    let mut events = Vec::new();
    for (rsp, m) in next.iter_mut().enumerate().skip(1) {
        let coin: f64 = rng.random();
        let frac: f64 = rng.random();
        if coin < probability {
            let a = bounds.0 + (bounds.1 - bounds.0) * frac;
            *m *= 1.0 + a;
            events.push(AdjustmentEvent { slot, rsp, adjustment: a });
        }
    }
    (next, events)
}

/// Generates the opportunities of one slot given the competitors' current
/// price multipliers (`multipliers[0]` is ours and unused).
pub fn generate_slot_orders<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    slot: usize,
    multipliers: &[f64],
    id_base: u64,
    rng: &mut R,
) -> Result<Vec<(Opportunity, Latent)>> {
    let count = order_count(cfg, slot)?;
    let demand = demand_intensity(cfg, slot)?;
    let hour = (slot % HOURS_PER_DAY) as f64;
    let mk = &cfg.market;
    let dist_law = Normal::new(mk.distance_log_mean, mk.distance_log_std)
        .map_err(|e| Error::Config(format!("distance law: {e}")))?;
    let supply_mean = (mk.supply_mean - mk.supply_demand_slope * (demand - 1.0)).clamp(0.05, 0.95);
    let supply_law = Beta::new(supply_mean * mk.supply_concentration, (1.0 - supply_mean) * mk.supply_concentration)
        .map_err(|e| Error::Config(format!("supply law: {e}")))?;
    let cancel = cfg.cancellation;
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        let distance = dist_law.sample(rng).exp().clamp(mk.min_distance, mk.max_distance);
        let supply: f64 = supply_law.sample(rng);
        let base_price = cfg.price_per_mile * distance;
        let log_dist = (distance / mk.reference_distance).ln();
        let competitor_quotes = (1..cfg.num_rsps)
            .map(|rsp| {
                let c = rsp - 1;
                let eps: f64 = StandardNormal.sample(rng);
                let tilt = mk.distance_elasticity[c] * log_dist
                    + mk.demand_sensitivity[c] * (demand - 1.0)
                    + mk.quote_noise * eps;
                base_price * mk.competitor_multipliers[c] * multipliers[rsp] * tilt.exp()
            })
            .collect();
        let dispatch_draw: f64 = rng.random();
        let z: f64 = StandardNormal.sample(rng);
        out.push((
            Opportunity {
                id: id_base + n as u64,
                features: [distance, supply, hour, demand],
                base_price,
                competitor_quotes,
            },
            Latent { dispatch_draw, cancel_propensity: cancel.mean + cancel.stddev * z },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::sim::config::MixtureComponent;

    fn flat_day(orders: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::scene(1).unwrap();
        cfg.orders_per_day = orders;
        cfg.order_count_mixture = vec![MixtureComponent { weight: 1.0, mean: 12.0, stddev: 1e6 }];
        cfg
    }

    #[test]
    fn flat_mixture_spreads_one_order_per_hour() {
        let cfg = flat_day(24);
        for slot in 0..48 {
            assert_eq!(order_count(&cfg, slot).unwrap(), 1);
        }
    }

    #[test]
    fn daily_volume_is_preserved_up_to_rounding() {
        let mut cfg = ScenarioConfig::scene(1).unwrap();
        cfg.orders_per_day = 40_000;
        let total: usize = (0..24).map(|s| order_count(&cfg, s).unwrap()).sum();
        assert!((total as i64 - 40_000).abs() <= 12, "total {total}");
    }

    #[test]
    fn invalid_mixture_is_a_config_error() {
        let mut cfg = flat_day(24);
        cfg.order_count_mixture[0].weight = 0.7;
        assert!(matches!(order_count(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig::scene(1).unwrap();
        let m = vec![1.0; cfg.num_rsps];
        let a = generate_slot_orders(&cfg, 9, &m, 0, &mut stream(1, Purpose::Orders, &[9])).unwrap();
        let b = generate_slot_orders(&cfg, 9, &m, 0, &mut stream(1, Purpose::Orders, &[9])).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(o, _)| o.base_price > 0.0
            && o.competitor_quotes.iter().all(|&q| q > 0.0)
            && (0.0..=1.0).contains(&o.supply())));
    }

    #[test]
    fn zero_probability_never_adjusts() {
        let mut rng = stream(2, Purpose::Prices, &[]);
        let mut m = vec![1.0, 1.0, 0.9, 1.1];
        for slot in 0..200 {
            let (next, events) = apply_price_adjustments(slot, &m, 0.0, (-0.2, 0.2), &mut rng);
            assert!(events.is_empty());
            assert_eq!(next, m);
            m = next;
        }
    }

    #[test]
    fn certain_degenerate_adjustment_scales_by_exactly_one_point_one() {
        let mut rng = stream(3, Purpose::Prices, &[]);
        let m = vec![1.0, 2.0, 3.0];
        let (next, events) = apply_price_adjustments(0, &m, 1.0, (0.1, 0.1), &mut rng);
        assert_eq!(next, vec![1.0, 2.0 * 1.1, 3.0 * 1.1]);
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(|e| e.rsp != 0));
    }

    #[test]
    fn change_frequency_matches_probability() {
        let mut rng = stream(4, Purpose::Prices, &[]);
        let mut m = vec![1.0; 5];
        let mut changes = [0usize; 5];
        for slot in 0..336 {
            let (next, events) = apply_price_adjustments(slot, &m, 0.4, (-0.05, 0.05), &mut rng);
            for e in events {
                changes[e.rsp] += 1;
            }
            m = next;
        }
        assert_eq!(changes[0], 0);
        for &c in &changes[1..] {
            assert!((c as f64 / 336.0 - 0.4).abs() < 0.05, "{changes:?}");
        }
    }
}
