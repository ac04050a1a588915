use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Hour of day at which the component peaks.
    pub mean: f64,
    /// Spread in hours; values far above 24 flatten the component.
    pub stddev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cancellation {
    pub mean: f64,
    pub stddev: f64,
    /// An order is cancelled when its propensity draw exceeds this cut.
    #[serde(default = "default_cancel_threshold")]
    pub threshold: f64,
}

fn default_cancel_threshold() -> f64 {
    0.5
}

/// Knobs of the order and competitor-quote generators.
///
/// Competitor vectors are indexed by competitor (RSP 1..M), i.e. they have
/// length `M - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    /// Starting price multiplier of each competitor relative to our base price.
    pub competitor_multipliers: Vec<f64>,
    /// Log-price sensitivity of each competitor to trip length.
    pub distance_elasticity: Vec<f64>,
    /// Log-price sensitivity of each competitor to the hour's demand intensity.
    pub demand_sensitivity: Vec<f64>,
    /// Per-order log-normal noise on every competitor quote.
    pub quote_noise: f64,
    pub distance_log_mean: f64,
    pub distance_log_std: f64,
    pub min_distance: f64,
    pub max_distance: f64,
    /// Trip length at which the distance elasticity is neutral.
    pub reference_distance: f64,
    /// Mean supply factor at average demand.
    pub supply_mean: f64,
    /// How much mean supply drops per unit of excess demand intensity.
    pub supply_demand_slope: f64,
    /// Concentration of the Beta law of the supply factor.
    pub supply_concentration: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            competitor_multipliers: vec![0.98, 1.0, 1.03, 1.06],
            distance_elasticity: vec![0.12, -0.10, 0.06, -0.05],
            demand_sensitivity: vec![-0.08, 0.10, 0.05, -0.06],
            quote_noise: 0.06,
            distance_log_mean: 5.0_f64.ln(),
            distance_log_std: 0.55,
            min_distance: 0.5,
            max_distance: 40.0,
            reference_distance: 5.0,
            supply_mean: 0.6,
            supply_demand_slope: 0.25,
            supply_concentration: 2.0,
        }
    }
}

/// One marketplace scene: simulator parameters plus the campaign it runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// `M`, including our RSP at index 0.
    pub num_rsps: usize,
    /// Per-slot probability that a competitor adjusts its price during
    /// evaluation episodes.
    pub change_probability: f64,
    /// Change probability used for the shared pretrain and train history.
    #[serde(default)]
    pub history_change_probability: f64,
    /// Fractional price change bounds `(lower, upper)`.
    pub adjustment_bounds: (f64, f64),
    pub price_per_mile: f64,
    /// Default number of auto-selected RSPs `K`.
    pub topk_base: usize,
    /// Optional per-hour override of `K` (24 entries).
    #[serde(default)]
    pub topk_by_hour: Option<Vec<usize>>,
    /// Base `b` of the passenger selection rule.
    pub passenger_select_base: f64,
    /// Service capability `tp_i` of every RSP.
    pub service_capabilities: Vec<f64>,
    pub cancellation: Cancellation,
    pub slots_pretrain: usize,
    pub slots_train: usize,
    pub slots_test: usize,
    /// Orders spread over one 24-slot day.
    #[serde(alias = "orders_per_slot")]
    pub orders_per_day: usize,
    pub order_count_mixture: Vec<MixtureComponent>,
    pub seed: u64,
    #[serde(default)]
    pub market: MarketConfig,
    /// Coupon levels `d`, starting at 0 and strictly increasing.
    #[serde(default = "default_coupons")]
    pub coupons: Vec<f64>,
    /// Target ratio of coupon spend to GMV.
    #[serde(default = "default_budget_rate")]
    pub budget_rate: f64,
}

pub fn default_coupons() -> Vec<f64> {
    vec![0.0, 0.05, 0.10, 0.15, 0.20]
}

fn default_budget_rate() -> f64 {
    0.05
}

pub const HOURS_PER_DAY: usize = 24;

impl ScenarioConfig {
    /// Desk-scale scene `n` in 1..=4. Scenes differ only in how often
    /// competitors change their prices.
    pub fn scene(n: usize) -> Result<Self> {
        let change_probability = match n {
            1 => 0.1,
            2 => 0.2,
            3 => 0.4,
            4 => 0.02,
            _ => return Err(Error::Config(format!("unknown scene {n}, expected 1..=4"))),
        };
        Ok(Self {
            name: format!("scene{n}"),
            num_rsps: 5,
            change_probability,
            history_change_probability: 0.0,
            adjustment_bounds: (-0.08, 0.08),
            price_per_mile: 2.0,
            topk_base: 2,
            topk_by_hour: None,
            passenger_select_base: 1.3,
            service_capabilities: vec![1.0, 1.1, 0.9, 1.2, 0.8],
            cancellation: Cancellation { mean: 0.2, stddev: 0.25, threshold: 0.5 },
            slots_pretrain: 168,
            slots_train: 720,
            slots_test: 48,
            orders_per_day: 2000,
            order_count_mixture: vec![
                MixtureComponent { weight: 0.25, mean: 8.5, stddev: 1.5 },
                MixtureComponent { weight: 0.35, mean: 18.0, stddev: 2.0 },
                MixtureComponent { weight: 0.40, mean: 13.0, stddev: 6.0 },
            ],
            seed: 20_240_601,
            market: MarketConfig::default(),
            coupons: default_coupons(),
            budget_rate: default_budget_rate(),
        })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn num_coupons(&self) -> usize {
        self.coupons.len()
    }

    /// First global slot of the evaluation period.
    pub fn test_start_slot(&self) -> usize {
        self.slots_pretrain + self.slots_train
    }

    pub fn topk_for_hour(&self, hour: usize) -> usize {
        self.topk_by_hour.as_ref().and_then(|t| t.get(hour % HOURS_PER_DAY).copied()).unwrap_or(self.topk_base)
    }

    pub fn cancel_probability(&self) -> f64 {
        let c = self.cancellation;
        if c.stddev <= 0.0 {
            return if c.mean > c.threshold { 1.0 } else { 0.0 };
        }
        let z = (c.threshold - c.mean) / c.stddev;
        0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_rsps;
        let fail = |msg: String| Err(Error::Config(msg));
        if m < 2 {
            return fail(format!("need at least two RSPs, got {m}"));
        }
        if !(0.0..=1.0).contains(&self.change_probability) || !(0.0..=1.0).contains(&self.history_change_probability) {
            return fail("change probabilities must lie in [0, 1]".into());
        }
        let (lo, hi) = self.adjustment_bounds;
        if !(lo <= hi) || lo <= -1.0 {
            return fail(format!("adjustment bounds ({lo}, {hi}) must satisfy -1 < lower <= upper"));
        }
        if !(self.price_per_mile > 0.0) {
            return fail("price_per_mile must be positive".into());
        }
        if self.topk_base == 0 || self.topk_base > m {
            return fail(format!("topk_base {} outside 1..={m}", self.topk_base));
        }
        if let Some(table) = &self.topk_by_hour {
            if table.len() != HOURS_PER_DAY || table.iter().any(|&k| k == 0 || k > m) {
                return fail("topk_by_hour needs 24 entries in 1..=M".into());
            }
        }
        if !(self.passenger_select_base > 1.0) {
            return fail("passenger_select_base must exceed 1".into());
        }
        if self.service_capabilities.len() != m
            || self.service_capabilities.iter().any(|&t| !(t >= 0.0))
            || self.service_capabilities.iter().sum::<f64>() <= 0.0
        {
            return fail("service_capabilities: M nonnegative values with a positive sum".into());
        }
        if !(self.cancellation.stddev >= 0.0) {
            return fail("cancellation stddev must be nonnegative".into());
        }
        if self.order_count_mixture.is_empty() {
            return fail("order_count_mixture is empty".into());
        }
        let wsum: f64 = self.order_count_mixture.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-9 || self.order_count_mixture.iter().any(|c| c.weight < 0.0) {
            return fail(format!("mixture weights must be nonnegative and sum to 1, got {wsum}"));
        }
        if self.order_count_mixture.iter().any(|c| !(c.stddev > 0.0) || !c.mean.is_finite()) {
            return fail("mixture components need finite means and positive stddevs".into());
        }
        let competitors = m - 1;
        let mk = &self.market;
        if mk.competitor_multipliers.len() != competitors
            || mk.distance_elasticity.len() != competitors
            || mk.demand_sensitivity.len() != competitors
        {
            return fail(format!("market vectors must have one entry per competitor ({competitors})"));
        }
        if mk.competitor_multipliers.iter().any(|&x| !(x > 0.0)) {
            return fail("competitor multipliers must be positive".into());
        }
        if !(mk.min_distance > 0.0 && mk.min_distance < mk.max_distance) || !(mk.reference_distance > 0.0) {
            return fail("distance bounds must satisfy 0 < min < max".into());
        }
        if !(mk.supply_concentration > 0.0) || !(mk.quote_noise >= 0.0) {
            return fail("supply concentration must be positive and quote noise nonnegative".into());
        }
        if self.coupons.len() < 2
            || self.coupons[0] != 0.0
            || self.coupons.windows(2).any(|w| !(w[0] < w[1]))
            || self.coupons.iter().any(|&d| !(0.0..=1.0).contains(&d))
        {
            return fail("coupons must start at 0, be strictly increasing in [0, 1], and have >= 2 levels".into());
        }
        if !(self.budget_rate > 0.0 && self.budget_rate < 1.0) {
            return fail("budget_rate must lie in (0, 1)".into());
        }
        Ok(())
    }
}
