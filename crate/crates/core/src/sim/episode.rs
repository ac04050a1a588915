//! Episodes: a pre-generated market over consecutive slots, stepped one slot
//! at a time with a coupon assignment.
//!
//! The market (orders, competitor quotes, hidden dispatch and cancellation
//! draws) never depends on the coupons we issue, so it is generated up front.
//! Any two strategies run on the same episode see exactly the same requests,
//! which is what makes paired counterfactuals and hindsight optima possible.

use std::io::Write;
use std::path::Path;

use super::config::{ScenarioConfig, HOURS_PER_DAY};
use super::market::{apply_price_adjustments, generate_slot_orders, AdjustmentEvent, Latent, Opportunity};
use super::post_pricing::{answer_probability, dispatch_with_draw, passenger_select, rank, rank_and_autoselect};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Pretrain,
    Train,
    /// Evaluation-style episode starting at the test period. The stream id
    /// distinguishes evaluation seeds and RL training episodes.
    Live,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::Pretrain => 1,
            Phase::Train => 2,
            Phase::Live => 3,
        }
    }
}

/// Identifies an episode's random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpisodeKey {
    pub phase: Phase,
    pub stream: u64,
}

#[derive(Debug, Clone)]
pub struct SlotMarket {
    /// Global slot index (hour of day is `slot % 24`).
    pub slot: usize,
    pub opportunities: Vec<Opportunity>,
    latents: Vec<Latent>,
    /// Price multiplier of every RSP during this slot.
    pub multipliers: Vec<f64>,
    pub events: Vec<AdjustmentEvent>,
}

impl SlotMarket {
    pub fn hour(&self) -> usize {
        self.slot % HOURS_PER_DAY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderRecord {
    pub coupon: usize,
    pub in_range: bool,
    pub sent: bool,
    pub completed: bool,
    pub cost: f64,
    pub gmv: f64,
}

/// Per-(cluster, coupon) in-range tallies of one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTallies {
    pub n_in: Vec<Vec<u64>>,
    pub n: Vec<Vec<u64>>,
}

impl SlotTallies {
    pub fn zeros(clusters: usize, coupons: usize) -> Self {
        Self { n_in: vec![vec![0; coupons]; clusters], n: vec![vec![0; coupons]; clusters] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub slot: usize,
    pub records: Vec<OrderRecord>,
    pub in_range: usize,
    pub sent: usize,
    pub completions: usize,
    pub total_cost: f64,
    pub total_gmv: f64,
}

impl SlotOutcome {
    pub fn orders(&self) -> usize {
        self.records.len()
    }

    pub fn in_range_rate(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.in_range as f64 / self.records.len() as f64
        }
    }

    /// In-range tallies keyed by each order's cluster and coupon.
    pub fn tallies(&self, clusters: &[usize], num_clusters: usize, num_coupons: usize) -> Result<SlotTallies> {
        if clusters.len() != self.records.len() {
            return Err(Error::Argument(format!(
                "{} cluster labels for {} orders",
                clusters.len(),
                self.records.len()
            )));
        }
        let mut t = SlotTallies::zeros(num_clusters, num_coupons);
        for (r, &c) in self.records.iter().zip(clusters) {
            if c >= num_clusters || r.coupon >= num_coupons {
                return Err(Error::Argument(format!("cluster {c} or coupon {} out of range", r.coupon)));
            }
            t.n[c][r.coupon] += 1;
            t.n_in[c][r.coupon] += u64::from(r.in_range);
        }
        Ok(t)
    }
}

/// One row of an episode trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub slot: usize,
    pub orders: usize,
    pub in_range_rate: f64,
    pub completions: usize,
    pub cost: f64,
    pub gmv: f64,
}

/// Resolved outcome of a single order under one coupon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderResolution {
    pub in_range: bool,
    pub sent: bool,
    pub answered_by_us: bool,
    pub completed: bool,
}

#[derive(Debug, Clone)]
pub struct Episode {
    config: ScenarioConfig,
    key: EpisodeKey,
    start_slot: usize,
    slots: Vec<SlotMarket>,
    cursor: usize,
    trace: Vec<TraceRow>,
}

impl Episode {
    /// Builds an episode of `num_slots` slots. Pretrain and train phases use
    /// the history change probability, live episodes the scene's.
    pub fn new(config: &ScenarioConfig, key: EpisodeKey, num_slots: usize) -> Result<Self> {
        config.validate()?;
        let (start_slot, probability) = match key.phase {
            Phase::Pretrain => (0, config.history_change_probability),
            Phase::Train => (config.slots_pretrain, config.history_change_probability),
            Phase::Live => (config.test_start_slot(), config.change_probability),
        };
        let mut multipliers = vec![1.0; config.num_rsps];
        let mut slots = Vec::with_capacity(num_slots);
        let mut next_id = 0u64;
        for t in 0..num_slots {
            let slot = start_slot + t;
            let parts = [key.phase.tag(), key.stream, t as u64];
            let (m, events) = if t == 0 {
                (multipliers.clone(), Vec::new())
            } else {
                let mut rng = stream(config.seed, Purpose::Prices, &parts);
                apply_price_adjustments(slot, &multipliers, probability, config.adjustment_bounds, &mut rng)
            };
            multipliers = m;
            let mut rng = stream(config.seed, Purpose::Orders, &parts);
            let generated = generate_slot_orders(config, slot, &multipliers, next_id, &mut rng)?;
            next_id += generated.len() as u64;
            let (opportunities, latents) = generated.into_iter().unzip();
            slots.push(SlotMarket { slot, opportunities, latents, multipliers: multipliers.clone(), events });
        }
        Ok(Self { config: config.clone(), key, start_slot, slots, cursor: 0, trace: Vec::new() })
    }

    /// Evaluation episode for a seed, covering the configured test slots.
    pub fn test(config: &ScenarioConfig, seed: u64) -> Result<Self> {
        Self::new(config, EpisodeKey { phase: Phase::Live, stream: seed }, config.slots_test)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn key(&self) -> EpisodeKey {
        self.key
    }

    pub fn start_slot(&self) -> usize {
        self.start_slot
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, t: usize) -> &SlotMarket {
        &self.slots[t]
    }

    pub fn slots(&self) -> &[SlotMarket] {
        &self.slots
    }

    /// Index of the next slot to be stepped.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.slots.len()
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Rewinds to the first slot and clears the trace; the market is unchanged.
    pub fn reset(&mut self) {
        self.cursor = 0;
        self.trace.clear();
    }

    /// Resolves one order under coupon `d` using its hidden draws.
    pub fn resolve(&self, opp: &Opportunity, latent: &Latent, coupon: f64) -> Result<OrderResolution> {
        let cfg = &self.config;
        let quotes = opp.quotes_with_coupon(coupon);
        let k = cfg.topk_for_hour(opp.features[2] as usize);
        let flags = rank_and_autoselect(&quotes, k)?;
        let k_sel = passenger_select(&quotes, k, cfg.passenger_select_base, cfg.num_rsps);
        let mut selected: Vec<usize> = rank(&quotes).into_iter().take(k_sel).collect();
        selected.sort_unstable();
        let sent = selected.contains(&0);
        let answer = dispatch_with_draw(&selected, opp.supply(), &cfg.service_capabilities, latent.dispatch_draw);
        let answered_by_us = answer == Some(0);
        let cancelled = latent.cancel_propensity > cfg.cancellation.threshold;
        Ok(OrderResolution { in_range: flags[0], sent, answered_by_us, completed: answered_by_us && !cancelled })
    }

    /// Steps slot `t` (must equal the cursor) with one coupon index per order.
    pub fn step(&mut self, t: usize, assignment: &[usize]) -> Result<SlotOutcome> {
        if t != self.cursor {
            return Err(Error::Argument(format!("slot {t} stepped out of order, expected {}", self.cursor)));
        }
        let outcome = self.evaluate(t, assignment)?;
        self.trace.push(TraceRow {
            slot: outcome.slot,
            orders: outcome.orders(),
            in_range_rate: outcome.in_range_rate(),
            completions: outcome.completions,
            cost: outcome.total_cost,
            gmv: outcome.total_gmv,
        });
        self.cursor += 1;
        Ok(outcome)
    }

    /// Outcome of slot `t` under `assignment` without advancing the episode.
    pub fn evaluate(&self, t: usize, assignment: &[usize]) -> Result<SlotOutcome> {
        let market = self
            .slots
            .get(t)
            .ok_or_else(|| Error::Argument(format!("slot {t} beyond episode of {}", self.slots.len())))?;
        if assignment.len() != market.opportunities.len() {
            return Err(Error::Argument(format!(
                "assignment covers {} of {} opportunities",
                assignment.len(),
                market.opportunities.len()
            )));
        }
        let coupons = &self.config.coupons;
        let mut out = SlotOutcome {
            slot: market.slot,
            records: Vec::with_capacity(assignment.len()),
            in_range: 0,
            sent: 0,
            completions: 0,
            total_cost: 0.0,
            total_gmv: 0.0,
        };
        for ((opp, latent), &j) in market.opportunities.iter().zip(&market.latents).zip(assignment) {
            let d = *coupons.get(j).ok_or_else(|| Error::Argument(format!("coupon index {j} out of range")))?;
            let r = self.resolve(opp, latent, d)?;
            let (cost, gmv) = if r.completed { (opp.base_price * d, opp.base_price) } else { (0.0, 0.0) };
            out.in_range += usize::from(r.in_range);
            out.sent += usize::from(r.sent);
            out.completions += usize::from(r.completed);
            out.total_cost += cost;
            out.total_gmv += gmv;
            out.records.push(OrderRecord {
                coupon: j,
                in_range: r.in_range,
                sent: r.sent,
                completed: r.completed,
                cost,
                gmv,
            });
        }
        Ok(out)
    }

    /// Ground-truth completion probability of every order of slot `t` under
    /// every coupon: the market is known, only dispatch and cancellation are
    /// integrated out.
    pub fn true_completion(&self, t: usize) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        let keep = 1.0 - cfg.cancel_probability();
        self.slots[t]
            .opportunities
            .iter()
            .map(|opp| {
                cfg.coupons
                    .iter()
                    .map(|&d| {
                        let quotes = opp.quotes_with_coupon(d);
                        let k = cfg.topk_for_hour(opp.features[2] as usize);
                        let k_sel = passenger_select(&quotes, k, cfg.passenger_select_base, cfg.num_rsps);
                        let mut selected: Vec<usize> = rank(&quotes).into_iter().take(k_sel).collect();
                        selected.sort_unstable();
                        answer_probability(0, &selected, opp.supply(), &cfg.service_capabilities) * keep
                    })
                    .collect()
            })
            .collect()
    }

    /// Ground-truth in-range indicator of every order under every coupon.
    pub fn true_in_range(&self, t: usize) -> Vec<Vec<bool>> {
        let cfg = &self.config;
        self.slots[t]
            .opportunities
            .iter()
            .map(|opp| {
                cfg.coupons
                    .iter()
                    .map(|&d| {
                        let quotes = opp.quotes_with_coupon(d);
                        let k = cfg.topk_for_hour(opp.features[2] as usize);
                        rank(&quotes).into_iter().take(k).any(|i| i == 0)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_trace(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["slot", "orders", "in_range_rate", "completions", "cost", "gmv"])?;
        for r in &self.trace {
            wr.write_record([
                r.slot.to_string(),
                r.orders.to_string(),
                format!("{:.6}", r.in_range_rate),
                r.completions.to_string(),
                format!("{:.6}", r.cost),
                format!("{:.6}", r.gmv),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Logged outcome of one order under a randomly assigned coupon, used to
/// train the backbone models.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: super::market::Features,
    pub base_price: f64,
    pub coupon: usize,
    pub in_range: bool,
    pub completed: bool,
    pub slot: usize,
}

/// Runs a whole episode with coupons drawn uniformly at random and returns
/// the logged samples.
pub fn collect_randomized(episode: &mut Episode) -> Result<Vec<LabeledSample>> {
    use rand::Rng;
    episode.reset();
    let h = episode.config().num_coupons();
    let mut out = Vec::new();
    for t in 0..episode.len() {
        let mut rng = stream(
            episode.config().seed,
            Purpose::Assignment,
            &[episode.key().phase.tag(), episode.key().stream, t as u64],
        );
        let assignment: Vec<usize> = (0..episode.slot(t).opportunities.len()).map(|_| rng.random_range(0..h)).collect();
        let outcome = episode.step(t, &assignment)?;
        let market = episode.slot(t);
        for (opp, rec) in market.opportunities.iter().zip(&outcome.records) {
            out.push(LabeledSample {
                features: opp.features,
                base_price: opp.base_price,
                coupon: rec.coupon,
                in_range: rec.in_range,
                completed: rec.completed,
                slot: market.slot,
            });
        }
    }
    Ok(out)
}
