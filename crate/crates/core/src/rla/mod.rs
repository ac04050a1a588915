//! Reinforced multiplier adjustment: the λ update rule, the episode ledger
//! with its cost-rate and full-achievement signals, the Gaussian actor and
//! critic, and the rollout/training loop.

mod backbone;
mod nets;
mod rollout;

pub use backbone::{solve_static_lambda, Backbone, BackboneConfig, SlotEstimates, StaticLambdas};
pub use nets::{
    critic_loss_and_grad, gaussian_log_prob, ppo_loss_and_grad, CriticNetwork, PolicyNetwork, PpoBatch, PpoConfig,
};
pub use rollout::{
    rollout_episode, train_rl, training_stream, write_curve_csv, zero_coupon_totals, EpisodeInputs, RlSetup, Rollout,
    RolloutMode, RolloutOptions, SlotRecord, TrainCurveRow, TrainOptions, TrainedAgent, Transition, TRAIN_STREAM_FLAG,
};

use crate::error::{Error, Result};

/// Current multiplier with its bounds and last change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaState {
    pub lambda: f64,
    pub lb: f64,
    pub ub: f64,
    pub delta_prev: f64,
}

impl LambdaState {
    pub fn new(lambda: f64, lb: f64, ub: f64) -> Result<Self> {
        if !(lb >= 0.0) || !(lb < ub) || !ub.is_finite() {
            return Err(Error::Argument(format!("need 0 <= lb < ub, got [{lb}, {ub}]")));
        }
        Ok(Self { lambda: lambda.clamp(lb, ub), lb, ub, delta_prev: 0.0 })
    }

    /// Multiplicative step `clip(λ η a)` damped by the previous change:
    /// `λ + (λ° - λ) / (1 + |δλ|)`, clipped again.
    pub fn apply_action(&mut self, action: f64, eta: f64) -> f64 {
        let prev = self.lambda;
        let raw = (prev * eta * action).clamp(self.lb, self.ub);
        let raw = if raw.is_nan() { prev } else { raw };
        let next = (prev + (raw - prev) / (1.0 + self.delta_prev.abs())).clamp(self.lb, self.ub);
        self.delta_prev = next - prev;
        self.lambda = next;
        next
    }
}

/// `Σ z` over the chosen coupons.
pub fn compute_reward(z: &[Vec<f64>], assignment: &[usize]) -> f64 {
    z.iter().zip(assignment).map(|(row, &j)| row[j]).sum()
}

/// `Σ z g d` over the chosen coupons.
pub fn compute_penalty(z: &[Vec<f64>], g: &[f64], coupons: &[f64], assignment: &[usize]) -> f64 {
    z.iter().zip(g).zip(assignment).map(|((row, &g), &j)| row[j] * g * coupons[j]).sum()
}

/// `Σ z g` over the chosen coupons.
pub fn compute_gmv(z: &[Vec<f64>], g: &[f64], assignment: &[usize]) -> f64 {
    z.iter().zip(g).zip(assignment).map(|((row, &g), &j)| row[j] * g).sum()
}

/// Denominator of the running cost rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum CrDenominator {
    /// Spend over GMV, the same ratio the budget constrains.
    #[default]
    Gmv,
    /// Spend over completions, taken literally.
    Completions,
}

/// One slot's observed and forecast quantities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LedgerEntry {
    pub r_obs: f64,
    pub p_obs: f64,
    pub gmv_obs: f64,
    /// Expected values of the slot's assignment.
    pub r: f64,
    pub p: f64,
    pub gmv: f64,
}

/// Per-slot campaign record with the normalizers used by the signals.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLedger {
    pub entries: Vec<LedgerEntry>,
    pub r_star: f64,
    pub cr_star: f64,
    pub denominator: CrDenominator,
}

impl EpisodeLedger {
    pub fn new(r_star: f64, cr_star: f64) -> Result<Self> {
        if !(r_star > 0.0) || !(cr_star > 0.0) {
            return Err(Error::Argument(format!("R* and CR* must be positive, got {r_star} and {cr_star}")));
        }
        Ok(Self { entries: Vec::new(), r_star, cr_star, denominator: CrDenominator::Gmv })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Observed prefix `s < t` plus forecast suffix `s >= t`.
    pub fn compute_cr(&self, t: usize) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (s, e) in self.entries.iter().enumerate() {
            let (p, r, g) = if s < t { (e.p_obs, e.r_obs, e.gmv_obs) } else { (e.p, e.r, e.gmv) };
            num += p;
            den += match self.denominator {
                CrDenominator::Gmv => g,
                CrDenominator::Completions => r,
            };
        }
        if !(den > 0.0) {
            return Err(Error::UndefinedMetric("cost rate with zero denominator".into()));
        }
        Ok(num / den)
    }

    /// Completions with the same prefix/suffix split.
    pub fn completions(&self, t: usize) -> f64 {
        self.entries.iter().enumerate().map(|(s, e)| if s < t { e.r_obs } else { e.r }).sum()
    }

    /// Full-achievement signal at slot `t`.
    pub fn full_achievement_at(&self, t: usize) -> Result<f64> {
        let cr = self.compute_cr(t)?;
        Ok(full_achievement(self.completions(t), self.r_star, cr, self.cr_star))
    }
}

/// `e^{max(CR/CR* - 1, 0)} - 1`.
pub fn constraint_penalty(cr: f64, cr_star: f64) -> f64 {
    (cr / cr_star - 1.0).max(0.0).exp() - 1.0
}

/// Normalized completions minus the over-budget penalty.
pub fn full_achievement(completions: f64, r_star: f64, cr: f64, cr_star: f64) -> f64 {
    completions / r_star - constraint_penalty(cr, cr_star)
}

/// Running statistics the state is built from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CampaignStatus {
    pub completions: f64,
    pub cost: f64,
    pub gmv: f64,
    /// Predicted completions had no coupon been issued.
    pub baseline_completions: f64,
}

/// Normalizers for the state entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateScales {
    pub horizon: usize,
    pub lambda0: f64,
    pub cr_star: f64,
    pub r_star: f64,
    pub ref_gmv: f64,
}

/// Number of state entries ahead of the per-coupon summary.
pub const STATE_HEAD: usize = 7;

pub fn state_dim(num_coupons: usize) -> usize {
    STATE_HEAD + 2 * num_coupons
}

/// Builds the observation at slot `t`: time, previous multiplier, campaign
/// status and the per-coupon in-range summary. `summary` is `None` when no
/// tracker runs, which zeroes those entries.
pub fn build_state(
    t: usize,
    lambda_prev: f64,
    status: &CampaignStatus,
    summary: Option<&[(f64, f64)]>,
    num_coupons: usize,
    scales: &StateScales,
) -> Vec<f64> {
    let mut s = Vec::with_capacity(state_dim(num_coupons));
    let frac = t as f64 / scales.horizon as f64;
    let cr = if status.gmv > 0.0 { status.cost / status.gmv } else { scales.cr_star };
    s.push(frac);
    s.push(lambda_prev / scales.lambda0);
    s.push(cr / scales.cr_star);
    s.push((scales.cr_star - cr) / scales.cr_star * (status.gmv / scales.ref_gmv).min(1.0).sqrt());
    s.push(status.gmv / scales.ref_gmv);
    let froi = if status.cost > 0.0 && status.completions > 0.0 {
        let asp = status.gmv / status.completions;
        (status.completions - status.baseline_completions) * asp / status.cost
    } else {
        0.0
    };
    s.push(froi.clamp(-10.0, 10.0) / 10.0);
    let pace = if t > 0 { status.completions / (scales.r_star * frac) - 1.0 } else { 0.0 };
    s.push(pace.clamp(-2.0, 2.0));
    match summary {
        Some(sum) => {
            for &(a, b) in sum {
                s.push(a / (a + b));
                s.push((a + b).ln() / 10.0);
            }
        }
        None => s.extend(std::iter::repeat_n(0.0, 2 * num_coupons)),
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(lambda: f64, delta: f64) -> LambdaState {
        LambdaState { lambda, lb: 0.0, ub: 10.0, delta_prev: delta }
    }

    #[test]
    fn identity_action_keeps_lambda() {
        let mut s = state(2.5, 0.0);
        assert_eq!(s.apply_action(1.0, 1.0), 2.5);
        assert_eq!(s.delta_prev, 0.0);
    }

    #[test]
    fn damping_halves_the_step() {
        let mut s = state(1.0, 1.0);
        assert_eq!(s.apply_action(2.0, 1.0), 1.5);
        assert_eq!(s.delta_prev, 0.5);
    }

    #[test]
    fn huge_actions_are_clipped() {
        let mut s = state(1.0, 0.0);
        assert_eq!(s.apply_action(1e6, 1.0), 10.0);
        let mut s = state(1.0, 0.0);
        assert_eq!(s.apply_action(-5.0, 1.0), 0.0);
    }

    #[test]
    fn any_action_sequence_stays_in_bounds() {
        use rand::Rng;
        let mut rng = crate::rng::stream(1, crate::rng::Purpose::Synthetic, &[]);
        let mut s = LambdaState::new(0.3, 0.1, 4.0).unwrap();
        for _ in 0..10_000 {
            let a = rng.random_range(-100.0..100.0);
            let l = s.apply_action(a, rng.random_range(0.1..3.0));
            assert!((0.1..=4.0).contains(&l));
        }
    }

    #[test]
    fn reward_and_penalty_examples() {
        assert_eq!(compute_reward(&[vec![0.0, 0.0]], &[1]), 0.0);
        assert_eq!(compute_reward(&[vec![0.3, 0.9], vec![0.1, 0.7]], &[0, 1]), 1.0);
        let coupons = [0.0, 0.2];
        assert_eq!(compute_penalty(&[vec![0.5, 0.9]], &[10.0], &coupons, &[0]), 0.0);
        assert_eq!(compute_penalty(&[vec![0.9, 0.5]], &[10.0], &coupons, &[1]), 1.0);
    }

    fn ledger(entries: Vec<LedgerEntry>) -> EpisodeLedger {
        let mut l = EpisodeLedger::new(10.0, 0.05).unwrap();
        l.entries = entries;
        l
    }

    #[test]
    fn cost_rate_examples() {
        let e = LedgerEntry { r_obs: 3.0, p_obs: 0.0, gmv_obs: 30.0, r: 3.0, p: 0.0, gmv: 30.0 };
        assert_eq!(ledger(vec![e; 4]).compute_cr(2).unwrap(), 0.0);
        let e = LedgerEntry { r_obs: 2.0, p_obs: 1.0, gmv_obs: 20.0, r: 2.0, p: 1.0, gmv: 20.0 };
        let l = ledger(vec![e; 5]);
        for t in 0..=5 {
            assert!((l.compute_cr(t).unwrap() - 0.05).abs() < 1e-15);
        }
        let e = LedgerEntry { r_obs: 2.0, p_obs: 3.0, gmv_obs: 40.0, r: 9.0, p: 9.0, gmv: 9.0 };
        let l = ledger(vec![e; 3]);
        assert_eq!(l.compute_cr(3).unwrap(), 9.0 / 120.0);
        let mut literal = l.clone();
        literal.denominator = CrDenominator::Completions;
        assert_eq!(literal.compute_cr(3).unwrap(), 9.0 / 6.0);
        assert!(matches!(ledger(vec![]).compute_cr(0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn full_achievement_examples() {
        assert_eq!(full_achievement(10.0, 10.0, 0.05, 0.05), 1.0);
        assert_eq!(constraint_penalty(0.01, 0.05), 0.0);
        assert!((full_achievement(10.0, 10.0, 0.1, 0.05) - (2.0 - std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn full_achievement_decreases_in_cost_rate() {
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let f = full_achievement(7.0, 10.0, k as f64 * 0.001, 0.05);
            assert!(f <= prev);
            prev = f;
        }
    }

    #[test]
    fn state_has_fixed_dimension_and_is_finite() {
        let scales = StateScales { horizon: 48, lambda0: 0.5, cr_star: 0.05, r_star: 100.0, ref_gmv: 2000.0 };
        let st = CampaignStatus::default();
        let s0 = build_state(0, 0.5, &st, None, 5, &scales);
        assert_eq!(s0.len(), state_dim(5));
        assert_eq!(s0[0], 0.0);
        let st = CampaignStatus { completions: 30.0, cost: 20.0, gmv: 500.0, baseline_completions: 25.0 };
        let sum = vec![(3.0, 4.0); 5];
        let s = build_state(12, 0.6, &st, Some(&sum), 5, &scales);
        assert_eq!(s.len(), state_dim(5));
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((0.0..=1.0).contains(&s[0]));
    }
}
