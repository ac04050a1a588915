use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backbone::{solve_static_lambda, Backbone, BackboneConfig, SlotEstimates, StaticLambdas};
use super::nets::{critic_loss_and_grad, ppo_loss_and_grad, CriticNetwork, PolicyNetwork, PpoBatch, PpoConfig};
use super::{
    build_state, compute_gmv, compute_penalty, compute_reward, state_dim, CampaignStatus, CrDenominator, EpisodeLedger,
    LambdaState, LedgerEntry, StateScales,
};
use crate::bench::metrics::{froi_against, metric_cre, metric_rlr, EpisodeTotals};
use crate::dual::optimal_coupon_row;
use crate::error::{Error, Result};
use crate::estimators::shuffled_batches;
use crate::fca::{sample_w, BetaTracker, SnapshotRow};
use crate::nn::Adam;
use crate::rng::{mix, stream, Purpose};
use crate::sim::{Episode, EpisodeKey, Phase, ScenarioConfig};

/// High bit set on RL training streams keeps them apart from evaluation seeds.
pub const TRAIN_STREAM_FLAG: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum RolloutMode {
    /// Thompson draws from the tracked in-range posterior.
    #[default]
    Fca,
    /// Perceptron mean for the in-range rate, no tracker in the state.
    NoFca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutOptions {
    pub mode: RolloutMode,
    pub window: usize,
    /// Mean action instead of a policy sample.
    pub deterministic: bool,
    /// Re-simulate the remaining slots for every forecast suffix.
    pub nested: bool,
    pub cr_denominator: CrDenominator,
    pub seed: u64,
    pub record_snapshots: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            mode: RolloutMode::Fca,
            window: crate::fca::DEFAULT_WINDOW,
            deterministic: true,
            nested: false,
            cr_denominator: CrDenominator::Gmv,
            seed: 0,
            record_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: f64,
    pub log_prob: f64,
    /// Full-achievement signal of the slot.
    pub signal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub orders: usize,
    /// Observed in-range rate.
    pub irr: f64,
    pub lambda: f64,
    pub action: f64,
    /// Cumulative observed spend over GMV.
    pub cost_rate: f64,
    pub completions: usize,
    pub cost: f64,
    pub gmv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub records: Vec<SlotRecord>,
    pub ledger: EpisodeLedger,
    pub status: CampaignStatus,
    pub snapshots: Vec<SnapshotRow>,
}

impl Rollout {
    pub fn totals(&self) -> EpisodeTotals {
        EpisodeTotals { completions: self.status.completions, cost: self.status.cost, gmv: self.status.gmv }
    }
}

/// Model outputs and ground-truth completion tables of every slot.
#[derive(Debug, Clone)]
pub struct EpisodeInputs {
    pub estimates: Vec<SlotEstimates>,
    pub truth: Vec<Vec<Vec<f64>>>,
}

impl EpisodeInputs {
    pub fn new(backbone: &Backbone, ep: &Episode) -> Result<Self> {
        let estimates = (0..ep.len()).map(|t| backbone.estimates(ep.slot(t))).collect::<Result<Vec<_>>>()?;
        let truth = (0..ep.len()).map(|t| ep.true_completion(t)).collect();
        Ok(Self { estimates, truth })
    }

    /// Static multiplier solved in hindsight on the episode's ground truth,
    /// with the expected totals of its assignment.
    pub fn hindsight_optimum(&self, config: &ScenarioConfig) -> Result<(f64, crate::dual::AssignmentTotals)> {
        let g: Vec<f64> = self.estimates.iter().flat_map(|e| e.base_prices.iter().copied()).collect();
        solve_static_lambda(self.truth.concat(), g, &config.coupons, config.budget_rate, None)
    }
}

/// Everything a rollout needs besides the policy: trained models, static
/// multipliers and the learner's settings.
#[derive(Debug, Clone)]
pub struct RlSetup {
    pub config: ScenarioConfig,
    pub backbone: Backbone,
    pub statics: StaticLambdas,
    pub ppo: PpoConfig,
}

impl RlSetup {
    pub fn prepare(config: &ScenarioConfig, bc: &BackboneConfig, ppo: PpoConfig) -> Result<Self> {
        ppo.validate()?;
        let backbone = Backbone::train(config, bc)?;
        let statics = StaticLambdas::solve(config, &backbone)?;
        Ok(Self { config: config.clone(), backbone, statics, ppo })
    }

    pub fn lambda0(&self) -> f64 {
        self.statics.decomposed_beta
    }

    pub fn lambda_bounds(&self) -> (f64, f64) {
        (0.0, (self.ppo.ub_factor * self.lambda0()).max(self.statics.dual_ub))
    }

    pub fn scales(&self, horizon: usize) -> StateScales {
        StateScales {
            horizon,
            lambda0: self.lambda0().max(1e-9),
            cr_star: self.config.budget_rate,
            r_star: self.statics.r_star * horizon as f64 / self.config.slots_test as f64,
            ref_gmv: self.statics.ref_gmv * horizon as f64 / self.config.slots_test as f64,
        }
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.config.num_coupons())
    }
}

#[derive(Debug, Clone)]
struct RunState {
    lambda: LambdaState,
    tracker: Option<BetaTracker>,
    status: CampaignStatus,
}

struct SlotStep {
    state: Vec<f64>,
    action: f64,
    log_prob: f64,
    record: SlotRecord,
    entry: LedgerEntry,
}

struct Runner<'a> {
    setup: &'a RlSetup,
    policy: &'a PolicyNetwork,
    ep: &'a Episode,
    inputs: &'a EpisodeInputs,
    opts: &'a RolloutOptions,
    scales: StateScales,
}

impl Runner<'_> {
    fn slot(&self, t: usize, st: &mut RunState, branch: u64) -> Result<SlotStep> {
        let coupons = &self.setup.config.coupons;
        let h = coupons.len();
        let est = &self.inputs.estimates[t];
        let truth = &self.inputs.truth[t];
        let summary = st.tracker.as_ref().map(BetaTracker::summarize_for_state);
        let state = build_state(t, st.lambda.lambda, &st.status, summary.as_deref(), h, &self.scales);
        let parts = [self.ep.key().stream, branch, t as u64];
        let action = if self.opts.deterministic {
            self.policy.dist(&state).0
        } else {
            self.policy.sample(&state, &mut stream(self.opts.seed, Purpose::Policy, &parts))
        };
        let log_prob = self.policy.log_prob(&state, action);
        let lambda = st.lambda.apply_action(action, self.setup.ppo.eta);

        let w = match &st.tracker {
            Some(tr) => {
                let mut rng = stream(self.opts.seed, Purpose::Thompson, &parts);
                let mut w = Vec::with_capacity(est.len());
                for (c, ori) in est.clusters.iter().zip(&est.ori) {
                    let row = (0..h)
                        .map(|d| {
                            let (a, b) = tr.refine_w(*c, d, ori[d])?;
                            sample_w(a, b, &mut rng)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    w.push(row);
                }
                w
            }
            None => est.w_mean(),
        };
        let z_hat = est.decomposed(&w);
        let b = self.setup.config.budget_rate;
        let assignment: Vec<usize> =
            z_hat.iter().zip(&est.base_prices).map(|(z, &g)| optimal_coupon_row(z, g, coupons, b, lambda).0).collect();
        let outcome = self.ep.evaluate(t, &assignment)?;
        if let Some(tr) = st.tracker.as_mut() {
            tr.posterior_update(&outcome.tallies(&est.clusters, tr.num_clusters(), h)?)?;
        }

        let entry = LedgerEntry {
            r_obs: outcome.completions as f64,
            p_obs: outcome.total_cost,
            gmv_obs: outcome.total_gmv,
            r: compute_reward(truth, &assignment),
            p: compute_penalty(truth, &est.base_prices, coupons, &assignment),
            gmv: compute_gmv(truth, &est.base_prices, &assignment),
        };
        let s = &mut st.status;
        s.completions += entry.r_obs;
        s.cost += entry.p_obs;
        s.gmv += entry.gmv_obs;
        s.baseline_completions += z_hat.iter().map(|row| row[0]).sum::<f64>();
        let record = SlotRecord {
            slot: outcome.slot,
            orders: outcome.orders(),
            irr: outcome.in_range_rate(),
            lambda,
            action,
            cost_rate: if s.gmv > 0.0 { s.cost / s.gmv } else { 0.0 },
            completions: outcome.completions,
            cost: outcome.total_cost,
            gmv: outcome.total_gmv,
        };
        Ok(SlotStep { state, action, log_prob, record, entry })
    }
}

/// Runs one episode under `policy` starting from `lambda0`. The signal of
/// slot `t` combines the observed prefix with the expected suffix of the
/// assignments taken, or of a re-simulated continuation when `nested`.
pub fn rollout_episode(
    setup: &RlSetup,
    policy: &PolicyNetwork,
    ep: &Episode,
    inputs: &EpisodeInputs,
    lambda0: f64,
    opts: &RolloutOptions,
) -> Result<Rollout> {
    let horizon = ep.len();
    if horizon == 0 || inputs.estimates.len() != horizon {
        return Err(Error::Argument("episode inputs do not cover the episode".into()));
    }
    if policy.net.input_dim() != setup.state_dim() {
        return Err(Error::Argument(format!(
            "policy expects {} state entries, setup produces {}",
            policy.net.input_dim(),
            setup.state_dim()
        )));
    }
    let (lb, ub) = setup.lambda_bounds();
    let tracker = match opts.mode {
        RolloutMode::Fca => Some(setup.backbone.tracker(opts.window)?),
        RolloutMode::NoFca => None,
    };
    let mut st = RunState { lambda: LambdaState::new(lambda0, lb, ub)?, tracker, status: CampaignStatus::default() };
    let runner = Runner { setup, policy, ep, inputs, opts, scales: setup.scales(horizon) };
    // the signal is normalized by the optimum of the episode's own period
    let r_star = inputs.hindsight_optimum(&setup.config)?.1.completions.max(1e-9);
    let mut ledger = EpisodeLedger::new(r_star, setup.config.budget_rate)?;
    ledger.denominator = opts.cr_denominator;

    let mut steps = Vec::with_capacity(horizon);
    let mut signals = Vec::with_capacity(horizon);
    let mut snapshots = Vec::new();
    for t in 0..horizon {
        let step = runner.slot(t, &mut st, 0)?;
        ledger.entries.push(step.entry);
        if opts.record_snapshots {
            if let Some(tr) = &st.tracker {
                snapshots.extend(tr.snapshot(step.record.slot));
            }
        }
        if opts.nested {
            let mut branch = st.clone();
            let mut forecast = ledger.clone();
            for k in t + 1..horizon {
                forecast.entries.push(runner.slot(k, &mut branch, t as u64 + 1)?.entry);
            }
            signals.push(forecast.full_achievement_at(t)?);
        }
        steps.push(step);
    }
    if !opts.nested {
        for t in 0..horizon {
            signals.push(ledger.full_achievement_at(t)?);
        }
    }

    let mut transitions = Vec::with_capacity(horizon);
    let mut records = Vec::with_capacity(horizon);
    for (step, signal) in steps.into_iter().zip(signals) {
        transitions.push(Transition { state: step.state, action: step.action, log_prob: step.log_prob, signal });
        records.push(step.record);
    }
    Ok(Rollout { transitions, records, ledger, status: st.status, snapshots })
}

/// Totals of the same episode with no coupon issued.
pub fn zero_coupon_totals(ep: &Episode) -> Result<EpisodeTotals> {
    let mut t = EpisodeTotals::default();
    for s in 0..ep.len() {
        let out = ep.evaluate(s, &vec![0; ep.slot(s).opportunities.len()])?;
        t.completions += out.completions as f64;
        t.cost += out.total_cost;
        t.gmv += out.total_gmv;
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub episodes: usize,
    pub seed: u64,
    pub mode: RolloutMode,
    pub window: usize,
    pub nested: bool,
    pub cr_denominator: CrDenominator,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            episodes: 200,
            seed: 0,
            mode: RolloutMode::Fca,
            window: crate::fca::DEFAULT_WINDOW,
            nested: false,
            cr_denominator: CrDenominator::Gmv,
            checkpoint_dir: None,
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainCurveRow {
    pub episode: usize,
    #[serde(rename = "RLR")]
    pub rlr: f64,
    #[serde(rename = "CRE")]
    pub cre: f64,
    #[serde(rename = "FROI")]
    pub froi: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub policy: PolicyNetwork,
    pub critic: CriticNetwork,
    pub curve: Vec<TrainCurveRow>,
}

impl TrainedAgent {
    pub fn save(&self, dir: impl AsRef<std::path::Path>, tag: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.policy.to_checkpoint().save(dir.join(format!("policy_{tag}.ckpt")))?;
        self.critic.to_checkpoint().save(dir.join(format!("critic_{tag}.ckpt")))
    }
}

pub fn write_curve_csv<W: std::io::Write>(rows: &[TrainCurveRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Stream id of the `k`-th training episode for a seed.
pub fn training_stream(seed: u64, k: usize) -> u64 {
    mix(seed, &[k as u64]) | TRAIN_STREAM_FLAG
}

fn train_episode(
    setup: &RlSetup,
    policy: &PolicyNetwork,
    opts: &TrainOptions,
    k: usize,
) -> Result<(Rollout, TrainCurveRow)> {
    let cfg = &setup.config;
    let ep =
        Episode::new(cfg, EpisodeKey { phase: Phase::Live, stream: training_stream(opts.seed, k) }, cfg.slots_test)?;
    let inputs = EpisodeInputs::new(&setup.backbone, &ep)?;
    let p = setup.ppo.lambda_perturbation;
    let u: f64 = rand::Rng::random_range(&mut stream(opts.seed, Purpose::Policy, &[k as u64, 1]), -1.0..=1.0);
    let lambda0 = setup.lambda0() * (1.0 + p * u);
    let ro = RolloutOptions {
        mode: opts.mode,
        window: opts.window,
        deterministic: false,
        nested: opts.nested,
        cr_denominator: opts.cr_denominator,
        seed: opts.seed,
        record_snapshots: false,
    };
    let rollout = rollout_episode(setup, policy, &ep, &inputs, lambda0, &ro)?;
    let totals = rollout.totals();
    let zero = zero_coupon_totals(&ep)?;
    let r_obs: Vec<f64> = rollout.ledger.entries.iter().map(|e| e.r_obs).collect();
    let row = TrainCurveRow {
        episode: k,
        rlr: metric_rlr(&r_obs, setup.statics.r_star, totals.cost_rate().unwrap_or(0.0), cfg.budget_rate)?,
        cre: metric_cre(totals.cost, totals.gmv, cfg.budget_rate).map_or(f64::NAN, |c| c.0),
        froi: froi_against(&totals, &zero).unwrap_or(f64::NAN),
    };
    Ok((rollout, row))
}

#[allow(clippy::too_many_arguments)]
fn ppo_update(
    setup: &RlSetup,
    policy: &mut PolicyNetwork,
    critic: &mut CriticNetwork,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    batch: &mut PpoBatch,
    seed: u64,
    round: usize,
) {
    let cfg = &setup.ppo;
    // Advantage against the critic's value of the policy's own mean action.
    for i in 0..batch.len() {
        let mu = policy.dist(&batch.states[i]).0;
        batch.advantages[i] = batch.targets[i] - critic.value(&batch.states[i], mu);
    }
    let n = batch.len() as f64;
    let mean = batch.advantages.iter().sum::<f64>() / n;
    let sd = (batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in &mut batch.advantages {
        *a = (*a - mean) / sd.max(1e-8);
    }
    let mut actor_grad = vec![0.0; policy.net.params().len()];
    let mut critic_grad = vec![0.0; critic.net.params().len()];
    for epoch in 0..cfg.update_epochs {
        let mut rng = stream(seed, Purpose::Training, &[round as u64, epoch as u64]);
        for rows in shuffled_batches(batch.len(), cfg.batch_size, &mut rng) {
            actor_grad.iter_mut().for_each(|g| *g = 0.0);
            ppo_loss_and_grad(&policy.net, policy.sigma_floor, cfg.clip, batch, &rows, Some(&mut actor_grad));
            actor_opt.step(policy.net.params_mut(), &actor_grad);
            critic_grad.iter_mut().for_each(|g| *g = 0.0);
            critic_loss_and_grad(&critic.net, batch, &rows, Some(&mut critic_grad));
            critic_opt.step(critic.net.params_mut(), &critic_grad);
        }
    }
}

/// PPO over live episodes of the scene. Rollouts of one round run in
/// parallel against the same frozen policy.
pub fn train_rl(setup: &RlSetup, opts: &TrainOptions) -> Result<TrainedAgent> {
    let cfg = &setup.ppo;
    cfg.validate()?;
    if opts.checkpoint_every == 0 {
        return Err(Error::Config("checkpoint interval must be positive".into()));
    }
    let dim = setup.state_dim();
    let mut policy = PolicyNetwork::new(dim, cfg, &mut stream(opts.seed, Purpose::Policy, &[u64::MAX, 0]));
    let mut critic = CriticNetwork::new(dim, cfg, &mut stream(opts.seed, Purpose::Policy, &[u64::MAX, 1]));
    let mut actor_opt = Adam::new(policy.net.params().len(), cfg.actor_lr);
    let mut critic_opt = Adam::new(critic.net.params().len(), cfg.critic_lr);
    let mut curve = Vec::with_capacity(opts.episodes);
    let mut done = 0;
    let mut round = 0;
    while done < opts.episodes {
        let end = (done + cfg.rollouts_per_update).min(opts.episodes);
        let frozen = &policy;
        let results: Vec<(Rollout, TrainCurveRow)> =
            (done..end).into_par_iter().map(|k| train_episode(setup, frozen, opts, k)).collect::<Result<_>>()?;
        let mut batch = PpoBatch::default();
        for (rollout, row) in results {
            for tr in rollout.transitions {
                batch.states.push(tr.state);
                batch.actions.push(tr.action);
                batch.old_log_probs.push(tr.log_prob);
                batch.advantages.push(0.0);
                batch.targets.push(tr.signal);
            }
            curve.push(row);
        }
        ppo_update(setup, &mut policy, &mut critic, &mut actor_opt, &mut critic_opt, &mut batch, opts.seed, round);
        if let Some(dir) = &opts.checkpoint_dir {
            if end / opts.checkpoint_every > done / opts.checkpoint_every {
                let tag = format!("ep{:05}", end / opts.checkpoint_every * opts.checkpoint_every);
                TrainedAgent { policy: policy.clone(), critic: critic.clone(), curve: Vec::new() }.save(dir, &tag)?;
            }
        }
        let last = curve.last().copied();
        if let Some(r) = last {
            log::info!("episode {end}: RLR {:.3} CRE {:.4} FROI {:.3}", r.rlr, r.cre, r.froi);
        }
        done = end;
        round += 1;
    }
    let agent = TrainedAgent { policy, critic, curve };
    if let Some(dir) = &opts.checkpoint_dir {
        agent.save(dir, "final")?;
        write_curve_csv(&agent.curve, std::fs::File::create(dir.join("training_curve.csv"))?)?;
    }
    Ok(agent)
}
