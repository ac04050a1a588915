use serde::{Deserialize, Serialize};

use crate::dual::{assign_all, solve_lambda, AllocationProblem, AssignmentTotals};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_beta_param_model, fit_logistic_with, BetaParamModel, Dataset, LogisticUpliftModel, Standardizer, Target,
    TrainConfig,
};
use crate::fca::{init_priors, kmeans_fit_standardized, BetaTracker, ClusterModel, DEFAULT_CLUSTERS, DEFAULT_WINDOW};
use crate::rng::{stream, Purpose};
use crate::sim::{collect_randomized, Episode, EpisodeKey, Phase, ScenarioConfig, SlotMarket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub train: TrainConfig,
    pub clusters: usize,
    pub window: usize,
    /// Target `α + β` of the perceptron's Beta law; `M + 1` when unset.
    pub beta_concentration: Option<f64>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            clusters: DEFAULT_CLUSTERS,
            window: DEFAULT_WINDOW,
            beta_concentration: None,
        }
    }
}

/// Models trained on the pretrain split plus the clusters and prior tables
/// of the in-range tracker.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub w: LogisticUpliftModel,
    pub f_in: LogisticUpliftModel,
    pub z: LogisticUpliftModel,
    pub beta: BetaParamModel,
    pub clusters: ClusterModel,
    pub prior: BetaTracker,
    pub coupons: Vec<f64>,
}

impl Backbone {
    /// Logs a pretrain episode under uniformly random coupons and fits every
    /// model on it.
    pub fn train(cfg: &ScenarioConfig, bc: &BackboneConfig) -> Result<Self> {
        let mut ep = Episode::new(cfg, EpisodeKey { phase: Phase::Pretrain, stream: 0 }, cfg.slots_pretrain)?;
        let samples = collect_randomized(&mut ep)?;
        let features: Vec<Vec<f64>> = samples.iter().map(|s| s.features.to_vec()).collect();
        let standardizer = Standardizer::fit(&features);
        let fit = |target: Target, seed: u64| -> Result<LogisticUpliftModel> {
            let ds = Dataset::from_samples(&samples, &cfg.coupons, target);
            let tc = TrainConfig { seed, ..bc.train.clone() };
            Ok(fit_logistic_with(&ds, &tc, standardizer.clone())?.model)
        };
        let w = fit(Target::W, bc.train.seed)?;
        let f_in = fit(Target::FIn, bc.train.seed.wrapping_add(1))?;
        let z = fit(Target::Z, bc.train.seed.wrapping_add(2))?;
        let beta_ds = Dataset::from_samples(&samples, &cfg.coupons, Target::Beta);
        let tc = TrainConfig { seed: bc.train.seed.wrapping_add(3), ..bc.train.clone() };
        let kappa = bc.beta_concentration.unwrap_or((cfg.num_rsps + 1) as f64);
        let beta = fit_beta_param_model(&beta_ds, &tc, kappa)?.model;
        let clusters = kmeans_fit_standardized(
            &features,
            bc.clusters,
            &mut stream(cfg.seed, Purpose::Clustering, &[bc.train.seed]),
        )?;
        let prior = init_priors(&clusters, &beta, &features, &cfg.coupons, bc.window)?;
        Ok(Self { w, f_in, z, beta, clusters, prior, coupons: cfg.coupons.clone() })
    }

    /// Fresh tracker holding the prior tables with window `l`.
    pub fn tracker(&self, window: usize) -> Result<BetaTracker> {
        self.prior.with_window(window)
    }

    pub fn estimates(&self, market: &SlotMarket) -> Result<SlotEstimates> {
        let n = market.opportunities.len();
        let mut est = SlotEstimates {
            clusters: Vec::with_capacity(n),
            base_prices: Vec::with_capacity(n),
            f_in: Vec::with_capacity(n),
            ori: Vec::with_capacity(n),
            w_logit: Vec::with_capacity(n),
            z_model: Vec::with_capacity(n),
        };
        for opp in &market.opportunities {
            let x = &opp.features[..];
            est.clusters.push(self.clusters.assign(x)?);
            est.base_prices.push(opp.base_price);
            est.f_in.push(self.f_in.predict_grid(x, &self.coupons)?);
            est.w_logit.push(self.w.predict_grid(x, &self.coupons)?);
            est.z_model.push(self.z.predict_grid(x, &self.coupons)?);
            est.ori.push(self.coupons.iter().map(|&d| self.beta.predict(x, d)).collect::<Result<_>>()?);
        }
        Ok(est)
    }
}

/// Model outputs for every order of a slot under every coupon.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotEstimates {
    pub clusters: Vec<usize>,
    pub base_prices: Vec<f64>,
    pub f_in: Vec<Vec<f64>>,
    /// Beta parameters from the perceptron.
    pub ori: Vec<Vec<(f64, f64)>>,
    pub w_logit: Vec<Vec<f64>>,
    pub z_model: Vec<Vec<f64>>,
}

impl SlotEstimates {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Mean of the perceptron's Beta law.
    pub fn w_mean(&self) -> Vec<Vec<f64>> {
        self.ori.iter().map(|row| row.iter().map(|&(a, b)| a / (a + b)).collect()).collect()
    }

    /// `w * f_in` for a given in-range table.
    pub fn decomposed(&self, w: &[Vec<f64>]) -> Vec<Vec<f64>> {
        w.iter().zip(&self.f_in).map(|(w, f)| w.iter().zip(f).map(|(a, b)| a * b).collect()).collect()
    }
}

/// Multipliers and normalizers solved once on the train split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticLambdas {
    /// Ground-truth optimum on the train split.
    pub opt: f64,
    /// End-to-end completion model.
    pub pdm_a: f64,
    /// Logistic in-range model times in-range completion model.
    pub pdm_s: f64,
    /// Perceptron in-range mean times in-range completion model; the RL
    /// starting point.
    pub decomposed_beta: f64,
    /// Optimal expected completions scaled to one test episode.
    pub r_star: f64,
    /// Expected GMV of the optimum scaled to one test episode.
    pub ref_gmv: f64,
    /// Upper bound on the multiplier implied by the cheapest order.
    pub dual_ub: f64,
}

/// λ* by ternary search over the pooled rows, and the totals of the
/// resulting assignment under `truth` (defaults to the rows themselves).
pub fn solve_static_lambda(
    z: Vec<Vec<f64>>,
    g: Vec<f64>,
    coupons: &[f64],
    budget_rate: f64,
    truth: Option<&[Vec<f64>]>,
) -> Result<(f64, AssignmentTotals)> {
    let problem = AllocationProblem::new(z, g, coupons.to_vec(), budget_rate)?;
    if problem.is_empty() {
        return Err(Error::Argument("no opportunities to solve over".into()));
    }
    let lambda = solve_lambda(&problem)?;
    let assignment = assign_all(&problem, lambda);
    let totals = match truth {
        None => problem.evaluate(&assignment),
        Some(t) => AllocationProblem { z: t.to_vec(), ..problem }.evaluate(&assignment),
    };
    Ok((lambda, totals))
}

impl StaticLambdas {
    pub fn solve(cfg: &ScenarioConfig, backbone: &Backbone) -> Result<Self> {
        let ep = Episode::new(cfg, EpisodeKey { phase: Phase::Train, stream: 0 }, cfg.slots_train)?;
        let mut truth = Vec::new();
        let mut g = Vec::new();
        let mut za = Vec::new();
        let mut zs = Vec::new();
        let mut zb = Vec::new();
        for t in 0..ep.len() {
            let est = backbone.estimates(ep.slot(t))?;
            truth.extend(ep.true_completion(t));
            g.extend_from_slice(&est.base_prices);
            zs.extend(est.decomposed(&est.w_logit));
            zb.extend(est.decomposed(&est.w_mean()));
            za.extend(est.z_model);
        }
        let b = cfg.budget_rate;
        let g_min = g.iter().copied().fold(f64::INFINITY, f64::min);
        let h = cfg.coupons.len();
        let dual_ub =
            AllocationProblem::new(vec![vec![0.5; h]], vec![g_min], cfg.coupons.clone(), b)?.default_lambda_bounds().1;
        let (opt, totals) = solve_static_lambda(truth, g.clone(), &cfg.coupons, b, None)?;
        let (pdm_a, _) = solve_static_lambda(za, g.clone(), &cfg.coupons, b, None)?;
        let (pdm_s, _) = solve_static_lambda(zs, g.clone(), &cfg.coupons, b, None)?;
        let (decomposed_beta, _) = solve_static_lambda(zb, g, &cfg.coupons, b, None)?;
        let scale = cfg.slots_test as f64 / cfg.slots_train as f64;
        Ok(Self {
            opt,
            pdm_a,
            pdm_s,
            decomposed_beta,
            r_star: totals.completions * scale,
            ref_gmv: totals.gmv * scale,
            dual_ub,
        })
    }
}
