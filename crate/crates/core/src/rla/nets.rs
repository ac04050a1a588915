use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Checkpoint, ModelKind};
use crate::nn::Mlp;
use crate::stats::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub eta: f64,
    pub sigma_floor: f64,
    /// Standard deviation of the untrained policy.
    pub initial_sigma: f64,
    pub clip: f64,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// Passes over the collected batch per update.
    pub update_epochs: usize,
    /// Episodes collected with a frozen policy before each update.
    pub rollouts_per_update: usize,
    /// Relative half-width of the uniform perturbation of the starting λ.
    pub lambda_perturbation: f64,
    /// Upper bound of λ as a multiple of the starting λ.
    pub ub_factor: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            sigma_floor: 0.05,
            initial_sigma: 0.1,
            clip: 0.2,
            hidden: 64,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            batch_size: 256,
            update_epochs: 10,
            rollouts_per_update: 4,
            lambda_perturbation: 0.1,
            ub_factor: 10.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eta > 0.0
            && self.sigma_floor > 0.0
            && self.initial_sigma > self.sigma_floor
            && self.clip > 0.0
            && self.hidden > 0
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && self.batch_size > 0
            && self.update_epochs > 0
            && self.rollouts_per_update > 0
            && (0.0..1.0).contains(&self.lambda_perturbation)
            && self.ub_factor > 1.0;
        if !ok {
            return Err(Error::Config(format!("invalid PPO config {self:?}")));
        }
        Ok(())
    }
}

/// `log N(a; μ, σ)`.
pub fn gaussian_log_prob(a: f64, mu: f64, sigma: f64) -> f64 {
    let z = (a - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Gaussian actor: `μ = 1 + o₀`, `σ = σ_floor + softplus(o₁)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    pub net: Mlp,
    pub sigma_floor: f64,
}

impl PolicyNetwork {
    /// Starts at the identity action with standard deviation `initial_sigma`.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, cfg: &PpoConfig, rng: &mut R) -> Self {
        let mut net = Mlp::new(&[state_dim, cfg.hidden, cfg.hidden, 2], rng);
        let excess: f64 = cfg.initial_sigma - cfg.sigma_floor;
        net.init_output_layer(0.01, &[0.0, excess.exp_m1().ln()]);
        Self { net, sigma_floor: cfg.sigma_floor }
    }

    fn head(out: &[f64], floor: f64) -> (f64, f64) {
        (1.0 + out[0], floor + softplus(out[1]))
    }

    pub fn dist(&self, s: &[f64]) -> (f64, f64) {
        Self::head(&self.net.forward(s), self.sigma_floor)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> f64 {
        let (mu, sigma) = self.dist(s);
        let e: f64 = StandardNormal.sample(rng);
        mu + sigma * e
    }

    pub fn log_prob(&self, s: &[f64], a: f64) -> f64 {
        let (mu, sigma) = self.dist(s);
        gaussian_log_prob(a, mu, sigma)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_mlp(ModelKind::Policy, &self.net);
        ck.tensors.push((vec![1], vec![self.sigma_floor]));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Policy)?;
        let (last, layers) = ck.tensors.split_last().ok_or_else(|| Error::Format("empty policy checkpoint".into()))?;
        if last.0 != [1] {
            return Err(Error::Format("policy checkpoint lacks the σ floor".into()));
        }
        let net = Checkpoint { kind: ck.kind, tensors: layers.to_vec() }.to_mlp()?;
        if net.output_dim() != 2 {
            return Err(Error::Format("policy head must have two outputs".into()));
        }
        Ok(Self { net, sigma_floor: last.1[0] })
    }
}

/// `Q(s, a)` with the action centered at the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNetwork {
    pub net: Mlp,
}

impl CriticNetwork {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, cfg: &PpoConfig, rng: &mut R) -> Self {
        Self { net: Mlp::new(&[state_dim + 1, cfg.hidden, cfg.hidden, 1], rng) }
    }

    fn input(s: &[f64], a: f64) -> Vec<f64> {
        let mut v = s.to_vec();
        v.push(a - 1.0);
        v
    }

    pub fn value(&self, s: &[f64], a: f64) -> f64 {
        self.net.forward(&Self::input(s, a))[0]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_mlp(ModelKind::Critic, &self.net)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Critic)?;
        Ok(Self { net: ck.to_mlp()? })
    }
}

/// Transitions prepared for one update.
#[derive(Debug, Clone, Default)]
pub struct PpoBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Negated clipped surrogate `-mean min(ρ Â, clip(ρ) Â)` over `rows`, with
/// its gradient accumulated into `grad`. Samples whose ratio sits outside the
/// clip region in the direction the advantage favors contribute no gradient.
pub fn ppo_loss_and_grad(
    net: &Mlp,
    sigma_floor: f64,
    clip: f64,
    batch: &PpoBatch,
    rows: &[usize],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = rows.len() as f64;
    let mut total = 0.0;
    for &i in rows {
        let trace = net.forward_trace(&batch.states[i]);
        let out = trace.output();
        let (mu, sigma) = PolicyNetwork::head(out, sigma_floor);
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let ratio = (gaussian_log_prob(a, mu, sigma) - batch.old_log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        total += unclipped.min(clipped);
        if let Some(g) = grad.as_deref_mut() {
            if unclipped <= clipped {
                // d(-ρÂ)/dθ = -ρÂ ∂logπ/∂θ
                let z = (a - mu) / sigma;
                let dmu = z / sigma;
                let dsigma = (z * z - 1.0) / sigma;
                let scale = -unclipped / n;
                let d_out = [scale * dmu, scale * dsigma * sigmoid(out[1])];
                net.backward(&trace, &d_out, g);
            }
        }
    }
    -total / n
}

/// Mean squared error of the critic over `rows`.
pub fn critic_loss_and_grad(net: &Mlp, batch: &PpoBatch, rows: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
    let n = rows.len() as f64;
    let mut total = 0.0;
    for &i in rows {
        let trace = net.forward_trace(&CriticNetwork::input(&batch.states[i], batch.actions[i]));
        let err = trace.output()[0] - batch.targets[i];
        total += err * err;
        if let Some(g) = grad.as_deref_mut() {
            net.backward(&trace, &[2.0 * err / n], g);
        }
    }
    total / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};
    use crate::rng::{stream, Purpose};

    fn random_batch(rng: &mut impl Rng, n: usize, dim: usize) -> PpoBatch {
        let mut b = PpoBatch::default();
        for _ in 0..n {
            b.states.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
            b.actions.push(rng.random_range(0.7..1.3));
            b.old_log_probs.push(rng.random_range(-1.0..1.5));
            b.advantages.push(rng.random_range(-1.0..1.0));
            b.targets.push(rng.random_range(-1.0..1.0));
        }
        b
    }

    #[test]
    fn untrained_policy_starts_at_identity() {
        let cfg = PpoConfig::default();
        let p = PolicyNetwork::new(5, &cfg, &mut stream(1, Purpose::Policy, &[]));
        let (mu, sigma) = p.dist(&[0.3, -0.2, 0.1, 0.0, 1.0]);
        assert!((mu - 1.0).abs() < 0.05);
        assert!((sigma - 0.1).abs() < 0.01);
        assert!(sigma >= cfg.sigma_floor);
    }

    #[test]
    fn sigma_never_drops_below_floor() {
        let cfg = PpoConfig::default();
        let mut p = PolicyNetwork::new(2, &cfg, &mut stream(2, Purpose::Policy, &[]));
        p.net.params_mut().iter_mut().for_each(|v| *v = -50.0);
        assert!(p.dist(&[1.0, 1.0]).1 >= cfg.sigma_floor);
    }

    #[test]
    fn identical_policies_have_unit_ratio() {
        let cfg = PpoConfig::default();
        let p = PolicyNetwork::new(3, &cfg, &mut stream(3, Purpose::Policy, &[]));
        let mut rng = stream(4, Purpose::Synthetic, &[]);
        let mut b = random_batch(&mut rng, 20, 3);
        b.old_log_probs = b.states.iter().zip(&b.actions).map(|(s, &a)| p.log_prob(s, a)).collect();
        let rows: Vec<usize> = (0..20).collect();
        let loss = ppo_loss_and_grad(&p.net, cfg.sigma_floor, cfg.clip, &b, &rows, None);
        let plain = -b.advantages.iter().sum::<f64>() / 20.0;
        assert!((loss - plain).abs() < 1e-12);
    }

    #[test]
    fn critic_matching_targets_has_zero_loss() {
        let cfg = PpoConfig::default();
        let c = CriticNetwork::new(3, &cfg, &mut stream(5, Purpose::Policy, &[]));
        let mut rng = stream(6, Purpose::Synthetic, &[]);
        let mut b = random_batch(&mut rng, 10, 3);
        b.targets = b.states.iter().zip(&b.actions).map(|(s, &a)| c.value(s, a)).collect();
        let rows: Vec<usize> = (0..10).collect();
        assert_eq!(critic_loss_and_grad(&c.net, &b, &rows, None), 0.0);
    }

    #[test]
    fn clipped_samples_have_no_gradient() {
        let cfg = PpoConfig::default();
        let p = PolicyNetwork::new(2, &cfg, &mut stream(7, Purpose::Policy, &[]));
        let s = vec![0.2, -0.4];
        let a = 1.05;
        let lp = p.log_prob(&s, a);
        // ratio e^1 > 1 + clip with a positive advantage
        let b = PpoBatch {
            states: vec![s],
            actions: vec![a],
            old_log_probs: vec![lp - 1.0],
            advantages: vec![1.0],
            targets: vec![0.0],
        };
        let mut g = vec![0.0; p.net.params().len()];
        ppo_loss_and_grad(&p.net, cfg.sigma_floor, cfg.clip, &b, &[0], Some(&mut g));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = stream(8, Purpose::Synthetic, &[]);
        let sizes = [3, 6, 6, 2];
        let mut checked = 0;
        while checked < 100 {
            let params: Vec<f64> = (0..Mlp::param_count(&sizes)).map(|_| rng.random_range(-0.5..0.5)).collect();
            let net = Mlp::from_params(&sizes, params.clone()).unwrap();
            let b = random_batch(&mut rng, 8, 3);
            let rows: Vec<usize> = (0..8).collect();
            let mut g = vec![0.0; params.len()];
            ppo_loss_and_grad(&net, 0.05, 0.2, &b, &rows, Some(&mut g));
            let num = numeric_gradient(&params, 1e-6, |p| {
                ppo_loss_and_grad(&Mlp::from_params(&sizes, p.to_vec()).unwrap(), 0.05, 0.2, &b, &rows, None)
            });
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            assert!(relative_error(&g, &num) < 1e-4, "{}", relative_error(&g, &num));
            checked += 1;
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = stream(9, Purpose::Synthetic, &[]);
        let sizes = [4, 6, 6, 1];
        for _ in 0..100 {
            let params: Vec<f64> = (0..Mlp::param_count(&sizes)).map(|_| rng.random_range(-0.5..0.5)).collect();
            let net = Mlp::from_params(&sizes, params.clone()).unwrap();
            let b = random_batch(&mut rng, 8, 3);
            let rows: Vec<usize> = (0..8).collect();
            let mut g = vec![0.0; params.len()];
            critic_loss_and_grad(&net, &b, &rows, Some(&mut g));
            let num = numeric_gradient(&params, 1e-6, |p| {
                critic_loss_and_grad(&Mlp::from_params(&sizes, p.to_vec()).unwrap(), &b, &rows, None)
            });
            assert!(relative_error(&g, &num) < 1e-4);
        }
    }

    #[test]
    fn checkpoints_round_trip() {
        let cfg = PpoConfig::default();
        let p = PolicyNetwork::new(4, &cfg, &mut stream(10, Purpose::Policy, &[]));
        assert_eq!(PolicyNetwork::from_checkpoint(&p.to_checkpoint()).unwrap(), p);
        let c = CriticNetwork::new(4, &cfg, &mut stream(11, Purpose::Policy, &[]));
        assert_eq!(CriticNetwork::from_checkpoint(&c.to_checkpoint()).unwrap(), c);
    }
}
