use super::checkpoint::{Checkpoint, ModelKind};
use super::logistic::Fitted;
use super::{shuffled_batches, Dataset, Standardizer, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};
use crate::rng::{stream, Purpose};
use crate::stats::{sigmoid, softplus};

/// Hidden width of the perceptron.
pub const BETA_HIDDEN: usize = 16;
/// Added to both softplus outputs.
pub const BETA_EPS: f64 = 1e-3;
/// Weight of the penalty pulling `ln(alpha + beta)` toward the target
/// concentration. Binary labels only identify the mean, so without it the
/// concentration drifts freely.
pub const CONCENTRATION_WEIGHT: f64 = 0.1;

/// Two-layer perceptron mapping `(x, d)` to Beta parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaParamModel {
    /// Over `[x..., d]`.
    pub standardizer: Standardizer,
    pub net: Mlp,
}

impl BetaParamModel {
    pub fn input_dim(&self) -> usize {
        self.standardizer.dim() - 1
    }

    fn input(&self, x: &[f64], d: f64) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Argument(format!("expected {} features, got {}", self.input_dim(), x.len())));
        }
        let mut v = x.to_vec();
        v.push(d);
        self.standardizer.apply(&v)
    }

    fn link(out: &[f64]) -> (f64, f64) {
        (softplus(out[0]) + BETA_EPS, softplus(out[1]) + BETA_EPS)
    }

    pub fn predict(&self, x: &[f64], d: f64) -> Result<(f64, f64)> {
        Ok(Self::link(&self.net.forward(&self.input(x, d)?)))
    }

    pub fn predict_mean(&self, x: &[f64], d: f64) -> Result<f64> {
        let (a, b) = self.predict(x, d)?;
        Ok(a / (a + b))
    }

    /// Mean penalized Beta-Bernoulli NLL over `rows` of standardized inputs.
    pub fn loss_and_grad(
        net: &Mlp,
        inputs: &[Vec<f64>],
        y: &[bool],
        rows: &[usize],
        log_kappa: f64,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let n = rows.len() as f64;
        let mut loss = 0.0;
        for &i in rows {
            let trace = net.forward_trace(&inputs[i]);
            let out = trace.output();
            let (a, b) = Self::link(out);
            let s = a + b;
            let gap = s.ln() - log_kappa;
            loss += -(if y[i] { a.ln() } else { b.ln() }) + s.ln() + CONCENTRATION_WEIGHT * gap * gap;
            if let Some(g) = grad.as_deref_mut() {
                let common = 1.0 / s + 2.0 * CONCENTRATION_WEIGHT * gap / s;
                let da = common - if y[i] { 1.0 / a } else { 0.0 };
                let db = common - if y[i] { 0.0 } else { 1.0 / b };
                let d_out = [da * sigmoid(out[0]) / n, db * sigmoid(out[1]) / n];
                net.backward(&trace, &d_out, g);
            }
        }
        loss / n
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_mlp(ModelKind::BetaParam, &self.net);
        let dim = self.standardizer.dim();
        ck.tensors.insert(0, (vec![dim], self.standardizer.std.clone()));
        ck.tensors.insert(0, (vec![dim], self.standardizer.mean.clone()));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::BetaParam)?;
        if ck.tensors.len() < 4 {
            return Err(Error::Format("beta checkpoint too short".into()));
        }
        let standardizer = Standardizer { mean: ck.tensors[0].1.clone(), std: ck.tensors[1].1.clone() };
        let rest = Checkpoint { kind: ck.kind, tensors: ck.tensors[2..].to_vec() };
        let net = rest.to_mlp()?;
        if net.input_dim() != standardizer.dim() || net.output_dim() != 2 {
            return Err(Error::Format("beta checkpoint shapes disagree".into()));
        }
        Ok(Self { standardizer, net })
    }
}

/// Fits the perceptron on in-range labels. `concentration` is the target
/// `alpha + beta` the penalty anchors to.
pub fn fit_beta_param_model(
    data: &Dataset,
    config: &TrainConfig,
    concentration: f64,
) -> Result<Fitted<BetaParamModel>> {
    config.validate()?;
    data.check()?;
    if !(concentration > 0.0) {
        return Err(Error::Config(format!("concentration must be positive, got {concentration}")));
    }
    let raw: Vec<Vec<f64>> = data
        .x
        .iter()
        .zip(&data.d)
        .map(|(x, &d)| {
            let mut v = x.clone();
            v.push(d);
            v
        })
        .collect();
    let standardizer = Standardizer::fit(&raw);
    let inputs: Vec<Vec<f64>> = raw.iter().map(|v| standardizer.apply(v)).collect::<Result<_>>()?;
    let mut rng = stream(config.seed, Purpose::Training, &[2]);
    let mut net = Mlp::new(&[inputs[0].len(), BETA_HIDDEN, 2], &mut rng);
    // start at the base rate with the target concentration
    let rate = (data.y.iter().filter(|&&y| y).count() as f64 / data.len() as f64).clamp(0.02, 0.98);
    let inv_softplus = |v: f64| (v.exp() - 1.0).ln();
    net.init_output_layer(0.1, &[inv_softplus(rate * concentration), inv_softplus((1.0 - rate) * concentration)]);
    let log_kappa = concentration.ln();
    let mut adam = Adam::new(net.params().len(), config.learning_rate);
    let mut grad = vec![0.0; net.params().len()];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(data.len(), config.batch_size, &mut rng) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let l = BetaParamModel::loss_and_grad(&net, &inputs, &data.y, &batch, log_kappa, Some(&mut grad));
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss {l}")));
            }
            total += l * batch.len() as f64;
            adam.step(net.params_mut(), &grad);
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(Fitted { model: BetaParamModel { standardizer, net }, epoch_losses })
}
