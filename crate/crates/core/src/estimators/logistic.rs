use super::checkpoint::{Checkpoint, ModelKind};
use super::{shuffled_batches, Dataset, Standardizer, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng::{stream, Purpose};
use crate::stats::sigmoid;

/// Predictions are clipped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

/// `P(y | x, t) = sigmoid(C * sigmoid(W1 x + b1) * t + W2 x + b2)` on
/// standardized features.
///
/// Parameters are stored flat as `[W1 (dim), b1, W2 (dim), b2, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticUpliftModel {
    pub standardizer: Standardizer,
    params: Vec<f64>,
}

impl LogisticUpliftModel {
    /// Zero weights with `C = 1`.
    pub fn new(standardizer: Standardizer) -> Self {
        let dim = standardizer.dim();
        let mut params = vec![0.0; 2 * dim + 3];
        params[2 * dim + 2] = 1.0;
        Self { standardizer, params }
    }

    pub fn from_params(standardizer: Standardizer, params: Vec<f64>) -> Result<Self> {
        if params.len() != 2 * standardizer.dim() + 3 {
            return Err(Error::Argument(format!(
                "{} parameters for input dimension {}",
                params.len(),
                standardizer.dim()
            )));
        }
        Ok(Self { standardizer, params })
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn scale(&self) -> f64 {
        self.params[2 * self.dim() + 2]
    }

    /// Raw logit on already standardized features.
    fn logit_std(params: &[f64], xs: &[f64], t: f64) -> f64 {
        let dim = xs.len();
        let (w1, rest) = params.split_at(dim);
        let b1 = rest[0];
        let w2 = &rest[1..1 + dim];
        let b2 = rest[1 + dim];
        let c = rest[2 + dim];
        let h: f64 = w1.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() + b1;
        let lin: f64 = w2.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() + b2;
        c * sigmoid(h) * t + lin
    }

    pub fn logit(&self, x: &[f64], d: f64) -> Result<f64> {
        let xs = self.standardizer.apply(x)?;
        Ok(Self::logit_std(&self.params, &xs, d))
    }

    pub fn predict(&self, x: &[f64], d: f64) -> Result<f64> {
        Ok(sigmoid(self.logit(x, d)?).clamp(PROB_EPS, 1.0 - PROB_EPS))
    }

    pub fn predict_batch(&self, x: &[Vec<f64>], d: &[f64]) -> Result<Vec<f64>> {
        if x.len() != d.len() {
            return Err(Error::Argument(format!("{} inputs for {} treatments", x.len(), d.len())));
        }
        x.iter().zip(d).map(|(x, &d)| self.predict(x, d)).collect()
    }

    /// Predictions for every coupon level, one row per input.
    pub fn predict_grid(&self, x: &[f64], coupons: &[f64]) -> Result<Vec<f64>> {
        let xs = self.standardizer.apply(x)?;
        Ok(coupons
            .iter()
            .map(|&d| sigmoid(Self::logit_std(&self.params, &xs, d)).clamp(PROB_EPS, 1.0 - PROB_EPS))
            .collect())
    }

    /// Mean binary cross-entropy over `rows` of pre-standardized inputs, and
    /// its gradient accumulated into `grad` when given.
    pub fn loss_and_grad(
        params: &[f64],
        xs: &[Vec<f64>],
        d: &[f64],
        y: &[bool],
        rows: &[usize],
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let n = rows.len() as f64;
        let mut loss = 0.0;
        for &i in rows {
            let x = &xs[i];
            let dim = x.len();
            let (w1, rest) = params.split_at(dim);
            let b1 = rest[0];
            let c = rest[2 + dim];
            let h: f64 = w1.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b1;
            let s = sigmoid(h);
            let u = Self::logit_std(params, x, d[i]);
            // -log sigmoid(u) = softplus(-u)
            loss += if y[i] { crate::stats::softplus(-u) } else { crate::stats::softplus(u) };
            if let Some(g) = grad.as_deref_mut() {
                let du = (sigmoid(u) - if y[i] { 1.0 } else { 0.0 }) / n;
                let dh = du * c * d[i] * s * (1.0 - s);
                for k in 0..dim {
                    g[k] += dh * x[k];
                    g[dim + 1 + k] += du * x[k];
                }
                g[dim] += dh;
                g[2 * dim + 1] += du;
                g[2 * dim + 2] += du * s * d[i];
            }
        }
        loss / n
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Logistic,
            tensors: vec![
                (vec![self.dim()], self.standardizer.mean.clone()),
                (vec![self.dim()], self.standardizer.std.clone()),
                (vec![self.params.len()], self.params.clone()),
            ],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Logistic)?;
        if ck.tensors.len() != 3 {
            return Err(Error::Format("logistic checkpoint needs 3 tensors".into()));
        }
        let st = Standardizer { mean: ck.tensors[0].1.clone(), std: ck.tensors[1].1.clone() };
        Self::from_params(st, ck.tensors[2].1.clone()).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Fitted<M> {
    pub model: M,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minimizes binary cross-entropy with Adam on mini-batches reshuffled every
/// epoch. Features are standardized with statistics of `data` itself.
pub fn fit_logistic(data: &Dataset, config: &TrainConfig) -> Result<Fitted<LogisticUpliftModel>> {
    fit_logistic_with(data, config, Standardizer::fit(&data.x))
}

pub fn fit_logistic_with(
    data: &Dataset,
    config: &TrainConfig,
    standardizer: Standardizer,
) -> Result<Fitted<LogisticUpliftModel>> {
    config.validate()?;
    data.check()?;
    if standardizer.dim() != data.dim() {
        return Err(Error::Argument("standardizer dimension mismatch".into()));
    }
    let xs: Vec<Vec<f64>> = data.x.iter().map(|x| standardizer.apply(x)).collect::<Result<_>>()?;
    let mut model = LogisticUpliftModel::new(standardizer);
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut rng = stream(config.seed, Purpose::Training, &[1]);
    let mut grad = vec![0.0; model.params.len()];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(data.len(), config.batch_size, &mut rng) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let l = LogisticUpliftModel::loss_and_grad(&model.params, &xs, &data.d, &data.y, &batch, Some(&mut grad));
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss {l}")));
            }
            total += l * batch.len() as f64;
            adam.step(&mut model.params, &grad);
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(Fitted { model, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn synthetic(seed: u64, n: usize, truth: &LogisticUpliftModel) -> Dataset {
        let mut rng = stream(seed, Purpose::Synthetic, &[]);
        let coupons = [0.0, 0.1, 0.2, 0.3];
        let mut ds = Dataset::default();
        for _ in 0..n {
            let x: Vec<f64> = (0..truth.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let d = coupons[rng.random_range(0..coupons.len())];
            let p = truth.predict(&x, d).unwrap();
            ds.push(x, d, rng.random::<f64>() < p);
        }
        ds
    }

    fn truth() -> LogisticUpliftModel {
        LogisticUpliftModel::from_params(
            Standardizer::identity(3),
            vec![0.8, -0.5, 0.3, 0.4, 0.6, -0.9, 0.2, -0.3, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn zero_logit_predicts_one_half() {
        let m = LogisticUpliftModel::new(Standardizer::identity(2));
        assert_eq!(m.predict(&[0.3, -1.0], 0.0).unwrap(), 0.5);
        assert!(matches!(m.predict(&[0.3], 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn batch_prediction_preserves_order() {
        let m = truth();
        let x = vec![vec![1.0, 0.0, 0.0], vec![-1.0, 2.0, 0.5], vec![0.0, 0.0, 0.0]];
        let d = vec![0.1, 0.0, 0.3];
        let batch = m.predict_batch(&x, &d).unwrap();
        for i in 0..3 {
            assert_eq!(batch[i], m.predict(&x[i], d[i]).unwrap());
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = stream(5, Purpose::Synthetic, &[]);
        let ds = synthetic(6, 40, &truth());
        let rows: Vec<usize> = (0..ds.len()).collect();
        for _ in 0..100 {
            let params: Vec<f64> = (0..9).map(|_| rng.random_range(-1.5..1.5)).collect();
            let mut g = vec![0.0; 9];
            LogisticUpliftModel::loss_and_grad(&params, &ds.x, &ds.d, &ds.y, &rows, Some(&mut g));
            let num = numeric_gradient(&params, 1e-6, |p| {
                LogisticUpliftModel::loss_and_grad(p, &ds.x, &ds.d, &ds.y, &rows, None)
            });
            assert!(relative_error(&g, &num) < 1e-4, "{g:?} vs {num:?}");
        }
    }

    #[test]
    fn all_negative_labels_drive_predictions_down() {
        let mut ds = synthetic(7, 2000, &truth());
        ds.y.iter_mut().for_each(|y| *y = false);
        let fit = fit_logistic(&ds, &TrainConfig::default()).unwrap();
        for (x, &d) in ds.x.iter().zip(&ds.d) {
            assert!(fit.model.predict(x, d).unwrap() < 0.1);
        }
    }

    #[test]
    fn recovers_generating_model() {
        let t = truth();
        let train = synthetic(8, 20_000, &t);
        let held = synthetic(9, 5_000, &t);
        let fit = fit_logistic_with(&train, &TrainConfig::default(), Standardizer::identity(3)).unwrap();
        let mae: f64 = held
            .x
            .iter()
            .zip(&held.d)
            .map(|(x, &d)| (fit.model.predict(x, d).unwrap() - t.predict(x, d).unwrap()).abs())
            .sum::<f64>()
            / held.len() as f64;
        assert!(mae < 0.05, "MAE {mae}");
        let n = fit.epoch_losses.len();
        let early: f64 = fit.epoch_losses[..n / 2].iter().sum::<f64>() / (n / 2) as f64;
        let late: f64 = fit.epoch_losses[n / 2..].iter().sum::<f64>() / (n - n / 2) as f64;
        assert!(late <= early);
    }

    #[test]
    fn learns_monotone_uplift() {
        let t = truth();
        let fit = fit_logistic(&synthetic(10, 10_000, &t), &TrainConfig::default()).unwrap();
        assert!(fit.model.scale() > 0.0);
        let mut rng = stream(11, Purpose::Synthetic, &[]);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            assert!(fit.model.predict(&x, 0.3).unwrap() >= fit.model.predict(&x, 0.0).unwrap());
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(fit_logistic(&Dataset::default(), &TrainConfig::default()).is_err());
    }
}
