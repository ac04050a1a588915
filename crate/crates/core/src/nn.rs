//! Minimal feed-forward network with manual backpropagation and an Adam optimizer.
//!
//! Parameters live in one flat vector so optimizers, checkpoints and
//! finite-difference checks can treat every model uniformly. Hidden layers use
//! `tanh`; the output layer is linear and the caller applies whatever link it
//! needs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded during a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[k]` the output of layer `k`.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Glorot-initialized network; `sizes` lists every layer width including
    /// input and output.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let count = Self::param_count(sizes);
        let mut params = Vec::with_capacity(count);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == Self::param_count(sizes)).then(|| Self { sizes: sizes.to_vec(), params })
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Scales the output layer's weights and sets its biases, used to start
    /// policies close to a known action.
    pub fn init_output_layer(&mut self, weight_scale: f64, biases: &[f64]) {
        let n = self.sizes.len();
        let (fan_in, fan_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        assert_eq!(biases.len(), fan_out);
        let start = self.params.len() - (fan_in * fan_out + fan_out);
        for w in &mut self.params[start..start + fan_in * fan_out] {
            *w *= weight_scale;
        }
        self.params[start + fan_in * fan_out..].copy_from_slice(biases);
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for (k, w) in self.sizes.windows(2).enumerate() {
            x = self.layer(offset, w[0], w[1], &x, k + 1 < layers);
            offset += w[0] * w[1] + w[1];
        }
        x
    }

    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        assert_eq!(input.len(), self.input_dim());
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for (k, w) in self.sizes.windows(2).enumerate() {
            let next = self.layer(offset, w[0], w[1], &acts[k], k + 1 < layers);
            acts.push(next);
            offset += w[0] * w[1] + w[1];
        }
        Trace { acts }
    }

    fn layer(&self, offset: usize, fan_in: usize, fan_out: usize, x: &[f64], hidden: bool) -> Vec<f64> {
        let weights = &self.params[offset..offset + fan_in * fan_out];
        let biases = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        (0..fan_out)
            .map(|j| {
                let row = &weights[j * fan_in..(j + 1) * fan_in];
                let z = biases[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if hidden {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/doutput`, and returns
    /// `dL/dinput`.
    pub fn backward(&self, trace: &Trace, d_output: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = d_output.to_vec();
        for k in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            if k + 1 < layers {
                // tanh' = 1 - y^2
                for (d, y) in delta.iter_mut().zip(&trace.acts[k + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let o = offsets[k];
            let input = &trace.acts[k];
            for j in 0..fan_out {
                let row = &mut grad[o + j * fan_in..o + (j + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[j] * x;
                }
                grad[o + fan_in * fan_out + j] += delta[j];
            }
            let weights = &self.params[o..o + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (j, d) in delta.iter().enumerate() {
                for (p, w) in prev.iter_mut().zip(&weights[j * fan_in..(j + 1) * fan_in]) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        delta
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Gradient-descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Central finite-difference gradient of `f` at `params`. Test support for
/// every analytic gradient in the crate.
pub fn numeric_gradient(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(3, Purpose::Synthetic, &[]);
        for _ in 0..20 {
            let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let coef = [0.7, -1.3];
            let loss = |p: &[f64]| {
                let n = Mlp::from_params(net.sizes(), p.to_vec()).unwrap();
                n.forward(&x).iter().zip(coef).map(|(o, c)| c * o * o).sum::<f64>()
            };
            let trace = net.forward_trace(&x);
            let d_out: Vec<f64> = trace.output().iter().zip(coef).map(|(o, c)| 2.0 * c * o).collect();
            let mut grad = vec![0.0; net.params().len()];
            net.backward(&trace, &d_out, &mut grad);
            let num = numeric_gradient(net.params(), 1e-6, loss);
            assert!(relative_error(&grad, &num) < 1e-6);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = stream(4, Purpose::Synthetic, &[]);
        let net = Mlp::new(&[4, 6, 1], &mut rng);
        let x = vec![0.3, -0.2, 0.9, 0.1];
        let trace = net.forward_trace(&x);
        let mut grad = vec![0.0; net.params().len()];
        let dx = net.backward(&trace, &[1.0], &mut grad);
        let num = numeric_gradient(&x, 1e-6, |xi| net.forward(xi)[0]);
        assert!(relative_error(&dx, &num) < 1e-6);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2));
    }
}
