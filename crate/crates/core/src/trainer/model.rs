//! Desk-scale model architectures with hand-derived gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::masking::{ArraySpec, ParamLayout};

use super::data::Targets;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    LinearRegression,
    LogisticRegression,
    MlpOneHidden { hidden_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, input_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig(
                "input_dim and output_dim must be >= 1".into(),
            ));
        }
        if let Architecture::MlpOneHidden { hidden_dim } = architecture {
            if hidden_dim == 0 {
                return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
            }
        }
        Ok(ModelSpec {
            architecture,
            input_dim,
            output_dim,
        })
    }

    /// Named weight arrays; the flat parameter vector is their row-major
    /// concatenation. None of the architectures carry biases.
    pub fn param_layout(&self) -> ParamLayout {
        match self.architecture {
            Architecture::LinearRegression | Architecture::LogisticRegression => {
                ParamLayout::new(vec![ArraySpec::new("w", self.output_dim, self.input_dim)])
            }
            Architecture::MlpOneHidden { hidden_dim } => ParamLayout::new(vec![
                ArraySpec::new("w1", hidden_dim, self.input_dim),
                ArraySpec::new("w2", self.output_dim, hidden_dim),
            ]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_layout().total_len()
    }

    /// Gaussian init scaled by 1/sqrt(fan_in).
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let layout = self.param_layout();
        let mut theta = Vec::with_capacity(layout.total_len());
        for a in &layout.arrays {
            let scale = 1.0 / (a.cols as f64).sqrt();
            for _ in 0..a.len() {
                let g: f64 = StandardNormal.sample(rng);
                theta.push(scale * g);
            }
        }
        theta
    }

    /// Mean loss over the batch and its gradient with respect to the flat
    /// parameter vector. Regression targets use squared error
    /// `1/(2n) * sum (pred - y)^2`; label targets use softmax cross-entropy.
    pub fn loss_and_grad(
        &self,
        theta: &[f64],
        features: &[f64],
        targets: &Targets,
        batch: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                theta.len()
            )));
        }
        if batch.is_empty() {
            return Ok((0.0, vec![0.0; theta.len()]));
        }
        match self.architecture {
            Architecture::LinearRegression => self.linear_like(theta, features, targets, batch),
            Architecture::LogisticRegression => self.linear_like(theta, features, targets, batch),
            Architecture::MlpOneHidden { hidden_dim } => {
                self.mlp(theta, features, targets, batch, hidden_dim)
            }
        }
    }

    /// Single weight matrix: regression head or softmax head depending on
    /// the targets.
    fn linear_like(
        &self,
        theta: &[f64],
        features: &[f64],
        targets: &Targets,
        batch: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let (din, dout) = (self.input_dim, self.output_dim);
        let n = batch.len();
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        let mut logits = vec![0.0; dout];
        for &sample in batch {
            let x = &features[sample * din..(sample + 1) * din];
            for o in 0..dout {
                let w = &theta[o * din..(o + 1) * din];
                logits[o] = dot(w, x);
            }
            let delta = self.output_delta(&logits, targets, sample, n, &mut loss)?;
            for o in 0..dout {
                if delta[o] == 0.0 {
                    continue;
                }
                let row = &mut grad[o * din..(o + 1) * din];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += delta[o] * xi;
                }
            }
        }
        Ok((loss, grad))
    }

    fn mlp(
        &self,
        theta: &[f64],
        features: &[f64],
        targets: &Targets,
        batch: &[usize],
        hidden: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let (din, dout) = (self.input_dim, self.output_dim);
        let n = batch.len();
        let w1_len = hidden * din;
        let (w1, w2) = theta.split_at(w1_len);
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        let mut h = vec![0.0; hidden];
        let mut logits = vec![0.0; dout];
        for &sample in batch {
            let x = &features[sample * din..(sample + 1) * din];
            for j in 0..hidden {
                h[j] = dot(&w1[j * din..(j + 1) * din], x).tanh();
            }
            for o in 0..dout {
                logits[o] = dot(&w2[o * hidden..(o + 1) * hidden], &h);
            }
            let delta = self.output_delta(&logits, targets, sample, n, &mut loss)?;
            // dW2 = delta h^T; dh = W2^T delta; dpre = dh (1 - h^2); dW1 = dpre x^T
            let (g1, g2) = grad.split_at_mut(w1_len);
            let mut dh = vec![0.0; hidden];
            for o in 0..dout {
                if delta[o] == 0.0 {
                    continue;
                }
                let row = &mut g2[o * hidden..(o + 1) * hidden];
                let w2_row = &w2[o * hidden..(o + 1) * hidden];
                for j in 0..hidden {
                    row[j] += delta[o] * h[j];
                    dh[j] += delta[o] * w2_row[j];
                }
            }
            for j in 0..hidden {
                let dpre = dh[j] * (1.0 - h[j] * h[j]);
                if dpre == 0.0 {
                    continue;
                }
                let row = &mut g1[j * din..(j + 1) * din];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += dpre * xi;
                }
            }
        }
        Ok((loss, grad))
    }

    /// Accumulates the sample's loss contribution and returns dL/dlogits.
    fn output_delta(
        &self,
        logits: &[f64],
        targets: &Targets,
        sample: usize,
        n: usize,
        loss: &mut f64,
    ) -> Result<Vec<f64>> {
        let dout = logits.len();
        let inv_n = 1.0 / n as f64;
        match targets {
            Targets::Regression { values, output_dim } => {
                if *output_dim != dout {
                    return Err(Error::ShapeMismatch(format!(
                        "targets have {output_dim} outputs, model has {dout}"
                    )));
                }
                let y = &values[sample * dout..(sample + 1) * dout];
                let mut delta = vec![0.0; dout];
                for o in 0..dout {
                    let r = logits[o] - y[o];
                    *loss += 0.5 * inv_n * r * r;
                    delta[o] = inv_n * r;
                }
                Ok(delta)
            }
            Targets::Labels(labels) => {
                let label = labels[sample];
                if label >= dout {
                    return Err(Error::InvalidConfig(format!(
                        "label {label} out of range for {dout} classes"
                    )));
                }
                // stable softmax cross-entropy
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for &l in logits {
                    z += (l - max).exp();
                }
                let log_z = max + z.ln();
                *loss += inv_n * (log_z - logits[label]);
                let mut delta = vec![0.0; dout];
                for o in 0..dout {
                    let p = (logits[o] - log_z).exp();
                    delta[o] = inv_n * (p - if o == label { 1.0 } else { 0.0 });
                }
                Ok(delta)
            }
        }
    }

    /// Evaluation metric on a dataset split: mean squared error for
    /// regression targets (lower is better), accuracy for labels (higher is
    /// better).
    pub fn eval_metric(&self, theta: &[f64], features: &[f64], targets: &Targets) -> Result<f64> {
        let din = self.input_dim;
        let dout = self.output_dim;
        let n = features.len() / din;
        if n == 0 {
            return Ok(f64::NAN);
        }
        let mut logits = vec![0.0; dout];
        match targets {
            Targets::Regression { values, .. } => {
                let mut sum = 0.0;
                for s in 0..n {
                    self.forward_logits(theta, &features[s * din..(s + 1) * din], &mut logits);
                    let y = &values[s * dout..(s + 1) * dout];
                    for o in 0..dout {
                        let r = logits[o] - y[o];
                        sum += r * r;
                    }
                }
                Ok(sum / n as f64)
            }
            Targets::Labels(labels) => {
                let mut correct = 0usize;
                for s in 0..n {
                    self.forward_logits(theta, &features[s * din..(s + 1) * din], &mut logits);
                    let mut best = 0;
                    for o in 1..dout {
                        if logits[o] > logits[best] {
                            best = o;
                        }
                    }
                    if best == labels[s] {
                        correct += 1;
                    }
                }
                Ok(correct as f64 / n as f64)
            }
        }
    }

    fn forward_logits(&self, theta: &[f64], x: &[f64], logits: &mut [f64]) {
        let din = self.input_dim;
        match self.architecture {
            Architecture::LinearRegression | Architecture::LogisticRegression => {
                for (o, l) in logits.iter_mut().enumerate() {
                    *l = dot(&theta[o * din..(o + 1) * din], x);
                }
            }
            Architecture::MlpOneHidden { hidden_dim } => {
                let (w1, w2) = theta.split_at(hidden_dim * din);
                let h: Vec<f64> = (0..hidden_dim)
                    .map(|j| dot(&w1[j * din..(j + 1) * din], x).tanh())
                    .collect();
                for (o, l) in logits.iter_mut().enumerate() {
                    *l = dot(&w2[o * hidden_dim..(o + 1) * hidden_dim], &h);
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
