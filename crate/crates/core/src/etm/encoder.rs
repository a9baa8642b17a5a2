//! Amortized inference network: normalized bag of words to the mean and
//! log-variance of a Gaussian over topic logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BowVector;
use crate::linalg::{axpy, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Input layer, stored one row per vocabulary id (`V x H`) so sparse
    /// inputs touch only the rows they use.
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    /// `H x H`
    pub w_hidden: Matrix,
    pub b_hidden: Vec<f64>,
    /// `K x H`
    pub w_mu: Matrix,
    pub b_mu: Vec<f64>,
    /// `K x H`
    pub w_logvar: Matrix,
    pub b_logvar: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(vocab: usize, hidden: usize, topics: usize) -> Self {
        EncoderParams {
            w_in: Matrix::zeros(vocab, hidden),
            b_in: vec![0.0; hidden],
            w_hidden: Matrix::zeros(hidden, hidden),
            b_hidden: vec![0.0; hidden],
            w_mu: Matrix::zeros(topics, hidden),
            b_mu: vec![0.0; topics],
            w_logvar: Matrix::zeros(topics, hidden),
            b_logvar: vec![0.0; topics],
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for every
    /// weight and bias.
    pub fn random(vocab: usize, hidden: usize, topics: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(vocab, hidden, topics);
        let fans = [vocab, vocab, hidden, hidden, hidden, hidden, hidden, hidden];
        for (tensor, fan_in) in p.tensors_mut().into_iter().zip(fans) {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for x in tensor.iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn vocab_size(&self) -> usize {
        self.w_in.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.b_in.len()
    }

    pub fn num_topics(&self) -> usize {
        self.b_mu.len()
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            self.w_in.as_slice(),
            &self.b_in,
            self.w_hidden.as_slice(),
            &self.b_hidden,
            self.w_mu.as_slice(),
            &self.b_mu,
            self.w_logvar.as_slice(),
            &self.b_logvar,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.w_in.as_mut_slice(),
            &mut self.b_in,
            self.w_hidden.as_mut_slice(),
            &mut self.b_hidden,
            self.w_mu.as_mut_slice(),
            &mut self.b_mu,
            self.w_logvar.as_mut_slice(),
            &mut self.b_logvar,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, bow: &BowVector) -> EncoderTrace {
        let h = self.hidden_size();
        let k = self.num_topics();
        let total = bow.total();
        let input: Vec<(usize, f64)> = bow
            .entries()
            .iter()
            .map(|&(id, c)| (id, c as f64 / total as f64))
            .collect();

        let mut pre1 = self.b_in.clone();
        for &(id, x) in &input {
            axpy(x, self.w_in.row(id), &mut pre1);
        }
        let act1: Vec<f64> = pre1.iter().map(|&a| a.max(0.0)).collect();

        let mut pre2 = vec![0.0; h];
        self.w_hidden.mul_vec(&act1, &mut pre2);
        for (p, b) in pre2.iter_mut().zip(&self.b_hidden) {
            *p += b;
        }
        let act2: Vec<f64> = pre2.iter().map(|&a| a.max(0.0)).collect();

        let mut mu = vec![0.0; k];
        self.w_mu.mul_vec(&act2, &mut mu);
        let mut logvar = vec![0.0; k];
        self.w_logvar.mul_vec(&act2, &mut logvar);
        for i in 0..k {
            mu[i] += self.b_mu[i];
            logvar[i] += self.b_logvar[i];
        }

        EncoderTrace {
            input,
            pre1,
            act1,
            pre2,
            act2,
            mu,
            logvar,
        }
    }

    /// Accumulates the parameter gradient given upstream gradients on `mu`
    /// and `logvar`.
    pub(crate) fn backward(
        &self,
        trace: &EncoderTrace,
        d_mu: &[f64],
        d_logvar: &[f64],
        grads: &mut EncoderParams,
    ) {
        let h = self.hidden_size();
        grads.w_mu.add_outer(1.0, d_mu, &trace.act2);
        grads.w_logvar.add_outer(1.0, d_logvar, &trace.act2);
        axpy(1.0, d_mu, &mut grads.b_mu);
        axpy(1.0, d_logvar, &mut grads.b_logvar);

        let mut d_act2 = vec![0.0; h];
        self.w_mu.add_transpose_mul_vec(d_mu, &mut d_act2);
        self.w_logvar.add_transpose_mul_vec(d_logvar, &mut d_act2);
        let d_pre2: Vec<f64> = d_act2
            .iter()
            .zip(&trace.pre2)
            .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
            .collect();

        grads.w_hidden.add_outer(1.0, &d_pre2, &trace.act1);
        axpy(1.0, &d_pre2, &mut grads.b_hidden);
        let mut d_act1 = vec![0.0; h];
        self.w_hidden.add_transpose_mul_vec(&d_pre2, &mut d_act1);
        let d_pre1: Vec<f64> = d_act1
            .iter()
            .zip(&trace.pre1)
            .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
            .collect();

        for &(id, x) in &trace.input {
            axpy(x, &d_pre1, grads.w_in.row_mut(id));
        }
        axpy(1.0, &d_pre1, &mut grads.b_in);
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    input: Vec<(usize, f64)>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Mean and log-variance of the variational posterior for one document.
/// An empty document is encoded from an all-zeros input.
pub fn encode(bow: &BowVector, params: &EncoderParams) -> (Vec<f64>, Vec<f64>) {
    let trace = params.forward(bow);
    (trace.mu, trace.logvar)
}
