use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::BowVector;
use crate::embeddings::EmbeddingMatrix;
use crate::linalg::Matrix;

use super::encoder::EncoderParams;
use super::objective::elbo_and_grads;
use super::{beta_from, EtmConfig, EtmError, Result, TopicModel, TrainMeta};

/// Adaptive-moment optimizer over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One descent step on the loss whose gradient is `scale * grads`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], scale: f64) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                let gj = scale * g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Snapshot handed to the training observer after every epoch.
#[derive(Debug)]
pub struct EpochReport<'a> {
    /// 1-based.
    pub epoch: usize,
    pub mean_elbo: f64,
    pub beta: &'a Matrix,
    /// Largest `|sum(beta_k) - 1|` over topics.
    pub beta_sum_error: f64,
    pub beta_min: f64,
    /// Largest `|sum(theta_d) - 1|` over every sampled theta this epoch.
    pub theta_sum_error: f64,
    /// Smallest per-document KL term seen this epoch.
    pub min_kl: f64,
}

pub fn train_etm(
    corpus: &[BowVector],
    rho: &EmbeddingMatrix,
    config: &EtmConfig,
) -> Result<TopicModel> {
    train_etm_with(corpus, rho, config, |_| {})
}

/// Trains topic embeddings (and the encoder) by minibatch Adam on the
/// negative ELBO, calling `observer` after each epoch.
pub fn train_etm_with(
    corpus: &[BowVector],
    rho: &EmbeddingMatrix,
    config: &EtmConfig,
    mut observer: impl FnMut(&EpochReport<'_>),
) -> Result<TopicModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(EtmError::InvalidInput("empty corpus".into()));
    }
    let v = rho.len();
    if let Some(id) = corpus
        .iter()
        .flat_map(|b| b.entries().iter().map(|e| e.0))
        .find(|&id| id >= v)
    {
        return Err(EtmError::DimensionMismatch(format!(
            "document token id {id} but embeddings cover {v} words"
        )));
    }

    let k = config.num_topics;
    let d = rho.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = EncoderParams::random(v, config.hidden_size, k, &mut rng);
    let bound = 1.0 / (d as f64).sqrt();
    let mut alpha = Matrix::from_vec(
        k,
        d,
        (0..k * d).map(|_| rng.random_range(-bound..bound)).collect(),
    );
    let mut rho = rho.clone();

    let mut shapes: Vec<usize> = encoder.tensors().iter().map(|t| t.len()).collect();
    shapes.push(k * d);
    if config.train_embeddings {
        shapes.push(v * d);
    }
    let mut adam = Adam::new(&shapes, config.lr, config.beta1, config.beta2, config.eps);

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_elbo = Vec::with_capacity(config.epochs);
    let mut batch_docs: Vec<BowVector> = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut elbo_sum = 0.0;
        let mut theta_sum_error: f64 = 0.0;
        let mut min_kl = f64::INFINITY;

        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |message: String| EtmError::Diverged {
                epoch,
                batch: b + 1,
                message,
            };
            batch_docs.clear();
            batch_docs.extend(chunk.iter().map(|&i| corpus[i].clone()));
            let noise: Vec<Vec<f64>> = chunk
                .iter()
                .map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect())
                .collect();

            let out = elbo_and_grads(
                &batch_docs,
                &encoder,
                &alpha,
                &rho,
                &noise,
                config.train_embeddings,
            )
            .map_err(|e| diverged(e.to_string()))?;

            for &kl in &out.kl_per_doc {
                if !(kl >= -1e-9) {
                    return Err(diverged(format!("negative KL term {kl}")));
                }
                min_kl = min_kl.min(kl);
            }
            for theta in &out.thetas {
                theta_sum_error = theta_sum_error.max((theta.iter().sum::<f64>() - 1.0).abs());
            }
            if !out.elbo.is_finite() {
                return Err(diverged(format!("ELBO is {}", out.elbo)));
            }
            elbo_sum += out.elbo;

            // loss = -elbo / batch
            let scale = -1.0 / chunk.len() as f64;
            let grad_tensors = out.encoder_grad.tensors();
            let mut grads: Vec<&[f64]> = grad_tensors.to_vec();
            grads.push(out.alpha_grad.as_slice());
            let rho_grad = out.rho_grad.as_ref().map(|m| m.as_slice().to_vec());
            if let Some(rg) = rho_grad.as_deref() {
                grads.push(rg);
            }

            let mut rho_data = config.train_embeddings.then(|| rho.as_slice().to_vec());
            {
                let mut params: Vec<&mut [f64]> = encoder.tensors_mut().into_iter().collect();
                params.push(alpha.as_mut_slice());
                if let Some(data) = rho_data.as_mut() {
                    params.push(data.as_mut_slice());
                }
                adam.step(&mut params, &grads, scale);
            }
            if let Some(data) = rho_data {
                rho = EmbeddingMatrix::new(rho.tokens().to_vec(), d, data)
                    .map_err(|e| diverged(e.to_string()))?;
            }
            if !encoder.is_finite() || alpha.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(diverged("non-finite parameter after update".into()));
            }
        }

        let mean_elbo = elbo_sum / corpus.len() as f64;
        epoch_elbo.push(mean_elbo);
        let beta = beta_from(&alpha, &rho)?;
        let beta_sum_error = beta
            .iter_rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        let beta_min = beta.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        observer(&EpochReport {
            epoch,
            mean_elbo,
            beta: &beta,
            beta_sum_error,
            beta_min,
            theta_sum_error,
            min_kl,
        });
    }

    let meta = TrainMeta {
        config: config.clone(),
        vocab_hash: rho.vocab_hash(),
        epoch_elbo,
        num_docs: corpus.len(),
    };
    Ok(TopicModel::new(alpha, Arc::new(rho), meta)?.with_encoder(encoder))
}
