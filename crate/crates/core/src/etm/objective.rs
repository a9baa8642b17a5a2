//! Evidence lower bound and its analytic gradient.
//!
//! Per document `d`:
//!
//! ```text
//! elbo_d = sum_w c_dw * ln(theta_d . beta[:, w])  -  KL(N(mu_d, sigma_d^2) || N(0, I))
//! theta_d = softmax(mu_d + sigma_d * eps_d)
//! beta_k  = softmax(rho alpha_k)
//! ```

use crate::corpus::BowVector;
use crate::embeddings::EmbeddingMatrix;
use crate::linalg::{axpy, dot, softmax, Matrix};

use super::encoder::EncoderParams;
use super::{beta_from, EtmError, Result};

/// Lower bound on the mixture probability inside the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Reparameterized logistic-normal draw: `softmax(mu + exp(logvar/2) * noise)`.
pub fn theta_from(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    softmax(&z)
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))`.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Batch objective and gradients of the summed ELBO (ascent direction).
#[derive(Debug, Clone)]
pub struct ElboOutput {
    pub elbo: f64,
    pub log_likelihood: f64,
    pub kl: f64,
    /// Per-document KL terms, in batch order.
    pub kl_per_doc: Vec<f64>,
    /// Topic proportions drawn for each document.
    pub thetas: Vec<Vec<f64>>,
    pub encoder_grad: EncoderParams,
    /// `K x D`
    pub alpha_grad: Matrix,
    /// `V x D`, present only when requested.
    pub rho_grad: Option<Matrix>,
}

pub fn elbo_and_grads(
    batch: &[BowVector],
    params: &EncoderParams,
    alpha: &Matrix,
    rho: &EmbeddingMatrix,
    noise_per_doc: &[Vec<f64>],
    with_rho_grad: bool,
) -> Result<ElboOutput> {
    if batch.is_empty() {
        return Err(EtmError::InvalidInput("empty batch".into()));
    }
    if noise_per_doc.len() != batch.len() {
        return Err(EtmError::InvalidInput(format!(
            "{} noise vectors for {} documents",
            noise_per_doc.len(),
            batch.len()
        )));
    }
    let k = alpha.rows();
    let v = rho.len();
    if params.num_topics() != k || params.vocab_size() != v {
        return Err(EtmError::DimensionMismatch(format!(
            "encoder is {}x{} (V x K), model is {v}x{k}",
            params.vocab_size(),
            params.num_topics()
        )));
    }
    if let Some(noise) = noise_per_doc.iter().find(|n| n.len() != k) {
        return Err(EtmError::DimensionMismatch(format!(
            "noise vector of length {} for {k} topics",
            noise.len()
        )));
    }

    let beta = beta_from(alpha, rho)?;
    let mut encoder_grad = EncoderParams::zeros(v, params.hidden_size(), k);
    // d(log-likelihood)/d(beta), accumulated over the batch.
    let mut d_beta = Matrix::zeros(k, v);
    let mut log_likelihood = 0.0;
    let mut kl_total = 0.0;
    let mut kl_per_doc = Vec::with_capacity(batch.len());
    let mut thetas = Vec::with_capacity(batch.len());

    for (bow, noise) in batch.iter().zip(noise_per_doc) {
        if let Some(&(id, _)) = bow.entries().iter().find(|&&(id, _)| id >= v) {
            return Err(EtmError::InvalidInput(format!(
                "token id {id} out of range for vocabulary of {v}"
            )));
        }
        let trace = params.forward(bow);
        let sigma: Vec<f64> = trace.logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
        let theta = theta_from(&trace.mu, &trace.logvar, noise);

        let mut d_theta = vec![0.0; k];
        for &(w, count) in bow.entries() {
            let c = count as f64;
            let p: f64 = (0..k).map(|t| theta[t] * beta.get(t, w)).sum();
            log_likelihood += c * p.max(LOG_FLOOR).ln();
            if p > LOG_FLOOR {
                let r = c / p;
                for t in 0..k {
                    d_theta[t] += r * beta.get(t, w);
                    d_beta.row_mut(t)[w] += r * theta[t];
                }
            }
        }

        // softmax backward: dz = theta * (d_theta - theta . d_theta)
        let mean = dot(&theta, &d_theta);
        let d_z: Vec<f64> = theta
            .iter()
            .zip(&d_theta)
            .map(|(th, g)| th * (g - mean))
            .collect();

        let kl = gaussian_kl(&trace.mu, &trace.logvar);
        kl_total += kl;
        kl_per_doc.push(kl);

        let d_mu: Vec<f64> = d_z.iter().zip(&trace.mu).map(|(g, m)| g - m).collect();
        let d_logvar: Vec<f64> = (0..k)
            .map(|t| d_z[t] * 0.5 * sigma[t] * noise[t] - 0.5 * (trace.logvar[t].exp() - 1.0))
            .collect();
        params.backward(&trace, &d_mu, &d_logvar, &mut encoder_grad);
        thetas.push(theta);
    }

    // beta_k = softmax(l_k): dl_kw = beta_kw * (G_kw - sum_v G_kv beta_kv)
    let d = rho.dim();
    let mut alpha_grad = Matrix::zeros(k, d);
    let mut rho_grad = with_rho_grad.then(|| Matrix::zeros(v, d));
    for t in 0..k {
        let b = beta.row(t);
        let g = d_beta.row(t);
        let mean = dot(b, g);
        for w in 0..v {
            let dl = b[w] * (g[w] - mean);
            if dl == 0.0 {
                continue;
            }
            axpy(dl, rho.row(w), alpha_grad.row_mut(t));
            if let Some(rg) = rho_grad.as_mut() {
                axpy(dl, alpha.row(t), rg.row_mut(w));
            }
        }
    }

    let elbo = log_likelihood - kl_total;
    if elbo.is_nan() {
        return Err(EtmError::Numerical("ELBO is NaN; lower the learning rate".into()));
    }
    Ok(ElboOutput {
        elbo,
        log_likelihood,
        kl: kl_total,
        kl_per_doc,
        thetas,
        encoder_grad,
        alpha_grad,
        rho_grad,
    })
}
