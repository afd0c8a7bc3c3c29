//! Variational autoencoder over instances, trained on the summed latent and
//! reconstruction losses, plus reconstruction-loss anomaly scoring.
//!
//! The encoder head emits `[mu, log_variance]` stacked; `sigma` is recovered
//! as `exp(log_variance / 2)` so it is always positive. Inference decodes
//! from `z = mu` (no sampling), which makes anomaly scores deterministic.

use rand::{seq::SliceRandom, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamState, Gradients, Network, Rng};
use crate::scalar::Scalar;

/// Floor applied to standardization std so constant features stay usable.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct VaeModel<F> {
    pub latent_dim: usize,
    pub feature_mean: Vec<F>,
    pub feature_std: Vec<F>,
    pub encoder: Network<F>,
    pub decoder: Network<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            epochs: 200,
            batch_size: 64,
            latent_dim: 8,
            hidden_dims: vec![64, 32],
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "epochs, batch_size and latent_dim must be positive".into(),
            ));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("hidden dims must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

impl<F: Scalar> VaeModel<F> {
    pub fn feature_dim(&self) -> usize {
        self.feature_mean.len()
    }

    /// `(x - mean) / std` componentwise.
    pub fn standardize(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.feature_dim() {
            return Err(Error::dimension("standardize input", self.feature_dim(), x.len()));
        }
        Ok(x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((xi, m), s)| (*xi - *m) / *s)
            .collect())
    }

    pub fn unstandardize(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.feature_dim() {
            return Err(Error::dimension("unstandardize input", self.feature_dim(), x.len()));
        }
        Ok(x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((xi, m), s)| *xi * *s + *m)
            .collect())
    }

    /// Split the encoder head output into `(mu, sigma, log_variance)`.
    fn encode(&self, x_std: &[F]) -> Result<(Vec<F>, Vec<F>, Vec<F>)> {
        let head = self.encoder.forward(x_std)?;
        let (mu, logvar) = head.split_at(self.latent_dim);
        let sigma: Vec<F> = logvar.iter().map(|lv| (*lv * F::c(0.5)).exp()).collect();
        Ok((mu.to_vec(), sigma, logvar.to_vec()))
    }

    /// Deterministic reconstruction-loss score: standardize, encode, decode
    /// from `z = mu`, return the Euclidean distance to the input.
    pub fn anomaly_score(&self, x: &[F]) -> Result<F> {
        let x_std = self.standardize(x)?;
        let (mu, _, _) = self.encode(&x_std)?;
        let x_prime = self.decoder.forward(&mu)?;
        recon_loss(&x_std, &x_prime)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: VaeModel<F> = serde_json::from_str(s)?;
        if model.feature_mean.len() != model.feature_std.len() {
            return Err(Error::Data("feature_mean/feature_std length mismatch".into()));
        }
        Ok(model)
    }
}

/// `z[i] = mu[i] + eps[i] * sigma[i]`.
pub fn reparameterize<F: Scalar>(mu: &[F], sigma: &[F], eps: &[F]) -> Result<Vec<F>> {
    if sigma.len() != mu.len() {
        return Err(Error::dimension("reparameterize sigma", mu.len(), sigma.len()));
    }
    if eps.len() != mu.len() {
        return Err(Error::dimension("reparameterize eps", mu.len(), eps.len()));
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .zip(eps)
        .map(|((m, s), e)| *m + *e * *s)
        .collect())
}

/// `1/2 * sum_i (mu_i^2 + sigma_i^2 - log sigma_i^2 - 1)` over the latent
/// dimensions of one sample. Zero exactly when mu = 0 and sigma = 1.
pub fn latent_loss<F: Scalar>(mu: &[F], sigma: &[F]) -> Result<F> {
    if sigma.len() != mu.len() {
        return Err(Error::dimension("latent_loss sigma", mu.len(), sigma.len()));
    }
    if sigma.iter().any(|s| *s <= F::zero()) {
        return Err(Error::Data("latent_loss requires sigma > 0".into()));
    }
    let mut acc = F::zero();
    for (m, s) in mu.iter().zip(sigma) {
        let s2 = *s * *s;
        acc = acc + *m * *m + s2 - s2.ln() - F::one();
    }
    Ok(acc * F::c(0.5))
}

/// Euclidean distance between input and reconstruction for one sample.
pub fn recon_loss<F: Scalar>(x: &[F], x_prime: &[F]) -> Result<F> {
    if x_prime.len() != x.len() {
        return Err(Error::dimension("recon_loss reconstruction", x.len(), x_prime.len()));
    }
    let mut acc = F::zero();
    for (a, b) in x.iter().zip(x_prime) {
        let d = *a - *b;
        acc = acc + d * d;
    }
    Ok(acc.sqrt())
}

/// Unweighted sum of the two loss terms.
pub fn total_loss<F: Scalar>(latent: F, recon: F) -> F {
    latent + recon
}

/// Per-sample loss and parameter gradients for a fixed noise draw `eps`.
///
/// Returns `(loss, encoder grads, decoder grads)`. Exposed for the
/// finite-difference checks as well as the training loop.
pub fn per_sample_grads<F: Scalar>(
    model: &VaeModel<F>,
    x_std: &[F],
    eps: &[F],
) -> Result<(F, Gradients<F>, Gradients<F>)> {
    let latent_dim = model.latent_dim;
    let enc_trace = model.encoder.forward_trace(x_std)?;
    let head = enc_trace.output();
    let (mu, logvar) = head.split_at(latent_dim);
    let sigma: Vec<F> = logvar.iter().map(|lv| (*lv * F::c(0.5)).exp()).collect();
    let z = reparameterize(mu, &sigma, eps)?;

    let dec_trace = model.decoder.forward_trace(&z)?;
    let x_prime = dec_trace.output();

    let recon = recon_loss(x_std, x_prime)?;
    let latent = latent_loss(mu, &sigma)?;
    let loss = total_loss(latent, recon);

    // d recon / d x' = (x' - x) / recon; zero residual has zero subgradient.
    let d_xprime: Vec<F> = if recon > F::zero() {
        x_prime
            .iter()
            .zip(x_std)
            .map(|(xp, x)| (*xp - *x) / recon)
            .collect()
    } else {
        vec![F::zero(); x_std.len()]
    };
    let dec_grads = model.decoder.backward(&dec_trace, &d_xprime)?;
    let dz = &dec_grads.input;

    // Head gradient: z = mu + eps * exp(lv/2), latent term added directly.
    //   d/d mu_i  = dz_i + mu_i
    //   d/d lv_i  = dz_i * eps_i * sigma_i / 2 + (sigma_i^2 - 1) / 2
    let half = F::c(0.5);
    let mut d_head = Vec::with_capacity(2 * latent_dim);
    for i in 0..latent_dim {
        d_head.push(dz[i] + mu[i]);
    }
    for i in 0..latent_dim {
        let s2 = sigma[i] * sigma[i];
        d_head.push(dz[i] * eps[i] * sigma[i] * half + (s2 - F::one()) * half);
    }
    let enc_grads = model.encoder.backward(&enc_trace, &d_head)?;

    Ok((loss, enc_grads, dec_grads))
}

/// Standardization stats over a set of instances, std floored at `STD_FLOOR`.
pub fn feature_stats<F: Scalar>(instances: &[Vec<F>]) -> Result<(Vec<F>, Vec<F>)> {
    let dim = instances
        .first()
        .ok_or_else(|| Error::Data("no instances".into()))?
        .len();
    let n = F::from_count(instances.len());
    let mut mean = vec![F::zero(); dim];
    for inst in instances {
        if inst.len() != dim {
            return Err(Error::dimension("instance features", dim, inst.len()));
        }
        for (m, v) in mean.iter_mut().zip(inst) {
            *m = *m + *v;
        }
    }
    for m in &mut mean {
        *m = *m / n;
    }
    let mut var = vec![F::zero(); dim];
    for inst in instances {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(inst) {
            let d = *x - *m;
            *v = *v + d * d;
        }
    }
    let floor = F::c(STD_FLOOR);
    let std: Vec<F> = var
        .iter()
        .map(|v| {
            let s = (*v / n).sqrt();
            if s > floor {
                s
            } else {
                floor
            }
        })
        .collect();
    Ok((mean, std))
}

/// Train a VAE on all instances; returns the model and the mean per-sample
/// epoch loss trace.
pub fn train_vae<F: Scalar>(instances: &[Vec<F>], cfg: &VaeTrainConfig) -> Result<(VaeModel<F>, Vec<F>)> {
    cfg.validate()?;
    if instances.len() < 2 {
        return Err(Error::Data(format!(
            "training a VAE needs at least 2 instances, got {}",
            instances.len()
        )));
    }
    let dim = instances[0].len();
    let (mean, std) = feature_stats(instances)?;

    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut enc_dims = vec![dim];
    enc_dims.extend_from_slice(&cfg.hidden_dims);
    enc_dims.push(2 * cfg.latent_dim);
    let enc_acts: Vec<Activation> = (0..enc_dims.len() - 1)
        .map(|i| {
            if i + 2 == enc_dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            }
        })
        .collect();
    let mut dec_dims = vec![cfg.latent_dim];
    dec_dims.extend(cfg.hidden_dims.iter().rev());
    dec_dims.push(dim);
    let dec_acts: Vec<Activation> = (0..dec_dims.len() - 1)
        .map(|i| {
            if i + 2 == dec_dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            }
        })
        .collect();

    let encoder = Network::init(&enc_dims, &enc_acts, &mut rng)?;
    let decoder = Network::init(&dec_dims, &dec_acts, &mut rng)?;
    let mut model = VaeModel {
        latent_dim: cfg.latent_dim,
        feature_mean: mean,
        feature_std: std,
        encoder,
        decoder,
    };

    let standardized: Vec<Vec<F>> = instances
        .iter()
        .map(|x| model.standardize(x))
        .collect::<Result<_>>()?;

    let lr = F::c(cfg.learning_rate);
    let mut enc_opt = AdamState::new(lr, model.encoder.param_count())?;
    let mut dec_opt = AdamState::new(lr, model.decoder.param_count())?;

    let mut indices: Vec<usize> = (0..standardized.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = F::zero();
        for batch in indices.chunks(cfg.batch_size) {
            let mut enc_acc = Gradients::zeros_like(&model.encoder);
            let mut dec_acc = Gradients::zeros_like(&model.decoder);
            for &i in batch {
                let eps: Vec<F> = (0..cfg.latent_dim)
                    .map(|_| F::sample_standard_normal(&mut rng))
                    .collect();
                let (loss, eg, dg) = per_sample_grads(&model, &standardized[i], &eps)?;
                epoch_loss = epoch_loss + loss;
                enc_acc.accumulate(&eg);
                dec_acc.accumulate(&dg);
            }
            let inv = F::one() / F::from_count(batch.len());
            enc_acc.scale(inv);
            dec_acc.scale(inv);
            adam_step(&mut model.encoder, &enc_acc, &mut enc_opt)?;
            adam_step(&mut model.decoder, &dec_acc, &mut dec_opt)?;
        }
        let mean_loss = epoch_loss / F::from_count(standardized.len());
        if !mean_loss.is_finite() {
            return Err(Error::Numerical(format!("NaN VAE loss at epoch {epoch}")));
        }
        if !model.encoder.all_finite() || !model.decoder.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite VAE parameters at epoch {epoch}"
            )));
        }
        trace.push(mean_loss);
    }
    Ok((model, trace))
}
