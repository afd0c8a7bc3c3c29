//! Shared MLP regressor: two ReLU hidden layers (128 and 64 units by
//! default) mapping a feature vector to a scalar. Inputs and targets are
//! standardized internally; predictions are de-standardized on the way out.

use rand::{seq::SliceRandom, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamState, Gradients, Network, Rng};
use crate::scalar::Scalar;
use crate::vae::{feature_stats, STD_FLOOR};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct MlpRegressor<F> {
    pub network: Network<F>,
    pub input_mean: Vec<F>,
    pub input_std: Vec<F>,
    pub target_mean: F,
    pub target_std: F,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for RegressorTrainConfig {
    fn default() -> Self {
        RegressorTrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            hidden_dims: vec![128, 64],
            seed: 0,
        }
    }
}

impl RegressorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("hidden dims must be positive".into()));
        }
        Ok(())
    }
}

impl<F: Scalar> MlpRegressor<F> {
    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn predict(&self, x: &[F]) -> Result<F> {
        if x.len() != self.input_dim() {
            return Err(Error::dimension("regressor input", self.input_dim(), x.len()));
        }
        let std_x: Vec<F> = x
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_std)
            .map(|((xi, m), s)| (*xi - *m) / *s)
            .collect();
        let out = self.network.forward(&std_x)?;
        Ok(out[0] * self.target_std + self.target_mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fit the regressor on `(x, y)` pairs by mini-batch Adam on the MSE.
pub fn fit<F: Scalar>(pairs: &[(Vec<F>, F)], cfg: &RegressorTrainConfig) -> Result<MlpRegressor<F>> {
    let model = fit_warm(pairs, cfg, None)?;
    Ok(model)
}

/// Like [`fit`] but optionally continuing from an existing model instead of
/// a fresh initialization (used by the Prime-MIR refit loop).
pub fn fit_warm<F: Scalar>(
    pairs: &[(Vec<F>, F)],
    cfg: &RegressorTrainConfig,
    warm_start: Option<MlpRegressor<F>>,
) -> Result<MlpRegressor<F>> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(Error::Data(format!(
            "regressor fit needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let dim = pairs[0].0.len();
    let mut rng = Rng::seed_from_u64(cfg.seed);

    let mut model = match warm_start {
        Some(m) => {
            if m.input_dim() != dim {
                return Err(Error::dimension("warm start input", dim, m.input_dim()));
            }
            m
        }
        None => {
            let inputs: Vec<Vec<F>> = pairs.iter().map(|(x, _)| x.clone()).collect();
            let (input_mean, input_std) = feature_stats(&inputs)?;
            let n = F::from_count(pairs.len());
            let target_mean = pairs.iter().fold(F::zero(), |a, (_, y)| a + *y) / n;
            let var = pairs.iter().fold(F::zero(), |a, (_, y)| {
                let d = *y - target_mean;
                a + d * d
            }) / n;
            let floor = F::c(STD_FLOOR);
            let target_std = if var.sqrt() > floor { var.sqrt() } else { floor };

            let mut dims = vec![dim];
            dims.extend_from_slice(&cfg.hidden_dims);
            dims.push(1);
            let mut acts = vec![Activation::Relu; cfg.hidden_dims.len()];
            acts.push(Activation::Identity);
            let network = Network::init(&dims, &acts, &mut rng)?;
            MlpRegressor {
                network,
                input_mean,
                input_std,
                target_mean,
                target_std,
                seed: cfg.seed,
            }
        }
    };

    // Pre-standardized training set; targets in standardized units too.
    let data: Vec<(Vec<F>, F)> = pairs
        .iter()
        .map(|(x, y)| {
            if x.len() != dim {
                return Err(Error::dimension("regressor pair", dim, x.len()));
            }
            let sx: Vec<F> = x
                .iter()
                .zip(&model.input_mean)
                .zip(&model.input_std)
                .map(|((xi, m), s)| (*xi - *m) / *s)
                .collect();
            Ok((sx, (*y - model.target_mean) / model.target_std))
        })
        .collect::<Result<_>>()?;

    let mut opt = AdamState::new(F::c(cfg.learning_rate), model.network.param_count())?;
    let mut indices: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = F::zero();
        for batch in indices.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&model.network);
            for &i in batch {
                let (sx, sy) = &data[i];
                let trace = model.network.forward_trace(sx)?;
                let pred = trace.output()[0];
                let resid = pred - *sy;
                epoch_loss = epoch_loss + resid * resid;
                let g = model.network.backward(&trace, &[resid + resid])?;
                acc.accumulate(&g);
            }
            acc.scale(F::one() / F::from_count(batch.len()));
            adam_step(&mut model.network, &acc, &mut opt)?;
        }
        if !(epoch_loss / F::from_count(data.len())).is_finite() || !model.network.all_finite() {
            return Err(Error::Numerical(format!("NaN regressor loss at epoch {epoch}")));
        }
    }
    Ok(model)
}
