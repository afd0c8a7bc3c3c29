//! Synthetic contaminated-bag generator.
//!
//! Each bag draws a latent signal; pure instances are a fixed linear map of
//! that signal plus noise, contaminated instances are a convex mixture of a
//! pure draw and a shifted background distribution (the mixed-pixel story).
//! Labels depend only on the latent signal, never on the contamination.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mir::Bag;
use crate::nn::Rng;
use crate::scalar::Scalar;

/// Dimension of the per-bag latent signal.
const SIGNAL_DIM: usize = 4;
/// Offset of the background distribution mean from the crop distribution.
const BACKGROUND_SHIFT: f64 = 16.0;
/// Quadratic coefficient of the yield response.
const QUAD_COEFF: f64 = 0.05;
/// Std of the label noise.
const LABEL_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_bags_per_year: usize,
    pub year_start: i32,
    pub year_end: i32,
    pub instances_per_bag: usize,
    pub feature_dim: usize,
    pub contamination_rate: f64,
    pub mixing_fraction: f64,
    pub noise_sigma: f64,
    pub year_drift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_bags_per_year: 50,
            year_start: 2008,
            year_end: 2015,
            instances_per_bag: 100,
            feature_dim: 16,
            contamination_rate: 0.2,
            mixing_fraction: 0.6,
            noise_sigma: 0.75,
            year_drift: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bags_per_year == 0 {
            return Err(Error::Config("n_bags_per_year must be >= 1".into()));
        }
        if self.year_end < self.year_start {
            return Err(Error::Config("year range is empty".into()));
        }
        if self.instances_per_bag == 0 {
            return Err(Error::Config("instances_per_bag must be >= 1".into()));
        }
        if self.contamination_rate > 0.0 && self.instances_per_bag < 2 {
            return Err(Error::Config(
                "instances_per_bag must be >= 2 when contamination_rate > 0".into(),
            ));
        }
        if self.feature_dim == 0 || self.feature_dim > 159 {
            return Err(Error::Config("feature_dim must lie in [1, 159]".into()));
        }
        if !(0.0..1.0).contains(&self.contamination_rate) {
            return Err(Error::Config("contamination_rate must lie in [0, 1)".into()));
        }
        if !(self.mixing_fraction > 0.0 && self.mixing_fraction <= 1.0) {
            return Err(Error::Config("mixing_fraction must lie in (0, 1]".into()));
        }
        if self.noise_sigma <= 0.0 {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn n_years(&self) -> usize {
        (self.year_end - self.year_start + 1) as usize
    }
}

/// Everything the generator knows that a real dataset would hide.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct GroundTruth<F> {
    /// Per-bag latent signal, in dataset order.
    pub bag_signals: Vec<Vec<F>>,
    /// Linear map from signal space to feature space, row-major (D x S).
    pub feature_map: Vec<Vec<F>>,
    /// Label coefficient vector over the signal.
    pub label_weights: Vec<F>,
    /// Mean of the background (non-crop) distribution in feature space.
    pub background_mean: Vec<F>,
    /// Total instances flagged as anomalies.
    pub n_flagged: usize,
    /// Total instances generated.
    pub n_instances: usize,
}

fn normal_vec<F: Scalar>(rng: &mut Rng, n: usize) -> Vec<F> {
    (0..n).map(|_| F::sample_standard_normal(rng)).collect()
}

/// Generate a contaminated bag dataset plus its ground truth.
pub fn generate<F: Scalar>(cfg: &SynthConfig) -> Result<(Vec<Bag<F>>, GroundTruth<F>)> {
    cfg.validate()?;
    let d = cfg.feature_dim;
    let mut rng = Rng::seed_from_u64(cfg.seed);

    let scale = F::c(1.0 / (SIGNAL_DIM as f64).sqrt());
    let feature_map: Vec<Vec<F>> = (0..d)
        .map(|_| normal_vec::<F>(&mut rng, SIGNAL_DIM).iter().map(|v| *v * scale).collect())
        .collect();
    let mut label_weights: Vec<F> = normal_vec(&mut rng, SIGNAL_DIM);
    let norm = label_weights
        .iter()
        .fold(F::zero(), |a, v| a + *v * *v)
        .sqrt();
    for w in &mut label_weights {
        *w = *w / norm;
    }
    let background_mean: Vec<F> = normal_vec::<F>(&mut rng, d)
        .iter()
        .map(|v| *v + F::c(BACKGROUND_SHIFT))
        .collect();

    let alpha = F::c(cfg.mixing_fraction);
    let one_minus_alpha = F::one() - alpha;
    let noise = F::c(cfg.noise_sigma);

    let mut bags = Vec::with_capacity(cfg.n_years() * cfg.n_bags_per_year);
    let mut bag_signals = Vec::with_capacity(bags.capacity());
    let mut n_flagged = 0usize;
    let mut n_instances = 0usize;

    for t in 0..cfg.n_years() {
        let year = cfg.year_start + t as i32;
        let drift = F::c(cfg.year_drift * t as f64);
        for j in 0..cfg.n_bags_per_year {
            let signal: Vec<F> = normal_vec::<F>(&mut rng, SIGNAL_DIM)
                .iter()
                .map(|v| *v + drift)
                .collect();
            let projected: Vec<F> = feature_map
                .iter()
                .map(|row| row.iter().zip(&signal).fold(F::zero(), |a, (r, s)| a + *r * *s))
                .collect();

            let mut instances = Vec::with_capacity(cfg.instances_per_bag);
            let mut flags = Vec::with_capacity(cfg.instances_per_bag);
            for _ in 0..cfg.instances_per_bag {
                let flagged = f64::sample_uniform(&mut rng, 0.0, 1.0) < cfg.contamination_rate;
                let pure: Vec<F> = projected
                    .iter()
                    .map(|p| *p + noise * F::sample_standard_normal(&mut rng))
                    .collect();
                let inst = if flagged {
                    pure.iter()
                        .zip(&background_mean)
                        .map(|(p, b)| {
                            alpha * *p
                                + one_minus_alpha * (*b + F::sample_standard_normal(&mut rng))
                        })
                        .collect()
                } else {
                    pure
                };
                instances.push(inst);
                flags.push(flagged);
                if flagged {
                    n_flagged += 1;
                }
                n_instances += 1;
            }

            let ws = label_weights
                .iter()
                .zip(&signal)
                .fold(F::zero(), |a, (w, s)| a + *w * *s);
            let label = ws
                + F::c(QUAD_COEFF) * ws * ws
                + F::c(LABEL_NOISE) * F::sample_standard_normal(&mut rng);

            bags.push(Bag {
                bag_id: format!("y{year}-b{j:04}"),
                year,
                label: Some(label),
                instances,
                anomaly_flags: Some(flags),
            });
            bag_signals.push(signal);
        }
    }

    Ok((
        bags,
        GroundTruth {
            bag_signals,
            feature_map,
            label_weights,
            background_mean,
            n_flagged,
            n_instances,
        },
    ))
}

/// Mean of the true inlier instances: the prototype an oracle detector
/// would produce.
pub fn oracle_prototype<F: Scalar>(bag: &Bag<F>) -> Result<Vec<F>> {
    let flags = bag
        .anomaly_flags
        .as_ref()
        .ok_or_else(|| Error::Data(format!("bag {} has no anomaly flags", bag.bag_id)))?;
    if flags.len() != bag.n_instances() {
        return Err(Error::dimension(
            format!("bag {} anomaly_flags", bag.bag_id),
            bag.n_instances(),
            flags.len(),
        ));
    }
    let inliers: Vec<&Vec<F>> = bag
        .instances
        .iter()
        .zip(flags)
        .filter(|(_, f)| !**f)
        .map(|(i, _)| i)
        .collect();
    if inliers.is_empty() {
        return Err(Error::Data(format!("bag {} has no inlier instances", bag.bag_id)));
    }
    let dim = inliers[0].len();
    let mut acc = vec![F::zero(); dim];
    for inst in &inliers {
        for (a, v) in acc.iter_mut().zip(inst.iter()) {
            *a = *a + *v;
        }
    }
    let inv = F::one() / F::from_count(inliers.len());
    for a in &mut acc {
        *a = *a * inv;
    }
    Ok(acc)
}
