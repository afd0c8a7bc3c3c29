//! Bag data model, VAEMIR prototype construction and the four baseline
//! bag-representation strategies (Instance-MIR, Mean Regression, Prime-MIR,
//! Cluster-MIR).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest_centroid};
use crate::regressor::{fit, fit_warm, MlpRegressor, RegressorTrainConfig};
use crate::scalar::Scalar;
use crate::vae::VaeModel;

/// One labeled unit (a county-year): N instances plus an optional yield
/// label and, for synthetic data, per-instance ground-truth anomaly flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Bag<F> {
    pub bag_id: String,
    pub year: i32,
    #[serde(rename = "yield")]
    pub label: Option<F>,
    pub instances: Vec<Vec<F>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_flags: Option<Vec<bool>>,
}

impl<F: Scalar> Bag<F> {
    pub fn n_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.instances.first().map_or(0, |i| i.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::Data(format!("bag {} has no instances", self.bag_id)));
        }
        let dim = self.instances[0].len();
        for inst in &self.instances {
            if inst.len() != dim {
                return Err(Error::dimension(
                    format!("bag {} instance", self.bag_id),
                    dim,
                    inst.len(),
                ));
            }
            if inst.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("bag {} has non-finite features", self.bag_id)));
            }
        }
        if let Some(flags) = &self.anomaly_flags {
            if flags.len() != self.instances.len() {
                return Err(Error::dimension(
                    format!("bag {} anomaly_flags", self.bag_id),
                    self.instances.len(),
                    flags.len(),
                ));
            }
        }
        Ok(())
    }

    pub fn label_or_err(&self) -> Result<F> {
        self.label
            .ok_or_else(|| Error::Data(format!("bag {} is unlabeled", self.bag_id)))
    }
}

/// The single vector chosen to represent a bag for regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Prototype<F> {
    pub bag_id: String,
    pub vector: Vec<F>,
    pub k_used: usize,
}

/// Bag-representation strategy selector exposed to the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Instance,
    Mean,
    Prime,
    Cluster,
    Vaemir,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Instance,
        Method::Mean,
        Method::Prime,
        Method::Cluster,
        Method::Vaemir,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Instance => "instance",
            Method::Mean => "mean",
            Method::Prime => "prime",
            Method::Cluster => "cluster",
            Method::Vaemir => "vaemir",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instance" => Ok(Method::Instance),
            "mean" => Ok(Method::Mean),
            "prime" => Ok(Method::Prime),
            "cluster" => Ok(Method::Cluster),
            "vaemir" => Ok(Method::Vaemir),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected instance|mean|prime|cluster|vaemir)"
            ))),
        }
    }
}

/// How instance-level predictions are pooled into a bag prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Median,
}

fn aggregate<F: Scalar>(mut preds: Vec<F>, agg: Aggregation) -> F {
    match agg {
        Aggregation::Mean => {
            let n = F::from_count(preds.len());
            preds.iter().fold(F::zero(), |a, p| a + *p) / n
        }
        Aggregation::Median => {
            preds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = preds.len();
            if n % 2 == 1 {
                preds[n / 2]
            } else {
                (preds[n / 2 - 1] + preds[n / 2]) * F::c(0.5)
            }
        }
    }
}

/// Componentwise mean over the instances at `indices` (ascending order).
fn mean_of_indices<F: Scalar>(instances: &[Vec<F>], indices: &[usize]) -> Vec<F> {
    let dim = instances[0].len();
    let mut acc = vec![F::zero(); dim];
    for &i in indices {
        for (a, v) in acc.iter_mut().zip(&instances[i]) {
            *a = *a + *v;
        }
    }
    let inv = F::one() / F::from_count(indices.len());
    for a in &mut acc {
        *a = *a * inv;
    }
    acc
}

/// Mean of the k lowest-score instances; ties broken by lower instance
/// index. The unselected instances are discarded.
pub fn vaemir_prototype<F: Scalar>(bag: &Bag<F>, scores: &[F], k: usize) -> Result<Prototype<F>> {
    let n = bag.n_instances();
    if scores.len() != n {
        return Err(Error::dimension(format!("scores for bag {}", bag.bag_id), n, scores.len()));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "k = {k} out of range [1, {n}] for bag {}",
            bag.bag_id
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut selected: Vec<usize> = order[..k].to_vec();
    selected.sort_unstable();
    Ok(Prototype {
        bag_id: bag.bag_id.clone(),
        vector: mean_of_indices(&bag.instances, &selected),
        k_used: k,
    })
}

/// Componentwise mean of all instances; identical to `vaemir_prototype`
/// with `k = N`.
pub fn mean_prototype<F: Scalar>(bag: &Bag<F>) -> Result<Prototype<F>> {
    let n = bag.n_instances();
    if n == 0 {
        return Err(Error::Data(format!("bag {} has no instances", bag.bag_id)));
    }
    let all: Vec<usize> = (0..n).collect();
    Ok(Prototype {
        bag_id: bag.bag_id.clone(),
        vector: mean_of_indices(&bag.instances, &all),
        k_used: n,
    })
}

fn labeled_instance_pairs<F: Scalar>(bags: &[Bag<F>]) -> Result<Vec<(Vec<F>, F)>> {
    let mut pairs = Vec::new();
    for bag in bags {
        let label = bag.label_or_err()?;
        for inst in &bag.instances {
            pairs.push((inst.clone(), label));
        }
    }
    Ok(pairs)
}

/// Instance-MIR: every instance is a training sample carrying its bag label.
pub fn instance_mir_fit<F: Scalar>(
    bags: &[Bag<F>],
    cfg: &RegressorTrainConfig,
) -> Result<MlpRegressor<F>> {
    fit(&labeled_instance_pairs(bags)?, cfg)
}

pub fn instance_mir_predict<F: Scalar>(
    model: &MlpRegressor<F>,
    bag: &Bag<F>,
    agg: Aggregation,
) -> Result<F> {
    let preds: Vec<F> = bag
        .instances
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<_>>()?;
    Ok(aggregate(preds, agg))
}

pub struct PrimeMir<F> {
    pub regressor: MlpRegressor<F>,
    /// Selected instance index per training bag.
    pub selected: Vec<usize>,
    /// Sum of selected absolute residuals at each selection step.
    pub residual_trace: Vec<F>,
}

/// Prime-MIR: EM-style loop selecting one primary instance per bag.
///
/// Initialization fits on all instances (as Instance-MIR); each iteration
/// picks, per bag, the instance with the smallest absolute residual to the
/// bag label, then refits (warm start) on the selected pairs. Stops when
/// the selections repeat or after `max_iters` iterations.
pub fn prime_mir_fit<F: Scalar>(
    bags: &[Bag<F>],
    max_iters: usize,
    cfg: &RegressorTrainConfig,
) -> Result<PrimeMir<F>> {
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be >= 1".into()));
    }
    let labels: Vec<F> = bags.iter().map(|b| b.label_or_err()).collect::<Result<_>>()?;
    let mut regressor = instance_mir_fit(bags, cfg)?;
    let mut selected: Vec<usize> = vec![0; bags.len()];
    let mut residual_trace = Vec::new();

    for _ in 0..max_iters {
        let mut next = Vec::with_capacity(bags.len());
        let mut residual_sum = F::zero();
        for (bag, label) in bags.iter().zip(&labels) {
            let mut best = 0;
            let mut best_r = F::infinity();
            for (i, inst) in bag.instances.iter().enumerate() {
                let r = (regressor.predict(inst)? - *label).abs();
                if r < best_r {
                    best_r = r;
                    best = i;
                }
            }
            residual_sum = residual_sum + best_r;
            next.push(best);
        }
        residual_trace.push(residual_sum);
        let converged = next == selected && !residual_trace.is_empty() && residual_trace.len() > 1;
        selected = next;
        if converged {
            break;
        }
        let pairs: Vec<(Vec<F>, F)> = bags
            .iter()
            .zip(&selected)
            .zip(&labels)
            .map(|((b, &i), &y)| (b.instances[i].clone(), y))
            .collect();
        regressor = fit_warm(&pairs, cfg, Some(regressor))?;
    }
    Ok(PrimeMir {
        regressor,
        selected,
        residual_trace,
    })
}

pub fn prime_mir_predict<F: Scalar>(model: &PrimeMir<F>, bag: &Bag<F>) -> Result<F> {
    instance_mir_predict(&model.regressor, bag, Aggregation::Median)
}

pub struct ClusterMir<F> {
    pub regressor: MlpRegressor<F>,
    pub centroids: Vec<Vec<F>>,
    pub chosen_cluster: usize,
}

/// Cluster-MIR: k-means over all training instances, one regressor per
/// cluster, keep the regressor with the lowest training-bag RMSE.
pub fn cluster_mir_fit<F: Scalar>(
    bags: &[Bag<F>],
    n_clusters: usize,
    seed: u64,
    cfg: &RegressorTrainConfig,
) -> Result<ClusterMir<F>> {
    let mut points = Vec::new();
    let mut bag_of_point = Vec::new();
    let mut labels = Vec::with_capacity(bags.len());
    for (b, bag) in bags.iter().enumerate() {
        labels.push(bag.label_or_err()?);
        for inst in &bag.instances {
            points.push(inst.clone());
            bag_of_point.push(b);
        }
    }
    let (centroids, assignment) = kmeans(&points, n_clusters, seed)?;
    let mut bag_offsets = Vec::with_capacity(bags.len());
    let mut off = 0usize;
    for bag in bags {
        bag_offsets.push(off);
        off += bag.n_instances();
    }

    let mut best: Option<(usize, MlpRegressor<F>, F)> = None;
    for c in 0..n_clusters {
        let pairs: Vec<(Vec<F>, F)> = points
            .iter()
            .zip(&assignment)
            .zip(&bag_of_point)
            .filter(|((_, a), _)| **a == c)
            .map(|((p, _), b)| (p.clone(), labels[*b]))
            .collect();
        if pairs.len() < 2 {
            continue;
        }
        let reg = fit(&pairs, cfg)?;
        // Training-bag RMSE over bags that have instances in this cluster.
        let mut sq = F::zero();
        let mut n_bags = 0usize;
        for (b, bag) in bags.iter().enumerate() {
            let preds: Vec<F> = bag
                .instances
                .iter()
                .enumerate()
                .filter(|(i, _)| assignment[bag_offsets[b] + i] == c)
                .map(|(_, inst)| reg.predict(inst))
                .collect::<Result<_>>()?;
            if preds.is_empty() {
                continue;
            }
            let pred = aggregate(preds, Aggregation::Mean);
            let d = pred - labels[b];
            sq = sq + d * d;
            n_bags += 1;
        }
        if n_bags == 0 {
            continue;
        }
        let rmse = (sq / F::from_count(n_bags)).sqrt();
        if best.as_ref().map_or(true, |(_, _, r)| rmse < *r) {
            best = Some((c, reg, rmse));
        }
    }
    let (chosen_cluster, regressor, _) =
        best.ok_or_else(|| Error::Data("no cluster produced a usable regressor".into()))?;
    Ok(ClusterMir {
        regressor,
        centroids,
        chosen_cluster,
    })
}

pub fn cluster_mir_predict<F: Scalar>(model: &ClusterMir<F>, bag: &Bag<F>) -> Result<F> {
    let assigned: Vec<&Vec<F>> = bag
        .instances
        .iter()
        .filter(|x| nearest_centroid(x, &model.centroids) == model.chosen_cluster)
        .collect();
    let use_all = assigned.is_empty();
    let preds: Vec<F> = if use_all {
        bag.instances
            .iter()
            .map(|x| model.regressor.predict(x))
            .collect::<Result<_>>()?
    } else {
        assigned
            .iter()
            .map(|x| model.regressor.predict(x))
            .collect::<Result<_>>()?
    };
    Ok(aggregate(preds, Aggregation::Mean))
}

/// Score every instance of a bag with the VAE.
pub fn score_bag<F: Scalar>(vae: &VaeModel<F>, bag: &Bag<F>) -> Result<Vec<F>> {
    bag.instances.iter().map(|x| vae.anomaly_score(x)).collect()
}

fn check_k<F: Scalar>(bags: &[Bag<F>], k: usize) -> Result<()> {
    for bag in bags {
        if k == 0 || k > bag.n_instances() {
            return Err(Error::Config(format!(
                "k = {k} out of range [1, {}] for bag {}",
                bag.n_instances(),
                bag.bag_id
            )));
        }
    }
    Ok(())
}

/// VAEMIR fit: anomaly-score every instance, keep the k cleanest per bag,
/// regress bag labels on the prototype means.
pub fn vaemir_fit<F: Scalar>(
    bags: &[Bag<F>],
    vae: &VaeModel<F>,
    k: usize,
    cfg: &RegressorTrainConfig,
) -> Result<MlpRegressor<F>> {
    check_k(bags, k)?;
    let mut pairs = Vec::with_capacity(bags.len());
    for bag in bags {
        let label = bag.label_or_err()?;
        let scores = score_bag(vae, bag)?;
        let proto = vaemir_prototype(bag, &scores, k)?;
        pairs.push((proto.vector, label));
    }
    fit(&pairs, cfg)
}

pub fn vaemir_predict<F: Scalar>(
    model: &MlpRegressor<F>,
    vae: &VaeModel<F>,
    bag: &Bag<F>,
    k: usize,
) -> Result<F> {
    check_k(std::slice::from_ref(bag), k)?;
    let scores = score_bag(vae, bag)?;
    let proto = vaemir_prototype(bag, &scores, k)?;
    model.predict(&proto.vector)
}
