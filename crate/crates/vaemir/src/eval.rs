//! Metrics, expanding-window year splits, the repeated-seed experiment
//! runner and the k-sweep.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mir::{
    cluster_mir_fit, cluster_mir_predict, instance_mir_fit, instance_mir_predict, mean_prototype,
    prime_mir_fit, prime_mir_predict, score_bag, vaemir_prototype, Aggregation, Bag, Method,
};
use crate::regressor::{fit, MlpRegressor, RegressorTrainConfig};
use crate::scalar::Scalar;
use crate::vae::{train_vae, VaeTrainConfig};

/// Root mean square error.
pub fn rmse<F: Scalar>(pred: &[F], truth: &[F]) -> Result<F> {
    if pred.is_empty() {
        return Err(Error::Data("rmse over empty vectors".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::dimension("rmse", truth.len(), pred.len()));
    }
    let mut sq = F::zero();
    for (p, t) in pred.iter().zip(truth) {
        let d = *p - *t;
        sq = sq + d * d;
    }
    Ok((sq / F::from_count(pred.len())).sqrt())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2<F: Scalar>(pred: &[F], truth: &[F]) -> Result<F> {
    if pred.len() < 2 {
        return Err(Error::Data("r2 needs at least 2 points".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::dimension("r2", truth.len(), pred.len()));
    }
    let n = F::from_count(truth.len());
    let mean = truth.iter().fold(F::zero(), |a, t| a + *t) / n;
    let mut ss_res = F::zero();
    let mut ss_tot = F::zero();
    for (p, t) in pred.iter().zip(truth) {
        let r = *t - *p;
        ss_res = ss_res + r * r;
        let d = *t - mean;
        ss_tot = ss_tot + d * d;
    }
    if ss_tot == F::zero() {
        return Err(Error::Data("r2 undefined for constant truth".into()));
    }
    Ok(F::one() - ss_res / ss_tot)
}

/// ROC-AUC of `scores` against boolean `flags` (true = positive), computed
/// as the Mann-Whitney rank statistic with average ranks for ties.
pub fn roc_auc<F: Scalar>(scores: &[F], flags: &[bool]) -> Result<f64> {
    if scores.len() != flags.len() {
        return Err(Error::dimension("roc_auc flags", scores.len(), flags.len()));
    }
    let n_pos = flags.iter().filter(|f| **f).count();
    let n_neg = flags.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("roc_auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if flags[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Split {
    pub train_years: Vec<i32>,
    pub test_year: i32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub splits: Vec<Split>,
}

/// One split per test year >= `first_test_year`; train on all strictly
/// earlier years present in the data.
pub fn build_splits(years_present: &[i32], first_test_year: i32) -> Result<SplitPlan> {
    let mut years: Vec<i32> = years_present.to_vec();
    years.sort_unstable();
    years.dedup();
    let mut splits = Vec::new();
    for &y in &years {
        if y < first_test_year {
            continue;
        }
        let train_years: Vec<i32> = years.iter().copied().filter(|t| *t < y).collect();
        if train_years.is_empty() {
            return Err(Error::Data(format!("no training years precede test year {y}")));
        }
        splits.push(Split {
            train_years,
            test_year: y,
        });
    }
    if splits.is_empty() {
        return Err(Error::Data(format!(
            "no test years at or after {first_test_year} in the data"
        )));
    }
    Ok(SplitPlan { splits })
}

/// Assert that no test-year bag appears in its split's training set.
pub fn check_no_leakage<F: Scalar>(plan: &SplitPlan, bags: &[Bag<F>]) -> Result<()> {
    for split in &plan.splits {
        for bag in bags {
            if bag.year == split.test_year && split.train_years.contains(&bag.year) {
                return Err(Error::Data(format!(
                    "bag {} leaks into the {} training set",
                    bag.bag_id, split.test_year
                )));
            }
        }
        if split.train_years.iter().any(|t| *t >= split.test_year) {
            return Err(Error::Data(format!(
                "split for {} trains on a non-preceding year",
                split.test_year
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub vae: VaeTrainConfig,
    pub regressor: RegressorTrainConfig,
    /// Epochs for instance-level fits (Instance-MIR and the Prime-MIR
    /// initialization), which see ~N times more samples than prototype fits.
    pub instance_epochs: Option<usize>,
    pub prime_max_iters: usize,
    pub n_clusters: usize,
    pub instance_agg: Aggregation,
    pub k: Option<usize>,
    /// Train the VAE on train + test instances instead of train only.
    pub transductive: bool,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            vae: VaeTrainConfig::default(),
            regressor: RegressorTrainConfig::default(),
            instance_epochs: None,
            prime_max_iters: 20,
            n_clusters: 5,
            instance_agg: Aggregation::Mean,
            k: None,
            transductive: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub test_year: i32,
    pub seed: u64,
    pub rmse: f64,
    pub r2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct YearSummary {
    pub year: i32,
    pub mean_rmse: f64,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: &'static str,
    pub per_year: Vec<YearSummary>,
    pub average_rmse: f64,
    pub average_r2: f64,
}

impl EvalReport {
    /// Mean over seeds for one (method, year) cell.
    pub fn year_mean(&self, method: Method, year: i32) -> Option<(f64, f64)> {
        let cells: Vec<&ReportRow> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.test_year == year)
            .collect();
        if cells.is_empty() {
            return None;
        }
        let n = cells.len() as f64;
        Some((
            cells.iter().map(|r| r.rmse).sum::<f64>() / n,
            cells.iter().map(|r| r.r2).sum::<f64>() / n,
        ))
    }

    pub fn summaries(&self) -> Vec<MethodSummary> {
        let mut methods: Vec<Method> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
        let mut years: Vec<i32> = self.rows.iter().map(|r| r.test_year).collect();
        years.sort_unstable();
        years.dedup();
        methods
            .iter()
            .map(|&m| {
                let per_year: Vec<YearSummary> = years
                    .iter()
                    .filter_map(|&y| {
                        self.year_mean(m, y).map(|(rm, r2)| YearSummary {
                            year: y,
                            mean_rmse: rm,
                            mean_r2: r2,
                        })
                    })
                    .collect();
                let n = per_year.len() as f64;
                MethodSummary {
                    method: m.name(),
                    average_rmse: per_year.iter().map(|s| s.mean_rmse).sum::<f64>() / n,
                    average_r2: per_year.iter().map(|s| s.mean_r2).sum::<f64>() / n,
                    per_year,
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,test_year,seed,rmse,r2,k\n");
        for r in &self.rows {
            let k = r.k.map(|k| k.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method.name(),
                r.test_year,
                r.seed,
                r.rmse,
                r.r2,
                k
            ));
        }
        out
    }
}

/// SplitMix64-style mixer for deriving independent sub-seeds.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base;
    for &t in tags {
        x ^= t.wrapping_mul(0x9E3779B97F4A7C15);
        x = x.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        x = z ^ (z >> 31);
    }
    x
}

fn vae_seed(seed: u64, test_year: i32) -> u64 {
    derive_seed(seed, &[test_year as u64, 0xAE])
}

fn reg_seed(seed: u64, test_year: i32) -> u64 {
    derive_seed(seed, &[test_year as u64, 0x17])
}

struct SplitData<'a, F> {
    train: Vec<&'a Bag<F>>,
    test: Vec<&'a Bag<F>>,
    test_year: i32,
}

fn split_data<'a, F: Scalar>(bags: &'a [Bag<F>], split: &Split) -> Result<SplitData<'a, F>> {
    let train: Vec<&Bag<F>> = bags
        .iter()
        .filter(|b| split.train_years.contains(&b.year))
        .collect();
    let test: Vec<&Bag<F>> = bags.iter().filter(|b| b.year == split.test_year).collect();
    if train.is_empty() {
        return Err(Error::Data(format!(
            "no training bags for test year {}",
            split.test_year
        )));
    }
    if test.is_empty() {
        return Err(Error::Data(format!("no bags in test year {}", split.test_year)));
    }
    Ok(SplitData {
        train,
        test,
        test_year: split.test_year,
    })
}

fn owned<F: Scalar>(bags: &[&Bag<F>]) -> Vec<Bag<F>> {
    bags.iter().map(|b| (*b).clone()).collect()
}

fn eval_predictions<F: Scalar>(preds: &[F], test: &[&Bag<F>]) -> Result<(f64, f64)> {
    let truth: Vec<F> = test
        .iter()
        .map(|b| b.label_or_err())
        .collect::<Result<_>>()?;
    let rm = rmse(preds, &truth)?.to_f64().unwrap();
    let r = r2(preds, &truth)?.to_f64().unwrap();
    Ok((rm, r))
}

/// Train the configured VAE for one split cell and anomaly-score every bag.
fn train_split_vae<F: Scalar>(
    data: &SplitData<'_, F>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<crate::vae::VaeModel<F>> {
    let mut instances: Vec<Vec<F>> = Vec::new();
    for b in &data.train {
        instances.extend(b.instances.iter().cloned());
    }
    if cfg.transductive {
        for b in &data.test {
            instances.extend(b.instances.iter().cloned());
        }
    }
    let vae_cfg = VaeTrainConfig {
        seed: vae_seed(seed, data.test_year),
        ..cfg.vae.clone()
    };
    let (model, _) = train_vae(&instances, &vae_cfg)?;
    Ok(model)
}

/// Run one (method, split, seed) cell and return its report row.
fn run_cell<F: Scalar>(
    bags: &[Bag<F>],
    split: &Split,
    method: Method,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<ReportRow> {
    let data = split_data(bags, split)?;
    let reg_cfg = RegressorTrainConfig {
        seed: reg_seed(seed, data.test_year),
        ..cfg.regressor.clone()
    };
    let instance_cfg = RegressorTrainConfig {
        epochs: cfg.instance_epochs.unwrap_or(cfg.regressor.epochs),
        ..reg_cfg.clone()
    };

    let (preds, k_used): (Vec<F>, Option<usize>) = match method {
        Method::Instance => {
            let model = instance_mir_fit(&owned(&data.train), &instance_cfg)?;
            let preds = data
                .test
                .iter()
                .map(|b| instance_mir_predict(&model, b, cfg.instance_agg))
                .collect::<Result<_>>()?;
            (preds, None)
        }
        Method::Mean => {
            let pairs: Vec<(Vec<F>, F)> = data
                .train
                .iter()
                .map(|b| Ok((mean_prototype(b)?.vector, b.label_or_err()?)))
                .collect::<Result<_>>()?;
            let model = fit(&pairs, &reg_cfg)?;
            let preds = data
                .test
                .iter()
                .map(|b| model.predict(&mean_prototype(b)?.vector))
                .collect::<Result<_>>()?;
            (preds, None)
        }
        Method::Prime => {
            let model = prime_mir_fit(&owned(&data.train), cfg.prime_max_iters, &instance_cfg)?;
            let preds = data
                .test
                .iter()
                .map(|b| prime_mir_predict(&model, b))
                .collect::<Result<_>>()?;
            (preds, None)
        }
        Method::Cluster => {
            let cluster_seed = derive_seed(seed, &[data.test_year as u64, 0xC1]);
            let model =
                cluster_mir_fit(&owned(&data.train), cfg.n_clusters, cluster_seed, &reg_cfg)?;
            let preds = data
                .test
                .iter()
                .map(|b| cluster_mir_predict(&model, b))
                .collect::<Result<_>>()?;
            (preds, None)
        }
        Method::Vaemir => {
            let k = cfg
                .k
                .ok_or_else(|| Error::Config("vaemir requires k".into()))?;
            let vae = train_split_vae(&data, cfg, seed)?;
            let model = fit(&vaemir_pairs(&data.train, &vae, k)?, &reg_cfg)?;
            let preds = data
                .test
                .iter()
                .map(|b| {
                    let scores = score_bag(&vae, b)?;
                    model.predict(&vaemir_prototype(b, &scores, k)?.vector)
                })
                .collect::<Result<_>>()?;
            (preds, Some(k))
        }
    };
    let (rm, r) = eval_predictions(&preds, &data.test)?;
    Ok(ReportRow {
        method,
        test_year: data.test_year,
        seed,
        rmse: rm,
        r2: r,
        k: k_used,
    })
}

fn vaemir_pairs<F: Scalar>(
    train: &[&Bag<F>],
    vae: &crate::vae::VaeModel<F>,
    k: usize,
) -> Result<Vec<(Vec<F>, F)>> {
    train
        .iter()
        .map(|b| {
            let scores = score_bag(vae, b)?;
            Ok((vaemir_prototype(b, &scores, k)?.vector, b.label_or_err()?))
        })
        .collect()
}

/// Run every (method, split, seed) cell; deterministic given the seed list
/// and safe to fan out across `cfg.threads` workers.
pub fn run_experiment<F: Scalar>(
    bags: &[Bag<F>],
    methods: &[Method],
    plan: &SplitPlan,
    seeds: &[u64],
    cfg: &ExperimentConfig,
) -> Result<EvalReport> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::Config("need at least one method and one seed".into()));
    }
    if methods.contains(&Method::Vaemir) && cfg.k.is_none() {
        return Err(Error::Config("vaemir requires k".into()));
    }
    check_no_leakage(plan, bags)?;

    let mut cells = Vec::new();
    for method in methods {
        for split in &plan.splits {
            for &seed in seeds {
                cells.push((*method, split, seed));
            }
        }
    }

    let n_workers = cfg.threads.max(1).min(cells.len());
    let results: Vec<Mutex<Option<Result<ReportRow>>>> =
        (0..cells.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let (method, split, seed) = cells[i];
                let row = run_cell(bags, split, method, seed, cfg);
                *results[i].lock().unwrap() = Some(row);
            });
        }
    });

    let mut rows = Vec::with_capacity(cells.len());
    for cell in results {
        rows.push(cell.into_inner().unwrap().expect("cell executed")?);
    }
    Ok(EvalReport { rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub test_year: i32,
    pub k: usize,
    pub seed: u64,
    pub rmse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub test_year: i32,
    pub k: usize,
    pub mean_rmse: f64,
    pub mean_r2: f64,
}

impl SweepResult {
    /// Per-year curves, averaged over seeds, ordered by (year, k).
    pub fn curves(&self) -> Vec<CurvePoint> {
        let mut grouped: BTreeMap<(i32, usize), Vec<&SweepRow>> = BTreeMap::new();
        for r in &self.rows {
            grouped.entry((r.test_year, r.k)).or_default().push(r);
        }
        grouped
            .into_iter()
            .map(|((year, k), rows)| {
                let n = rows.len() as f64;
                CurvePoint {
                    test_year: year,
                    k,
                    mean_rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / n,
                    mean_r2: rows.iter().map(|r| r.r2).sum::<f64>() / n,
                }
            })
            .collect()
    }

    /// Best k per year by max mean R^2, ties broken by the smaller k.
    pub fn best_k_per_year(&self) -> BTreeMap<i32, usize> {
        let mut best: BTreeMap<i32, (usize, f64)> = BTreeMap::new();
        for p in self.curves() {
            let entry = best.entry(p.test_year).or_insert((p.k, f64::NEG_INFINITY));
            if p.mean_r2 > entry.1 {
                *entry = (p.k, p.mean_r2);
            }
        }
        best.into_iter().map(|(y, (k, _))| (y, k)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("test_year,k,mean_rmse,mean_r2\n");
        for p in self.curves() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.test_year, p.k, p.mean_rmse, p.mean_r2
            ));
        }
        out
    }
}

/// VAEMIR k-sweep. The VAE is trained and instances scored once per
/// (split, seed); only the prototype selection and the regressor refit vary
/// with k.
pub fn sweep_k<F: Scalar>(
    bags: &[Bag<F>],
    plan: &SplitPlan,
    k_values: &[usize],
    seeds: &[u64],
    cfg: &ExperimentConfig,
) -> Result<SweepResult> {
    if k_values.is_empty() {
        return Err(Error::Config("need at least one k value".into()));
    }
    check_no_leakage(plan, bags)?;
    let min_bag = bags.iter().map(|b| b.n_instances()).min().unwrap_or(0);
    for &k in k_values {
        if k == 0 || k > min_bag {
            return Err(Error::Config(format!(
                "k = {k} out of range [1, {min_bag}] for this dataset"
            )));
        }
    }

    let mut rows = Vec::new();
    for split in &plan.splits {
        let data = split_data(bags, split)?;
        for &seed in seeds {
            let vae = train_split_vae(&data, cfg, seed)?;
            let train_scores: Vec<Vec<F>> = data
                .train
                .iter()
                .map(|b| score_bag(&vae, b))
                .collect::<Result<_>>()?;
            let test_scores: Vec<Vec<F>> = data
                .test
                .iter()
                .map(|b| score_bag(&vae, b))
                .collect::<Result<_>>()?;
            let reg_cfg = RegressorTrainConfig {
                seed: reg_seed(seed, data.test_year),
                ..cfg.regressor.clone()
            };
            for &k in k_values {
                let pairs: Vec<(Vec<F>, F)> = data
                    .train
                    .iter()
                    .zip(&train_scores)
                    .map(|(b, s)| Ok((vaemir_prototype(b, s, k)?.vector, b.label_or_err()?)))
                    .collect::<Result<_>>()?;
                let model: MlpRegressor<F> = fit(&pairs, &reg_cfg)?;
                let preds: Vec<F> = data
                    .test
                    .iter()
                    .zip(&test_scores)
                    .map(|(b, s)| model.predict(&vaemir_prototype(b, s, k)?.vector))
                    .collect::<Result<_>>()?;
                let (rm, r) = eval_predictions(&preds, &data.test)?;
                rows.push(SweepRow {
                    test_year: data.test_year,
                    k,
                    seed,
                    rmse: rm,
                    r2: r,
                });
            }
        }
    }
    Ok(SweepResult { rows })
}
