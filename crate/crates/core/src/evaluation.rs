//! End-to-end episode scoring and the aggregate experiments built on it.
//!
//! Episodes are the unit of parallelism. Results are always folded in
//! run-index order, so a report does not depend on the worker count.

use std::time::{Duration, Instant};

use ndarray::{concatenate, s, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::{predict, train_logistic_traced, TrainConfig};
use crate::episodes::{
    sample_episode, sample_imbalanced_two_way, Episode, EpisodeSpec, Fnv64, PoolSize,
};
use crate::error::{Error, Result};
use crate::feature_io::FeatureSet;
use crate::graph::{build_episode_graph, propagate, PropagationParams};

/// z-score of the two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;
pub const CI_METHOD: &str = "1.96 * sample_std / sqrt(runs)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperParams {
    pub propagation: PropagationParams,
    pub train: TrainConfig,
}

impl HyperParams {
    /// Best settings reported for 1-shot (`alpha=0.5, k=10, kappa=3`) and
    /// for 5-shot and above (`alpha=0.75, k=15, kappa=1`).
    pub fn for_shots(shots: usize) -> Self {
        let propagation = if shots >= 5 {
            PropagationParams {
                k: 15,
                kappa: 1,
                alpha: 0.75,
            }
        } else {
            PropagationParams {
                k: 10,
                kappa: 3,
                alpha: 0.5,
            }
        };
        Self {
            propagation,
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.propagation.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub graph: Duration,
    pub propagate: Duration,
    pub train: Duration,
    pub predict: Duration,
}

impl StageTimings {
    fn add(&mut self, other: &StageTimings) {
        self.graph += other.graph;
        self.propagate += other.propagate;
        self.train += other.train;
        self.predict += other.predict;
    }

    fn div(&self, n: u32) -> StageTimings {
        StageTimings {
            graph: self.graph / n,
            propagate: self.propagate / n,
            train: self.train / n,
            predict: self.predict / n,
        }
    }

    pub fn total(&self) -> Duration {
        self.graph + self.propagate + self.train + self.predict
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub accuracy: f64,
    pub correct: usize,
    pub queries: usize,
    pub epochs_run: usize,
    pub fingerprint: u64,
    pub timings: StageTimings,
}

fn check_episode(ep: &Episode) -> Result<()> {
    let ways = ep.ways();
    if ways < 1 {
        return Err(Error::validation("episode has no classes"));
    }
    if ep.support_features.nrows() != ep.support_labels.len()
        || ep.query_features.nrows() != ep.query_truth.len()
    {
        return Err(Error::Shape("episode labels do not match feature rows".into()));
    }
    if ep.support_features.ncols() != ep.query_features.ncols() {
        return Err(Error::Shape(format!(
            "support has {} columns, queries have {}",
            ep.support_features.ncols(),
            ep.query_features.ncols()
        )));
    }
    if ep.query_truth.is_empty() {
        return Err(Error::validation("episode has no queries"));
    }
    if let Some(&bad) = ep.query_truth.iter().find(|&&y| y >= ways) {
        return Err(Error::validation(format!("query label {bad} out of range for {ways} ways")));
    }
    Ok(())
}

/// Graph over support + query rows (support first), diffusion, training on
/// the diffused support rows, prediction on the diffused query rows.
pub fn run_episode(ep: &Episode, hp: &HyperParams) -> Result<EpisodeResult> {
    hp.validate()?;
    check_episode(ep)?;
    let n_support = ep.support_features.nrows();
    let stacked = concatenate(
        Axis(0),
        &[ep.support_features.view(), ep.query_features.view()],
    )
    .map_err(|e| Error::Shape(e.to_string()))?;

    let t0 = Instant::now();
    let (_, adjacency) = build_episode_graph(stacked.view(), &hp.propagation)?;
    let t1 = Instant::now();
    let diffused = propagate(stacked.view(), &adjacency, &hp.propagation)?;
    let t2 = Instant::now();
    let trained = train_logistic_traced(
        diffused.slice(s![..n_support, ..]),
        &ep.support_labels,
        ep.ways(),
        &hp.train,
    )?;
    let t3 = Instant::now();
    let preds = predict(diffused.slice(s![n_support.., ..]), &trained.weights)?;
    let t4 = Instant::now();

    let correct = preds
        .labels
        .iter()
        .zip(&ep.query_truth)
        .filter(|(p, t)| p == t)
        .count();
    let queries = ep.query_truth.len();
    Ok(EpisodeResult {
        accuracy: correct as f64 / queries as f64,
        correct,
        queries,
        epochs_run: trained.epochs_run,
        fingerprint: ep.fingerprint(),
        timings: StageTimings {
            graph: t1 - t0,
            propagate: t2 - t1,
            train: t3 - t2,
            predict: t4 - t3,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
}

/// Mean and `1.96 * s / sqrt(n)` with the sample (n-1) standard deviation;
/// a single value has zero spread.
pub fn summarize(accuracies: &[f64]) -> Summary {
    let n = accuracies.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            ci95: f64::NAN,
        };
    }
    let mean = accuracies.iter().sum::<f64>() / n as f64;
    let ci95 = if n < 2 {
        0.0
    } else {
        let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z_95 * var.sqrt() / (n as f64).sqrt()
    };
    Summary { mean, ci95 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    /// Worker threads; 0 means one per available core.
    pub workers: usize,
    /// Keep per-run accuracies in the report.
    pub keep_runs: bool,
}

/// Aggregate over many episodes with the full effective configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub ci_method: String,
    pub runs: u64,
    pub seed: u64,
    pub features: String,
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub sampling: String,
    pub pool_per_class: PoolSize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q1: Option<usize>,
    pub k: usize,
    pub kappa: u32,
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub mean_epochs_run: f64,
    /// Digest over every episode's drawn rows, in run order.
    pub episodes_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracies: Option<Vec<f64>>,
    /// Mean per-episode stage durations. Wall-clock, so never serialized.
    #[serde(skip)]
    pub timings: StageTimings,
}

/// Task description echoed into a report.
#[derive(Debug, Clone)]
struct TaskEcho {
    ways: usize,
    shots: usize,
    queries: usize,
    sampling: String,
    pool_per_class: PoolSize,
    q1: Option<usize>,
}

fn build_report(
    results: &[EpisodeResult],
    task: TaskEcho,
    hp: &HyperParams,
    seed: u64,
    features: &str,
    keep_runs: bool,
) -> EvalReport {
    let accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let Summary { mean, ci95 } = summarize(&accuracies);
    let mut digest = Fnv64::new();
    let mut timings = StageTimings::default();
    for r in results {
        digest.write(r.fingerprint);
        timings.add(&r.timings);
    }
    let runs = results.len();
    EvalReport {
        mean_accuracy: mean,
        ci95,
        ci_method: CI_METHOD.to_string(),
        runs: runs as u64,
        seed,
        features: features.to_string(),
        ways: task.ways,
        shots: task.shots,
        queries: task.queries,
        sampling: task.sampling,
        pool_per_class: task.pool_per_class,
        q1: task.q1,
        k: hp.propagation.k,
        kappa: hp.propagation.kappa,
        alpha: hp.propagation.alpha,
        epochs: hp.train.epochs,
        learning_rate: hp.train.learning_rate,
        weight_decay: hp.train.weight_decay,
        beta1: hp.train.beta1,
        beta2: hp.train.beta2,
        epsilon: hp.train.epsilon,
        mean_epochs_run: results.iter().map(|r| r.epochs_run as f64).sum::<f64>() / runs as f64,
        episodes_digest: format!("{:016x}", digest.finish()),
        accuracies: keep_runs.then_some(accuracies),
        timings: timings.div(runs.max(1) as u32),
    }
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))
}

/// Runs `runs` episodes produced by `sample(run_index)` and returns the
/// results in run order. The first failing run (by index) is reported.
pub fn run_many<F>(sample: F, hp: &HyperParams, runs: u64, workers: usize) -> Result<Vec<EpisodeResult>>
where
    F: Fn(u64) -> Result<Episode> + Sync,
{
    if runs < 1 {
        return Err(Error::validation("runs must be at least 1"));
    }
    hp.validate()?;
    let pool = worker_pool(workers)?;
    let outcomes: Vec<Result<EpisodeResult>> = pool.install(|| {
        (0..runs)
            .into_par_iter()
            .map(|run| {
                sample(run)
                    .and_then(|ep| run_episode(&ep, hp))
                    .map_err(|e| Error::Run {
                        run_index: run,
                        source: Box::new(e),
                    })
            })
            .collect()
    });
    outcomes.into_iter().collect()
}

pub fn evaluate(
    set: &FeatureSet,
    spec: &EpisodeSpec,
    hp: &HyperParams,
    runs: u64,
    seed: u64,
    options: &EvalOptions,
) -> Result<EvalReport> {
    spec.validate()?;
    let results = run_many(
        |run| sample_episode(set, spec, seed, run),
        hp,
        runs,
        options.workers,
    )?;
    let task = TaskEcho {
        ways: spec.ways,
        shots: spec.shots,
        queries: spec.queries,
        sampling: spec.sampling.to_string(),
        pool_per_class: spec.pool_per_class,
        q1: None,
    };
    Ok(build_report(&results, task, hp, seed, set.name(), options.keep_runs))
}

/// Cartesian grid of propagation settings, evaluated `k`-major then
/// `kappa`, then `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub kappas: Vec<u32>,
    pub alphas: Vec<f64>,
}

impl SweepGrid {
    pub fn points(&self) -> Vec<PropagationParams> {
        let mut out = Vec::with_capacity(self.ks.len() * self.kappas.len() * self.alphas.len());
        for &k in &self.ks {
            for &kappa in &self.kappas {
                for &alpha in &self.alphas {
                    out.push(PropagationParams { k, kappa, alpha });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<EvalReport>,
}

/// Every grid point sees the same episode sequence, so rows are paired.
pub fn sweep(
    set: &FeatureSet,
    spec: &EpisodeSpec,
    grid: &SweepGrid,
    train: &TrainConfig,
    runs: u64,
    seed: u64,
    options: &EvalOptions,
) -> Result<SweepReport> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::validation("sweep grid is empty"));
    }
    for p in &points {
        p.validate()?;
    }
    let rows = points
        .into_iter()
        .map(|propagation| {
            let hp = HyperParams {
                propagation,
                train: *train,
            };
            evaluate(set, spec, &hp, runs, seed, options)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { rows })
}

/// One report per `q1`; accuracy is over all `total` queries of each run.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_imbalance(
    set: &FeatureSet,
    q1_list: &[usize],
    total: usize,
    shots: usize,
    hp: &HyperParams,
    runs: u64,
    seed: u64,
    options: &EvalOptions,
) -> Result<Vec<(usize, EvalReport)>> {
    if q1_list.is_empty() {
        return Err(Error::validation("no q1 values given"));
    }
    if let Some(&bad) = q1_list.iter().find(|&&q| q < 1 || q + 1 > total) {
        return Err(Error::validation(format!(
            "q1 = {bad} outside [1, {}]",
            total.saturating_sub(1)
        )));
    }
    q1_list
        .iter()
        .map(|&q1| {
            let results = run_many(
                |run| sample_imbalanced_two_way(set, q1, total, shots, seed, run),
                hp,
                runs,
                options.workers,
            )?;
            let task = TaskEcho {
                ways: 2,
                shots,
                queries: total,
                sampling: "imbalanced".to_string(),
                pool_per_class: PoolSize::All,
                q1: Some(q1),
            };
            Ok((q1, build_report(&results, task, hp, seed, set.name(), options.keep_runs)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::Sampling;
    use crate::feature_io::{generate_synthetic, SyntheticConfig};
    use ndarray::array;

    #[test]
    fn summary_closed_form() {
        let s = summarize(&[0.8, 0.9, 1.0]);
        assert!((s.mean - 0.9).abs() < 1e-12);
        assert!((s.ci95 - 1.96 * 0.1 / 3f64.sqrt()).abs() < 1e-12);
        let one = summarize(&[0.7]);
        assert_eq!((one.mean, one.ci95), (0.7, 0.0));
    }

    #[test]
    fn table_defaults_by_shot() {
        let one = HyperParams::for_shots(1).propagation;
        assert_eq!((one.alpha, one.k, one.kappa), (0.5, 10, 3));
        let five = HyperParams::for_shots(5).propagation;
        assert_eq!((five.alpha, five.k, five.kappa), (0.75, 15, 1));
    }

    #[test]
    fn zero_noise_episode_is_perfect() {
        let ep = Episode {
            support_features: array![[1.0, 0.0, 0.2], [0.0, 1.0, 0.2]],
            support_labels: vec![0, 1],
            query_features: array![[1.0, 0.0, 0.2], [0.0, 1.0, 0.2], [1.0, 0.0, 0.2]],
            query_truth: vec![0, 1, 0],
            class_map: vec![3, 8],
            support_rows: vec![0, 1],
            query_rows: vec![2, 3, 4],
        };
        let mut hp = HyperParams::for_shots(1);
        hp.propagation.kappa = 0;
        let r = run_episode(&ep, &hp).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.queries, 3);
    }

    #[test]
    fn malformed_episode_rejected() {
        let ep = Episode {
            support_features: array![[1.0, 0.0], [0.0, 1.0]],
            support_labels: vec![0, 1],
            query_features: array![[1.0, 0.0]],
            query_truth: vec![2],
            class_map: vec![0, 1],
            support_rows: vec![0, 1],
            query_rows: vec![2],
        };
        assert!(run_episode(&ep, &HyperParams::for_shots(1)).is_err());
    }

    #[test]
    fn errors_carry_run_index() {
        let set = generate_synthetic(&SyntheticConfig {
            class_count: 3,
            per_class: 4,
            dim: 3,
            ..Default::default()
        })
        .unwrap();
        let spec = EpisodeSpec {
            ways: 2,
            shots: 1,
            queries: 20,
            sampling: Sampling::Balanced,
            pool_per_class: PoolSize::All,
        };
        let err = evaluate(&set, &spec, &HyperParams::for_shots(1), 3, 1, &EvalOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Run { run_index: 0, .. }), "{err}");
    }

    #[test]
    fn grid_order_is_k_major() {
        let grid = SweepGrid {
            ks: vec![5, 10],
            kappas: vec![1, 2],
            alphas: vec![0.0, 1.0],
        };
        let pts = grid.points();
        assert_eq!(pts.len(), 8);
        assert_eq!((pts[0].k, pts[0].kappa, pts[0].alpha), (5, 1, 0.0));
        assert_eq!((pts[1].k, pts[1].kappa, pts[1].alpha), (5, 1, 1.0));
        assert_eq!((pts[2].k, pts[2].kappa, pts[2].alpha), (5, 2, 0.0));
        assert_eq!((pts[7].k, pts[7].kappa, pts[7].alpha), (10, 2, 1.0));
    }
}
