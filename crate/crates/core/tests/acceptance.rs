//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::Instant;

use fsgraph::classifier::{loss_and_gradient, train_logistic_traced};
use fsgraph::graph::{build_episode_graph, cosine_similarity_matrix, knn_sparsify, propagate, symmetric_normalize};
use fsgraph::report::to_json;
use fsgraph::{
    evaluate, evaluate_imbalance, generate_synthetic, load_feature_set, predict, summarize, sweep, EpisodeSpec,
    EvalOptions, FeatureFormat, FeatureSet, HyperParams, PoolSize, PropagationParams, Sampling, SweepGrid,
    SyntheticConfig, TrainConfig,
};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dense_diffusion_oracle, power_iteration_radius, top_k_positive_support};

/// Paired accuracy gain of the default 1-shot propagation over no
/// propagation, measured once at 0.0190 (+- 0.0019) and frozen with slack.
const PROPAGATION_MARGIN: f64 = 0.015;
const EVAL_SEED: u64 = 42;
const EXTERNAL_FEATURES: &str = "FSGRAPH_MINIIMAGENET_WRN";

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn features(max_m: usize, max_h: usize) -> impl Strategy<Value = Array2<f64>> {
    (2..=max_m, 1..=max_h).prop_flat_map(|(m, h)| {
        prop::collection::vec(prop_oneof![3 => 0.0f64..5.0, 1 => Just(0.0)], m * h)
            .prop_map(move |v| Array2::from_shape_vec((m, h), v).unwrap())
    })
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn propagation_oracle() -> Outcome {
    let strategy = (
        features(10, 6),
        1usize..10,
        0u32..=5,
        prop::sample::select(vec![0.0, 0.25, 0.5, 1.0]),
    );
    let worst = std::cell::Cell::new(0.0f64);
    let result = runner(200).run(&strategy, |(v, k, kappa, alpha)| {
        let params = PropagationParams::new(k, kappa, alpha).unwrap();
        let (_, e) = build_episode_graph(v.view(), &params).unwrap();
        let fast = propagate(v.view(), &e, &params).unwrap();
        let slow = dense_diffusion_oracle(&e.to_dense(), &v, alpha, kappa);
        for (a, b) in fast.iter().zip(slow.iter()) {
            worst.set(worst.get().max((a - b).abs()));
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
        Ok(())
    });
    match result {
        Ok(()) => Outcome::Pass(format!("200 cases, max deviation {:.2e}", worst.get())),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn graph_properties() -> Outcome {
    let result = runner(500).run(&(features(12, 6), 1usize..12), |(v, k)| {
        let s = cosine_similarity_matrix(v.view()).unwrap();
        let sv = s.values();
        for i in 0..sv.nrows() {
            prop_assert_eq!(sv[[i, i]], 0.0);
            for j in 0..sv.ncols() {
                prop_assert_eq!(sv[[i, j]], sv[[j, i]]);
                prop_assert!((0.0..=1.0).contains(&sv[[i, j]]));
            }
        }
        let sparse = knn_sparsify(&s, k).unwrap();
        let kept = sparse.values();
        for i in 0..kept.nrows() {
            for j in 0..kept.ncols() {
                prop_assert_eq!(kept[[i, j]], kept[[j, i]]);
            }
            for j in top_k_positive_support(sv, i, k) {
                prop_assert!(kept[[i, j]] > 0.0);
            }
        }
        prop_assert_eq!(&knn_sparsify(&sparse, k).unwrap(), &sparse);
        let radius = power_iteration_radius(&symmetric_normalize(&sparse).to_dense(), 2000);
        prop_assert!(radius <= 1.0 + 1e-9, "spectral radius {}", radius);
        Ok(())
    });
    match result {
        Ok(()) => Outcome::Pass("500 cases".into()),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn random_triple(rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>, Array2<f64>) {
    let n = rng.random_range(3..9);
    let h = rng.random_range(2..6);
    let c = rng.random_range(2..5);
    let x = Array2::from_shape_fn((n, h), |_| rng.random_range(0.0..2.0));
    let labels = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
    let w = Array2::from_shape_fn((h, c), |_| rng.random_range(-1.0..1.0));
    (x, labels, w)
}

fn classifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let step = 1e-5;
    let mut worst_rel = 0.0f64;
    for _ in 0..5 {
        let (x, labels, w) = random_triple(&mut rng);
        let (_, grad) = loss_and_gradient(x.view(), &labels, w.view(), 5e-6);
        for idx in ndarray::indices(w.dim()) {
            let mut plus = w.clone();
            plus[idx] += step;
            let mut minus = w.clone();
            minus[idx] -= step;
            let numeric = (loss_and_gradient(x.view(), &labels, plus.view(), 5e-6).0
                - loss_and_gradient(x.view(), &labels, minus.view(), 5e-6).0)
                / (2.0 * step);
            let rel = (numeric - grad[idx]).abs() / grad[idx].abs().max(numeric.abs()).max(1e-8);
            worst_rel = worst_rel.max(rel);
        }
    }
    if worst_rel > 1e-6 {
        return Outcome::Fail(format!("gradient relative error {worst_rel:.2e}"));
    }

    let separable = [
        (ndarray::array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]),
        (ndarray::array![[1.0, 0.0, 0.1], [0.9, 0.1, 0.0], [0.0, 1.0, 0.2], [0.1, 0.8, 0.0]], vec![0, 0, 1, 1]),
        (ndarray::array![[3.0, 0.1, 0.0], [0.0, 2.0, 0.1], [0.1, 0.0, 4.0]], vec![0, 1, 2]),
    ];
    let mut fixtures: Vec<(Array2<f64>, Vec<usize>)> = separable.to_vec();
    for _ in 0..5 {
        let (x, labels, _) = random_triple(&mut rng);
        fixtures.push((x, labels));
    }
    let config = TrainConfig::default();
    for (i, (x, labels)) in fixtures.iter().enumerate() {
        let ways = labels.iter().max().unwrap() + 1;
        let out = train_logistic_traced(x.view(), labels, ways, &config).unwrap();
        if let Some(p) = out.loss_history.windows(2).find(|p| p[1] > p[0] + 1e-6) {
            return Outcome::Fail(format!("fixture {i}: loss rose {} -> {}", p[0], p[1]));
        }
        if i < separable.len() && predict(x.view(), &out.weights).unwrap().labels != *labels {
            return Outcome::Fail(format!("separable fixture {i} not fit"));
        }
    }
    Outcome::Pass(format!("gradient rel err {worst_rel:.2e}, {} fixtures monotone", fixtures.len()))
}

fn benchmark_set() -> FeatureSet {
    generate_synthetic(&SyntheticConfig {
        class_count: 20,
        per_class: 600,
        dim: 64,
        center_scale: 1.0,
        noise_sigma: 0.3,
        seed: 7,
    })
    .unwrap()
}

fn one_shot_spec() -> EpisodeSpec {
    EpisodeSpec { ways: 5, shots: 1, queries: 75, sampling: Sampling::Uniform, pool_per_class: PoolSize::All }
}

fn keep_runs() -> EvalOptions {
    EvalOptions { workers: 0, keep_runs: true }
}

fn propagation_benefit(set: &FeatureSet) -> Outcome {
    let hp = HyperParams::for_shots(1);
    let mut baseline = hp;
    baseline.propagation.kappa = 0;
    let with = evaluate(set, &one_shot_spec(), &hp, 500, EVAL_SEED, &keep_runs()).unwrap();
    let without = evaluate(set, &one_shot_spec(), &baseline, 500, EVAL_SEED, &keep_runs()).unwrap();
    let diffs: Vec<f64> = with
        .accuracies
        .as_ref()
        .unwrap()
        .iter()
        .zip(without.accuracies.as_ref().unwrap())
        .map(|(a, b)| a - b)
        .collect();
    let paired = summarize(&diffs);
    let margin = with.mean_accuracy - without.mean_accuracy;
    check(
        with.episodes_digest == without.episodes_digest && margin > 0.0 && margin >= PROPAGATION_MARGIN,
        format!(
            "kappa=3 {:.4} vs kappa=0 {:.4}, paired gain {:.4} +- {:.4} (bound {PROPAGATION_MARGIN})",
            with.mean_accuracy, without.mean_accuracy, paired.mean, paired.ci95
        ),
    )
}

fn sweep_shape(set: &FeatureSet) -> Outcome {
    let grid = SweepGrid { ks: vec![20], kappas: vec![1, 2, 3, 4, 5], alphas: vec![0.0] };
    let report = sweep(set, &one_shot_spec(), &grid, &TrainConfig::default(), 300, EVAL_SEED, &keep_runs()).unwrap();
    let acc: Vec<f64> = report.rows.iter().map(|r| r.mean_accuracy).collect();
    let shown: Vec<String> = report.rows.iter().map(|r| format!("{}:{:.4}", r.kappa, r.mean_accuracy)).collect();
    check(acc.windows(2).all(|w| w[1] <= w[0]), format!("k=20 alpha=0 kappa->acc {}", shown.join(" ")))
}

fn imbalance_trend(set: &FeatureSet) -> Outcome {
    let rows =
        evaluate_imbalance(set, &[1, 10, 25, 50], 100, 1, &HyperParams::for_shots(1), 500, EVAL_SEED, &keep_runs())
            .unwrap();
    let acc: Vec<f64> = rows.iter().map(|(_, r)| r.mean_accuracy).collect();
    let shown: Vec<String> = rows.iter().map(|(q, r)| format!("{q}:{:.4}", r.mean_accuracy)).collect();
    check(acc.windows(2).all(|w| w[1] >= w[0]), format!("q1->acc {}", shown.join(" ")))
}

fn scheduling_independence(set: &FeatureSet) -> Outcome {
    let hp = HyperParams::for_shots(1);
    let one = evaluate(set, &one_shot_spec(), &hp, 40, EVAL_SEED, &EvalOptions { workers: 1, keep_runs: true }).unwrap();
    let eight = evaluate(set, &one_shot_spec(), &hp, 40, EVAL_SEED, &EvalOptions { workers: 8, keep_runs: true }).unwrap();
    let (a, b) = (to_json(&one).unwrap(), to_json(&eight).unwrap());
    check(a == b, format!("{} bytes, digest {}", a.len(), one.episodes_digest))
}

fn ci_formula() -> Outcome {
    let s = summarize(&[0.8, 0.9, 1.0]);
    let expected = 1.96 * 0.1 / 3f64.sqrt();
    check(
        (s.mean - 0.9).abs() <= 1e-12 && (s.ci95 - expected).abs() <= 1e-12,
        format!("mean {:.12}, ci95 {:.12} (expected {expected:.12})", s.mean, s.ci95),
    )
}

fn external_reference() -> Outcome {
    let Some(path) = std::env::var_os(EXTERNAL_FEATURES) else {
        return Outcome::Skipped(format!("set {EXTERNAL_FEATURES} to an FSET1 file of novel-class features"));
    };
    let set = match load_feature_set(&path, FeatureFormat::from_path(path.as_ref())) {
        Ok(set) => set,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for (shots, target) in [(1usize, 0.7650), (5, 0.8523)] {
        let spec = EpisodeSpec { shots, ..one_shot_spec() };
        match evaluate(&set, &spec, &HyperParams::for_shots(shots), 10_000, EVAL_SEED, &EvalOptions::default()) {
            Ok(r) => {
                ok &= (r.mean_accuracy - target).abs() <= 0.01;
                lines.push(format!("{shots}-shot {:.2}% (target {:.2}%)", 100.0 * r.mean_accuracy, 100.0 * target));
            }
            Err(e) => return Outcome::Fail(e.to_string()),
        }
    }
    check(ok, lines.join(", "))
}

fn main() {
    let set = benchmark_set();
    let criteria: Vec<Criterion> = vec![
        ("propagation matches dense oracle", Box::new(propagation_oracle)),
        ("graph property suite", Box::new(graph_properties)),
        ("classifier gradient, fit and monotone loss", Box::new(classifier)),
        ("end-to-end propagation benefit", Box::new(|| propagation_benefit(&set))),
        ("over-smoothing sweep shape", Box::new(|| sweep_shape(&set))),
        ("imbalance trend", Box::new(|| imbalance_trend(&set))),
        ("1 vs 8 workers byte-identical", Box::new(|| scheduling_independence(&set))),
        ("ci95 closed form", Box::new(ci_formula)),
        ("external miniImageNet reference", Box::new(external_reference)),
    ];
    let mut failures = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Outcome::Fail("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("PASS    {name} ({secs:.1}s): {d}"),
            Outcome::Skipped(d) => println!("SKIPPED {name}: {d}"),
            Outcome::Fail(d) => {
                failures += 1;
                println!("FAIL    {name} ({secs:.1}s): {d}");
            }
        }
    }
    println!("acceptance: {} criteria, {failures} failed", criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
