//! Brute-force references shared by the integration tests. Nothing here
//! calls into the code paths it is used to check.

#![allow(dead_code)]

use ndarray::Array2;

fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let m = b.ncols();
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[[i, t]] * b[[t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Materializes `(alpha I + E)^kappa` and applies it to `v`.
pub fn dense_diffusion_oracle(e: &Array2<f64>, v: &Array2<f64>, alpha: f64, kappa: u32) -> Array2<f64> {
    let m = e.nrows();
    let mut step = e.clone();
    for i in 0..m {
        step[[i, i]] += alpha;
    }
    let mut power = Array2::<f64>::eye(m);
    for _ in 0..kappa {
        power = naive_matmul(&power, &step);
    }
    naive_matmul(&power, v)
}

/// Largest `||A x|| / ||x||` seen while power-iterating a symmetric matrix.
pub fn power_iteration_radius(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
    let mut best: f64 = 0.0;
    for _ in 0..iters {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return best;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let y: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[[i, j]] * x[j]).sum())
            .collect();
        best = best.max(y.iter().map(|v| v * v).sum::<f64>().sqrt());
        x = y;
    }
    best
}

/// Columns of row `i` that any top-`k` rule must keep: positive entries
/// strictly above the (k+1)-th largest off-diagonal value.
pub fn top_k_positive_support(s: &Array2<f64>, i: usize, k: usize) -> Vec<usize> {
    let mut vals: Vec<f64> = (0..s.ncols()).filter(|&j| j != i).map(|j| s[[i, j]]).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let cutoff = vals.get(k).copied().unwrap_or(0.0);
    (0..s.ncols())
        .filter(|&j| j != i && s[[i, j]] > 0.0 && s[[i, j]] > cutoff)
        .collect()
}

/// Fraction of rows whose nearest class center (Euclidean) is their own.
pub fn nearest_center_rate(features: &Array2<f32>, labels: &[usize], centers: &Array2<f32>) -> f64 {
    let mut hits = 0usize;
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let mut best = (f64::INFINITY, usize::MAX);
        for (c, center) in centers.rows().into_iter().enumerate() {
            let d: f64 = row
                .iter()
                .zip(center.iter())
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        hits += usize::from(best.1 == y);
    }
    hits as f64 / labels.len() as f64
}
