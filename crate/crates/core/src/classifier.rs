//! Bias-free softmax regression trained full-batch with Adam.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Training stops early once the gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-3,
            weight_decay: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_tol: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation("weight decay must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("moment decay rates must lie in [0, 1)"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        Ok(())
    }
}

/// `h x ways` weight matrix; scores are `features . W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    w: Array2<f64>,
}

impl ClassifierWeights {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("classifier weights must be finite"));
        }
        Ok(Self { w })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn ways(&self) -> usize {
        self.w.ncols()
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub probabilities: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: ClassifierWeights,
    pub epochs_run: usize,
    /// Objective value before each update, followed by the final value.
    pub loss_history: Vec<f64>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(scores: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = scores.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|s| (s - max).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

/// Mean cross-entropy plus `weight_decay * ||W||^2 / 2`, and its gradient
/// with respect to `W`.
pub fn loss_and_gradient(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    w: ArrayView2<'_, f64>,
    weight_decay: f64,
) -> (f64, Array2<f64>) {
    let n = x.nrows() as f64;
    let scores = x.dot(&w);
    let mut loss = 0.0;
    let mut residual = softmax_rows(scores.view());
    for ((mut row, scores), &y) in residual.axis_iter_mut(Axis(0)).zip(scores.rows()).zip(labels) {
        let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        loss += lse - scores[y];
        row[y] -= 1.0;
    }
    loss /= n;
    loss += 0.5 * weight_decay * w.iter().map(|v| v * v).sum::<f64>();
    let mut grad = x.t().dot(&residual) / n;
    grad.scaled_add(weight_decay, &w);
    (loss, grad)
}

fn check_training_inputs(x: ArrayView2<'_, f64>, labels: &[usize], ways: usize) -> Result<()> {
    if ways < 1 {
        return Err(Error::validation("ways must be at least 1"));
    }
    if labels.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} labeled rows",
            labels.len(),
            x.nrows()
        )));
    }
    if x.nrows() < ways {
        return Err(Error::validation(format!(
            "{} labeled rows cannot cover {ways} classes",
            x.nrows()
        )));
    }
    let mut seen = vec![false; ways];
    for &y in labels {
        if y >= ways {
            return Err(Error::validation(format!("label {y} out of range for {ways} ways")));
        }
        seen[y] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::validation(format!(
            "class {missing} has no labeled rows"
        )));
    }
    for ((row, col), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Full-batch Adam from `W = 0`, recording the objective at every epoch.
pub fn train_logistic_traced(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    ways: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_training_inputs(x, labels, ways)?;
    let h = x.ncols();
    let mut w = Array2::<f64>::zeros((h, ways));
    let mut m = Array2::<f64>::zeros((h, ways));
    let mut v = Array2::<f64>::zeros((h, ways));
    let mut history = Vec::with_capacity(config.epochs + 1);
    let mut epochs_run = 0;

    for epoch in 0..config.epochs {
        let (loss, grad) = loss_and_gradient(x, labels, w.view(), config.weight_decay);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(loss);
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < config.grad_tol {
            break;
        }
        let t = (epoch + 1) as i32;
        let bias1 = 1.0 - config.beta1.powi(t);
        let bias2 = 1.0 - config.beta2.powi(t);
        ndarray::Zip::from(&mut w)
            .and(&mut m)
            .and(&mut v)
            .and(&grad)
            .for_each(|w, m, v, &g| {
                *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            });
        epochs_run = epoch + 1;
    }
    if epochs_run == config.epochs {
        let (loss, _) = loss_and_gradient(x, labels, w.view(), config.weight_decay);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: epochs_run });
        }
        history.push(loss);
    }
    Ok(TrainOutcome {
        weights: ClassifierWeights::new(w)?,
        epochs_run,
        loss_history: history,
    })
}

pub fn train_logistic(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    ways: usize,
    config: &TrainConfig,
) -> Result<ClassifierWeights> {
    train_logistic_traced(x, labels, ways, config).map(|o| o.weights)
}

/// Argmax of `x . W` per row (ties to the smaller class) plus softmax rows.
pub fn predict(x: ArrayView2<'_, f64>, weights: &ClassifierWeights) -> Result<Predictions> {
    if x.ncols() != weights.dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, weights expect {}",
            x.ncols(),
            weights.dim()
        )));
    }
    let scores = x.dot(weights.matrix());
    Ok(predict_from_scores(scores.view()))
}

pub fn predict_from_scores(scores: ArrayView2<'_, f64>) -> Predictions {
    let labels = scores
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &s)| if s > best.1 { (j, s) } else { best })
                .0
        })
        .collect();
    Predictions {
        labels,
        probabilities: softmax_rows(scores),
    }
}
