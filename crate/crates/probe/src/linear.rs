//! A linear max-margin classifier fit by full-batch gradient descent.
//!
//! This stands in for an external SVM solver. The objective is the
//! Crammer-Singer multiclass hinge loss plus an L2 penalty on the weights,
//! minimized from a zero start on per-dimension standardized features. Zero
//! initialization and full batches leave nothing random, so two fits on the
//! same data always agree bitwise.

use crate::ProbeError;

/// L2 penalty coefficient on the weight matrix (the bias is not penalized).
pub const HINGE_L2: f64 = 1e-3;

/// Standard deviations below this are treated as constant dimensions and
/// left unscaled after centering.
const STD_FLOOR: f64 = 1e-12;

/// Linear classifier with the feature standardization it was fit under.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    n_classes: usize,
    dim: usize,
    /// Row-major `n_classes x dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl LinearProbe {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    /// Per-class scores for one raw (unstandardized) feature row.
    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.dim, "feature width mismatch");
        let z = self.standardize(row);
        (0..self.n_classes)
            .map(|r| {
                let w = &self.weights[r * self.dim..(r + 1) * self.dim];
                self.bias[r] + dot(w, &z)
            })
            .collect()
    }

    /// Predicted class, ties broken toward the smaller class id.
    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(&self.scores(row))
    }

    /// Gap between the best and second-best score. Infinite when only one
    /// class exists, so margin filters keep every prediction.
    pub fn margin(&self, row: &[f64]) -> f64 {
        let s = self.scores(row);
        if s.len() < 2 {
            return f64::INFINITY;
        }
        let top = argmax(&s);
        let mut second = f64::NEG_INFINITY;
        for (r, &v) in s.iter().enumerate() {
            if r != top && v > second {
                second = v;
            }
        }
        s[top] - second
    }

    /// Fraction of rows whose prediction matches the label.
    pub fn evaluate(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        assert_eq!(features.len(), labels.len());
        if features.is_empty() {
            return 0.0;
        }
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(f, &y)| self.predict(f) == y)
            .count();
        hits as f64 / features.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn check_inputs(features: &[Vec<f64>], labels: &[usize]) -> Result<(usize, usize), ProbeError> {
    if features.is_empty() {
        return Err(ProbeError::Data("no training features".into()));
    }
    if features.len() != labels.len() {
        return Err(ProbeError::Data(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(ProbeError::Data("ragged feature rows".into()));
    }
    let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(ProbeError::Data(format!(
            "class {missing} has no training examples"
        )));
    }
    Ok((dim, n_classes))
}

/// Fit a probe and return it together with the per-epoch objective values.
///
/// Each recorded value is the objective at the start of that epoch, so the
/// history has `epochs` entries and descent shows up as a non-increasing
/// sequence. The `seed` only names the fit; nothing in the descent is random.
pub fn train_probe_traced(
    features: &[Vec<f64>],
    labels: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(LinearProbe, Vec<f64>), ProbeError> {
    let _ = seed;
    let (dim, n_classes) = check_inputs(features, labels)?;
    let m = features.len();

    let mut mean = vec![0.0f64; dim];
    for f in features {
        for (a, &x) in mean.iter_mut().zip(f) {
            *a += x;
        }
    }
    for a in &mut mean {
        *a /= m as f64;
    }
    let mut var = vec![0.0f64; dim];
    for f in features {
        for ((a, &x), &mu) in var.iter_mut().zip(f).zip(&mean) {
            *a += (x - mu) * (x - mu);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|&v| {
            let s = (v / m as f64).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        })
        .collect();

    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            f.iter()
                .zip(mean.iter().zip(&std))
                .map(|(&v, (&mu, &s))| (v - mu) / s)
                .collect()
        })
        .collect();

    let mut w = vec![0.0f64; n_classes * dim];
    let mut b = vec![0.0f64; n_classes];
    let mut history = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        let mut grad_w = vec![0.0f64; n_classes * dim];
        let mut grad_b = vec![0.0f64; n_classes];
        let mut hinge_sum = 0.0f64;

        for (xi, &y) in x.iter().zip(labels) {
            let scores: Vec<f64> = (0..n_classes)
                .map(|r| b[r] + dot(&w[r * dim..(r + 1) * dim], xi))
                .collect();
            // Most violating class under the margin-augmented score.
            let mut worst = y;
            let mut worst_val = scores[y];
            for (r, &s) in scores.iter().enumerate() {
                let aug = if r == y { s } else { s + 1.0 };
                if aug > worst_val {
                    worst = r;
                    worst_val = aug;
                }
            }
            hinge_sum += worst_val - scores[y];
            if worst != y {
                for (g, &v) in grad_w[worst * dim..(worst + 1) * dim].iter_mut().zip(xi) {
                    *g += v;
                }
                for (g, &v) in grad_w[y * dim..(y + 1) * dim].iter_mut().zip(xi) {
                    *g -= v;
                }
                grad_b[worst] += 1.0;
                grad_b[y] -= 1.0;
            }
        }

        let penalty: f64 = w.iter().map(|&v| v * v).sum::<f64>() * HINGE_L2;
        history.push(hinge_sum / m as f64 + penalty);

        for (wi, gi) in w.iter_mut().zip(&grad_w) {
            *wi -= lr * (gi / m as f64 + 2.0 * HINGE_L2 * *wi);
        }
        for (bi, gi) in b.iter_mut().zip(&grad_b) {
            *bi -= lr * gi / m as f64;
        }
    }

    if w.iter().chain(&b).any(|v| !v.is_finite()) {
        return Err(ProbeError::Data(
            "probe parameters became non-finite; lower the learning rate".into(),
        ));
    }

    Ok((
        LinearProbe {
            n_classes,
            dim,
            weights: w,
            bias: b,
            mean,
            std,
        },
        history,
    ))
}

/// Fit a probe on one feature row per cloud. See [`train_probe_traced`].
pub fn train_probe(
    features: &[Vec<f64>],
    labels: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<LinearProbe, ProbeError> {
    train_probe_traced(features, labels, epochs, lr, seed).map(|(p, _)| p)
}
