//! Small numeric routines the scenario programs run inside contracts.
//! Matrices are row-major `&[f64]` with an explicit column count.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::{Result, ScenarioError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Full passes over the training set.
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 60, learning_rate: 0.5, seed: 7 }
    }
}

/// Per-column mean and standard deviation; constant columns get scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &[f64], cols: usize) -> Self {
        let n = (x.len() / cols).max(1) as f64;
        let mut mean = vec![0.0; cols];
        for row in x.chunks_exact(cols) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for row in x.chunks_exact(cols) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Scaler { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.mean.len();
        let mut out = x.to_vec();
        for row in out.chunks_exact_mut(cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binary logistic regression fitted by full-batch gradient descent on
/// standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub scaler: Scaler,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegression {
    pub fn fit(x: &[f64], y: &[f64], cols: usize, cfg: &TrainConfig) -> Result<Self> {
        check_shape(x, y, cols)?;
        let scaler = Scaler::fit(x, cols);
        let xs = scaler.transform(x);
        let n = y.len() as f64;
        let mut w = vec![0.0; cols];
        let mut b = 0.0;
        let mut grad = vec![0.0; cols];
        for _ in 0..cfg.epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (row, t) in xs.chunks_exact(cols).zip(y) {
                let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let err = sigmoid(z) - t;
                for (g, a) in grad.iter_mut().zip(row) {
                    *g += err * a;
                }
                gb += err;
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= cfg.learning_rate * g / n;
            }
            b -= cfg.learning_rate * gb / n;
        }
        Ok(LogisticRegression { scaler, weights: w, bias: b })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.weights.len();
        self.scaler
            .transform(x)
            .chunks_exact(cols)
            .map(|row| sigmoid(self.bias + row.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>()))
            .collect()
    }
}

/// One hidden tanh layer, sigmoid output, mini-batch SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub scaler: Scaler,
    pub hidden: usize,
    /// `hidden x cols`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Mlp {
    pub const HIDDEN: usize = 16;
    const BATCH: usize = 64;

    pub fn fit(x: &[f64], y: &[f64], cols: usize, cfg: &TrainConfig) -> Result<Self> {
        check_shape(x, y, cols)?;
        let h = Self::HIDDEN;
        let scaler = Scaler::fit(x, cols);
        let xs = scaler.transform(x);
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let bound = (1.0 / cols as f64).sqrt();
        let mut m = Mlp {
            scaler,
            hidden: h,
            w1: (0..h * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
            b1: vec![0.0; h],
            w2: (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            b2: 0.0,
        };
        let mut act = vec![0.0; h];
        let mut gw1 = vec![0.0; h * cols];
        let mut gb1 = vec![0.0; h];
        let mut gw2 = vec![0.0; h];
        for _ in 0..cfg.epochs {
            for (bx, by) in xs.chunks(Self::BATCH * cols).zip(y.chunks(Self::BATCH)) {
                gw1.iter_mut().for_each(|g| *g = 0.0);
                gb1.iter_mut().for_each(|g| *g = 0.0);
                gw2.iter_mut().for_each(|g| *g = 0.0);
                let mut gb2 = 0.0;
                for (row, t) in bx.chunks_exact(cols).zip(by) {
                    let p = m.forward(row, &mut act);
                    let d_out = p - t;
                    gb2 += d_out;
                    for j in 0..h {
                        gw2[j] += d_out * act[j];
                        let d_h = d_out * m.w2[j] * (1.0 - act[j] * act[j]);
                        gb1[j] += d_h;
                        for (g, a) in gw1[j * cols..(j + 1) * cols].iter_mut().zip(row) {
                            *g += d_h * a;
                        }
                    }
                }
                let lr = cfg.learning_rate / by.len() as f64;
                m.w1.iter_mut().zip(&gw1).for_each(|(w, g)| *w -= lr * g);
                m.b1.iter_mut().zip(&gb1).for_each(|(w, g)| *w -= lr * g);
                m.w2.iter_mut().zip(&gw2).for_each(|(w, g)| *w -= lr * g);
                m.b2 -= lr * gb2;
            }
        }
        Ok(m)
    }

    fn forward(&self, row: &[f64], act: &mut [f64]) -> f64 {
        let cols = row.len();
        for (j, a) in act.iter_mut().enumerate() {
            let z = self.b1[j] + self.w1[j * cols..(j + 1) * cols].iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
            *a = z.tanh();
        }
        sigmoid(self.b2 + act.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>())
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.scaler.mean.len();
        let mut act = vec![0.0; self.hidden];
        self.scaler.transform(x).chunks_exact(cols).map(|row| self.forward(row, &mut act)).collect()
    }
}

fn check_shape(x: &[f64], y: &[f64], cols: usize) -> Result<()> {
    if cols == 0 || x.len() != y.len() * cols {
        return Err(ScenarioError::Data(format!("design of {} values does not fit {} rows x {cols}", x.len(), y.len())));
    }
    if y.is_empty() {
        return Err(ScenarioError::Data("no training rows".into()));
    }
    Ok(())
}

/// Share of probabilities on the right side of 0.5.
pub fn accuracy(probs: &[f64], y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let hits = probs.iter().zip(y).filter(|(p, t)| (**p >= 0.5) == (**t >= 0.5)).count();
    hits as f64 / y.len() as f64
}

/// Least squares with an intercept prepended: returns `[b0, b1, ..]`.
/// Solves the normal equations by Cholesky factorization.
pub fn ols(x: &[f64], y: &[f64], cols: usize) -> Result<Vec<f64>> {
    if y.is_empty() || x.len() != y.len() * cols {
        return Err(ScenarioError::Data(format!("design of {} values does not fit {} rows x {cols}", x.len(), y.len())));
    }
    let p = cols + 1;
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut row = vec![1.0; p];
    for (i, t) in y.iter().enumerate() {
        row[1..].copy_from_slice(&x[i * cols..(i + 1) * cols]);
        for a in 0..p {
            xty[a] += row[a] * t;
            for b in 0..=a {
                xtx[a * p + b] += row[a] * row[b];
            }
        }
    }
    // Lower triangle of X'X = L L'.
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * p + k] * l[j * p + k]).sum();
            if i == j {
                let d = xtx[i * p + i] - s;
                if d <= 1e-12 * xtx[i * p + i].abs().max(1.0) {
                    return Err(ScenarioError::Data("design matrix is rank deficient".into()));
                }
                l[i * p + i] = d.sqrt();
            } else {
                l[i * p + j] = (xtx[i * p + j] - s) / l[j * p + j];
            }
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|k| l[i * p + k] * z[k]).sum();
        z[i] = (xty[i] - s) / l[i * p + i];
    }
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| l[k * p + i] * beta[k]).sum();
        beta[i] = (z[i] - s) / l[i * p + i];
    }
    Ok(beta)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Jaccard similarity of the distinct values.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    use std::collections::BTreeSet;
    let a: BTreeSet<&String> = a.iter().collect();
    let b: BTreeSet<&String> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}
