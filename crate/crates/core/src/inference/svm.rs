//! One-vs-rest linear SVMs fitted by deterministic full-batch sub-gradient
//! descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, epochs: 200 }
    }
}

/// `classes` weight vectors over `dim` features plus a bias each.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub classes: usize,
    pub dim: usize,
    pub c: f64,
    /// Row-major `classes × dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl SvmModel {
    /// Fits one binary SVM per class on `samples` (each `dim` long) with
    /// labels in `0..classes`. Each minimizes
    /// `½‖w‖² + C·Σ max(0, 1 − yᵢ(w·xᵢ + b))` over standardized features,
    /// with the bias treated as a weight on a constant feature. Weights are
    /// rounded to `f32` so a stored model scores identically.
    pub fn fit(samples: &[Vec<f64>], labels: &[usize], classes: usize, cfg: &SvmConfig) -> Result<Self> {
        let n = samples.len();
        if n == 0 || labels.len() != n {
            return Err(Error::InvalidArgument("SVM needs one label per sample".into()));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::ConfigMismatch("SVM samples differ in dimension".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        if !(cfg.c > 0.0) {
            return Err(Error::InvalidArgument(format!("SVM C must be positive, got {}", cfg.c)));
        }
        // Features are standardized with the sample statistics; the scaling is
        // folded back into the stored weights.
        let mean: Vec<f64> = (0..dim)
            .map(|j| samples.iter().map(|x| x[j]).sum::<f64>() / n as f64)
            .collect();
        let scale: Vec<f64> = (0..dim)
            .map(|j| {
                let var = samples.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let xs: Vec<Vec<f64>> = samples
            .iter()
            .map(|x| (0..dim).map(|j| (x[j] - mean[j]) / scale[j]).collect())
            .collect();

        let lambda = 1.0 / (cfg.c * n as f64);
        let radius = 1.0 / lambda.sqrt();
        let mut weights = Vec::with_capacity(classes * dim);
        let mut biases = Vec::with_capacity(classes);
        let mut margins = vec![0.0; n];
        for k in 0..classes {
            let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            let mut w = vec![0.0; dim + 1];
            let mut grad = vec![0.0; dim + 1];
            // The last iterate of sub-gradient descent oscillates; the iterate
            // with the lowest primal objective is kept.
            let mut best = (f64::INFINITY, w.clone());
            for t in 1..=cfg.epochs + 1 {
                for (i, x) in xs.iter().enumerate() {
                    margins[i] = y[i] * (dot(&w[..dim], x) + w[dim]);
                }
                let hinge: f64 = margins.iter().map(|m| (1.0 - m).max(0.0)).sum::<f64>() / n as f64;
                let objective = 0.5 * lambda * dot(&w, &w) + hinge;
                if objective < best.0 {
                    best = (objective, w.clone());
                }
                if t > cfg.epochs {
                    break;
                }
                for (g, wv) in grad.iter_mut().zip(&w) {
                    *g = lambda * wv;
                }
                for (i, x) in xs.iter().enumerate() {
                    if margins[i] < 1.0 {
                        let s = y[i] / n as f64;
                        for (g, xv) in grad.iter_mut().zip(x) {
                            *g -= s * xv;
                        }
                        grad[dim] -= s;
                    }
                }
                let eta = 1.0 / (lambda * t as f64);
                for (wv, g) in w.iter_mut().zip(&grad) {
                    *wv -= eta * g;
                }
                // Projection onto the ball that contains the optimum.
                let norm = dot(&w, &w).sqrt();
                if norm > radius {
                    let s = radius / norm;
                    w.iter_mut().for_each(|v| *v *= s);
                }
            }
            let w = best.1;
            let raw: Vec<f64> = (0..dim).map(|j| w[j] / scale[j]).collect();
            let bias = w[dim] - (0..dim).map(|j| raw[j] * mean[j]).sum::<f64>();
            weights.extend(raw.iter().map(|v| *v as f32 as f64));
            biases.push(bias as f32 as f64);
        }
        Ok(Self {
            classes,
            dim,
            c: cfg.c,
            weights,
            biases,
        })
    }

    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| dot(&self.weights[k * self.dim..(k + 1) * self.dim], x) + self.biases[k])
            .collect()
    }

    /// Softmax over the decision values.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.decision_values(x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_clusters_fit_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centers = [[2.0, 0.0], [-2.0, 1.0], [0.0, -3.0]];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..40 {
                xs.push(vec![c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5)]);
                ys.push(k);
            }
        }
        let svm = SvmModel::fit(&xs, &ys, 3, &SvmConfig::default()).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            let d = svm.decision_values(x);
            let best = (0..3).max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a))).unwrap();
            assert_eq!(best, y);
        }
        assert!(svm.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn many_classes_on_a_large_common_offset() {
        // Embeddings share a large mean; one-vs-rest must still separate ten
        // tight clusters.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 16;
        let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(5.0..10.0)).collect();
        let centers: Vec<Vec<f64>> = (0..10)
            .map(|_| offset.iter().map(|o| o + rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (k, c) in centers.iter().enumerate() {
            for _ in 0..20 {
                xs.push(c.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect::<Vec<f64>>());
                ys.push(k);
            }
        }
        let svm = SvmModel::fit(&xs, &ys, 10, &SvmConfig::default()).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            let d = svm.decision_values(x);
            let best = (0..10).max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a))).unwrap();
            assert_eq!(best, y);
        }
    }

    #[test]
    fn two_class_margin_near_optimum() {
        // Points at ±1 on a line: the max-margin separator is w = 1, b = 0.
        let xs = vec![vec![1.0], vec![2.0], vec![-1.0], vec![-2.0]];
        let ys = vec![0, 0, 1, 1];
        let svm = SvmModel::fit(&xs, &ys, 2, &SvmConfig { c: 100.0, epochs: 2000 }).unwrap();
        assert!((svm.weights[0] - 1.0).abs() < 0.1, "{:?}", svm.weights);
        assert!(svm.biases[0].abs() < 0.1);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
        assert_eq!(softmax(&[0.3, 0.3]), vec![0.5, 0.5]);
    }

    #[test]
    fn fit_is_deterministic() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let ys: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let a = SvmModel::fit(&xs, &ys, 2, &SvmConfig::default()).unwrap();
        let b = SvmModel::fit(&xs, &ys, 2, &SvmConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
