//! BatchAll triplet loss and cross-entropy with their gradients.

use serde::{Deserialize, Serialize};

use crate::encoder::{MultiViewEmbedding, TrainForward};
use crate::error::{Error, Result};
use crate::nn::Real;

/// Scalar loss terms of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub triplet: f64,
    pub ce: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.triplet.is_finite() && self.ce.is_finite() && self.total.is_finite()
    }
}

/// Part-mean Euclidean distance plus the per-part norms it was built from.
fn distance_parts(a: &[f64], b: &[f64], parts: usize) -> f64 {
    let dim = a.len() / parts;
    let mut total = 0.0;
    for p in 0..parts {
        let sq: f64 = (p * dim..(p + 1) * dim).map(|j| (a[j] - b[j]).powi(2)).sum();
        total += sq.sqrt();
    }
    total / parts as f64
}

/// BatchAll triplet loss over `rows` laid out as `sample * views + view`,
/// each of length `parts * dim`. Returns the loss and its gradient.
pub(crate) fn triplet_with_grad(
    rows: &[f64],
    labels: &[usize],
    views: usize,
    parts: usize,
    margin: f64,
) -> (f64, Vec<f64>) {
    let n = labels.len();
    let dim = rows.len() / (n * views);
    let row = |s: usize, v: usize| &rows[(s * views + v) * dim..(s * views + v + 1) * dim];
    let mut grad = vec![0.0; rows.len()];
    let mut loss = 0.0;
    let mut weight = vec![0.0; n * n];
    let mut dist = vec![0.0; n * n];
    for v in 0..views {
        for i in 0..n {
            for j in i + 1..n {
                let d = distance_parts(row(i, v), row(j, v), parts);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        weight.iter_mut().for_each(|w| *w = 0.0);
        for a in 0..n {
            for p in 0..n {
                if p == a || labels[p] != labels[a] {
                    continue;
                }
                for q in 0..n {
                    if labels[q] == labels[a] {
                        continue;
                    }
                    count += 1;
                    let h = dist[a * n + p] - dist[a * n + q] + margin;
                    if h > 0.0 {
                        sum += h;
                        weight[a * n + p] += 1.0;
                        weight[a * n + q] -= 1.0;
                    }
                }
            }
        }
        if count == 0 {
            continue;
        }
        loss += sum / count as f64;
        let scale = 1.0 / (count as f64 * views as f64);
        for i in 0..n {
            for j in 0..n {
                let w = weight[i * n + j];
                if w == 0.0 {
                    continue;
                }
                let (ri, rj) = ((i * views + v) * dim, (j * views + v) * dim);
                let pd = dim / parts;
                for p in 0..parts {
                    let span = p * pd..(p + 1) * pd;
                    let norm: f64 = span
                        .clone()
                        .map(|k| (rows[ri + k] - rows[rj + k]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let c = w * scale / (parts as f64 * norm);
                    for k in span {
                        let g = c * (rows[ri + k] - rows[rj + k]);
                        grad[ri + k] += g;
                        grad[rj + k] -= g;
                    }
                }
            }
        }
    }
    (loss / views as f64, grad)
}

/// Mean softmax cross-entropy over `labels.len()` rows of logits and its
/// gradient.
pub(crate) fn cross_entropy_with_grad(
    logits: &[f64],
    classes: usize,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let rows = labels.len();
    debug_assert_eq!(logits.len(), rows * classes);
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - z[label];
        for k in 0..classes {
            let p = (z[k] - lse).exp();
            grad[r * classes + k] = (p - if k == label { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    Ok((loss / rows as f64, grad))
}

fn flatten(embeddings: &[MultiViewEmbedding]) -> Result<(Vec<f64>, usize, usize)> {
    let first = embeddings.first().ok_or(Error::EmptySequence)?;
    let views = first.view_count();
    let flat = first.flat_dim();
    let mut rows = Vec::with_capacity(embeddings.len() * views * flat);
    for e in embeddings {
        if e.view_count() != views || e.flat_dim() != flat || e.parts != first.parts {
            return Err(Error::ConfigMismatch("embeddings of a batch differ in shape".into()));
        }
        for v in &e.views {
            rows.extend_from_slice(v);
        }
    }
    Ok((rows, views, first.parts))
}

/// BatchAll triplet loss: per view the mean hinge over every valid
/// (anchor, positive, negative) triple, then the mean over views.
pub fn batchall_triplet(embeddings: &[MultiViewEmbedding], labels: &[usize], margin: f64) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let (rows, views, parts) = flatten(embeddings)?;
    Ok(triplet_with_grad(&rows, labels, views, parts, margin).0)
}

/// Triplet term plus `lambda` times the mean per-view cross-entropy.
/// `logits[s][v]` holds the class logits of sample `s`, view `v`.
pub fn total_loss(
    embeddings: &[MultiViewEmbedding],
    logits: &[Vec<Vec<f64>>],
    labels: &[usize],
    margin: f64,
    lambda: f64,
) -> Result<LossTerms> {
    let triplet = batchall_triplet(embeddings, labels, margin)?;
    let classes = logits
        .first()
        .and_then(|l| l.first())
        .map(Vec::len)
        .ok_or(Error::EmptySequence)?;
    let mut flat = Vec::new();
    let mut row_labels = Vec::new();
    for (per_view, &label) in logits.iter().zip(labels) {
        for l in per_view {
            if l.len() != classes {
                return Err(Error::ConfigMismatch("logit vectors differ in length".into()));
            }
            flat.extend_from_slice(l);
            row_labels.push(label);
        }
    }
    let (ce, _) = cross_entropy_with_grad(&flat, classes, &row_labels)?;
    Ok(LossTerms {
        triplet,
        ce,
        total: triplet + lambda * ce,
    })
}

/// Loss terms of a training forward together with the gradients at the
/// pre-neck embeddings and at the logits. Groups are `sample * views + view`.
pub fn batch_loss<T: Real>(
    fwd: &TrainForward<T>,
    labels: &[usize],
    views: usize,
    parts: usize,
    classes: usize,
    margin: f64,
    lambda: f64,
) -> Result<(LossTerms, Vec<T>, Vec<T>)> {
    if labels.len() * views != fwd.group_count() {
        return Err(Error::InvalidArgument(format!(
            "{} labels x {views} views do not cover {} groups",
            labels.len(),
            fwd.group_count()
        )));
    }
    let rows: Vec<f64> = fwd.embeddings.iter().map(|v| v.f64()).collect();
    let (triplet, d_emb) = triplet_with_grad(&rows, labels, views, parts, margin);
    let logits: Vec<f64> = fwd.logits.iter().map(|v| v.f64()).collect();
    let row_labels: Vec<usize> = labels.iter().flat_map(|&l| std::iter::repeat_n(l, views)).collect();
    let (ce, d_logits) = cross_entropy_with_grad(&logits, classes, &row_labels)?;
    let terms = LossTerms {
        triplet,
        ce,
        total: triplet + lambda * ce,
    };
    Ok((
        terms,
        d_emb.into_iter().map(T::of).collect(),
        d_logits.into_iter().map(|g| T::of(lambda * g)).collect(),
    ))
}
