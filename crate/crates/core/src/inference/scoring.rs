//! Per-view probe scoring, view voting and rank consolidation.

use serde::{Deserialize, Serialize};

use super::gallery::{Gallery, GalleryMode};
use crate::encoder::{part_distance, MultiViewEmbedding};
use crate::error::{Error, Result};

/// Scores of one probe view against the gallery.
#[derive(Clone, Debug, PartialEq)]
pub enum ViewScore {
    /// Per-identity probabilities.
    Probabilities(Vec<f64>),
    /// Per-identity minimum distances, plus the distance to every enrolled
    /// sequence as `instances[identity][j]`.
    Distances { identity: Vec<f64>, instances: Vec<Vec<f64>> },
}

impl ViewScore {
    pub fn identity_count(&self) -> usize {
        match self {
            ViewScore::Probabilities(p) => p.len(),
            ViewScore::Distances { identity, .. } => identity.len(),
        }
    }

    /// Best identity; ties go to the lowest index.
    pub fn top(&self) -> usize {
        let (values, higher_better) = match self {
            ViewScore::Probabilities(p) => (p, true),
            ViewScore::Distances { identity, .. } => (identity, false),
        };
        let mut best = 0;
        for (i, v) in values.iter().enumerate().skip(1) {
            let better = if higher_better { *v > values[best] } else { *v < values[best] };
            if better {
                best = i;
            }
        }
        best
    }

    /// 1-based rank of `truth`. Probabilities rank identities; distances
    /// rank every enrolled sequence and report the first of `truth`. Ties
    /// order by identity index, then sequence index.
    pub fn rank_of(&self, truth: usize) -> usize {
        match self {
            ViewScore::Probabilities(p) => {
                let t = p[truth];
                1 + p
                    .iter()
                    .enumerate()
                    .filter(|&(i, v)| *v > t || (*v == t && i < truth))
                    .count()
            }
            ViewScore::Distances { instances, .. } => {
                let best = instances[truth]
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                    .expect("non-empty gallery");
                let (j_true, d_true) = (best.0, *best.1);
                let ahead = instances
                    .iter()
                    .enumerate()
                    .flat_map(|(i, list)| list.iter().enumerate().map(move |(j, d)| (i, j, *d)))
                    .filter(|&(i, j, d)| d < d_true || (d == d_true && (i, j) < (truth, j_true)))
                    .count();
                1 + ahead
            }
        }
    }
}

/// One [`ViewScore`] per probe view.
pub fn score_probe(gallery: &Gallery, probe: &MultiViewEmbedding) -> Result<Vec<ViewScore>> {
    if probe.flat_dim() != gallery.flat_dim() || probe.parts != gallery.parts() {
        return Err(Error::ConfigMismatch(format!(
            "probe embedding has dimension {}, gallery {}",
            probe.flat_dim(),
            gallery.flat_dim()
        )));
    }
    let parts = probe.parts;
    Ok(probe
        .views
        .iter()
        .map(|view| match gallery.mode {
            GalleryMode::Svm => ViewScore::Probabilities(
                gallery.svm.as_ref().expect("svm gallery carries a model").probabilities(view),
            ),
            GalleryMode::NearestNeighbor => {
                let instances: Vec<Vec<f64>> = gallery
                    .embeddings
                    .iter()
                    .map(|list| {
                        list.iter()
                            .map(|e| {
                                e.views
                                    .iter()
                                    .map(|g| part_distance(view, g, parts))
                                    .fold(f64::INFINITY, f64::min)
                            })
                            .collect()
                    })
                    .collect();
                let identity = instances
                    .iter()
                    .map(|l| l.iter().copied().fold(f64::INFINITY, f64::min))
                    .collect();
                ViewScore::Distances { identity, instances }
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    /// Modal identity; ties go to the lowest index.
    pub predicted: usize,
    /// Votes per identity.
    pub votes: Vec<usize>,
    /// Top identity of every view.
    pub per_view: Vec<usize>,
}

impl Vote {
    /// True when `truth` holds a strict majority of the views.
    pub fn accepted(&self, truth: usize) -> bool {
        self.votes.get(truth).copied().unwrap_or(0) > self.per_view.len() / 2
    }
}

pub fn majority_vote(scores: &[ViewScore]) -> Vote {
    let identities = scores.first().map_or(0, ViewScore::identity_count);
    let per_view: Vec<usize> = scores.iter().map(ViewScore::top).collect();
    let mut votes = vec![0; identities];
    for &v in &per_view {
        votes[v] += 1;
    }
    let mut predicted = 0;
    for (i, &c) in votes.iter().enumerate() {
        if c > votes[predicted] {
            predicted = i;
        }
    }
    Vote {
        predicted,
        votes,
        per_view,
    }
}

/// One-hot consolidation of the per-view ranks of the true identity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionVector {
    pub ranks: Vec<usize>,
    /// Smallest `r` for which more than half the views rank the truth
    /// within the top `r`.
    pub r: usize,
    pub m: Vec<u8>,
}

/// `m` has length `gallery_size`, extended to `r` when a view ranks over
/// enrolled sequences beyond the identity count.
pub fn reduce_rank_vector(scores: &[ViewScore], truth: usize, gallery_size: usize) -> ReductionVector {
    let ranks: Vec<usize> = scores.iter().map(|s| s.rank_of(truth)).collect();
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    // The (⌊V/2⌋+1)-th smallest rank is the first r that a majority reaches.
    let r = sorted[ranks.len() / 2];
    let mut m = vec![0u8; gallery_size.max(r)];
    m[r - 1] = 1;
    ReductionVector { ranks, r, m }
}
