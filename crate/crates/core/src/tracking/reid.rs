//! Track labeling by gallery re-identification of chunked tracks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stream::StreamFrame;
use super::tracker::{chunk_stream, naive_track, ChunkConfig, ChunkStats, Tracker, TrackerConfig};
use crate::error::{Error, Result};
use crate::inference::{majority_vote, score_probe, Embedder, Gallery};

/// Identity of every detection, `labels[frame][detection]`.
pub type FrameLabels = Vec<Vec<Option<String>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkLabel {
    pub track: usize,
    pub first_frame: usize,
    pub frames: usize,
    pub identity: String,
    /// Votes the identity received out of the view count.
    pub votes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReidOutcome {
    pub tracker: Tracker,
    /// Track index of every detection from the underlying naive tracker.
    pub assigned: Vec<Vec<Option<usize>>>,
    pub labels: FrameLabels,
    pub chunks: Vec<ChunkLabel>,
    pub stats: ChunkStats,
    /// Chunks that could not be rendered.
    pub skipped: usize,
}

/// Tracks the stream naively, cuts the tracks into chunks, and labels every
/// chunk's detections with the gallery identity its views vote for.
pub fn reid_track(
    frames: &[StreamFrame],
    embedder: &Embedder,
    gallery: &Gallery,
    tracker: TrackerConfig,
    chunking: ChunkConfig,
) -> Result<ReidOutcome> {
    let (tracker, assigned) = naive_track(frames, tracker);
    let (chunks, stats) = chunk_stream(&tracker.tracks, chunking)?;
    let mut labels: FrameLabels = frames.iter().map(|f| vec![None; f.detections.len()]).collect();
    let mut out = Vec::with_capacity(chunks.len());
    let mut skipped = 0;
    for chunk in chunks {
        let embedding = match embedder.embed(&chunk.sequence) {
            Ok(e) => e,
            Err(Error::EmptyRender { view, frame }) => {
                log::warn!("skipping chunk of track {}: empty render in view {view} frame {frame:?}", chunk.track);
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let vote = majority_vote(&score_probe(gallery, &embedding)?);
        let identity = gallery.identities[vote.predicted].clone();
        for &(f, d) in &chunk.members {
            labels[f][d] = Some(identity.clone());
        }
        out.push(ChunkLabel {
            track: chunk.track,
            first_frame: chunk.members[0].0,
            frames: chunk.members.len(),
            identity,
            votes: vote.votes[vote.predicted],
        });
    }
    Ok(ReidOutcome {
        tracker,
        assigned,
        labels,
        chunks: out,
        stats,
        skipped,
    })
}

/// Labels of the naive tracker: every track keeps the true identity of the
/// detection that opened it.
pub fn naive_labels(tracker: &Tracker, assigned: &[Vec<Option<usize>>], truth: &[Vec<String>]) -> FrameLabels {
    let birth: Vec<String> = tracker
        .tracks
        .iter()
        .map(|t| {
            let p = &t.history[0];
            truth[p.frame][p.index].clone()
        })
        .collect();
    assigned
        .iter()
        .map(|frame| frame.iter().map(|a| a.map(|t| birth[t].clone())).collect())
        .collect()
}

/// Fraction of detections whose label equals the truth, optionally only
/// over detections of the listed identities. Unlabeled detections count as
/// wrong.
pub fn frame_accuracy(labels: &FrameLabels, truth: &[Vec<String>], only: Option<&[String]>) -> f64 {
    let (mut total, mut hits) = (0usize, 0usize);
    for (lf, tf) in labels.iter().zip(truth) {
        for (l, t) in lf.iter().zip(tf) {
            if only.is_some_and(|ids| !ids.contains(t)) {
                continue;
            }
            total += 1;
            hits += (l.as_deref() == Some(t.as_str())) as usize;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Serialize)]
struct LabeledDetection<'a> {
    index: usize,
    track: Option<usize>,
    identity: Option<&'a str>,
}

#[derive(Serialize)]
struct LabeledFrame<'a> {
    t: f64,
    detections: Vec<LabeledDetection<'a>>,
}

/// One JSON object per frame with the track and identity of every detection.
pub fn write_labeled_tracks(
    path: &Path,
    frames: &[StreamFrame],
    assigned: &[Vec<Option<usize>>],
    labels: &FrameLabels,
) -> Result<()> {
    let mut out = Vec::new();
    for ((f, a), l) in frames.iter().zip(assigned).zip(labels) {
        let rec = LabeledFrame {
            t: f.t,
            detections: a
                .iter()
                .zip(l)
                .enumerate()
                .map(|(index, (track, identity))| LabeledDetection {
                    index,
                    track: *track,
                    identity: identity.as_deref(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts() {
        let truth = vec![vec!["a".to_string(), "b".to_string()], vec!["a".to_string()]];
        let labels = vec![vec![Some("a".to_string()), Some("a".to_string())], vec![None]];
        assert!((frame_accuracy(&labels, &truth, None) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(frame_accuracy(&labels, &truth, Some(&["b".to_string()])), 0.0);
    }
}
