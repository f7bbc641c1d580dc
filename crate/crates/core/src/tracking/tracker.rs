//! Memory-bank tracker over centroid detections, and chunking of its tracks
//! into short sequences.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::assignment::{solve_assignment, CostMatrix};
use super::stream::{Detection, StreamFrame};
use crate::error::Result;
use crate::geometry::PersonSequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Largest centroid displacement accepted for a match, meters.
    pub gate: f64,
    /// Frames at the start of the stream in which unmatched detections open
    /// new tracks.
    pub init_frames: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: 1.0,
            init_frames: 1,
        }
    }
}

/// One detection attached to a track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackPoint {
    pub frame: usize,
    /// Index of the detection within its frame.
    pub index: usize,
    pub detection: Detection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: usize,
    pub identity: Option<String>,
    pub history: Vec<TrackPoint>,
}

impl Track {
    pub fn last(&self) -> &TrackPoint {
        self.history.last().expect("tracks are opened with a detection")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub tracks: Vec<Track>,
    /// Tracks matched in the previous frame; the rest form the memory bank.
    active: Vec<usize>,
    frame: usize,
    /// Detections that were neither matched nor allowed to open a track.
    pub unassigned: usize,
}

fn centroid_distance(a: &Detection, b: &Detection) -> f64 {
    let d = [
        a.centroid[0] - b.centroid[0],
        a.centroid[1] - b.centroid[1],
        a.centroid[2] - b.centroid[2],
    ];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn lexicographic(a: &Detection, b: &Detection) -> Ordering {
    a.centroid
        .iter()
        .zip(&b.centroid)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.frame
    }

    /// Matches `rows` (track indices) against `cols` (detection indices);
    /// returns the matched pairs.
    fn match_rows(&self, rows: &[usize], cols: &[usize], detections: &[Detection]) -> Vec<(usize, usize)> {
        let gate = self.config.gate;
        let costs = CostMatrix::from_fn(rows.len(), cols.len(), |r, c| {
            let d = centroid_distance(&self.tracks[rows[r]].last().detection, &detections[cols[c]]);
            if d <= gate {
                d
            } else {
                CostMatrix::FORBIDDEN
            }
        });
        solve_assignment(&costs)
            .pairs
            .into_iter()
            .map(|(r, c)| (rows[r], cols[c]))
            .collect()
    }

    /// Advances by one frame. Active tracks are matched first, then the
    /// memory bank takes the remaining detections. Returns the track index
    /// of every detection, in input order.
    pub fn step(&mut self, detections: &[Detection]) -> Vec<Option<usize>> {
        let mut order: Vec<usize> = (0..detections.len()).collect();
        order.sort_by(|&a, &b| lexicographic(&detections[a], &detections[b]).then(a.cmp(&b)));
        let mut assigned = vec![None; detections.len()];

        let active = self.active.clone();
        for (t, d) in self.match_rows(&active, &order, detections) {
            assigned[d] = Some(t);
        }
        let bank: Vec<usize> = (0..self.tracks.len()).filter(|t| !active.contains(t)).collect();
        let rest: Vec<usize> = order.iter().copied().filter(|&d| assigned[d].is_none()).collect();
        for (t, d) in self.match_rows(&bank, &rest, detections) {
            assigned[d] = Some(t);
        }

        let mut next_active = Vec::new();
        for &d in &order {
            let point = TrackPoint {
                frame: self.frame,
                index: d,
                detection: detections[d].clone(),
            };
            match assigned[d] {
                Some(t) => {
                    self.tracks[t].history.push(point);
                    next_active.push(t);
                }
                None if self.frame < self.config.init_frames => {
                    let id = self.tracks.len();
                    self.tracks.push(Track {
                        id,
                        identity: None,
                        history: vec![point],
                    });
                    assigned[d] = Some(id);
                    next_active.push(id);
                }
                None => self.unassigned += 1,
            }
        }
        next_active.sort_unstable();
        self.active = next_active;
        self.frame += 1;
        assigned
    }
}

/// Runs the tracker over a whole stream; returns it together with the track
/// index of every detection.
pub fn naive_track(frames: &[StreamFrame], config: TrackerConfig) -> (Tracker, Vec<Vec<Option<usize>>>) {
    let mut tracker = Tracker::new(config);
    let assigned = frames.iter().map(|f| tracker.step(&f.detections)).collect();
    (tracker, assigned)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkConfig {
    pub target: usize,
    pub min: usize,
    pub max: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            target: 30,
            min: 10,
            max: 45,
        }
    }
}

impl ChunkConfig {
    /// Lengths a run of `len` frames is cut into; empty when the run is too
    /// short.
    pub fn split(&self, len: usize) -> Vec<usize> {
        if len < self.min {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut rest = len;
        while rest > self.max {
            out.push(self.target);
            rest -= self.target;
        }
        out.push(rest);
        out
    }
}

/// A contiguous piece of one track.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub track: usize,
    /// `(frame, detection index)` of every member.
    pub members: Vec<(usize, usize)>,
    pub sequence: PersonSequence,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkStats {
    pub chunks: usize,
    pub dropped_runs: usize,
    pub dropped_frames: usize,
}

/// Cuts every track into runs of consecutive frames and every run into
/// chunks. Runs shorter than the minimum are dropped and counted.
pub fn chunk_stream(tracks: &[Track], config: ChunkConfig) -> Result<(Vec<Chunk>, ChunkStats)> {
    let mut chunks = Vec::new();
    let mut stats = ChunkStats::default();
    for track in tracks {
        let h = &track.history;
        let mut start = 0;
        while start < h.len() {
            let mut end = start + 1;
            while end < h.len() && h[end].frame == h[end - 1].frame + 1 {
                end += 1;
            }
            let lengths = config.split(end - start);
            if lengths.is_empty() {
                stats.dropped_runs += 1;
                stats.dropped_frames += end - start;
            }
            let mut at = start;
            for len in lengths {
                let part = &h[at..at + len];
                let sequence = PersonSequence::new(
                    track.identity.clone().unwrap_or_default(),
                    part.iter().map(|p| p.detection.cloud.clone()).collect(),
                    part.iter().map(|p| p.detection.timestamp).collect(),
                )?;
                chunks.push(Chunk {
                    track: track.id,
                    members: part.iter().map(|p| (p.frame, p.index)).collect(),
                    sequence,
                });
                at += len;
            }
            start = end;
        }
    }
    stats.chunks = chunks.len();
    Ok((chunks, stats))
}
