//! Memory-bank tracking and re-identification-driven track labeling.

mod assignment;
mod reid;
mod stream;
mod tracker;

pub use assignment::{solve_assignment, CostMatrix, Matching};
pub use reid::{
    frame_accuracy, naive_labels, reid_track, write_labeled_tracks, ChunkLabel, FrameLabels, ReidOutcome,
};
pub use stream::{read_stream, write_stream, Detection, StreamFrame};
pub use tracker::{
    chunk_stream, naive_track, Chunk, ChunkConfig, ChunkStats, Track, TrackPoint, Tracker, TrackerConfig,
};
