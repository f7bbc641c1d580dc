//! Detection streams and their JSON-lines form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// One segmented person observation at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub timestamp: f64,
    pub centroid: Point3,
    pub cloud: PointCloud,
}

impl Detection {
    pub fn new(timestamp: f64, cloud: PointCloud) -> Result<Self> {
        let centroid = cloud.centroid().ok_or(Error::EmptyCloud)?;
        Ok(Self {
            timestamp,
            centroid,
            cloud,
        })
    }
}

/// All detections of one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamFrame {
    pub t: f64,
    pub detections: Vec<Detection>,
}

#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    centroid: Point3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cloud_path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    points: Vec<[f32; 3]>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    detections: Vec<DetectionRecord>,
}

/// Writes one JSON object per frame with inline points.
pub fn write_stream(path: &Path, frames: &[StreamFrame]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for frame in frames {
        let record = FrameRecord {
            t: frame.t,
            detections: frame
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    centroid: d.centroid,
                    cloud_path: None,
                    points: d
                        .cloud
                        .points()
                        .iter()
                        .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &record).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a stream written by [`write_stream`]. A detection may instead name
/// a single-frame sequence file through `cloud_path`, resolved against the
/// stream's directory.
pub fn read_stream(path: &Path) -> Result<Vec<StreamFrame>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new(""));
    let mut frames = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        let mut detections = Vec::with_capacity(record.detections.len());
        for d in record.detections {
            let cloud = match d.cloud_path {
                Some(rel) => {
                    let seq = crate::io::read_sequence(&root.join(rel), "")?;
                    seq.frames()[0].clone()
                }
                None => PointCloud::new(d.points.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect())?,
            };
            detections.push(Detection {
                timestamp: record.t,
                centroid: d.centroid,
                cloud,
            });
        }
        frames.push(StreamFrame {
            t: record.t,
            detections,
        });
    }
    Ok(frames)
}
