use crate::error::{Error, Result};

/// A point in meters, world frame, z up with the floor at z = 0.
pub type Point3 = [f64; 3];

/// A segmented point cloud of one person (or one scene) at one instant.
///
/// Coordinates are validated at construction: non-finite values are rejected
/// and negative heights are clamped to the floor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        let mut points = points;
        for p in &mut points {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite point coordinate {p:?}"
                )));
            }
            if p[2] < 0.0 {
                p[2] = 0.0;
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean point, or `None` for an empty cloud.
    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let mut acc = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                acc[k] += p[k];
            }
        }
        let n = self.points.len() as f64;
        Some([acc[0] / n, acc[1] / n, acc[2] / n])
    }

    /// Rotation about the vertical axis through the world origin.
    pub fn rotated_about_vertical(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        self.map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
    }

    /// Uniform scale about the vertical axis through the horizontal centroid,
    /// keeping the floor fixed.
    pub fn scaled_about_floor_axis(&self, factor: f64) -> Self {
        let Some(c) = self.centroid() else {
            return self.clone();
        };
        self.map(|p| {
            [
                c[0] + factor * (p[0] - c[0]),
                c[1] + factor * (p[1] - c[1]),
                factor * p[2],
            ]
        })
    }

    pub fn translated(&self, offset: Point3) -> Self {
        self.map(|p| [p[0] + offset[0], p[1] + offset[1], (p[2] + offset[2]).max(0.0)])
    }

    fn map(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
        }
    }
}

/// Subtracts the horizontal centroid; heights stay floor-relative.
pub fn center_horizontal(cloud: &PointCloud) -> Result<PointCloud> {
    let c = cloud.centroid().ok_or(Error::EmptyCloud)?;
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2]])
            .collect(),
    })
}

/// L frames of one individual with strictly increasing timestamps (seconds).
#[derive(Clone, Debug, PartialEq)]
pub struct PersonSequence {
    identity: String,
    frames: Vec<PointCloud>,
    timestamps: Vec<f64>,
}

impl PersonSequence {
    pub fn new(
        identity: impl Into<String>,
        frames: Vec<PointCloud>,
        timestamps: Vec<f64>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        if frames.len() != timestamps.len() {
            return Err(Error::InvalidArgument(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "sequence timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            identity: identity.into(),
            frames,
            timestamps,
        })
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn frames(&self) -> &[PointCloud] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// First `max_frames` frames (the whole sequence if shorter).
    pub fn truncated(&self, max_frames: usize) -> Result<Self> {
        let n = self.len().min(max_frames);
        Self::new(
            self.identity.clone(),
            self.frames[..n].to_vec(),
            self.timestamps[..n].to_vec(),
        )
    }

    pub fn map_frames(&self, f: impl Fn(&PointCloud) -> PointCloud) -> Self {
        Self {
            identity: self.identity.clone(),
            frames: self.frames.iter().map(f).collect(),
            timestamps: self.timestamps.clone(),
        }
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = identity.into();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centering_example() {
        let cloud = PointCloud::new(vec![[1.0, 1.0, 0.5], [3.0, 1.0, 1.5]]).unwrap();
        let c = center_horizontal(&cloud).unwrap();
        assert_eq!(c.points(), &[[-1.0, 0.0, 0.5], [1.0, 0.0, 1.5]]);
        assert_eq!(center_horizontal(&c).unwrap(), c);
    }

    #[test]
    fn centering_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = (0..1000)
            .map(|_| {
                [
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(0.0..2.0),
                ]
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let centered = center_horizontal(&cloud).unwrap();
        let c = centered.centroid().unwrap();
        assert!(c[0].abs() < 1e-9 && c[1].abs() < 1e-9);
        for (a, b) in cloud.points().iter().zip(centered.points()) {
            assert_eq!(a[2], b[2]);
        }
    }

    #[test]
    fn empty_cloud_rejected() {
        let err = center_horizontal(&PointCloud::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCloud));
    }

    #[test]
    fn ingest_clamps_and_validates() {
        let c = PointCloud::new(vec![[0.0, 0.0, -0.3]]).unwrap();
        assert_eq!(c.points()[0][2], 0.0);
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn sequence_validation() {
        let f = PointCloud::new(vec![[0.0, 0.0, 1.0]]).unwrap();
        assert!(PersonSequence::new("a", vec![], vec![]).is_err());
        assert!(PersonSequence::new("a", vec![f.clone(), f.clone()], vec![1.0, 1.0]).is_err());
        let s = PersonSequence::new("a", vec![f.clone(), f], vec![0.0, 0.1]).unwrap();
        assert_eq!(s.truncated(1).unwrap().len(), 1);
    }
}
