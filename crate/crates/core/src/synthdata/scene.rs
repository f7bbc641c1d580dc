//! Walking sequences, labeled datasets and scripted crossing scenes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::body::{sample_bodies, BodyModel};
use crate::error::{Error, Result};
use crate::geometry::{PersonSequence, Point3, PointCloud};
use crate::imprints::{LabeledScene, PointLabel};
use crate::io::{write_sequence, DatasetManifest, ManifestEntry, Split};
use crate::tracking::{write_stream, Detection, StreamFrame};

pub const ROLES: [&str; 6] = [
    "head_surgeon",
    "assistant",
    "scrub_nurse",
    "circulator",
    "anesthetist",
    "technician",
];

/// Half-width of the square room the walkers stay in, meters.
pub const ROOM_HALF_WIDTH: f64 = 2.0;

/// Scripted two-person crossing with an optional detection dropout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossingSpec {
    /// Identity indices of the two crossers.
    pub crossers: [usize; 2],
    /// Further identities walking independently, away from the crossing.
    pub bystanders: usize,
    /// Frames before the meeting point that precede the dropout.
    pub lead_frames: usize,
    /// Frames around the meeting point in which neither crosser is detected;
    /// zero disables the dropout.
    pub dropout_frames: usize,
    /// Frames after the dropout.
    pub tail_frames: usize,
    /// Lateral distance of each crosser from the crossing line, meters.
    pub lateral_offset: f64,
    /// Walking speed, meters per frame.
    pub speed: f64,
}

impl Default for CrossingSpec {
    fn default() -> Self {
        Self {
            crossers: [0, 1],
            bystanders: 1,
            lead_frames: 30,
            dropout_frames: 9,
            tail_frames: 100,
            lateral_offset: 0.3,
            speed: 0.08,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub identities: usize,
    pub sequences_per_identity: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub fps: f64,
    /// Chance that a sequence loses an angular sector of its points.
    pub occlusion_probability: f64,
    /// Width of the occluded sector, degrees.
    pub occlusion_degrees: f64,
    /// Standard deviation of per-coordinate position noise, meters.
    pub noise_sigma: f64,
    /// Surface samples per square meter.
    pub density: f64,
    /// Number of scale-twin pairs among the identities.
    pub twin_pairs: usize,
    /// Earliest sequences of each identity assigned to the gallery split.
    pub gallery_per_identity: usize,
    /// Latest sequences of each identity assigned to the probe split.
    pub probe_per_identity: usize,
    pub seed: u64,
    pub crossing: Option<CrossingSpec>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            identities: 10,
            sequences_per_identity: 40,
            min_frames: 10,
            max_frames: 16,
            fps: 15.0,
            occlusion_probability: 0.3,
            occlusion_degrees: 90.0,
            noise_sigma: 0.0,
            density: 1500.0,
            twin_pairs: 0,
            gallery_per_identity: 10,
            probe_per_identity: 10,
            seed: 7,
            crossing: None,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.identities == 0 || self.sequences_per_identity == 0 {
            return bad("identity and sequence counts must be positive");
        }
        if self.min_frames < 10 || self.max_frames > 45 || self.min_frames > self.max_frames {
            return bad("frames per sequence must lie in [10, 45]");
        }
        if !(self.fps > 0.0) || !(self.density > 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("fps and density must be positive, noise non-negative");
        }
        if !(0.0..=1.0).contains(&self.occlusion_probability) || !(0.0..=360.0).contains(&self.occlusion_degrees) {
            return bad("occlusion probability or width out of range");
        }
        if self.gallery_per_identity + self.probe_per_identity > self.sequences_per_identity {
            return bad("gallery and probe sequences exceed sequences per identity");
        }
        if 2 * self.twin_pairs > self.identities {
            return bad("more twin pairs than identities allow");
        }
        Ok(())
    }

    /// The bodies of every identity, in identity order.
    pub fn bodies(&self) -> Vec<BodyModel> {
        sample_bodies(&mut self.stream(0), self.identities, self.twin_pairs, self.density)
    }

    fn stream(&self, n: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(n);
        rng
    }

    fn sequence_stream(&self, identity: usize, sequence: usize) -> ChaCha8Rng {
        self.stream((1 << 40) | ((identity as u64) << 20) | sequence as u64)
    }
}

pub fn identity_label(index: usize) -> String {
    format!("id{index:02}")
}

pub fn role_for(index: usize) -> &'static str {
    ROLES[index % ROLES.len()]
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Walking speed in meters per second implied by the gait.
fn walking_speed(body: &BodyModel) -> f64 {
    body.gait.frequency * 0.36 * body.height
}

fn add_noise<R: Rng>(points: &mut [Point3], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("positive sigma");
        for p in points {
            for c in p.iter_mut() {
                *c += n.sample(rng);
            }
        }
    }
}

/// Removes the points whose horizontal bearing from `center` lies within
/// `width` radians of `bearing`.
fn occlude(points: &mut Vec<Point3>, center: [f64; 2], bearing: f64, width: f64) {
    points.retain(|p| {
        let a = (p[1] - center[1]).atan2(p[0] - center[0]);
        wrap_angle(a - bearing).abs() > 0.5 * width
    });
}

fn horizontal_mean(points: &[Point3]) -> [f64; 2] {
    let n = points.len().max(1) as f64;
    let (x, y) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [x / n, y / n]
}

/// One walk of `body` starting at `start` seconds. The frame count is drawn
/// from the spec's range, the body follows a heading random walk reflected
/// at the room walls, and with the spec's probability a fixed world-frame
/// sector of every frame is occluded.
pub fn generate_sequence<R: Rng>(
    body: &BodyModel,
    identity: &str,
    spec: &ScenarioSpec,
    start: f64,
    rng: &mut R,
) -> Result<PersonSequence> {
    let frames = rng.random_range(spec.min_frames..=spec.max_frames);
    let dt = 1.0 / spec.fps;
    let step = walking_speed(body) * dt;
    let turn = Normal::new(0.0, 0.15).expect("positive sigma");
    let occlusion = (rng.random_bool(spec.occlusion_probability) && spec.occlusion_degrees > 0.0)
        .then(|| rng.random_range(-PI..PI));
    let width = spec.occlusion_degrees.to_radians();
    let bound = ROOM_HALF_WIDTH;
    let mut pos = [rng.random_range(-bound..bound), rng.random_range(-bound..bound)];
    let mut heading = rng.random_range(-PI..PI);

    let mut clouds = Vec::with_capacity(frames);
    let mut stamps = Vec::with_capacity(frames);
    for k in 0..frames {
        let t = k as f64 * dt;
        let mut pts = body.sample_surface(t, heading, pos, rng);
        if let Some(bearing) = occlusion {
            let c = horizontal_mean(&pts);
            occlude(&mut pts, c, bearing, width);
        }
        add_noise(&mut pts, spec.noise_sigma, rng);
        clouds.push(PointCloud::new(pts)?);
        stamps.push(start + t);

        heading = wrap_angle(heading + turn.sample(rng));
        let next = [pos[0] + step * heading.cos(), pos[1] + step * heading.sin()];
        if next[0].abs() > bound || next[1].abs() > bound {
            heading = wrap_angle((-pos[1]).atan2(-pos[0]) + turn.sample(rng));
        }
        pos = [
            (pos[0] + step * heading.cos()).clamp(-bound, bound),
            (pos[1] + step * heading.sin()).clamp(-bound, bound),
        ];
    }
    PersonSequence::new(identity, clouds, stamps)
}

/// Split of the `s`-th (chronological) sequence of an identity.
fn split_for(spec: &ScenarioSpec, s: usize) -> Split {
    if s < spec.gallery_per_identity {
        Split::Gallery
    } else if s >= spec.sequences_per_identity - spec.probe_per_identity {
        Split::Probe
    } else {
        Split::Train
    }
}

/// Seconds between the starts of consecutive sequences of one identity.
const SEQUENCE_SPACING: f64 = 60.0;

/// Writes `sequences/<identity>_<nnn>.pseq`, `manifest.json` and
/// `scenario.json` under `root` and returns the manifest.
pub fn generate_dataset(spec: &ScenarioSpec, root: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let seq_dir = root.join("sequences");
    fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
    let bodies = spec.bodies();
    let mut entries = Vec::with_capacity(spec.identities * spec.sequences_per_identity);
    for (i, body) in bodies.iter().enumerate() {
        let identity = identity_label(i);
        for s in 0..spec.sequences_per_identity {
            let mut rng = spec.sequence_stream(i, s);
            let seq = generate_sequence(body, &identity, spec, s as f64 * SEQUENCE_SPACING, &mut rng)?;
            let rel = PathBuf::from("sequences").join(format!("{identity}_{s:03}.pseq"));
            write_sequence(&root.join(&rel), &seq)?;
            entries.push(ManifestEntry {
                identity: identity.clone(),
                role: role_for(i).to_string(),
                path: rel,
                split: split_for(spec, s),
            });
        }
    }
    let manifest = DatasetManifest {
        sequences: entries,
        root: root.to_path_buf(),
    };
    manifest.save(&root.join("manifest.json"))?;
    let spec_path = root.join("scenario.json");
    let mut json = serde_json::to_vec_pretty(spec).map_err(|e| Error::json(&spec_path, e))?;
    json.push(b'\n');
    fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

/// A detection stream with the true identity of every detection.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossingScenario {
    pub frames: Vec<StreamFrame>,
    /// `labels[f][d]` is the identity of `frames[f].detections[d]`.
    pub labels: Vec<Vec<String>>,
    /// Frame indices in which the crossers go undetected.
    pub dropout: std::ops::Range<usize>,
    pub crossers: [String; 2],
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    t: f64,
    identities: Vec<String>,
}

impl CrossingScenario {
    /// Writes `stream.jsonl` and `truth.jsonl` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_stream(&dir.join("stream.jsonl"), &self.frames)?;
        let path = dir.join("truth.jsonl");
        let mut out = Vec::new();
        for (f, labels) in self.frames.iter().zip(&self.labels) {
            let rec = TruthRecord {
                t: f.t,
                identities: labels.clone(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::json(&path, e))?;
            out.push(b'\n');
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }
}

/// Reads per-frame identity labels written by [`CrossingScenario::save`].
pub fn read_truth(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<TruthRecord>(l)
                .map(|r| r.identities)
                .map_err(|e| Error::json(path, e))
        })
        .collect()
}

/// Two crossers walk toward each other along parallel lines offset by
/// `±lateral_offset` and pass at the origin; the bystanders random-walk in a
/// strip beyond the gate distance. Bodies match those of
/// [`generate_dataset`] for the same spec.
pub fn generate_crossing_scenario(spec: &ScenarioSpec) -> Result<CrossingScenario> {
    spec.validate()?;
    let cross = spec.crossing.clone().unwrap_or_default();
    let [a, b] = cross.crossers;
    let needed = 2 + cross.bystanders;
    if a == b || a >= spec.identities || b >= spec.identities || spec.identities < needed {
        return Err(Error::InvalidArgument(format!(
            "crossing needs two distinct crossers and {} bystanders among {} identities",
            cross.bystanders, spec.identities
        )));
    }
    let bodies = spec.bodies();
    let walkers: Vec<usize> = (0..spec.identities).filter(|&i| i != a && i != b).take(cross.bystanders).collect();

    let half = cross.dropout_frames / 2;
    let meet = cross.lead_frames + half;
    let total = cross.lead_frames + cross.dropout_frames + cross.tail_frames;
    let dropout = cross.lead_frames..cross.lead_frames + cross.dropout_frames;
    let dt = 1.0 / spec.fps;
    let mut rng = spec.stream(2 << 40);
    let turn = Normal::new(0.0, 0.15).expect("positive sigma");

    // Bystander strip: y in [1.8, 3.0], x in the room.
    let mut bystander_state: Vec<([f64; 2], f64)> = walkers
        .iter()
        .map(|_| ([rng.random_range(-ROOM_HALF_WIDTH..ROOM_HALF_WIDTH), rng.random_range(2.0..2.8)], rng.random_range(-PI..PI)))
        .collect();

    let mut frames = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for f in 0..total {
        let t = f as f64 * dt;
        let mut dets = Vec::new();
        let mut ids = Vec::new();
        if !dropout.contains(&f) {
            let x = (f as f64 - meet as f64) * cross.speed;
            for (k, (idx, heading)) in [(a, 0.0), (b, PI)].into_iter().enumerate() {
                let sign = if k == 0 { 1.0 } else { -1.0 };
                let at = [sign * x, sign * cross.lateral_offset];
                let mut pts = bodies[idx].sample_surface(t, heading, at, &mut rng);
                add_noise(&mut pts, spec.noise_sigma, &mut rng);
                dets.push(Detection::new(t, PointCloud::new(pts)?)?);
                ids.push(identity_label(idx));
            }
        }
        for (w, &idx) in walkers.iter().enumerate() {
            let (pos, heading) = bystander_state[w];
            let mut pts = bodies[idx].sample_surface(t, heading, pos, &mut rng);
            add_noise(&mut pts, spec.noise_sigma, &mut rng);
            dets.push(Detection::new(t, PointCloud::new(pts)?)?);
            ids.push(identity_label(idx));

            let step = walking_speed(&bodies[idx]) * dt;
            let mut h = wrap_angle(heading + turn.sample(&mut rng));
            let next = [pos[0] + step * h.cos(), pos[1] + step * h.sin()];
            if next[0].abs() > ROOM_HALF_WIDTH || !(1.8..=3.0).contains(&next[1]) {
                h = wrap_angle((2.4 - pos[1]).atan2(-pos[0]) + turn.sample(&mut rng));
            }
            let pos = [
                (pos[0] + step * h.cos()).clamp(-ROOM_HALF_WIDTH, ROOM_HALF_WIDTH),
                (pos[1] + step * h.sin()).clamp(1.8, 3.0),
            ];
            bystander_state[w] = (pos, h);
        }
        frames.push(StreamFrame { t, detections: dets });
        labels.push(ids);
    }
    Ok(CrossingScenario {
        frames,
        labels,
        dropout: if cross.dropout_frames == 0 { 0..0 } else { dropout },
        crossers: [identity_label(a), identity_label(b)],
    })
}

/// Names of the objects of [`room_scene`], by object index.
pub const ROOM_OBJECTS: [&str; 2] = ["patient_table", "tool_table"];

/// A static room around the walking area: a floor sampled every 5 cm, a
/// patient table and a tool table. Object points carry their index into
/// [`ROOM_OBJECTS`].
pub fn room_scene(seed: u64) -> Result<LabeledScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    let extent = ROOM_HALF_WIDTH + 1.0;
    let steps = (2.0 * extent / 0.05).round() as usize;
    for i in 0..=steps {
        for j in 0..=steps {
            let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.01..0.01);
            pts.push([-extent + i as f64 * 0.05 + jitter(&mut rng), -extent + j as f64 * 0.05 + jitter(&mut rng), 0.0]);
            labels.push(PointLabel::Background);
        }
    }
    // (center, half size, height) of each table top.
    let tables = [([0.0, -1.2], [1.0, 0.3], 0.9), ([1.8, 1.2], [0.4, 0.25], 0.85)];
    for (k, (c, half, h)) in tables.into_iter().enumerate() {
        let count = (4.0 * half[0] * half[1] * 2000.0) as usize;
        for _ in 0..count {
            pts.push([
                c[0] + rng.random_range(-half[0]..half[0]),
                c[1] + rng.random_range(-half[1]..half[1]),
                h,
            ]);
            labels.push(PointLabel::Object(k));
        }
    }
    LabeledScene::new(PointCloud::new(pts)?, labels)
}
