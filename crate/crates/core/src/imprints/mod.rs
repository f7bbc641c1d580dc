//! Bird's-eye activity imprints: per-identity occupancy over a projected
//! scene background.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

pub const DEFAULT_CELL: f64 = 0.05;

/// Placement of a `rows × cols` grid on the floor plane. Row `i` spans
/// `y ∈ [origin.y + i·cell, origin.y + (i+1)·cell)`, column `j` likewise in x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    /// Smallest grid with the given cell size covering every point, padded
    /// by `margin` meters.
    pub fn covering<'a>(points: impl IntoIterator<Item = &'a Point3>, cell: f64, margin: f64) -> Result<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            return Err(Error::EmptyCloud);
        }
        if !(cell > 0.0) {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell}")));
        }
        let origin = [lo[0] - margin, lo[1] - margin];
        let cols = ((hi[0] + margin - origin[0]) / cell).floor() as usize + 1;
        let rows = ((hi[1] + margin - origin[1]) / cell).floor() as usize + 1;
        Ok(Self { origin, cell, rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of the cell containing `(x, y)`, if inside.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let c = ((x - self.origin[0]) / self.cell).floor();
        let r = ((y - self.origin[1]) / self.cell).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return None;
        }
        Some(r as usize * self.cols + c as usize)
    }

    /// Center of a flat cell index.
    pub fn center(&self, index: usize) -> [f64; 2] {
        let (r, c) = (index / self.cols, index % self.cols);
        [
            self.origin[0] + (c as f64 + 0.5) * self.cell,
            self.origin[1] + (r as f64 + 0.5) * self.cell,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLabel {
    Background,
    Person,
    /// A scene object, by overlay index.
    Object(usize),
}

/// A scene cloud with one label per point.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    pub cloud: PointCloud,
    pub labels: Vec<PointLabel>,
}

impl LabeledScene {
    pub fn new(cloud: PointCloud, labels: Vec<PointLabel>) -> Result<Self> {
        if cloud.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} labels",
                cloud.len(),
                labels.len()
            )));
        }
        Ok(Self { cloud, labels })
    }
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    objects: Vec<String>,
    points: Vec<[f32; 3]>,
    labels: Vec<PointLabel>,
}

/// Writes a labeled scene and its object names as JSON.
pub fn save_scene(path: &Path, scene: &LabeledScene, objects: &[&str]) -> Result<()> {
    let file = SceneFile {
        objects: objects.iter().map(|s| s.to_string()).collect(),
        points: scene.cloud.points().iter().map(|p| p.map(|c| c as f32)).collect(),
        labels: scene.labels.clone(),
    };
    let json = serde_json::to_vec(&file).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads a scene written by [`save_scene`], with its object names.
pub fn load_scene(path: &Path) -> Result<(LabeledScene, Vec<String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: SceneFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
    let cloud = PointCloud::new(file.points.iter().map(|p| p.map(f64::from)).collect())?;
    Ok((LabeledScene::new(cloud, file.labels)?, file.objects))
}

/// Grayscale intensity per cell in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundLayer {
    pub spec: GridSpec,
    pub intensity: Vec<f64>,
}

/// Orthographic top view of every non-person point, log-scaled:
/// `ln(1 + c) / ln(1 + c_max)`.
pub fn project_background(scene: &LabeledScene, spec: GridSpec) -> BackgroundLayer {
    let mut counts = vec![0u64; spec.len()];
    for (p, l) in scene.cloud.points().iter().zip(&scene.labels) {
        if *l == PointLabel::Person {
            continue;
        }
        if let Some(i) = spec.cell_of(p[0], p[1]) {
            counts[i] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        log::warn!("background projection is empty");
        return BackgroundLayer {
            spec,
            intensity: vec![0.0; spec.len()],
        };
    }
    let denom = (1.0 + max as f64).ln();
    BackgroundLayer {
        spec,
        intensity: counts.iter().map(|&c| (1.0 + c as f64).ln() / denom).collect(),
    }
}

/// Per-cell count of frames in which the cell held at least one point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub spec: GridSpecKey,
    pub counts: Vec<u32>,
    pub frames: usize,
}

/// [`GridSpec`] with its floats stored bitwise so grids compare exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpecKey {
    origin: [u64; 2],
    cell: u64,
    rows: usize,
    cols: usize,
}

impl From<GridSpec> for GridSpecKey {
    fn from(s: GridSpec) -> Self {
        Self {
            origin: [s.origin[0].to_bits(), s.origin[1].to_bits()],
            cell: s.cell.to_bits(),
            rows: s.rows,
            cols: s.cols,
        }
    }
}

impl From<GridSpecKey> for GridSpec {
    fn from(k: GridSpecKey) -> Self {
        Self {
            origin: [f64::from_bits(k.origin[0]), f64::from_bits(k.origin[1])],
            cell: f64::from_bits(k.cell),
            rows: k.rows,
            cols: k.cols,
        }
    }
}

impl OccupancyGrid {
    pub fn grid(&self) -> GridSpec {
        self.spec.into()
    }

    /// Counts divided by the maximum; all zeros for an empty grid.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / max as f64).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Floor position of the maximum. A plateau of equal maxima reports the
    /// mean center of its cells.
    pub fn peak(&self) -> Option<[f64; 2]> {
        let max = self.counts.iter().copied().max().filter(|&m| m > 0)?;
        let spec = self.grid();
        let (mut x, mut y, mut n) = (0.0, 0.0, 0.0);
        for (i, _) in self.counts.iter().enumerate().filter(|(_, &c)| c == max) {
            let c = spec.center(i);
            x += c[0];
            y += c[1];
            n += 1.0;
        }
        Some([x / n, y / n])
    }
}

/// Accumulates one identity's clouds: each frame adds 1 to every cell that
/// holds at least one of its points.
pub fn accumulate_imprint(clouds: &[PointCloud], spec: GridSpec) -> OccupancyGrid {
    let mut counts = vec![0u32; spec.len()];
    let mut seen = vec![false; spec.len()];
    let mut touched = Vec::new();
    for cloud in clouds {
        for p in cloud.points() {
            if let Some(i) = spec.cell_of(p[0], p[1]) {
                if !seen[i] {
                    seen[i] = true;
                    touched.push(i);
                }
            }
        }
        for i in touched.drain(..) {
            counts[i] += 1;
            seen[i] = false;
        }
    }
    OccupancyGrid {
        spec: spec.into(),
        counts,
        frames: clouds.len(),
    }
}

/// Cells of one scene object, outlined in a fixed color.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectOverlay {
    pub label: String,
    pub color: [u8; 3],
    pub mask: Vec<bool>,
}

/// Masks of every labeled object of a scene, colored from `palette` in
/// object order.
pub fn object_overlays(scene: &LabeledScene, spec: GridSpec, names: &[&str], palette: &[[u8; 3]]) -> Vec<ObjectOverlay> {
    let mut overlays: Vec<ObjectOverlay> = names
        .iter()
        .enumerate()
        .map(|(k, n)| ObjectOverlay {
            label: n.to_string(),
            color: palette[k % palette.len()],
            mask: vec![false; spec.len()],
        })
        .collect();
    for (p, l) in scene.cloud.points().iter().zip(&scene.labels) {
        if let PointLabel::Object(k) = l {
            if let (Some(o), Some(i)) = (overlays.get_mut(*k), spec.cell_of(p[0], p[1])) {
                o.mask[i] = true;
            }
        }
    }
    overlays
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub label: String,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub imprints: Vec<LegendEntry>,
    pub objects: Vec<LegendEntry>,
    pub background: bool,
    pub grid: GridSpec,
}

/// RGB image with north (larger y) at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct ImprintImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub legend: Legend,
}

/// Distinct hues for imprint layers.
pub const IMPRINT_PALETTE: [[u8; 3]; 6] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 140, 0],
    [145, 30, 180],
    [0, 130, 200],
    [240, 50, 230],
];

/// Object outline colors: blue, green, gold.
pub const OBJECT_PALETTE: [[u8; 3]; 3] = [[30, 90, 255], [0, 200, 80], [212, 175, 55]];

/// Background gray, then object outlines, then each imprint blended with
/// alpha equal to its normalized occupancy, in the order given.
pub fn compose(
    background: Option<&BackgroundLayer>,
    imprints: &[(String, &OccupancyGrid, [u8; 3])],
    objects: &[ObjectOverlay],
    spec: GridSpec,
) -> Result<ImprintImage> {
    let mismatch = |what: &str| Err(Error::ConfigMismatch(format!("{what} grid differs from the image grid")));
    if background.is_some_and(|b| b.spec != spec) {
        return mismatch("background");
    }
    if let Some((label, _, _)) = imprints.iter().find(|(_, g, _)| g.grid() != spec) {
        return mismatch(label);
    }
    if let Some(o) = objects.iter().find(|o| o.mask.len() != spec.len()) {
        return mismatch(&o.label);
    }
    let mut rgb = vec![[0.0f64; 3]; spec.len()];
    if let Some(b) = background {
        for (px, v) in rgb.iter_mut().zip(&b.intensity) {
            *px = [v * 255.0; 3];
        }
    }
    for o in objects {
        for i in 0..spec.len() {
            if o.mask[i] && is_edge(&o.mask, spec, i) {
                rgb[i] = o.color.map(f64::from);
            }
        }
    }
    for (_, grid, color) in imprints {
        for (px, a) in rgb.iter_mut().zip(grid.normalized()) {
            if a > 0.0 {
                for k in 0..3 {
                    px[k] = (1.0 - a) * px[k] + a * color[k] as f64;
                }
            }
        }
    }
    let (w, h) = (spec.cols, spec.rows);
    let mut pixels = Vec::with_capacity(w * h * 3);
    for row in (0..h).rev() {
        for col in 0..w {
            pixels.extend(rgb[row * w + col].map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok(ImprintImage {
        width: w,
        height: h,
        pixels,
        legend: Legend {
            imprints: imprints
                .iter()
                .map(|(label, _, color)| LegendEntry { label: label.clone(), color: *color })
                .collect(),
            objects: objects
                .iter()
                .map(|o| LegendEntry { label: o.label.clone(), color: o.color })
                .collect(),
            background: background.is_some(),
            grid: spec,
        },
    })
}

fn is_edge(mask: &[bool], spec: GridSpec, i: usize) -> bool {
    let (r, c) = (i / spec.cols, i % spec.cols);
    if r == 0 || c == 0 || r + 1 == spec.rows || c + 1 == spec.cols {
        return true;
    }
    !(mask[i - 1] && mask[i + 1] && mask[i - spec.cols] && mask[i + spec.cols])
}

impl ImprintImage {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Writes `<path>` as binary PPM and the legend next to it as
    /// `<path>.json` with the extension replaced.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))?;
        let legend_path = path.with_extension("json");
        let mut json = serde_json::to_vec_pretty(&self.legend).map_err(|e| Error::json(&legend_path, e))?;
        json.push(b'\n');
        fs::write(&legend_path, json).map_err(|e| Error::io(&legend_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> GridSpec {
        GridSpec {
            origin: [0.0, 0.0],
            cell: 0.05,
            rows: 20,
            cols: 20,
        }
    }

    fn at(x: f64, y: f64) -> PointCloud {
        PointCloud::new(vec![[x, y, 1.0], [x + 0.001, y, 0.5]]).unwrap()
    }

    #[test]
    fn visit_ratio() {
        let clouds: Vec<PointCloud> = (0..100).map(|i| if i < 75 { at(0.12, 0.12) } else { at(0.73, 0.41) }).collect();
        let g = accumulate_imprint(&clouds, spec());
        let a = spec().cell_of(0.12, 0.12).unwrap();
        let b = spec().cell_of(0.73, 0.41).unwrap();
        assert_eq!((g.counts[a], g.counts[b]), (75, 25));
        assert_eq!(g.normalized()[a], 1.0);
        let p = g.peak().unwrap();
        assert!((p[0] - 0.125).abs() < 1e-9 && (p[1] - 0.125).abs() < 1e-9);
    }

    #[test]
    fn background_layers() {
        let floor: Vec<Point3> = (0..20)
            .flat_map(|r| (0..20).map(move |c| [c as f64 * 0.05 + 0.025, r as f64 * 0.05 + 0.025, 0.0]))
            .collect();
        let n = floor.len();
        let scene = LabeledScene::new(PointCloud::new(floor).unwrap(), vec![PointLabel::Background; n]).unwrap();
        let layer = project_background(&scene, spec());
        assert!(layer.intensity.iter().all(|&v| v == 1.0));

        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (r, c) in [(2, 2), (2, 12), (12, 2), (12, 12)] {
            for k in 0..50 {
                pts.push([c as f64 * 0.05 + 0.01, r as f64 * 0.05 + 0.01, k as f64 * 0.01]);
                labels.push(PointLabel::Background);
            }
        }
        pts.push([0.5, 0.5, 0.0]);
        labels.push(PointLabel::Background);
        for _ in 0..500 {
            pts.push([0.3, 0.3, 1.0]);
            labels.push(PointLabel::Person);
        }
        let layer = project_background(&LabeledScene::new(PointCloud::new(pts).unwrap(), labels).unwrap(), spec());
        let top: Vec<usize> = (0..400).filter(|&i| layer.intensity[i] == 1.0).collect();
        assert_eq!(top, vec![42, 52, 242, 252]);
        assert_eq!(layer.intensity[spec().cell_of(0.3, 0.3).unwrap()], 0.0);
        let empty = LabeledScene::new(PointCloud::new(vec![[0.1, 0.1, 0.0]]).unwrap(), vec![PointLabel::Person]).unwrap();
        assert!(project_background(&empty, spec()).intensity.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_hue_ramp() {
        let clouds: Vec<PointCloud> = (0..4).map(|i| if i < 3 { at(0.12, 0.12) } else { at(0.52, 0.12) }).collect();
        let g = accumulate_imprint(&clouds, spec());
        let img = compose(None, &[("a".into(), &g, [200, 100, 0])], &[], spec()).unwrap();
        let px = |x: f64, y: f64| {
            let i = spec().cell_of(x, y).unwrap();
            let (r, c) = (19 - i / 20, i % 20);
            let o = (r * 20 + c) * 3;
            [img.pixels[o], img.pixels[o + 1], img.pixels[o + 2]]
        };
        assert_eq!(px(0.12, 0.12), [200, 100, 0]);
        assert_eq!(px(0.52, 0.12), [67, 33, 0]);
        assert_eq!(px(0.9, 0.9), [0, 0, 0]);
    }

    #[test]
    fn blending_order_matters() {
        let a = accumulate_imprint(&[at(0.12, 0.12), at(0.12, 0.12)], spec());
        let b = accumulate_imprint(&[at(0.12, 0.12), at(0.62, 0.62)], spec());
        let ab = compose(None, &[("a".into(), &a, [255, 0, 0]), ("b".into(), &b, [0, 0, 255])], &[], spec()).unwrap();
        let ba = compose(None, &[("b".into(), &b, [0, 0, 255]), ("a".into(), &a, [255, 0, 0])], &[], spec()).unwrap();
        assert_ne!(ab.pixels, ba.pixels);

        let c = accumulate_imprint(&[at(0.62, 0.62)], spec());
        let disjoint = compose(None, &[("a".into(), &a, [255, 0, 0]), ("c".into(), &c, [0, 0, 255])], &[], spec()).unwrap();
        assert!(disjoint.pixels.chunks(3).all(|p| p[0] == 0 || p[2] == 0));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let other = GridSpec { rows: 10, ..spec() };
        let g = accumulate_imprint(&[at(0.1, 0.1)], other);
        assert!(matches!(compose(None, &[("a".into(), &g, [1, 2, 3])], &[], spec()), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = LabeledScene::new(
            PointCloud::new(vec![[0.5, 0.25, 0.0], [1.0, 2.0, 0.75]]).unwrap(),
            vec![PointLabel::Background, PointLabel::Object(0)],
        )
        .unwrap();
        save_scene(&dir.path().join("s.json"), &scene, &["table"]).unwrap();
        let (back, names) = load_scene(&dir.path().join("s.json")).unwrap();
        assert_eq!(back, scene);
        assert_eq!(names, vec!["table".to_string()]);
    }

    #[test]
    fn ppm_and_legend() {
        let dir = tempfile::tempdir().unwrap();
        let g = accumulate_imprint(&[at(0.1, 0.1)], spec());
        let img = compose(None, &[("a".into(), &g, [1, 2, 3])], &[], spec()).unwrap();
        img.save(&dir.path().join("x.ppm")).unwrap();
        let bytes = fs::read(dir.path().join("x.ppm")).unwrap();
        assert!(bytes.starts_with(b"P6\n20 20\n255\n"));
        assert_eq!(bytes.len(), 13 + 20 * 20 * 3);
        let legend: Legend = serde_json::from_slice(&fs::read(dir.path().join("x.json")).unwrap()).unwrap();
        assert_eq!(legend, img.legend);
    }

    fn walk() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..0.99, 0.0f64..0.99), 1..40)
    }

    proptest! {
        #[test]
        fn order_and_duplication_invariance(steps in walk(), seed in 0usize..1000) {
            let clouds: Vec<PointCloud> = steps
                .iter()
                .map(|&(x, y)| PointCloud::new(vec![[x, y, 0.0], [x + 0.07, y, 1.0], [x, y + 0.02, 1.5]]).unwrap())
                .collect();
            let g = accumulate_imprint(&clouds, spec());
            let mut shuffled = clouds.clone();
            shuffled.rotate_left(seed % clouds.len());
            shuffled.reverse();
            prop_assert_eq!(&accumulate_imprint(&shuffled, spec()).counts, &g.counts);
            let doubled: Vec<PointCloud> = clouds.iter().chain(&clouds).cloned().collect();
            prop_assert_eq!(accumulate_imprint(&doubled, spec()).normalized(), g.normalized());
            // Total mass equals the covered cells recounted frame by frame.
            let recount: u64 = clouds
                .iter()
                .map(|c| {
                    let mut cells: Vec<usize> = c.points().iter().filter_map(|p| spec().cell_of(p[0], p[1])).collect();
                    cells.sort_unstable();
                    cells.dedup();
                    cells.len() as u64
                })
                .sum();
            prop_assert_eq!(g.total(), recount);
        }
    }
}
