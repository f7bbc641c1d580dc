use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::cloud::{center_horizontal, PersonSequence, Point3, PointCloud};
use crate::error::{Error, Result};

/// Height of the MetricCrop window for the default camera height of 1 m.
pub const CROP_TOP: f64 = 2.0;

/// Minimum optical-axis depth for a point to be rasterized.
const NEAR_PLANE: f64 = 0.05;

/// Camera-frame coordinates are snapped to this lattice (meters) before
/// rasterization so that ulp-level differences between mathematically equal
/// transforms cannot move a point across a pixel boundary.
const SNAP: f64 = 1e-6;

/// Ring trigonometry is snapped to this lattice so quarter turns are exact.
const TRIG_SNAP: f64 = 1e-12;

/// Parameters of the virtual camera ring and rasterizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub views: usize,
    pub radius: f64,
    pub camera_height: f64,
    pub image_size: usize,
    pub metric_crop: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            views: 8,
            radius: 2.5,
            camera_height: 1.0,
            image_size: 64,
            metric_crop: true,
        }
    }
}

impl RenderConfig {
    pub fn ring(&self) -> Vec<VirtualCamera> {
        build_view_ring(self.views, self.radius, self.camera_height, self.image_size)
    }

    /// Top of the metric crop window; the window is centered on the optical axis.
    pub fn crop_top(&self) -> f64 {
        2.0 * self.camera_height
    }

    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || self.image_size == 0 {
            return Err(Error::InvalidArgument(
                "render ring needs at least one view and a non-empty image".into(),
            ));
        }
        if !(self.radius > 0.0) || !(self.camera_height > 0.0) {
            return Err(Error::InvalidArgument(
                "camera radius and height must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A pinhole camera on the ring, looking horizontally at the vertical axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VirtualCamera {
    pub azimuth: f64,
    pub position: Point3,
    pub focal: f64,
    pub image_height: usize,
    pub image_width: usize,
    radius: f64,
    cos: f64,
    sin: f64,
}

impl VirtualCamera {
    fn new(azimuth: f64, radius: f64, height: f64, image_size: usize) -> Self {
        let snap = |x: f64| (x / TRIG_SNAP).round() * TRIG_SNAP;
        let (cos, sin) = (snap(azimuth.cos()), snap(azimuth.sin()));
        Self {
            azimuth,
            position: [radius * cos, radius * sin, height],
            focal: (image_size as f64 / 2.0) * radius / height,
            image_height: image_size,
            image_width: image_size,
            radius,
            cos,
            sin,
        }
    }

    /// Pixel (row, col) and optical-axis depth of a point, if it falls inside
    /// the image. The bottom and right image edges are closed.
    pub fn project(&self, p: &Point3) -> Option<(usize, usize, f64)> {
        let snap = |x: f64| (x / SNAP).round() * SNAP;
        let qx = self.cos * p[0] + self.sin * p[1];
        let qy = -self.sin * p[0] + self.cos * p[1];
        let xc = snap(qy);
        let zc = snap(self.radius - qx);
        let yc = snap(p[2] - self.position[2]);
        if zc <= NEAR_PLANE {
            return None;
        }
        let (h, w) = (self.image_height as f64, self.image_width as f64);
        let u = w / 2.0 + self.focal * xc / zc;
        let v = h / 2.0 - self.focal * yc / zc;
        if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
            return None;
        }
        let col = (u.floor() as usize).min(self.image_width - 1);
        let row = (v.floor() as usize).min(self.image_height - 1);
        Some((row, col, zc))
    }
}

/// `v_count` cameras at azimuths 2πv/V, `radius` from the vertical axis at
/// `height`, with the focal length chosen so the axis plane spans
/// `[0, 2·height]` over the full image height.
pub fn build_view_ring(
    v_count: usize,
    radius: f64,
    height: f64,
    image_size: usize,
) -> Vec<VirtualCamera> {
    (0..v_count)
        .map(|v| {
            let azimuth = 2.0 * PI * v as f64 / v_count as f64;
            VirtualCamera::new(azimuth, radius, height, image_size)
        })
        .collect()
}

/// Maps a normalized depth in `[0, 1]` to a color. Never returns black.
pub fn colormap(d: f64) -> [u8; 3] {
    let d = d.clamp(0.0, 1.0);
    let q = |x: f64| (255.0 * x).round() as u8;
    [q(d), q(1.0 - (2.0 * d - 1.0).abs()), q(1.0 - d)]
}

/// Inverse of [`colormap`] up to quantization; `None` for background pixels.
pub fn decode_colormap(rgb: [u8; 3]) -> Option<f64> {
    if rgb == [0, 0, 0] {
        return None;
    }
    Some((rgb[0] as f64 + (255 - rgb[2]) as f64) / 510.0)
}

/// A colorized depth image, row-major H × W × 3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl DepthImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn occupied(&self) -> usize {
        self.data.chunks_exact(3).filter(|p| p != &[0, 0, 0]).count()
    }
}

/// Rescales a centered cloud so its tight extent fills the camera window:
/// the floor-shifted cloud is scaled about the vertical axis by the largest
/// factor that keeps every point inside the frame from any ring azimuth.
fn fill_normalize(points: &[Point3], cam: &VirtualCamera) -> Vec<Point3> {
    let zmin = points.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    let half_h = cam.image_height as f64 / 2.0;
    let k = cam.image_width as f64 / 2.0 / cam.focal;
    let (r_ax, h, f) = (cam.radius, cam.position[2], cam.focal);
    let mut scale = f64::INFINITY;
    for p in points {
        let z = p[2] - zmin;
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if r > 0.0 {
            scale = scale.min(k * r_ax / ((1.0 + k * k).sqrt() * r));
        }
        let denom = z * f + half_h * r;
        if denom > 0.0 {
            scale = scale.min((h * f + half_h * r_ax) / denom);
        }
    }
    if !scale.is_finite() {
        scale = 1.0;
    }
    points
        .iter()
        .map(|p| [scale * p[0], scale * p[1], scale * (p[2] - zmin)])
        .collect()
}

fn rasterize(points: &[Point3], cam: &VirtualCamera, view: usize) -> Result<DepthImage> {
    let (h, w) = (cam.image_height, cam.image_width);
    let mut zbuf = vec![f64::INFINITY; h * w];
    for p in points {
        if let Some((row, col, depth)) = cam.project(p) {
            let slot = &mut zbuf[row * w + col];
            if depth < *slot {
                *slot = depth;
            }
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &z in zbuf.iter().filter(|z| z.is_finite()) {
        lo = lo.min(z);
        hi = hi.max(z);
    }
    if !lo.is_finite() {
        return Err(Error::EmptyRender { view, frame: None });
    }
    let mut data = vec![0u8; h * w * 3];
    for (px, &z) in zbuf.iter().enumerate() {
        if z.is_finite() {
            let d = if hi > lo { (z - lo) / (hi - lo) } else { 0.5 };
            data[px * 3..px * 3 + 3].copy_from_slice(&colormap(d));
        }
    }
    Ok(DepthImage {
        height: h,
        width: w,
        data,
    })
}

fn prepare_points(cloud: &PointCloud, cam: &VirtualCamera, metric_crop: bool) -> Vec<Point3> {
    if metric_crop {
        let top = 2.0 * cam.position[2];
        cloud
            .points()
            .iter()
            .filter(|p| p[2] <= top)
            .copied()
            .collect()
    } else {
        fill_normalize(cloud.points(), cam)
    }
}

/// Renders a centered cloud through one camera.
///
/// With `metric_crop` the world window `[0, 2·height]` maps onto the image
/// and points above it are discarded; without it the cloud is rescaled to
/// fill the image before projection.
pub fn render_view(cloud: &PointCloud, camera: &VirtualCamera, metric_crop: bool) -> Result<DepthImage> {
    let points = prepare_points(cloud, camera, metric_crop);
    rasterize(&points, camera, 0).map_err(|e| match e {
        Error::EmptyRender { frame, .. } => Error::EmptyRender { view: 0, frame },
        other => other,
    })
}

/// Provenance of a rendered stack.
pub type RenderMeta = RenderConfig;

/// V × L colorized depth images of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthViewStack {
    pub meta: RenderMeta,
    pub frames: usize,
    /// Layout: `[view][frame][row][col][rgb]`.
    pub data: Vec<u8>,
}

impl DepthViewStack {
    pub fn views(&self) -> usize {
        self.meta.views
    }

    pub fn image_size(&self) -> usize {
        self.meta.image_size
    }

    fn image_len(&self) -> usize {
        self.meta.image_size * self.meta.image_size * 3
    }

    pub fn image(&self, view: usize, frame: usize) -> &[u8] {
        let len = self.image_len();
        let start = (view * self.frames + frame) * len;
        &self.data[start..start + len]
    }

    pub fn image_mut(&mut self, view: usize, frame: usize) -> &mut [u8] {
        let len = self.image_len();
        let start = (view * self.frames + frame) * len;
        &mut self.data[start..start + len]
    }

    /// Contiguous frame window `[start, start + len)` across all views.
    pub fn frame_window(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.frames && len > 0);
        let img = self.image_len();
        let mut data = Vec::with_capacity(self.views() * len * img);
        for v in 0..self.views() {
            let base = (v * self.frames + start) * img;
            data.extend_from_slice(&self.data[base..base + len * img]);
        }
        Self {
            meta: self.meta,
            frames: len,
            data,
        }
    }

    /// Stack restricted to the given frames, in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> Self {
        let img = self.image_len();
        let mut data = Vec::with_capacity(self.views() * frames.len() * img);
        for v in 0..self.views() {
            for &f in frames {
                data.extend_from_slice(self.image(v, f));
            }
        }
        Self {
            meta: self.meta,
            frames: frames.len(),
            data,
        }
    }
}

/// Centers every frame horizontally and renders it through every camera.
pub fn render_sequence(
    seq: &PersonSequence,
    ring: &[VirtualCamera],
    metric_crop: bool,
) -> Result<DepthViewStack> {
    let first = ring
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty camera ring".into()))?;
    let size = first.image_height;
    let views = ring.len();
    let frames = seq.len();
    let img_len = size * size * 3;
    let mut data = vec![0u8; views * frames * img_len];
    for (l, cloud) in seq.frames().iter().enumerate() {
        let centered = center_horizontal(cloud)?;
        let points = prepare_points(&centered, first, metric_crop);
        for (v, cam) in ring.iter().enumerate() {
            let img = rasterize(&points, cam, v).map_err(|e| match e {
                Error::EmptyRender { view, .. } => Error::EmptyRender {
                    view,
                    frame: Some(l),
                },
                other => other,
            })?;
            let start = (v * frames + l) * img_len;
            data[start..start + img_len].copy_from_slice(&img.data);
        }
    }
    Ok(DepthViewStack {
        meta: RenderConfig {
            views,
            radius: first.radius,
            camera_height: first.position[2],
            image_size: size,
            metric_crop,
        },
        frames,
        data,
    })
}
