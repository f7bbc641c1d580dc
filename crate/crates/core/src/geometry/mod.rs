//! Point clouds, person sequences and the multi-view depth renderer.

mod cloud;
mod render;

pub use cloud::{center_horizontal, PersonSequence, Point3, PointCloud};
pub use render::{
    build_view_ring, colormap, decode_colormap, render_sequence, render_view, DepthImage,
    DepthViewStack, RenderConfig, RenderMeta, VirtualCamera, CROP_TOP,
};
