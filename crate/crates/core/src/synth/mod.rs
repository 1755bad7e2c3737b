//! Deterministic synthetic RGB-D data: analytic shapes, view-sphere sampling,
//! ray-cast rendering and cluttered scene composition with exact ground truth.

mod generate;
mod icosphere;
mod render;
mod scene;
mod shape;

pub use generate::{generate_scene, generate_scene_set, pose_at_pixel, random_view_rotation, SceneSetConfig};
pub use icosphere::{subdivide_icosahedron, vertex_count, ViewSphere, MAX_LEVEL};
pub use render::{look_at_rotation, render_view, training_poses, RenderedView};
pub use scene::{
    compose_scene, Background, ComposedScene, InstanceTruth, PlacedShape, SceneSpec, SCENE_SPEC_VERSION,
};
pub use shape::{Hit, ParametricShape, ShapePart};

/// View-sphere sampling used to render training data.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainingViewConfig {
    pub level: u32,
    pub radius_mm: f64,
    pub in_plane_deg: Vec<f64>,
}

impl Default for TrainingViewConfig {
    fn default() -> Self {
        Self {
            level: 2,
            radius_mm: 900.0,
            in_plane_deg: vec![-60.0, -30.0, 0.0, 30.0, 60.0],
        }
    }
}

impl TrainingViewConfig {
    pub fn view_count(&self) -> usize {
        vertex_count(self.level) * self.in_plane_deg.len()
    }
}

/// Renders every training view of `shape`, in view-sphere order.
pub fn render_training_views(
    shape: &ParametricShape,
    cfg: &TrainingViewConfig,
    intr: &crate::geometry::CameraIntrinsics,
) -> crate::error::Result<Vec<RenderedView>> {
    let sphere = ViewSphere::new(cfg.level, cfg.radius_mm)?;
    training_poses(&sphere.vertices, sphere.radius, &cfg.in_plane_deg)
        .iter()
        .map(|pose| render_view(shape, pose, intr))
        .collect()
}
