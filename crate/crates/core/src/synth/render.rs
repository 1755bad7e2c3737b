use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{is_valid_depth, Mask, RgbdFrame};
use crate::geometry::{CameraIntrinsics, Pose6D};

use super::shape::{Hit, ParametricShape, PlacedPrimitives};

/// Output of a single-object render: the frame, exact float depths (0 where
/// the ray misses) and the silhouette masks used for feature placement.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub frame: RgbdFrame,
    pub depth_exact: Vec<f64>,
    pub body: Mask,
    pub contour: Mask,
    pub object_pose: Pose6D,
}

/// Direction toward the light, camera frame.
fn light_dir() -> Vector3<f64> {
    Vector3::new(-0.3, -0.4, -1.0).normalize()
}

pub(crate) fn shade(hit: &Hit, dir: &Vector3<f64>) -> [u8; 3] {
    let mut n = hit.normal;
    if n.dot(dir) > 0.0 {
        n = -n;
    }
    let k = 0.3 + 0.7 * n.dot(&light_dir()).max(0.0);
    hit.albedo.map(|a| (a * k * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Ray-casts every pixel against `objects`; returns per pixel the index of the
/// nearest object and its hit.
pub(crate) fn cast_all(objects: &[PlacedPrimitives], intr: &CameraIntrinsics) -> Vec<Option<(usize, Hit)>> {
    let (w, h) = (intr.width as usize, intr.height as usize);
    (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let dir = intr.ray(x as f64, y as f64);
                objects
                    .iter()
                    .enumerate()
                    .filter_map(|(i, o)| o.intersect(&dir).map(|hit| (i, hit)))
                    .min_by(|a, b| a.1.t.total_cmp(&b.1.t))
            })
        })
        .collect()
}

pub(crate) fn quantize_depth(z: f64) -> u16 {
    let d = z.round();
    if d > 0.0 && d < u16::MAX as f64 && is_valid_depth(d as u16) {
        d as u16
    } else {
        0
    }
}

/// Renders one shape at `object_pose` (object frame to camera frame) on an
/// empty background.
pub fn render_view(shape: &ParametricShape, object_pose: &Pose6D, intr: &CameraIntrinsics) -> Result<RenderedView> {
    shape.validate()?;
    intr.validate()?;
    let placed = [PlacedPrimitives::new(shape, object_pose)];
    let hits = cast_all(&placed, intr);
    let (w, h) = (intr.width as usize, intr.height as usize);
    let mut rgb = vec![0u8; w * h * 3];
    let mut depth = vec![0u16; w * h];
    let mut depth_exact = vec![0.0f64; w * h];
    let mut body = Mask::new(w, h);
    for (i, hit) in hits.iter().enumerate() {
        if let Some((_, hit)) = hit {
            let (x, y) = (i % w, i / w);
            let dir = intr.ray(x as f64, y as f64);
            // Rays have unit z, so the parameter is the depth.
            let z = hit.t * dir.z;
            let d = quantize_depth(z);
            if d == 0 {
                continue;
            }
            depth_exact[i] = z;
            depth[i] = d;
            rgb[i * 3..i * 3 + 3].copy_from_slice(&shade(hit, &dir));
            body.set(x, y, true);
        }
    }
    if body.is_empty() {
        return Err(Error::ObjectOutOfView);
    }
    let contour = body.inner_boundary();
    Ok(RenderedView {
        frame: RgbdFrame::new(*intr, rgb, depth)?,
        depth_exact,
        body,
        contour,
        object_pose: *object_pose,
    })
}

impl RenderedView {
    /// Rebuilds a view from a stored isolated render: every valid depth pixel
    /// is body, as in [`render_view`]. Exact depths are the quantized ones.
    pub fn from_frame(frame: RgbdFrame, object_pose: Pose6D) -> Result<Self> {
        let (w, h) = (frame.width(), frame.height());
        let body = Mask::from_vec(w, h, frame.depth().iter().map(|&d| d != 0).collect());
        if body.is_empty() {
            return Err(Error::ObjectOutOfView);
        }
        let depth_exact = frame.depth().iter().map(|&d| d as f64).collect();
        let contour = body.inner_boundary();
        Ok(Self {
            frame,
            depth_exact,
            body,
            contour,
            object_pose,
        })
    }
}

/// Object-to-camera rotation for a camera on the unit direction `view_dir`
/// (object frame) looking at the object origin, then rolled by `in_plane`
/// radians about the optical axis.
pub fn look_at_rotation(view_dir: &Vector3<f64>, in_plane: f64) -> UnitQuaternion<f64> {
    let v = view_dir.normalize();
    let z = -v;
    let up = if v.z.abs() > 0.99 { Vector3::y() } else { Vector3::z() };
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let base = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), in_plane) * base
}

/// Poses of a camera on every view-sphere vertex at `radius`, each combined
/// with every in-plane rotation (degrees). The object origin lands on the
/// optical axis.
pub fn training_poses(vertices: &[Vector3<f64>], radius: f64, in_plane_deg: &[f64]) -> Vec<Pose6D> {
    vertices
        .iter()
        .flat_map(|v| {
            in_plane_deg.iter().map(move |a| {
                Pose6D::new(look_at_rotation(v, a.to_radians()), Vector3::new(0.0, 0.0, radius))
            })
        })
        .collect()
}
