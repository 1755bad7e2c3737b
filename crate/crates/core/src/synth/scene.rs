use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Mask, RgbdFrame};
use crate::geometry::{CameraIntrinsics, Pose6D};

use super::render::{cast_all, quantize_depth, shade};
use super::shape::{Hit, ParametricShape, PlacedPrimitives};

pub const SCENE_SPEC_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedShape {
    pub shape: ParametricShape,
    pub pose: Pose6D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    /// Fronto-parallel plane at a fixed depth.
    Plane { depth_mm: f64, albedo: [f64; 3] },
    FarField,
}

/// Everything needed to reproduce a test frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub spec_version: u32,
    pub object_id: String,
    pub seed: u64,
    pub noise_sigma_mm: f64,
    /// Fraction of valid depth pixels randomly dropped.
    pub invalid_fraction: f64,
    pub background: Background,
    #[serde(default)]
    pub targets: Vec<PlacedShape>,
    #[serde(default)]
    pub clutter: Vec<PlacedShape>,
    #[serde(default)]
    pub occluders: Vec<PlacedShape>,
}

impl SceneSpec {
    pub fn empty(object_id: &str, seed: u64) -> Self {
        Self {
            spec_version: SCENE_SPEC_VERSION,
            object_id: object_id.to_string(),
            seed,
            noise_sigma_mm: 0.0,
            invalid_fraction: 0.0,
            background: Background::FarField,
            targets: vec![],
            clutter: vec![],
            occluders: vec![],
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
        if spec.spec_version != SCENE_SPEC_VERSION {
            return Err(Error::parse(
                path,
                format!("spec_version {} unsupported (expected {SCENE_SPEC_VERSION})", spec.spec_version),
            ));
        }
        Ok(spec)
    }
}

/// Ground truth for one target instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTruth {
    pub pose: Pose6D,
    pub visible_pixels: usize,
    pub unoccluded_pixels: usize,
}

impl InstanceTruth {
    pub fn visibility(&self) -> f64 {
        if self.unoccluded_pixels == 0 {
            0.0
        } else {
            self.visible_pixels as f64 / self.unoccluded_pixels as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct ComposedScene {
    pub frame: RgbdFrame,
    /// Noise-free float depth, 0 where nothing was hit.
    pub depth_exact: Vec<f64>,
    /// Per pixel: 0, or `1 + i` where target `i` is the visible surface.
    pub labels: Vec<u8>,
    pub instances: Vec<InstanceTruth>,
}

impl ComposedScene {
    pub fn visible_mask(&self, instance: usize) -> Mask {
        let w = self.frame.width();
        let h = self.frame.height();
        Mask::from_vec(w, h, self.labels.iter().map(|&l| l as usize == instance + 1).collect())
    }
}

enum Surface {
    Object(usize),
    Background,
}

/// Z-buffers all shapes of the spec, then applies depth noise.
pub fn compose_scene(spec: &SceneSpec, intr: &CameraIntrinsics) -> Result<ComposedScene> {
    intr.validate()?;
    if spec.targets.len() > 254 {
        return Err(Error::Config("at most 254 target instances per scene".into()));
    }
    let all: Vec<&PlacedShape> = spec.targets.iter().chain(&spec.clutter).chain(&spec.occluders).collect();
    for p in &all {
        p.shape.validate()?;
    }
    let placed: Vec<PlacedPrimitives> = all.iter().map(|p| PlacedPrimitives::new(&p.shape, &p.pose)).collect();
    let hits = cast_all(&placed, intr);
    let (w, h) = (intr.width as usize, intr.height as usize);

    let mut rgb = vec![0u8; w * h * 3];
    let mut depth_exact = vec![0.0f64; w * h];
    let mut labels = vec![0u8; w * h];
    let mut visible = vec![0usize; spec.targets.len()];
    for (i, hit) in hits.iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let dir = intr.ray(x as f64, y as f64);
        let surface = match (hit, &spec.background) {
            (Some((_, hit)), Background::Plane { depth_mm, .. }) if hit.t * dir.z > *depth_mm => {
                Some((Surface::Background, plane_hit(&spec.background, &dir)))
            }
            (Some((idx, hit)), _) => Some((Surface::Object(*idx), *hit)),
            (None, Background::Plane { .. }) => Some((Surface::Background, plane_hit(&spec.background, &dir))),
            (None, Background::FarField) => None,
        };
        let Some((surface, hit)) = surface else { continue };
        let z = hit.t * dir.z;
        if quantize_depth(z) == 0 {
            continue;
        }
        depth_exact[i] = z;
        rgb[i * 3..i * 3 + 3].copy_from_slice(&shade(&hit, &dir));
        if let Surface::Object(idx) = surface {
            if idx < spec.targets.len() {
                labels[i] = (idx + 1) as u8;
                visible[idx] += 1;
            }
        }
    }

    let mut instances = Vec::with_capacity(spec.targets.len());
    for (i, t) in spec.targets.iter().enumerate() {
        let alone = cast_all(&[PlacedPrimitives::new(&t.shape, &t.pose)], intr);
        let unoccluded = alone
            .iter()
            .enumerate()
            .filter(|(j, hit)| {
                hit.as_ref().is_some_and(|(_, hit)| {
                    let dir = intr.ray((j % w) as f64, (j / w) as f64);
                    quantize_depth(hit.t * dir.z) != 0
                })
            })
            .count();
        instances.push(InstanceTruth {
            pose: t.pose,
            visible_pixels: visible[i],
            unoccluded_pixels: unoccluded,
        });
    }

    let depth = apply_noise(&depth_exact, spec)?;
    Ok(ComposedScene {
        frame: RgbdFrame::new(*intr, rgb, depth)?,
        depth_exact,
        labels,
        instances,
    })
}

fn plane_hit(bg: &Background, dir: &Vector3<f64>) -> Hit {
    match bg {
        Background::Plane { depth_mm, albedo } => Hit {
            t: depth_mm / dir.z,
            normal: Vector3::new(0.0, 0.0, -1.0),
            albedo: *albedo,
        },
        Background::FarField => unreachable!("far field has no surface"),
    }
}

fn apply_noise(depth_exact: &[f64], spec: &SceneSpec) -> Result<Vec<u16>> {
    if spec.noise_sigma_mm == 0.0 && spec.invalid_fraction == 0.0 {
        return Ok(depth_exact.iter().map(|&z| quantize_depth(z)).collect());
    }
    let normal = Normal::new(0.0, spec.noise_sigma_mm)
        .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(depth_exact
        .iter()
        .map(|&z| {
            if z == 0.0 {
                return 0;
            }
            let n = normal.sample(&mut rng);
            let drop = rng.random::<f64>() < spec.invalid_fraction;
            if drop {
                0
            } else {
                quantize_depth(z + n)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::render::render_view;

    fn target() -> PlacedShape {
        PlacedShape {
            shape: ParametricShape::compound_demo(),
            pose: Pose6D::from_euler(Vector3::new(0.0, 0.0, 900.0), 0.3, 0.2, 0.1),
        }
    }

    #[test]
    fn single_target_matches_render_view() {
        let intr = CameraIntrinsics::qvga();
        let mut spec = SceneSpec::empty("demo", 1);
        spec.targets.push(target());
        let scene = compose_scene(&spec, &intr).unwrap();
        let view = render_view(&target().shape, &target().pose, &intr).unwrap();
        for i in 0..intr.pixel_count() {
            if view.body.data()[i] {
                assert_eq!(scene.frame.depth()[i], view.frame.depth()[i]);
                assert_eq!(scene.frame.rgb()[i * 3..i * 3 + 3], view.frame.rgb()[i * 3..i * 3 + 3]);
                assert_eq!(scene.labels[i], 1);
            }
        }
        assert_eq!(scene.instances[0].visibility(), 1.0);
    }

    #[test]
    fn half_occluder_halves_visibility() {
        let intr = CameraIntrinsics::qvga();
        let sphere = ParametricShape::Sphere { radius: 60.0, albedo: [0.7; 3] };
        let mut spec = SceneSpec::empty("ball", 2);
        spec.targets.push(PlacedShape { shape: sphere, pose: Pose6D::from_translation(Vector3::new(0.0, 0.0, 1000.0)) });
        // A wall 300 mm in front covering x < 0 in the camera frame.
        spec.occluders.push(PlacedShape {
            shape: ParametricShape::Box { size: [400.0, 600.0, 10.0], albedo: [0.2; 3] },
            pose: Pose6D::from_translation(Vector3::new(-200.0, 0.0, 700.0)),
        });
        spec.background = Background::Plane { depth_mm: 1500.0, albedo: [0.4; 3] };
        let scene = compose_scene(&spec, &intr).unwrap();
        let v = scene.instances[0].visibility();
        assert!((v - 0.5).abs() <= 0.05, "visibility {v}");
        // Count mask pixels directly.
        let vis = scene.visible_mask(0).count();
        assert_eq!(vis, scene.instances[0].visible_pixels);
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let intr = CameraIntrinsics::qvga();
        let mut spec = SceneSpec::empty("demo", 7);
        spec.targets.push(target());
        spec.noise_sigma_mm = 2.0;
        spec.invalid_fraction = 0.01;
        spec.background = Background::Plane { depth_mm: 1600.0, albedo: [0.5; 3] };
        let a = compose_scene(&spec, &intr).unwrap();
        let b = compose_scene(&spec, &intr).unwrap();
        assert_eq!(a.frame, b.frame);
        spec.seed = 8;
        let c = compose_scene(&spec, &intr).unwrap();
        assert_ne!(a.frame.depth(), c.frame.depth());
        let dropped = a.frame.depth().iter().filter(|&&d| d == 0).count() as f64 / intr.pixel_count() as f64;
        assert!(dropped > 0.003 && dropped < 0.02, "{dropped}");
    }

    #[test]
    fn empty_scene_is_background_only() {
        let intr = CameraIntrinsics::qvga();
        let mut spec = SceneSpec::empty("none", 0);
        let far = compose_scene(&spec, &intr).unwrap();
        assert!(far.frame.depth().iter().all(|&d| d == 0));
        spec.background = Background::Plane { depth_mm: 2000.0, albedo: [0.5; 3] };
        let plane = compose_scene(&spec, &intr).unwrap();
        assert!(plane.frame.depth().iter().all(|&d| d == 2000));
        assert!(plane.instances.is_empty());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let mut spec = SceneSpec::empty("demo", 42);
        spec.targets.push(target());
        spec.clutter.push(PlacedShape {
            shape: ParametricShape::Cylinder { radius: 12.3456789, height: 40.1, albedo: [0.1, 0.2, 0.3] },
            pose: Pose6D::from_euler(Vector3::new(-100.5, 20.25, 1300.125), 1.0, 0.5, -0.25),
        });
        spec.background = Background::Plane { depth_mm: 1750.0, albedo: [0.3; 3] };
        spec.noise_sigma_mm = 2.0;
        let text = spec.to_toml().unwrap();
        let back = SceneSpec::from_toml(&text, Path::new("mem")).unwrap();
        assert_eq!(spec, back);
        assert_eq!(text, back.to_toml().unwrap());
        let bad = text.replace("spec_version = 1", "spec_version = 9");
        assert!(SceneSpec::from_toml(&bad, Path::new("mem")).is_err());
    }
}
