//! Analytic primitives and their exact ray intersections.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::ObjectModel;
use crate::geometry::Pose6D;

const RAY_EPS: f64 = 1e-9;

/// Solid shapes in their own frame. Boxes are centered; cylinders are
/// centered with their axis along +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParametricShape {
    Box { size: [f64; 3], albedo: [f64; 3] },
    Cylinder { radius: f64, height: f64, albedo: [f64; 3] },
    Sphere { radius: f64, albedo: [f64; 3] },
    Union { parts: Vec<ShapePart> },
}

/// A member of a union, placed by `pose` (part frame to shape frame).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapePart {
    pub shape: ParametricShape,
    pub pose: Pose6D,
}

/// Closest intersection along a ray.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    /// Outward unit normal, same frame as the ray.
    pub normal: Vector3<f64>,
    pub albedo: [f64; 3],
}

/// A primitive flattened out of a (possibly nested) union, with its pose in
/// the root shape frame.
#[derive(Clone, Debug)]
pub(crate) struct FlatPrimitive {
    shape: ParametricShape,
    pose: Pose6D,
}

impl ParametricShape {
    /// Three-part test object: a box body, a cylinder on top and a sphere on
    /// one side, each with its own color.
    pub fn compound_demo() -> Self {
        ParametricShape::Union {
            parts: vec![
                ShapePart {
                    shape: ParametricShape::Box {
                        size: [110.0, 70.0, 50.0],
                        albedo: [0.85, 0.25, 0.2],
                    },
                    pose: Pose6D::identity(),
                },
                ShapePart {
                    shape: ParametricShape::Cylinder {
                        radius: 22.0,
                        height: 70.0,
                        albedo: [0.2, 0.55, 0.9],
                    },
                    pose: Pose6D::from_translation(Vector3::new(-25.0, 0.0, 55.0)),
                },
                ShapePart {
                    shape: ParametricShape::Sphere {
                        radius: 30.0,
                        albedo: [0.95, 0.85, 0.2],
                    },
                    pose: Pose6D::from_translation(Vector3::new(62.0, 10.0, 10.0)),
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        let ok = match self {
            ParametricShape::Box { size, .. } => positive(size),
            ParametricShape::Cylinder { radius, height, .. } => positive(&[*radius, *height]),
            ParametricShape::Sphere { radius, .. } => positive(&[*radius]),
            ParametricShape::Union { parts } => {
                if parts.is_empty() {
                    return Err(Error::InvalidShape("union has no parts".into()));
                }
                for p in parts {
                    p.shape.validate()?;
                }
                true
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidShape(format!("non-positive dimension in {self:?}")))
        }
    }

    pub(crate) fn flatten(&self) -> Vec<FlatPrimitive> {
        let mut out = Vec::new();
        self.flatten_into(&Pose6D::identity(), &mut out);
        out
    }

    fn flatten_into(&self, pose: &Pose6D, out: &mut Vec<FlatPrimitive>) {
        match self {
            ParametricShape::Union { parts } => {
                for p in parts {
                    p.shape.flatten_into(&pose.compose(&p.pose), out);
                }
            }
            prim => out.push(FlatPrimitive {
                shape: prim.clone(),
                pose: *pose,
            }),
        }
    }

    /// Radius of a sphere about the shape origin enclosing the whole shape.
    pub fn bounding_radius(&self) -> f64 {
        self.flatten()
            .iter()
            .map(|p| p.pose.translation().norm() + p.local_bounding_radius())
            .fold(0.0, f64::max)
    }

    /// Samples `n` points on the outer surface (points inside other union
    /// members are rejected) and builds the evaluation model.
    pub fn object_model(&self, id: &str, n: usize, symmetric: bool, rng: &mut impl Rng) -> Result<ObjectModel> {
        self.validate()?;
        let prims = self.flatten();
        let areas: Vec<f64> = prims.iter().map(FlatPrimitive::area).collect();
        let total: f64 = areas.iter().sum();
        let mut points = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while points.len() < n {
            attempts += 1;
            if attempts > n * 1000 {
                return Err(Error::InvalidShape("surface sampling did not converge".into()));
            }
            let mut pick = rng.random::<f64>() * total;
            let mut idx = 0;
            while idx + 1 < areas.len() && pick >= areas[idx] {
                pick -= areas[idx];
                idx += 1;
            }
            let p = prims[idx].pose.transform_point(&prims[idx].sample_local(rng));
            let buried = prims
                .iter()
                .enumerate()
                .any(|(j, other)| j != idx && other.contains(&p));
            if !buried {
                points.push(p);
            }
        }
        ObjectModel::new(id, points, symmetric)
    }
}

impl FlatPrimitive {
    fn local_bounding_radius(&self) -> f64 {
        match &self.shape {
            ParametricShape::Box { size, .. } => {
                Vector3::new(size[0], size[1], size[2]).norm() / 2.0
            }
            ParametricShape::Cylinder { radius, height, .. } => (radius * radius + height * height / 4.0).sqrt(),
            ParametricShape::Sphere { radius, .. } => *radius,
            ParametricShape::Union { .. } => unreachable!("flattened"),
        }
    }

    fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match &self.shape {
            ParametricShape::Box { size: [a, b, c], .. } => 2.0 * (a * b + b * c + c * a),
            ParametricShape::Cylinder { radius, height, .. } => 2.0 * PI * radius * height + 2.0 * PI * radius * radius,
            ParametricShape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            ParametricShape::Union { .. } => unreachable!("flattened"),
        }
    }

    fn sample_local(&self, rng: &mut impl Rng) -> Vector3<f64> {
        use std::f64::consts::PI;
        match &self.shape {
            ParametricShape::Box { size: [a, b, c], .. } => {
                let faces = [(a * b, 2), (b * c, 0), (c * a, 1)];
                let total: f64 = faces.iter().map(|f| f.0).sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = faces[2].1;
                for (area, ax) in faces {
                    if pick < area {
                        axis = ax;
                        break;
                    }
                    pick -= area;
                }
                let h = [a / 2.0, b / 2.0, c / 2.0];
                let mut p = Vector3::new(
                    rng.random_range(-h[0]..h[0]),
                    rng.random_range(-h[1]..h[1]),
                    rng.random_range(-h[2]..h[2]),
                );
                p[axis] = if rng.random::<bool>() { h[axis] } else { -h[axis] };
                p
            }
            ParametricShape::Cylinder { radius, height, .. } => {
                let side = 2.0 * PI * radius * height;
                let cap = PI * radius * radius;
                let pick = rng.random::<f64>() * (side + 2.0 * cap);
                let phi = rng.random::<f64>() * 2.0 * PI;
                if pick < side {
                    let z = rng.random_range(-height / 2.0..height / 2.0);
                    Vector3::new(radius * phi.cos(), radius * phi.sin(), z)
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let z = if pick < side + cap { height / 2.0 } else { -height / 2.0 };
                    Vector3::new(r * phi.cos(), r * phi.sin(), z)
                }
            }
            ParametricShape::Sphere { radius, .. } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi = rng.random::<f64>() * 2.0 * PI;
                let r = (1.0 - z * z).sqrt();
                Vector3::new(r * phi.cos(), r * phi.sin(), z) * *radius
            }
            ParametricShape::Union { .. } => unreachable!("flattened"),
        }
    }

    /// Strict interior test in the root shape frame.
    fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.pose.inverse().transform_point(p);
        let eps = 1e-6;
        match &self.shape {
            ParametricShape::Box { size, .. } => (0..3).all(|i| q[i].abs() < size[i] / 2.0 - eps),
            ParametricShape::Cylinder { radius, height, .. } => {
                q.xy().norm() < radius - eps && q.z.abs() < height / 2.0 - eps
            }
            ParametricShape::Sphere { radius, .. } => q.norm() < radius - eps,
            ParametricShape::Union { .. } => unreachable!("flattened"),
        }
    }

    /// Intersection with a ray given in the root frame.
    pub(crate) fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let inv = self.pose.rotation().inverse();
        let o = inv * (origin - self.pose.translation());
        let d = inv * dir;
        let (t, n_local, albedo) = match &self.shape {
            ParametricShape::Box { size, albedo } => intersect_box(&o, &d, size).map(|(t, n)| (t, n, *albedo)),
            ParametricShape::Cylinder { radius, height, albedo } => {
                intersect_cylinder(&o, &d, *radius, *height / 2.0).map(|(t, n)| (t, n, *albedo))
            }
            ParametricShape::Sphere { radius, albedo } => {
                intersect_sphere(&o, &d, *radius).map(|(t, n)| (t, n, *albedo))
            }
            ParametricShape::Union { .. } => unreachable!("flattened"),
        }?;
        Some(Hit {
            t,
            normal: self.pose.rotation() * n_local,
            albedo,
        })
    }
}

fn intersect_sphere(o: &Vector3<f64>, d: &Vector3<f64>, r: f64) -> Option<(f64, Vector3<f64>)> {
    let a = d.dot(d);
    let b = 2.0 * o.dot(d);
    let c = o.dot(o) - r * r;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = if b < 0.0 { -0.5 * (b - sq) } else { -0.5 * (b + sq) };
    let (mut t0, mut t1) = (q / a, c / q);
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    let t = if t0 > RAY_EPS { t0 } else if t1 > RAY_EPS { t1 } else { return None };
    Some((t, (o + d * t) / r))
}

fn intersect_box(o: &Vector3<f64>, d: &Vector3<f64>, size: &[f64; 3]) -> Option<(f64, Vector3<f64>)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0;
    let mut far_axis = 0;
    for i in 0..3 {
        let h = size[i] / 2.0;
        if d[i].abs() < 1e-15 {
            if o[i].abs() > h {
                return None;
            }
            continue;
        }
        let mut t0 = (-h - o[i]) / d[i];
        let mut t1 = (h - o[i]) / d[i];
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = i;
        }
        if t1 < t_far {
            t_far = t1;
            far_axis = i;
        }
        if t_near > t_far {
            return None;
        }
    }
    let (t, axis) = if t_near > RAY_EPS {
        (t_near, near_axis)
    } else if t_far > RAY_EPS {
        (t_far, far_axis)
    } else {
        return None;
    };
    let p = o + d * t;
    let mut n = Vector3::zeros();
    n[axis] = p[axis].signum();
    Some((t, n))
}

fn intersect_cylinder(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, hh: f64) -> Option<(f64, Vector3<f64>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut consider = |t: f64, n: Vector3<f64>| {
        if t > RAY_EPS && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = 2.0 * (o.x * d.x + o.y * d.y);
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                let p = o + d * t;
                if p.z.abs() <= hh {
                    consider(t, Vector3::new(p.x / r, p.y / r, 0.0));
                }
            }
        }
    }
    if d.z.abs() > 1e-15 {
        for (z, nz) in [(hh, 1.0), (-hh, -1.0)] {
            let t = (z - o.z) / d.z;
            let p = o + d * t;
            if p.x * p.x + p.y * p.y <= r * r {
                consider(t, Vector3::new(0.0, 0.0, nz));
            }
        }
    }
    best
}

/// A shape placed in the camera frame.
#[derive(Clone, Debug)]
pub(crate) struct PlacedPrimitives {
    prims: Vec<FlatPrimitive>,
    center: Vector3<f64>,
    radius: f64,
}

impl PlacedPrimitives {
    pub(crate) fn new(shape: &ParametricShape, pose: &Pose6D) -> Self {
        let prims: Vec<FlatPrimitive> = shape
            .flatten()
            .into_iter()
            .map(|p| FlatPrimitive {
                pose: pose.compose(&p.pose),
                shape: p.shape,
            })
            .collect();
        Self {
            prims,
            center: *pose.translation(),
            radius: shape.bounding_radius(),
        }
    }

    /// Closest hit of the ray from the camera origin along `dir`.
    pub(crate) fn intersect(&self, dir: &Vector3<f64>) -> Option<Hit> {
        // Bounding-sphere rejection.
        let dn = dir.normalize();
        let along = self.center.dot(&dn);
        let perp2 = self.center.norm_squared() - along * along;
        if perp2 > self.radius * self.radius * 1.0001 + 1e-9 {
            return None;
        }
        let origin = Vector3::zeros();
        self.prims
            .iter()
            .filter_map(|p| p.intersect(&origin, dir))
            .min_by(|a, b| a.t.total_cmp(&b.t))
    }
}
