use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MAX_LEVEL: u32 = 4;

/// Unit vertices of a regular icosahedron subdivided `level` times.
#[derive(Clone, Debug)]
pub struct ViewSphere {
    pub radius: f64,
    pub level: u32,
    pub vertices: Vec<Vector3<f64>>,
}

impl ViewSphere {
    pub fn new(level: u32, radius: f64) -> Result<Self> {
        Ok(Self {
            radius,
            level,
            vertices: subdivide_icosahedron(level)?,
        })
    }
}

/// Expected vertex count `10 * 4^level + 2`.
pub fn vertex_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

fn icosahedron() -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let verts = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (verts, faces)
}

/// Splits every edge at its midpoint and pushes the midpoint onto the unit
/// sphere, `level` times.
pub fn subdivide_icosahedron(level: u32) -> Result<Vec<Vector3<f64>>> {
    if level > MAX_LEVEL {
        return Err(Error::LevelTooDeep(level));
    }
    let (mut verts, mut faces) = icosahedron();
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Ok(verts)
}
