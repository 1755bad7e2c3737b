//! Image-domain types: registered RGB-D frames, binary masks and object models.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;

/// Valid depths lie strictly inside this range (millimeters).
pub const MIN_DEPTH_MM: u16 = 100;
pub const MAX_DEPTH_MM: u16 = 10000;

/// Registered color and depth images. Depth is in millimeters, 0 = invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    intrinsics: CameraIntrinsics,
    rgb: Vec<u8>,
    depth: Vec<u16>,
}

impl RgbdFrame {
    pub fn new(intrinsics: CameraIntrinsics, rgb: Vec<u8>, depth: Vec<u16>) -> Result<Self> {
        intrinsics.validate()?;
        let n = intrinsics.pixel_count();
        if n == 0 {
            return Err(Error::EmptyFrame);
        }
        if rgb.len() != 3 * n || depth.len() != n {
            return Err(Error::InvalidFrame(format!(
                "buffer sizes rgb={} depth={} do not match {}x{}",
                rgb.len(),
                depth.len(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        if let Some(d) = depth.iter().find(|&&d| d != 0 && !is_valid_depth(d)) {
            return Err(Error::InvalidFrame(format!("depth {d} mm outside (100, 10000)")));
        }
        Ok(Self {
            intrinsics,
            rgb,
            depth,
        })
    }

    /// Like [`RgbdFrame::new`] but maps out-of-range depths to the invalid
    /// sentinel instead of failing. Used for sensor data.
    pub fn new_clamped(intrinsics: CameraIntrinsics, rgb: Vec<u8>, mut depth: Vec<u16>) -> Result<Self> {
        for d in depth.iter_mut() {
            if !is_valid_depth(*d) {
                *d = 0;
            }
        }
        Self::new(intrinsics, rgb, depth)
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn depth(&self) -> &[u16] {
        &self.depth
    }

    /// Depth at `(x, y)` in millimeters, `None` if invalid or out of bounds.
    pub fn depth_at(&self, x: i32, y: i32) -> Option<f64> {
        if x < 0 || y < 0 || x as usize >= self.width() || y as usize >= self.height() {
            return None;
        }
        match self.depth[y as usize * self.width() + x as usize] {
            0 => None,
            d => Some(d as f64),
        }
    }

    /// Camera-frame 3D point at pixel `(x, y)`, if its depth is valid.
    pub fn point_at(&self, x: i32, y: i32) -> Option<Vector3<f64>> {
        self.depth_at(x, y)
            .map(|z| self.intrinsics.backproject(x as f64, y as f64, z))
    }
}

pub fn is_valid_depth(d: u16) -> bool {
    d > MIN_DEPTH_MM && d < MAX_DEPTH_MM
}

/// Row-major binary image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: i32, y: i32) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }

    /// Set pixels with at least one unset (or out-of-image) 4-neighbor.
    pub fn inner_boundary(&self) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                if self.get(x, y)
                    && (!self.get(x - 1, y) || !self.get(x + 1, y) || !self.get(x, y - 1) || !self.get(x, y + 1))
                {
                    out.set(x as usize, y as usize, true);
                }
            }
        }
        out
    }

    /// Square-window dilation with the given radius.
    pub fn dilate(&self, radius: usize) -> Mask {
        let r = radius as i32;
        let mut out = Mask::new(self.width, self.height);
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                if self.get(x, y) {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (nx, ny) = (x + dx, y + dy);
                            if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                                out.set(nx as usize, ny as usize, true);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a || b)
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Intersection over union; two empty masks give 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.and(other).count();
        let union = self.or(other).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Window `[x0, x0+w) x [y0, y0+h)`; pixels outside the source are false.
    pub fn crop(&self, x0: i32, y0: i32, w: usize, h: usize) -> Mask {
        let mut out = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.get(x0 + x as i32, y0 + y as i32);
            }
        }
        out
    }
}

/// A rigid object: surface samples in the object frame plus its diameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    pub id: String,
    vertices: Vec<Vector3<f64>>,
    diameter: f64,
    pub symmetric: bool,
}

impl ObjectModel {
    pub fn new(id: impl Into<String>, vertices: Vec<Vector3<f64>>, symmetric: bool) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::EmptyModel);
        }
        let diameter = max_pairwise_distance(&vertices);
        Ok(Self {
            id: id.into(),
            vertices,
            diameter,
            symmetric,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }
}

fn max_pairwise_distance(points: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_rejects_bad_sizes_and_depths() {
        let intr = CameraIntrinsics::new(10.0, 10.0, 1.0, 1.0, 2, 2).unwrap();
        assert!(RgbdFrame::new(intr, vec![0; 12], vec![0; 4]).is_ok());
        assert!(RgbdFrame::new(intr, vec![0; 11], vec![0; 4]).is_err());
        assert!(RgbdFrame::new(intr, vec![0; 12], vec![50, 0, 0, 0]).is_err());
        assert!(RgbdFrame::new(intr, vec![0; 12], vec![10000, 0, 0, 0]).is_err());
        let clamped = RgbdFrame::new_clamped(intr, vec![0; 12], vec![50, 500, 20000, 0]).unwrap();
        assert_eq!(clamped.depth(), &[0, 500, 0, 0]);
        assert_eq!(clamped.depth_at(1, 0), Some(500.0));
        assert_eq!(clamped.depth_at(0, 0), None);
        assert_eq!(clamped.depth_at(5, 0), None);
    }

    #[test]
    fn diameter_matches_brute_force() {
        let pts: Vec<_> = (0..300)
            .map(|i| {
                let t = i as f64 * 0.37;
                Vector3::new(t.sin() * 40.0, (t * 1.3).cos() * 25.0, (t * 0.7).sin() * 60.0)
            })
            .collect();
        let model = ObjectModel::new("toy", pts.clone(), false).unwrap();
        let mut brute = 0.0f64;
        for a in &pts {
            for b in &pts {
                brute = brute.max((a - b).norm());
            }
        }
        assert!((model.diameter() - brute).abs() < 1e-6);
        assert!(matches!(ObjectModel::new("x", vec![], false), Err(Error::EmptyModel)));
    }

    #[test]
    fn mask_boundary_and_iou() {
        let mut m = Mask::new(5, 5);
        for y in 1..4 {
            for x in 1..4 {
                m.set(x, y, true);
            }
        }
        let b = m.inner_boundary();
        assert_eq!(b.count(), 8);
        assert!(!b.get(2, 2));
        assert_eq!(m.bbox(), Some((1, 1, 3, 3)));
        assert_eq!(m.dilate(1).count(), 25);
        assert!((m.iou(&b) - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(Mask::new(2, 2).iou(&Mask::new(2, 2)), 1.0);
    }
}
