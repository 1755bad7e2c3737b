//! Quantized RGB-D patch descriptor and the template similarity kernel.
//!
//! Every pixel carries up to two quantized orientations, one per modality:
//! the dominant color gradient direction (modulo 180°) and the surface normal.
//! Each orientation is one of 8 bins packed as a single set bit, so a 3x3
//! neighborhood is summarized by OR-ing bytes ("spreading") and the best
//! response over that neighborhood becomes one table lookup.
//!
//! Template feature offsets are stored at a canonical depth and rescaled by
//! the center depth of the patch under test, which makes one training scale
//! match every test distance. A per-feature depth gate rejects features whose
//! depth relative to the patch center disagrees with the template.

use std::sync::LazyLock;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Mask, RgbdFrame};
use crate::geometry::{ray_rotation, CameraIntrinsics};

pub const BINS: usize = 8;
/// Offsets are stored as if the patch center were this far away.
pub const CANONICAL_DEPTH_MM: f32 = 1000.0;
/// Half-width of the spreading neighborhood (3x3).
pub const SPREAD_RADIUS: i32 = 1;
pub const MIN_TEMPLATE_FEATURES: usize = 5;
pub const MAX_TEMPLATE_FEATURES: usize = 100;

/// Depth discontinuity (mm) beyond which neighbors are ignored when
/// estimating normals.
const NORMAL_DISCONTINUITY_MM: f64 = 30.0;
/// Tilt of the seven peripheral normal cones away from the viewing axis.
const NORMAL_CONE_TILT: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Gradient = 0,
    Normal = 1,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Gradient, Modality::Normal];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One orientation bin packed as a single set bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QuantizedOrientation {
    kind: Modality,
    bits: u8,
}

impl QuantizedOrientation {
    pub fn new(kind: Modality, bin: usize) -> Self {
        assert!(bin < BINS, "orientation bin {bin} out of range");
        Self {
            kind,
            bits: 1 << bin,
        }
    }

    /// Inverse of [`QuantizedOrientation::bits`]; `None` unless exactly one bit is set.
    pub fn from_bits(kind: Modality, bits: u8) -> Option<Self> {
        (bits.count_ones() == 1).then_some(Self { kind, bits })
    }

    pub fn kind(&self) -> Modality {
        self.kind
    }

    pub fn bin(&self) -> usize {
        self.bits.trailing_zeros() as usize
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }
}

/// Allowed response levels between two bins.
fn response_levels() -> [f32; 4] {
    [
        1.0,
        (std::f64::consts::PI / 8.0).cos() as f32,
        (std::f64::consts::PI / 4.0).cos() as f32,
        0.0,
    ]
}

/// Snaps a cosine down to the discrete response levels.
fn snap_response(cosine: f64) -> f32 {
    let levels = response_levels();
    levels
        .iter()
        .copied()
        .find(|&l| cosine + 1e-9 >= l as f64)
        .unwrap_or(0.0)
}

/// Unit direction represented by a gradient bin (in-plane, modulo 180°).
pub fn gradient_bin_direction(bin: usize) -> [f64; 2] {
    let a = bin as f64 * std::f64::consts::PI / BINS as f64;
    [a.cos(), a.sin()]
}

/// Axis of a normal cone. Bin 0 faces the camera; bins 1..8 are tilted by 45°
/// at evenly spaced azimuths.
pub fn normal_bin_axis(bin: usize) -> Vector3<f64> {
    if bin == 0 {
        return Vector3::new(0.0, 0.0, -1.0);
    }
    let az = (bin - 1) as f64 * 2.0 * std::f64::consts::PI / (BINS - 1) as f64;
    let (s, c) = NORMAL_CONE_TILT.sin_cos();
    Vector3::new(s * az.cos(), s * az.sin(), -c)
}

/// Response between two bins computed from their geometry.
pub fn bin_response(kind: Modality, a: usize, b: usize) -> f32 {
    let cosine = match kind {
        Modality::Gradient => {
            let (da, db) = (gradient_bin_direction(a), gradient_bin_direction(b));
            (da[0] * db[0] + da[1] * db[1]).abs()
        }
        Modality::Normal => normal_bin_axis(a).dot(&normal_bin_axis(b)),
    };
    snap_response(cosine)
}

/// `LUT[modality][template bin][spread byte]` = best response over the set bits.
pub struct ResponseLut {
    table: Vec<f32>,
}

impl ResponseLut {
    fn build() -> Self {
        let mut table = vec![0.0f32; 2 * BINS * 256];
        for kind in Modality::ALL {
            for bin in 0..BINS {
                for mask in 0..256usize {
                    let mut best = 0.0f32;
                    for other in 0..BINS {
                        if mask & (1 << other) != 0 {
                            best = best.max(bin_response(kind, bin, other));
                        }
                    }
                    table[(kind.index() * BINS + bin) * 256 + mask] = best;
                }
            }
        }
        Self { table }
    }

    #[inline]
    pub fn get(&self, kind: Modality, bin: usize, spread: u8) -> f32 {
        self.table[(kind.index() * BINS + bin) * 256 + spread as usize]
    }
}

pub static RESPONSE_LUT: LazyLock<ResponseLut> = LazyLock::new(ResponseLut::build);

/// Parameters that must agree between training and detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorParams {
    /// Minimum color gradient magnitude (Sobel response on 0..255 values).
    pub gradient_threshold: f32,
    /// Depth smoothing half-window and finite-difference step for normals, pixels.
    pub normal_smoothing: u32,
    /// Depth gate threshold, millimeters.
    pub tau_d: f32,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            gradient_threshold: 40.0,
            normal_smoothing: 2,
            tau_d: 50.0,
        }
    }
}

/// Quantized, spread orientation maps of one frame (or a crop of one).
///
/// Coordinates passed to the accessors are local to the map; `origin` gives
/// the position of the local `(0, 0)` in the source frame.
#[derive(Clone, Debug)]
pub struct SceneFeatureMap {
    width: usize,
    height: usize,
    origin: (i32, i32),
    intrinsics: CameraIntrinsics,
    raw: [Vec<u8>; 2],
    spread: [Vec<u8>; 2],
    depth: Vec<u16>,
}

impl SceneFeatureMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> (i32, i32) {
        self.origin
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    #[inline]
    fn index(&self, x: i32, y: i32) -> Option<usize> {
        (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height)
            .then(|| y as usize * self.width + x as usize)
    }

    /// Unspread single-bit byte at a pixel (0 = no orientation).
    pub fn raw(&self, kind: Modality, x: i32, y: i32) -> u8 {
        self.index(x, y).map_or(0, |i| self.raw[kind.index()][i])
    }

    /// OR of the raw bytes in the 3x3 neighborhood.
    pub fn spread(&self, kind: Modality, x: i32, y: i32) -> u8 {
        self.index(x, y).map_or(0, |i| self.spread[kind.index()][i])
    }

    pub fn depth_at(&self, x: i32, y: i32) -> Option<f32> {
        match self.index(x, y).map(|i| self.depth[i]) {
            Some(d) if d != 0 => Some(d as f32),
            _ => None,
        }
    }

    /// Camera-frame point at a local pixel.
    pub fn point_at(&self, x: i32, y: i32) -> Option<Vector3<f64>> {
        self.depth_at(x, y).map(|z| {
            self.intrinsics.backproject(
                (x + self.origin.0) as f64,
                (y + self.origin.1) as f64,
                z as f64,
            )
        })
    }

    /// Copies out the window `[x0, x0+w) x [y0, y0+h)`, clipped to the map.
    pub fn crop(&self, x0: i32, y0: i32, w: usize, h: usize) -> SceneFeatureMap {
        let cx0 = x0.max(0);
        let cy0 = y0.max(0);
        let cx1 = (x0 + w as i32).min(self.width as i32);
        let cy1 = (y0 + h as i32).min(self.height as i32);
        let (cw, ch) = ((cx1 - cx0).max(0) as usize, (cy1 - cy0).max(0) as usize);
        let copy = |src: &[u8]| -> Vec<u8> {
            let mut out = Vec::with_capacity(cw * ch);
            for y in cy0..cy1 {
                let start = y as usize * self.width + cx0 as usize;
                out.extend_from_slice(&src[start..start + cw]);
            }
            out
        };
        let mut depth = Vec::with_capacity(cw * ch);
        for y in cy0..cy1 {
            let start = y as usize * self.width + cx0 as usize;
            depth.extend_from_slice(&self.depth[start..start + cw]);
        }
        SceneFeatureMap {
            width: cw,
            height: ch,
            origin: (self.origin.0 + cx0, self.origin.1 + cy0),
            intrinsics: self.intrinsics,
            raw: [copy(&self.raw[0]), copy(&self.raw[1])],
            spread: [copy(&self.spread[0]), copy(&self.spread[1])],
            depth,
        }
    }
}

/// Quantizes gradients and normals of a frame and spreads them over 3x3.
pub fn extract_orientations(frame: &RgbdFrame, params: &DescriptorParams) -> Result<SceneFeatureMap> {
    let (w, h) = (frame.width(), frame.height());
    if w == 0 || h == 0 {
        return Err(Error::EmptyFrame);
    }
    let grad = quantize_gradients(frame, params.gradient_threshold);
    let normal = quantize_normals(frame, params.normal_smoothing.max(1) as i32);
    let spread = [spread_bits(&grad, w, h), spread_bits(&normal, w, h)];
    Ok(SceneFeatureMap {
        width: w,
        height: h,
        origin: (0, 0),
        intrinsics: *frame.intrinsics(),
        raw: [grad, normal],
        spread,
        depth: frame.depth().to_vec(),
    })
}

/// Gradient bin of an image-plane gradient vector, bins centered on multiples of 22.5°.
pub fn quantize_gradient_angle(gx: f64, gy: f64) -> usize {
    let mut deg = gy.atan2(gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    ((deg / (180.0 / BINS as f64)).round() as usize) % BINS
}

/// Nearest normal cone; `None` for normals facing away from the camera.
pub fn quantize_normal(n: &Vector3<f64>) -> Option<usize> {
    if n.z >= 0.0 {
        return None;
    }
    let n = n.normalize();
    (0..BINS)
        .map(|b| (b, normal_bin_axis(b).dot(&n)))
        .fold(None, |best: Option<(usize, f64)>, (b, d)| match best {
            Some((_, bd)) if bd >= d => best,
            _ => Some((b, d)),
        })
        .map(|(b, _)| b)
}

fn quantize_gradients(frame: &RgbdFrame, threshold: f32) -> Vec<u8> {
    let (w, h) = (frame.width(), frame.height());
    let rgb = frame.rgb();
    let mut out = vec![0u8; w * h];
    let thr2 = (threshold as f64).powi(2);
    let px = |x: usize, y: usize, c: usize| rgb[(y * w + x) * 3 + c] as f64;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let mut best = (0.0f64, 0.0f64, 0.0f64);
            for c in 0..3 {
                let gx = (px(x + 1, y - 1, c) + 2.0 * px(x + 1, y, c) + px(x + 1, y + 1, c))
                    - (px(x - 1, y - 1, c) + 2.0 * px(x - 1, y, c) + px(x - 1, y + 1, c));
                let gy = (px(x - 1, y + 1, c) + 2.0 * px(x, y + 1, c) + px(x + 1, y + 1, c))
                    - (px(x - 1, y - 1, c) + 2.0 * px(x, y - 1, c) + px(x + 1, y - 1, c));
                let m = gx * gx + gy * gy;
                if m > best.0 {
                    best = (m, gx, gy);
                }
            }
            if best.0 > thr2 {
                out[y * w + x] = 1 << quantize_gradient_angle(best.1, best.2);
            }
        }
    }
    out
}

fn quantize_normals(frame: &RgbdFrame, step: i32) -> Vec<u8> {
    let (w, h) = (frame.width(), frame.height());
    let depth = frame.depth();
    let intr = frame.intrinsics();
    let at = |x: i32, y: i32| -> Option<f64> {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            return None;
        }
        match depth[y as usize * w + x as usize] {
            0 => None,
            d => Some(d as f64),
        }
    };

    // Edge-preserving box smoothing.
    let mut smooth = vec![0.0f64; w * h];
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let Some(d0) = at(x, y) else { continue };
            let (mut sum, mut n) = (0.0, 0.0);
            for dy in -step..=step {
                for dx in -step..=step {
                    if let Some(d) = at(x + dx, y + dy) {
                        if (d - d0).abs() < NORMAL_DISCONTINUITY_MM {
                            sum += d;
                            n += 1.0;
                        }
                    }
                }
            }
            smooth[y as usize * w + x as usize] = sum / n;
        }
    }

    let point = |x: i32, y: i32, ref_z: f64| -> Option<Vector3<f64>> {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            return None;
        }
        let z = smooth[y as usize * w + x as usize];
        (z > 0.0 && (z - ref_z).abs() < NORMAL_DISCONTINUITY_MM * step as f64)
            .then(|| intr.backproject(x as f64, y as f64, z))
    };

    let mut out = vec![0u8; w * h];
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let z = smooth[y as usize * w + x as usize];
            if z <= 0.0 {
                continue;
            }
            let c = intr.backproject(x as f64, y as f64, z);
            let diff = |a: Option<Vector3<f64>>, b: Option<Vector3<f64>>| match (a, b) {
                (Some(a), Some(b)) => Some(a - b),
                (Some(a), None) => Some(a - c),
                (None, Some(b)) => Some(c - b),
                (None, None) => None,
            };
            let tx = diff(point(x + step, y, z), point(x - step, y, z));
            let ty = diff(point(x, y + step, z), point(x, y - step, z));
            let (Some(tx), Some(ty)) = (tx, ty) else { continue };
            let mut n = tx.cross(&ty);
            if n.norm_squared() == 0.0 {
                continue;
            }
            if n.z > 0.0 {
                n = -n;
            }
            if let Some(bin) = quantize_normal(&n) {
                out[y as usize * w + x as usize] = 1 << bin;
            }
        }
    }
    out
}

fn spread_bits(raw: &[u8], w: usize, h: usize) -> Vec<u8> {
    let mut out = vec![0u8; w * h];
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let mut acc = 0u8;
            for dy in -SPREAD_RADIUS..=SPREAD_RADIUS {
                for dx in -SPREAD_RADIUS..=SPREAD_RADIUS {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        acc |= raw[ny as usize * w + nx as usize];
                    }
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

/// One template feature. `offset` is in pixels at the canonical depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchFeature {
    pub offset: [f32; 2],
    pub orientation: QuantizedOrientation,
    /// `D(center) - D(feature)` on the source patch, millimeters.
    pub depth_delta: f32,
}

/// A training patch's feature list plus the vote it casts.
///
/// `vote_offset` and `vote_rotation` are expressed in the frame of the viewing
/// ray through the patch center (the ray rotated onto +z), so a patch seen
/// off-axis at test time votes consistently.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTemplate {
    pub features: Vec<PatchFeature>,
    pub center_depth: f32,
    pub vote_offset: [f32; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub vote_rotation: [f32; 4],
    pub source_view: u32,
}

impl PatchTemplate {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn vote_offset_vec(&self) -> Vector3<f64> {
        Vector3::new(
            self.vote_offset[0] as f64,
            self.vote_offset[1] as f64,
            self.vote_offset[2] as f64,
        )
    }

    pub fn vote_rotation_quat(&self) -> UnitQuaternion<f64> {
        quat_from_array(self.vote_rotation)
    }
}

pub(crate) fn quat_from_array(q: [f32; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        q[0] as f64,
        q[1] as f64,
        q[2] as f64,
        q[3] as f64,
    ))
}

pub(crate) fn quat_to_array(q: &UnitQuaternion<f64>) -> [f32; 4] {
    let q = crate::geometry::canonical(*q);
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

/// Everything needed to cut templates out of one rendered training view.
pub struct TemplateSource<'a> {
    pub map: &'a SceneFeatureMap,
    /// Object silhouette, in map-local coordinates.
    pub body: &'a Mask,
    /// One-pixel inner boundary of `body`.
    pub contour: &'a Mask,
    pub view_id: u32,
}

/// Cuts a template centered at local pixel `center`.
///
/// `object_center` is the camera-frame object origin and `object_rotation` the
/// object-to-camera rotation of the view.
pub fn build_template(
    src: &TemplateSource<'_>,
    center: (i32, i32),
    patch_size_px: u32,
    object_center: &Vector3<f64>,
    object_rotation: &UnitQuaternion<f64>,
    budget: usize,
) -> Result<PatchTemplate> {
    let map = src.map;
    let center_depth = map.depth_at(center.0, center.1).ok_or(Error::InvalidCenterDepth)?;
    let half = (patch_size_px / 2) as i32;

    let mut grad_candidates = Vec::new();
    let mut normal_candidates = Vec::new();
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (center.0 + dx, center.1 + dy);
            if map.depth_at(x, y).is_none() {
                continue;
            }
            if src.contour.get(x, y) && map.raw(Modality::Gradient, x, y) != 0 {
                grad_candidates.push((dx, dy));
            }
            if src.body.get(x, y) && map.raw(Modality::Normal, x, y) != 0 {
                normal_candidates.push((dx, dy));
            }
        }
    }
    let total = grad_candidates.len() + normal_candidates.len();
    if total < MIN_TEMPLATE_FEATURES {
        return Err(Error::TooFewFeatures(total));
    }

    let budget = budget.clamp(MIN_TEMPLATE_FEATURES, MAX_TEMPLATE_FEATURES);
    let mut n_grad = (budget / 2).min(grad_candidates.len());
    let n_normal = (budget - n_grad).min(normal_candidates.len());
    n_grad = (budget - n_normal).min(grad_candidates.len());

    let scale = center_depth / CANONICAL_DEPTH_MM;
    let mut features = Vec::with_capacity(n_grad + n_normal);
    for (kind, picked) in [
        (Modality::Gradient, farthest_point_sample(&grad_candidates, n_grad)),
        (Modality::Normal, farthest_point_sample(&normal_candidates, n_normal)),
    ] {
        for (dx, dy) in picked {
            let (x, y) = (center.0 + dx, center.1 + dy);
            let bits = map.raw(kind, x, y);
            let depth = map.depth_at(x, y).expect("candidate depth checked");
            features.push(PatchFeature {
                offset: [dx as f32 * scale, dy as f32 * scale],
                orientation: QuantizedOrientation::from_bits(kind, bits).expect("raw bytes hold one bit"),
                depth_delta: center_depth - depth,
            });
        }
    }

    let p = map.point_at(center.0, center.1).expect("center depth checked");
    let to_ray = ray_rotation(&p).inverse();
    let offset = to_ray * (object_center - p);
    Ok(PatchTemplate {
        features,
        center_depth,
        vote_offset: [offset.x as f32, offset.y as f32, offset.z as f32],
        vote_rotation: quat_to_array(&(to_ray * object_rotation)),
        source_view: src.view_id,
    })
}

/// Greedy farthest-point selection, seeded with the candidate nearest the
/// origin. Ties resolve to the earliest candidate.
fn farthest_point_sample(candidates: &[(i32, i32)], k: usize) -> Vec<(i32, i32)> {
    if k == 0 || candidates.is_empty() {
        return Vec::new();
    }
    let d2 = |a: (i32, i32), b: (i32, i32)| (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2);
    let first = (0..candidates.len())
        .min_by_key(|&i| d2(candidates[i], (0, 0)))
        .expect("non-empty");
    let mut picked = vec![candidates[first]];
    let mut min_d: Vec<i32> = candidates.iter().map(|&c| d2(c, candidates[first])).collect();
    while picked.len() < k.min(candidates.len()) {
        let (next, _) = min_d
            .iter()
            .enumerate()
            .fold((usize::MAX, -1), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        if next == usize::MAX {
            break;
        }
        picked.push(candidates[next]);
        for (i, &c) in candidates.iter().enumerate() {
            min_d[i] = min_d[i].min(d2(c, candidates[next]));
        }
    }
    picked
}

/// Pixel probed by a feature when the patch under test is centered at
/// `(x, y)` with center depth `center_depth`.
#[inline]
pub fn probe_position(x: i32, y: i32, feature: &PatchFeature, center_depth: f32) -> (i32, i32) {
    let s = CANONICAL_DEPTH_MM / center_depth;
    (
        x + (feature.offset[0] * s).round() as i32,
        y + (feature.offset[1] * s).round() as i32,
    )
}

/// Template similarity of the patch centered at local pixel `(x, y)`.
///
/// Sum over features of the best orientation response in the probed 3x3
/// neighborhood, gated by depth consistency within `tau_d` millimeters.
pub fn similarity(map: &SceneFeatureMap, x: i32, y: i32, template: &PatchTemplate, tau_d: f32) -> Result<f32> {
    let center_depth = map.depth_at(x, y).ok_or(Error::InvalidCenterDepth)?;
    Ok(similarity_at_depth(map, x, y, center_depth, template, tau_d))
}

#[inline]
pub(crate) fn similarity_at_depth(
    map: &SceneFeatureMap,
    x: i32,
    y: i32,
    center_depth: f32,
    template: &PatchTemplate,
    tau_d: f32,
) -> f32 {
    let lut = &*RESPONSE_LUT;
    let mut score = 0.0f32;
    for f in &template.features {
        let (px, py) = probe_position(x, y, f, center_depth);
        let Some(i) = map.index(px, py) else { continue };
        let kind = f.orientation.kind();
        let g = lut.get(kind, f.orientation.bin(), map.spread[kind.index()][i]);
        if g == 0.0 {
            continue;
        }
        if depth_gate(map, px, py, center_depth - f.depth_delta, tau_d) {
            score += g;
        }
    }
    score
}

/// True if some valid depth in the 3x3 neighborhood of `(px, py)` is within
/// `tau_d` of `expected`.
#[inline]
fn depth_gate(map: &SceneFeatureMap, px: i32, py: i32, expected: f32, tau_d: f32) -> bool {
    for dy in -SPREAD_RADIUS..=SPREAD_RADIUS {
        for dx in -SPREAD_RADIUS..=SPREAD_RADIUS {
            if let Some(d) = map.depth_at(px + dx, py + dy) {
                if (d - expected).abs() < tau_d {
                    return true;
                }
            }
        }
    }
    false
}
