//! Detection: Hough voting, three-stage localization, consensus
//! backprojection and iterative leaf re-weighting over bagged tree subsets.

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_orientations, SceneFeatureMap};
use crate::forest::ForestModel;
use crate::frame::{Mask, RgbdFrame};
use crate::geometry::{ray_rotation, CameraIntrinsics, Pose6D};
use crate::meanshift::{quat_angle, rotation_mode, shift_to_mode};

const MAX_ROTATION_SEEDS: usize = 128;
const MAX_DEPTH_SEEDS: usize = 3;
/// Rotation support window, in rotation bandwidths.
const ROTATION_WINDOW: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub patch_stride: u32,
    pub top_n: usize,
    /// Bagged update rounds; 0 is single-shot detection.
    pub iterations: usize,
    /// Trees per round; `None` means half the forest, rounded up.
    pub bag_size: Option<usize>,
    /// Absolute validity threshold; overrides `theta_valid_fraction`.
    pub theta_valid: Option<f64>,
    /// Validity threshold relative to the best first-round score.
    pub theta_valid_fraction: f64,
    pub nms_radius_px: f64,
    /// Gaussian smoothing of the 2D accumulator before peak picking, pixels.
    pub accumulator_sigma_px: f64,
    /// Stage-2 bandwidth as a fraction of the object diameter.
    pub translation_bandwidth: f64,
    pub rotation_bandwidth_deg: f64,
    /// Backprojected pixels must lie within this many diameters of the center.
    pub consistency_radius: f64,
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            patch_stride: 4,
            top_n: 10,
            iterations: 10,
            bag_size: None,
            theta_valid: None,
            theta_valid_fraction: 0.3,
            nms_radius_px: 10.0,
            accumulator_sigma_px: 2.0,
            translation_bandwidth: 0.25,
            rotation_bandwidth_deg: 25.0,
            consistency_radius: 1.0,
            seed: 0,
        }
    }
}

impl InferConfig {
    pub fn validate(&self, tree_count: usize) -> Result<()> {
        if self.patch_stride == 0 || self.top_n == 0 {
            return Err(Error::Config("patch_stride and top_n must be positive".into()));
        }
        if let Some(b) = self.bag_size {
            if b == 0 || b > tree_count {
                return Err(Error::Config(format!("bag_size must be in 1..={tree_count}")));
            }
        }
        if self.translation_bandwidth <= 0.0 || self.rotation_bandwidth_deg <= 0.0 || self.consistency_radius <= 0.0 {
            return Err(Error::Config("bandwidths must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_bag_size(&self, tree_count: usize) -> usize {
        self.bag_size.unwrap_or(tree_count.div_ceil(2)).clamp(1, tree_count.max(1))
    }
}

/// Per-frame leaf foreground probabilities, indexed `[tree][node]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafState {
    p_fg: Vec<Vec<f32>>,
}

impl LeafState {
    /// Starts from the model's trained values (all 1 after one-class training).
    pub fn new(model: &ForestModel) -> Self {
        let p_fg = model
            .trees
            .iter()
            .map(|t| {
                t.nodes()
                    .iter()
                    .map(|n| match n {
                        crate::forest::Node::Leaf(l) => l.p_fg,
                        crate::forest::Node::Split { .. } => 0.0,
                    })
                    .collect()
            })
            .collect();
        Self { p_fg }
    }

    pub fn p_fg(&self, tree: usize, node: usize) -> f32 {
        self.p_fg[tree][node]
    }

    pub fn set_p_fg(&mut self, tree: usize, node: usize, value: f32) {
        self.p_fg[tree][node] = value.clamp(0.0, 1.0);
    }

    /// Multiplies every leaf probability by `factor`, clamped to [0, 1].
    pub fn scale(&mut self, factor: f32) {
        for t in &mut self.p_fg {
            for v in t {
                *v = (*v * factor).clamp(0.0, 1.0);
            }
        }
    }
}

/// One vote: a leaf mode applied to a scene patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelVote {
    /// Patch center, frame pixels.
    pub pixel: (i32, i32),
    /// Camera-frame 3D point at the patch center.
    pub point: Vector3<f64>,
    pub tree: u32,
    pub leaf: u32,
    pub center: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub weight: f64,
}

/// A sampled patch and the leaf it reached in each voting tree.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutedPatch {
    pub pixel: (i32, i32),
    pub point: Vector3<f64>,
    pub leaves: Vec<(u32, u32)>,
}

/// Image-space vote density. `discarded` holds weight of votes whose center
/// projected outside the frame or behind the camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub discarded: f64,
}

impl Accumulator {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
            discarded: 0.0,
        }
    }

    pub fn add(&mut self, intr: &CameraIntrinsics, center: &Vector3<f64>, weight: f64) {
        match intr.project(center) {
            Ok((u, v, _)) => {
                let (x, y) = (u.round(), v.round());
                if x >= 0.0 && y >= 0.0 && (x as usize) < self.width && (y as usize) < self.height {
                    self.data[y as usize * self.width + x as usize] += weight;
                } else {
                    self.discarded += weight;
                }
            }
            Err(_) => self.discarded += weight,
        }
    }

    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Mass of cells where `mask` is false.
    pub fn mass_outside(&self, mask: &Mask) -> f64 {
        self.data.iter().zip(mask.data()).filter(|(_, m)| !**m).map(|(v, _)| v).sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Separable Gaussian blur, truncated at 3 sigma; borders renormalized.
    pub fn smoothed(&self, sigma: f64) -> Vec<f64> {
        if sigma <= 0.0 {
            return self.data.clone();
        }
        let r = (3.0 * sigma).ceil() as i32;
        let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let (w, h) = (self.width as i32, self.height as i32);
        let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for (j, kv) in k.iter().enumerate() {
                        let o = j as i32 - r;
                        let (sx, sy) = if horizontal { (x + o, y) } else { (x, y + o) };
                        if sx >= 0 && sy >= 0 && sx < w && sy < h {
                            acc += kv * src[(sy * w + sx) as usize];
                            norm += kv;
                        }
                    }
                    out[(y * w + x) as usize] = acc / norm;
                }
            }
            out
        };
        pass(&pass(&self.data, true), false)
    }
}

/// Votes of one round plus what is needed to update leaves afterwards.
#[derive(Clone, Debug)]
pub struct VoteSet {
    pub votes: Vec<PixelVote>,
    pub routed: Vec<RoutedPatch>,
    pub accumulator: Accumulator,
    /// Sum of all vote weights, including discarded ones.
    pub total_weight: f64,
}

/// Routes patches on a stride grid shifted by `jitter` through `trees` and
/// casts each reached leaf's modes. Weight per mode:
/// `p_fg * support / total_support / |trees|`.
pub fn cast_votes(
    map: &SceneFeatureMap,
    model: &ForestModel,
    trees: &[usize],
    state: &LeafState,
    stride: u32,
    jitter: (u32, u32),
) -> VoteSet {
    let intr = *map.intrinsics();
    let (w, h) = (map.width() as i32, map.height() as i32);
    let s = stride.max(1) as i32;
    let rows: Vec<i32> = (jitter.1 as i32..h).step_by(s as usize).collect();
    let bag = trees.len().max(1) as f64;
    let tau_d = model.params.tau_d;
    let per_row: Vec<(Vec<PixelVote>, Vec<RoutedPatch>)> = rows
        .par_iter()
        .map(|&y| {
            let mut votes = Vec::new();
            let mut routed = Vec::new();
            let mut x = jitter.0 as i32;
            while x < w {
                if let (Some(depth), Some(point)) = (map.depth_at(x, y), map.point_at(x, y)) {
                    let to_cam = ray_rotation(&point);
                    let (ox, oy) = map.origin();
                    let pixel = (x + ox, y + oy);
                    let mut leaves = Vec::with_capacity(trees.len());
                    for &t in trees {
                        let node = model.trees[t].route_at_depth(map, x, y, depth, tau_d);
                        leaves.push((t as u32, node as u32));
                        let leaf = model.trees[t].leaf(node);
                        let p = state.p_fg(t, node) as f64;
                        let total = leaf.total_support() as f64;
                        if p == 0.0 || total == 0.0 {
                            continue;
                        }
                        for m in &leaf.modes {
                            votes.push(PixelVote {
                                pixel,
                                point,
                                tree: t as u32,
                                leaf: node as u32,
                                center: point + to_cam * m.offset_vec(),
                                rotation: to_cam * m.rotation_quat(),
                                weight: p * m.support as f64 / total / bag,
                            });
                        }
                    }
                    routed.push(RoutedPatch { pixel, point, leaves });
                }
                x += s;
            }
            (votes, routed)
        })
        .collect();

    let mut accumulator = Accumulator::new(intr.width as usize, intr.height as usize);
    let mut votes = Vec::new();
    let mut routed = Vec::new();
    let mut total_weight = 0.0;
    for (v, r) in per_row {
        for vote in &v {
            accumulator.add(&intr, &vote.center, vote.weight);
            total_weight += vote.weight;
        }
        votes.extend(v);
        routed.extend(r);
    }
    VoteSet {
        votes,
        routed,
        accumulator,
        total_weight,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub pose: Pose6D,
    pub score: f64,
    /// Indices into the round's vote list.
    pub supporters: Vec<usize>,
    pub valid: bool,
    /// Accumulator peak that seeded this hypothesis.
    pub peak: (usize, usize),
}

/// Per-stage bandwidths, in millimeters and radians.
#[derive(Clone, Copy, Debug)]
pub struct LocalizeParams {
    pub top_n: usize,
    pub nms_radius_px: f64,
    pub accumulator_sigma_px: f64,
    pub translation_bandwidth_mm: f64,
    pub rotation_bandwidth_rad: f64,
}

impl LocalizeParams {
    pub fn new(cfg: &InferConfig, diameter: f64) -> Self {
        Self {
            top_n: cfg.top_n,
            nms_radius_px: cfg.nms_radius_px,
            accumulator_sigma_px: cfg.accumulator_sigma_px,
            translation_bandwidth_mm: cfg.translation_bandwidth * diameter,
            rotation_bandwidth_rad: cfg.rotation_bandwidth_deg.to_radians(),
        }
    }
}

/// Three stages: image-space peaks with non-maximum suppression, 3D
/// translation mean-shift seeded at each peak, rotation mean-shift over the
/// translation mode's supporters. Hypotheses are sorted by score and marked
/// invalid; the caller applies the threshold.
pub fn localize(votes: &VoteSet, intr: &CameraIntrinsics, p: &LocalizeParams) -> Vec<Hypothesis> {
    if votes.votes.is_empty() {
        return Vec::new();
    }
    let acc = &votes.accumulator;
    let smooth = acc.smoothed(p.accumulator_sigma_px);
    let (w, h) = (acc.width as i32, acc.height as i32);
    let mut peaks: Vec<(usize, usize, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = smooth[(y * w + x) as usize];
            if v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'n: for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) != (0, 0) && nx >= 0 && ny >= 0 && nx < w && ny < h {
                        let nv = smooth[(ny * w + nx) as usize];
                        // Plateaus keep their first pixel in raster order.
                        if nv > v || (nv == v && (ny, nx) < (y, x)) {
                            is_max = false;
                            break 'n;
                        }
                    }
                }
            }
            if is_max {
                peaks.push((x as usize, y as usize, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));

    let centers: Vec<Vector3<f64>> = votes.votes.iter().map(|v| v.center).collect();
    let weights: Vec<f64> = votes.votes.iter().map(|v| v.weight).collect();
    let bw = p.translation_bandwidth_mm;
    let r2 = p.nms_radius_px * p.nms_radius_px;
    let mut picked: Vec<(usize, usize)> = Vec::new();
    let mut out: Vec<Hypothesis> = Vec::new();
    for &(px, py, _) in &peaks {
        if out.len() >= p.top_n {
            break;
        }
        let d2 = |a: (usize, usize)| (a.0 as f64 - px as f64).powi(2) + (a.1 as f64 - py as f64).powi(2);
        if picked.iter().any(|&q| d2(q) < r2) {
            continue;
        }
        picked.push((px, py));
        for seed in peak_seeds(votes, intr, (px, py), p.nms_radius_px, bw) {
            if out.len() >= p.top_n {
                break;
            }
            // Coarse pass to enter the basin, then the truncated kernel that
            // defines the supporters.
            let Some(coarse) = shift_to_mode(&centers, &weights, seed, bw, 3.0 * bw) else {
                continue;
            };
            let Some(mode) = shift_to_mode(&centers, &weights, coarse, bw, bw) else {
                continue;
            };
            if out.iter().any(|o| (o.pose.translation() - mode).norm() < bw) {
                continue;
            }
            let supporters: Vec<usize> = (0..centers.len()).filter(|&i| (centers[i] - mode).norm() <= bw).collect();
            if supporters.is_empty() {
                continue;
            }
            let qs: Vec<UnitQuaternion<f64>> = supporters.iter().map(|&i| votes.votes[i].rotation).collect();
            let ws: Vec<f64> = supporters.iter().map(|&i| weights[i]).collect();
            let rot = rotation_mode(&qs, &ws, p.rotation_bandwidth_rad, MAX_ROTATION_SEEDS).expect("non-empty");
            // A vote supports the 6D pose only if it also agrees in rotation.
            let supporters: Vec<usize> = supporters
                .into_iter()
                .filter(|&i| quat_angle(&votes.votes[i].rotation, &rot) <= ROTATION_WINDOW * p.rotation_bandwidth_rad)
                .collect();
            if supporters.is_empty() {
                continue;
            }
            let ws: Vec<f64> = supporters.iter().map(|&i| weights[i]).collect();
            out.push(Hypothesis {
                pose: Pose6D::new(rot, mode),
                score: ws.iter().sum(),
                supporters,
                valid: false,
                peak: (px, py),
            });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

/// Stage-2 seeds for one image peak: votes projecting within `radius`
/// pixels are binned by depth at `bin_mm`; each local maximum of the depth
/// histogram (at most `MAX_DEPTH_SEEDS`, strongest first) seeds at the
/// weighted mean of its bin and the two neighbors. Keeps an occluder and the
/// object behind it on the same line of sight apart.
fn peak_seeds(
    votes: &VoteSet,
    intr: &CameraIntrinsics,
    peak: (usize, usize),
    radius: f64,
    bin_mm: f64,
) -> Vec<Vector3<f64>> {
    let mut near: Vec<(i64, &PixelVote)> = Vec::new();
    for v in &votes.votes {
        if let Ok((u, w, z)) = intr.project(&v.center) {
            if (u - peak.0 as f64).powi(2) + (w - peak.1 as f64).powi(2) <= radius * radius {
                near.push(((z / bin_mm).floor() as i64, v));
            }
        }
    }
    let mut hist: std::collections::BTreeMap<i64, f64> = Default::default();
    for (b, v) in &near {
        *hist.entry(*b).or_default() += v.weight;
    }
    let at = |b: i64| hist.get(&b).copied().unwrap_or(0.0);
    let mut maxima: Vec<(i64, f64)> = hist
        .iter()
        .filter(|(&b, &w)| w > 0.0 && w >= at(b - 1) && w > at(b + 1))
        .map(|(&b, &w)| (b, w))
        .collect();
    maxima.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    maxima
        .into_iter()
        .take(MAX_DEPTH_SEEDS)
        .map(|(b, _)| {
            let mut acc = Vector3::zeros();
            let mut total = 0.0;
            for (vb, v) in &near {
                if (vb - b).abs() <= 1 {
                    acc += v.center * v.weight;
                    total += v.weight;
                }
            }
            acc / total
        })
        .collect()
}

/// Binary foreground layer plus a real-valued diagnostic layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundMask {
    pub binary: Mask,
    /// Supporting vote weight per pixel, summed over valid hypotheses.
    pub probability: Vec<f32>,
}

impl ForegroundMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            binary: Mask::new(width, height),
            probability: vec![0.0; width * height],
        }
    }
}

/// Marks the stride cell of every supporter patch of a valid hypothesis whose
/// 3D point lies within `radius_mm` of that hypothesis' center.
pub fn backproject(
    hypotheses: &[Hypothesis],
    votes: &[PixelVote],
    radius_mm: f64,
    width: usize,
    height: usize,
    stride: u32,
) -> ForegroundMask {
    let mut out = ForegroundMask::empty(width, height);
    let half = stride as i32 / 2;
    for hyp in hypotheses.iter().filter(|h| h.valid) {
        let c = hyp.pose.translation();
        for &i in &hyp.supporters {
            let v = &votes[i];
            if (v.point - c).norm() > radius_mm {
                continue;
            }
            for y in v.pixel.1 - half..v.pixel.1 - half + stride as i32 {
                for x in v.pixel.0 - half..v.pixel.0 - half + stride as i32 {
                    if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                        out.binary.set(x as usize, y as usize, true);
                        out.probability[y as usize * width + x as usize] += v.weight as f32;
                    }
                }
            }
        }
    }
    out
}

/// Sets each touched leaf of `trees` to the foreground fraction of the
/// patches that reached it. Returns `(touched, touched_with_zero)`.
pub fn update_leaves(state: &mut LeafState, routed: &[RoutedPatch], mask: &Mask, trees: &[usize]) -> (usize, usize) {
    let mut tally: std::collections::BTreeMap<(u32, u32), (u32, u32)> = Default::default();
    for r in routed {
        let fg = mask.get(r.pixel.0, r.pixel.1) as u32;
        for &(t, leaf) in &r.leaves {
            if trees.contains(&(t as usize)) {
                let e = tally.entry((t, leaf)).or_default();
                e.0 += fg;
                e.1 += 1;
            }
        }
    }
    let mut zeros = 0;
    for (&(t, leaf), &(fg, total)) in &tally {
        let p = fg as f32 / total as f32;
        if fg == 0 {
            zeros += 1;
        }
        state.set_p_fg(t as usize, leaf as usize, p);
    }
    (tally.len(), zeros)
}

/// Union over valid hypotheses of (projected bounding box of the
/// diameter-sized sphere at the center) intersected with the foreground mask.
pub fn segment(hypotheses: &[Hypothesis], foreground: &Mask, intr: &CameraIntrinsics, diameter: f64) -> Mask {
    let (w, h) = (foreground.width(), foreground.height());
    let mut boxes = Mask::new(w, h);
    for hyp in hypotheses.iter().filter(|h| h.valid) {
        let c = hyp.pose.translation();
        let Ok((u, v, z)) = intr.project(c) else { continue };
        let r = diameter / 2.0;
        let (rx, ry) = (intr.fx * r / (z - r).max(1.0), intr.fy * r / (z - r).max(1.0));
        let x0 = (u - rx).floor().max(0.0) as usize;
        let y0 = (v - ry).floor().max(0.0) as usize;
        let x1 = ((u + rx).ceil().max(0.0) as usize).min(w);
        let y1 = ((v + ry).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                boxes.set(x, y, true);
            }
        }
    }
    boxes.and(foreground)
}

/// Summary of one voting round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSummary {
    pub trees: Vec<usize>,
    pub vote_count: usize,
    pub valid_hypotheses: usize,
    pub best_score: f64,
    pub accumulator_mass: f64,
}

#[derive(Clone, Debug)]
pub struct Detection {
    pub hypotheses: Vec<Hypothesis>,
    /// Votes of the round that produced `hypotheses`.
    pub votes: Vec<PixelVote>,
    pub foreground: ForegroundMask,
    pub segmentation: Mask,
    pub accumulator: Accumulator,
    pub theta_valid: f64,
    pub rounds: Vec<RoundSummary>,
    /// The update loop stopped because every touched leaf fell to zero.
    pub diverged: bool,
}

struct RoundResult {
    votes: VoteSet,
    hypotheses: Vec<Hypothesis>,
    foreground: ForegroundMask,
}

fn run_round(
    map: &SceneFeatureMap,
    model: &ForestModel,
    trees: &[usize],
    state: &LeafState,
    cfg: &InferConfig,
    theta: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> (RoundResult, f64) {
    let s = cfg.patch_stride.max(1);
    let jitter = (rng.random_range(0..s), rng.random_range(0..s));
    let votes = cast_votes(map, model, trees, state, s, jitter);
    let intr = map.intrinsics();
    let mut hypotheses = localize(&votes, intr, &LocalizeParams::new(cfg, model.diameter));
    let best = hypotheses.first().map_or(0.0, |h| h.score);
    let theta = theta.unwrap_or(cfg.theta_valid_fraction * best);
    for h in &mut hypotheses {
        h.valid = h.score > theta;
    }
    let foreground = backproject(
        &hypotheses,
        &votes.votes,
        cfg.consistency_radius * model.diameter,
        map.width(),
        map.height(),
        s,
    );
    (
        RoundResult {
            votes,
            hypotheses,
            foreground,
        },
        theta,
    )
}

fn summary(r: &RoundResult, trees: &[usize]) -> RoundSummary {
    RoundSummary {
        trees: trees.to_vec(),
        vote_count: r.votes.votes.len(),
        valid_hypotheses: r.hypotheses.iter().filter(|h| h.valid).count(),
        best_score: r.hypotheses.first().map_or(0.0, |h| h.score),
        accumulator_mass: r.votes.accumulator.mass(),
    }
}

/// Full detection on one frame with fresh leaf state.
///
/// Round 0 votes with the whole forest and fixes the validity threshold.
/// Each of the `iterations` update rounds draws a bag of trees, votes with it,
/// backprojects and re-weights the bag's leaves. A final whole-forest round
/// on the updated state gives the returned hypotheses and masks.
pub fn detect(frame: &RgbdFrame, model: &ForestModel, cfg: &InferConfig) -> Result<Detection> {
    let map = extract_orientations(frame, &model.params)?;
    detect_on_map(&map, model, cfg)
}

pub fn detect_on_map(map: &SceneFeatureMap, model: &ForestModel, cfg: &InferConfig) -> Result<Detection> {
    let n_trees = model.trees.len();
    if n_trees == 0 {
        return Err(Error::IncompatibleModel("model has no trees".into()));
    }
    cfg.validate(n_trees)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = LeafState::new(model);
    let all: Vec<usize> = (0..n_trees).collect();
    let mut rounds = Vec::new();

    let (first, theta) = run_round(map, model, &all, &state, cfg, cfg.theta_valid, &mut rng);
    rounds.push(summary(&first, &all));
    if cfg.iterations == 0 {
        return Ok(finish(first, map, model, theta, rounds, false));
    }

    let bag_size = cfg.resolved_bag_size(n_trees);
    let mut diverged = false;
    for _ in 0..cfg.iterations {
        let mut bag: Vec<usize> = sample(&mut rng, n_trees, bag_size).into_vec();
        bag.sort_unstable();
        let (round, _) = run_round(map, model, &bag, &state, cfg, Some(theta), &mut rng);
        rounds.push(summary(&round, &bag));
        let (touched, zeros) = update_leaves(&mut state, &round.votes.routed, &round.foreground.binary, &bag);
        if touched > 0 && zeros == touched {
            diverged = true;
            break;
        }
    }
    if diverged {
        return Ok(finish(first, map, model, theta, rounds, true));
    }
    let (last, _) = run_round(map, model, &all, &state, cfg, Some(theta), &mut rng);
    rounds.push(summary(&last, &all));
    Ok(finish(last, map, model, theta, rounds, false))
}

fn finish(
    r: RoundResult,
    map: &SceneFeatureMap,
    model: &ForestModel,
    theta: f64,
    rounds: Vec<RoundSummary>,
    diverged: bool,
) -> Detection {
    let segmentation = segment(&r.hypotheses, &r.foreground.binary, map.intrinsics(), model.diameter);
    Detection {
        hypotheses: r.hypotheses,
        votes: r.votes.votes,
        foreground: r.foreground,
        segmentation,
        accumulator: r.votes.accumulator,
        theta_valid: theta,
        rounds,
        diverged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(pixel: (i32, i32), point: Vector3<f64>, center: Vector3<f64>, weight: f64) -> PixelVote {
        PixelVote {
            pixel,
            point,
            tree: 0,
            leaf: 0,
            center,
            rotation: UnitQuaternion::identity(),
            weight,
        }
    }

    fn vote_set(votes: Vec<PixelVote>, intr: &CameraIntrinsics) -> VoteSet {
        let mut accumulator = Accumulator::new(intr.width as usize, intr.height as usize);
        let mut total_weight = 0.0;
        for v in &votes {
            accumulator.add(intr, &v.center, v.weight);
            total_weight += v.weight;
        }
        VoteSet {
            votes,
            routed: vec![],
            accumulator,
            total_weight,
        }
    }

    fn params(top_n: usize) -> LocalizeParams {
        LocalizeParams {
            top_n,
            nms_radius_px: 10.0,
            accumulator_sigma_px: 2.0,
            translation_bandwidth_mm: 20.0,
            rotation_bandwidth_rad: 0.26,
        }
    }

    #[test]
    fn coincident_votes_localize_exactly() {
        let intr = CameraIntrinsics::qvga();
        let c = Vector3::new(30.0, -20.0, 900.0);
        let votes: Vec<_> = (0..5).map(|i| vote((i, 0), c, c, 0.5)).collect();
        let hyps = localize(&vote_set(votes, &intr), &intr, &params(10));
        assert_eq!(hyps.len(), 1);
        assert_eq!(*hyps[0].pose.translation(), c);
        assert!((hyps[0].score - 2.5).abs() < 1e-12);
        assert_eq!(hyps[0].supporters.len(), 5);
    }

    #[test]
    fn two_clusters_give_two_hypotheses_and_top_one_limits() {
        let intr = CameraIntrinsics::qvga();
        let a = Vector3::new(-200.0, 0.0, 1000.0);
        let b = Vector3::new(200.0, 0.0, 1000.0);
        let mut votes: Vec<_> = (0..10).map(|i| vote((0, i), a, a + Vector3::new(i as f64, 0.0, 0.0), 1.0)).collect();
        votes.extend((0..6).map(|i| vote((1, i), b, b + Vector3::new(0.0, i as f64, 0.0), 1.0)));
        let set = vote_set(votes, &intr);
        let hyps = localize(&set, &intr, &params(10));
        assert_eq!(hyps.len(), 2);
        assert!((hyps[0].pose.translation() - (a + Vector3::new(4.5, 0.0, 0.0))).norm() < 1.0);
        assert!((hyps[1].pose.translation() - (b + Vector3::new(0.0, 2.5, 0.0))).norm() < 1.0);
        for h in &hyps {
            let s: f64 = h.supporters.iter().map(|&i| set.votes[i].weight).sum();
            assert!((s - h.score).abs() < 1e-6);
        }
        assert_eq!(localize(&set, &intr, &params(1)).len(), 1);
    }

    #[test]
    fn accumulator_mass_is_conserved() {
        let intr = CameraIntrinsics::qvga();
        let votes = vec![
            vote((0, 0), Vector3::zeros(), Vector3::new(0.0, 0.0, 1000.0), 0.25),
            vote((0, 0), Vector3::zeros(), Vector3::new(5000.0, 0.0, 1000.0), 0.5),
            vote((0, 0), Vector3::zeros(), Vector3::new(0.0, 0.0, -10.0), 0.125),
        ];
        let set = vote_set(votes, &intr);
        assert!((set.accumulator.mass() + set.accumulator.discarded - set.total_weight).abs() < 1e-12);
        assert_eq!(set.accumulator.discarded, 0.625);
    }

    #[test]
    fn backprojection_rules() {
        let c = Vector3::new(0.0, 0.0, 1000.0);
        let votes = vec![
            vote((10, 10), c + Vector3::new(50.0, 0.0, 0.0), c, 1.0),
            vote((30, 10), c + Vector3::new(400.0, 0.0, 0.0), c, 1.0),
        ];
        let mut h = Hypothesis {
            pose: Pose6D::from_translation(c),
            score: 2.0,
            supporters: vec![0, 1],
            valid: false,
            peak: (0, 0),
        };
        assert!(backproject(&[h.clone()], &votes, 200.0, 64, 64, 4).binary.is_empty());
        h.valid = true;
        let m = backproject(&[h.clone()], &votes, 200.0, 64, 64, 4);
        assert_eq!(m.binary.count(), 16);
        assert!(m.binary.get(10, 10) && !m.binary.get(30, 10));
        // Adding a hypothesis never clears a pixel.
        let mut other = h.clone();
        other.pose = Pose6D::from_translation(c + Vector3::new(400.0, 0.0, 0.0));
        other.supporters = vec![1];
        let both = backproject(&[h, other], &votes, 200.0, 64, 64, 4);
        assert_eq!(both.binary.and(&m.binary), m.binary);
        assert_eq!(both.binary.count(), 32);
    }

    #[test]
    fn leaf_update_arithmetic() {
        use crate::features::PatchTemplate;
        use crate::forest::{Leaf, Node, Tree};
        let leaf = || {
            Node::Leaf(Leaf {
                patch_indices: vec![],
                modes: vec![],
                p_fg: 1.0,
            })
        };
        let split = Node::Split {
            template: PatchTemplate {
                features: vec![],
                center_depth: 1000.0,
                vote_offset: [0.0; 3],
                vote_rotation: [1.0, 0.0, 0.0, 0.0],
                source_view: 0,
            },
            threshold: 0.0,
            left: 1,
            right: 2,
        };
        let tree = Tree::from_nodes(vec![split, leaf(), leaf()]).unwrap();
        let model = ForestModel {
            object_id: "t".into(),
            diameter: 100.0,
            params: Default::default(),
            config: Default::default(),
            trees: vec![tree.clone(), tree],
        };
        let mut state = LeafState::new(&model);
        assert_eq!(state.p_fg(0, 1), 1.0);
        let mut mask = Mask::new(8, 8);
        let mut routed = Vec::new();
        for i in 0..4 {
            if i < 3 {
                mask.set(i, 0, true);
            }
            routed.push(RoutedPatch {
                pixel: (i as i32, 0),
                point: Vector3::zeros(),
                leaves: vec![(0, 1), (1, 1)],
            });
        }
        let (touched, zeros) = update_leaves(&mut state, &routed, &mask, &[0]);
        assert_eq!((touched, zeros), (1, 0));
        assert_eq!(state.p_fg(0, 1), 0.75);
        assert_eq!(state.p_fg(0, 2), 1.0);
        // Trees outside the bag are left alone.
        assert_eq!(state.p_fg(1, 1), 1.0);
    }

    #[test]
    fn segmentation_is_box_intersect_foreground() {
        let intr = CameraIntrinsics::qvga();
        let mut fg = Mask::new(320, 240);
        fg.set(160, 120, true);
        fg.set(5, 5, true);
        let h = Hypothesis {
            pose: Pose6D::from_translation(Vector3::new(0.0, 0.0, 1000.0)),
            score: 1.0,
            supporters: vec![],
            valid: true,
            peak: (160, 120),
        };
        let m = segment(&[h], &fg, &intr, 100.0);
        assert_eq!(m.count(), 1);
        assert!(m.get(160, 120));
    }
}
