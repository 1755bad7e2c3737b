//! One-class Hough forest training and routing.
//!
//! Split nodes hold a patch template and a similarity threshold; a patch goes
//! left when its template similarity is at most the threshold. Leaves keep the
//! training patch ids that reached them plus mean-shift modes of their votes.

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    build_template, extract_orientations, quat_to_array, similarity_at_depth, DescriptorParams, PatchTemplate,
    SceneFeatureMap, TemplateSource,
};
use crate::meanshift::{cluster_modes, rotation_mode};
use crate::synth::RenderedView;

/// Margin around the body bounding box kept in training feature maps, pixels.
const CROP_MARGIN: i32 = 3;
const MAX_MODE_SEEDS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tree_count: usize,
    /// Patch side as a fraction of the projected bounding-box side.
    pub patch_size_fraction: f64,
    pub max_depth: usize,
    pub min_samples: usize,
    /// Candidate templates drawn per node.
    pub candidate_templates: usize,
    pub thresholds_per_template: usize,
    /// Fraction of all patches given to each tree, drawn without replacement.
    pub sample_fraction: f64,
    pub patches_per_view: usize,
    pub features_per_template: usize,
    /// Leaf translation bandwidth as a fraction of the object diameter.
    pub translation_bandwidth: f64,
    pub rotation_bandwidth_deg: f64,
    pub max_leaf_modes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tree_count: 10,
            patch_size_fraction: 2.0 / 3.0,
            max_depth: 20,
            min_samples: 20,
            candidate_templates: 20,
            thresholds_per_template: 10,
            sample_fraction: 0.5,
            patches_per_view: 16,
            features_per_template: 20,
            translation_bandwidth: 0.1,
            rotation_bandwidth_deg: 15.0,
            max_leaf_modes: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tree_count > 0
            && self.patch_size_fraction > 0.0
            && self.patch_size_fraction <= 1.0
            && self.min_samples > 0
            && self.candidate_templates > 0
            && self.thresholds_per_template > 0
            && self.sample_fraction > 0.0
            && self.sample_fraction <= 1.0
            && self.patches_per_view > 0
            && self.features_per_template > 0
            && self.translation_bandwidth > 0.0
            && self.rotation_bandwidth_deg > 0.0
            && self.max_leaf_modes > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("training parameters must be positive and fractions in (0, 1]".into()))
        }
    }
}

/// A leaf vote: offset and rotation in the patch-ray frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoteMode {
    pub offset: [f32; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f32; 4],
    pub support: u32,
}

impl VoteMode {
    pub fn offset_vec(&self) -> Vector3<f64> {
        Vector3::new(self.offset[0] as f64, self.offset[1] as f64, self.offset[2] as f64)
    }

    pub fn rotation_quat(&self) -> UnitQuaternion<f64> {
        crate::features::quat_from_array(self.rotation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Leaf {
    pub patch_indices: Vec<u32>,
    pub modes: Vec<VoteMode>,
    /// Trained value; always 1 after one-class training.
    pub p_fg: f32,
}

impl Leaf {
    pub fn total_support(&self) -> u32 {
        self.modes.iter().map(|m| m.support).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split {
        template: PatchTemplate,
        threshold: f32,
        left: u32,
        right: u32,
    },
    Leaf(Leaf),
}

/// A tree stored in preorder; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Checks that child links point forward and every node is reachable once.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::CorruptModel("empty tree".into()));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if seen[i] {
                return Err(Error::CorruptModel("node reached twice".into()));
            }
            seen[i] = true;
            if let Node::Split { left, right, .. } = &nodes[i] {
                for c in [*left as usize, *right as usize] {
                    if c <= i || c >= nodes.len() {
                        return Err(Error::CorruptModel(format!("bad child link {c} at node {i}")));
                    }
                    stack.push(c);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::CorruptModel("unreachable node".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf at node index `i`. Panics if `i` is a split.
    pub fn leaf(&self, i: usize) -> &Leaf {
        match &self.nodes[i] {
            Node::Leaf(l) => l,
            Node::Split { .. } => panic!("node {i} is not a leaf"),
        }
    }

    pub fn leaf_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| matches!(n, Node::Leaf(_)).then_some(i))
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_indices().count()
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Routes the patch centered at local pixel `(x, y)`; returns the leaf's node index.
    pub fn route(&self, map: &SceneFeatureMap, x: i32, y: i32, tau_d: f32) -> Result<usize> {
        let depth = map.depth_at(x, y).ok_or(Error::InvalidCenterDepth)?;
        Ok(self.route_at_depth(map, x, y, depth, tau_d))
    }

    pub(crate) fn route_at_depth(&self, map: &SceneFeatureMap, x: i32, y: i32, depth: f32, tau_d: f32) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(_) => return i,
                Node::Split {
                    template,
                    threshold,
                    left,
                    right,
                } => {
                    let s = similarity_at_depth(map, x, y, depth, template, tau_d);
                    i = if s <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }
}

/// A trained single-object forest. Immutable; per-frame leaf probabilities
/// live in the inference state.
#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    pub object_id: String,
    /// Object diameter, millimeters.
    pub diameter: f64,
    pub params: DescriptorParams,
    pub config: TrainConfig,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn route(&self, tree: usize, map: &SceneFeatureMap, x: i32, y: i32) -> Result<usize> {
        self.trees[tree].route(map, x, y, self.params.tau_d)
    }

    /// Mean over split nodes of the fraction of samples sent to the smaller
    /// child. `None` if no tree has a split.
    pub fn balance(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for tree in &self.trees {
            let sizes = subtree_sample_counts(tree);
            for (i, n) in tree.nodes.iter().enumerate() {
                if let Node::Split { left, right, .. } = n {
                    let (l, r) = (sizes[*left as usize], sizes[*right as usize]);
                    sum += l.min(r) as f64 / (l + r) as f64;
                    count += 1;
                    debug_assert_eq!(l + r, sizes[i]);
                }
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}

fn subtree_sample_counts(tree: &Tree) -> Vec<usize> {
    let mut sizes = vec![0usize; tree.nodes.len()];
    for i in (0..tree.nodes.len()).rev() {
        sizes[i] = match &tree.nodes[i] {
            Node::Leaf(l) => l.patch_indices.len(),
            Node::Split { left, right, .. } => sizes[*left as usize] + sizes[*right as usize],
        };
    }
    sizes
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPatch {
    pub template: PatchTemplate,
    /// Index into `TrainingSet::maps`.
    pub view: u32,
    /// Center, local to the view's map.
    pub center: (i32, i32),
}

/// Cropped feature maps of the training views and the patches cut from them.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub maps: Vec<SceneFeatureMap>,
    pub patches: Vec<TrainingPatch>,
}

/// Patch side in pixels for a body of the given bounding box.
pub fn patch_side(bbox_w: usize, bbox_h: usize, fraction: f64) -> u32 {
    ((bbox_w.max(bbox_h) as f64 * fraction).round() as u32).max(3)
}

/// Extracts features from each view and samples patches centered on the body.
pub fn sample_patches(views: &[RenderedView], params: &DescriptorParams, cfg: &TrainConfig) -> Result<TrainingSet> {
    cfg.validate()?;
    let per_view: Vec<Result<(SceneFeatureMap, Vec<TrainingPatch>)>> = views
        .par_iter()
        .enumerate()
        .map(|(vi, view)| sample_view(vi, view, params, cfg))
        .collect();
    let mut maps = Vec::with_capacity(views.len());
    let mut patches = Vec::new();
    for r in per_view {
        let (map, p) = r?;
        maps.push(map);
        patches.extend(p);
    }
    if patches.is_empty() {
        return Err(Error::NoValidPatches);
    }
    Ok(TrainingSet { maps, patches })
}

fn sample_view(
    vi: usize,
    view: &RenderedView,
    params: &DescriptorParams,
    cfg: &TrainConfig,
) -> Result<(SceneFeatureMap, Vec<TrainingPatch>)> {
    let full = extract_orientations(&view.frame, params)?;
    let (bx0, by0, bx1, by1) = view.body.bbox().ok_or(Error::ObjectOutOfView)?;
    let x0 = bx0 as i32 - CROP_MARGIN;
    let y0 = by0 as i32 - CROP_MARGIN;
    let w = (bx1 - bx0 + 1) + 2 * CROP_MARGIN as usize;
    let h = (by1 - by0 + 1) + 2 * CROP_MARGIN as usize;
    let map = full.crop(x0, y0, w, h);
    let (ox, oy) = map.origin();
    let body = view.body.crop(ox, oy, map.width(), map.height());
    let contour = view.contour.crop(ox, oy, map.width(), map.height());
    let side = patch_side(bx1 - bx0 + 1, by1 - by0 + 1, cfg.patch_size_fraction);

    let mut candidates = Vec::new();
    for y in 0..map.height() as i32 {
        for x in 0..map.width() as i32 {
            if body.get(x, y) && map.depth_at(x, y).is_some() {
                candidates.push((x, y));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(vi as u64);
    let src = TemplateSource {
        map: &map,
        body: &body,
        contour: &contour,
        view_id: vi as u32,
    };
    let center = view.object_pose.translation();
    let rotation = view.object_pose.rotation();
    let mut patches = Vec::new();
    let mut attempts = 0;
    while patches.len() < cfg.patches_per_view && attempts < 4 * cfg.patches_per_view && !candidates.is_empty() {
        attempts += 1;
        let c = candidates[rng.random_range(0..candidates.len())];
        match build_template(&src, c, side, center, rotation, cfg.features_per_template) {
            Ok(template) => patches.push(TrainingPatch {
                template,
                view: vi as u32,
                center: c,
            }),
            Err(Error::TooFewFeatures(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((map, patches))
}

/// Samples patches from rendered views and trains a forest on them.
pub fn train_on_views(
    views: &[RenderedView],
    object_id: &str,
    diameter: f64,
    params: &DescriptorParams,
    cfg: &TrainConfig,
) -> Result<ForestModel> {
    let set = sample_patches(views, params, cfg)?;
    train_forest(&set, object_id, diameter, params, cfg)
}

/// Trains every tree in parallel; tree `t` uses its own seeded stream.
pub fn train_forest(
    set: &TrainingSet,
    object_id: &str,
    diameter: f64,
    params: &DescriptorParams,
    cfg: &TrainConfig,
) -> Result<ForestModel> {
    cfg.validate()?;
    let n = set.patches.len();
    let per_tree = ((n as f64 * cfg.sample_fraction).round() as usize).clamp(1, n);
    let trees: Vec<Result<Tree>> = (0..cfg.tree_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1 << 32 | t as u64);
            let mut idx: Vec<u32> = sample(&mut rng, n, per_tree).into_iter().map(|i| i as u32).collect();
            idx.sort_unstable();
            train_tree(set, idx, params, cfg, diameter, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        object_id: object_id.to_string(),
        diameter,
        params: *params,
        config: cfg.clone(),
        trees: trees.into_iter().collect::<Result<_>>()?,
    })
}

/// Grows one tree on the given patch ids.
pub fn train_tree(
    set: &TrainingSet,
    indices: Vec<u32>,
    params: &DescriptorParams,
    cfg: &TrainConfig,
    diameter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tree> {
    if indices.len() < cfg.min_samples {
        return Err(Error::TooFewSamples {
            got: indices.len(),
            need: cfg.min_samples,
        });
    }
    let mut builder = TreeBuilder {
        set,
        params,
        cfg,
        diameter,
        offsets: set.patches.iter().map(|p| p.template.vote_offset_vec()).collect(),
        nodes: Vec::new(),
        rng,
    };
    builder.grow(indices, 0);
    Ok(Tree { nodes: builder.nodes })
}

struct TreeBuilder<'a, 'r> {
    set: &'a TrainingSet,
    params: &'a DescriptorParams,
    cfg: &'a TrainConfig,
    diameter: f64,
    offsets: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    rng: &'r mut ChaCha8Rng,
}

struct SplitChoice {
    template: u32,
    threshold: f32,
    gain: f64,
    values: Vec<f32>,
}

impl TreeBuilder<'_, '_> {
    fn grow(&mut self, idx: Vec<u32>, depth: usize) -> u32 {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(Leaf {
            patch_indices: Vec::new(),
            modes: Vec::new(),
            p_fg: 1.0,
        }));
        let split = if depth < self.cfg.max_depth && idx.len() >= self.cfg.min_samples {
            self.best_split(&idx)
        } else {
            None
        };
        match split {
            None => {
                self.nodes[id] = Node::Leaf(make_leaf(self.set, idx, self.cfg, self.diameter));
            }
            Some(choice) => {
                let (mut l, mut r) = (Vec::new(), Vec::new());
                for (&i, &v) in idx.iter().zip(&choice.values) {
                    if v <= choice.threshold {
                        l.push(i)
                    } else {
                        r.push(i)
                    }
                }
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    template: self.set.patches[choice.template as usize].template.clone(),
                    threshold: choice.threshold,
                    left,
                    right,
                };
            }
        }
        id as u32
    }

    fn best_split(&mut self, idx: &[u32]) -> Option<SplitChoice> {
        let n = idx.len();
        let parent_trace = trace_cov(idx.iter().map(|&i| &self.offsets[i as usize]));
        let min_gain = 1e-12 * parent_trace.max(1.0);
        let mut best: Option<SplitChoice> = None;
        for _ in 0..self.cfg.candidate_templates {
            let t = idx[self.rng.random_range(0..n)];
            let template = &self.set.patches[t as usize].template;
            let values: Vec<f32> = idx
                .iter()
                .map(|&i| {
                    let p = &self.set.patches[i as usize];
                    similarity_at_depth(
                        &self.set.maps[p.view as usize],
                        p.center.0,
                        p.center.1,
                        p.template.center_depth,
                        template,
                        self.params.tau_d,
                    )
                })
                .collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let sorted: Vec<f32> = order.iter().map(|&o| values[o]).collect();
            // Prefix sums of offsets and squared norms in sorted order.
            let mut sum = Vec::with_capacity(n + 1);
            let mut sq = Vec::with_capacity(n + 1);
            sum.push(Vector3::zeros());
            sq.push(0.0);
            for &o in &order {
                let v = &self.offsets[idx[o] as usize];
                sum.push(sum.last().unwrap() + v);
                sq.push(sq.last().unwrap() + v.norm_squared());
            }
            let total_sum = sum[n];
            let total_sq = sq[n];
            let k = self.cfg.thresholds_per_template;
            for j in 1..=k {
                let tau = sorted[j * n / (k + 1)];
                let nl = sorted.partition_point(|&v| v <= tau);
                if nl == 0 || nl == n {
                    continue;
                }
                // Midway to the next distinct value, so small perturbations keep the side.
                let tau = 0.5 * (tau + sorted[nl]);
                let nr = n - nl;
                let tr_l = sq[nl] / nl as f64 - (sum[nl] / nl as f64).norm_squared();
                let rs = total_sum - sum[nl];
                let tr_r = (total_sq - sq[nl]) / nr as f64 - (rs / nr as f64).norm_squared();
                let gain = parent_trace - (nl as f64 * tr_l + nr as f64 * tr_r) / n as f64;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        template: t,
                        threshold: tau,
                        gain,
                        values: values.clone(),
                    });
                }
            }
        }
        best
    }
}

/// Trace of the covariance of a set of offsets.
pub fn trace_cov<'a>(points: impl Iterator<Item = &'a Vector3<f64>>) -> f64 {
    let mut n = 0usize;
    let mut sum = Vector3::zeros();
    let mut sq = 0.0;
    for p in points {
        n += 1;
        sum += p;
        sq += p.norm_squared();
    }
    if n == 0 {
        return 0.0;
    }
    (sq / n as f64 - (sum / n as f64).norm_squared()).max(0.0)
}

/// Builds a leaf: translation modes of the patch votes, then one rotation
/// mode per translation mode over that mode's members.
pub fn make_leaf(set: &TrainingSet, patch_indices: Vec<u32>, cfg: &TrainConfig, diameter: f64) -> Leaf {
    let offsets: Vec<Vector3<f64>> = patch_indices
        .iter()
        .map(|&i| set.patches[i as usize].template.vote_offset_vec())
        .collect();
    let rotations: Vec<UnitQuaternion<f64>> = patch_indices
        .iter()
        .map(|&i| set.patches[i as usize].template.vote_rotation_quat())
        .collect();
    let modes = leaf_modes(&offsets, &rotations, cfg, diameter);
    Leaf {
        patch_indices,
        modes,
        p_fg: 1.0,
    }
}

pub(crate) fn leaf_modes(
    offsets: &[Vector3<f64>],
    rotations: &[UnitQuaternion<f64>],
    cfg: &TrainConfig,
    diameter: f64,
) -> Vec<VoteMode> {
    let h = cfg.translation_bandwidth * diameter;
    let sigma_r = cfg.rotation_bandwidth_deg.to_radians();
    cluster_modes(offsets, h, MAX_MODE_SEEDS)
        .into_iter()
        .take(cfg.max_leaf_modes)
        .map(|m| {
            let qs: Vec<_> = m.members.iter().map(|&i| rotations[i]).collect();
            let rot = rotation_mode(&qs, &vec![1.0; qs.len()], sigma_r, MAX_MODE_SEEDS).expect("non-empty mode");
            VoteMode {
                offset: [m.center.x as f32, m.center.y as f32, m.center.z as f32],
                rotation: quat_to_array(&rot),
                support: m.members.len() as u32,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose6D};
    use crate::synth::{render_view, ParametricShape};

    fn views(poses: &[Pose6D], shape: &ParametricShape) -> Vec<RenderedView> {
        let intr = CameraIntrinsics::qvga();
        poses.iter().map(|p| render_view(shape, p, &intr).unwrap()).collect()
    }

    fn demo_set(cfg: &TrainConfig) -> TrainingSet {
        let shape = ParametricShape::compound_demo();
        let poses: Vec<Pose6D> = (0..6)
            .map(|i| Pose6D::from_euler(Vector3::new(0.0, 0.0, 900.0), 0.3 * i as f64, 0.2 * i as f64, 0.5))
            .collect();
        sample_patches(&views(&poses, &shape), &DescriptorParams::default(), cfg).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            tree_count: 2,
            max_depth: 6,
            min_samples: 6,
            patches_per_view: 12,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn patches_follow_view_geometry() {
        let shape = ParametricShape::Sphere { radius: 80.0, albedo: [0.6; 3] };
        let cfg = TrainConfig {
            patches_per_view: 20,
            ..TrainConfig::default()
        };
        let near = Pose6D::from_translation(Vector3::new(0.0, 0.0, 900.0));
        let set = sample_patches(&views(&[near], &shape), &DescriptorParams::default(), &cfg).unwrap();
        assert!(!set.patches.is_empty());
        for p in &set.patches {
            // Center depth quantization adds at most 1 mm.
            assert!(p.template.vote_offset_vec().norm() <= 80.0 + 1.0);
        }
    }

    #[test]
    fn antipodal_views_vote_opposite_rotations() {
        let shape = ParametricShape::compound_demo();
        let a = Pose6D::from_euler(Vector3::new(0.0, 0.0, 900.0), 0.0, 0.0, 0.0);
        let b = Pose6D::from_euler(Vector3::new(0.0, 0.0, 900.0), 0.0, std::f64::consts::PI, 0.0);
        let cfg = TrainConfig {
            patches_per_view: 4,
            ..TrainConfig::default()
        };
        let set = sample_patches(&views(&[a, b], &shape), &DescriptorParams::default(), &cfg).unwrap();
        let ra = set.patches.iter().find(|p| p.view == 0).unwrap().template.vote_rotation_quat();
        let rb = set.patches.iter().find(|p| p.view == 1).unwrap().template.vote_rotation_quat();
        // Ray frames differ slightly per patch; the object rotations are 180 deg apart.
        assert!((crate::meanshift::quat_angle(&ra, &rb).to_degrees() - 180.0).abs() < 15.0);
    }

    #[test]
    fn identical_votes_make_a_single_leaf() {
        let mut set = demo_set(&small_cfg());
        for p in &mut set.patches {
            p.template.vote_offset = [1.0, 2.0, 3.0];
            p.template.vote_rotation = [1.0, 0.0, 0.0, 0.0];
        }
        let idx: Vec<u32> = (0..set.patches.len() as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = train_tree(&set, idx.clone(), &DescriptorParams::default(), &small_cfg(), 170.0, &mut rng).unwrap();
        assert_eq!(tree.len(), 1);
        let leaf = tree.leaf(0);
        assert_eq!(leaf.modes.len(), 1);
        assert_eq!(leaf.modes[0].offset, [1.0, 2.0, 3.0]);
        assert_eq!(leaf.modes[0].support as usize, idx.len());
    }

    #[test]
    fn max_depth_zero_gives_one_leaf_with_everything() {
        let cfg = TrainConfig {
            max_depth: 0,
            ..small_cfg()
        };
        let set = demo_set(&cfg);
        let idx: Vec<u32> = (0..set.patches.len() as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = train_tree(&set, idx.clone(), &DescriptorParams::default(), &cfg, 170.0, &mut rng).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree.leaf(0).patch_indices, idx);
        assert_eq!(tree.leaf(0).p_fg, 1.0);
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let set = demo_set(&small_cfg());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = train_tree(&set, vec![0, 1], &DescriptorParams::default(), &small_cfg(), 170.0, &mut rng);
        assert!(matches!(r, Err(Error::TooFewSamples { got: 2, need: 6 })));
    }

    #[test]
    fn appearance_separable_offsets_split_at_depth_one() {
        // Two views of different objects whose votes differ by 500 mm.
        let box_shape = ParametricShape::Box { size: [120.0, 80.0, 60.0], albedo: [0.8, 0.3, 0.2] };
        let ball = ParametricShape::Sphere { radius: 60.0, albedo: [0.2, 0.4, 0.9] };
        let pose = Pose6D::from_euler(Vector3::new(0.0, 0.0, 900.0), 0.2, 0.3, 0.1);
        let mut v = views(&[pose], &box_shape);
        v.extend(views(&[pose], &ball));
        let cfg = TrainConfig {
            patches_per_view: 30,
            min_samples: 4,
            max_depth: 1,
            ..TrainConfig::default()
        };
        let mut set = sample_patches(&v, &DescriptorParams::default(), &cfg).unwrap();
        for p in &mut set.patches {
            if p.view == 1 {
                p.template.vote_offset[0] += 500.0;
            }
        }
        let idx: Vec<u32> = (0..set.patches.len() as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = train_tree(&set, idx.clone(), &DescriptorParams::default(), &cfg, 170.0, &mut rng).unwrap();
        assert_eq!(tree.depth(), 1);
        let offsets: Vec<Vector3<f64>> = set.patches.iter().map(|p| p.template.vote_offset_vec()).collect();
        let parent = trace_cov(idx.iter().map(|&i| &offsets[i as usize]));
        for leaf in tree.leaf_indices() {
            let child = trace_cov(tree.leaf(leaf).patch_indices.iter().map(|&i| &offsets[i as usize]));
            assert!(child < parent, "{child} vs {parent}");
        }
    }

    #[test]
    fn trained_patches_reach_their_own_leaves_deterministically() {
        let cfg = small_cfg();
        let set = demo_set(&cfg);
        let model = train_forest(&set, "demo", 170.0, &DescriptorParams::default(), &cfg).unwrap();
        assert_eq!(model.trees.len(), 2);
        let b = model.balance().unwrap();
        assert!(b > 0.0 && b <= 0.5);
        for tree in &model.trees {
            let sizes = subtree_sample_counts(tree);
            assert_eq!(sizes[0], (set.patches.len() as f64 * 0.5).round() as usize);
            for li in tree.leaf_indices() {
                let leaf = tree.leaf(li);
                assert_eq!(leaf.p_fg, 1.0);
                assert!(leaf.total_support() as usize <= leaf.patch_indices.len());
                for &pi in &leaf.patch_indices {
                    let p = &set.patches[pi as usize];
                    let map = &set.maps[p.view as usize];
                    let first = tree.route(map, p.center.0, p.center.1, 50.0).unwrap();
                    assert_eq!(first, li);
                    for _ in 0..3 {
                        assert_eq!(tree.route(map, p.center.0, p.center.1, 50.0).unwrap(), first);
                    }
                }
            }
        }
        let again = train_forest(&set, "demo", 170.0, &DescriptorParams::default(), &cfg).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn from_nodes_rejects_bad_links() {
        let leaf = Node::Leaf(Leaf {
            patch_indices: vec![],
            modes: vec![],
            p_fg: 1.0,
        });
        let t = PatchTemplate {
            features: vec![],
            center_depth: 1000.0,
            vote_offset: [0.0; 3],
            vote_rotation: [1.0, 0.0, 0.0, 0.0],
            source_view: 0,
        };
        let bad = vec![
            Node::Split { template: t.clone(), threshold: 1.0, left: 1, right: 1 },
            leaf.clone(),
        ];
        assert!(Tree::from_nodes(bad).is_err());
        let good = vec![
            Node::Split { template: t, threshold: 1.0, left: 1, right: 2 },
            leaf.clone(),
            leaf,
        ];
        assert_eq!(Tree::from_nodes(good).unwrap().depth(), 1);
    }
}
