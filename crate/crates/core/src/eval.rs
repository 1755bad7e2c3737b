//! Pose matching scores, correctness, precision-recall sweeps and the
//! parameter-sweep experiment harness.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{train_on_views, ForestModel, TrainConfig};
use crate::frame::{ObjectModel, RgbdFrame};
use crate::geometry::Pose6D;
use crate::inference::{detect, InferConfig};
use crate::synth::RenderedView;

/// Default correctness coefficient.
pub const DEFAULT_KM: f64 = 0.15;
/// Vertices used per metric evaluation.
pub const MAX_METRIC_VERTICES: usize = 2000;

fn metric_vertices(model: &ObjectModel) -> Result<Vec<Vector3<f64>>> {
    let v = model.vertices();
    if v.is_empty() {
        return Err(Error::EmptyModel);
    }
    let step = v.len().div_ceil(MAX_METRIC_VERTICES);
    Ok(v.iter().step_by(step).copied().collect())
}

/// Mean distance between corresponding transformed vertices.
pub fn match_score_non_sym(model: &ObjectModel, gt: &Pose6D, est: &Pose6D) -> Result<f64> {
    let v = metric_vertices(model)?;
    let sum: f64 = v
        .iter()
        .map(|x| (gt.transform_point(x) - est.transform_point(x)).norm())
        .sum();
    Ok(sum / v.len() as f64)
}

/// Mean over ground-truth vertices of the distance to the nearest estimated
/// vertex. Nearest neighbors come from a uniform grid; the result is the same
/// as the quadratic scan.
pub fn match_score_sym(model: &ObjectModel, gt: &Pose6D, est: &Pose6D) -> Result<f64> {
    let v = metric_vertices(model)?;
    let a: Vec<Vector3<f64>> = v.iter().map(|x| gt.transform_point(x)).collect();
    let b: Vec<Vector3<f64>> = v.iter().map(|x| est.transform_point(x)).collect();
    let grid = PointGrid::new(&b);
    let sum: f64 = a.iter().map(|p| grid.nearest_distance(p)).sum();
    Ok(sum / a.len() as f64)
}

/// Picks the symmetric score when the model is flagged symmetric.
pub fn match_score(model: &ObjectModel, gt: &Pose6D, est: &Pose6D) -> Result<f64> {
    if model.symmetric {
        match_score_sym(model, gt, est)
    } else {
        match_score_non_sym(model, gt, est)
    }
}

pub fn is_correct(m: f64, k_m: f64, diameter: f64) -> bool {
    m <= k_m * diameter
}

struct PointGrid<'a> {
    points: &'a [Vector3<f64>],
    origin: Vector3<f64>,
    cell: f64,
    dims: [i64; 3],
    /// Point indices sorted by cell, with `starts[c]..starts[c + 1]` per cell.
    order: Vec<usize>,
    starts: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let volume = extent.iter().map(|e| e.max(1e-9)).product::<f64>();
        let cell = (volume / points.len() as f64).cbrt().max(extent.max() / 64.0).max(1e-6);
        let dims = [0, 1, 2].map(|k| (extent[k] / cell).floor() as i64 + 1);
        let mut grid = PointGrid {
            points,
            origin: lo,
            cell,
            dims,
            order: Vec::new(),
            starts: Vec::new(),
        };
        let ncell = (dims[0] * dims[1] * dims[2]) as usize;
        let ids: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        let mut counts = vec![0usize; ncell + 1];
        for &c in &ids {
            counts[c + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &c) in ids.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        grid.order = order;
        grid.starts = counts;
        grid
    }

    /// Unclamped cell coordinates.
    fn cell_of(&self, p: &Vector3<f64>) -> [i64; 3] {
        [0, 1, 2].map(|k| ((p[k] - self.origin[k]) / self.cell).floor() as i64)
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        let c = [0, 1, 2].map(|k| c[k].clamp(0, self.dims[k] - 1));
        ((c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]) as usize
    }

    fn nearest_distance(&self, q: &Vector3<f64>) -> f64 {
        let c = self.cell_of(q);
        let reach = (0..3)
            .map(|k| c[k].abs().max((c[k] - (self.dims[k] - 1)).abs()))
            .max()
            .unwrap_or(0);
        // First shell that touches the grid.
        let start = (0..3)
            .map(|k| (-c[k]).max(c[k] - (self.dims[k] - 1)).max(0))
            .max()
            .unwrap_or(0);
        let span = |k: usize, r: i64| (c[k] - r).max(0)..=(c[k] + r).min(self.dims[k] - 1);
        let mut best = f64::INFINITY;
        let visit = |x: i64, y: i64, z: i64, best: &mut f64| {
            let f = self.flat([x, y, z]);
            for &i in &self.order[self.starts[f]..self.starts[f + 1]] {
                *best = best.min((q - self.points[i]).norm());
            }
        };
        for r in start..=reach {
            for z in span(2, r) {
                for y in span(1, r) {
                    if (z - c[2]).abs() == r || (y - c[1]).abs() == r {
                        for x in span(0, r) {
                            visit(x, y, z, &mut best);
                        }
                    } else {
                        // Only the two x faces of the shell.
                        for x in [c[0] - r, c[0] + r] {
                            if x >= 0 && x < self.dims[0] {
                                visit(x, y, z, &mut best);
                            }
                            if r == 0 {
                                break;
                            }
                        }
                    }
                }
            }
            // Anything outside the searched block is at least `r` cells away.
            if best <= r as f64 * self.cell {
                break;
            }
        }
        best
    }
}

/// One detection after matching against the frame's ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: String,
    pub object_id: String,
    pub pose: Pose6D,
    pub score: f64,
    /// Index of the ground-truth instance this detection consumed.
    pub matched_gt: Option<usize>,
    /// Score to the closest ground-truth instance, infinite without any.
    pub m: f64,
}

/// Greedy assignment by descending score. Each detection takes the closest
/// unconsumed instance if it is correct; otherwise it is a false positive.
pub fn assign_detections(
    frame_id: &str,
    model: &ObjectModel,
    detections: &[(Pose6D, f64)],
    truth: &[Pose6D],
    k_m: f64,
) -> Result<Vec<DetectionRecord>> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].1.total_cmp(&detections[a].1).then(a.cmp(&b)));
    let mut used = vec![false; truth.len()];
    let mut out = Vec::with_capacity(detections.len());
    for i in order {
        let (pose, score) = &detections[i];
        let mut best_free: Option<(usize, f64)> = None;
        let mut best_any = f64::INFINITY;
        for (g, gt) in truth.iter().enumerate() {
            let m = match_score(model, gt, pose)?;
            best_any = best_any.min(m);
            if !used[g] && best_free.is_none_or(|(_, bm)| m < bm) {
                best_free = Some((g, m));
            }
        }
        let matched = best_free.filter(|&(_, m)| is_correct(m, k_m, model.diameter()));
        if let Some((g, _)) = matched {
            used[g] = true;
        }
        out.push(DetectionRecord {
            frame_id: frame_id.to_string(),
            object_id: model.id.clone(),
            pose: *pose,
            score: *score,
            matched_gt: matched.map(|(g, _)| g),
            m: matched.map_or(best_any, |(_, m)| m),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        if self.precision + self.recall == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        }
    }
}

/// Points in ascending threshold order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub f1_best: f64,
}

impl PrCurve {
    /// Point with the highest F1; ties go to the lower threshold.
    pub fn best_point(&self) -> Option<PrPoint> {
        self.points
            .iter()
            .copied()
            .reduce(|a, b| if b.f1() > a.f1() { b } else { a })
    }

    /// Highest precision among points whose recall reaches `recall`; 0 if
    /// none does.
    pub fn precision_at_recall(&self, recall: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.recall >= recall)
            .map(|p| p.precision)
            .fold(0.0, f64::max)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("threshold\tprecision\trecall\tf1\n");
        for p in &self.points {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", p.threshold, p.precision, p.recall, p.f1());
        }
        s
    }
}

/// Sweeps the score threshold over every distinct record score. A record
/// counts at threshold `t` when its score is at least `t`.
pub fn pr_sweep(records: &[DetectionRecord], gt_count: usize) -> Result<PrCurve> {
    if gt_count == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut sorted: Vec<&DetectionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            tp += sorted[i].matched_gt.is_some() as usize;
            n += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / n as f64,
            recall: tp as f64 / gt_count as f64,
        });
    }
    points.reverse();
    let f1_best = points.iter().map(PrPoint::f1).fold(0.0, f64::max);
    Ok(PrCurve { points, f1_best })
}

/// A test frame with the poses of every target instance.
#[derive(Clone, Debug)]
pub struct EvalScene {
    pub id: String,
    pub frame: RgbdFrame,
    pub truth: Vec<Pose6D>,
}

/// Detects on every scene (valid hypotheses only) and matches against truth.
pub fn evaluate_scenes(
    forest: &ForestModel,
    object: &ObjectModel,
    scenes: &[EvalScene],
    cfg: &InferConfig,
    k_m: f64,
) -> Result<(Vec<DetectionRecord>, f64)> {
    use rayon::prelude::*;
    let per_scene: Vec<Result<(Vec<DetectionRecord>, f64)>> = scenes
        .par_iter()
        .map(|s| {
            let t = Instant::now();
            let det = detect(&s.frame, forest, cfg)?;
            let secs = t.elapsed().as_secs_f64();
            let dets: Vec<(Pose6D, f64)> = det
                .hypotheses
                .iter()
                .filter(|h| h.valid)
                .map(|h| (h.pose, h.score))
                .collect();
            Ok((assign_detections(&s.id, object, &dets, &s.truth, k_m)?, secs))
        })
        .collect();
    let mut records = Vec::new();
    let mut secs = 0.0;
    for r in per_scene {
        let (rec, t) = r?;
        records.extend(rec);
        secs += t;
    }
    Ok((records, secs / scenes.len().max(1) as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameter", content = "values", rename_all = "snake_case")]
pub enum Sweep {
    PatchSizeFraction(Vec<f64>),
    TreeCount(Vec<usize>),
    Iterations(Vec<usize>),
    BagSize(Vec<usize>),
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::PatchSizeFraction(_) => "patch_size_fraction",
            Sweep::TreeCount(_) => "tree_count",
            Sweep::Iterations(_) => "iterations",
            Sweep::BagSize(_) => "bag_size",
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Sweep::PatchSizeFraction(v) => v.clone(),
            Sweep::TreeCount(v) | Sweep::Iterations(v) | Sweep::BagSize(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

/// Everything a sweep needs besides the swept parameter.
pub struct ExperimentInput<'a> {
    pub views: &'a [RenderedView],
    pub object: &'a ObjectModel,
    pub scenes: &'a [EvalScene],
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub params: crate::features::DescriptorParams,
    pub k_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub parameter: String,
    pub value: f64,
    /// Precision and recall at the best-F1 operating point.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_runtime_s: f64,
    pub curve: PrCurve,
}

/// Trains (when the swept parameter affects training) and evaluates one
/// setting at a time.
pub fn run_experiment(sweep: &Sweep, input: &ExperimentInput) -> Result<Vec<ExperimentRow>> {
    let gt_count: usize = input.scenes.iter().map(|s| s.truth.len()).sum();
    let shared = match sweep {
        Sweep::Iterations(_) | Sweep::BagSize(_) => Some(train_on_views(
            input.views,
            &input.object.id,
            input.object.diameter(),
            &input.params,
            &input.train,
        )?),
        _ => None,
    };
    let mut rows = Vec::new();
    for value in sweep.values() {
        let mut train = input.train.clone();
        let mut infer = input.infer.clone();
        match sweep {
            Sweep::PatchSizeFraction(_) => train.patch_size_fraction = value,
            Sweep::TreeCount(_) => train.tree_count = value as usize,
            Sweep::Iterations(_) => infer.iterations = value as usize,
            Sweep::BagSize(_) => infer.bag_size = Some(value as usize),
        }
        let trained;
        let forest = match &shared {
            Some(f) => f,
            None => {
                trained = train_on_views(input.views, &input.object.id, input.object.diameter(), &input.params, &train)?;
                &trained
            }
        };
        let (records, runtime) = evaluate_scenes(forest, input.object, input.scenes, &infer, input.k_m)?;
        let curve = pr_sweep(&records, gt_count)?;
        let best = curve.best_point().unwrap_or(PrPoint {
            threshold: 0.0,
            precision: 0.0,
            recall: 0.0,
        });
        rows.push(ExperimentRow {
            parameter: sweep.name().to_string(),
            value,
            precision: best.precision,
            recall: best.recall,
            f1: curve.f1_best,
            mean_runtime_s: runtime,
            curve,
        });
    }
    Ok(rows)
}

pub fn results_tsv(rows: &[ExperimentRow]) -> String {
    let mut s = String::from("parameter\tvalue\tprecision\trecall\tf1\tmean_runtime_s\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.parameter, r.value, r.precision, r.recall, r.f1, r.mean_runtime_s
        );
    }
    s
}

/// Writes `results.tsv` and one `curve_<parameter>_<value>.tsv` per row.
pub fn write_experiment(rows: &[ExperimentRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::io::write_atomic(&dir.join("results.tsv"), results_tsv(rows).as_bytes())?;
    for r in rows {
        let name = format!("curve_{}_{}.tsv", r.parameter, r.value);
        crate::io::write_atomic(&dir.join(name), r.curve.to_tsv().as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_points(n: usize, r: f64, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| loop {
                let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let n = v.norm();
                if n > 0.1 && n <= 1.0 {
                    break v / n * r;
                }
            })
            .collect()
    }

    fn model(n: usize, seed: u64) -> ObjectModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ObjectModel::new("m", sphere_points(n, 100.0, &mut rng), false).unwrap()
    }

    #[test]
    fn identical_poses_score_zero() {
        let m = model(200, 1);
        let p = Pose6D::from_euler(Vector3::new(5.0, 3.0, 900.0), 0.3, -0.2, 1.0);
        assert_eq!(match_score_non_sym(&m, &p, &p).unwrap(), 0.0);
        assert_eq!(match_score_sym(&m, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn pure_translation_scores_its_length() {
        let m = model(200, 2);
        let gt = Pose6D::from_translation(Vector3::new(0.0, 0.0, 800.0));
        let est = Pose6D::from_translation(Vector3::new(10.0, 0.0, 800.0));
        assert!((match_score_non_sym(&m, &gt, &est).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_about_center_matches_direct_sum() {
        let m = model(300, 3);
        let gt = Pose6D::from_translation(Vector3::new(0.0, 0.0, 1000.0));
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians());
        let est = Pose6D::new(rot, *gt.translation());
        let direct: f64 = m.vertices().iter().map(|v| (v - rot * v).norm()).sum::<f64>() / 300.0;
        assert!((match_score_non_sym(&m, &gt, &est).unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn symmetric_score_of_rotated_sphere_is_within_sampling_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = sphere_points(2000, 100.0, &mut rng);
        let m = ObjectModel::new("s", pts.clone(), true).unwrap();
        // Largest distance from any sample to its nearest other sample.
        let resolution = pts
            .iter()
            .enumerate()
            .map(|(i, a)| {
                pts.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, b)| (a - b).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        let gt = Pose6D::from_translation(Vector3::new(0.0, 0.0, 1000.0));
        let est = Pose6D::new(UnitQuaternion::from_euler_angles(0.7, -1.1, 2.0), *gt.translation());
        assert!(match_score_sym(&m, &gt, &est).unwrap() <= resolution);
    }

    #[test]
    fn empty_model_is_rejected() {
        assert!(matches!(ObjectModel::new("e", vec![], false), Err(Error::EmptyModel)));
    }

    #[test]
    fn correctness_threshold_is_inclusive() {
        assert!(is_correct(0.0, 0.15, 100.0));
        assert!(is_correct(0.15 * 100.0, 0.15, 100.0));
        assert!(!is_correct(16.0, 0.15, 100.0));
    }

    fn rec(score: f64, tp: bool) -> DetectionRecord {
        DetectionRecord {
            frame_id: "f".into(),
            object_id: "o".into(),
            pose: Pose6D::identity(),
            score,
            matched_gt: tp.then_some(0),
            m: 0.0,
        }
    }

    #[test]
    fn perfect_detections_have_unit_f1() {
        let recs = vec![rec(3.0, true), rec(2.0, true)];
        assert_eq!(pr_sweep(&recs, 2).unwrap().f1_best, 1.0);
    }

    #[test]
    fn harmonic_mean_of_halves_is_half() {
        let p = PrPoint {
            threshold: 0.0,
            precision: 0.5,
            recall: 0.5,
        };
        assert!((p.f1() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn five_record_fixture_matches_hand_table() {
        // Scores 5 4 3 3 1 with outcomes TP FP TP FP TP and 4 instances.
        let recs = vec![rec(5.0, true), rec(4.0, false), rec(3.0, true), rec(3.0, false), rec(1.0, true)];
        let c = pr_sweep(&recs, 4).unwrap();
        let table = [(1.0, 3.0 / 5.0, 3.0 / 4.0), (3.0, 2.0 / 4.0, 2.0 / 4.0), (4.0, 1.0 / 2.0, 1.0 / 4.0), (5.0, 1.0, 1.0 / 4.0)];
        assert_eq!(c.points.len(), 4);
        for (p, (t, pr, rc)) in c.points.iter().zip(table) {
            assert_eq!(p.threshold, t);
            assert!((p.precision - pr).abs() < 1e-12);
            assert!((p.recall - rc).abs() < 1e-12);
        }
        // 2PR/(P+R) at threshold 1: 2*0.6*0.75/1.35.
        assert!((c.f1_best - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_ground_truth_is_an_error() {
        assert!(matches!(pr_sweep(&[rec(1.0, false)], 0), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn greedy_assignment_consumes_each_instance_once() {
        let m = model(100, 5);
        let gt = vec![Pose6D::from_translation(Vector3::new(0.0, 0.0, 1000.0))];
        let dets = vec![(gt[0], 1.0), (gt[0], 2.0)];
        let recs = assign_detections("f", &m, &dets, &gt, 0.15).unwrap();
        assert_eq!(recs[0].score, 2.0);
        assert_eq!(recs[0].matched_gt, Some(0));
        assert_eq!(recs[1].matched_gt, None);
        assert_eq!(recs[1].m, 0.0);
    }

    #[test]
    fn unmatched_detection_without_truth_has_infinite_score() {
        let m = model(50, 6);
        let recs = assign_detections("f", &m, &[(Pose6D::identity(), 1.0)], &[], 0.15).unwrap();
        assert_eq!(recs[0].matched_gt, None);
        assert!(recs[0].m.is_infinite());
    }

    fn pose() -> impl Strategy<Value = Pose6D> {
        (
            -200.0..200.0f64,
            -200.0..200.0f64,
            500.0..1500.0f64,
            -3.1..3.1f64,
            -1.5..1.5f64,
            -3.1..3.1f64,
        )
            .prop_map(|(x, y, z, r, p, w)| Pose6D::from_euler(Vector3::new(x, y, z), r, p, w))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn symmetric_score_never_exceeds_plain(gt in pose(), est in pose(), seed in 0u64..1000) {
            let m = model(120, seed);
            let s = match_score_sym(&m, &gt, &est).unwrap();
            let n = match_score_non_sym(&m, &gt, &est).unwrap();
            prop_assert!(s <= n + 1e-12);
        }

        #[test]
        fn scores_invariant_under_common_rigid_motion(gt in pose(), est in pose(), g in pose()) {
            let m = model(120, 7);
            let (gt2, est2) = (g.compose(&gt), g.compose(&est));
            prop_assert!((match_score_non_sym(&m, &gt, &est).unwrap() - match_score_non_sym(&m, &gt2, &est2).unwrap()).abs() < 1e-6);
            prop_assert!((match_score_sym(&m, &gt, &est).unwrap() - match_score_sym(&m, &gt2, &est2).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn correctness_is_monotone(a in 0.0..500.0f64, b in 0.0..500.0f64, d in 1.0..400.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(!is_correct(hi, 0.15, d) || is_correct(lo, 0.15, d));
        }

        #[test]
        fn pr_curve_is_monotone(scores in proptest::collection::vec((0u8..20, any::<bool>()), 1..40)) {
            let recs: Vec<DetectionRecord> = scores.iter().map(|&(s, t)| rec(s as f64, t)).collect();
            let gt = recs.iter().filter(|r| r.matched_gt.is_some()).count().max(1);
            let c = pr_sweep(&recs, gt).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[1].recall <= w[0].recall);
            }
            for p in &c.points {
                prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
            }
        }
    }
}
