use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use lchf::io::FrameArchive;
use tempfile::TempDir;

const CONFIG: &str = r#"
seed = 11
[train]
tree_count = 3
patches_per_view = 12
min_samples = 5
[infer]
iterations = 2
"#;

const SPEC: &str = r#"
[training]
level = 1
in_plane_deg = [-30.0, 0.0, 30.0]
[[generate]]
name = "free"
preset = "clutter_free"
count = 3
[[generate]]
name = "occ"
preset = "occlusion"
count = 3
"#;

fn lchf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lchf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

/// Rendered data and a trained model shared by the tests of this binary.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn path(&self) -> &Path {
        self.dir.path()
    }
}

fn workspace() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        std::fs::write(p.join("cfg.toml"), CONFIG).unwrap();
        std::fs::write(p.join("spec.toml"), SPEC).unwrap();
        ok(lchf(&["render", "--config", "cfg.toml", "--spec", "spec.toml", "--out", "data"], p));
        ok(lchf(&["train", "--config", "cfg.toml", "--archive", "data/training", "--out", "model"], p));
        Workspace { dir }
    })
}

/// File name to contents for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn level_two_training_spec_renders_810_views() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.toml"), "[training]\nlevel = 2\n").unwrap();
    let o = ok(lchf(&["render", "--seed", "1", "--spec", "spec.toml", "--out", "out"], dir.path()));
    assert!(stdout(&o).contains("training: 810 views"), "{}", stdout(&o));
    assert_eq!(FrameArchive::open(&dir.path().join("out/training")).unwrap().len(), 162 * 5);
}

#[test]
fn empty_spec_renders_nothing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.toml"), "").unwrap();
    let o = ok(lchf(&["render", "--seed", "1", "--spec", "spec.toml", "--out", "out"], dir.path()));
    assert!(stdout(&o).contains("0 frames written"));
    assert!(dir.path().join("out/run_config.toml").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let bad_spec = lchf(&["render", "--seed", "1", "--spec", "missing.toml", "--out", "out"], p);
    assert_eq!(bad_spec.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_spec.stderr).contains("missing.toml"));
    std::fs::write(p.join("spec.toml"), "").unwrap();
    let no_seed = lchf(&["render", "--spec", "spec.toml", "--out", "out"], p);
    assert_eq!(no_seed.status.code(), Some(2));
    let no_out = lchf(&["render", "--seed", "1", "--spec", "spec.toml"], p);
    assert_eq!(no_out.status.code(), Some(2));
    let bad_flag = lchf(&["train", "--seed", "1", "--bogus"], p);
    assert_eq!(bad_flag.status.code(), Some(2));
    let bad_sweep = lchf(
        &["experiment", "--seed", "1", "--sweep", "depth=1", "--training", "a", "--scenes", "b", "--out", "o"],
        p,
    );
    assert_eq!(bad_sweep.status.code(), Some(2));
}

#[test]
fn missing_archive_is_a_pipeline_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = lchf(&["train", "--seed", "1", "--archive", "nowhere", "--out", "m"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn training_is_deterministic_and_one_class() {
    let ws = workspace();
    let again = ok(lchf(
        &["train", "--config", "cfg.toml", "--archive", "data/training", "--out", "model_again"],
        ws.path(),
    ));
    let first = std::fs::read(ws.path().join("model/model.lchf")).unwrap();
    let second = std::fs::read(ws.path().join("model_again/model.lchf")).unwrap();
    assert_eq!(first, second);
    assert!(stdout(&again).contains(&format!("checksum {:08x}", crc32fast::hash(&first))));
    let rows: Vec<String> = stdout(&again)
        .lines()
        .filter(|l| l.split('\t').count() == 5 && !l.starts_with("tree"))
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let f: Vec<&str> = r.split('\t').collect();
        assert_eq!((f[3], f[4]), ("1", "1"), "p_fg range in {r}");
    }
}

#[test]
fn fast_profile_overrides_tree_count() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fast");
    ok(lchf(
        &[
            "train",
            "--config",
            "cfg.toml",
            "--archive",
            "data/training",
            "--trees",
            "2",
            "--patch-fraction",
            "0.5",
            "--out",
            out.to_str().unwrap(),
        ],
        ws.path(),
    ));
    let model = lchf::io::load_model(&out.join("model.lchf")).unwrap();
    assert_eq!(model.trees.len(), 2);
    assert_eq!(model.config.patch_size_fraction, 0.5);
    let cfg = std::fs::read_to_string(out.join("run_config.toml")).unwrap();
    assert!(cfg.contains("tree_count = 2"));
}

fn detect(ws: &Workspace, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "detect",
        "--config",
        "cfg.toml",
        "--archive",
        "data/scenes/occ",
        "--model",
        "model/model.lchf",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    lchf(&args, ws.path())
}

fn hypothesis_lines(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join("hypotheses.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
}

#[test]
fn detect_writes_every_artifact_and_respects_top_n() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("det");
    ok(detect(ws, &out, &["--top-n", "1"]));
    assert!(out.join("run_config.toml").is_file());
    for id in ["000000", "000001", "000002"] {
        let d = out.join(id);
        assert!(hypothesis_lines(&d) <= 1);
        for png in ["accumulator", "probability", "foreground", "segmentation"] {
            let (w, h, _) = lchf::io::read_gray16_png(&d.join(format!("{png}.png"))).unwrap();
            assert_eq!((w, h), (320, 240));
        }
        let (w, h, _) = lchf::io::read_rgb_png(&d.join("overlay.png")).unwrap();
        assert_eq!((w, h), (320, 240));
    }
}

#[test]
fn detect_reruns_are_byte_identical() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("det");
    ok(detect(ws, &out, &[]));
    let first = snapshot(&out);
    std::fs::remove_dir_all(&out).unwrap();
    ok(detect(ws, &out, &["--jobs", "1"]));
    let mut second = snapshot(&out);
    // The job count is recorded in the config; everything else must match.
    let cfg = PathBuf::from("run_config.toml");
    assert_ne!(first[&cfg], second[&cfg]);
    second.insert(cfg.clone(), first[&cfg].clone());
    assert_eq!(first, second);
}

#[test]
fn iterations_change_the_masks() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("i0"), dir.path().join("i2"));
    ok(detect(ws, &a, &["--iterations", "0"]));
    ok(detect(ws, &b, &["--iterations", "2"]));
    let differs = ["000000", "000001", "000002"].iter().any(|id| {
        std::fs::read(a.join(id).join("foreground.png")).unwrap()
            != std::fs::read(b.join(id).join("foreground.png")).unwrap()
    });
    assert!(differs);
}

#[test]
fn descriptor_mismatch_is_reported() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("other.toml");
    std::fs::write(&cfg, format!("{CONFIG}\n[descriptor]\ntau_d = 20.0\n")).unwrap();
    let o = lchf(
        &[
            "detect",
            "--config",
            cfg.to_str().unwrap(),
            "--archive",
            "data/scenes/occ",
            "--model",
            "model/model.lchf",
            "--out",
            dir.path().join("d").to_str().unwrap(),
        ],
        ws.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incompatible model"));
}

/// Writes a detections directory whose frame `i` holds the ground truth of
/// frame `source(i)`.
fn fixture_detections(archive: &Path, out: &Path, source: impl Fn(usize, usize) -> usize) {
    let a = FrameArchive::open(archive).unwrap();
    let ids = a.ids();
    for (i, id) in ids.iter().enumerate() {
        let gt = a.read_gt(&ids[source(i, ids.len())]).unwrap();
        let mut text = String::from("# rank score valid r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz\n");
        for (rank, g) in gt.iter().enumerate() {
            let r = g.pose.rotation_matrix();
            let t = g.pose.translation();
            text += &format!(
                "{rank} {} 1 {} {} {} {} {} {} {} {} {} {} {} {}\n",
                10.0 - rank as f64,
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
                t.x,
                t.y,
                t.z
            );
        }
        std::fs::create_dir_all(out.join(id)).unwrap();
        std::fs::write(out.join(id).join("hypotheses.txt"), text).unwrap();
    }
}

fn f1_of(metrics: &Path) -> f64 {
    let text = std::fs::read_to_string(metrics).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    row[7].parse().unwrap()
}

#[test]
fn perfect_detections_score_f1_one() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("det");
    fixture_detections(&ws.path().join("data/scenes/free"), &det, |i, _| i);
    let out = dir.path().join("ev");
    ok(lchf(
        &[
            "evaluate",
            "--config",
            "cfg.toml",
            "--detections",
            det.to_str().unwrap(),
            "--archive",
            "data/scenes/free",
            "--out",
            out.to_str().unwrap(),
        ],
        ws.path(),
    ));
    assert_eq!(f1_of(&out.join("metrics.tsv")), 1.0);
    assert!(out.join("records.tsv").is_file() && out.join("pr_curve.tsv").is_file());
}

#[test]
fn shuffled_detections_score_f1_zero() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("det");
    fixture_detections(&ws.path().join("data/scenes/free"), &det, |i, n| (i + 1) % n);
    let out = dir.path().join("ev");
    ok(lchf(
        &[
            "evaluate",
            "--config",
            "cfg.toml",
            "--detections",
            det.to_str().unwrap(),
            "--archive",
            "data/scenes/free",
            "--out",
            out.to_str().unwrap(),
        ],
        ws.path(),
    ));
    assert_eq!(f1_of(&out.join("metrics.tsv")), 0.0);
}

#[test]
fn evaluation_without_ground_truth_fails() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("det");
    fixture_detections(&ws.path().join("data/scenes/free"), &det, |i, _| i);
    std::fs::create_dir_all(det.join("999999")).unwrap();
    std::fs::copy(det.join("000000/hypotheses.txt"), det.join("999999/hypotheses.txt")).unwrap();
    let o = lchf(
        &[
            "evaluate",
            "--config",
            "cfg.toml",
            "--detections",
            det.to_str().unwrap(),
            "--archive",
            "data/scenes/free",
            "--out",
            dir.path().join("ev").to_str().unwrap(),
        ],
        ws.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no ground truth"));
}

#[test]
fn experiment_writes_one_row_and_curve_per_setting() {
    let ws = workspace();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    ok(lchf(
        &[
            "experiment",
            "--config",
            "cfg.toml",
            "--sweep",
            "iterations=0,1",
            "--training",
            "data/training",
            "--scenes",
            "data/scenes/free",
            "--out",
            out.to_str().unwrap(),
        ],
        ws.path(),
    ));
    let results = std::fs::read_to_string(out.join("results.tsv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    assert!(out.join("curve_iterations_0.tsv").is_file());
    assert!(out.join("curve_iterations_1.tsv").is_file());
    assert!(out.join("run_config.toml").is_file());
}
