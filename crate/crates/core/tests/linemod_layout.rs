use std::path::{Path, PathBuf};

use lchf::io::load_linemod_layout;
use lchf::Error;
use nalgebra::{Matrix3, Vector3};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/linemod/ape")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dst = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dst);
        } else {
            std::fs::copy(e.path(), dst).unwrap();
        }
    }
}

#[test]
fn fixture_loads_three_frames() {
    let a = load_linemod_layout(&fixture()).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a.intrinsics().width, 8);
    for id in a.ids() {
        let f = a.read_frame(&id).unwrap();
        assert_eq!(f.depth().len(), 48);
        let gt = a.read_gt(&id).unwrap();
        assert_eq!(gt.len(), 1);
        assert_eq!(gt[0].object_id, "ape");
    }
    // Frame 2 stores depth in the raw format; pixel (1, 0) is 800 + 10 + 2.
    assert_eq!(a.read_frame("000002").unwrap().depth()[1], 812);
    assert_eq!(a.read_frame("000000").unwrap().depth()[1], 810);
}

#[test]
fn translations_are_converted_to_millimeters() {
    let a = load_linemod_layout(&fixture()).unwrap();
    let gt = a.read_gt("000000").unwrap();
    assert!((gt[0].pose.translation() - Vector3::new(15.0, -20.0, 950.0)).norm() < 1e-9);
    let gt = a.read_gt("000001").unwrap();
    assert!((gt[0].pose.rotation().angle() - 30f64.to_radians()).abs() < 1e-5);
}

#[test]
fn converted_rotations_stay_orthonormal() {
    let a = load_linemod_layout(&fixture()).unwrap();
    for id in a.ids() {
        let r = a.read_gt(&id).unwrap()[0].pose.rotation_matrix();
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-6);
        assert!((r.determinant() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn missing_depth_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ape");
    copy_dir(&fixture(), &root);
    std::fs::remove_file(root.join("data/depth1.png")).unwrap();
    match load_linemod_layout(&root) {
        Err(Error::LayoutMismatch { path, .. }) => assert_eq!(path, root.join("data/depth1.png")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_pose_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ape");
    copy_dir(&fixture(), &root);
    std::fs::remove_file(root.join("data/tra2.tra")).unwrap();
    match load_linemod_layout(&root) {
        Err(Error::LayoutMismatch { path, .. }) => assert_eq!(path, root.join("data/tra2.tra")),
        other => panic!("unexpected {other:?}"),
    }
}
