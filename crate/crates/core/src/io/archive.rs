use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::geometry::{CameraIntrinsics, Pose6D};

use super::{read_gray16_png, read_rgb_png, write_atomic, write_gray16_png, write_rgb_png};

/// Intrinsics file at the archive root.
pub const CAMERA_FILE: &str = "camera.toml";

const GT_HEADER: &str = "# object_id visibility r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz";

/// One annotated target instance.
#[derive(Clone, Debug, PartialEq)]
pub struct GtEntry {
    pub object_id: String,
    pub pose: Pose6D,
    pub visibility: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrameEntry {
    Native {
        id: String,
        rgb: PathBuf,
        depth: PathBuf,
        gt: PathBuf,
    },
    Linemod {
        id: String,
        object_id: String,
        color: PathBuf,
        depth: PathBuf,
        rot: PathBuf,
        tra: PathBuf,
    },
}

impl FrameEntry {
    pub fn id(&self) -> &str {
        match self {
            FrameEntry::Native { id, .. } | FrameEntry::Linemod { id, .. } => id,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    intrinsics: CameraIntrinsics,
}

/// A directory of frames sharing one camera.
///
/// Native layout: `<root>/camera.toml` plus `<id>.rgb.png`, `<id>.depth.png`
/// and `<id>.gt.txt` per frame. The gt file is written last, so a frame is
/// indexed only once all three files exist.
#[derive(Clone, Debug)]
pub struct FrameArchive {
    root: PathBuf,
    intrinsics: CameraIntrinsics,
    frames: Vec<FrameEntry>,
}

impl FrameArchive {
    /// Creates (or reopens) a native archive for writing.
    pub fn create(root: &Path, intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let cam = root.join(CAMERA_FILE);
        if cam.exists() {
            let existing = Self::open(root)?;
            if existing.intrinsics != intrinsics {
                return Err(Error::Config(format!(
                    "{} already holds frames from a different camera",
                    root.display()
                )));
            }
            return Ok(existing);
        }
        let text = toml::to_string(&CameraFile { intrinsics }).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(&cam, text.as_bytes())?;
        Ok(Self {
            root: root.to_path_buf(),
            intrinsics,
            frames: Vec::new(),
        })
    }

    /// Opens a native archive and indexes its complete frames in id order.
    pub fn open(root: &Path) -> Result<Self> {
        let cam = root.join(CAMERA_FILE);
        let text = std::fs::read_to_string(&cam).map_err(|e| Error::io(&cam, e))?;
        let CameraFile { intrinsics } = toml::from_str(&text).map_err(|e| Error::parse(&cam, e.to_string()))?;
        intrinsics.validate()?;
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".gt.txt") {
                if !id.starts_with('.') {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        let mut frames = Vec::with_capacity(ids.len());
        for id in ids {
            let e = native_entry(root, &id);
            if let FrameEntry::Native { rgb, depth, .. } = &e {
                for p in [rgb, depth] {
                    if !p.is_file() {
                        return Err(Error::LayoutMismatch {
                            path: p.clone(),
                            reason: "indexed frame is missing this file".into(),
                        });
                    }
                }
            }
            frames.push(e);
        }
        Ok(Self {
            root: root.to_path_buf(),
            intrinsics,
            frames,
        })
    }

    pub(crate) fn from_parts(root: PathBuf, intrinsics: CameraIntrinsics, frames: Vec<FrameEntry>) -> Self {
        Self {
            root,
            intrinsics,
            frames,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn frames(&self) -> &[FrameEntry] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.frames.iter().map(|f| f.id().to_string()).collect()
    }

    fn entry(&self, id: &str) -> Result<&FrameEntry> {
        self.frames.iter().find(|f| f.id() == id).ok_or_else(|| Error::LayoutMismatch {
            path: self.root.join(id),
            reason: "no such frame".into(),
        })
    }

    /// Writes a frame under the next free numeric id and returns the id.
    pub fn write_frame(&mut self, frame: &RgbdFrame, gts: &[GtEntry]) -> Result<String> {
        let id = format!("{:06}", self.frames.len());
        self.write_frame_as(&id, frame, gts)?;
        Ok(id)
    }

    pub fn write_frame_as(&mut self, id: &str, frame: &RgbdFrame, gts: &[GtEntry]) -> Result<()> {
        if frame.intrinsics() != &self.intrinsics {
            return Err(Error::InvalidFrame("frame camera differs from the archive camera".into()));
        }
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(Error::Config(format!("invalid frame id {id:?}")));
        }
        let e = native_entry(&self.root, id);
        let FrameEntry::Native { rgb, depth, gt, .. } = &e else {
            unreachable!()
        };
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        write_rgb_png(rgb, w, h, frame.rgb())?;
        write_gray16_png(depth, w, h, frame.depth())?;
        write_atomic(gt, format_gt(gts).as_bytes())?;
        self.frames.retain(|f| f.id() != id);
        self.frames.push(e);
        Ok(())
    }

    pub fn read_frame(&self, id: &str) -> Result<RgbdFrame> {
        match self.entry(id)? {
            FrameEntry::Native { rgb, depth, .. } => {
                let (rgb_px, depth_px) = self.read_pair(rgb, depth)?;
                RgbdFrame::new(self.intrinsics, rgb_px, depth_px)
            }
            FrameEntry::Linemod { color, depth, .. } => {
                let (rgb_px, depth_px) = self.read_pair(color, depth)?;
                RgbdFrame::new_clamped(self.intrinsics, rgb_px, depth_px)
            }
        }
    }

    fn read_pair(&self, rgb: &Path, depth: &Path) -> Result<(Vec<u8>, Vec<u16>)> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let (rw, rh, rgb_px) = read_rgb_png(rgb)?;
        let (dw, dh, depth_px) = if depth.extension().is_some_and(|e| e == "dpt") {
            super::linemod::read_dpt(depth)?
        } else {
            read_gray16_png(depth)?
        };
        for (p, (iw, ih)) in [(rgb, (rw, rh)), (depth, (dw, dh))] {
            if (iw, ih) != (w, h) {
                return Err(Error::LayoutMismatch {
                    path: p.to_path_buf(),
                    reason: format!("image is {iw}x{ih}, camera is {w}x{h}"),
                });
            }
        }
        Ok((rgb_px, depth_px))
    }

    pub fn read_gt(&self, id: &str) -> Result<Vec<GtEntry>> {
        match self.entry(id)? {
            FrameEntry::Native { gt, .. } => {
                let text = std::fs::read_to_string(gt).map_err(|e| Error::io(gt, e))?;
                parse_gt(&text, gt)
            }
            FrameEntry::Linemod { object_id, rot, tra, .. } => {
                Ok(vec![super::linemod::read_pose(object_id, rot, tra)?])
            }
        }
    }
}

fn native_entry(root: &Path, id: &str) -> FrameEntry {
    FrameEntry::Native {
        id: id.to_string(),
        rgb: root.join(format!("{id}.rgb.png")),
        depth: root.join(format!("{id}.depth.png")),
        gt: root.join(format!("{id}.gt.txt")),
    }
}

/// One line per instance; floats use the shortest exact representation.
pub fn format_gt(gts: &[GtEntry]) -> String {
    let mut s = format!("{GT_HEADER}\n");
    for g in gts {
        let r = g.pose.rotation_matrix();
        let t = g.pose.translation();
        s.push_str(&g.object_id);
        s.push_str(&format!(" {}", g.visibility));
        for i in 0..3 {
            for j in 0..3 {
                s.push_str(&format!(" {}", r[(i, j)]));
            }
        }
        s.push_str(&format!(" {} {} {}\n", t.x, t.y, t.z));
    }
    s
}

/// Parses the gt grammar; blank lines and `#` comments are ignored.
pub fn parse_gt(text: &str, path: &Path) -> Result<Vec<GtEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::parse(path, format!("line {}: {reason}", n + 1));
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 14 {
            return Err(err(format!("expected 14 fields, found {}", tokens.len())));
        }
        let nums: Vec<f64> = tokens[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite number".into()));
        }
        let visibility = nums[0];
        if !(0.0..=1.0).contains(&visibility) {
            return Err(err(format!("visibility {visibility} outside [0, 1]")));
        }
        let rot = Matrix3::from_row_slice(&nums[1..10]);
        let t = Vector3::new(nums[10], nums[11], nums[12]);
        let pose = Pose6D::from_matrix(&rot, t).map_err(|e| err(e.to_string()))?;
        out.push(GtEntry {
            object_id: tokens[0].to_string(),
            pose,
            visibility,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(intr: CameraIntrinsics, seed: u16) -> RgbdFrame {
        let n = intr.pixel_count();
        let rgb: Vec<u8> = (0..3 * n).map(|i| (i * 7 + seed as usize) as u8).collect();
        let depth: Vec<u16> = (0..n).map(|i| if i % 5 == 0 { 0 } else { 500 + ((i * 13 + seed as usize) % 3000) as u16 }).collect();
        RgbdFrame::new(intr, rgb, depth).unwrap()
    }

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(50.0, 50.0, 8.0, 6.0, 16, 12).unwrap()
    }

    #[test]
    fn frames_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = FrameArchive::create(dir.path(), intr()).unwrap();
        let f = frame(intr(), 3);
        let gts = vec![
            GtEntry {
                object_id: "cup".into(),
                pose: Pose6D::from_euler(Vector3::new(1.5, -2.25, 903.125), 0.1, 0.2, 0.3),
                visibility: 0.625,
            },
            GtEntry {
                object_id: "cup".into(),
                pose: Pose6D::from_euler(Vector3::new(-80.0, 40.0, 1200.0), -1.0, 0.4, 2.9),
                visibility: 1.0,
            },
        ];
        let id = a.write_frame(&f, &gts).unwrap();
        let b = FrameArchive::open(dir.path()).unwrap();
        assert_eq!(b.ids(), vec![id.clone()]);
        assert_eq!(b.read_frame(&id).unwrap(), f);
        let back = b.read_gt(&id).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in back.iter().zip(&gts) {
            assert_eq!(x.object_id, y.object_id);
            assert_eq!(x.visibility, y.visibility);
            assert!((x.pose.translation() - y.pose.translation()).norm() < 1e-9);
            assert!(x.pose.rotation_angle_to(&y.pose) < 1e-9);
        }
    }

    #[test]
    fn empty_gt_is_a_valid_frame() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = FrameArchive::create(dir.path(), intr()).unwrap();
        let id = a.write_frame(&frame(intr(), 1), &[]).unwrap();
        let b = FrameArchive::open(dir.path()).unwrap();
        assert!(b.read_gt(&id).unwrap().is_empty());
    }

    #[test]
    fn frames_without_gt_are_not_indexed() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = FrameArchive::create(dir.path(), intr()).unwrap();
        let id = a.write_frame(&frame(intr(), 1), &[]).unwrap();
        std::fs::remove_file(dir.path().join(format!("{id}.gt.txt"))).unwrap();
        assert!(FrameArchive::open(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn indexed_frame_missing_depth_is_a_layout_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = FrameArchive::create(dir.path(), intr()).unwrap();
        let id = a.write_frame(&frame(intr(), 1), &[]).unwrap();
        let depth = dir.path().join(format!("{id}.depth.png"));
        std::fs::remove_file(&depth).unwrap();
        match FrameArchive::open(dir.path()) {
            Err(Error::LayoutMismatch { path, .. }) => assert_eq!(path, depth),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn depth_png_is_sixteen_bit_gray() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = FrameArchive::create(dir.path(), intr()).unwrap();
        let id = a.write_frame(&frame(intr(), 2), &[]).unwrap();
        let img = image::open(dir.path().join(format!("{id}.depth.png"))).unwrap();
        assert_eq!(img.color(), image::ColorType::L16);
    }

    #[test]
    fn gt_parser_rejects_malformed_lines() {
        let p = Path::new("x.gt.txt");
        assert!(parse_gt("cup 1 1 0 0 0 1 0 0 0 1 0 0\n", p).is_err());
        assert!(parse_gt("cup 1 2 0 0 0 1 0 0 0 1 0 0 900\n", p).is_err());
        assert!(parse_gt("cup 1.5 1 0 0 0 1 0 0 0 1 0 0 900\n", p).is_err());
        assert_eq!(parse_gt("# c\n\ncup 1 1 0 0 0 1 0 0 0 1 0 0 900\n", p).unwrap().len(), 1);
    }

    #[test]
    fn reopening_with_another_camera_fails() {
        let dir = tempfile::tempdir().unwrap();
        FrameArchive::create(dir.path(), intr()).unwrap();
        assert!(FrameArchive::create(dir.path(), CameraIntrinsics::qvga()).is_err());
    }
}
